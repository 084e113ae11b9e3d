//! Proof-of-response protocol library and deterministic simulator.
//!
//! Staked nodes relay requests along explicit paths over priced edges that
//! promise a latency. Once the first hop acknowledges a request, the author
//! ends up holding exactly one of: the destination's response, a proof that
//! an edge on the path was severed, or streaming late payments for every
//! millisecond past the promised round trip.
//!
//! The crate is organised bottom-up:
//!
//! - [`topology`]: the staked network graph, partition analytics and the
//!   stake-weighted center.
//! - [`ledger`]: the simulated orchestration contract (stakes, severances,
//!   isolation reimbursement, partition slashing).
//! - [`channel`]: bilateral state-channel accounting and late-fee settlement.
//! - [`node`]: per-node relay state machine and policies.
//! - [`sim`]: the discrete-event engine and trace capture.
//! - [`scenario`], [`timeline`], [`properties`], [`cli`]: scenario files,
//!   table rendering, randomized invariant sweeps and the command surface.
//!
//! Runnable walkthroughs live in `examples/`.

pub mod channel;
pub mod cli;
pub mod ledger;
pub mod node;
pub mod properties;
pub mod scenario;
pub mod sim;
pub mod timeline;
pub mod topology;
pub mod trace;

mod ids;

pub use ids::{EdgeKey, MessageId, Millis, Money, NodeId};
