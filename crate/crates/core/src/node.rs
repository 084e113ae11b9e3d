//! Per-node protocol state machine.
//!
//! A [`NodeState`] is a deterministic reducer: every handler takes the
//! current read-only [`NodeView`] and returns the [`Action`]s the node wants
//! performed. The simulator owns time, wallets, channels and the ledger and
//! applies the actions.
//!
//! Timeout arithmetic: a node receiving a request with round-trip budget `T`
//! over an edge promising latency `L` forwards it with budget `T − 2L`. It
//! must itself send the outcome upstream no later than
//! `upstream_sent_at + T − L`, which with on-promise latencies is exactly the
//! moment the downstream outcome is due back at this node.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelState, OutcomeKind};
use crate::ledger::{Ledger, SeveranceProof};
use crate::topology::{self, EdgeParams};
use crate::{EdgeKey, MessageId, Millis, Money, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NodeError {
    #[error("path needs at least two distinct nodes")]
    PathTooShort,
    #[error("path must start at the author {0}")]
    PathStartsElsewhere(NodeId),
    #[error("node {0} appears twice on the path")]
    RepeatedNode(NodeId),
    #[error("edge {0} is missing or being severed")]
    MissingEdge(EdgeKey),
    #[error("need {need} to prepay the path but only {have} is available")]
    InsufficientFunds { need: Money, have: Money },
    #[error("{node} is not the next hop of {msg} after {from}")]
    NotOnPath {
        node: NodeId,
        msg: MessageId,
        from: NodeId,
    },
    #[error("no obligation for {0}")]
    UnknownObligation(MessageId),
    #[error("{msg} carries {prepaid} which does not cover the hop fee {fee}")]
    Underpaid {
        msg: MessageId,
        prepaid: Money,
        fee: Money,
    },
}

/// A request travelling along an explicit path. Per-hop latency promises
/// and costs are captured at origination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub id: MessageId,
    pub author: NodeId,
    pub dest: NodeId,
    pub payload: Vec<u8>,
    pub path: Vec<NodeId>,
    pub hop_latencies: Vec<Millis>,
    pub hop_costs: Vec<Money>,
    pub round_trip_budget_ms: Millis,
    pub prepaid: Money,
}

impl Message {
    /// Validate `path` against the ledger (every hop must be a live edge not
    /// under severance) and derive the round-trip budget and prepaid cost.
    pub fn new(
        id: MessageId,
        payload: Vec<u8>,
        path: Vec<NodeId>,
        ledger: &Ledger,
    ) -> Result<Message, NodeError> {
        if path.len() < 2 {
            return Err(NodeError::PathTooShort);
        }
        if path[0] != id.author {
            return Err(NodeError::PathStartsElsewhere(id.author.clone()));
        }
        for (i, v) in path.iter().enumerate() {
            if path[..i].contains(v) {
                return Err(NodeError::RepeatedNode(v.clone()));
            }
        }
        let mut hop_latencies = Vec::with_capacity(path.len() - 1);
        let mut hop_costs = Vec::with_capacity(path.len() - 1);
        for w in path.windows(2) {
            let key = EdgeKey::new(&w[0], &w[1]);
            let params = ledger
                .topology()
                .edge(&w[0], &w[1])
                .filter(|_| ledger.edge_usable(&w[0], &w[1]))
                .ok_or(NodeError::MissingEdge(key))?;
            hop_latencies.push(params.latency_promise_ms);
            hop_costs.push(params.message_cost(payload.len() as u64) as Money);
        }
        let round_trip_budget_ms = 2 * hop_latencies.iter().sum::<Millis>();
        let prepaid = hop_costs.iter().sum();
        Ok(Message {
            author: id.author.clone(),
            dest: path.last().unwrap().clone(),
            id,
            payload,
            path,
            hop_latencies,
            hop_costs,
            round_trip_budget_ms,
            prepaid,
        })
    }

    pub fn position(&self, v: &NodeId) -> Option<usize> {
        self.path.iter().position(|p| p == v)
    }
}

/// Budget handed to the next hop.
pub fn downstream_timeout(upstream_timeout: Millis, upstream_latency: Millis) -> Millis {
    upstream_timeout.saturating_sub(2 * upstream_latency)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeoutPolicy {
    /// Sever the downstream edge as soon as its outcome is overdue.
    BreakImmediately,
    /// Keep quiet until the next upstream sync, pay the lateness then and
    /// sever.
    WaitUntilSyncThenBreak,
    /// Keep paying lateness; sever at the first upstream sync at least
    /// `wait_ms` past the downstream due time.
    WaitFor { wait_ms: Millis },
    /// Keep waiting while the downstream neighbour acknowledged and the
    /// edge's revenue minus recorded losses over `window_ms` stays at or
    /// above `threshold`. Evaluated at every upstream sync.
    Adaptive { window_ms: Millis, threshold: Money },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BandwidthPolicy {
    QueueAndPay,
    BreakAndReprice { params: EdgeParams },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayPolicy {
    pub on_downstream_timeout: TimeoutPolicy,
    pub bandwidth: BandwidthPolicy,
}

impl Default for RelayPolicy {
    fn default() -> Self {
        RelayPolicy {
            on_downstream_timeout: TimeoutPolicy::BreakImmediately,
            bandwidth: BandwidthPolicy::QueueAndPay,
        }
    }
}

/// How a node treats its own late-fee obligations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conduct {
    #[default]
    Honest,
    /// Refuses every late fee; slips overdue proofs in just before the sync
    /// so they look timely.
    WithholdLateFees,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Response,
    Severance(SeveranceProof),
}

impl Outcome {
    pub fn kind(&self) -> OutcomeKind {
        match self {
            Outcome::Response => OutcomeKind::Response,
            Outcome::Severance(_) => OutcomeKind::SeveranceProof,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Packet {
    Forward {
        msg: Arc<Message>,
        timeout_ms: Millis,
        sent_at: Millis,
        prepaid: Money,
    },
    Outcome {
        msg: MessageId,
        outcome: Outcome,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Timer {
    ResponseDue(MessageId),
    PolicyFire(MessageId),
    OriginDue(MessageId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    /// Travels over the edge with its actual latency.
    Send {
        to: NodeId,
        packet: Packet,
    },
    /// Overdue outcome handed over the channel immediately.
    Note {
        to: NodeId,
        msg: MessageId,
        outcome: Outcome,
    },
    /// Overdue outcome handed over at the next sync with `to`.
    Bundle {
        to: NodeId,
        msg: MessageId,
        outcome: Outcome,
    },
    /// The request from `upstream` is accepted; an outcome is owed by `due`.
    Acknowledge {
        upstream: NodeId,
        msg: MessageId,
        due: Millis,
        prepaid: Money,
        timeout_ms: Millis,
    },
    /// Forwarded downstream (emitted alongside the `Send`).
    Forwarded {
        msg: MessageId,
        to: NodeId,
        upstream_timeout_ms: Millis,
        timeout_ms: Millis,
        upstream_latency_ms: Millis,
    },
    Sever {
        peer: NodeId,
    },
    Reopen {
        peer: NodeId,
        params: EdgeParams,
    },
    Timer {
        at: Millis,
        timer: Timer,
    },
    Queued {
        peer: NodeId,
        msg: MessageId,
    },
    Loss {
        peer: NodeId,
        msg: MessageId,
        amount: Money,
    },
    Originated {
        msg: Arc<Message>,
    },
    OriginateFailed {
        error: NodeError,
    },
    ReportIsolation {
        target: NodeId,
        at: Millis,
    },
    PursuitEnded {
        target: NodeId,
        reason: PursuitEnd,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PursuitEnd {
    Responded,
    Isolated,
    PathsExhausted,
}

/// Read-only world state a node consults while reducing an event.
pub struct NodeView<'a> {
    pub now: Millis,
    pub ledger: &'a Ledger,
    pub channels: &'a BTreeMap<EdgeKey, ChannelState>,
    pub capacities: &'a BTreeMap<EdgeKey, usize>,
    pub funds: Money,
}

impl NodeView<'_> {
    fn channel(&self, a: &NodeId, b: &NodeId) -> Option<&ChannelState> {
        self.channels.get(&EdgeKey::new(a, b))
    }

    fn capacity(&self, a: &NodeId, b: &NodeId) -> usize {
        self.capacities
            .get(&EdgeKey::new(a, b))
            .copied()
            .unwrap_or(usize::MAX)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HopStatus {
    Queued,
    AwaitingDownstream,
    PolicyPending,
    Resolved,
}

/// One relayed request as seen by the relaying node.
#[derive(Clone, Debug)]
pub struct HopObligation {
    pub msg: Arc<Message>,
    pub upstream: NodeId,
    /// `None` when this node is the destination.
    pub downstream: Option<NodeId>,
    pub received_at: Millis,
    pub upstream_timeout_ms: Millis,
    pub downstream_timeout_ms: Millis,
    /// Latest instant to send the outcome upstream without owing lateness.
    pub upstream_due: Millis,
    /// When the downstream outcome is due back here, once forwarded.
    pub downstream_due: Option<Millis>,
    pub downstream_acked: bool,
    pub status: HopStatus,
    pub outcome: Option<Outcome>,
    pub fee_kept: Money,
    pub forwarded_prepaid: Money,
    pub paid_upstream: Money,
    pub received_downstream: Money,
    pub loss_recorded: Money,
}

/// A request this node authored.
#[derive(Clone, Debug)]
pub struct OriginRecord {
    pub msg: Arc<Message>,
    pub sent_at: Millis,
    pub expected_at: Millis,
    pub acked: bool,
    pub outcome: Option<(Millis, Outcome)>,
    pub late_received: Money,
    pub pursuit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pursuit {
    pub target: NodeId,
    pub paths: Vec<Vec<NodeId>>,
    pub payload_len: usize,
    pub next: usize,
    pub current: Option<MessageId>,
    pub finished: Option<PursuitEnd>,
}

/// Revenue and loss history for one neighbour edge.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeBook {
    pub revenue: Vec<(Millis, Money)>,
    pub losses: Vec<(Millis, Money)>,
}

impl EdgeBook {
    pub fn net_over(&self, now: Millis, window_ms: Millis) -> Money {
        let from = now.saturating_sub(window_ms);
        let sum = |xs: &[(Millis, Money)]| -> Money {
            xs.iter().filter(|(t, _)| *t >= from).map(|(_, a)| a).sum()
        };
        sum(&self.revenue) - sum(&self.losses)
    }
}

#[derive(Clone, Debug)]
pub struct NodeState {
    pub id: NodeId,
    pub policy: RelayPolicy,
    pub conduct: Conduct,
    next_seq: u64,
    origins: BTreeMap<MessageId, OriginRecord>,
    hops: BTreeMap<MessageId, HopObligation>,
    books: BTreeMap<NodeId, EdgeBook>,
    in_flight: BTreeMap<NodeId, usize>,
    queues: BTreeMap<NodeId, VecDeque<MessageId>>,
    pursuits: Vec<Pursuit>,
}

impl NodeState {
    pub fn new(id: NodeId, policy: RelayPolicy, conduct: Conduct) -> Self {
        NodeState {
            id,
            policy,
            conduct,
            next_seq: 1,
            origins: BTreeMap::new(),
            hops: BTreeMap::new(),
            books: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            queues: BTreeMap::new(),
            pursuits: Vec::new(),
        }
    }

    pub fn origins(&self) -> &BTreeMap<MessageId, OriginRecord> {
        &self.origins
    }

    pub fn hops(&self) -> &BTreeMap<MessageId, HopObligation> {
        &self.hops
    }

    pub fn book(&self, peer: &NodeId) -> Option<&EdgeBook> {
        self.books.get(peer)
    }

    pub fn pursuits(&self) -> &[Pursuit] {
        &self.pursuits
    }

    pub fn in_flight(&self, peer: &NodeId) -> usize {
        self.in_flight.get(peer).copied().unwrap_or(0)
    }

    fn hop_mut(&mut self, msg: &MessageId) -> Result<&mut HopObligation, NodeError> {
        self.hops
            .get_mut(msg)
            .ok_or_else(|| NodeError::UnknownObligation(msg.clone()))
    }

    /// Send a new request along `path`. The author pays the whole path cost
    /// up front and expects an outcome within the round-trip budget.
    pub fn originate(
        &mut self,
        payload: Vec<u8>,
        path: Vec<NodeId>,
        view: &NodeView,
    ) -> Result<Vec<Action>, NodeError> {
        self.originate_inner(payload, path, None, view)
    }

    fn originate_inner(
        &mut self,
        payload: Vec<u8>,
        path: Vec<NodeId>,
        pursuit: Option<usize>,
        view: &NodeView,
    ) -> Result<Vec<Action>, NodeError> {
        let id = MessageId::new(self.id.clone(), self.next_seq);
        let msg = Arc::new(Message::new(id.clone(), payload, path, view.ledger)?);
        if msg.prepaid > view.funds {
            return Err(NodeError::InsufficientFunds {
                need: msg.prepaid,
                have: view.funds,
            });
        }
        self.next_seq += 1;
        let expected_at = view.now + msg.round_trip_budget_ms;
        self.origins.insert(
            id.clone(),
            OriginRecord {
                msg: msg.clone(),
                sent_at: view.now,
                expected_at,
                acked: false,
                outcome: None,
                late_received: 0,
                pursuit,
            },
        );
        Ok(vec![
            Action::Originated { msg: msg.clone() },
            Action::Send {
                to: msg.path[1].clone(),
                packet: Packet::Forward {
                    msg: msg.clone(),
                    timeout_ms: msg.round_trip_budget_ms,
                    sent_at: view.now,
                    prepaid: msg.prepaid,
                },
            },
            Action::Timer {
                at: expected_at,
                timer: Timer::OriginDue(id),
            },
        ])
    }

    /// Accept a request from `from`. The destination answers on the spot;
    /// a relayer keeps the fee of the edge the request arrived over and
    /// forwards the remainder with the reduced budget.
    pub fn on_receive_forward(
        &mut self,
        from: &NodeId,
        msg: Arc<Message>,
        timeout_ms: Millis,
        sent_at: Millis,
        prepaid: Money,
        view: &NodeView,
    ) -> Result<Vec<Action>, NodeError> {
        let pos = msg
            .position(&self.id)
            .filter(|&i| i > 0 && &msg.path[i - 1] == from)
            .ok_or_else(|| NodeError::NotOnPath {
                node: self.id.clone(),
                msg: msg.id.clone(),
                from: from.clone(),
            })?;
        if self.hops.contains_key(&msg.id) {
            return Ok(Vec::new());
        }
        let up_latency = msg.hop_latencies[pos - 1];
        let fee = msg.hop_costs[pos - 1];
        if prepaid < fee {
            return Err(NodeError::Underpaid {
                msg: msg.id.clone(),
                prepaid,
                fee,
            });
        }
        let upstream_due = (sent_at + timeout_ms).saturating_sub(up_latency);
        let down_timeout = downstream_timeout(timeout_ms, up_latency);
        let downstream = msg.path.get(pos + 1).cloned();
        let mut actions = vec![Action::Acknowledge {
            upstream: from.clone(),
            msg: msg.id.clone(),
            due: upstream_due,
            prepaid,
            timeout_ms,
        }];
        let mut hop = HopObligation {
            msg: msg.clone(),
            upstream: from.clone(),
            downstream: downstream.clone(),
            received_at: view.now,
            upstream_timeout_ms: timeout_ms,
            downstream_timeout_ms: down_timeout,
            upstream_due,
            downstream_due: None,
            downstream_acked: false,
            status: HopStatus::AwaitingDownstream,
            outcome: None,
            fee_kept: fee,
            forwarded_prepaid: prepaid - fee,
            paid_upstream: 0,
            received_downstream: 0,
            loss_recorded: 0,
        };
        let Some(next) = downstream else {
            hop.status = HopStatus::Resolved;
            hop.outcome = Some(Outcome::Response);
            actions.push(self.deliver_upstream(&hop, Outcome::Response, view));
            self.hops.insert(msg.id.clone(), hop);
            return Ok(actions);
        };
        self.books
            .entry(next.clone())
            .or_default()
            .revenue
            .push((view.now, fee));
        if !view.ledger.edge_usable(&self.id, &next) {
            let edge = EdgeKey::new(&self.id, &next);
            if let Some(proof) = view.ledger.latest_severance(&edge) {
                let outcome = Outcome::Severance(proof);
                hop.status = HopStatus::Resolved;
                hop.outcome = Some(outcome.clone());
                actions.push(self.deliver_upstream(&hop, outcome, view));
            }
            // Without a severance record the hop stays open and the lateness
            // machinery takes over.
            self.hops.insert(msg.id.clone(), hop);
            return Ok(actions);
        }
        self.hops.insert(msg.id.clone(), hop);
        if self.in_flight(&next) >= view.capacity(&self.id, &next) {
            actions.extend(self.on_bandwidth_full(&msg.id, view)?);
        } else {
            actions.extend(self.forward(&msg.id, view)?);
        }
        Ok(actions)
    }

    fn forward(&mut self, id: &MessageId, view: &NodeView) -> Result<Vec<Action>, NodeError> {
        let me = self.id.clone();
        let hop = self.hop_mut(id)?;
        let next = hop.downstream.clone().expect("relay hop has a next node");
        let pos = hop.msg.position(&me).unwrap();
        let due = view.now + hop.downstream_timeout_ms;
        hop.downstream_due = Some(due);
        hop.status = HopStatus::AwaitingDownstream;
        let actions = vec![
            Action::Forwarded {
                msg: id.clone(),
                to: next.clone(),
                upstream_timeout_ms: hop.upstream_timeout_ms,
                timeout_ms: hop.downstream_timeout_ms,
                upstream_latency_ms: hop.msg.hop_latencies[pos - 1],
            },
            Action::Send {
                to: next.clone(),
                packet: Packet::Forward {
                    msg: hop.msg.clone(),
                    timeout_ms: hop.downstream_timeout_ms,
                    sent_at: view.now,
                    prepaid: hop.forwarded_prepaid,
                },
            },
            Action::Timer {
                at: due,
                timer: Timer::ResponseDue(id.clone()),
            },
        ];
        *self.in_flight.entry(next).or_default() += 1;
        Ok(actions)
    }

    /// The downstream edge is at capacity.
    pub fn on_bandwidth_full(
        &mut self,
        id: &MessageId,
        view: &NodeView,
    ) -> Result<Vec<Action>, NodeError> {
        let policy = self.policy.bandwidth.clone();
        let hop = self.hop_mut(id)?;
        let next = hop.downstream.clone().expect("relay hop has a next node");
        match policy {
            BandwidthPolicy::QueueAndPay => {
                hop.status = HopStatus::Queued;
                self.queues
                    .entry(next.clone())
                    .or_default()
                    .push_back(id.clone());
                Ok(vec![Action::Queued {
                    peer: next,
                    msg: id.clone(),
                }])
            }
            BandwidthPolicy::BreakAndReprice { params } => {
                let _ = view;
                Ok(vec![
                    Action::Sever { peer: next.clone() },
                    Action::Reopen { peer: next, params },
                ])
            }
        }
    }

    fn release_slot(&mut self, peer: &NodeId, view: &NodeView) -> Result<Vec<Action>, NodeError> {
        if let Some(c) = self.in_flight.get_mut(peer) {
            *c = c.saturating_sub(1);
        }
        let mut actions = Vec::new();
        while self.in_flight(peer) < view.capacity(&self.id, peer) {
            let Some(id) = self.queues.get_mut(peer).and_then(|q| q.pop_front()) else {
                break;
            };
            if self.hops.get(&id).map(|h| h.status) != Some(HopStatus::Queued) {
                continue;
            }
            actions.extend(self.forward(&id, view)?);
        }
        Ok(actions)
    }

    /// On-time outcomes and late responses go over the wire at once. A late
    /// severance proof rides the next upstream sync with the final payment.
    fn deliver_upstream(&self, hop: &HopObligation, outcome: Outcome, view: &NodeView) -> Action {
        let to = hop.upstream.clone();
        let msg = hop.msg.id.clone();
        let on_time = view.now <= hop.upstream_due;
        if on_time || (outcome == Outcome::Response && self.conduct == Conduct::Honest) {
            Action::Send {
                to,
                packet: Packet::Outcome { msg, outcome },
            }
        } else if self.conduct == Conduct::WithholdLateFees {
            Action::Note { to, msg, outcome }
        } else {
            Action::Bundle { to, msg, outcome }
        }
    }

    fn resolve_hop(
        &mut self,
        id: &MessageId,
        outcome: Outcome,
        view: &NodeView,
    ) -> Result<Vec<Action>, NodeError> {
        let hop = self.hop_mut(id)?;
        if hop.status == HopStatus::Resolved {
            return Ok(Vec::new());
        }
        let was_in_flight = matches!(
            hop.status,
            HopStatus::AwaitingDownstream | HopStatus::PolicyPending
        ) && hop.downstream_due.is_some();
        hop.status = HopStatus::Resolved;
        hop.outcome = Some(outcome.clone());
        let peer = hop.downstream.clone();
        let hop = self.hops[id].clone();
        let mut actions = Vec::new();
        // A severed upstream edge already discharged what was owed upstream.
        if view.ledger.edge_usable(&self.id, &hop.upstream) {
            actions.push(self.deliver_upstream(&hop, outcome, view));
        }
        if let (true, Some(peer)) = (was_in_flight, peer) {
            actions.extend(self.release_slot(&peer, view)?);
        }
        Ok(actions)
    }

    /// The downstream neighbour acknowledged a request this node sent.
    pub fn on_ack(&mut self, id: &MessageId) {
        if let Some(o) = self.origins.get_mut(id) {
            o.acked = true;
        } else if let Some(h) = self.hops.get_mut(id) {
            h.downstream_acked = true;
        }
    }

    /// A response or severance proof came back from downstream.
    pub fn on_downstream_outcome(
        &mut self,
        id: &MessageId,
        outcome: Outcome,
        view: &NodeView,
    ) -> Result<Vec<Action>, NodeError> {
        if let Some(origin) = self.origins.get_mut(id) {
            if origin.outcome.is_some() {
                return Ok(Vec::new());
            }
            origin.outcome = Some((view.now, outcome.clone()));
            return match origin.pursuit {
                Some(p) => self.advance_pursuit(p, &outcome, view),
                None => Ok(Vec::new()),
            };
        }
        self.resolve_hop(id, outcome, view)
    }

    /// The downstream outcome is overdue: apply the timeout policy.
    pub fn on_response_due(
        &mut self,
        id: &MessageId,
        view: &NodeView,
    ) -> Result<Vec<Action>, NodeError> {
        let hop = self
            .hops
            .get(id)
            .ok_or_else(|| NodeError::UnknownObligation(id.clone()))?;
        if hop.status != HopStatus::AwaitingDownstream || hop.downstream_due != Some(view.now) {
            return Ok(Vec::new());
        }
        let peer = hop.downstream.clone().expect("relay hop");
        let upstream = hop.upstream.clone();
        let fire_from = match self.policy.on_downstream_timeout {
            TimeoutPolicy::BreakImmediately => {
                return Ok(vec![Action::Sever { peer }]);
            }
            TimeoutPolicy::WaitUntilSyncThenBreak | TimeoutPolicy::Adaptive { .. } => view.now,
            TimeoutPolicy::WaitFor { wait_ms } => view.now + wait_ms,
        };
        let Some(at) = self.fire_time(&upstream, fire_from, view) else {
            return Ok(vec![Action::Sever { peer }]);
        };
        self.hop_mut(id)?.status = HopStatus::PolicyPending;
        Ok(vec![Action::Timer {
            at,
            timer: Timer::PolicyFire(id.clone()),
        }])
    }

    /// First upstream sync whose action time (one millisecond earlier for
    /// withholders) is at or after `t`, never earlier than now.
    fn fire_time(&self, upstream: &NodeId, t: Millis, view: &NodeView) -> Option<Millis> {
        let chan = view.channel(&self.id, upstream)?;
        let lead = Millis::from(self.conduct == Conduct::WithholdLateFees);
        let from = t.max(view.now);
        let mut s = chan.sync_at_or_after(from);
        while s < from + lead {
            s = chan.sync_at_or_after(s + 1);
        }
        Some(s - lead)
    }

    pub fn on_policy_fire(
        &mut self,
        id: &MessageId,
        view: &NodeView,
    ) -> Result<Vec<Action>, NodeError> {
        let hop = self
            .hops
            .get(id)
            .ok_or_else(|| NodeError::UnknownObligation(id.clone()))?;
        if hop.status != HopStatus::PolicyPending {
            return Ok(Vec::new());
        }
        let peer = hop.downstream.clone().expect("relay hop");
        if let TimeoutPolicy::Adaptive {
            window_ms,
            threshold,
        } = self.policy.on_downstream_timeout
        {
            let net = self
                .books
                .get(&peer)
                .map_or(0, |b| b.net_over(view.now, window_ms));
            if hop.downstream_acked && net >= threshold {
                let upstream = hop.upstream.clone();
                return Ok(match self.fire_time(&upstream, view.now + 1, view) {
                    Some(at) => vec![Action::Timer {
                        at,
                        timer: Timer::PolicyFire(id.clone()),
                    }],
                    None => vec![Action::Sever { peer }],
                });
            }
        }
        Ok(vec![Action::Sever { peer }])
    }

    /// The edge to `peer` was severed (by either endpoint). Everything still
    /// waiting on `peer` resolves with the proof.
    pub fn on_severance(
        &mut self,
        peer: &NodeId,
        proof: &SeveranceProof,
        view: &NodeView,
    ) -> Result<Vec<Action>, NodeError> {
        let mut actions = Vec::new();
        let waiting: Vec<MessageId> = self
            .hops
            .iter()
            .filter(|(_, h)| h.downstream.as_ref() == Some(peer) && h.status != HopStatus::Resolved)
            .map(|(k, _)| k.clone())
            .collect();
        if let Some(q) = self.queues.get_mut(peer) {
            q.clear();
        }
        for id in waiting {
            actions.extend(self.resolve_hop(&id, Outcome::Severance(proof.clone()), view)?);
        }
        let origins: Vec<MessageId> = self
            .origins
            .iter()
            .filter(|(_, o)| &o.msg.path[1] == peer && o.outcome.is_none())
            .map(|(k, _)| k.clone())
            .collect();
        for id in origins {
            actions.extend(self.on_downstream_outcome(
                &id,
                Outcome::Severance(proof.clone()),
                view,
            )?);
        }
        self.in_flight.remove(peer);
        Ok(actions)
    }

    /// The author's deadline passed. A first hop that never acknowledged
    /// is cut off.
    pub fn on_origin_due(
        &mut self,
        id: &MessageId,
        view: &NodeView,
    ) -> Result<Vec<Action>, NodeError> {
        let origin = self
            .origins
            .get(id)
            .ok_or_else(|| NodeError::UnknownObligation(id.clone()))?;
        if origin.acked || origin.outcome.is_some() {
            return Ok(Vec::new());
        }
        let peer = origin.msg.path[1].clone();
        if view.ledger.topology().has_edge(&self.id, &peer) {
            Ok(vec![Action::Sever { peer }])
        } else {
            Ok(Vec::new())
        }
    }

    pub fn note_late_paid(&mut self, id: &MessageId, amount: Money) {
        if let Some(h) = self.hops.get_mut(id) {
            h.paid_upstream += amount;
        }
    }

    pub fn note_late_received(&mut self, id: &MessageId, amount: Money) {
        if let Some(o) = self.origins.get_mut(id) {
            o.late_received += amount;
        } else if let Some(h) = self.hops.get_mut(id) {
            h.received_downstream += amount;
        }
    }

    /// `peer` refused to pay lateness it owed at a sync. Record what this
    /// node paid upstream without reimbursement, then either sever or (for
    /// the adaptive policy) keep the edge while it stays profitable.
    pub fn on_downstream_default(
        &mut self,
        peer: &NodeId,
        items: &[(MessageId, Money)],
        view: &NodeView,
    ) -> Result<Vec<Action>, NodeError> {
        let mut actions = Vec::new();
        for (id, _) in items {
            let Some(hop) = self.hops.get_mut(id) else {
                continue;
            };
            let uncovered = (hop.paid_upstream - hop.received_downstream).max(0);
            let fresh = uncovered - hop.loss_recorded;
            if fresh > 0 {
                hop.loss_recorded = uncovered;
                self.books
                    .entry(peer.clone())
                    .or_default()
                    .losses
                    .push((view.now, fresh));
                actions.push(Action::Loss {
                    peer: peer.clone(),
                    msg: id.clone(),
                    amount: fresh,
                });
            }
        }
        let keep = match self.policy.on_downstream_timeout {
            TimeoutPolicy::Adaptive {
                window_ms,
                threshold,
            } => {
                self.books
                    .get(peer)
                    .map_or(0, |b| b.net_over(view.now, window_ms))
                    >= threshold
            }
            _ => false,
        };
        if !keep && view.ledger.edge_usable(&self.id, peer) {
            actions.push(Action::Sever { peer: peer.clone() });
        }
        Ok(actions)
    }

    /// Re-send a request to `target` along each path in turn until it
    /// answers or drops out of the majority component.
    pub fn pursue_isolation(
        &mut self,
        target: NodeId,
        paths: Vec<Vec<NodeId>>,
        payload_len: usize,
        view: &NodeView,
    ) -> Result<Vec<Action>, NodeError> {
        let idx = self.pursuits.len();
        self.pursuits.push(Pursuit {
            target,
            paths,
            payload_len,
            next: 0,
            current: None,
            finished: None,
        });
        self.next_attempt(idx, view)
    }

    fn next_attempt(&mut self, idx: usize, view: &NodeView) -> Result<Vec<Action>, NodeError> {
        let mut actions = Vec::new();
        loop {
            let p = &mut self.pursuits[idx];
            if p.next >= p.paths.len() {
                p.finished = Some(PursuitEnd::PathsExhausted);
                actions.push(Action::PursuitEnded {
                    target: p.target.clone(),
                    reason: PursuitEnd::PathsExhausted,
                });
                return Ok(actions);
            }
            let path = p.paths[p.next].clone();
            let payload = vec![0u8; p.payload_len];
            p.next += 1;
            let seq = self.next_seq;
            match self.originate_inner(payload, path, Some(idx), view) {
                Ok(more) => {
                    self.pursuits[idx].current = Some(MessageId::new(self.id.clone(), seq));
                    actions.extend(more);
                    return Ok(actions);
                }
                Err(error) => actions.push(Action::OriginateFailed { error }),
            }
        }
    }

    fn advance_pursuit(
        &mut self,
        idx: usize,
        outcome: &Outcome,
        view: &NodeView,
    ) -> Result<Vec<Action>, NodeError> {
        if self.pursuits[idx].finished.is_some() {
            return Ok(Vec::new());
        }
        let target = self.pursuits[idx].target.clone();
        match outcome {
            Outcome::Response => {
                self.pursuits[idx].finished = Some(PursuitEnd::Responded);
                Ok(vec![Action::PursuitEnded {
                    target,
                    reason: PursuitEnd::Responded,
                }])
            }
            Outcome::Severance(_) => {
                let projected = view.ledger.projected_topology();
                if topology::is_isolated(&projected, &target).unwrap_or(false) {
                    self.pursuits[idx].finished = Some(PursuitEnd::Isolated);
                    let at = view
                        .ledger
                        .severance_log()
                        .iter()
                        .map(|r| r.finalize_time)
                        .max()
                        .unwrap_or(view.now)
                        .max(view.now);
                    Ok(vec![
                        Action::PursuitEnded {
                            target: target.clone(),
                            reason: PursuitEnd::Isolated,
                        },
                        Action::ReportIsolation { target, at },
                    ])
                } else {
                    self.next_attempt(idx, view)
                }
            }
        }
    }
}
