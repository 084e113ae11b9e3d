//! Simulated orchestration contract.
//!
//! Holds stake accounts and the authoritative topology, records edge
//! openings and severances (with a finalization delay), charges severance
//! penalties and adjudicates isolation reimbursements and partition
//! slashing. Every mutation is appended to [`Ledger::events`].

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::topology::{self, EdgeParams, Topology, TopologyError};
use crate::{EdgeKey, Millis, Money, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("no edge {0} to sever")]
    NoSuchEdge(EdgeKey),
    #[error("edge {0} already has a pending severance")]
    DoubleSeverance(EdgeKey),
    #[error("node {0} is not isolated")]
    NotIsolated(NodeId),
    #[error("invalid ledger parameters: {0}")]
    InvalidParams(&'static str),
    #[error("transaction at {now}ms precedes the last recorded one at {last}ms")]
    OutOfOrder { now: Millis, last: Millis },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerParams {
    pub severance_penalty: u64,
    pub partition_slash_fraction: Ratio<u64>,
    pub chain_finality_delay_ms: Millis,
}

impl Default for LedgerParams {
    fn default() -> Self {
        LedgerParams {
            severance_penalty: 10,
            partition_slash_fraction: Ratio::new(0, 1),
            chain_finality_delay_ms: 0,
        }
    }
}

impl LedgerParams {
    pub fn validate(&self) -> Result<(), LedgerError> {
        if *self.partition_slash_fraction.denom() == 0 {
            return Err(LedgerError::InvalidParams(
                "slash fraction has zero denominator",
            ));
        }
        if self.partition_slash_fraction > Ratio::from_integer(1) {
            return Err(LedgerError::InvalidParams("slash fraction exceeds 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeveranceRecord {
    pub edge: EdgeKey,
    pub initiator: NodeId,
    pub submit_time: Millis,
    pub finalize_time: Millis,
    pub fee_split: BTreeMap<NodeId, u64>,
    pub severed_params: EdgeParams,
}

/// Evidence that a severance transaction for `edge` was submitted. The tag
/// binds the proof to one ledger instance and one log position.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeveranceProof {
    pub ledger_id: u64,
    pub index: usize,
    pub edge: EdgeKey,
    pub submit_time: Millis,
    pub tag: [u8; 16],
}

fn authenticator(ledger_id: u64, index: usize, edge: &EdgeKey, submit_time: Millis) -> [u8; 16] {
    let mut h = Sha256::new();
    h.update(ledger_id.to_be_bytes());
    h.update((index as u64).to_be_bytes());
    h.update(edge.first().as_str().as_bytes());
    h.update([0]);
    h.update(edge.second().as_str().as_bytes());
    h.update(submit_time.to_be_bytes());
    let digest = h.finalize();
    let mut tag = [0u8; 16];
    tag.copy_from_slice(&digest[..16]);
    tag
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LedgerEvent {
    EdgeOpened {
        time: Millis,
        edge: EdgeKey,
        params: EdgeParams,
    },
    SeveranceInitiated {
        time: Millis,
        index: usize,
    },
    SeveranceFinalized {
        time: Millis,
        index: usize,
    },
    IsolationReported {
        time: Millis,
        reporter: NodeId,
        isolated: NodeId,
        debit: u64,
        credits: BTreeMap<NodeId, u64>,
    },
    PartitionSlashed {
        time: Millis,
        slashed: BTreeMap<NodeId, u64>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IsolationSettlement {
    pub debit: u64,
    pub credits: BTreeMap<NodeId, u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionAdjudication {
    /// False when the topology was connected and nothing happened.
    pub partitioned: bool,
    pub slashed: BTreeMap<NodeId, u64>,
}

#[derive(Clone, Debug)]
pub struct Ledger {
    id: u64,
    params: LedgerParams,
    topo: Topology,
    stake_accounts: BTreeMap<NodeId, Money>,
    severance_log: Vec<SeveranceRecord>,
    pending: Vec<usize>,
    collected: Money,
    epoch_start: BTreeMap<NodeId, usize>,
    last_time: Millis,
    events: Vec<LedgerEvent>,
}

impl Ledger {
    pub fn new(id: u64, params: LedgerParams) -> Result<Self, LedgerError> {
        params.validate()?;
        Ok(Ledger {
            id,
            params,
            topo: Topology::new(),
            stake_accounts: BTreeMap::new(),
            severance_log: Vec::new(),
            pending: Vec::new(),
            collected: 0,
            epoch_start: BTreeMap::new(),
            last_time: 0,
            events: Vec::new(),
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn params(&self) -> &LedgerParams {
        &self.params
    }

    /// Finalized topology as seen on chain.
    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    /// Topology with every pending severance already applied.
    pub fn projected_topology(&self) -> Topology {
        let mut t = self.topo.clone();
        for &i in &self.pending {
            let _ = t.remove_edge(&self.severance_log[i].edge);
        }
        t
    }

    pub fn stake(&self, v: &NodeId) -> Option<Money> {
        self.stake_accounts.get(v).copied()
    }

    pub fn stake_accounts(&self) -> &BTreeMap<NodeId, Money> {
        &self.stake_accounts
    }

    /// Penalties and slashes held by the contract.
    pub fn collected(&self) -> Money {
        self.collected
    }

    /// Stake plus collected penalties; constant across all operations.
    pub fn total_value(&self) -> Money {
        self.stake_accounts.values().sum::<Money>() + self.collected
    }

    pub fn severance_log(&self) -> &[SeveranceRecord] {
        &self.severance_log
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    fn stamp(&mut self, now: Millis) -> Result<(), LedgerError> {
        if now < self.last_time {
            return Err(LedgerError::OutOfOrder {
                now,
                last: self.last_time,
            });
        }
        self.last_time = now;
        Ok(())
    }

    fn adjust_stake(&mut self, v: &NodeId, delta: Money) {
        let acct = self.stake_accounts.get_mut(v).expect("registered node");
        *acct += delta;
        let visible = (*acct).max(0) as u64;
        self.topo.set_stake(v, visible).expect("registered node");
    }

    pub fn register_node(&mut self, id: NodeId, stake: u64) -> Result<(), LedgerError> {
        self.topo.add_node(id.clone(), stake)?;
        self.stake_accounts.insert(id.clone(), stake as Money);
        self.epoch_start.insert(id, self.severance_log.len());
        Ok(())
    }

    /// Start a fresh reimbursement epoch for a node coming back online.
    pub fn rejoin(&mut self, id: &NodeId) -> Result<(), LedgerError> {
        if !self.topo.contains(id) {
            return Err(TopologyError::UnknownNode(id.clone()).into());
        }
        self.epoch_start
            .insert(id.clone(), self.severance_log.len());
        Ok(())
    }

    pub fn open_edge(
        &mut self,
        a: &NodeId,
        b: &NodeId,
        params: EdgeParams,
        now: Millis,
    ) -> Result<(), LedgerError> {
        self.stamp(now)?;
        self.topo.add_edge(a, b, params)?;
        self.events.push(LedgerEvent::EdgeOpened {
            time: now,
            edge: EdgeKey::new(a, b),
            params,
        });
        Ok(())
    }

    pub fn pending_severance(&self, edge: &EdgeKey) -> Option<SeveranceProof> {
        self.pending
            .iter()
            .find(|&&i| &self.severance_log[i].edge == edge)
            .map(|&i| self.proof_for(i))
    }

    /// Most recent severance of `edge`, pending or finalized.
    pub fn latest_severance(&self, edge: &EdgeKey) -> Option<SeveranceProof> {
        self.severance_log
            .iter()
            .rposition(|r| &r.edge == edge)
            .map(|i| self.proof_for(i))
    }

    /// Whether the edge exists and has no severance in flight.
    pub fn edge_usable(&self, a: &NodeId, b: &NodeId) -> bool {
        self.topo.has_edge(a, b) && self.pending_severance(&EdgeKey::new(a, b)).is_none()
    }

    fn proof_for(&self, index: usize) -> SeveranceProof {
        let r = &self.severance_log[index];
        SeveranceProof {
            ledger_id: self.id,
            index,
            edge: r.edge.clone(),
            submit_time: r.submit_time,
            tag: authenticator(self.id, index, &r.edge, r.submit_time),
        }
    }

    /// Submit a severance. The proof is usable immediately; the edge leaves
    /// the topology at `now + chain_finality_delay_ms`. Each endpoint pays
    /// half the penalty, the initiator also covers an odd remainder.
    pub fn initiate_severance(
        &mut self,
        initiator: &NodeId,
        other: &NodeId,
        now: Millis,
    ) -> Result<SeveranceProof, LedgerError> {
        let edge = EdgeKey::new(initiator, other);
        let params = *self
            .topo
            .edge(initiator, other)
            .ok_or_else(|| LedgerError::NoSuchEdge(edge.clone()))?;
        if self.pending_severance(&edge).is_some() {
            return Err(LedgerError::DoubleSeverance(edge));
        }
        self.stamp(now)?;
        let penalty = self.params.severance_penalty;
        let half = penalty / 2;
        let fee_split =
            BTreeMap::from([(initiator.clone(), penalty - half), (other.clone(), half)]);
        for (v, fee) in &fee_split {
            self.adjust_stake(v, -(*fee as Money));
        }
        self.collected += penalty as Money;
        let index = self.severance_log.len();
        self.severance_log.push(SeveranceRecord {
            edge,
            initiator: initiator.clone(),
            submit_time: now,
            finalize_time: now + self.params.chain_finality_delay_ms,
            fee_split,
            severed_params: params,
        });
        self.pending.push(index);
        self.events
            .push(LedgerEvent::SeveranceInitiated { time: now, index });
        Ok(self.proof_for(index))
    }

    /// Apply every pending severance whose finalize time has come. Returns
    /// the finalized log indices in submission order.
    pub fn advance(&mut self, now: Millis) -> Vec<usize> {
        let (due, keep): (Vec<usize>, Vec<usize>) = self
            .pending
            .iter()
            .partition(|&&i| self.severance_log[i].finalize_time <= now);
        self.pending = keep;
        for &i in &due {
            let edge = self.severance_log[i].edge.clone();
            self.topo
                .remove_edge(&edge)
                .expect("pending severance refers to a live edge");
            self.events.push(LedgerEvent::SeveranceFinalized {
                time: now,
                index: i,
            });
        }
        if now > self.last_time {
            self.last_time = now;
        }
        due
    }

    /// Earliest finalize time among pending severances.
    pub fn next_finalization(&self) -> Option<Millis> {
        self.pending
            .iter()
            .map(|&i| self.severance_log[i].finalize_time)
            .min()
    }

    pub fn verify_severance_proof(&self, proof: &SeveranceProof) -> bool {
        if proof.ledger_id != self.id {
            return false;
        }
        let Some(record) = self.severance_log.get(proof.index) else {
            return false;
        };
        record.edge == proof.edge
            && record.submit_time == proof.submit_time
            && authenticator(self.id, proof.index, &proof.edge, proof.submit_time) == proof.tag
    }

    /// Charge an isolated node for every penalty half its counterparties paid
    /// to sever edges with it during the current epoch, and credit them.
    pub fn report_isolation(
        &mut self,
        reporter: &NodeId,
        isolated: &NodeId,
        now: Millis,
    ) -> Result<IsolationSettlement, LedgerError> {
        if !self.topo.contains(reporter) {
            return Err(TopologyError::UnknownNode(reporter.clone()).into());
        }
        if !topology::is_isolated(&self.topo, isolated)? {
            return Err(LedgerError::NotIsolated(isolated.clone()));
        }
        self.stamp(now)?;
        let start = self.epoch_start[isolated];
        let mut credits: BTreeMap<NodeId, u64> = BTreeMap::new();
        for record in &self.severance_log[start..] {
            let Some(counterparty) = record.edge.other(isolated) else {
                continue;
            };
            let paid = record.fee_split.get(counterparty).copied().unwrap_or(0);
            *credits.entry(counterparty.clone()).or_default() += paid;
        }
        let debit: u64 = credits.values().sum();
        self.adjust_stake(isolated, -(debit as Money));
        for (v, c) in &credits {
            self.adjust_stake(v, *c as Money);
        }
        self.epoch_start
            .insert(isolated.clone(), self.severance_log.len());
        self.events.push(LedgerEvent::IsolationReported {
            time: now,
            reporter: reporter.clone(),
            isolated: isolated.clone(),
            debit,
            credits: credits.clone(),
        });
        Ok(IsolationSettlement { debit, credits })
    }

    /// Slash `floor(stake × fraction)` from every node outside the majority
    /// component. A connected topology yields an unflagged no-op.
    pub fn adjudicate_partition(
        &mut self,
        now: Millis,
    ) -> Result<PartitionAdjudication, LedgerError> {
        let comps = topology::connected_components(&self.topo);
        if comps.len() < 2 {
            return Ok(PartitionAdjudication {
                partitioned: false,
                slashed: BTreeMap::new(),
            });
        }
        self.stamp(now)?;
        let majority: BTreeSet<NodeId> = comps.into_iter().next().unwrap();
        let fraction = self.params.partition_slash_fraction;
        let mut slashed = BTreeMap::new();
        let minority: Vec<NodeId> = self
            .stake_accounts
            .keys()
            .filter(|v| !majority.contains(*v))
            .cloned()
            .collect();
        for v in minority {
            let stake = self.stake_accounts[&v].max(0) as u64;
            let cut = (Ratio::from_integer(stake) * fraction).to_integer();
            self.adjust_stake(&v, -(cut as Money));
            self.collected += cut as Money;
            slashed.insert(v, cut);
        }
        self.events.push(LedgerEvent::PartitionSlashed {
            time: now,
            slashed: slashed.clone(),
        });
        Ok(PartitionAdjudication {
            partitioned: true,
            slashed,
        })
    }
}
