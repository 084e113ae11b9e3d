//! Network graph mirroring the on-chain topology, with stake-weighted
//! analytics: connectivity, the majority partition, isolation and the
//! stake-weighted center.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{EdgeKey, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} already exists")]
    DuplicateNode(NodeId),
    #[error("edge {0} already exists")]
    DuplicateEdge(EdgeKey),
    #[error("no edge {0}")]
    MissingEdge(EdgeKey),
    #[error("self-loop on {0}")]
    SelfLoop(NodeId),
    #[error("invalid edge parameters: {0}")]
    InvalidEdgeParams(&'static str),
    #[error("topology has no nodes")]
    Empty,
    #[error("chain attack precondition violated: {0}")]
    ChainPrecondition(String),
}

/// Per-edge economics: promised one-way latency, cost per message and cost
/// per payload byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeParams {
    pub latency_promise_ms: u64,
    pub base_cost: u64,
    pub byte_cost: u64,
}

impl EdgeParams {
    pub fn new(latency_promise_ms: u64, base_cost: u64, byte_cost: u64) -> Self {
        EdgeParams {
            latency_promise_ms,
            base_cost,
            byte_cost,
        }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.latency_promise_ms < 1 {
            return Err(TopologyError::InvalidEdgeParams(
                "latency promise must be >= 1ms",
            ));
        }
        Ok(())
    }

    /// Cost of carrying one message with `payload_len` bytes over this edge.
    pub fn message_cost(&self, payload_len: u64) -> u64 {
        self.base_cost + self.byte_cost * payload_len
    }
}

/// Staked nodes and the edges between them.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Topology {
    nodes: BTreeMap<NodeId, u64>,
    edges: BTreeMap<EdgeKey, EdgeParams>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: NodeId, stake: u64) -> Result<(), TopologyError> {
        if self.nodes.contains_key(&id) {
            return Err(TopologyError::DuplicateNode(id));
        }
        self.nodes.insert(id, stake);
        Ok(())
    }

    pub fn set_stake(&mut self, id: &NodeId, stake: u64) -> Result<(), TopologyError> {
        match self.nodes.get_mut(id) {
            Some(s) => {
                *s = stake;
                Ok(())
            }
            None => Err(TopologyError::UnknownNode(id.clone())),
        }
    }

    pub fn add_edge(
        &mut self,
        a: &NodeId,
        b: &NodeId,
        params: EdgeParams,
    ) -> Result<(), TopologyError> {
        if a == b {
            return Err(TopologyError::SelfLoop(a.clone()));
        }
        for v in [a, b] {
            if !self.nodes.contains_key(v) {
                return Err(TopologyError::UnknownNode(v.clone()));
            }
        }
        params.validate()?;
        let key = EdgeKey::new(a, b);
        if self.edges.contains_key(&key) {
            return Err(TopologyError::DuplicateEdge(key));
        }
        self.edges.insert(key, params);
        Ok(())
    }

    pub fn remove_edge(&mut self, key: &EdgeKey) -> Result<EdgeParams, TopologyError> {
        self.edges
            .remove(key)
            .ok_or_else(|| TopologyError::MissingEdge(key.clone()))
    }

    pub fn contains(&self, v: &NodeId) -> bool {
        self.nodes.contains_key(v)
    }

    pub fn stake(&self, v: &NodeId) -> Option<u64> {
        self.nodes.get(v).copied()
    }

    pub fn edge(&self, a: &NodeId, b: &NodeId) -> Option<&EdgeParams> {
        self.edges.get(&EdgeKey::new(a, b))
    }

    pub fn has_edge(&self, a: &NodeId, b: &NodeId) -> bool {
        self.edge(a, b).is_some()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeId, u64)> {
        self.nodes.iter().map(|(k, v)| (k, *v))
    }

    pub fn edges(&self) -> impl Iterator<Item = (&EdgeKey, &EdgeParams)> {
        self.edges.iter()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_stake(&self) -> u64 {
        self.nodes.values().sum()
    }

    pub fn neighbors<'a>(&'a self, v: &'a NodeId) -> impl Iterator<Item = &'a NodeId> + 'a {
        self.edges.keys().filter_map(move |k| k.other(v))
    }

    fn adjacency(&self) -> BTreeMap<&NodeId, Vec<&NodeId>> {
        let mut adj: BTreeMap<&NodeId, Vec<&NodeId>> =
            self.nodes.keys().map(|k| (k, Vec::new())).collect();
        for key in self.edges.keys() {
            adj.get_mut(key.first()).unwrap().push(key.second());
            adj.get_mut(key.second()).unwrap().push(key.first());
        }
        adj
    }
}

fn component_stake(topo: &Topology, c: &BTreeSet<NodeId>) -> u64 {
    c.iter().map(|v| topo.nodes[v]).sum()
}

/// Maximal connected node sets, heaviest cumulative stake first; equal
/// stakes are ordered by their smallest member.
pub fn connected_components(topo: &Topology) -> Vec<BTreeSet<NodeId>> {
    let adj = topo.adjacency();
    let mut seen: BTreeSet<&NodeId> = BTreeSet::new();
    let mut comps = Vec::new();
    for start in topo.nodes.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            comp.insert(v.clone());
            for &n in &adj[v] {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        comps.push(comp);
    }
    let mut keyed: Vec<(u64, BTreeSet<NodeId>)> = comps
        .into_iter()
        .map(|c| (component_stake(topo, &c), c))
        .collect();
    // Components are disjoint so their first elements never compare equal.
    keyed.sort_by(|(sa, ca), (sb, cb)| {
        sb.cmp(sa)
            .then_with(|| ca.iter().next().cmp(&cb.iter().next()))
    });
    keyed.into_iter().map(|(_, c)| c).collect()
}

/// The component holding the largest cumulative stake.
pub fn majority_component(topo: &Topology) -> Result<BTreeSet<NodeId>, TopologyError> {
    connected_components(topo)
        .into_iter()
        .next()
        .ok_or(TopologyError::Empty)
}

pub fn is_isolated(topo: &Topology, v: &NodeId) -> Result<bool, TopologyError> {
    if !topo.contains(v) {
        return Err(TopologyError::UnknownNode(v.clone()));
    }
    Ok(!majority_component(topo)?.contains(v))
}

fn hop_distances<'a>(
    adj: &BTreeMap<&'a NodeId, Vec<&'a NodeId>>,
    from: &'a NodeId,
) -> BTreeMap<&'a NodeId, u64> {
    let mut dist = BTreeMap::from([(from, 0u64)]);
    let mut queue = VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v];
        for &n in &adj[v] {
            if !dist.contains_key(n) {
                dist.insert(n, d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

/// Stake-weighted hop-distance sum for every node in the majority
/// component: `Σ_{u≠v} hops(u, v) · stake(u)`.
pub fn center_scores(topo: &Topology) -> Result<BTreeMap<NodeId, u128>, TopologyError> {
    let majority = majority_component(topo)?;
    let adj = topo.adjacency();
    let mut scores = BTreeMap::new();
    for v in &majority {
        let dist = hop_distances(&adj, v);
        let score = dist
            .iter()
            .map(|(u, d)| *d as u128 * topo.nodes[*u] as u128)
            .sum();
        scores.insert(v.clone(), score);
    }
    Ok(scores)
}

/// The node minimising the stake-weighted hop-distance sum, restricted to
/// the majority component. Ties go to the smallest id.
pub fn stake_weighted_center(topo: &Topology) -> Result<NodeId, TopologyError> {
    let scores = center_scores(topo)?;
    // BTreeMap iteration is id-ordered, so min_by_key keeps the first minimum.
    let (id, _) = scores
        .into_iter()
        .min_by_key(|(_, s)| *s)
        .ok_or(TopologyError::Empty)?;
    Ok(id)
}

/// Ids given to attacker chain nodes. `!` sorts before alphanumerics so the
/// chain wins every id tie-break.
pub fn chain_node_id(k: usize) -> NodeId {
    NodeId::new(format!("!chain-{k:02}"))
}

/// Append a chain `root - v1 - ... - vn` whose nodes carry `chain_stakes`
/// and report whether the center stays off the chain.
pub fn chain_attack_holds(
    topo: &Topology,
    honest_root: &NodeId,
    chain_stakes: &[u64],
) -> Result<bool, TopologyError> {
    if !topo.contains(honest_root) {
        return Err(TopologyError::UnknownNode(honest_root.clone()));
    }
    if chain_stakes.is_empty() {
        return Err(TopologyError::ChainPrecondition(
            "chain length must be >= 1".into(),
        ));
    }
    let honest_total = topo.total_stake();
    let attacker_total: u64 = chain_stakes.iter().sum();
    if attacker_total >= honest_total {
        return Err(TopologyError::ChainPrecondition(format!(
            "attacker stake {attacker_total} is not below honest stake {honest_total}"
        )));
    }
    let mut attacked = topo.clone();
    let mut prev = honest_root.clone();
    for (i, &stake) in chain_stakes.iter().enumerate() {
        let id = chain_node_id(i + 1);
        attacked.add_node(id.clone(), stake)?;
        attacked.add_edge(&prev, &id, EdgeParams::new(1, 0, 0))?;
        prev = id;
    }
    let center = stake_weighted_center(&attacked)?;
    Ok(!(1..=chain_stakes.len()).any(|k| chain_node_id(k) == center))
}

/// Chain attack with the attacker's stake spread evenly over the chain; the
/// remainder sits on the far end.
pub fn center_chain_resistance_oracle(
    topo: &Topology,
    honest_root: &NodeId,
    chain_len: usize,
    attacker_stake_total: u64,
) -> Result<bool, TopologyError> {
    if chain_len == 0 {
        return Err(TopologyError::ChainPrecondition(
            "chain length must be >= 1".into(),
        ));
    }
    let share = attacker_stake_total / chain_len as u64;
    let mut stakes = vec![share; chain_len];
    *stakes.last_mut().unwrap() += attacker_stake_total - share * chain_len as u64;
    chain_attack_holds(topo, honest_root, &stakes)
}
