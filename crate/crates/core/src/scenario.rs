//! Scenario files.
//!
//! A scenario is a TOML document: top-level `name`, `horizon_ms` and
//! `render` (timeline columns), a `[ledger]` table, then `[[node]]`,
//! `[[edge]]` and `[[event]]` arrays. See `scenarios/` for examples.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::ledger::LedgerParams;
use crate::node::{BandwidthPolicy, Conduct, RelayPolicy, TimeoutPolicy};
use crate::topology::EdgeParams;
use crate::{EdgeKey, Millis, Money, NodeId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerSection {
    #[serde(default = "default_penalty")]
    pub severance_penalty: u64,
    /// `"p/q"` or an integer.
    #[serde(default = "default_fraction")]
    pub partition_slash_fraction: String,
    #[serde(default)]
    pub chain_finality_delay_ms: Millis,
}

fn default_penalty() -> u64 {
    10
}

fn default_fraction() -> String {
    "0/1".into()
}

impl Default for LedgerSection {
    fn default() -> Self {
        LedgerSection {
            severance_penalty: default_penalty(),
            partition_slash_fraction: default_fraction(),
            chain_finality_delay_ms: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub stake: u64,
    #[serde(default = "default_funds")]
    pub funds: Money,
    /// Half-open `[from, to)` intervals.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offline: Vec<[Millis; 2]>,
    #[serde(default)]
    pub conduct: Conduct,
    #[serde(default)]
    pub policy: RelayPolicy,
}

fn default_funds() -> Money {
    1_000_000
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub a: NodeId,
    pub b: NodeId,
    pub latency_ms: Millis,
    /// Defaults to the promise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_latency_ms: Option<Millis>,
    #[serde(default)]
    pub base_cost: u64,
    #[serde(default)]
    pub byte_cost: u64,
    #[serde(default = "default_rate")]
    pub late_rate: Money,
    #[serde(default = "default_interval")]
    pub sync_interval_ms: Millis,
    #[serde(default)]
    pub sync_phase_ms: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
}

fn default_rate() -> Money {
    1
}

fn default_interval() -> Millis {
    1000
}

impl EdgeSpec {
    pub fn params(&self) -> EdgeParams {
        EdgeParams::new(self.latency_ms, self.base_cost, self.byte_cost)
    }

    pub fn actual_latency(&self) -> Millis {
        self.actual_latency_ms.unwrap_or(self.latency_ms)
    }

    pub fn key(&self) -> EdgeKey {
        EdgeKey::new(&self.a, &self.b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScriptEvent {
    Originate {
        at: Millis,
        node: NodeId,
        path: Vec<NodeId>,
        #[serde(default)]
        payload_len: usize,
    },
    Pursue {
        at: Millis,
        node: NodeId,
        target: NodeId,
        paths: Vec<Vec<NodeId>>,
        #[serde(default)]
        payload_len: usize,
    },
    Sever {
        at: Millis,
        node: NodeId,
        peer: NodeId,
    },
    Adjudicate {
        at: Millis,
    },
}

impl ScriptEvent {
    pub fn at(&self) -> Millis {
        match self {
            ScriptEvent::Originate { at, .. }
            | ScriptEvent::Pursue { at, .. }
            | ScriptEvent::Sever { at, .. }
            | ScriptEvent::Adjudicate { at } => *at,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub horizon_ms: Millis,
    /// Timeline columns, left to right.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub render: Vec<NodeId>,
    #[serde(default)]
    pub ledger: LedgerSection,
    #[serde(default, rename = "node")]
    pub nodes: Vec<NodeSpec>,
    #[serde(default, rename = "edge")]
    pub edges: Vec<EdgeSpec>,
    #[serde(default, rename = "event")]
    pub script: Vec<ScriptEvent>,
}

/// Where a validation problem sits: section name and index within it.
type Site = Option<(&'static str, usize)>;

fn invalid(site: Site, message: impl Into<String>) -> (Site, String) {
    (site, message.into())
}

pub fn parse_fraction(s: &str) -> Option<Ratio<u64>> {
    let r = Ratio::<u64>::from_str(s.trim()).ok()?;
    (r <= Ratio::from_integer(1)).then_some(r)
}

impl Scenario {
    pub fn empty(horizon_ms: Millis) -> Self {
        Scenario {
            name: String::new(),
            horizon_ms,
            render: Vec::new(),
            ledger: LedgerSection::default(),
            nodes: Vec::new(),
            edges: Vec::new(),
            script: Vec::new(),
        }
    }

    pub fn parse(src: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario = toml::from_str(src).map_err(|e| ScenarioError {
            line: e.span().map(|s| line_of(src, s.start)),
            message: e.message().to_string(),
        })?;
        sc.check().map_err(|(site, message)| ScenarioError {
            line: site.and_then(|(section, i)| header_line(src, section, i)),
            message,
        })?;
        Ok(sc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.check().map_err(|(_, message)| ScenarioError {
            line: None,
            message,
        })
    }

    pub fn ledger_params(&self) -> LedgerParams {
        LedgerParams {
            severance_penalty: self.ledger.severance_penalty,
            partition_slash_fraction: parse_fraction(&self.ledger.partition_slash_fraction)
                .unwrap_or_else(|| Ratio::from_integer(0)),
            chain_finality_delay_ms: self.ledger.chain_finality_delay_ms,
        }
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    pub fn edge(&self, a: &NodeId, b: &NodeId) -> Option<&EdgeSpec> {
        let k = EdgeKey::new(a, b);
        self.edges.iter().find(|e| e.key() == k)
    }

    fn check(&self) -> Result<(), (Site, String)> {
        if parse_fraction(&self.ledger.partition_slash_fraction).is_none() {
            return Err(invalid(
                None,
                format!(
                    "partition_slash_fraction {:?} is not a fraction in [0, 1]",
                    self.ledger.partition_slash_fraction
                ),
            ));
        }
        let mut ids = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let site = Some(("node", i));
            if n.id.as_str().is_empty() || n.id.as_str().contains(['>', '\t', '\n']) {
                return Err(invalid(site, format!("bad node id {:?}", n.id.as_str())));
            }
            if !ids.insert(n.id.clone()) {
                return Err(invalid(site, format!("node {} declared twice", n.id)));
            }
            if n.funds < 0 {
                return Err(invalid(site, format!("node {} has negative funds", n.id)));
            }
            for [from, to] in &n.offline {
                if from >= to {
                    return Err(invalid(
                        site,
                        format!("empty offline interval [{from}, {to})"),
                    ));
                }
            }
            if let TimeoutPolicy::Adaptive { window_ms: 0, .. } = n.policy.on_downstream_timeout {
                return Err(invalid(site, "adaptive window must be positive"));
            }
            if let BandwidthPolicy::BreakAndReprice { params } = &n.policy.bandwidth {
                if params.latency_promise_ms == 0 {
                    return Err(invalid(site, "reprice latency must be >= 1ms"));
                }
            }
        }
        let known = |v: &NodeId, site: Site| -> Result<(), (Site, String)> {
            if ids.contains(v) {
                Ok(())
            } else {
                Err(invalid(site, format!("unknown node {v}")))
            }
        };
        let mut keys = BTreeSet::new();
        for (i, e) in self.edges.iter().enumerate() {
            let site = Some(("edge", i));
            known(&e.a, site)?;
            known(&e.b, site)?;
            if e.a == e.b {
                return Err(invalid(site, format!("self-loop at {}", e.a)));
            }
            if !keys.insert(e.key()) {
                return Err(invalid(site, format!("edge {} declared twice", e.key())));
            }
            if e.latency_ms == 0 || e.actual_latency() == 0 {
                return Err(invalid(site, "latencies must be >= 1ms"));
            }
            if e.sync_interval_ms == 0 {
                return Err(invalid(site, "sync_interval_ms must be positive"));
            }
            if e.late_rate < 0 {
                return Err(invalid(site, "late_rate must be non-negative"));
            }
            if e.capacity == Some(0) {
                return Err(invalid(site, "capacity must be positive"));
            }
        }
        for v in &self.render {
            known(v, None)?;
        }
        for (i, ev) in self.script.iter().enumerate() {
            let site = Some(("event", i));
            match ev {
                ScriptEvent::Originate { node, path, .. } => {
                    known(node, site)?;
                    for v in path {
                        known(v, site)?;
                    }
                    if path.first() != Some(node) {
                        return Err(invalid(site, format!("path must start at {node}")));
                    }
                }
                ScriptEvent::Pursue {
                    node,
                    target,
                    paths,
                    ..
                } => {
                    known(node, site)?;
                    known(target, site)?;
                    for p in paths {
                        for v in p {
                            known(v, site)?;
                        }
                        if p.first() != Some(node) || p.last() != Some(target) {
                            return Err(invalid(
                                site,
                                format!("pursuit paths must run from {node} to {target}"),
                            ));
                        }
                    }
                }
                ScriptEvent::Sever { node, peer, .. } => {
                    known(node, site)?;
                    known(peer, site)?;
                }
                ScriptEvent::Adjudicate { .. } => {}
            }
        }
        Ok(())
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

fn header_line(src: &str, section: &str, index: usize) -> Option<usize> {
    let header = format!("[[{section}]]");
    src.lines()
        .enumerate()
        .filter(|(_, l)| l.trim() == header)
        .nth(index)
        .map(|(i, _)| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = r#"
name = "sample"
horizon_ms = 3000
render = ["A", "B"]

[ledger]
severance_penalty = 10
partition_slash_fraction = "1/2"

[[node]]
id = "A"
stake = 5

[[node]]
id = "B"
stake = 5
offline = [[0, 100]]
conduct = "withhold-late-fees"
policy = { on_downstream_timeout = { kind = "wait-for", wait_ms = 50 }, bandwidth = { kind = "queue-and-pay" } }

[[edge]]
a = "A"
b = "B"
latency_ms = 100
sync_phase_ms = 600

[[event]]
kind = "originate"
at = 0
node = "A"
path = ["A", "B"]
"#;

    #[test]
    fn parses_sample() {
        let sc = Scenario::parse(SAMPLE).unwrap();
        assert_eq!(sc.nodes.len(), 2);
        assert_eq!(sc.nodes[1].conduct, Conduct::WithholdLateFees);
        assert_eq!(
            sc.nodes[1].policy.on_downstream_timeout,
            TimeoutPolicy::WaitFor { wait_ms: 50 }
        );
        assert_eq!(sc.edges[0].sync_interval_ms, 1000);
        assert_eq!(sc.edges[0].actual_latency(), 100);
        assert_eq!(*sc.ledger_params().partition_slash_fraction.numer(), 1);
    }

    #[test]
    fn round_trip_is_identity() {
        let sc = Scenario::parse(SAMPLE).unwrap();
        let again = Scenario::parse(&sc.to_toml()).unwrap();
        assert_eq!(sc, again);
    }

    #[test]
    fn unknown_node_points_at_its_section() {
        let bad = SAMPLE.replace("b = \"B\"", "b = \"C\"");
        let err = Scenario::parse(&bad).unwrap_err();
        assert_eq!(err.message, "unknown node C");
        let line = err.line.unwrap();
        assert_eq!(bad.lines().nth(line - 1).unwrap().trim(), "[[edge]]");
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = Scenario::parse("horizon_ms = 5\n[[node]]\nid = \n").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(Scenario::parse("nodes = 3").is_err());
    }

    #[test]
    fn bad_fraction() {
        let bad = SAMPLE.replace("\"1/2\"", "\"3/2\"");
        assert!(Scenario::parse(&bad).is_err());
    }

    fn arb_id() -> impl Strategy<Value = NodeId> {
        "[A-Z][a-z]{0,4}".prop_map(NodeId::new)
    }

    proptest! {
        #[test]
        fn serialized_scenarios_reparse_identically(
            ids in proptest::collection::btree_set(arb_id(), 2..6),
            lat in 1..500u64,
            phase in 0..1000u64,
            horizon in 0..100_000u64,
            wait in 0..5000u64,
        ) {
            let ids: Vec<NodeId> = ids.into_iter().collect();
            let mut sc = Scenario::empty(horizon);
            for (i, id) in ids.iter().enumerate() {
                sc.nodes.push(NodeSpec {
                    id: id.clone(),
                    stake: i as u64,
                    funds: 100,
                    offline: if i == 0 { vec![[1, 2]] } else { vec![] },
                    conduct: Conduct::Honest,
                    policy: RelayPolicy {
                        on_downstream_timeout: TimeoutPolicy::WaitFor { wait_ms: wait },
                        bandwidth: BandwidthPolicy::QueueAndPay,
                    },
                });
            }
            for w in ids.windows(2) {
                sc.edges.push(EdgeSpec {
                    a: w[0].clone(),
                    b: w[1].clone(),
                    latency_ms: lat,
                    actual_latency_ms: Some(lat + 1),
                    base_cost: 1,
                    byte_cost: 2,
                    late_rate: 1,
                    sync_interval_ms: 1000,
                    sync_phase_ms: phase,
                    capacity: Some(2),
                });
            }
            sc.script.push(ScriptEvent::Originate {
                at: 0,
                node: ids[0].clone(),
                path: ids.clone(),
                payload_len: 3,
            });
            sc.script.push(ScriptEvent::Adjudicate { at: 10 });
            let text = sc.to_toml();
            prop_assert_eq!(Scenario::parse(&text).unwrap(), sc);
        }
    }
}
