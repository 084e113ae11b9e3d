//! Randomized invariant sweeps over generated scenarios.
//!
//! Every suite draws from a ChaCha stream seeded per iteration, so a failing
//! case is reproduced by `(seed, iteration)` alone and printed as a scenario
//! file.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::node::{BandwidthPolicy, Conduct, RelayPolicy, TimeoutPolicy};
use crate::scenario::{EdgeSpec, NodeSpec, Scenario, ScriptEvent};
use crate::sim::{self, RunOutput, Verdict};
use crate::topology::{self, EdgeParams, Topology};
use crate::trace::TraceAction;
use crate::{EdgeKey, Money, NodeId};

/// Knobs for the random scenario generator.
#[derive(Clone, Debug)]
pub struct GenConfig {
    pub max_nodes: usize,
    pub max_messages: usize,
    /// Allow withholding relayers, offline nodes and slow links.
    pub adversarial: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_nodes: 10,
            max_messages: 3,
            adversarial: true,
        }
    }
}

pub fn rng_for(seed: u64, iteration: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(iteration) << 20);
    rng
}

fn random_policy(rng: &mut ChaCha8Rng) -> TimeoutPolicy {
    match rng.gen_range(0..4) {
        0 => TimeoutPolicy::BreakImmediately,
        1 => TimeoutPolicy::WaitUntilSyncThenBreak,
        2 => TimeoutPolicy::WaitFor {
            wait_ms: rng.gen_range(0..3_000),
        },
        _ => TimeoutPolicy::Adaptive {
            window_ms: rng.gen_range(1_000..60_000),
            threshold: rng.gen_range(-5..5),
        },
    }
}

/// A connected network of 3..=max_nodes nodes with up to `max_messages`
/// requests. Node `N0` is an honest, always-online originator.
pub fn random_scenario(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Scenario {
    let n = rng.gen_range(3..=cfg.max_nodes.max(3));
    let ids: Vec<NodeId> = (0..n).map(|i| NodeId::new(format!("N{i}"))).collect();
    let mut sc = Scenario::empty(60_000);
    sc.name = "random".into();
    sc.ledger.severance_penalty = rng.gen_range(0..20);
    sc.ledger.chain_finality_delay_ms = *[0, 0, 50, 400].choose(rng).unwrap();
    for (i, id) in ids.iter().enumerate() {
        let adversary = cfg.adversarial && i > 0 && rng.gen_bool(0.3);
        let mut offline = Vec::new();
        if cfg.adversarial && i > 0 && rng.gen_bool(0.25) {
            let from = rng.gen_range(0..1_500);
            offline.push([from, from + rng.gen_range(100..20_000)]);
        }
        sc.nodes.push(NodeSpec {
            id: id.clone(),
            stake: rng.gen_range(1..100),
            funds: 1_000_000,
            offline,
            conduct: if adversary {
                Conduct::WithholdLateFees
            } else {
                Conduct::Honest
            },
            policy: RelayPolicy {
                on_downstream_timeout: random_policy(rng),
                bandwidth: if rng.gen_bool(0.8) {
                    BandwidthPolicy::QueueAndPay
                } else {
                    BandwidthPolicy::BreakAndReprice {
                        params: EdgeParams::new(rng.gen_range(1..200), rng.gen_range(1..6), 0),
                    }
                },
            },
        });
    }
    let mut keys = BTreeSet::new();
    let mut add_edge = |sc: &mut Scenario, a: &NodeId, b: &NodeId, rng: &mut ChaCha8Rng| {
        if a == b || !keys.insert(EdgeKey::new(a, b)) {
            return;
        }
        let latency = rng.gen_range(1..200);
        let actual = if cfg.adversarial && rng.gen_bool(0.1) {
            Some(latency + rng.gen_range(1..100))
        } else if rng.gen_bool(0.2) {
            Some(rng.gen_range(1..=latency))
        } else {
            None
        };
        let interval = *[250, 500, 1000].choose(rng).unwrap();
        sc.edges.push(EdgeSpec {
            a: a.clone(),
            b: b.clone(),
            latency_ms: latency,
            actual_latency_ms: actual,
            base_cost: rng.gen_range(0..4),
            byte_cost: rng.gen_range(0..2),
            late_rate: rng.gen_range(1..4),
            sync_interval_ms: interval,
            sync_phase_ms: rng.gen_range(0..interval),
            capacity: if rng.gen_bool(0.2) {
                Some(rng.gen_range(1..3))
            } else {
                None
            },
        });
    };
    for i in 1..n {
        let j = rng.gen_range(0..i);
        add_edge(&mut sc, &ids[i], &ids[j], rng);
    }
    for _ in 0..rng.gen_range(0..n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        add_edge(&mut sc, &ids[a], &ids[b], rng);
    }
    let adj: BTreeMap<&NodeId, Vec<&NodeId>> = ids
        .iter()
        .map(|v| {
            let ns = sc
                .edges
                .iter()
                .filter_map(|e| {
                    if &e.a == v {
                        Some(&e.b)
                    } else if &e.b == v {
                        Some(&e.a)
                    } else {
                        None
                    }
                })
                .collect();
            (v, ns)
        })
        .collect();
    for _ in 0..rng.gen_range(1..=cfg.max_messages.max(1)) {
        let mut path = vec![ids[0].clone()];
        let hops = rng.gen_range(1..=5);
        for _ in 0..hops {
            let here = path.last().unwrap();
            let options: Vec<&&NodeId> = adj[here].iter().filter(|v| !path.contains(v)).collect();
            match options.choose(rng) {
                Some(v) => path.push((**v).clone()),
                None => break,
            }
        }
        sc.script.push(ScriptEvent::Originate {
            at: rng.gen_range(0..2_000),
            node: ids[0].clone(),
            path,
            payload_len: rng.gen_range(0..16),
        });
    }
    sc
}

#[derive(Clone, Debug)]
pub struct Failure {
    pub suite: String,
    pub iteration: u64,
    pub detail: String,
    pub counterexample: String,
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: String,
    pub cases: u64,
    pub failures: Vec<Failure>,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub suites: Vec<SuiteResult>,
}

impl Report {
    pub fn lines(&self) -> Vec<String> {
        self.suites
            .iter()
            .map(|s| {
                let status = if s.failures.is_empty() {
                    "PASS"
                } else {
                    "FAIL"
                };
                format!(
                    "{status} {} {}/{}",
                    s.name,
                    s.cases - s.failures.len() as u64,
                    s.cases
                )
            })
            .collect()
    }

    pub fn first_failure(&self) -> Option<&Failure> {
        self.suites.iter().flat_map(|s| s.failures.iter()).next()
    }

    pub fn passed(&self) -> bool {
        self.first_failure().is_none()
    }
}

fn honest_and_online(sc: &Scenario, v: &NodeId) -> bool {
    sc.node(v)
        .is_some_and(|n| n.conduct == Conduct::Honest && n.offline.is_empty())
}

/// Every acknowledged message of an honest originator ends in a response,
/// a ledger-verified severance proof of an edge on its path, or exactly the
/// late payments owed at each elapsed sync of the first-hop channel.
pub fn check_trichotomy(sc: &Scenario, run: &RunOutput) -> Result<(), String> {
    for msg in sim::originated(&run.trace) {
        let author = &msg.author;
        if !honest_and_online(sc, author) {
            continue;
        }
        let origin = &run.nodes[author].origins()[&msg];
        let path = &origin.msg.path;
        let first = &path[1];
        let verdict =
            sim::assert_trichotomy(&run.trace, &run.ledger, &msg).map_err(|e| e.to_string())?;
        match verdict {
            Verdict::Response | Verdict::Unacknowledged => {}
            Verdict::SeveranceProof(edge) => {
                let on_path = path.windows(2).any(|w| EdgeKey::new(&w[0], &w[1]) == edge);
                if !on_path {
                    return Err(format!("{msg}: proof for {edge} which is not on its path"));
                }
            }
            Verdict::OriginatorChannelDefault => {
                if honest_and_online(sc, first) {
                    return Err(format!("{msg}: honest first hop {first} defaulted"));
                }
            }
            Verdict::FullyPaidLateness => {
                let edge = sc.edge(author, first).expect("first hop edge");
                let due = origin.sent_at + origin.msg.round_trip_budget_ms - edge.latency_ms;
                let pair = [first.clone(), author.clone()];
                let last_sync = run
                    .trace
                    .events()
                    .iter()
                    .filter(|e| {
                        e.action == TraceAction::Sync
                            && e.actors.contains(author)
                            && e.actors.contains(first)
                    })
                    .map(|e| e.time)
                    .max()
                    .unwrap_or(0);
                let paid: Money = run
                    .trace
                    .events()
                    .iter()
                    .filter(|e| {
                        matches!(&e.action, TraceAction::Pay { msg: m } if m == &msg)
                            && e.actors == pair
                    })
                    .filter_map(|e| e.amount)
                    .sum();
                let owed = edge.late_rate * last_sync.saturating_sub(due) as Money;
                if paid != owed {
                    return Err(format!(
                        "{msg}: unresolved with {paid} paid but {owed} owed by the sync at {last_sync}"
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Honest, always-online relayers never default upstream.
pub fn check_relay_induction(sc: &Scenario, run: &RunOutput) -> Result<(), String> {
    for e in run.trace.events() {
        if let TraceAction::Default { msg } = &e.action {
            if honest_and_online(sc, &e.actors[0]) {
                return Err(format!(
                    "{} defaulted to {} on {msg} at {}",
                    e.actors[0], e.actors[1], e.time
                ));
            }
        }
    }
    Ok(())
}

pub fn check_conservation(run: &RunOutput) -> Result<(), String> {
    if let Some(v) = run.violations.iter().find(|v| v.contains("conserved")) {
        return Err(v.clone());
    }
    if run.total_value() != run.initial_total {
        return Err(format!(
            "final total {} != {}",
            run.total_value(),
            run.initial_total
        ));
    }
    Ok(())
}

pub fn check_clean_run(run: &RunOutput) -> Result<(), String> {
    match run.violations.first() {
        Some(v) => Err(v.clone()),
        None => Ok(()),
    }
}

/// Timeout arithmetic on every forward: the downstream budget is the
/// upstream budget minus twice the upstream hop's promise.
pub fn check_timeout_arithmetic(run: &RunOutput) -> Result<(), String> {
    for (id, node) in &run.nodes {
        for hop in node.hops().values() {
            let pos = hop.msg.position(id).unwrap();
            // Promised latency as published when the message left its
            // author; a repriced edge may have changed it since.
            let l = hop.msg.hop_latencies[pos - 1];
            if hop.downstream.is_some()
                && hop.upstream_timeout_ms != hop.downstream_timeout_ms + 2 * l
            {
                return Err(format!(
                    "{id} on {}: {} != {} + 2*{l}",
                    hop.msg.id, hop.upstream_timeout_ms, hop.downstream_timeout_ms
                ));
            }
        }
    }
    Ok(())
}

/// An honest relayer's recorded loss toward one faulty neighbour stays
/// within what its own waiting policy lets accrue: per message, the
/// upstream lateness over the wait plus one upstream sync interval.
pub fn check_bounded_loss(sc: &Scenario, run: &RunOutput) -> Result<(), String> {
    for ((v, peer), loss) in &run.losses {
        let Some(spec) = sc.node(v) else { continue };
        if spec.conduct != Conduct::Honest {
            continue;
        }
        let wait = match spec.policy.on_downstream_timeout {
            TimeoutPolicy::BreakImmediately | TimeoutPolicy::WaitUntilSyncThenBreak => 0,
            TimeoutPolicy::WaitFor { wait_ms } => wait_ms,
            TimeoutPolicy::Adaptive { .. } => continue,
        };
        let mut bound: Money = 0;
        for hop in run.nodes[v].hops().values() {
            if hop.downstream.as_ref() != Some(peer) {
                continue;
            }
            let up = sc.edge(&hop.upstream, v).unwrap();
            let down_due = hop.downstream_due.unwrap_or(hop.received_at);
            // Lateness toward upstream can start before the downstream due
            // when the request waited in a queue or arrived late.
            let head_start = down_due.saturating_sub(hop.upstream_due);
            let span = head_start + wait + up.sync_interval_ms;
            bound += up.late_rate * span as Money;
        }
        if *loss > bound {
            return Err(format!("{v} lost {loss} via {peer}, bound {bound}"));
        }
    }
    Ok(())
}

/// A random connected honest graph for the center sweep.
pub fn random_honest_graph(rng: &mut ChaCha8Rng, max_nodes: usize) -> Topology {
    let n = rng.gen_range(1..=max_nodes);
    let mut t = Topology::new();
    let ids: Vec<NodeId> = (0..n).map(|i| NodeId::new(format!("h{i:02}"))).collect();
    for id in &ids {
        t.add_node(id.clone(), rng.gen_range(0..50)).unwrap();
    }
    if t.total_stake() == 0 {
        t.set_stake(&ids[0], 1).unwrap();
    }
    let p = EdgeParams::new(1, 0, 0);
    for i in 1..n {
        let j = rng.gen_range(0..i);
        t.add_edge(&ids[i], &ids[j], p).unwrap();
    }
    for _ in 0..rng.gen_range(0..=n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b && !t.has_edge(&ids[a], &ids[b]) {
            t.add_edge(&ids[a], &ids[b], p).unwrap();
        }
    }
    t
}

/// Attacker stake levels: 10 evenly spaced points over `[0, honest − 1]`.
pub fn attacker_levels(honest_total: u64) -> Vec<u64> {
    let top = honest_total.saturating_sub(1);
    let mut v: Vec<u64> = (0..10u64).map(|i| top * i / 9).collect();
    v.dedup();
    v
}

/// One center case: random graph, random root, every chain length 1..=6,
/// every attacker level, both even and front-loaded stake splits.
pub fn check_center_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let topo = random_honest_graph(rng, 12);
    let nodes: Vec<NodeId> = topo.nodes().map(|(v, _)| v.clone()).collect();
    let root = nodes.choose(rng).unwrap().clone();
    for len in 1..=6 {
        for total in attacker_levels(topo.total_stake()) {
            let even = topology::center_chain_resistance_oracle(&topo, &root, len, total)
                .map_err(|e| e.to_string())?;
            let mut front = vec![0; len];
            front[len - 1] = total;
            let far =
                topology::chain_attack_holds(&topo, &root, &front).map_err(|e| e.to_string())?;
            if !even || !far {
                return Err(format!(
                    "center moved onto a chain of {len} with stake {total} rooted at {root}"
                ));
            }
        }
    }
    Ok(())
}

fn run_scenario_suite(
    label: &str,
    seed: u64,
    iterations: u64,
    cfg: &GenConfig,
    checks: &[(&'static str, ScenarioCheck)],
) -> Vec<SuiteResult> {
    let mut results: Vec<SuiteResult> = checks
        .iter()
        .map(|(name, _)| SuiteResult {
            name: format!("{label}/{name}"),
            cases: 0,
            failures: Vec::new(),
        })
        .collect();
    for it in 0..iterations {
        let mut rng = rng_for(seed, it, u64::from(cfg.adversarial));
        let sc = random_scenario(&mut rng, cfg);
        let run = match sim::run(&sc) {
            Ok(r) => r,
            Err(e) => {
                let suite = results[0].name.clone();
                results[0].cases += 1;
                results[0].failures.push(Failure {
                    suite,
                    iteration: it,
                    detail: e.to_string(),
                    counterexample: sc.to_toml(),
                });
                continue;
            }
        };
        for (res, (_, check)) in results.iter_mut().zip(checks) {
            res.cases += 1;
            if let Err(detail) = check(&sc, &run) {
                res.failures.push(Failure {
                    suite: res.name.clone(),
                    iteration: it,
                    detail,
                    counterexample: sc.to_toml(),
                });
            }
        }
    }
    results
}

/// A named invariant over one scenario and its run.
pub type ScenarioCheck = fn(&Scenario, &RunOutput) -> Result<(), String>;

pub fn scenario_checks() -> Vec<(&'static str, ScenarioCheck)> {
    vec![
        ("trichotomy", check_trichotomy),
        ("relay-induction", check_relay_induction),
        ("conservation", |_, r| check_conservation(r)),
        ("timeout-arithmetic", |_, r| check_timeout_arithmetic(r)),
        ("bounded-loss", check_bounded_loss),
        ("clean-run", |_, r| check_clean_run(r)),
    ]
}

/// Honest sweep, adversarial sweep and the center sweep, `iterations`
/// cases each.
pub fn run_suites(seed: u64, iterations: u64) -> Report {
    let mut report = Report::default();
    let checks = scenario_checks();
    for (label, adversarial) in [("honest", false), ("adversarial", true)] {
        let cfg = GenConfig {
            adversarial,
            ..GenConfig::default()
        };
        report
            .suites
            .extend(run_scenario_suite(label, seed, iterations, &cfg, &checks));
    }
    let mut center = SuiteResult {
        name: "center-resistance".into(),
        cases: 0,
        failures: Vec::new(),
    };
    for it in 0..iterations {
        let mut rng = rng_for(seed, it, 7);
        center.cases += 1;
        if let Err(detail) = check_center_case(&mut rng) {
            center.failures.push(Failure {
                suite: "center-resistance".into(),
                iteration: it,
                counterexample: detail.clone(),
                detail,
            });
        }
    }
    report.suites.push(center);
    report
}
