//! End-to-end acceptance criteria. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use por::ledger::LedgerEvent;
use por::properties::{self, GenConfig};
use por::scenario::Scenario;
use por::sim::{self, RunOutput, Verdict};
use por::timeline;
use por::topology::{self, Topology};
use por::trace::{OutcomeLabel, TraceAction};
use por::{EdgeKey, Money, NodeId};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn scenario(name: &str) -> Scenario {
    let path = root().join("scenarios").join(format!("{name}.por"));
    Scenario::parse(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn golden(name: &str, ext: &str) -> String {
    std::fs::read_to_string(root().join("tests/golden").join(format!("{name}.{ext}"))).unwrap()
}

fn n(s: &str) -> NodeId {
    NodeId::from(s)
}

fn run(name: &str) -> (Scenario, RunOutput) {
    let sc = scenario(name);
    let out = sim::run(&sc).unwrap();
    (sc, out)
}

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Payments `payer` made to `payee`, as (time, amount).
fn payments(out: &RunOutput, payer: &str, payee: &str) -> Vec<(u64, Money)> {
    out.trace
        .events()
        .iter()
        .filter(|e| matches!(e.action, TraceAction::Pay { .. }) && e.actors == [n(payer), n(payee)])
        .map(|e| (e.time, e.amount.unwrap_or(0)))
        .collect()
}

fn golden_matches(sc: &Scenario, out: &RunOutput, name: &str) -> Result<(), String> {
    let rendered = timeline::render(&out.trace, &sc.render);
    if let Some((line, want, got)) =
        timeline::first_difference(&golden(name, "timeline"), &rendered)
    {
        return Err(format!(
            "{name}.timeline line {line}: want {want:?} got {got:?}"
        ));
    }
    if let Some((line, want, got)) =
        timeline::first_difference(&golden(name, "trace"), &out.trace.to_text())
    {
        return Err(format!(
            "{name}.trace line {line}: want {want:?} got {got:?}"
        ));
    }
    Ok(())
}

fn happy_case() -> Outcome {
    let start = Instant::now();
    let (sc, out) = run("happy");
    let elapsed = start.elapsed();
    let at = |pred: &dyn Fn(&TraceAction) -> bool, actors: &[&str]| {
        out.trace
            .events()
            .iter()
            .find(|e| {
                pred(&e.action)
                    && e.actors
                        .iter()
                        .map(|a| a.as_str())
                        .eq(actors.iter().copied())
            })
            .map(|e| e.time)
    };
    let forward = |a: &TraceAction| matches!(a, TraceAction::Forward { .. });
    let receive = |a: &TraceAction| matches!(a, TraceAction::Receive { .. });
    let resolved = |a: &TraceAction| {
        matches!(
            a,
            TraceAction::Resolved {
                outcome: OutcomeLabel::Response,
                ..
            }
        )
    };
    ensure!(
        at(&forward, &["Alice", "Bob"]) == Some(100),
        "Alice forwards at {:?}",
        at(&forward, &["Alice", "Bob"])
    );
    ensure!(
        at(&forward, &["Bob", "Carol"]) == Some(300),
        "Bob forwards at {:?}",
        at(&forward, &["Bob", "Carol"])
    );
    let carol = at(&receive, &["Bob", "Carol"]);
    ensure!(carol == Some(400), "Carol receives at {carol:?}");
    ensure!(
        at(&resolved, &["Alex"]) == Some(800),
        "Alex resolves at {:?}",
        at(&resolved, &["Alex"])
    );
    ensure!(
        out.violations.is_empty(),
        "violations: {:?}",
        out.violations
    );
    golden_matches(&sc, &out, "happy")?;
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("response at 800, goldens match, {elapsed:?}"))
}

fn wait_and_pay() -> Outcome {
    let (sc, out) = run("eve_wait_pay");
    golden_matches(&sc, &out, "eve_wait_pay")?;
    let syncs: Vec<(u64, Money)> = out
        .trace
        .events()
        .iter()
        .filter(|e| e.action == TraceAction::Sync && e.time <= 600)
        .map(|e| (e.time, e.amount.unwrap_or(0)))
        .collect();
    ensure!(syncs == [(500, 0), (600, 0)], "early syncs {syncs:?}");
    let alice = payments(&out, "Alice", "Alex");
    ensure!(
        alice == [(1000, 100), (1500, 500), (2000, 500)],
        "Alice paid {alice:?}"
    );
    let bob = payments(&out, "Bob", "Alice");
    ensure!(bob == [(1600, 900)], "Bob paid {bob:?}");
    let proof_at_sync = |from: &str, to: &str, t: u64| {
        out.trace.events().iter().any(|e| {
            e.time == t
                && e.actors == [n(from), n(to)]
                && matches!(
                    e.action,
                    TraceAction::SendOutcome {
                        outcome: OutcomeLabel::Proof(_),
                        carrier: por::trace::Carrier::Sync,
                        ..
                    }
                )
        })
    };
    ensure!(
        proof_at_sync("Bob", "Alice", 1600),
        "no proof from Bob at 1600"
    );
    ensure!(
        proof_at_sync("Alice", "Alex", 2000),
        "no proof from Alice at 2000"
    );
    // Alice's own lateness up to Bob's sync is covered by what Bob paid her.
    let covered: Money = alice
        .iter()
        .filter(|(t, _)| *t <= 1600)
        .map(|(_, a)| a)
        .sum();
    let loss = out
        .losses
        .get(&(n("Alice"), n("Bob")))
        .copied()
        .unwrap_or(0);
    ensure!(loss == 0, "Alice recorded loss {loss}");
    ensure!(
        covered <= bob[0].1,
        "Alice paid {covered} before 1600, Bob covered {}",
        bob[0].1
    );
    ensure!(
        out.violations.is_empty(),
        "violations: {:?}",
        out.violations
    );
    Ok(format!(
        "row-for-row match, Alice loss 0 ({covered} paid <= {} received)",
        bob[0].1
    ))
}

fn withheld_fee() -> Outcome {
    let (sc, out) = run("eve_withhold");
    golden_matches(&sc, &out, "eve_withhold")?;
    ensure!(
        timeline::render(&out.trace, &sc.render).contains("<- sync, Bob DOESN'T PAY ->"),
        "no default row"
    );
    let out_of_pocket: Money = payments(&out, "Alice", "Alex")
        .iter()
        .filter(|(t, _)| *t == 1000 || *t == 1500)
        .map(|(_, a)| a)
        .sum();
    let loss = out
        .losses
        .get(&(n("Alice"), n("Bob")))
        .copied()
        .unwrap_or(0);
    ensure!(
        loss == out_of_pocket && loss == 600,
        "loss {loss} vs payments {out_of_pocket}"
    );
    let severed = out
        .ledger
        .severance_log()
        .iter()
        .find(|r| r.edge == EdgeKey::new(&n("Alice"), &n("Bob")));
    ensure!(
        severed.is_some_and(|r| r.initiator == n("Alice")),
        "Alice never severed Alice-Bob"
    );
    ensure!(
        out.violations.is_empty(),
        "violations: {:?}",
        out.violations
    );
    Ok(format!(
        "default traced, loss {loss}, Alice-Bob severed by Alice"
    ))
}

fn wait_longer() -> Outcome {
    let (sc, out) = run("eve_wait_longer");
    golden_matches(&sc, &out, "eve_wait_longer")?;
    let bob: Vec<u64> = payments(&out, "Bob", "Alice")
        .iter()
        .map(|(t, _)| *t)
        .collect();
    let want: Vec<u64> = (0..9).map(|k| 1600 + 1000 * k).collect();
    ensure!(bob == want, "Bob paid at {bob:?}");
    let cut = out
        .ledger
        .severance_log()
        .iter()
        .find(|r| r.edge == EdgeKey::new(&n("Bob"), &n("Eve")));
    ensure!(
        cut.is_some_and(|r| r.submit_time == 9600),
        "Bob-Eve cut at {:?}",
        cut.map(|r| r.submit_time)
    );
    let interval = sc.edge(&n("Alice"), &n("Bob")).unwrap().sync_interval_ms as Money;
    let exposure = out.max_exposure[&n("Alice")];
    ensure!(
        exposure <= interval,
        "Alice exposure {exposure} > {interval}"
    );
    ensure!(
        out.violations.is_empty(),
        "violations: {:?}",
        out.violations
    );
    Ok(format!(
        "Bob pays 1600..9600, Alice max exposure {exposure} <= {interval}"
    ))
}

fn trichotomy() -> Outcome {
    let start = Instant::now();
    let cfg = GenConfig::default();
    let mut verdicts: BTreeMap<&'static str, usize> = BTreeMap::new();
    for it in 0..1000 {
        let mut rng = properties::rng_for(20_240_501, it, 1);
        let sc = properties::random_scenario(&mut rng, &cfg);
        let out = sim::run(&sc).map_err(|e| format!("iteration {it}: {e}"))?;
        properties::check_trichotomy(&sc, &out).map_err(|e| format!("iteration {it}: {e}"))?;
        for msg in sim::originated(&out.trace) {
            let v =
                sim::assert_trichotomy(&out.trace, &out.ledger, &msg).map_err(|e| e.to_string())?;
            let key = match v {
                Verdict::Response => "response",
                Verdict::SeveranceProof(_) => "proof",
                Verdict::FullyPaidLateness => "paid-lateness",
                Verdict::OriginatorChannelDefault => "default",
                Verdict::Unacknowledged => "unacked",
            };
            *verdicts.entry(key).or_default() += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "1000 scenarios, verdicts {verdicts:?}, {elapsed:?}"
    ))
}

/// Brute-force center: all-pairs hop distances by Floyd-Warshall, then the
/// id-ordered argmin of the stake-weighted distance sum.
fn oracle_center(t: &Topology) -> NodeId {
    let ids: Vec<NodeId> = t.nodes().map(|(v, _)| v.clone()).collect();
    let k = ids.len();
    let inf = u64::MAX / 4;
    let mut d = vec![vec![inf; k]; k];
    for i in 0..k {
        d[i][i] = 0;
        for j in 0..k {
            if t.has_edge(&ids[i], &ids[j]) {
                d[i][j] = 1;
            }
        }
    }
    for m in 0..k {
        for i in 0..k {
            for j in 0..k {
                d[i][j] = d[i][j].min(d[i][m] + d[m][j]);
            }
        }
    }
    let stake: Vec<u128> = ids
        .iter()
        .map(|v| u128::from(t.stake(v).unwrap()))
        .collect();
    let score = |v: usize| -> u128 { (0..k).map(|u| u128::from(d[u][v]) * stake[u]).sum() };
    let best = (0..k).min_by_key(|&v| (score(v), v)).unwrap();
    ids[best].clone()
}

fn center_resistance() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    for it in 0..300 {
        let mut rng = properties::rng_for(77, it, 7);
        let honest = properties::random_honest_graph(&mut rng, 12);
        let ids: Vec<NodeId> = honest.nodes().map(|(v, _)| v.clone()).collect();
        let root = ids[it as usize % ids.len()].clone();
        for len in 1..=6 {
            for total in properties::attacker_levels(honest.total_stake()) {
                let held = topology::center_chain_resistance_oracle(&honest, &root, len, total)
                    .map_err(|e| e.to_string())?;
                let mut attacked = honest.clone();
                let share = total / len as u64;
                let mut prev = root.clone();
                for k in 1..=len {
                    let stake = if k == len {
                        total - share * (len as u64 - 1)
                    } else {
                        share
                    };
                    let id = topology::chain_node_id(k);
                    attacked.add_node(id.clone(), stake).unwrap();
                    attacked
                        .add_edge(&prev, &id, topology::EdgeParams::new(1, 0, 0))
                        .unwrap();
                    prev = id;
                }
                let brute = oracle_center(&attacked);
                let fast = topology::stake_weighted_center(&attacked).map_err(|e| e.to_string())?;
                ensure!(brute == fast, "graph {it}: oracle {brute} vs {fast}");
                let on_chain = (1..=len).any(|k| topology::chain_node_id(k) == brute);
                ensure!(
                    held && !on_chain,
                    "graph {it}: center {brute} on a chain of {len}, stake {total}"
                );
                cases += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{cases} attacks, oracle agrees, {elapsed:?}"))
}

fn isolation() -> Outcome {
    let (_, out) = run("isolation");
    let log = out.ledger.severance_log();
    ensure!(log.len() == 2, "{} severances", log.len());
    let eve = n("Eve");
    ensure!(
        topology::is_isolated(out.ledger.topology(), &eve).map_err(|e| e.to_string())?,
        "Eve not isolated"
    );
    let half = out.ledger.params().severance_penalty / 2;
    let credits = out
        .ledger
        .events()
        .iter()
        .find_map(|e| match e {
            LedgerEvent::IsolationReported {
                isolated, credits, ..
            } if *isolated == eve => Some(credits.clone()),
            _ => None,
        })
        .ok_or("no isolation report")?;
    let want = BTreeMap::from([(n("Bob"), half), (n("Dave"), half)]);
    ensure!(credits == want, "credits {credits:?}, want {want:?}");
    ensure!(
        out.violations.is_empty(),
        "violations: {:?}",
        out.violations
    );
    ensure!(
        out.total_value() == out.initial_total,
        "money not conserved"
    );
    Ok(format!(
        "2 severances, Eve isolated, Bob and Dave credited {half} each"
    ))
}

fn determinism() -> Outcome {
    let names = [
        "happy",
        "eve_break_now",
        "eve_wait_pay",
        "eve_withhold",
        "eve_wait_longer",
        "isolation",
        "storage",
        "bandwidth",
        "reprice",
    ];
    for name in names {
        let (sc, a) = run(name);
        let b = sim::run(&sc).unwrap();
        ensure!(
            a.trace.to_text() == b.trace.to_text(),
            "{name}: traces differ between runs"
        );
        ensure!(
            a.summary() == b.summary(),
            "{name}: summaries differ between runs"
        );
        golden_matches(&sc, &a, name)?;
    }
    let cfg = GenConfig::default();
    for it in 0..50 {
        let sc = properties::random_scenario(&mut properties::rng_for(3, it, 1), &cfg);
        let again = properties::random_scenario(&mut properties::rng_for(3, it, 1), &cfg);
        ensure!(sc == again, "generator not reproducible at {it}");
        let (a, b) = (sim::run(&sc).unwrap(), sim::run(&sc).unwrap());
        ensure!(
            a.trace.to_text() == b.trace.to_text(),
            "random scenario {it}: traces differ"
        );
    }
    Ok(format!(
        "{} goldens and 50 random scenarios byte-identical",
        names.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 happy case", happy_case),
        ("2 wait and pay", wait_and_pay),
        ("3 withheld late fee", withheld_fee),
        ("4 wait longer", wait_longer),
        ("5 outcome trichotomy", trichotomy),
        ("6 center resistance", center_resistance),
        ("7 isolation reimbursement", isolation),
        ("8 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
