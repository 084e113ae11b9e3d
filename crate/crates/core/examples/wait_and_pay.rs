//! Bob waits for his next sync before giving up on Eve. Alice pays Alex for
//! the delay at each of her faster syncs and is reimbursed by Bob.

use por::scenario::Scenario;
use por::trace::TraceAction;
use por::{sim, timeline, Money};

fn main() {
    let sc = Scenario::parse(include_str!("../scenarios/eve_wait_pay.por")).unwrap();
    let out = sim::run(&sc).unwrap();
    print!("{}", timeline::render(&out.trace, &sc.render));
    println!();
    let mut net: std::collections::BTreeMap<String, Money> = Default::default();
    for e in out.trace.events() {
        if let (TraceAction::Pay { .. }, Some(a)) = (&e.action, e.amount) {
            println!("{:>5}ms {} pays {} {a}", e.time, e.actors[0], e.actors[1]);
            *net.entry(e.actors[0].to_string()).or_default() -= a;
            *net.entry(e.actors[1].to_string()).or_default() += a;
        }
    }
    println!("net lateness flow: {net:?}");
}
