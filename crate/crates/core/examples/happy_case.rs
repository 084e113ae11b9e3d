//! A request relayed over three hops comes back exactly one round trip later.

use por::scenario::Scenario;
use por::trace::TraceAction;
use por::{sim, timeline};

fn main() {
    let sc = Scenario::parse(include_str!("../scenarios/happy.por")).unwrap();
    let out = sim::run(&sc).unwrap();
    print!("{}", timeline::render(&out.trace, &sc.render));
    let done = out
        .trace
        .events()
        .iter()
        .find(|e| matches!(e.action, TraceAction::Resolved { .. }))
        .unwrap();
    println!("\n{} resolved at {}ms", done.actors[0], done.time);
}
