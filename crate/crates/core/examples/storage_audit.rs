//! Alice keeps data on Bob. When Bob disappears she fetches through each of
//! her relays in turn; every attempt ends in a severance proof until Bob is
//! cut off, so she can tell an absent host from a bad relay.

use por::scenario::Scenario;
use por::trace::TraceAction;
use por::{sim, timeline};

fn main() {
    let sc = Scenario::parse(include_str!("../scenarios/storage.por")).unwrap();
    let out = sim::run(&sc).unwrap();
    print!("{}", timeline::render(&out.trace, &sc.render));
    println!();
    for e in out.trace.events() {
        match &e.action {
            TraceAction::Resolved { msg, outcome } => println!("{:>5}ms {msg}: {outcome}", e.time),
            TraceAction::PursuitEnd { target, reason } => {
                println!("{:>5}ms pursuit of {target}: {reason}", e.time)
            }
            TraceAction::IsolationReport { credited } => {
                println!(
                    "{:>5}ms {} reported, {credited} neighbours credited",
                    e.time, e.actors[1]
                )
            }
            _ => {}
        }
    }
}
