//! Eve is offline. Bob breaks his edge to her the moment she is late and
//! relays the severance proof, which reaches Alex before his own deadline.

use por::scenario::Scenario;
use por::{sim, timeline};

fn main() {
    let sc = Scenario::parse(include_str!("../scenarios/eve_break_now.por")).unwrap();
    let out = sim::run(&sc).unwrap();
    print!("{}", timeline::render(&out.trace, &sc.render));
    for r in out.ledger.severance_log() {
        println!(
            "\n{} severed {} at {}ms",
            r.initiator, r.edge, r.submit_time
        );
    }
}
