//! Bob slips his severance proof to Alice just before their sync and then
//! refuses the late fee. Alice books the loss and cuts Bob off.

use por::scenario::Scenario;
use por::{sim, timeline};

fn main() {
    let sc = Scenario::parse(include_str!("../scenarios/eve_withhold.por")).unwrap();
    let out = sim::run(&sc).unwrap();
    print!("{}", timeline::render(&out.trace, &sc.render));
    println!();
    for ((node, peer), loss) in &out.losses {
        println!("{node} lost {loss} relaying through {peer}");
    }
    for r in out.ledger.severance_log() {
        println!("{} severed {} at {}ms", r.initiator, r.edge, r.submit_time);
    }
}
