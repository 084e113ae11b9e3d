//! Bob keeps paying for Eve's silence for eight seconds. Alice never carries
//! more than one sync interval of lateness herself.

use por::scenario::Scenario;
use por::{sim, timeline, NodeId};

fn main() {
    let sc = Scenario::parse(include_str!("../scenarios/eve_wait_longer.por")).unwrap();
    let out = sim::run(&sc).unwrap();
    print!("{}", timeline::render(&out.trace, &sc.render));
    let alice = NodeId::from("Alice");
    println!(
        "\nAlice's largest unreimbursed outlay: {}",
        out.max_exposure[&alice]
    );
}
