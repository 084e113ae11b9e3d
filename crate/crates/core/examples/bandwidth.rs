//! Bob-Carol carries one message at a time. With queue-and-pay Bob holds the
//! second request and pays Alice for the wait; with break-and-reprice he
//! severs and reopens the edge at a higher price.

use por::scenario::Scenario;
use por::{sim, timeline};

fn show(src: &str) {
    let sc = Scenario::parse(src).unwrap();
    let out = sim::run(&sc).unwrap();
    println!("== {}", sc.name);
    print!("{}", timeline::render(&out.trace, &sc.render));
    for (edge, p) in out.ledger.topology().edges() {
        println!("{edge}: base cost {}", p.base_cost);
    }
    println!();
}

fn main() {
    show(include_str!("../scenarios/bandwidth.por"));
    show(include_str!("../scenarios/reprice.por"));
}
