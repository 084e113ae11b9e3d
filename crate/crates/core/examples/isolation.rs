//! Eve is offline. Dave and Alex keep asking her for data until every edge
//! to her is severed, then Alex reports her and the severing neighbours get
//! their penalty halves back from her stake.

use por::ledger::LedgerEvent;
use por::scenario::Scenario;
use por::{sim, topology, NodeId};

fn main() {
    let sc = Scenario::parse(include_str!("../scenarios/isolation.por")).unwrap();
    let out = sim::run(&sc).unwrap();
    let eve = NodeId::from("Eve");
    for r in out.ledger.severance_log() {
        println!("{} severed {} at {}ms", r.initiator, r.edge, r.submit_time);
    }
    println!(
        "Eve isolated: {}",
        topology::is_isolated(out.ledger.topology(), &eve).unwrap()
    );
    for e in out.ledger.events() {
        if let LedgerEvent::IsolationReported {
            reporter,
            debit,
            credits,
            ..
        } = e
        {
            println!("{reporter} reported Eve: debit {debit}, credits {credits:?}");
        }
    }
    println!("stake left on Eve: {}", out.ledger.stake(&eve).unwrap());
}
