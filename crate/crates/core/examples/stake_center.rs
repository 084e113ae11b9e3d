//! An attacker with less stake than the honest network grows a chain off one
//! honest node. However the stake is spread along it, the stake-weighted
//! center stays on the honest side.

use por::topology::{self, EdgeParams, Topology};
use por::NodeId;

fn main() {
    let mut honest = Topology::new();
    let ring = ["a", "b", "c", "d", "e"];
    for (i, v) in ring.iter().enumerate() {
        honest
            .add_node(NodeId::from(*v), 10 + 5 * i as u64)
            .unwrap();
    }
    for i in 0..ring.len() {
        let (a, b) = (
            NodeId::from(ring[i]),
            NodeId::from(ring[(i + 1) % ring.len()]),
        );
        honest.add_edge(&a, &b, EdgeParams::new(1, 0, 0)).unwrap();
    }
    let total = honest.total_stake();
    println!(
        "honest stake {total}, center {}",
        topology::stake_weighted_center(&honest).unwrap()
    );
    let root = NodeId::from("a");
    for len in [1, 3, 6] {
        for attacker in [total / 2, total - 1] {
            let holds =
                topology::center_chain_resistance_oracle(&honest, &root, len, attacker).unwrap();
            println!("chain of {len} with stake {attacker}: center stays honest = {holds}");
        }
    }
}
