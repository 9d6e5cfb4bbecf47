#![allow(dead_code)]

use coopcache::ice::enumerate_feasible_decisions;
use coopcache::model::{CachingPolicy, EdgeNode, Scenario, Service, Topology};
use coopcache::scenario::{generate, GenParams, TopologyKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn service(storage: f64, weight: f64, bandwidth: f64) -> Service {
    Service {
        storage_gb: storage,
        compute_per_task: 0.25,
        data_ratio: 0.5,
        core_bandwidth: bandwidth,
        outsource_weight: weight,
    }
}

/// Three nodes on a path, two services, 3 x 3 x 4 = 36 storage-feasible
/// caching policies.
pub fn three_node_instance() -> Scenario {
    let nodes = (0..3)
        .map(|i| EdgeNode {
            storage_gb: 40.0 + 10.0 * i as f64,
            compute_rate: 5.0 + 2.0 * i as f64,
            lan_delay: 0.02,
        })
        .collect();
    Scenario::new(
        nodes,
        vec![service(30.0, 0.01, 4.0), service(30.0, 0.02, 3.0)],
        vec![vec![6.0, 2.0], vec![3.0, 1.0], vec![1.0, 4.0]],
        Topology::from_edges(3, &[(0, 1), (1, 2)]).unwrap(),
        1e-3,
    )
    .unwrap()
}

/// Two linked nodes, two services, each node fits both: 16 policies.
pub fn two_node_instance() -> Scenario {
    let nodes = vec![
        EdgeNode {
            storage_gb: 60.0,
            compute_rate: 4.0,
            lan_delay: 0.02,
        },
        EdgeNode {
            storage_gb: 60.0,
            compute_rate: 6.0,
            lan_delay: 0.02,
        },
    ];
    Scenario::new(
        nodes,
        vec![service(30.0, 0.01, 4.0), service(30.0, 0.02, 3.0)],
        vec![vec![5.0, 2.0], vec![2.0, 4.0]],
        Topology::from_edges(2, &[(0, 1)]).unwrap(),
        1e-3,
    )
    .unwrap()
}

/// Random instance with N <= 4 and S <= 2 whose all-cloud schedule is
/// feasible, so every caching policy can be scheduled.
pub fn random_small_instance(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n_nodes = rng.gen_range(1..=4);
    let topology = match rng.gen_range(0..3) {
        0 => TopologyKind::FullyConnected,
        1 => TopologyKind::Isolated,
        _ => TopologyKind::RandomGeometric(60.0),
    };
    let load = rng.gen_range(2.0..40.0);
    let params = GenParams {
        n_nodes,
        n_services: rng.gen_range(1..=2),
        node_arrival_range_tasks_per_s: (0.5 * load, load),
        topology,
        seed,
        ..GenParams::default()
    };
    generate(&params).unwrap()
}

/// Random storage-feasible caching policy.
pub fn random_caching(scenario: &Scenario, seed: u64) -> CachingPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..scenario.n_nodes())
        .map(|n| {
            let options = enumerate_feasible_decisions(n, scenario);
            options[rng.gen_range(0..options.len())].clone()
        })
        .collect();
    CachingPolicy::from_rows(rows)
}
