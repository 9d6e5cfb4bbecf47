//! Comparison algorithms without LAN cooperation.
//!
//! Both baselines schedule with every node restricted to its own arrivals.
//! The cloud queue of a service is still shared by all nodes, so the cloud
//! split is solved jointly per service.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ice::{run_ice, IceConfig, IceError, IceOutcome};
use crate::model::{CachingPolicy, Scenario, SolveReport};
use crate::waterfill::{solve_p2_with, WaterfillConfig, WaterfillError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    NonCooperation,
    Greedy,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 2] = [BaselineKind::NonCooperation, BaselineKind::Greedy];
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::NonCooperation => "noncoop",
            BaselineKind::Greedy => "greedy",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "noncoop" | "non_cooperation" => Ok(BaselineKind::NonCooperation),
            "greedy" => Ok(BaselineKind::Greedy),
            _ => Err(format!("unknown baseline {s:?}")),
        }
    }
}

/// Gibbs caching search whose scheduler ignores the LAN.
pub fn run_noncooperation(scenario: &Scenario, config: &IceConfig) -> Result<IceOutcome, IceError> {
    run_ice(&scenario.without_cooperation(), config)
}

/// Services ordered by aggregate arrivals, most popular first; ties go to
/// the lower service id.
pub fn popularity_order(scenario: &Scenario) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scenario.n_services()).collect();
    order.sort_by(|&a, &b| {
        scenario
            .total_arrival(b)
            .total_cmp(&scenario.total_arrival(a))
            .then(a.cmp(&b))
    });
    order
}

/// Each node caches services in popularity order, skipping any that no
/// longer fit.
pub fn greedy_caching(scenario: &Scenario, order: &[usize]) -> CachingPolicy {
    let mut caching = CachingPolicy::empty(scenario.n_nodes(), scenario.n_services());
    for (n, node) in scenario.nodes.iter().enumerate() {
        let mut free = node.storage_gb;
        for &s in order {
            let need = scenario.services[s].storage_gb;
            if need <= free {
                caching.set(n, s, true);
                free -= need;
            }
        }
    }
    caching
}

pub fn run_greedy(
    scenario: &Scenario,
    config: &WaterfillConfig,
) -> Result<SolveReport, WaterfillError> {
    let caching = greedy_caching(scenario, &popularity_order(scenario));
    solve_p2_with(&scenario.without_cooperation(), &caching, config)
}
