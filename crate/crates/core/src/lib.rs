//! Cooperative service caching and workload scheduling across edge nodes.
//!
//! The crate optimizes which services each edge node caches and how each
//! service's workload is split between the caching nodes and the cloud. The
//! caching search ([`ice`]) is a Gibbs-sampling chain over per-node caching
//! decisions; every candidate policy is scored by the water-filling
//! scheduler in [`waterfill`], which solves the convex scheduling problem
//! exactly up to a bisection tolerance.
//!
//! Supporting modules provide the closed-form system model ([`model`]), two
//! comparison algorithms ([`baselines`]), brute-force reference solvers
//! ([`oracle`]), random instance generation and the scenario file format
//! ([`scenario`]), and the batch experiment runner behind the CLI
//! ([`experiment`]).

pub mod baselines;
pub mod experiment;
pub mod ice;
pub mod model;
pub mod oracle;
pub mod scenario;
pub mod waterfill;

pub use baselines::{run_greedy, run_noncooperation, BaselineKind};
pub use experiment::{run_experiment, Algorithm, ExperimentConfig};
pub use ice::{run_ice, IceConfig, IceOutcome, IceTrace};
pub use model::{
    AllocationMatrix, CachingPolicy, EdgeNode, ModelError, Scenario, SchedulingPolicy, Service,
    SolveReport, Topology,
};
pub use scenario::{generate, GenParams, ScenarioDocument, TopologyKind};
pub use waterfill::{solve_p2, solve_p2_with, CloudWeight, WaterfillConfig, WaterfillError};
