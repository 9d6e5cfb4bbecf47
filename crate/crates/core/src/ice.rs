//! Gibbs-sampling search over caching policies.
//!
//! Each step picks a node uniformly at random and proposes one of that
//! node's storage-feasible caching decisions, again uniformly. Both the
//! current and the proposed policy are scored by the water-filling
//! scheduler, and the proposal is taken with probability
//! `1 / (1 + exp((y* - y) / omega))`. For small `omega` the chain
//! concentrates on the lowest-cost policies; its stationary distribution is
//! proportional to `exp(-y / omega)`.

use std::collections::HashMap;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{decision_storage, CachingPolicy, Scenario, SolveReport};
use crate::waterfill::{solve_p2_with, WaterfillConfig, WaterfillError};

/// Beyond this `|y* - y| / omega` the acceptance probability is saturated.
const EXP_SATURATION: f64 = 700.0;

#[derive(Debug, Error)]
pub enum IceError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no visited caching policy admits a feasible schedule")]
    NoFeasiblePolicy,
    #[error(transparent)]
    Waterfill(#[from] WaterfillError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IceConfig {
    /// Smoothing temperature.
    pub omega: f64,
    pub max_iters: usize,
    /// Stop once the best objective has improved by less than `stall_tol`
    /// for this many consecutive iterations.
    pub stall_window: usize,
    pub stall_tol: f64,
    pub rng_seed: u64,
    pub waterfill: WaterfillConfig,
}

impl Default for IceConfig {
    fn default() -> Self {
        IceConfig {
            omega: 1e-6,
            max_iters: 3000,
            stall_window: 300,
            stall_tol: 1e-8,
            rng_seed: 0,
            waterfill: WaterfillConfig::default(),
        }
    }
}

impl IceConfig {
    pub fn validate(&self) -> Result<(), IceError> {
        if !self.omega.is_finite() || self.omega <= 0.0 {
            return Err(IceError::Config(format!(
                "omega must be > 0, got {}",
                self.omega
            )));
        }
        if self.max_iters == 0 {
            return Err(IceError::Config("max_iters must be >= 1".into()));
        }
        if self.stall_window == 0 {
            return Err(IceError::Config("stall_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// All caching decisions of node `n` that fit its storage, in lexicographic
/// order (`false < true`, service 0 most significant).
pub fn enumerate_feasible_decisions(n: usize, scenario: &Scenario) -> Vec<Vec<bool>> {
    let n_services = scenario.n_services();
    assert!(
        n_services < 32,
        "decision space of {n_services} services is too large to enumerate"
    );
    let capacity = scenario.nodes[n].storage_gb;
    (0u32..1 << n_services)
        .map(|mask| {
            (0..n_services)
                .map(|s| mask & (1 << (n_services - 1 - s)) != 0)
                .collect::<Vec<_>>()
        })
        .filter(|d| decision_storage(scenario, d) <= capacity)
        .collect()
}

/// Probability of moving from objective `y` to `y_star` at temperature `omega`.
pub fn acceptance_probability(y: f64, y_star: f64, omega: f64) -> f64 {
    let z = (y_star - y) / omega;
    if z > EXP_SATURATION {
        0.0
    } else if z < -EXP_SATURATION {
        1.0
    } else {
        1.0 / (1.0 + z.exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IceRecord {
    pub iteration: usize,
    pub node: usize,
    pub proposal: Vec<bool>,
    /// Objective of the current policy (`inf` if it cannot be scheduled).
    pub y: f64,
    /// Objective of the proposal (`inf` if it cannot be scheduled).
    pub y_star: f64,
    pub rho: f64,
    pub accepted: bool,
    /// Best objective seen so far, including this step.
    pub best: f64,
}

impl IceRecord {
    /// Objective of the chain state after this step.
    pub fn current(&self) -> f64 {
        if self.accepted {
            self.y_star
        } else {
            self.y
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IceTrace {
    pub records: Vec<IceRecord>,
}

impl IceTrace {
    pub const CSV_HEADER: [&'static str; 7] =
        ["iter", "node", "y", "y_star", "rho", "accepted", "best"];

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.node.to_string(),
                r.y.to_string(),
                r.y_star.to_string(),
                r.rho.to_string(),
                u8::from(r.accepted).to_string(),
                r.best.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Memoized scheduling objective per caching policy. The water-filling
/// solve is deterministic, so caching results does not change the chain.
#[derive(Debug)]
pub struct PolicyEvaluator<'a> {
    scenario: &'a Scenario,
    config: WaterfillConfig,
    memo: HashMap<CachingPolicy, f64>,
}

impl<'a> PolicyEvaluator<'a> {
    pub fn new(scenario: &'a Scenario, config: WaterfillConfig) -> Self {
        PolicyEvaluator {
            scenario,
            config,
            memo: HashMap::new(),
        }
    }

    /// Optimal scheduling objective, or `inf` when the policy cannot be scheduled.
    pub fn objective(&mut self, caching: &CachingPolicy) -> f64 {
        if let Some(&y) = self.memo.get(caching) {
            return y;
        }
        let y = match solve_p2_with(self.scenario, caching, &self.config) {
            Ok(report) => report.objective,
            Err(_) => f64::INFINITY,
        };
        self.memo.insert(caching.clone(), y);
        y
    }

    pub fn distinct_policies(&self) -> usize {
        self.memo.len()
    }
}

/// The raw Markov chain over caching policies, starting from the empty cache.
#[derive(Debug)]
pub struct IceChain<'a> {
    decisions: Vec<Vec<Vec<bool>>>,
    evaluator: PolicyEvaluator<'a>,
    rng: ChaCha8Rng,
    omega: f64,
    state: CachingPolicy,
    y: f64,
    iteration: usize,
}

impl<'a> IceChain<'a> {
    pub fn new(scenario: &'a Scenario, omega: f64, seed: u64, waterfill: WaterfillConfig) -> Self {
        let decisions = (0..scenario.n_nodes())
            .map(|n| enumerate_feasible_decisions(n, scenario))
            .collect();
        let mut evaluator = PolicyEvaluator::new(scenario, waterfill);
        let state = CachingPolicy::empty(scenario.n_nodes(), scenario.n_services());
        let y = evaluator.objective(&state);
        IceChain {
            decisions,
            evaluator,
            rng: ChaCha8Rng::seed_from_u64(seed),
            omega,
            state,
            y,
            iteration: 0,
        }
    }

    pub fn state(&self) -> &CachingPolicy {
        &self.state
    }

    /// Objective of the current state.
    pub fn objective(&self) -> f64 {
        self.y
    }

    pub fn evaluator(&self) -> &PolicyEvaluator<'a> {
        &self.evaluator
    }

    /// One proposal/acceptance round. `best` in the returned record is left
    /// at the current objective; [`run_ice`] overwrites it.
    pub fn step(&mut self) -> IceRecord {
        self.iteration += 1;
        let n_nodes = self.decisions.len();
        let node = self.rng.gen_range(0..n_nodes);
        let choices = &self.decisions[node];
        let proposal = choices[self.rng.gen_range(0..choices.len())].clone();
        let u: f64 = self.rng.gen();

        let y = self.y;
        let (y_star, rho, accepted) = if proposal.as_slice() == self.state.row(node) {
            let rho = acceptance_probability(y, y, self.omega);
            (y, rho, u < rho)
        } else {
            let mut candidate = self.state.clone();
            candidate.set_row(node, &proposal);
            let y_star = self.evaluator.objective(&candidate);
            let rho = if y_star.is_infinite() {
                0.0
            } else if y.is_infinite() {
                1.0
            } else {
                acceptance_probability(y, y_star, self.omega)
            };
            let accepted = u < rho;
            if accepted {
                self.state = candidate;
                self.y = y_star;
            }
            (y_star, rho, accepted)
        };
        IceRecord {
            iteration: self.iteration,
            node,
            proposal,
            y,
            y_star,
            rho,
            accepted,
            best: self.y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IceOutcome {
    /// Schedule and metrics of the best policy visited.
    pub report: SolveReport,
    pub trace: IceTrace,
    /// Chain state when the run stopped.
    pub final_caching: CachingPolicy,
    pub final_objective: f64,
}

/// Runs the chain from the empty cache until `max_iters` or until the best
/// objective stalls, and returns the best policy visited.
pub fn run_ice(scenario: &Scenario, config: &IceConfig) -> Result<IceOutcome, IceError> {
    config.validate()?;
    let mut chain = IceChain::new(scenario, config.omega, config.rng_seed, config.waterfill);
    let mut best_y = chain.objective();
    let mut best = chain.state().clone();
    let mut since_improvement = 0;
    let mut trace = IceTrace::default();

    for _ in 0..config.max_iters {
        let mut record = chain.step();
        let y = chain.objective();
        let improved = y < best_y && (best_y.is_infinite() || best_y - y > config.stall_tol);
        if y < best_y {
            best_y = y;
            best = chain.state().clone();
        }
        record.best = best_y;
        trace.records.push(record);
        if improved {
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= config.stall_window {
                break;
            }
        }
    }

    if best_y.is_infinite() {
        return Err(IceError::NoFeasiblePolicy);
    }
    let mut report = solve_p2_with(scenario, &best, &config.waterfill)?;
    report.diagnostics.iterations = trace.records.len();
    Ok(IceOutcome {
        report,
        trace,
        final_caching: chain.state().clone(),
        final_objective: chain.objective(),
    })
}
