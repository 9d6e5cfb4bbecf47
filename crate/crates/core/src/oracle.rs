//! Brute-force and reference solvers used to cross-check the scheduler and
//! the caching search at desk scale.
//!
//! The reference scheduler does not share any code with the water-filling
//! solver. It runs a scaled projected-gradient method on a smooth lifting of
//! each service's subproblem: every edge share is split into a local part
//! `u <= A_ns / A_s` and a pulled-in part `v`, and the LAN cost becomes the
//! linear term `d_n * v`. The minimum over such splits reproduces the
//! `max(lambda A_s - A_ns, 0)` kink, so both problems share their optimum.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ice::IceChain;
use crate::model::{
    compute_allocation, decision_storage, objective, scheduling_upper_bounds, CachingPolicy,
    ModelError, Scenario, SchedulingPolicy, SolveDiagnostics, SolveReport,
};
use crate::waterfill::{solve_p2, WaterfillConfig};

pub const MAX_SEARCH_SPACE: u128 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("scheduling infeasible for services {services:?}")]
    Infeasible { services: Vec<usize> },
    #[error(
        "service {service}: no convergence after {iterations} iterations (residual {residual})"
    )]
    NotConverged {
        service: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("caching search space has {size} policies, limit is {limit}")]
    SearchSpaceTooLarge { size: u128, limit: u128 },
    #[error("no caching policy admits a feasible schedule")]
    NoFeasiblePolicy,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSolverConfig {
    /// Initial trial step of the backtracking search, in the scaled metric.
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop when the scaled gradient mapping falls below this.
    pub tolerance: f64,
}

impl Default for ReferenceSolverConfig {
    fn default() -> Self {
        ReferenceSolverConfig {
            step_size: 1.0,
            max_iters: 200_000,
            tolerance: 1e-8,
        }
    }
}

/// Projection onto `{x : sum(x) = target, lo <= x <= hi}` in the metric
/// `sum_i weight_i (x_i - z_i)^2`. The solution is
/// `x_i = clamp(z_i - tau / weight_i)`, with `tau` found by bisection.
pub fn project_capped_simplex(
    z: &[f64],
    weight: &[f64],
    lo: &[f64],
    hi: &[f64],
    target: f64,
) -> Vec<f64> {
    let at = |tau: f64| -> Vec<f64> {
        z.iter()
            .zip(weight)
            .zip(lo.iter().zip(hi))
            .map(|((&zi, &wi), (&l, &h))| (zi - tau / wi).clamp(l, h))
            .collect()
    };
    let sum = |x: &[f64]| x.iter().sum::<f64>();
    // tau_lo puts every coordinate at its upper bound, tau_hi at its lower.
    let mut tau_lo = f64::INFINITY;
    let mut tau_hi = f64::NEG_INFINITY;
    for i in 0..z.len() {
        tau_lo = tau_lo.min(weight[i] * (z[i] - hi[i]));
        tau_hi = tau_hi.max(weight[i] * (z[i] - lo[i]));
    }
    tau_lo -= 1.0;
    tau_hi += 1.0;
    for _ in 0..300 {
        let mid = 0.5 * (tau_lo + tau_hi);
        if mid <= tau_lo || mid >= tau_hi {
            break;
        }
        if sum(&at(mid)) > target {
            tau_lo = mid;
        } else {
            tau_hi = mid;
        }
    }
    let mut x = at(0.5 * (tau_lo + tau_hi));
    // Absorb the last rounding error in the coordinate with the most room.
    let gap = target - sum(&x);
    if gap != 0.0 {
        let room = |i: usize| {
            if gap > 0.0 {
                hi[i] - x[i]
            } else {
                x[i] - lo[i]
            }
        };
        if let Some(i) = (0..x.len()).max_by(|&a, &b| room(a).total_cmp(&room(b))) {
            x[i] = (x[i] + gap).clamp(lo[i], hi[i]);
        }
    }
    x
}

/// Lifted single-service problem. Variable layout: for each caching node
/// `[u, v]`, then the cloud share last.
struct LiftedService {
    total: f64,
    /// (mu, lan_delay) per caching node.
    edges: Vec<(usize, f64, f64)>,
    core_rate: f64,
    weight: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl LiftedService {
    fn new(scenario: &Scenario, caching: &CachingPolicy, s: usize, local_only: bool) -> Self {
        let total = scenario.total_arrival(s);
        let allocation = compute_allocation(scenario, caching);
        let eps = scenario.epsilon;
        let mut edges = Vec::new();
        let mut hi = Vec::new();
        for n in 0..scenario.n_nodes() {
            if !caching.is_cached(n, s) {
                continue;
            }
            let mu = allocation.service_rate[n][s];
            let reachable = if local_only {
                scenario.arrivals[n][s]
            } else {
                scenario.reachable_arrival(n, s)
            };
            let cap = (reachable.min(mu - eps)).max(0.0) / total;
            let local = scenario.arrivals[n][s] / total;
            hi.push(cap.min(local));
            hi.push((cap - local).max(0.0));
            edges.push((n, mu, scenario.nodes[n].lan_delay));
        }
        let svc = &scenario.services[s];
        let core_rate = svc.core_service_rate();
        hi.push((core_rate - eps).max(0.0) / total);
        let lo = vec![0.0; hi.len()];
        LiftedService {
            total,
            edges,
            core_rate,
            weight: svc.outsource_weight * total,
            lo,
            hi,
        }
    }

    fn cost(&self, x: &[f64]) -> f64 {
        let mut f = 0.0;
        for (k, &(_, mu, d)) in self.edges.iter().enumerate() {
            let lam = x[2 * k] + x[2 * k + 1];
            f += lam / (mu - lam * self.total) + d * x[2 * k + 1];
        }
        let o = *x.last().unwrap();
        f + o / (self.core_rate - o * self.total) + self.weight * o
    }

    fn gradient_and_curvature(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut g = vec![0.0; x.len()];
        let mut h = vec![0.0; x.len()];
        let a = self.total;
        for (k, &(_, mu, d)) in self.edges.iter().enumerate() {
            let lam = x[2 * k] + x[2 * k + 1];
            let gap = mu - lam * a;
            let dq = mu / (gap * gap);
            let d2 = 2.0 * mu * a / (gap * gap * gap);
            g[2 * k] = dq;
            g[2 * k + 1] = dq + d;
            // u and v share the queue term; 2x its curvature majorizes the pair.
            h[2 * k] = 2.0 * d2;
            h[2 * k + 1] = 2.0 * d2;
        }
        let i = x.len() - 1;
        let gap = self.core_rate - x[i] * a;
        g[i] = self.core_rate / (gap * gap) + self.weight;
        h[i] = 2.0 * self.core_rate * a / (gap * gap * gap);
        for v in &mut h {
            *v = v.max(1e-12);
        }
        (g, h)
    }

    fn solve(
        &self,
        service: usize,
        config: &ReferenceSolverConfig,
    ) -> Result<(Vec<f64>, usize), OracleError> {
        let m = self.hi.len();
        let unit = vec![1.0; m];
        let start = vec![1.0 / m as f64; m];
        let mut x = project_capped_simplex(&start, &unit, &self.lo, &self.hi, 1.0);
        let mut fx = self.cost(&x);
        let mut residual = f64::INFINITY;
        for iter in 0..config.max_iters {
            let (g, h) = self.gradient_and_curvature(&x);
            let newton: Vec<f64> = x
                .iter()
                .zip(&g)
                .zip(&h)
                .map(|((xi, gi), hi)| xi - gi / hi)
                .collect();
            let full = project_capped_simplex(&newton, &h, &self.lo, &self.hi, 1.0);
            residual = full
                .iter()
                .zip(&x)
                .zip(&h)
                .map(|((p, xi), hi)| (hi * (xi - p)).abs())
                .fold(0.0, f64::max);
            if residual < config.tolerance {
                return Ok((x, iter));
            }
            let mut t = config.step_size;
            loop {
                let trial_point: Vec<f64> = x
                    .iter()
                    .zip(&g)
                    .zip(&h)
                    .map(|((xi, gi), hi)| xi - t * gi / hi)
                    .collect();
                let trial = project_capped_simplex(&trial_point, &h, &self.lo, &self.hi, 1.0);
                let decrease: f64 = g
                    .iter()
                    .zip(trial.iter().zip(&x))
                    .map(|(gi, (a, b))| gi * (a - b))
                    .sum();
                let ft = self.cost(&trial);
                if ft.is_finite() && ft <= fx + 1e-4 * decrease {
                    x = trial;
                    fx = ft;
                    break;
                }
                t *= 0.5;
                if t < 1e-20 {
                    // No descent available at machine precision.
                    return Ok((x, iter));
                }
            }
        }
        Err(OracleError::NotConverged {
            service,
            iterations: config.max_iters,
            residual,
        })
    }
}

/// Solves the scheduling subproblem by scaled projected gradient.
pub fn solve_p2_reference(
    scenario: &Scenario,
    caching: &CachingPolicy,
    config: &ReferenceSolverConfig,
) -> Result<SolveReport, OracleError> {
    reference_schedule(scenario, caching, config, false)
}

/// Same as [`solve_p2_reference`] with every node restricted to its own arrivals.
pub fn solve_p2_reference_local(
    scenario: &Scenario,
    caching: &CachingPolicy,
    config: &ReferenceSolverConfig,
) -> Result<SolveReport, OracleError> {
    reference_schedule(scenario, caching, config, true)
}

fn reference_schedule(
    scenario: &Scenario,
    caching: &CachingPolicy,
    config: &ReferenceSolverConfig,
    local_only: bool,
) -> Result<SolveReport, OracleError> {
    let mut schedule = SchedulingPolicy::zeros(scenario.n_nodes(), scenario.n_services());
    let mut infeasible = Vec::new();
    let mut iterations = 0;
    let mut lifted = Vec::new();
    for s in 0..scenario.n_services() {
        if scenario.total_arrival(s) <= 0.0 {
            continue;
        }
        let problem = LiftedService::new(scenario, caching, s, local_only);
        if problem.hi.iter().sum::<f64>() < 1.0 {
            infeasible.push(s);
        } else {
            lifted.push((s, problem));
        }
    }
    if !infeasible.is_empty() {
        return Err(OracleError::Infeasible {
            services: infeasible,
        });
    }
    for (s, problem) in lifted {
        let (x, iters) = problem.solve(s, config)?;
        iterations += iters;
        for (k, &(n, _, _)) in problem.edges.iter().enumerate() {
            schedule.set_edge(n, s, x[2 * k] + x[2 * k + 1]);
        }
        schedule.set_cloud(s, *x.last().unwrap());
    }
    let diagnostics = SolveDiagnostics {
        services: vec![None; scenario.n_services()],
        iterations,
    };
    Ok(SolveReport::assemble(
        scenario,
        caching.clone(),
        schedule,
        diagnostics,
    )?)
}

/// Storage-feasible decisions of one node, lexicographically ordered.
fn node_decisions(scenario: &Scenario, n: usize) -> Vec<Vec<bool>> {
    let k = scenario.n_services();
    let mut out = Vec::new();
    let mut d = vec![false; k];
    loop {
        if decision_storage(scenario, &d) <= scenario.nodes[n].storage_gb {
            out.push(d.clone());
        }
        // Binary increment with the last service as least significant.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if d[i] {
                d[i] = false;
            } else {
                d[i] = true;
                break;
            }
        }
    }
}

/// Number of storage-feasible caching policies.
pub fn search_space_size(scenario: &Scenario) -> u128 {
    (0..scenario.n_nodes())
        .map(|n| node_decisions(scenario, n).len() as u128)
        .product()
}

/// Every storage-feasible caching policy in lexicographic order.
pub fn enumerate_policies(scenario: &Scenario) -> Result<Vec<CachingPolicy>, OracleError> {
    let size = search_space_size(scenario);
    if size > MAX_SEARCH_SPACE {
        return Err(OracleError::SearchSpaceTooLarge {
            size,
            limit: MAX_SEARCH_SPACE,
        });
    }
    let per_node: Vec<_> = (0..scenario.n_nodes())
        .map(|n| node_decisions(scenario, n))
        .collect();
    let mut idx = vec![0usize; per_node.len()];
    let mut out = Vec::with_capacity(size as usize);
    loop {
        let rows = idx
            .iter()
            .zip(&per_node)
            .map(|(&i, d)| d[i].clone())
            .collect();
        out.push(CachingPolicy::from_rows(rows));
        let mut n = per_node.len();
        loop {
            if n == 0 {
                return Ok(out);
            }
            n -= 1;
            idx[n] += 1;
            if idx[n] < per_node[n].len() {
                break;
            }
            idx[n] = 0;
        }
    }
}

/// Scheduling objective of every storage-feasible policy (`None` when the
/// policy cannot be scheduled).
pub fn policy_objectives(
    scenario: &Scenario,
) -> Result<Vec<(CachingPolicy, Option<f64>)>, OracleError> {
    Ok(enumerate_policies(scenario)?
        .into_iter()
        .map(|c| {
            let y = solve_p2(scenario, &c).ok().map(|r| r.objective);
            (c, y)
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ExhaustiveResult {
    pub caching: CachingPolicy,
    pub report: SolveReport,
    pub candidates: usize,
    pub feasible: usize,
}

/// Global optimum over all caching policies; ties go to the
/// lexicographically smallest policy.
pub fn exhaustive_caching_search(scenario: &Scenario) -> Result<ExhaustiveResult, OracleError> {
    let all = policy_objectives(scenario)?;
    let candidates = all.len();
    let feasible = all.iter().filter(|(_, y)| y.is_some()).count();
    let best = all
        .into_iter()
        .filter_map(|(c, y)| y.map(|y| (c, y)))
        .fold(
            None,
            |acc: Option<(CachingPolicy, f64)>, (c, y)| match acc {
                Some((bc, by)) if by <= y => Some((bc, by)),
                _ => Some((c, y)),
            },
        )
        .ok_or(OracleError::NoFeasiblePolicy)?;
    let report = solve_p2(scenario, &best.0).map_err(|_| OracleError::NoFeasiblePolicy)?;
    Ok(ExhaustiveResult {
        caching: best.0,
        report,
        candidates,
        feasible,
    })
}

pub type Distribution = BTreeMap<CachingPolicy, f64>;

/// Visit frequencies of the raw caching chain after a burn-in of `steps / 10`.
pub fn empirical_stationary_distribution(
    scenario: &Scenario,
    omega: f64,
    steps: usize,
    seed: u64,
) -> Distribution {
    let mut chain = IceChain::new(scenario, omega, seed, WaterfillConfig::default());
    for _ in 0..steps / 10 {
        chain.step();
    }
    let mut counts: BTreeMap<CachingPolicy, usize> = BTreeMap::new();
    for _ in 0..steps {
        chain.step();
        *counts.entry(chain.state().clone()).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(c, k)| (c, k as f64 / steps as f64))
        .collect()
}

/// `exp(-y / omega)`-weighted distribution over the schedulable policies.
pub fn boltzmann_distribution(
    scenario: &Scenario,
    omega: f64,
) -> Result<Distribution, OracleError> {
    let feasible: Vec<(CachingPolicy, f64)> = policy_objectives(scenario)?
        .into_iter()
        .filter_map(|(c, y)| y.map(|y| (c, y)))
        .collect();
    let y_min = feasible
        .iter()
        .map(|(_, y)| *y)
        .fold(f64::INFINITY, f64::min);
    if !y_min.is_finite() {
        return Err(OracleError::NoFeasiblePolicy);
    }
    let weights: Vec<f64> = feasible
        .iter()
        .map(|(_, y)| (-(y - y_min) / omega).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    Ok(feasible
        .into_iter()
        .zip(weights)
        .map(|((c, _), w)| (c, w / z))
        .collect())
}

/// Mean objective under the `exp(-y / omega)` distribution.
pub fn boltzmann_mean_objective(scenario: &Scenario, omega: f64) -> Result<f64, OracleError> {
    let p = boltzmann_distribution(scenario, omega)?;
    let y: BTreeMap<CachingPolicy, Option<f64>> =
        policy_objectives(scenario)?.into_iter().collect();
    Ok(p.iter()
        .map(|(c, w)| w * y[c].expect("distribution covers schedulable policies"))
        .sum())
}

/// Schedulable policies that no single-node change of caching decision
/// improves. A chain at very low temperature cannot leave any of them.
pub fn single_node_local_minima(
    scenario: &Scenario,
) -> Result<Vec<(CachingPolicy, f64)>, OracleError> {
    let all: BTreeMap<CachingPolicy, Option<f64>> =
        policy_objectives(scenario)?.into_iter().collect();
    let per_node: Vec<_> = (0..scenario.n_nodes())
        .map(|n| node_decisions(scenario, n))
        .collect();
    let mut out = Vec::new();
    for (c, y) in &all {
        let Some(y) = *y else { continue };
        let improvable = per_node.iter().enumerate().any(|(n, decisions)| {
            decisions.iter().any(|d| {
                let mut other = c.clone();
                other.set_row(n, d);
                matches!(all.get(&other), Some(Some(y2)) if *y2 < y)
            })
        });
        if !improvable {
            out.push((c.clone(), y));
        }
    }
    Ok(out)
}

pub fn total_variation(p: &Distribution, q: &Distribution) -> f64 {
    let mut keys: Vec<&CachingPolicy> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvexityReport {
    pub chords: usize,
    /// Chords whose midpoint lies above the chord by more than the tolerance:
    /// `(f(mid), (f1 + f2) / 2)`.
    pub violations: Vec<(f64, f64)>,
    /// Largest `f(mid) - (f1 + f2) / 2` observed (negative when strictly convex).
    pub max_excess: f64,
    pub hessian_checks: usize,
    /// Largest relative gap between the analytic and finite-difference
    /// second derivative of a queue term.
    pub max_hessian_gap: f64,
    /// Sampled points rejected by the feasibility pre-filter.
    pub rejected_samples: usize,
}

impl ConvexityReport {
    pub fn passed(&self, hessian_tol: f64) -> bool {
        self.violations.is_empty() && self.max_hessian_gap <= hessian_tol
    }
}

pub const MIDPOINT_TOL: f64 = 1e-9;

/// Analytic second derivative of `lambda / (mu - lambda A)`.
pub fn queue_term_curvature(mu: f64, total: f64, share: f64) -> f64 {
    2.0 * mu * total / (mu - total * share).powi(3)
}

/// Central second difference of `lambda / (mu - lambda A)` at `share`.
pub fn queue_term_curvature_fd(mu: f64, total: f64, share: f64) -> f64 {
    let term = |x: f64| x / (mu - x * total);
    let h = 1e-3 * (mu - total * share) / total;
    (term(share + h) - 2.0 * term(share) + term(share - h)) / (h * h)
}

fn random_schedule(
    scenario: &Scenario,
    caching: &CachingPolicy,
    rng: &mut ChaCha8Rng,
) -> SchedulingPolicy {
    let allocation = compute_allocation(scenario, caching);
    let bounds = scheduling_upper_bounds(scenario, &allocation);
    let mut schedule = SchedulingPolicy::zeros(scenario.n_nodes(), scenario.n_services());
    for s in 0..scenario.n_services() {
        let total = scenario.total_arrival(s);
        if total <= 0.0 {
            continue;
        }
        let nodes: Vec<usize> = (0..scenario.n_nodes())
            .filter(|&n| caching.is_cached(n, s))
            .collect();
        let mut hi: Vec<f64> = nodes.iter().map(|&n| bounds.edge[n][s] / total).collect();
        hi.push(bounds.cloud[s] / total);
        let z: Vec<f64> = hi
            .iter()
            .map(|&h| rng.gen::<f64>() * 1.5 * h.min(1.0))
            .collect();
        let unit = vec![1.0; hi.len()];
        let lo = vec![0.0; hi.len()];
        let x = project_capped_simplex(&z, &unit, &lo, &hi, 1.0);
        for (k, &n) in nodes.iter().enumerate() {
            schedule.set_edge(n, s, x[k]);
        }
        schedule.set_cloud(s, x[nodes.len()]);
    }
    schedule
}

fn midpoint(a: &SchedulingPolicy, b: &SchedulingPolicy) -> SchedulingPolicy {
    SchedulingPolicy::from_rows(
        a.rows()
            .iter()
            .zip(b.rows())
            .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| 0.5 * (x + y)).collect())
            .collect(),
    )
}

/// Midpoint-convexity test of the scheduling objective on random feasible
/// chords, plus an analytic-vs-numeric check of the queue-term curvature at
/// interior points. Requires every service to be schedulable under `caching`.
pub fn convexity_probe(
    scenario: &Scenario,
    caching: &CachingPolicy,
    trials: usize,
    seed: u64,
) -> ConvexityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConvexityReport {
        max_excess: f64::NEG_INFINITY,
        ..ConvexityReport::default()
    };
    let allocation = compute_allocation(scenario, caching);
    let feasible = |p: &SchedulingPolicy| {
        crate::model::check_schedule_feasible(scenario, caching, p).is_feasible()
    };
    let mut attempts = 0;
    while report.chords < trials && attempts < trials * 20 {
        attempts += 1;
        let a = random_schedule(scenario, caching, &mut rng);
        let b = random_schedule(scenario, caching, &mut rng);
        if !feasible(&a) || !feasible(&b) {
            report.rejected_samples += 1;
            continue;
        }
        let (fa, fb) = match (
            objective(scenario, caching, &a),
            objective(scenario, caching, &b),
        ) {
            (Ok(fa), Ok(fb)) => (fa, fb),
            _ => {
                report.rejected_samples += 1;
                continue;
            }
        };
        let m = midpoint(&a, &b);
        let Ok(fm) = objective(scenario, caching, &m) else {
            report.rejected_samples += 1;
            continue;
        };
        report.chords += 1;
        let avg = 0.5 * (fa + fb);
        let excess = fm - avg;
        report.max_excess = report.max_excess.max(excess);
        if excess > MIDPOINT_TOL * avg.abs().max(1.0) {
            report.violations.push((fm, avg));
        }
        for s in 0..scenario.n_services() {
            let total = scenario.total_arrival(s);
            if total <= 0.0 {
                continue;
            }
            for n in 0..scenario.n_nodes() {
                let mu = allocation.mu(n, s);
                let share = a.edge(n, s);
                if mu <= 0.0 || share <= 0.0 || share * total >= mu {
                    continue;
                }
                let exact = queue_term_curvature(mu, total, share);
                let numeric = queue_term_curvature_fd(mu, total, share);
                report.hessian_checks += 1;
                report.max_hessian_gap = report
                    .max_hessian_gap
                    .max(((numeric - exact) / exact).abs());
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EdgeNode, Service, Topology};

    fn svc(weight: f64, bandwidth: f64) -> Service {
        Service {
            storage_gb: 30.0,
            compute_per_task: 0.25,
            data_ratio: 0.5,
            core_bandwidth: bandwidth,
            outsource_weight: weight,
        }
    }

    fn three_nodes() -> Scenario {
        let nodes = (0..3)
            .map(|i| EdgeNode {
                storage_gb: 40.0 + 10.0 * i as f64,
                compute_rate: 5.0 + 2.0 * i as f64,
                lan_delay: 0.02,
            })
            .collect();
        Scenario::new(
            nodes,
            vec![svc(0.01, 4.0), svc(0.02, 3.0)],
            vec![vec![6.0, 2.0], vec![3.0, 1.0], vec![1.0, 4.0]],
            Topology::from_edges(3, &[(0, 1), (1, 2)]).unwrap(),
            1e-3,
        )
        .unwrap()
    }

    #[test]
    fn projection_respects_sum_and_box() {
        let x = project_capped_simplex(
            &[0.9, 0.9, -0.5],
            &[1.0, 2.0, 1.0],
            &[0.0; 3],
            &[0.4, 0.7, 1.0],
            1.0,
        );
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(x[0] <= 0.4 && x[1] <= 0.7 && x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn reference_all_cloud_matches_calculus() {
        // One caching node with a single tube plus cloud would need
        // calculus; with no caching the share is forced to 1.
        let sc = three_nodes();
        let r = solve_p2_reference(
            &sc,
            &CachingPolicy::empty(3, 2),
            &ReferenceSolverConfig::default(),
        )
        .unwrap();
        for s in 0..2 {
            let a = sc.total_arrival(s);
            let m = sc.services[s].core_service_rate();
            assert!((r.schedule.cloud(s) - 1.0).abs() < 1e-12);
            let expected = 1.0 / (m - a) + sc.services[s].outsource_weight * a;
            assert!(
                (r.response_times[s] + r.outsourcing_rates[s] * sc.services[s].outsource_weight
                    - expected)
                    .abs()
                    < 1e-8
            );
        }
    }

    #[test]
    fn reference_cloud_vs_single_node_closed_form() {
        // One node (mu = 20, holds all A = 4 arrivals) plus cloud (M = 40,
        // W = 0). With no LAN term the optimum equalizes the marginal costs
        // mu/(mu - x A)^2 = M/(M - (1 - x) A)^2, solved here by bisection.
        let sc = Scenario::new(
            vec![EdgeNode {
                storage_gb: 100.0,
                compute_rate: 5.0,
                lan_delay: 0.0,
            }],
            vec![Service {
                storage_gb: 1.0,
                compute_per_task: 0.25,
                data_ratio: 0.4,
                core_bandwidth: 4.0,
                outsource_weight: 0.0,
            }],
            vec![vec![4.0]],
            Topology::isolated(1),
            1e-3,
        )
        .unwrap();
        let (mu, m, a) = (20.0f64, 40.0f64, 4.0f64);
        let diff = |x: f64| mu / (mu - x * a).powi(2) - m / (m - (1.0 - x) * a).powi(2);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if diff(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let caching = CachingPolicy::from_rows(vec![vec![true]]);
        let r = solve_p2_reference(&sc, &caching, &ReferenceSolverConfig::default()).unwrap();
        assert!(
            (r.schedule.edge(0, 0) - lo).abs() < 1e-8,
            "{} vs {}",
            r.schedule.edge(0, 0),
            lo
        );
    }

    #[test]
    fn reference_agrees_with_waterfill() {
        let sc = three_nodes();
        for policy in enumerate_policies(&sc).unwrap() {
            let wf = solve_p2(&sc, &policy);
            let rf = solve_p2_reference(&sc, &policy, &ReferenceSolverConfig::default());
            match (wf, rf) {
                (Ok(wf), Ok(rf)) => {
                    let rel = (wf.objective - rf.objective).abs() / rf.objective;
                    assert!(
                        rel <= 1e-6,
                        "{policy}: {} vs {}",
                        wf.objective,
                        rf.objective
                    );
                }
                (Err(_), Err(OracleError::Infeasible { .. })) => {}
                (a, b) => panic!("{policy}: solvers disagree on feasibility: {a:?} / {b:?}"),
            }
        }
    }

    #[test]
    fn enumeration_counts() {
        let sc = three_nodes();
        // Storage 40/50/60 with p = 30 each: nodes 0 and 1 fit one service
        // (3 decisions), node 2 fits both (4).
        assert_eq!(search_space_size(&sc), 3 * 3 * 4);
        let all = enumerate_policies(&sc).unwrap();
        assert_eq!(all.len(), 36);
        assert!(all.windows(2).all(|w| w[0] < w[1]));

        let mut one = sc.clone();
        one.nodes.truncate(1);
        one.nodes[0].storage_gb = 100.0;
        one.arrivals.truncate(1);
        one.topology = Topology::isolated(1);
        assert_eq!(enumerate_policies(&one).unwrap().len(), 4);
    }

    #[test]
    fn exhaustive_is_minimum() {
        let sc = three_nodes();
        let best = exhaustive_caching_search(&sc).unwrap();
        for (_, y) in policy_objectives(&sc).unwrap() {
            if let Some(y) = y {
                assert!(best.report.objective <= y);
            }
        }
    }

    #[test]
    fn oversized_search_space_is_refused() {
        let mut sc = three_nodes();
        let k = 8;
        sc.services = (0..k).map(|_| svc(0.01, 400.0)).collect();
        sc.nodes = (0..8)
            .map(|_| EdgeNode {
                storage_gb: 1e4,
                compute_rate: 10.0,
                lan_delay: 0.02,
            })
            .collect();
        sc.arrivals = vec![vec![1.0; k]; 8];
        sc.topology = Topology::isolated(8);
        assert!(matches!(
            enumerate_policies(&sc),
            Err(OracleError::SearchSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn local_minima_include_the_optimum() {
        let sc = three_nodes();
        let minima = single_node_local_minima(&sc).unwrap();
        let best = exhaustive_caching_search(&sc).unwrap();
        assert!(minima.iter().any(|(c, _)| *c == best.caching));
        for (c, y) in &minima {
            assert!(*y >= best.report.objective, "{c}");
        }
    }

    #[test]
    fn boltzmann_mean_rises_with_temperature() {
        let sc = three_nodes();
        let means: Vec<f64> = [1e-6, 1e-4, 1e-3, 1e-2, 1.0]
            .iter()
            .map(|&w| boltzmann_mean_objective(&sc, w).unwrap())
            .collect();
        assert!(means.windows(2).all(|w| w[0] <= w[1] + 1e-15), "{means:?}");
        assert!((means[0] - exhaustive_caching_search(&sc).unwrap().report.objective).abs() < 1e-9);
    }

    #[test]
    fn boltzmann_flattens_at_high_temperature() {
        let sc = three_nodes();
        let ys: Vec<f64> = policy_objectives(&sc)
            .unwrap()
            .into_iter()
            .filter_map(|(_, y)| y)
            .collect();
        let range = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let p = boltzmann_distribution(&sc, 1e3 * range).unwrap();
        let uniform = 1.0 / p.len() as f64;
        assert!(p
            .values()
            .all(|&v| (v - uniform).abs() < 1e-3 * uniform + 1e-6));
    }

    #[test]
    fn curvature_matches_finite_difference() {
        for (mu, a, x) in [(10.0, 4.0, 0.5), (50.0, 30.0, 0.9), (3.0, 2.0, 0.1)] {
            let exact = queue_term_curvature(mu, a, x);
            let fd = queue_term_curvature_fd(mu, a, x);
            assert!(((fd - exact) / exact).abs() < 1e-4);
        }
    }

    #[test]
    fn convexity_probe_finds_no_violations() {
        let sc = three_nodes();
        let caching =
            CachingPolicy::from_rows(vec![vec![true, false], vec![false, true], vec![true, true]]);
        let report = convexity_probe(&sc, &caching, 200, 5);
        assert_eq!(report.chords, 200);
        assert!(report.passed(1e-4), "{report:?}");
    }
}
