//! System model: domain types plus the closed-form delay, objective and
//! feasibility formulas for cooperative edge caching.
//!
//! Conventions used throughout the crate:
//!
//! * `n` indexes edge nodes, `s` indexes services.
//! * Arrival rates and service rates are in tasks per second, delays in
//!   seconds, compute in giga-cycles (per task or per second).
//! * A scheduling policy stores one share per node plus a trailing cloud
//!   row, so `shares[n][s]` is the fraction of service `s` run at node `n`
//!   and `shares[N][s]` the fraction outsourced to the cloud.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default stability margin subtracted from every service rate bound.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Default LAN hop delay in seconds.
pub const DEFAULT_LAN_DELAY: f64 = 0.02;

/// Tolerance on `sum(shares) == 1` used by the schedule feasibility check.
pub const SHARE_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unstable edge queue: offered load {load} >= service rate {service_rate}")]
    UnstableQueue { load: f64, service_rate: f64 },
    #[error("core network overload: offered load {load} >= service rate {service_rate}")]
    CoreOverload { load: f64, service_rate: f64 },
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl ModelError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Service {
    /// Storage needed to cache the service (GB).
    pub storage_gb: f64,
    /// Mean compute demand of one task (giga-cycles).
    #[serde(rename = "compute_gcycles_per_task")]
    pub compute_per_task: f64,
    /// Input data shipped per unit of compute when outsourcing (Mb per giga-cycle).
    #[serde(rename = "data_mb_per_gcycle")]
    pub data_ratio: f64,
    /// Core network bandwidth reserved for the service (Mbps).
    #[serde(rename = "core_bandwidth_mbps")]
    pub core_bandwidth: f64,
    /// Penalty weight on outsourced traffic.
    pub outsource_weight: f64,
}

impl Service {
    /// Rate (tasks/s) at which the core network can ship this service's tasks
    /// to the cloud: `B / (t * beta)`.
    pub fn core_service_rate(&self) -> f64 {
        self.core_bandwidth / (self.data_ratio * self.compute_per_task)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeNode {
    pub storage_gb: f64,
    /// Compute capacity (giga-cycles per second).
    #[serde(rename = "compute_gcycles_per_s")]
    pub compute_rate: f64,
    /// Delay of one LAN hop into this node (s).
    #[serde(rename = "lan_delay_s")]
    pub lan_delay: f64,
}

/// Undirected neighbour sets between edge nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology from neighbour lists, sorting and deduplicating them.
    /// Fails on self loops, out-of-range indices and asymmetric links.
    pub fn from_neighbors(mut neighbors: Vec<Vec<usize>>) -> Result<Self, ModelError> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if list.contains(&i) {
                return Err(ModelError::invalid(
                    "topology",
                    format!("node {i} lists itself as a neighbour"),
                ));
            }
            if let Some(&bad) = list.iter().find(|&&j| j >= n) {
                return Err(ModelError::invalid(
                    "topology",
                    format!("node {i} has out-of-range neighbour {bad}"),
                ));
            }
        }
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if neighbors[j].binary_search(&i).is_err() {
                    return Err(ModelError::invalid(
                        "topology",
                        format!("link {i}-{j} is not symmetric"),
                    ));
                }
            }
        }
        Ok(Topology { neighbors })
    }

    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, ModelError> {
        let mut neighbors = vec![Vec::new(); n_nodes];
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(ModelError::invalid(
                    "topology",
                    format!("edge {a}-{b} out of range"),
                ));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        Self::from_neighbors(neighbors)
    }

    pub fn isolated(n_nodes: usize) -> Self {
        Topology {
            neighbors: vec![Vec::new(); n_nodes],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, n: usize) -> &[usize] {
        &self.neighbors[n]
    }

    /// Undirected edges with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, list) in self.neighbors.iter().enumerate() {
            out.extend(list.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub nodes: Vec<EdgeNode>,
    pub services: Vec<Service>,
    /// `arrivals[n][s]`: Poisson arrival rate of service `s` tasks at node `n`.
    pub arrivals: Vec<Vec<f64>>,
    pub topology: Topology,
    pub epsilon: f64,
}

impl Scenario {
    pub fn new(
        nodes: Vec<EdgeNode>,
        services: Vec<Service>,
        arrivals: Vec<Vec<f64>>,
        topology: Topology,
        epsilon: f64,
    ) -> Result<Self, ModelError> {
        let scenario = Scenario {
            nodes,
            services,
            arrivals,
            topology,
            epsilon,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_services(&self) -> usize {
        self.services.len()
    }

    /// Aggregate arrival rate `A_s` of a service over all nodes.
    pub fn total_arrival(&self, s: usize) -> f64 {
        self.arrivals.iter().map(|row| row[s]).sum()
    }

    /// Arrivals of service `s` that node `n` may admit: its own plus its
    /// direct neighbours'.
    pub fn reachable_arrival(&self, n: usize, s: usize) -> f64 {
        self.arrivals[n][s]
            + self
                .topology
                .neighbors(n)
                .iter()
                .map(|&i| self.arrivals[i][s])
                .sum::<f64>()
    }

    /// Copy of the scenario with every LAN link removed.
    pub fn without_cooperation(&self) -> Scenario {
        Scenario {
            topology: Topology::isolated(self.n_nodes()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !positive(self.epsilon) {
            return Err(ModelError::invalid("epsilon", "must be > 0"));
        }
        for (n, node) in self.nodes.iter().enumerate() {
            if !positive(node.storage_gb) {
                return Err(ModelError::invalid(
                    format!("nodes[{n}].storage_gb"),
                    "must be > 0",
                ));
            }
            if !positive(node.compute_rate) {
                return Err(ModelError::invalid(
                    format!("nodes[{n}].compute_gcycles_per_s"),
                    "must be > 0",
                ));
            }
            if !nonneg(node.lan_delay) {
                return Err(ModelError::invalid(
                    format!("nodes[{n}].lan_delay_s"),
                    "must be >= 0",
                ));
            }
        }
        for (s, svc) in self.services.iter().enumerate() {
            let checks = [
                ("storage_gb", svc.storage_gb),
                ("compute_gcycles_per_task", svc.compute_per_task),
                ("data_mb_per_gcycle", svc.data_ratio),
                ("core_bandwidth_mbps", svc.core_bandwidth),
            ];
            for (name, v) in checks {
                if !positive(v) {
                    return Err(ModelError::invalid(
                        format!("services[{s}].{name}"),
                        "must be > 0",
                    ));
                }
            }
            if !nonneg(svc.outsource_weight) {
                return Err(ModelError::invalid(
                    format!("services[{s}].outsource_weight"),
                    "must be >= 0",
                ));
            }
        }
        if self.arrivals.len() != self.n_nodes() {
            return Err(ModelError::invalid(
                "arrivals",
                format!(
                    "expected {} rows, found {}",
                    self.n_nodes(),
                    self.arrivals.len()
                ),
            ));
        }
        for (n, row) in self.arrivals.iter().enumerate() {
            if row.len() != self.n_services() {
                return Err(ModelError::invalid(
                    format!("arrivals[{n}]"),
                    format!(
                        "expected {} entries, found {}",
                        self.n_services(),
                        row.len()
                    ),
                ));
            }
            if let Some(s) = row.iter().position(|&a| !nonneg(a)) {
                return Err(ModelError::invalid(
                    format!("arrivals[{n}][{s}]"),
                    "must be >= 0",
                ));
            }
        }
        if self.topology.n_nodes() != self.n_nodes() {
            return Err(ModelError::invalid(
                "topology",
                format!(
                    "covers {} nodes, scenario has {}",
                    self.topology.n_nodes(),
                    self.n_nodes()
                ),
            ));
        }
        Ok(())
    }
}

/// Binary matrix of which node caches which service.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CachingPolicy {
    cached: Vec<Vec<bool>>,
}

impl CachingPolicy {
    pub fn empty(n_nodes: usize, n_services: usize) -> Self {
        CachingPolicy {
            cached: vec![vec![false; n_services]; n_nodes],
        }
    }

    pub fn from_rows(cached: Vec<Vec<bool>>) -> Self {
        CachingPolicy { cached }
    }

    pub fn is_cached(&self, n: usize, s: usize) -> bool {
        self.cached[n][s]
    }

    pub fn set(&mut self, n: usize, s: usize, value: bool) {
        self.cached[n][s] = value;
    }

    pub fn row(&self, n: usize) -> &[bool] {
        &self.cached[n]
    }

    pub fn set_row(&mut self, n: usize, row: &[bool]) {
        self.cached[n].copy_from_slice(row);
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.cached
    }

    pub fn n_nodes(&self) -> usize {
        self.cached.len()
    }

    pub fn cached_count(&self, n: usize) -> usize {
        self.cached[n].iter().filter(|&&c| c).count()
    }

    /// Compact `0`/`1` rendering, nodes separated by `|`.
    pub fn to_bit_string(&self) -> String {
        self.cached
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&c| if c { '1' } else { '0' })
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join("|")
    }
}

impl fmt::Display for CachingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

/// Per-service workload shares over the edge nodes and the cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingPolicy {
    /// `(N + 1) x S`; the last row is the cloud.
    shares: Vec<Vec<f64>>,
}

impl SchedulingPolicy {
    pub fn zeros(n_nodes: usize, n_services: usize) -> Self {
        SchedulingPolicy {
            shares: vec![vec![0.0; n_services]; n_nodes + 1],
        }
    }

    /// Everything outsourced: cloud share 1 for every service.
    pub fn all_cloud(n_nodes: usize, n_services: usize) -> Self {
        let mut p = Self::zeros(n_nodes, n_services);
        p.shares[n_nodes].iter_mut().for_each(|x| *x = 1.0);
        p
    }

    pub fn from_rows(shares: Vec<Vec<f64>>) -> Self {
        SchedulingPolicy { shares }
    }

    pub fn n_nodes(&self) -> usize {
        self.shares.len() - 1
    }

    pub fn edge(&self, n: usize, s: usize) -> f64 {
        self.shares[n][s]
    }

    pub fn cloud(&self, s: usize) -> f64 {
        self.shares[self.n_nodes()][s]
    }

    pub fn set_edge(&mut self, n: usize, s: usize, v: f64) {
        self.shares[n][s] = v;
    }

    pub fn set_cloud(&mut self, s: usize, v: f64) {
        let o = self.n_nodes();
        self.shares[o][s] = v;
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.shares
    }

    /// Sum of the shares of service `s` over all nodes and the cloud.
    pub fn column_sum(&self, s: usize) -> f64 {
        self.shares.iter().map(|row| row[s]).sum()
    }
}

/// How a node splits its compute capacity among the services it caches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum AllocationRule {
    /// `r_ns = R_n / |cached services at n|`.
    #[default]
    EqualSplit,
}

impl AllocationRule {
    pub fn allocate(self, scenario: &Scenario, caching: &CachingPolicy) -> AllocationMatrix {
        let n_services = scenario.n_services();
        let mut rate = vec![vec![0.0; n_services]; scenario.n_nodes()];
        match self {
            AllocationRule::EqualSplit => {
                for (n, node) in scenario.nodes.iter().enumerate() {
                    let k = caching.cached_count(n);
                    if k == 0 {
                        continue;
                    }
                    let share = node.compute_rate / k as f64;
                    for (s, r) in rate[n].iter_mut().enumerate() {
                        if caching.is_cached(n, s) {
                            *r = share;
                        }
                    }
                }
            }
        }
        let service_rate = rate
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&scenario.services)
                    .map(|(&r, svc)| r / svc.compute_per_task)
                    .collect()
            })
            .collect();
        AllocationMatrix { rate, service_rate }
    }
}

/// Compute capacity assigned to each cached service and the resulting
/// M/M/1 service rates.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrix {
    /// `r_ns` in giga-cycles per second.
    pub rate: Vec<Vec<f64>>,
    /// `mu_ns = r_ns / beta_s` in tasks per second.
    pub service_rate: Vec<Vec<f64>>,
}

impl AllocationMatrix {
    pub fn mu(&self, n: usize, s: usize) -> f64 {
        self.service_rate[n][s]
    }
}

/// Equal-split compute allocation (the default [`AllocationRule`]).
pub fn compute_allocation(scenario: &Scenario, caching: &CachingPolicy) -> AllocationMatrix {
    AllocationRule::EqualSplit.allocate(scenario, caching)
}

/// Mean M/M/1 sojourn time at an edge node.
pub fn edge_queue_delay(
    service_rate: f64,
    share: f64,
    total_arrival: f64,
) -> Result<f64, ModelError> {
    let load = share * total_arrival;
    if load >= service_rate {
        return Err(ModelError::UnstableQueue { load, service_rate });
    }
    Ok(1.0 / (service_rate - load))
}

/// Mean transmission delay through the core network to the cloud.
pub fn cloud_delay(
    service: &Service,
    cloud_share: f64,
    total_arrival: f64,
) -> Result<f64, ModelError> {
    let service_rate = service.core_service_rate();
    let load = cloud_share * total_arrival;
    if load >= service_rate {
        return Err(ModelError::CoreOverload { load, service_rate });
    }
    Ok(1.0 / (service_rate - load))
}

/// Average response time `D_s` of one service: queueing at the edge nodes,
/// LAN transfer of tasks pulled in from neighbours, and the core network.
///
/// Nodes without compute allocated to `s` are skipped. A service with no
/// arrivals has response time 0.
pub fn service_response_time(
    scenario: &Scenario,
    s: usize,
    schedule: &SchedulingPolicy,
    allocation: &AllocationMatrix,
) -> Result<f64, ModelError> {
    let total = scenario.total_arrival(s);
    if total <= 0.0 {
        return Ok(0.0);
    }
    let mut d = 0.0;
    for n in 0..scenario.n_nodes() {
        if allocation.rate[n][s] <= 0.0 {
            continue;
        }
        let share = schedule.edge(n, s);
        d += share * edge_queue_delay(allocation.mu(n, s), share, total)?;
        let pulled = (share * total - scenario.arrivals[n][s]).max(0.0);
        d += pulled / total * scenario.nodes[n].lan_delay;
    }
    let cloud = schedule.cloud(s);
    d += cloud * cloud_delay(&scenario.services[s], cloud, total)?;
    Ok(d)
}

/// Outsourcing penalty `w_s * lambda_os * A_s`.
pub fn outsourcing_penalty(scenario: &Scenario, s: usize, schedule: &SchedulingPolicy) -> f64 {
    scenario.services[s].outsource_weight * schedule.cloud(s) * scenario.total_arrival(s)
}

/// Total cost `sum_s (D_s + w_s * lambda_os * A_s)` of a schedule under a
/// caching policy. Services without arrivals contribute nothing.
pub fn objective(
    scenario: &Scenario,
    caching: &CachingPolicy,
    schedule: &SchedulingPolicy,
) -> Result<f64, ModelError> {
    let allocation = compute_allocation(scenario, caching);
    objective_with_allocation(scenario, schedule, &allocation)
}

pub fn objective_with_allocation(
    scenario: &Scenario,
    schedule: &SchedulingPolicy,
    allocation: &AllocationMatrix,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for s in 0..scenario.n_services() {
        if scenario.total_arrival(s) <= 0.0 {
            continue;
        }
        total += service_response_time(scenario, s, schedule, allocation)?;
        total += outsourcing_penalty(scenario, s, schedule);
    }
    Ok(total)
}

/// Upper bounds on scheduled load (tasks/s).
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingBounds {
    /// `pi_ns = min(reachable arrivals, mu_ns - eps)`, 0 where not cached.
    pub edge: Vec<Vec<f64>>,
    /// `pi_os = B_s / (t_s beta_s) - eps`.
    pub cloud: Vec<f64>,
}

pub fn scheduling_upper_bounds(
    scenario: &Scenario,
    allocation: &AllocationMatrix,
) -> SchedulingBounds {
    let eps = scenario.epsilon;
    let edge = (0..scenario.n_nodes())
        .map(|n| {
            (0..scenario.n_services())
                .map(|s| {
                    let mu = allocation.mu(n, s);
                    if mu <= 0.0 {
                        0.0
                    } else {
                        scenario.reachable_arrival(n, s).min(mu - eps).max(0.0)
                    }
                })
                .collect()
        })
        .collect();
    let cloud = scenario
        .services
        .iter()
        .map(|svc| (svc.core_service_rate() - eps).max(0.0))
        .collect();
    SchedulingBounds { edge, cloud }
}

/// A single constraint violation found by a feasibility check.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Storage {
        node: usize,
        used: f64,
        capacity: f64,
    },
    ShareSum {
        service: usize,
        sum: f64,
    },
    Negative {
        node: Option<usize>,
        service: usize,
        share: f64,
    },
    AboveBound {
        node: Option<usize>,
        service: usize,
        load: f64,
        bound: f64,
    },
    NotCached {
        node: usize,
        service: usize,
        share: f64,
    },
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

fn location(node: &Option<usize>) -> String {
    match node {
        Some(n) => format!("node {n}"),
        None => "cloud".to_string(),
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Storage {
                node,
                used,
                capacity,
            } => {
                write!(
                    f,
                    "node {node}: cached storage {used} GB exceeds capacity {capacity} GB"
                )
            }
            Violation::ShareSum { service, sum } => {
                write!(f, "service {service}: shares sum to {sum}, expected 1")
            }
            Violation::Negative {
                node,
                service,
                share,
            } => {
                write!(
                    f,
                    "service {service} at {}: negative share {share}",
                    location(node)
                )
            }
            Violation::AboveBound {
                node,
                service,
                load,
                bound,
            } => write!(
                f,
                "service {service} at {}: load {load} tasks/s exceeds bound {bound}",
                location(node)
            ),
            Violation::NotCached {
                node,
                service,
                share,
            } => write!(
                f,
                "service {service} at node {node}: share {share} scheduled without a cached copy"
            ),
            Violation::Shape { expected, found } => {
                write!(f, "matrix shape {found:?}, expected {expected:?}")
            }
        }
    }
}

/// Outcome of a feasibility check.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Feasibility {
    pub violations: Vec<Violation>,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_caching_feasible(scenario: &Scenario, caching: &CachingPolicy) -> Feasibility {
    let mut violations = Vec::new();
    let shape_ok = caching.n_nodes() == scenario.n_nodes()
        && caching
            .rows()
            .iter()
            .all(|r| r.len() == scenario.n_services());
    if !shape_ok {
        violations.push(Violation::Shape {
            expected: (scenario.n_nodes(), scenario.n_services()),
            found: (
                caching.n_nodes(),
                caching.rows().first().map_or(0, |r| r.len()),
            ),
        });
        return Feasibility { violations };
    }
    for (n, node) in scenario.nodes.iter().enumerate() {
        let used = decision_storage(scenario, caching.row(n));
        if used > node.storage_gb {
            violations.push(Violation::Storage {
                node: n,
                used,
                capacity: node.storage_gb,
            });
        }
    }
    Feasibility { violations }
}

/// Storage used by one node's caching decision.
pub fn decision_storage(scenario: &Scenario, decision: &[bool]) -> f64 {
    decision
        .iter()
        .zip(&scenario.services)
        .filter(|(&c, _)| c)
        .map(|(_, svc)| svc.storage_gb)
        .sum()
}

/// Checks every constraint of the scheduling subproblem: unit column sums,
/// nonnegativity, the per-node and cloud load bounds, and zero shares at
/// nodes that do not cache the service. Services without arrivals are only
/// checked for nonnegativity.
pub fn check_schedule_feasible(
    scenario: &Scenario,
    caching: &CachingPolicy,
    schedule: &SchedulingPolicy,
) -> Feasibility {
    let mut violations = Vec::new();
    let (n_nodes, n_services) = (scenario.n_nodes(), scenario.n_services());
    let shape_ok = schedule.rows().len() == n_nodes + 1
        && schedule.rows().iter().all(|r| r.len() == n_services)
        && caching.n_nodes() == n_nodes;
    if !shape_ok {
        violations.push(Violation::Shape {
            expected: (n_nodes + 1, n_services),
            found: (
                schedule.rows().len(),
                schedule.rows().first().map_or(0, |r| r.len()),
            ),
        });
        return Feasibility { violations };
    }
    let allocation = compute_allocation(scenario, caching);
    let bounds = scheduling_upper_bounds(scenario, &allocation);
    for s in 0..n_services {
        let total = scenario.total_arrival(s);
        for n in 0..=n_nodes {
            let share = schedule.rows()[n][s];
            let node = (n < n_nodes).then_some(n);
            if share.is_nan() || share < 0.0 {
                violations.push(Violation::Negative {
                    node,
                    service: s,
                    share,
                });
            }
        }
        if total <= 0.0 {
            continue;
        }
        let sum = schedule.column_sum(s);
        if (sum - 1.0).abs() > SHARE_SUM_TOL {
            violations.push(Violation::ShareSum { service: s, sum });
        }
        for n in 0..n_nodes {
            let share = schedule.edge(n, s);
            if share > 0.0 && !caching.is_cached(n, s) {
                violations.push(Violation::NotCached {
                    node: n,
                    service: s,
                    share,
                });
                continue;
            }
            let load = share * total;
            if load > bounds.edge[n][s] * (1.0 + 1e-12) + 1e-12 {
                violations.push(Violation::AboveBound {
                    node: Some(n),
                    service: s,
                    load,
                    bound: bounds.edge[n][s],
                });
            }
        }
        let load = schedule.cloud(s) * total;
        if load > bounds.cloud[s] * (1.0 + 1e-12) + 1e-12 {
            violations.push(Violation::AboveBound {
                node: None,
                service: s,
                load,
                bound: bounds.cloud[s],
            });
        }
    }
    Feasibility { violations }
}

/// Per-service diagnostics from the water-filling solver.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServiceDiagnostics {
    pub eta_star: f64,
    pub bisection_iterations: usize,
    pub doublings: u32,
    /// Width of the multiplier bracket before bisection started.
    pub initial_bracket_width: f64,
    /// Width when bisection stopped.
    pub final_bracket_width: f64,
    /// `|sum(shares) - 1|` right after bisection, before the simplex repair.
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveDiagnostics {
    /// One entry per service; `None` for services without arrivals or
    /// when the schedule came from a solver that does not report them.
    pub services: Vec<Option<ServiceDiagnostics>>,
    /// Outer-loop iterations (caching search steps or solver iterations).
    pub iterations: usize,
}

/// A caching policy together with its schedule and the derived metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub objective: f64,
    /// `D_s` per service (s).
    pub response_times: Vec<f64>,
    /// `lambda_os * A_s` per service (tasks/s).
    pub outsourcing_rates: Vec<f64>,
    pub schedule: SchedulingPolicy,
    pub caching: CachingPolicy,
    pub diagnostics: SolveDiagnostics,
}

impl SolveReport {
    /// Evaluates objective and per-service metrics for a schedule.
    pub fn assemble(
        scenario: &Scenario,
        caching: CachingPolicy,
        schedule: SchedulingPolicy,
        diagnostics: SolveDiagnostics,
    ) -> Result<Self, ModelError> {
        let allocation = compute_allocation(scenario, &caching);
        let mut response_times = Vec::with_capacity(scenario.n_services());
        let mut outsourcing_rates = Vec::with_capacity(scenario.n_services());
        for s in 0..scenario.n_services() {
            response_times.push(service_response_time(scenario, s, &schedule, &allocation)?);
            outsourcing_rates.push(schedule.cloud(s) * scenario.total_arrival(s));
        }
        let objective = objective_with_allocation(scenario, &schedule, &allocation)?;
        Ok(SolveReport {
            objective,
            response_times,
            outsourcing_rates,
            schedule,
            caching,
            diagnostics,
        })
    }

    pub fn total_response_time(&self) -> f64 {
        self.response_times.iter().sum()
    }

    pub fn outsourcing_traffic(&self) -> f64 {
        self.outsourcing_rates.iter().sum()
    }

    /// Recomputes the objective from the stored caching and schedule.
    pub fn recompute_objective(&self, scenario: &Scenario) -> Result<f64, ModelError> {
        objective(scenario, &self.caching, &self.schedule)
    }
}
