//! Water-filling solver for the workload scheduling subproblem.
//!
//! With the caching policy fixed, the scheduling problem separates per
//! service. For one service every caching node and the cloud is a "tube":
//! its first-order condition gives the share as a closed-form function of a
//! common Lagrange multiplier `eta < 0`. Each share is clamped to its box
//! `[0, pi / A_s]`, and `eta` is found by bisection on
//! `excess(eta) = sum(clamped shares) - 1`, which is nonincreasing in `eta`.

use thiserror::Error;

use crate::model::{
    compute_allocation, scheduling_upper_bounds, AllocationMatrix, CachingPolicy, ModelError,
    Scenario, SchedulingBounds, SchedulingPolicy, ServiceDiagnostics, SolveDiagnostics,
    SolveReport, SHARE_SUM_TOL,
};

/// Right end of every multiplier bracket. All shares clamp to zero here.
pub const ETA_HI: f64 = -1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaterfillError {
    #[error("service {service}: total capacity {capacity_share} of its demand is below 1")]
    InfeasibleService { service: usize, capacity_share: f64 },
    #[error("service {service}: no multiplier bracket after {doublings} doublings")]
    BracketNotFound { service: usize, doublings: u32 },
    #[error("service {service}: residual {residual} left with every share at a bound")]
    NoInteriorShare { service: usize, residual: f64 },
    #[error("scheduling infeasible for services {services:?}")]
    Infeasible { services: Vec<usize> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which outsourcing weight enters the cloud stationary point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CloudWeight {
    /// `W_s = w_s * A_s`, the gradient of the `w_s * lambda_os * A_s` penalty
    /// that the objective actually charges.
    #[default]
    ScaledByArrivals,
    /// `W_s = w_s`, the literal per-share weight. The solver then optimizes a
    /// slightly different objective than the one reported.
    Bare,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaterfillConfig {
    /// Bisection stops once the bracket is narrower than this.
    pub xi: f64,
    pub max_bisections: usize,
    pub max_doublings: u32,
    pub cloud_weight: CloudWeight,
}

impl Default for WaterfillConfig {
    fn default() -> Self {
        WaterfillConfig {
            xi: 1e-9,
            max_bisections: 200,
            max_doublings: 60,
            cloud_weight: CloudWeight::default(),
        }
    }
}

/// Unclamped edge share at multiplier `eta`.
///
/// Three regimes, depending on where the marginal queueing cost meets `-eta`:
/// pulling tasks from neighbours (marginal cost includes the LAN delay),
/// serving only local arrivals, or sitting exactly on the local arrivals.
/// Returns `-inf` when no finite stationary point exists, which clamps to 0.
pub fn lambda_edge_of_eta(
    eta: f64,
    mu: f64,
    local_arrival: f64,
    total_arrival: f64,
    lan_delay: f64,
) -> f64 {
    if eta >= 0.0 {
        return f64::NEG_INFINITY;
    }
    // When local arrivals alone would saturate the queue the kink is never reached.
    if local_arrival < mu {
        let knee = -mu / (mu - local_arrival).powi(2);
        if eta <= knee - lan_delay {
            let shifted = eta + lan_delay;
            if shifted >= 0.0 {
                return f64::NEG_INFINITY;
            }
            return (mu - (-mu / shifted).sqrt()) / total_arrival;
        }
        if eta < knee {
            return local_arrival / total_arrival;
        }
    }
    (mu - (-mu / eta).sqrt()) / total_arrival
}

/// Unclamped cloud share at multiplier `eta`, for core service rate
/// `core_rate` and outsourcing weight `weight` (already scaled as configured).
pub fn lambda_cloud_of_eta(eta: f64, core_rate: f64, weight: f64, total_arrival: f64) -> f64 {
    let shifted = weight + eta;
    if shifted >= 0.0 {
        return f64::NEG_INFINITY;
    }
    (core_rate - (-core_rate / shifted).sqrt()) / total_arrival
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TubeKind {
    Edge {
        node: usize,
        mu: f64,
        local_arrival: f64,
        lan_delay: f64,
    },
    Cloud {
        core_rate: f64,
        weight: f64,
    },
}

/// One destination for a service's workload, with its share upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tube {
    pub kind: TubeKind,
    pub upper: f64,
}

impl Tube {
    pub fn raw_share(&self, eta: f64, total_arrival: f64) -> f64 {
        match self.kind {
            TubeKind::Edge {
                mu,
                local_arrival,
                lan_delay,
                ..
            } => lambda_edge_of_eta(eta, mu, local_arrival, total_arrival, lan_delay),
            TubeKind::Cloud { core_rate, weight } => {
                lambda_cloud_of_eta(eta, core_rate, weight, total_arrival)
            }
        }
    }

    pub fn share(&self, eta: f64, total_arrival: f64) -> f64 {
        clamp_share(self.raw_share(eta, total_arrival), self.upper)
    }

    /// `|d share / d eta|` of the unclamped share; zero on the kink plateau
    /// and outside the box.
    pub fn share_slope(&self, eta: f64, total_arrival: f64) -> f64 {
        let raw = self.raw_share(eta, total_arrival);
        if !(raw > 0.0 && raw < self.upper) {
            return 0.0;
        }
        let (rate, shifted) = match self.kind {
            TubeKind::Edge {
                mu,
                local_arrival,
                lan_delay,
                ..
            } => {
                let knee = -mu / (mu - local_arrival).powi(2);
                let offloading = local_arrival < mu && eta <= knee - lan_delay;
                if local_arrival < mu && !offloading && eta < knee {
                    return 0.0;
                }
                (mu, if offloading { eta + lan_delay } else { eta })
            }
            TubeKind::Cloud { core_rate, weight } => (core_rate, eta + weight),
        };
        rate.sqrt() / (2.0 * total_arrival * (-shifted).powf(1.5))
    }

    /// Interval `[lo, hi]` of subgradients of the tube's cost at `share`.
    pub fn subgradient(&self, share: f64, total_arrival: f64) -> (f64, f64) {
        match self.kind {
            TubeKind::Edge {
                mu,
                local_arrival,
                lan_delay,
                ..
            } => {
                let load = share * total_arrival;
                let g = mu / (mu - load).powi(2);
                let kink_tol = 1e-9 * local_arrival.max(1.0);
                if (load - local_arrival).abs() <= kink_tol {
                    (g, g + lan_delay)
                } else if load > local_arrival {
                    (g + lan_delay, g + lan_delay)
                } else {
                    (g, g)
                }
            }
            TubeKind::Cloud { core_rate, weight } => {
                let g = core_rate / (core_rate - share * total_arrival).powi(2) + weight;
                (g, g)
            }
        }
    }
}

fn clamp_share(raw: f64, upper: f64) -> f64 {
    if raw < 0.0 {
        0.0
    } else if raw > upper {
        upper
    } else {
        raw
    }
}

/// The scheduling subproblem of one service.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceProblem {
    pub service: usize,
    pub total_arrival: f64,
    /// Caching nodes in index order, then the cloud.
    pub tubes: Vec<Tube>,
}

impl ServiceProblem {
    pub fn new(
        scenario: &Scenario,
        s: usize,
        allocation: &AllocationMatrix,
        bounds: &SchedulingBounds,
        cloud_weight: CloudWeight,
    ) -> Self {
        let total = scenario.total_arrival(s);
        let mut tubes = Vec::new();
        for n in 0..scenario.n_nodes() {
            let mu = allocation.mu(n, s);
            if mu <= 0.0 {
                continue;
            }
            tubes.push(Tube {
                kind: TubeKind::Edge {
                    node: n,
                    mu,
                    local_arrival: scenario.arrivals[n][s],
                    lan_delay: scenario.nodes[n].lan_delay,
                },
                upper: bounds.edge[n][s] / total,
            });
        }
        let svc = &scenario.services[s];
        let weight = match cloud_weight {
            CloudWeight::ScaledByArrivals => svc.outsource_weight * total,
            CloudWeight::Bare => svc.outsource_weight,
        };
        tubes.push(Tube {
            kind: TubeKind::Cloud {
                core_rate: svc.core_service_rate(),
                weight,
            },
            upper: bounds.cloud[s] / total,
        });
        ServiceProblem {
            service: s,
            total_arrival: total,
            tubes,
        }
    }

    /// Sum of the upper bounds; below 1 the service cannot be scheduled.
    pub fn capacity_share(&self) -> f64 {
        self.tubes.iter().map(|t| t.upper).sum()
    }

    /// `sum(clamped shares) - 1` at multiplier `eta`.
    pub fn excess(&self, eta: f64) -> f64 {
        self.tubes
            .iter()
            .map(|t| t.share(eta, self.total_arrival))
            .sum::<f64>()
            - 1.0
    }

    pub fn shares(&self, eta: f64) -> Vec<f64> {
        self.tubes
            .iter()
            .map(|t| t.share(eta, self.total_arrival))
            .collect()
    }

    /// Finds `lo < hi < 0` with `excess(lo) >= 0 > excess(hi)`.
    pub fn bracket(&self, max_doublings: u32) -> Result<EtaBracket, WaterfillError> {
        let capacity_share = self.capacity_share();
        if capacity_share < 1.0 {
            return Err(WaterfillError::InfeasibleService {
                service: self.service,
                capacity_share,
            });
        }
        let mut lo = -1.0;
        let mut doublings = 0;
        while self.excess(lo) < 0.0 {
            if doublings >= max_doublings {
                return Err(WaterfillError::BracketNotFound {
                    service: self.service,
                    doublings,
                });
            }
            lo *= 2.0;
            doublings += 1;
        }
        Ok(EtaBracket {
            lo,
            hi: ETA_HI,
            doublings,
        })
    }

    pub fn solve(&self, config: &WaterfillConfig) -> Result<ServiceSolveResult, WaterfillError> {
        let bracket = self.bracket(config.max_doublings)?;
        let (mut lo, mut hi) = (bracket.lo, bracket.hi);
        let mut iterations = 0;
        while hi - lo >= config.xi && iterations < config.max_bisections {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            iterations += 1;
            // excess(lo) >= 0 throughout, so a negative midpoint means the
            // root lies to its left.
            if self.excess(mid) < 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // One secant step inside the final bracket, then a first-order move
        // along the share curves: steep tubes (a fast core network) can leave
        // a visible sum residual even at a tight multiplier tolerance.
        let (e_lo, e_hi) = (self.excess(lo), self.excess(hi));
        let mut eta_star = if e_lo > e_hi {
            (lo + (hi - lo) * e_lo / (e_lo - e_hi)).clamp(lo, hi)
        } else {
            0.5 * (lo + hi)
        };
        let mut shares = self.shares(eta_star);
        let slopes: Vec<f64> = self
            .tubes
            .iter()
            .map(|t| t.share_slope(eta_star, self.total_arrival))
            .collect();
        let total_slope: f64 = slopes.iter().sum();
        let gap = shares.iter().sum::<f64>() - 1.0;
        if gap != 0.0 && total_slope > 0.0 {
            for (share, (slope, tube)) in shares.iter_mut().zip(slopes.iter().zip(&self.tubes)) {
                *share = clamp_share(*share - gap * slope / total_slope, tube.upper);
            }
            eta_star += gap / total_slope;
        }
        let clamps: Vec<Clamp> = self
            .tubes
            .iter()
            .zip(&shares)
            .map(|(t, &share)| {
                if share <= 0.0 {
                    Clamp::Lower
                } else if share >= t.upper {
                    Clamp::Upper
                } else {
                    Clamp::Free
                }
            })
            .collect();
        let residual = (shares.iter().sum::<f64>() - 1.0).abs();
        self.repair_sum(&mut shares, &clamps)?;
        Ok(ServiceSolveResult {
            service: self.service,
            eta_star,
            shares,
            clamps,
            residual,
            bracket,
            iterations,
            final_width: hi - lo,
        })
    }

    /// Spreads the leftover `sum - 1` over free coordinates, proportionally
    /// to their current shares, keeping every share inside its box.
    fn repair_sum(&self, shares: &mut [f64], clamps: &[Clamp]) -> Result<(), WaterfillError> {
        for _ in 0..16 {
            let gap = shares.iter().sum::<f64>() - 1.0;
            if gap == 0.0 {
                return Ok(());
            }
            // Coordinates that can still move in the needed direction.
            let movable: Vec<usize> = (0..shares.len())
                .filter(|&i| clamps[i] == Clamp::Free)
                .filter(|&i| {
                    if gap > 0.0 {
                        shares[i] > 0.0
                    } else {
                        shares[i] < self.tubes[i].upper
                    }
                })
                .collect();
            let weight: f64 = movable
                .iter()
                .map(|&i| shares[i].max(f64::MIN_POSITIVE))
                .sum();
            if movable.is_empty() || weight <= 0.0 {
                break;
            }
            for &i in &movable {
                let w = shares[i].max(f64::MIN_POSITIVE) / weight;
                shares[i] = clamp_share(shares[i] - gap * w, self.tubes[i].upper);
            }
            if (shares.iter().sum::<f64>() - 1.0).abs() <= f64::EPSILON {
                return Ok(());
            }
        }
        let gap = (shares.iter().sum::<f64>() - 1.0).abs();
        if gap > SHARE_SUM_TOL {
            return Err(WaterfillError::NoInteriorShare {
                service: self.service,
                residual: gap,
            });
        }
        Ok(())
    }

    /// First-order check of a solution against the multiplier it was solved
    /// with. For free coordinates the residual is the distance from `-eta`
    /// to the subdifferential of the tube's cost; clamped coordinates report
    /// their gap to the bound they are clamped at.
    pub fn kkt_report(&self, result: &ServiceSolveResult) -> Vec<KktEntry> {
        self.tubes
            .iter()
            .zip(&result.shares)
            .zip(&result.clamps)
            .map(|((tube, &share), &clamp)| {
                let (g_lo, g_hi) = tube.subgradient(share, self.total_arrival);
                let target = -result.eta_star;
                let below = (g_lo - target).max(0.0);
                let above = (target - g_hi).max(0.0);
                // At a bound only the outward direction has to be unprofitable.
                let stationarity = match clamp {
                    Clamp::Free => below.max(above),
                    Clamp::Lower => above,
                    Clamp::Upper => below,
                };
                let bound_gap = match clamp {
                    Clamp::Lower => share,
                    Clamp::Upper => (tube.upper - share).abs(),
                    Clamp::Free => 0.0,
                };
                KktEntry {
                    share,
                    upper: tube.upper,
                    clamp,
                    stationarity,
                    bound_gap,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaBracket {
    pub lo: f64,
    pub hi: f64,
    pub doublings: u32,
}

impl EtaBracket {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// How a coordinate's unclamped share related to its box at the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clamp {
    Lower,
    Free,
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceSolveResult {
    pub service: usize,
    pub eta_star: f64,
    /// Shares aligned with [`ServiceProblem::tubes`]; the last is the cloud.
    pub shares: Vec<f64>,
    pub clamps: Vec<Clamp>,
    /// `|sum(shares) - 1|` at `eta_star`, before the sum repair.
    pub residual: f64,
    pub bracket: EtaBracket,
    pub iterations: usize,
    pub final_width: f64,
}

impl ServiceSolveResult {
    pub fn diagnostics(&self) -> ServiceDiagnostics {
        ServiceDiagnostics {
            eta_star: self.eta_star,
            bisection_iterations: self.iterations,
            doublings: self.bracket.doublings,
            initial_bracket_width: self.bracket.width(),
            final_bracket_width: self.final_width,
            residual: self.residual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktEntry {
    pub share: f64,
    pub upper: f64,
    pub clamp: Clamp,
    pub stationarity: f64,
    pub bound_gap: f64,
}

/// `excess(eta)` for service `s` of a scenario.
pub fn excess(
    eta: f64,
    s: usize,
    scenario: &Scenario,
    allocation: &AllocationMatrix,
    bounds: &SchedulingBounds,
    cloud_weight: CloudWeight,
) -> f64 {
    ServiceProblem::new(scenario, s, allocation, bounds, cloud_weight).excess(eta)
}

pub fn solve_service(
    scenario: &Scenario,
    s: usize,
    allocation: &AllocationMatrix,
    bounds: &SchedulingBounds,
    config: &WaterfillConfig,
) -> Result<ServiceSolveResult, WaterfillError> {
    ServiceProblem::new(scenario, s, allocation, bounds, config.cloud_weight).solve(config)
}

/// Solves the scheduling subproblem for a caching policy with default settings.
pub fn solve_p2(
    scenario: &Scenario,
    caching: &CachingPolicy,
) -> Result<SolveReport, WaterfillError> {
    solve_p2_with(scenario, caching, &WaterfillConfig::default())
}

pub fn solve_p2_with(
    scenario: &Scenario,
    caching: &CachingPolicy,
    config: &WaterfillConfig,
) -> Result<SolveReport, WaterfillError> {
    let allocation = compute_allocation(scenario, caching);
    let bounds = scheduling_upper_bounds(scenario, &allocation);
    let mut schedule = SchedulingPolicy::zeros(scenario.n_nodes(), scenario.n_services());
    let mut diagnostics = SolveDiagnostics {
        services: vec![None; scenario.n_services()],
        iterations: 0,
    };
    let mut failed = Vec::new();
    for s in 0..scenario.n_services() {
        if scenario.total_arrival(s) <= 0.0 {
            continue;
        }
        let problem = ServiceProblem::new(scenario, s, &allocation, &bounds, config.cloud_weight);
        match problem.solve(config) {
            Ok(result) => {
                for (tube, &share) in problem.tubes.iter().zip(&result.shares) {
                    match tube.kind {
                        TubeKind::Edge { node, .. } => schedule.set_edge(node, s, share),
                        TubeKind::Cloud { .. } => schedule.set_cloud(s, share),
                    }
                }
                diagnostics.iterations += result.iterations;
                diagnostics.services[s] = Some(result.diagnostics());
            }
            Err(_) => failed.push(s),
        }
    }
    if !failed.is_empty() {
        return Err(WaterfillError::Infeasible { services: failed });
    }
    Ok(SolveReport::assemble(
        scenario,
        caching.clone(),
        schedule,
        diagnostics,
    )?)
}
