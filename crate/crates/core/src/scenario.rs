//! Random instance generation, topology construction and the scenario file
//! format.
//!
//! Scenario files are TOML documents:
//!
//! ```toml
//! format_version = 1
//! epsilon = 0.001
//! arrivals_tasks_per_s = [[3.0, 1.0], [2.0, 0.5]]
//!
//! [[nodes]]
//! storage_gb = 150.0
//! compute_gcycles_per_s = 80.0
//! lan_delay_s = 0.02
//!
//! [[services]]
//! storage_gb = 40.0
//! compute_gcycles_per_task = 0.5
//! data_mb_per_gcycle = 0.3
//! core_bandwidth_mbps = 160.0
//! outsource_weight = 0.0006
//!
//! [topology]
//! neighbors = [[1], [0]]
//!
//! # Optional: a caching policy and schedule to check with `validate`.
//! [caching]
//! cached = [[true, false], [false, true]]
//!
//! [schedule]
//! # N rows of edge shares followed by one cloud row.
//! shares = [[0.5, 0.0], [0.0, 0.7], [0.5, 0.3]]
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    CachingPolicy, EdgeNode, ModelError, Scenario, SchedulingPolicy, Service, Topology,
    DEFAULT_EPSILON, DEFAULT_LAN_DELAY,
};

pub const FORMAT_VERSION: u32 = 1;
/// Side of the square deployment area used for random geometric topologies (m).
pub const AREA_SIDE_M: f64 = 100.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported format_version {found}, expected {FORMAT_VERSION}")]
    Version { found: u32 },
    #[error("invalid generation parameter {field}: {reason}")]
    Params { field: String, reason: String },
    #[error("random geometric topology needs node positions")]
    MissingPositions,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How edge nodes are linked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TopologyKind {
    FullyConnected,
    /// Contiguous groups of near-equal size, complete inside each group.
    Clusters(usize),
    Isolated,
    /// Link radius (m) between nodes placed uniformly in the area.
    RandomGeometric(f64),
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::FullyConnected => write!(f, "full"),
            TopologyKind::Clusters(k) => write!(f, "clusters:{k}"),
            TopologyKind::Isolated => write!(f, "isolated"),
            TopologyKind::RandomGeometric(r) => write!(f, "geometric:{r}"),
        }
    }
}

impl FromStr for TopologyKind {
    type Err = String;

    /// Accepts `full`, `isolated`, `clusters:K` and `geometric:RADIUS`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let kind = match (head, arg) {
            ("full" | "fully_connected", None) => TopologyKind::FullyConnected,
            ("isolated", None) => TopologyKind::Isolated,
            ("clusters", Some(k)) => {
                TopologyKind::Clusters(k.parse().map_err(|_| format!("bad cluster count {k:?}"))?)
            }
            ("geometric", Some(r)) => {
                TopologyKind::RandomGeometric(r.parse().map_err(|_| format!("bad radius {r:?}"))?)
            }
            _ => {
                return Err(format!(
                    "unknown topology {s:?} (full, isolated, clusters:K, geometric:R)"
                ))
            }
        };
        kind.check().map_err(|e| e.to_string())?;
        Ok(kind)
    }
}

impl TryFrom<String> for TopologyKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TopologyKind> for String {
    fn from(kind: TopologyKind) -> String {
        kind.to_string()
    }
}

impl TopologyKind {
    fn check(&self) -> Result<(), ScenarioError> {
        match *self {
            TopologyKind::Clusters(0) => Err(params("topology", "cluster count must be >= 1")),
            TopologyKind::RandomGeometric(r) if !(r > 0.0 && r.is_finite()) => {
                Err(params("topology", "radius must be > 0"))
            }
            _ => Ok(()),
        }
    }
}

fn params(field: &str, reason: &str) -> ScenarioError {
    ScenarioError::Params {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Parameters of the random instance generator. Ranges are closed
/// intervals `[lo, hi]` sampled uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub n_nodes: usize,
    pub n_services: usize,
    pub storage_cap_range_gb: (f64, f64),
    pub compute_cap_range_gcycles_per_s: (f64, f64),
    pub service_storage_range_gb: (f64, f64),
    pub service_compute_range_gcycles_per_task: (f64, f64),
    pub data_ratio_range_mb_per_gcycle: (f64, f64),
    pub core_bandwidth_mbps: f64,
    pub zipf_skew: f64,
    pub node_arrival_range_tasks_per_s: (f64, f64),
    pub lan_delay_s: f64,
    pub outsource_weight: f64,
    pub epsilon: f64,
    pub topology: TopologyKind,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            n_nodes: 12,
            n_services: 8,
            storage_cap_range_gb: (100.0, 200.0),
            compute_cap_range_gcycles_per_s: (50.0, 100.0),
            service_storage_range_gb: (20.0, 80.0),
            service_compute_range_gcycles_per_task: (0.1, 1.0),
            data_ratio_range_mb_per_gcycle: (0.1, 0.5),
            core_bandwidth_mbps: 160.0,
            zipf_skew: 0.5,
            node_arrival_range_tasks_per_s: (50.0, 100.0),
            lan_delay_s: DEFAULT_LAN_DELAY,
            outsource_weight: 6e-4,
            epsilon: DEFAULT_EPSILON,
            topology: TopologyKind::FullyConnected,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.n_nodes == 0 {
            return Err(params("n_nodes", "must be >= 1"));
        }
        if self.n_services == 0 {
            return Err(params("n_services", "must be >= 1"));
        }
        let ranges = [
            ("storage_cap_range_gb", self.storage_cap_range_gb),
            (
                "compute_cap_range_gcycles_per_s",
                self.compute_cap_range_gcycles_per_s,
            ),
            ("service_storage_range_gb", self.service_storage_range_gb),
            (
                "service_compute_range_gcycles_per_task",
                self.service_compute_range_gcycles_per_task,
            ),
            (
                "data_ratio_range_mb_per_gcycle",
                self.data_ratio_range_mb_per_gcycle,
            ),
            (
                "node_arrival_range_tasks_per_s",
                self.node_arrival_range_tasks_per_s,
            ),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(params(name, "needs 0 < lo <= hi"));
            }
        }
        let positive = [
            ("core_bandwidth_mbps", self.core_bandwidth_mbps),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(params(name, "must be > 0"));
            }
        }
        let nonneg = [
            ("zipf_skew", self.zipf_skew),
            ("lan_delay_s", self.lan_delay_s),
            ("outsource_weight", self.outsource_weight),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(params(name, "must be >= 0"));
            }
        }
        self.topology.check()
    }
}

/// Zipf popularity `r^-skew / sum_k k^-skew` for each service, where
/// `ranks[s]` is the 1-based rank of service `s`.
pub fn zipf_weights(ranks: &[usize], skew: f64) -> Vec<f64> {
    let raw: Vec<f64> = ranks.iter().map(|&r| (r as f64).powf(-skew)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Uniform node positions in the square deployment area.
pub fn place_nodes(n_nodes: usize, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    (0..n_nodes)
        .map(|_| {
            (
                rng.gen_range(0.0..=AREA_SIDE_M),
                rng.gen_range(0.0..=AREA_SIDE_M),
            )
        })
        .collect()
}

pub fn build_topology(
    kind: TopologyKind,
    n_nodes: usize,
    positions: Option<&[(f64, f64)]>,
) -> Result<Topology, ScenarioError> {
    kind.check()?;
    let mut edges = Vec::new();
    match kind {
        TopologyKind::Isolated => {}
        TopologyKind::FullyConnected => {
            for a in 0..n_nodes {
                for b in a + 1..n_nodes {
                    edges.push((a, b));
                }
            }
        }
        TopologyKind::Clusters(k) => {
            let group = |i: usize| i * k / n_nodes;
            for a in 0..n_nodes {
                for b in a + 1..n_nodes {
                    if group(a) == group(b) {
                        edges.push((a, b));
                    }
                }
            }
        }
        TopologyKind::RandomGeometric(radius) => {
            let pos = positions.ok_or(ScenarioError::MissingPositions)?;
            if pos.len() != n_nodes {
                return Err(ScenarioError::MissingPositions);
            }
            for a in 0..n_nodes {
                for b in a + 1..n_nodes {
                    let (dx, dy) = (pos[a].0 - pos[b].0, pos[a].1 - pos[b].1);
                    if dx.hypot(dy) <= radius {
                        edges.push((a, b));
                    }
                }
            }
        }
    }
    Ok(Topology::from_edges(n_nodes, &edges)?)
}

/// Popularity ranks drawn at generation, kept for callers that want them.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub scenario: Scenario,
    /// 1-based popularity rank of each service.
    pub ranks: Vec<usize>,
    pub popularity: Vec<f64>,
}

pub fn generate(params: &GenParams) -> Result<Scenario, ScenarioError> {
    generate_detailed(params).map(|g| g.scenario)
}

pub fn generate_detailed(params: &GenParams) -> Result<Generated, ScenarioError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let nodes: Vec<EdgeNode> = (0..params.n_nodes)
        .map(|_| EdgeNode {
            storage_gb: uniform(&mut rng, params.storage_cap_range_gb),
            compute_rate: uniform(&mut rng, params.compute_cap_range_gcycles_per_s),
            lan_delay: params.lan_delay_s,
        })
        .collect();
    let services: Vec<Service> = (0..params.n_services)
        .map(|_| Service {
            storage_gb: uniform(&mut rng, params.service_storage_range_gb),
            compute_per_task: uniform(&mut rng, params.service_compute_range_gcycles_per_task),
            data_ratio: uniform(&mut rng, params.data_ratio_range_mb_per_gcycle),
            core_bandwidth: params.core_bandwidth_mbps,
            outsource_weight: params.outsource_weight,
        })
        .collect();
    let mut ranks: Vec<usize> = (1..=params.n_services).collect();
    ranks.shuffle(&mut rng);
    let popularity = zipf_weights(&ranks, params.zipf_skew);
    let arrivals: Vec<Vec<f64>> = (0..params.n_nodes)
        .map(|_| {
            let total = uniform(&mut rng, params.node_arrival_range_tasks_per_s);
            popularity.iter().map(|chi| chi * total).collect()
        })
        .collect();
    let positions = match params.topology {
        TopologyKind::RandomGeometric(_) => Some(place_nodes(params.n_nodes, &mut rng)),
        _ => None,
    };
    let topology = build_topology(params.topology, params.n_nodes, positions.as_deref())?;
    let scenario = Scenario::new(nodes, services, arrivals, topology, params.epsilon)?;
    Ok(Generated {
        scenario,
        ranks,
        popularity,
    })
}

/// A scenario plus the optional caching policy and schedule stored with it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDocument {
    pub scenario: Scenario,
    pub caching: Option<CachingPolicy>,
    pub schedule: Option<SchedulingPolicy>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    format_version: u32,
    epsilon: f64,
    arrivals_tasks_per_s: Vec<Vec<f64>>,
    nodes: Vec<EdgeNode>,
    services: Vec<Service>,
    topology: TopologyRepr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    caching: Option<CachingRepr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schedule: Option<ScheduleRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyRepr {
    neighbors: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CachingRepr {
    cached: Vec<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRepr {
    shares: Vec<Vec<f64>>,
}

impl ScenarioDocument {
    pub fn new(scenario: Scenario) -> Self {
        ScenarioDocument {
            scenario,
            caching: None,
            schedule: None,
        }
    }

    pub fn to_toml_string(&self) -> String {
        let sc = &self.scenario;
        let repr = FileRepr {
            format_version: FORMAT_VERSION,
            epsilon: sc.epsilon,
            arrivals_tasks_per_s: sc.arrivals.clone(),
            nodes: sc.nodes.clone(),
            services: sc.services.clone(),
            topology: TopologyRepr {
                neighbors: (0..sc.n_nodes())
                    .map(|n| sc.topology.neighbors(n).to_vec())
                    .collect(),
            },
            caching: self.caching.as_ref().map(|c| CachingRepr {
                cached: c.rows().to_vec(),
            }),
            schedule: self.schedule.as_ref().map(|p| ScheduleRepr {
                shares: p.rows().to_vec(),
            }),
        };
        toml::to_string(&repr).expect("scenario fields are always representable in TOML")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let repr: FileRepr =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if repr.format_version != FORMAT_VERSION {
            return Err(ScenarioError::Version {
                found: repr.format_version,
            });
        }
        let topology = Topology::from_neighbors(repr.topology.neighbors)?;
        let scenario = Scenario::new(
            repr.nodes,
            repr.services,
            repr.arrivals_tasks_per_s,
            topology,
            repr.epsilon,
        )?;
        Ok(ScenarioDocument {
            scenario,
            caching: repr.caching.map(|c| CachingPolicy::from_rows(c.cached)),
            schedule: repr.schedule.map(|s| SchedulingPolicy::from_rows(s.shares)),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ScenarioError::Parse(msg) => ScenarioError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        fs::write(path, self.to_toml_string()).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn save(scenario: &Scenario, path: &Path) -> Result<(), ScenarioError> {
    ScenarioDocument::new(scenario.clone()).save(path)
}

pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
    ScenarioDocument::load(path).map(|d| d.scenario)
}
