//! Batch runs over (sweep value x seed x algorithm) cells with CSV output.
//!
//! A configuration file looks like:
//!
//! ```toml
//! seeds = [1, 2, 3]
//! algorithms = ["ice", "noncoop", "greedy"]
//! output = "arrivals.csv"
//! traces = false
//!
//! [sweep]
//! variable = "mean_arrival"
//! values = ["40", "60", "80"]
//!
//! [ice]
//! omega = 1e-6
//! max_iters = 3000
//!
//! [scenario.params]
//! n_nodes = 12
//! n_services = 8
//! ```
//!
//! `[scenario] file = "instance.toml"` uses a fixed instance instead of
//! generating one per seed.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{run_greedy, run_noncooperation};
use crate::ice::{run_ice, IceConfig, IceError, IceTrace};
use crate::model::{Scenario, SolveReport};
use crate::scenario::{self, build_topology, place_nodes, GenParams, ScenarioError, TopologyKind};
use crate::waterfill::{WaterfillConfig, WaterfillError};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "COOPCACHE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "results";
pub const CSV_HEADER: [&str; 9] = [
    "sweep_value",
    "seed",
    "algorithm",
    "status",
    "objective",
    "total_response_time",
    "outsourcing_traffic",
    "iterations",
    "wall_time",
];
/// Largest accepted gap between a reported objective and its recomputation,
/// relative to `max(1, |objective|)`.
pub const RECHECK_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    Ice,
    NonCooperation,
    Greedy,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ice, Algorithm::NonCooperation, Algorithm::Greedy];
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Ice => "ice",
            Algorithm::NonCooperation => "noncoop",
            Algorithm::Greedy => "greedy",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "ice" => Ok(Algorithm::Ice),
            "noncoop" | "non_cooperation" => Ok(Algorithm::NonCooperation),
            "greedy" => Ok(Algorithm::Greedy),
            other => Err(format!(
                "unknown algorithm {other:?} (ice, noncoop, greedy)"
            )),
        }
    }
}

impl TryFrom<String> for Algorithm {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> String {
        a.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// No sweep: a single cell per seed and algorithm.
    None,
    /// Mean per-node arrival rate (tasks/s).
    MeanArrival,
    Omega,
    Topology,
}

impl FromStr for SweepVariable {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "none" => Ok(SweepVariable::None),
            "mean_arrival" => Ok(SweepVariable::MeanArrival),
            "omega" => Ok(SweepVariable::Omega),
            "topology" => Ok(SweepVariable::Topology),
            other => Err(format!(
                "unknown sweep variable {other:?} (mean_arrival, omega, topology)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepValue {
    None,
    MeanArrival(f64),
    Omega(f64),
    Topology(TopologyKind),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::None => Ok(()),
            SweepValue::MeanArrival(v) | SweepValue::Omega(v) => write!(f, "{v}"),
            SweepValue::Topology(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    /// Values as strings so one list type covers numbers and topologies.
    #[serde(default)]
    pub values: Vec<String>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            variable: SweepVariable::None,
            values: Vec::new(),
        }
    }
}

impl FromStr for Sweep {
    type Err = String;

    /// `VARIABLE=v1,v2,...`, e.g. `omega=1e-6,1e-4`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (var, values) = s
            .split_once('=')
            .ok_or_else(|| format!("expected VARIABLE=v1,v2,... in {s:?}"))?;
        let sweep = Sweep {
            variable: var.parse()?,
            values: values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect(),
        };
        sweep.parse_values()?;
        Ok(sweep)
    }
}

impl Sweep {
    pub fn parse_values(&self) -> Result<Vec<SweepValue>, String> {
        let num = |v: &str| -> Result<f64, String> {
            match v.parse::<f64>() {
                Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
                _ => Err(format!("sweep value {v:?} must be a positive number")),
            }
        };
        if self.variable == SweepVariable::None {
            return Ok(vec![SweepValue::None]);
        }
        if self.values.is_empty() {
            return Err("sweep needs at least one value".into());
        }
        self.values
            .iter()
            .map(|v| match self.variable {
                SweepVariable::None => unreachable!(),
                SweepVariable::MeanArrival => num(v).map(SweepValue::MeanArrival),
                SweepVariable::Omega => num(v).map(SweepValue::Omega),
                SweepVariable::Topology => v.parse().map(SweepValue::Topology),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IceSettings {
    pub omega: f64,
    pub max_iters: usize,
    pub stall_window: usize,
    pub stall_tol: f64,
}

impl Default for IceSettings {
    fn default() -> Self {
        let d = IceConfig::default();
        IceSettings {
            omega: d.omega,
            max_iters: d.max_iters,
            stall_window: d.stall_window,
            stall_tol: d.stall_tol,
        }
    }
}

impl IceSettings {
    pub fn to_config(&self, seed: u64) -> IceConfig {
        IceConfig {
            omega: self.omega,
            max_iters: self.max_iters,
            stall_window: self.stall_window,
            stall_tol: self.stall_tol,
            rng_seed: seed,
            waterfill: WaterfillConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ScenarioSource {
    /// A fresh instance per seed; the generator seed is the run seed.
    Params(GenParams),
    /// A fixed instance file.
    File(PathBuf),
}

impl Default for ScenarioSource {
    fn default() -> Self {
        ScenarioSource::Params(GenParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSource,
    pub algorithms: Vec<Algorithm>,
    pub sweep: Sweep,
    pub seeds: Vec<u64>,
    pub ice: IceSettings,
    /// CSV path; relative paths resolve against the output directory.
    pub output: Option<PathBuf>,
    /// Write one chain trace CSV per ICE / non-cooperation run.
    pub traces: bool,
    /// Fill the wall_time column. Off by default so output is reproducible.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioSource::default(),
            algorithms: Algorithm::ALL.to_vec(),
            sweep: Sweep::default(),
            seeds: vec![0],
            ice: IceSettings::default(),
            output: None,
            traces: false,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<Vec<SweepValue>, ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::Config("seed list is empty".into()));
        }
        if self.algorithms.is_empty() {
            return Err(ExperimentError::Config("algorithm list is empty".into()));
        }
        self.ice
            .to_config(0)
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        if let ScenarioSource::Params(p) = &self.scenario {
            p.validate()?;
        }
        self.sweep.parse_values().map_err(ExperimentError::Config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Infeasible,
    Error,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Ok => "ok",
            RunStatus::Infeasible => "infeasible",
            RunStatus::Error => "error",
        })
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub sweep_value: SweepValue,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub status: RunStatus,
    pub objective: Option<f64>,
    pub total_response_time: Option<f64>,
    pub outsourcing_traffic: Option<f64>,
    /// Caching-chain iterations (0 for greedy).
    pub iterations: usize,
    pub wall_time: Option<f64>,
    /// Failure description for non-ok rows.
    pub message: Option<String>,
    pub trace: Option<IceTrace>,
}

impl RunRow {
    fn record(&self) -> [String; 9] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.sweep_value.to_string(),
            self.seed.to_string(),
            self.algorithm.to_string(),
            self.status.to_string(),
            opt(self.objective),
            opt(self.total_response_time),
            opt(self.outsourcing_traffic),
            self.iterations.to_string(),
            opt(self.wall_time),
        ]
    }

    fn trace_file_name(&self) -> String {
        let label: String = self
            .sweep_value
            .to_string()
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        if label.is_empty() {
            format!("{}_seed{}.csv", self.algorithm, self.seed)
        } else {
            format!("{}_{}_seed{}.csv", self.algorithm, label, self.seed)
        }
    }
}

/// Mean per-node total arrival rate of a scenario.
pub fn mean_node_arrival(scenario: &Scenario) -> f64 {
    scenario
        .arrivals
        .iter()
        .map(|r| r.iter().sum::<f64>())
        .sum::<f64>()
        / scenario.n_nodes() as f64
}

/// Builds the instance of one cell.
pub fn cell_scenario(
    source: &ScenarioSource,
    base: Option<&Scenario>,
    value: &SweepValue,
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    match source {
        ScenarioSource::Params(p) => {
            let mut p = GenParams { seed, ..p.clone() };
            match value {
                SweepValue::MeanArrival(mean) => {
                    let (lo, hi) = p.node_arrival_range_tasks_per_s;
                    let scale = mean / (0.5 * (lo + hi));
                    p.node_arrival_range_tasks_per_s = (lo * scale, hi * scale);
                }
                SweepValue::Topology(kind) => p.topology = *kind,
                SweepValue::None | SweepValue::Omega(_) => {}
            }
            scenario::generate(&p)
        }
        ScenarioSource::File(_) => {
            let mut sc = base
                .expect("file source is loaded before the cells run")
                .clone();
            match value {
                SweepValue::MeanArrival(mean) => {
                    let scale = mean / mean_node_arrival(&sc);
                    for row in &mut sc.arrivals {
                        for a in row.iter_mut() {
                            *a *= scale;
                        }
                    }
                }
                SweepValue::Topology(kind) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let pos = place_nodes(sc.n_nodes(), &mut rng);
                    sc.topology = build_topology(*kind, sc.n_nodes(), Some(&pos))?;
                }
                SweepValue::None | SweepValue::Omega(_) => {}
            }
            Ok(sc)
        }
    }
}

fn classify_ice(e: &IceError) -> RunStatus {
    match e {
        IceError::NoFeasiblePolicy => RunStatus::Infeasible,
        IceError::Waterfill(w) => classify_waterfill(w),
        _ => RunStatus::Error,
    }
}

fn classify_waterfill(e: &WaterfillError) -> RunStatus {
    match e {
        WaterfillError::InfeasibleService { .. } | WaterfillError::Infeasible { .. } => {
            RunStatus::Infeasible
        }
        _ => RunStatus::Error,
    }
}

/// Runs one cell. Never fails: problems become the row status.
pub fn run_cell(
    config: &ExperimentConfig,
    base: Option<&Scenario>,
    value: &SweepValue,
    seed: u64,
    algorithm: Algorithm,
) -> RunRow {
    let mut row = RunRow {
        sweep_value: value.clone(),
        seed,
        algorithm,
        status: RunStatus::Ok,
        objective: None,
        total_response_time: None,
        outsourcing_traffic: None,
        iterations: 0,
        wall_time: None,
        message: None,
        trace: None,
    };
    let scenario = match cell_scenario(&config.scenario, base, value, seed) {
        Ok(s) => s,
        Err(e) => {
            row.status = RunStatus::Error;
            row.message = Some(e.to_string());
            return row;
        }
    };
    let mut ice = config.ice.to_config(seed);
    if let SweepValue::Omega(w) = value {
        ice.omega = *w;
    }
    let start = Instant::now();
    let result: Result<(SolveReport, Option<IceTrace>), (RunStatus, String)> = match algorithm {
        Algorithm::Ice => run_ice(&scenario, &ice)
            .map(|o| (o.report, Some(o.trace)))
            .map_err(|e| (classify_ice(&e), e.to_string())),
        Algorithm::NonCooperation => run_noncooperation(&scenario, &ice)
            .map(|o| (o.report, Some(o.trace)))
            .map_err(|e| (classify_ice(&e), e.to_string())),
        Algorithm::Greedy => run_greedy(&scenario, &ice.waterfill)
            .map(|r| (r, None))
            .map_err(|e| (classify_waterfill(&e), e.to_string())),
    };
    let elapsed = start.elapsed().as_secs_f64();
    match result {
        Err((status, msg)) => {
            row.status = status;
            row.message = Some(msg);
        }
        Ok((report, trace)) => {
            match report.recompute_objective(&scenario) {
                Ok(y)
                    if (y - report.objective).abs()
                        <= RECHECK_TOL * report.objective.abs().max(1.0) =>
                {
                    row.objective = Some(report.objective);
                    row.total_response_time = Some(report.total_response_time());
                    row.outsourcing_traffic = Some(report.outsourcing_traffic());
                }
                Ok(y) => {
                    row.status = RunStatus::Error;
                    row.message = Some(format!(
                        "objective {} does not match recomputed {y}",
                        report.objective
                    ));
                }
                Err(e) => {
                    row.status = RunStatus::Error;
                    row.message = Some(format!("objective recomputation failed: {e}"));
                }
            }
            row.iterations = trace.as_ref().map_or(0, |t| t.records.len());
            if config.traces {
                row.trace = trace;
            }
        }
    }
    if config.timing {
        row.wall_time = Some(elapsed);
    }
    row
}

/// Runs every cell, in parallel, returning rows in sweep, seed, algorithm order.
pub fn run_cells(config: &ExperimentConfig) -> Result<Vec<RunRow>, ExperimentError> {
    let values = config.validate()?;
    let base = match &config.scenario {
        ScenarioSource::File(path) => Some(scenario::load(path)?),
        ScenarioSource::Params(_) => None,
    };
    let cells: Vec<(SweepValue, u64, Algorithm)> = values
        .iter()
        .flat_map(|v| {
            config
                .seeds
                .iter()
                .flat_map(move |&seed| config.algorithms.iter().map(move |&a| (v.clone(), seed, a)))
        })
        .collect();
    Ok(cells
        .par_iter()
        .map(|(v, seed, a)| run_cell(config, base.as_ref(), v, *seed, *a))
        .collect())
}

pub fn write_rows<W: io::Write>(rows: &[RunRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn rows_to_csv_string(rows: &[RunRow]) -> String {
    let mut buf = Vec::new();
    write_rows(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Default output directory: `$COOPCACHE_OUT_DIR`, else `results`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub csv_path: PathBuf,
    pub trace_paths: Vec<PathBuf>,
    pub rows: Vec<RunRow>,
}

impl ExperimentSummary {
    pub fn failures(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.status != RunStatus::Ok)
            .count()
    }
}

/// Runs the experiment and writes the CSV (and traces) under `out_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentSummary, ExperimentError> {
    let rows = run_cells(config)?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    let csv_path = out_dir.join(
        config
            .output
            .clone()
            .unwrap_or_else(|| PathBuf::from("results.csv")),
    );
    if let Some(parent) = csv_path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    write_rows(&rows, io::BufWriter::new(file))?;

    let mut trace_paths = Vec::new();
    if config.traces {
        let dir = out_dir.join("traces");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for row in &rows {
            if let Some(trace) = &row.trace {
                let path = dir.join(row.trace_file_name());
                let file = fs::File::create(&path).map_err(io_err(&path))?;
                trace.write_csv(io::BufWriter::new(file))?;
                trace_paths.push(path);
            }
        }
    }
    Ok(ExperimentSummary {
        csv_path,
        trace_paths,
        rows,
    })
}
