use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coopcache::experiment::{
    default_out_dir, run_experiment, Algorithm, ExperimentConfig, RunStatus, Sweep,
};
use coopcache::model::{check_caching_feasible, check_schedule_feasible, objective, Scenario};
use coopcache::scenario::{generate, GenParams, ScenarioDocument, TopologyKind};

#[derive(Parser)]
#[command(
    name = "coopcache",
    version,
    about = "Cooperative edge caching and workload scheduling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write a results CSV.
    Run(RunArgs),
    /// Check a scenario file (and any caching/schedule stored in it).
    Validate { path: PathBuf },
    /// Generate a random scenario file.
    Gen(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    config: Option<PathBuf>,
    /// Seeds to run, replacing the configured list.
    #[arg(long = "seed", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Caching-chain temperature.
    #[arg(long)]
    omega: Option<f64>,
    /// Output CSV path. Relative paths resolve against the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output directory (default: $COOPCACHE_OUT_DIR or ./results).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Algorithms to run: ice, noncoop, greedy.
    #[arg(long = "algo", value_delimiter = ',')]
    algorithms: Vec<Algorithm>,
    /// Sweep as VARIABLE=v1,v2,... (mean_arrival, omega, topology).
    #[arg(long)]
    sweep: Option<Sweep>,
    /// Use a fixed scenario file instead of generated instances.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Write per-run chain traces under <out_dir>/traces.
    #[arg(long)]
    traces: bool,
    /// Record wall-clock time per run (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct GenArgs {
    /// Generator parameters (TOML). Defaults apply when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    services: Option<usize>,
    /// full, isolated, clusters:K or geometric:RADIUS
    #[arg(long)]
    topology: Option<TopologyKind>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { path } => cmd_validate(path),
        Command::Gen(args) => cmd_gen(args),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, String> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    if !args.seeds.is_empty() {
        config.seeds = args.seeds;
    }
    if let Some(omega) = args.omega {
        config.ice.omega = omega;
    }
    if !args.algorithms.is_empty() {
        config.algorithms = args.algorithms;
    }
    if let Some(sweep) = args.sweep {
        config.sweep = sweep;
    }
    if let Some(path) = args.scenario {
        config.scenario = coopcache::experiment::ScenarioSource::File(path);
    }
    if args.out.is_some() {
        config.output = args.out;
    }
    config.traces |= args.traces;
    config.timing |= args.timing;

    let out_dir = args.out_dir.unwrap_or_else(default_out_dir);
    let summary = run_experiment(&config, &out_dir).map_err(|e| e.to_string())?;
    for row in summary.rows.iter().filter(|r| r.status != RunStatus::Ok) {
        eprintln!(
            "{} seed={} sweep={}: {} ({})",
            row.algorithm,
            row.seed,
            row.sweep_value,
            row.status,
            row.message.as_deref().unwrap_or("")
        );
    }
    println!(
        "wrote {} rows to {} ({} not ok)",
        summary.rows.len(),
        summary.csv_path.display(),
        summary.failures()
    );
    if !summary.trace_paths.is_empty() {
        println!(
            "wrote {} traces under {}",
            summary.trace_paths.len(),
            out_dir.join("traces").display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn summarize(sc: &Scenario) {
    println!("nodes: {}", sc.n_nodes());
    println!("services: {}", sc.n_services());
    println!("links: {}", sc.topology.edges().len());
    let total: f64 = (0..sc.n_services()).map(|s| sc.total_arrival(s)).sum();
    println!("total arrival rate: {total} tasks/s");
    for s in 0..sc.n_services() {
        let a = sc.total_arrival(s);
        let m = sc.services[s].core_service_rate();
        println!("  service {s}: arrivals {a:.4} tasks/s, core rate {m:.4} tasks/s");
    }
}

fn cmd_validate(path: PathBuf) -> Result<ExitCode, String> {
    let doc = ScenarioDocument::load(&path).map_err(|e| e.to_string())?;
    let sc = &doc.scenario;
    let mut problems = Vec::new();
    if let Some(caching) = &doc.caching {
        problems.extend(check_caching_feasible(sc, caching).violations);
        if let Some(schedule) = &doc.schedule {
            let report = check_schedule_feasible(sc, caching, schedule);
            if report.is_feasible() {
                match objective(sc, caching, schedule) {
                    Ok(y) => println!("objective of stored schedule: {y}"),
                    Err(e) => println!("objective of stored schedule: {e}"),
                }
            }
            problems.extend(report.violations);
        }
    } else if doc.schedule.is_some() {
        return Err("a [schedule] section needs a [caching] section".into());
    }
    if problems.is_empty() {
        println!("OK");
        summarize(sc);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{} violation(s):", problems.len());
        for v in &problems {
            println!("  {v}");
        }
        Ok(ExitCode::from(1))
    }
}

fn cmd_gen(args: GenArgs) -> Result<ExitCode, String> {
    let mut params = match &args.params {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            toml::from_str::<GenParams>(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => GenParams::default(),
    };
    if let Some(seed) = args.seed {
        params.seed = seed;
    }
    if let Some(n) = args.nodes {
        params.n_nodes = n;
    }
    if let Some(s) = args.services {
        params.n_services = s;
    }
    if let Some(t) = args.topology {
        params.topology = t;
    }
    let doc = ScenarioDocument::new(generate(&params).map_err(|e| e.to_string())?);
    match args.out {
        Some(path) => doc.save(&path).map_err(|e| e.to_string())?,
        None => print!("{}", doc.to_toml_string()),
    }
    Ok(ExitCode::SUCCESS)
}
