//! `byzfed`: run clustered, Byzantine-robust federated learning experiments
//! and write their metrics as CSV.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use byzfed::pipeline::{with_threads, Experiment, ExperimentConfig, FleetSource, GridResult};
use byzfed::report;
use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Overrides};
use manifest::{RunManifest, RunStatus, MANIFEST_FILE};

/// Caps the worker pool, whatever `--threads` says.
const THREADS_ENV: &str = "BYZFED_THREADS";

#[derive(Parser, Debug)]
#[command(name = "byzfed", version, about = "Byzantine-robust clustered federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a synthetic mixture-of-regressions experiment.
    Synth(RunArgs),
    /// Build a fleet from a feature CSV by threshold-graph clustering and run
    /// the experiment on it.
    Ingest(RunArgs),
    /// Run the clusterer × aggregator grid of any config.
    Grid(RunArgs),
    /// Rerun the experiment recorded in a manifest and check that every
    /// result file comes out byte-identical.
    Replay {
        /// Path to a manifest.json (or the directory holding it).
        manifest: PathBuf,
        /// Where to write the rerun (default: `<run dir>/replay`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML experiment config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `runs/<name>-<run id>`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads (default: all cores, capped by BYZFED_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    /// Byzantine fraction of a synthetic fleet.
    #[arg(long)]
    alpha: Option<f64>,
    /// Noise standard deviation of a synthetic fleet.
    #[arg(long)]
    sigma: Option<f64>,
    /// Comma-separated clusterers: KM, KGM, TKM.
    #[arg(long, value_delimiter = ',')]
    clusterer: Option<Vec<String>>,
    /// Comma-separated Stage III aggregators: SM, TM, MED, GM, IF, FA.
    #[arg(long, value_delimiter = ',')]
    aggregator: Option<Vec<String>>,
    /// Trimming fraction for TM and FA (default: the Byzantine fraction).
    #[arg(long)]
    beta: Option<f64>,
    /// Ingest edge threshold (default: 10th percentile of sampled distances).
    #[arg(long)]
    gamma: Option<f64>,
    /// Feature CSV to ingest.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    shard_size: Option<usize>,
    #[arg(long)]
    n_adv: Option<usize>,
    #[arg(long)]
    min_cluster: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            trials: self.trials,
            alpha: self.alpha,
            sigma: self.sigma,
            clusterers: self.clusterer.clone(),
            aggregators: self.aggregator.clone(),
            beta: self.beta,
            gamma: self.gamma,
            data: self.data.clone(),
            shard_size: self.shard_size,
            n_adv: self.n_adv,
            min_cluster: self.min_cluster,
        }
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn resolve_threads(flag: Option<usize>) -> Result<usize, Failure> {
    let cap = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| Failure::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    if flag == Some(0) {
        return Err(Failure::Config("--threads must be at least 1".into()));
    }
    let wanted = flag.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok(cap.map_or(wanted, |c| wanted.min(c)))
}

fn absolutize(path: &Path) -> PathBuf {
    std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

fn build_config(kind: &str, args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match (&args.config, kind) {
        (Some(path), _) => config::load(path)?,
        (None, "synth") => config::default_synthetic(),
        (None, "ingest") => match &args.data {
            Some(data) => config::default_ingest(data.clone()),
            None => return Err(Failure::Config("ingest needs --config or --data".into())),
        },
        (None, _) => return Err(Failure::Config(format!("{kind} needs --config"))),
    };
    args.overrides().apply(&mut cfg)?;
    match (&cfg.fleet, kind) {
        (FleetSource::Synthetic(_), "ingest") => {
            return Err(Failure::Config("ingest needs a config with source = \"ingest\"".into()));
        }
        (FleetSource::Ingest(_), "synth") => {
            return Err(Failure::Config("synth needs a synthetic fleet; use `ingest` or `grid`".into()));
        }
        _ => {}
    }
    if let FleetSource::Ingest(spec) = &mut cfg.fleet {
        spec.path = absolutize(&spec.path);
    }
    Ok(cfg)
}

/// Runs `cfg` and writes the manifest and result files into `out_dir`.
fn execute(command: &str, cfg: ExperimentConfig, out_dir: &Path, threads: usize) -> Result<RunManifest, Failure> {
    let exp = Experiment::new(cfg.clone()).map_err(|e| {
        if e.is_config() {
            Failure::from(ConfigError::from(e))
        } else {
            runtime(e)
        }
    })?;
    let files = [
        report::RESULTS_FILE,
        report::SUMMARY_FILE,
        report::MISCLUSTERING_FILE,
        report::OPT_ROUNDS_FILE,
        report::FAILURES_FILE,
    ];
    let mut manifest = RunManifest::new(command, &cfg, threads, &files);
    manifest.ingest_gamma = exp.ingest_gamma();
    if let Some(g) = exp.ingest_gamma() {
        let how = match &cfg.fleet {
            FleetSource::Ingest(spec) if spec.gamma.is_none() => " (10th percentile of sampled pairwise distances)",
            _ => "",
        };
        println!("ingest gamma = {g}{how}");
    }
    std::fs::create_dir_all(out_dir).map_err(runtime)?;
    manifest.write(out_dir).map_err(runtime)?;
    report::write_atomic(&out_dir.join("config.toml"), config::to_toml(&cfg).as_bytes()).map_err(runtime)?;
    println!(
        "{command}: {} trial(s), {} cell(s), {threads} thread(s), run id {}",
        cfg.trials,
        cfg.cell_names().len(),
        manifest.run_id
    );

    let grid = with_threads(threads, || exp.run_grid()).map_err(runtime)?;
    let written = report::write_all(out_dir, &manifest.run_id, &grid);
    let outcome = written.map_err(runtime).and_then(|_| manifest.record_hashes(out_dir).map_err(runtime));
    manifest.finished_unix = Some(manifest::unix_now());
    manifest.status = if outcome.is_ok() { RunStatus::Complete } else { RunStatus::Failed };
    manifest.write(out_dir).map_err(runtime)?;
    outcome?;

    print_summary(&grid);
    let failed = grid.trials.iter().flat_map(|t| &t.cells).filter(|c| c.outcome.is_err()).count();
    let total: usize = grid.trials.iter().map(|t| t.cells.len()).sum();
    if failed > 0 {
        eprintln!("{failed} of {total} cell runs failed; see {}", report::FAILURES_FILE);
    }
    if total > 0 && failed == total {
        return Err(Failure::Runtime("every cell failed".into()));
    }
    println!("results in {}", out_dir.display());
    Ok(manifest)
}

fn print_summary(grid: &GridResult) {
    for t in &grid.trials {
        if let Some(r) = &t.ingest {
            println!("trial {}: ingest kept clusters of sizes {:?}", t.trial, r.kept_sizes);
        }
    }
    println!("{:<12} {:>5} {:>14} {:>14}", "cell", "ok", "mean_error", "sd_error");
    for s in &grid.summary {
        let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        println!(
            "{:<12} {:>5} {:>14} {:>14}",
            s.cell,
            s.trials_ok,
            show(s.mean_est_error),
            show(s.sd_est_error)
        );
    }
}

fn run(kind: &str, args: &RunArgs) -> Result<(), Failure> {
    let cfg = build_config(kind, args)?;
    let threads = resolve_threads(args.threads)?;
    let out_dir = args
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}", cfg.name, manifest::run_id(&cfg))));
    execute(kind, cfg, &out_dir, threads).map(|_| ())
}

fn replay(path: &Path, out_dir: Option<PathBuf>, threads: Option<usize>) -> Result<(), Failure> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let original = RunManifest::read(&manifest_path).map_err(Failure::Config)?;
    if original.status != RunStatus::Complete {
        return Err(Failure::Config(format!("{} records an incomplete run", manifest_path.display())));
    }
    let run_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let out_dir = out_dir.unwrap_or_else(|| run_dir.join("replay"));
    let threads = resolve_threads(threads)?;
    let rerun = execute("replay", original.config.clone(), &out_dir, threads)?;

    let mut mismatches = 0;
    for f in &original.files {
        let again = rerun.files.iter().find(|g| g.name == f.name).and_then(|g| g.sha256.as_ref());
        let same = f.sha256.is_some() && again == f.sha256.as_ref();
        println!("{} {}", if same { "identical" } else { "DIFFERS  " }, f.name);
        mismatches += usize::from(!same);
    }
    if mismatches > 0 {
        return Err(Failure::Runtime(format!("{mismatches} result file(s) differ from the original run")));
    }
    println!("replay matches the original run");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => run("synth", a),
        Command::Ingest(a) => run("ingest", a),
        Command::Grid(a) => run("grid", a),
        Command::Replay {
            manifest,
            out_dir,
            threads,
        } => replay(manifest, out_dir.clone(), *threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
