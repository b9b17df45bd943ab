//! Result files of a grid run.
//!
//! Every file is plain CSV with a fixed header. Values are written with
//! Rust's shortest round-trip float formatting, so identical results give
//! byte-identical files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::pipeline::GridResult;

/// Bumped whenever a column is added, removed or changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MISCLUSTERING_FILE: &str = "misclustering.csv";
pub const OPT_ROUNDS_FILE: &str = "opt_rounds.csv";
pub const FAILURES_FILE: &str = "failures.csv";

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Long-format metrics: one `(run_id, cell, trial, metric, value)` row each.
pub fn write_results(path: &Path, run_id: &str, grid: &GridResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["run_id", "cell", "trial", "metric", "value"])?;
    for t in &grid.trials {
        let trial = t.trial.to_string();
        for c in &t.cells {
            let Ok(r) = &c.outcome else { continue };
            let mut row = |metric: &str, value: String| w.write_record([run_id, &c.cell, &trial, metric, &value]);
            row("est_error", fmt_opt(r.est_error()))?;
            row("clusters", r.w_hats.len().to_string())?;
            row("unmatched_clusters", r.evaluation.unmatched.to_string())?;
            let rounds: usize = r.clusters.iter().map(|k| k.rounds.len()).sum();
            row("total_rounds", rounds.to_string())?;
            let diverged = r
                .clusters
                .iter()
                .filter(|k| k.stop == Some(crate::distopt::StopReason::Diverged))
                .count();
            row("diverged_clusters", diverged.to_string())?;
        }
        for c in &t.clustering {
            let Ok(o) = &c.outcome else { continue };
            let cell = c.variant.clone();
            let mut row = |metric: &str, value: String| w.write_record([run_id, &cell, &trial, metric, &value]);
            if let Some(last) = o.history.last() {
                row("final_A_s", fmt(last.a_s))?;
                row("final_G_s", fmt(last.g_s))?;
                row("clustering_iterations", last.iteration.to_string())?;
            }
            if let Some(s) = o.sigma_hat {
                row("sigma_hat", fmt(s))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, grid: &GridResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["cell", "trials_ok", "trials_failed", "mean_est_error", "sd_est_error"])?;
    for s in &grid.summary {
        w.write_record([
            s.cell.clone(),
            s.trials_ok.to_string(),
            s.trials_failed.to_string(),
            fmt_opt(s.mean_est_error),
            fmt_opt(s.sd_est_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-iteration clustering metrics, for misclustering-vs-iteration plots.
pub fn write_misclustering(path: &Path, grid: &GridResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["variant", "trial", "iter", "A_s", "G_s", "G_s_U", "Lambda_s"])?;
    for t in &grid.trials {
        for c in &t.clustering {
            let Ok(o) = &c.outcome else { continue };
            for r in &o.history {
                w.write_record([
                    c.variant.clone(),
                    t.trial.to_string(),
                    r.iteration.to_string(),
                    fmt(r.a_s),
                    fmt(r.g_s),
                    fmt(r.g_s_u),
                    fmt_opt(r.lambda_s),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_opt_rounds(path: &Path, grid: &GridResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["cell", "trial", "cluster_id", "round", "update_norm", "distance_to_truth"])?;
    for t in &grid.trials {
        for c in &t.cells {
            let Ok(r) = &c.outcome else { continue };
            for k in &r.clusters {
                for ((round, norm), dist) in k.rounds.iter().zip(&k.distance_to_truth) {
                    w.write_record([
                        c.cell.clone(),
                        t.trial.to_string(),
                        k.cluster.to_string(),
                        round.to_string(),
                        fmt(*norm),
                        fmt(*dist),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_failures(path: &Path, grid: &GridResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["cell", "trial", "message"])?;
    for t in &grid.trials {
        for c in &t.cells {
            if let Err(msg) = &c.outcome {
                w.write_record([c.cell.as_str(), &t.trial.to_string(), msg])?;
            }
        }
        for c in &t.clustering {
            if let Err(msg) = &c.outcome {
                w.write_record([c.variant.as_str(), &t.trial.to_string(), msg])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes every result file into `dir` (created if missing) and returns the
/// paths written.
pub fn write_all(dir: &Path, run_id: &str, grid: &GridResult) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [RESULTS_FILE, SUMMARY_FILE, MISCLUSTERING_FILE, OPT_ROUNDS_FILE, FAILURES_FILE];
    write_results(&dir.join(RESULTS_FILE), run_id, grid)?;
    write_summary(&dir.join(SUMMARY_FILE), grid)?;
    write_misclustering(&dir.join(MISCLUSTERING_FILE), grid)?;
    write_opt_rounds(&dir.join(OPT_ROUNDS_FILE), grid)?;
    write_failures(&dir.join(FAILURES_FILE), grid)?;
    Ok(files.iter().map(|f| dir.join(f)).collect())
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
