//! End-to-end experiments: fleet, Stage I local solves, Stage II clustering,
//! Stage III per-cluster optimization, and evaluation against ground truth.
//!
//! One trial builds one fleet and shares it across every (clusterer,
//! optimizer) cell, so cells within a trial are paired comparisons.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    centers_from_labels, edge_cut_cluster, iterfilter_2cluster, knn_noise_scale, random_init, run_lloyd_variant,
    warm_start_init, ClusteringState, LloydVariant, DEFAULT_TRIM_C,
};
use crate::datagen::{
    default_gamma, generate_fleet, ingest_threshold_graph, read_points_csv, AdvNoise, CsvFormat, Fleet, FleetConfig,
    GroundTruth, IngestParams, IngestReport,
};
use crate::distopt::{
    fed_avg_robust, pooled_step, robust_gd, workers_from_shards, AttackSpec, OptConfig, StopReason,
    DEFAULT_MAX_ROUNDS, DEFAULT_STOP_TOL,
};
use crate::error::{Error, Result, Stage, StageExt};
use crate::localsolve::{default_gd_step, gd_erm, local_erm, online_to_batch, LossSpec, OgdSchedule};
use crate::metrics::{match_centers, mismetrics, MisclusterReport};
use crate::numerics::{streams, trial_seed, Matrix, ModelVector, RngStream};
use crate::robust_stats::AggregatorSpec;

/// Pairwise distances sampled when picking a default ingest threshold.
pub const GAMMA_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum FleetSource {
    Synthetic(FleetConfig),
    Ingest(IngestSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub csv: CsvFormat,
    /// Edge threshold; absent means the 10th percentile of sampled pairwise
    /// distances.
    #[serde(default)]
    pub gamma: Option<f64>,
    pub min_cluster: usize,
    pub shard_size: usize,
    pub n_adv: usize,
    #[serde(default)]
    pub adv_noise: AdvNoise,
}

/// How each machine computes its Stage I model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverSpec {
    /// Exact ERM.
    #[default]
    Erm,
    /// `iters` gradient steps from the origin; `step` defaults to the
    /// machine's own `1/λ_max`.
    Gd {
        iters: usize,
        #[serde(default)]
        step: Option<f64>,
    },
    /// Online-to-batch conversion of projected OGD.
    Ogd {
        #[serde(flatten)]
        schedule: OgdSchedule,
    },
}

/// Where the Trimmed K-means noise scale comes from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseScale {
    /// Fleet-wide nearest-neighbor estimate (see [`knn_noise_scale`]).
    #[default]
    Knn,
    /// Per-bucket median distance to the geometric median.
    BucketMad,
    Fixed { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClustererSpec {
    EdgeCut {
        gamma: f64,
        #[serde(default = "one")]
        min_cluster: usize,
    },
    Lloyd,
    KGeoMedian,
    TrimmedKMeans {
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default)]
        sigma: NoiseScale,
    },
    /// Two symmetric clusters `±θ`, sample-split iterative filtering.
    IterFilter2 {
        batches: usize,
    },
}

fn one() -> usize {
    1
}

fn default_c() -> f64 {
    DEFAULT_TRIM_C
}

impl ClustererSpec {
    pub fn short_name(&self) -> &'static str {
        match self {
            ClustererSpec::EdgeCut { .. } => "EC",
            ClustererSpec::Lloyd => "KM",
            ClustererSpec::KGeoMedian => "KGM",
            ClustererSpec::TrimmedKMeans { .. } => "TKM",
            ClustererSpec::IterFilter2 { .. } => "IF2",
        }
    }

    /// Parses the short names used on the command line.
    pub fn from_short_name(name: &str) -> Option<Self> {
        Some(match name.to_ascii_uppercase().as_str() {
            "KM" | "LLOYD" => ClustererSpec::Lloyd,
            "KGM" => ClustererSpec::KGeoMedian,
            "TKM" => ClustererSpec::TrimmedKMeans {
                c: DEFAULT_TRIM_C,
                sigma: NoiseScale::Knn,
            },
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    SampleMean,
    /// `beta` defaults to the fleet's Byzantine fraction.
    TrimmedMean {
        #[serde(default)]
        beta: Option<f64>,
    },
    CoordMedian,
    GeoMedian,
    IterFilter,
    /// Federated averaging with trimmed-mean model aggregation.
    FedAvg {
        #[serde(default = "default_local_steps")]
        local_steps: usize,
        #[serde(default)]
        beta: Option<f64>,
    },
}

fn default_local_steps() -> usize {
    5
}

impl OptimizerSpec {
    pub fn short_name(&self) -> &'static str {
        match self {
            OptimizerSpec::SampleMean => "SM",
            OptimizerSpec::TrimmedMean { .. } => "TM",
            OptimizerSpec::CoordMedian => "MED",
            OptimizerSpec::GeoMedian => "GM",
            OptimizerSpec::IterFilter => "IF",
            OptimizerSpec::FedAvg { .. } => "FA",
        }
    }

    pub fn from_short_name(name: &str) -> Option<Self> {
        Some(match name.to_ascii_uppercase().as_str() {
            "SM" => OptimizerSpec::SampleMean,
            "TM" => OptimizerSpec::TrimmedMean { beta: None },
            "MED" => OptimizerSpec::CoordMedian,
            "GM" => OptimizerSpec::GeoMedian,
            "IF" => OptimizerSpec::IterFilter,
            "FA" => OptimizerSpec::FedAvg {
                local_steps: default_local_steps(),
                beta: None,
            },
            _ => return None,
        })
    }

    /// Aggregator and local step count, with `default_beta` filling an unset β.
    fn resolve(&self, default_beta: f64) -> (AggregatorSpec, usize) {
        match self {
            OptimizerSpec::SampleMean => (AggregatorSpec::SampleMean, 1),
            OptimizerSpec::TrimmedMean { beta } => (
                AggregatorSpec::TrimmedMean {
                    beta: beta.unwrap_or(default_beta),
                },
                1,
            ),
            OptimizerSpec::CoordMedian => (AggregatorSpec::CoordMedian, 1),
            OptimizerSpec::GeoMedian => (AggregatorSpec::geo_median(), 1),
            OptimizerSpec::IterFilter => (AggregatorSpec::iter_filter(), 1),
            OptimizerSpec::FedAvg { local_steps, beta } => (
                AggregatorSpec::TrimmedMean {
                    beta: beta.unwrap_or(default_beta),
                },
                *local_steps,
            ),
        }
    }

    /// Overrides β where the optimizer has one.
    pub fn with_beta(self, b: f64) -> Self {
        match self {
            OptimizerSpec::TrimmedMean { .. } => OptimizerSpec::TrimmedMean { beta: Some(b) },
            OptimizerSpec::FedAvg { local_steps, .. } => OptimizerSpec::FedAvg {
                local_steps,
                beta: Some(b),
            },
            other => other,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// A fixed fraction of honest machines start with their true label.
    WarmStart { correct_fraction: f64 },
    /// `K` distinct random machines as initial centers.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringSettings {
    pub init: InitSpec,
    #[serde(default = "default_cluster_iters")]
    pub max_iter: usize,
    pub clusterers: Vec<ClustererSpec>,
}

fn default_cluster_iters() -> usize {
    15
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationSettings {
    pub optimizers: Vec<OptimizerSpec>,
    /// Constant step; absent means `1/λ_max` of each cluster's pooled Hessian.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default)]
    pub attack: AttackSpec,
}

fn default_rounds() -> usize {
    DEFAULT_MAX_ROUNDS
}

fn default_stop_tol() -> f64 {
    DEFAULT_STOP_TOL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    pub fleet: FleetSource,
    /// Defaults to squared error for synthetic fleets and to the location
    /// loss for ingested ones.
    #[serde(default)]
    pub loss: Option<LossSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    pub clustering: ClusteringSettings,
    pub optimization: OptimizationSettings,
    /// Also run Stage III on the true clusters, as cells `ORACLE+<opt>`.
    #[serde(default)]
    pub oracle: bool,
}

fn default_name() -> String {
    "experiment".to_string()
}

impl ExperimentConfig {
    pub fn loss(&self) -> LossSpec {
        self.loss.unwrap_or(match self.fleet {
            FleetSource::Synthetic(_) => LossSpec::SquaredError,
            FleetSource::Ingest(_) => LossSpec::LocationSquared,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.clustering.clusterers.is_empty() || self.optimization.optimizers.is_empty() {
            return Err(Error::config("clusterer and optimizer lists must be non-empty"));
        }
        match &self.fleet {
            FleetSource::Synthetic(f) => {
                f.validate()?;
                let iterfilter = self
                    .clustering
                    .clusterers
                    .iter()
                    .any(|c| matches!(c, ClustererSpec::IterFilter2 { .. }));
                if iterfilter && f.k != 2 {
                    return Err(Error::config("iter_filter2 clustering needs k = 2"));
                }
            }
            FleetSource::Ingest(s) => {
                if s.shard_size == 0 {
                    return Err(Error::config("shard_size must be at least 1"));
                }
                if s.gamma.is_some_and(|g| !(g > 0.0)) {
                    return Err(Error::config("gamma must be positive"));
                }
            }
        }
        if let InitSpec::WarmStart { correct_fraction } = self.clustering.init {
            if !(0.0..=1.0).contains(&correct_fraction) {
                return Err(Error::config("warm-start correct_fraction must lie in [0, 1]"));
            }
        }
        for c in &self.clustering.clusterers {
            match c {
                ClustererSpec::TrimmedKMeans { c, sigma } => {
                    if !(*c > 0.0) {
                        return Err(Error::config("trimming constant C must be positive"));
                    }
                    if let NoiseScale::Fixed { value } = sigma {
                        if !(*value >= 0.0) {
                            return Err(Error::config("fixed noise scale must be >= 0"));
                        }
                    }
                }
                ClustererSpec::EdgeCut { gamma, .. } if !(*gamma > 0.0) => {
                    return Err(Error::config("edge-cut gamma must be positive"));
                }
                ClustererSpec::IterFilter2 { batches } if *batches == 0 => {
                    return Err(Error::config("iter_filter2 needs at least one batch"));
                }
                _ => {}
            }
        }
        if let Some(s) = self.optimization.step_size {
            if !(s > 0.0) {
                return Err(Error::config("step_size must be positive"));
            }
        }
        for o in &self.optimization.optimizers {
            let (agg, e) = o.resolve(0.0);
            agg.validate()?;
            if e == 0 {
                return Err(Error::config("fed_avg local_steps must be at least 1"));
            }
        }
        if let SolverSpec::Gd { step: Some(s), .. } = self.solver {
            if !(s > 0.0) {
                return Err(Error::config("solver step must be positive"));
            }
        }
        Ok(())
    }

    pub fn cell_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.clustering.clusterers {
            for o in &self.optimization.optimizers {
                out.push(format!("{}+{}", c.short_name(), o.short_name()));
            }
        }
        if self.oracle {
            for o in &self.optimization.optimizers {
                out.push(format!("ORACLE+{}", o.short_name()));
            }
        }
        out
    }
}

/// Stage I: one local model per machine, in machine order.
pub fn stage_erms(fleet: &Fleet, solver: &SolverSpec, loss: LossSpec) -> Result<Vec<ModelVector>> {
    fleet
        .shards
        .par_iter()
        .map(|shard| match solver {
            SolverSpec::Erm => local_erm(shard, loss),
            SolverSpec::Gd { iters, step } => {
                let step = match step {
                    Some(s) => *s,
                    None => default_gd_step(shard, loss)?,
                };
                gd_erm(shard, loss, step, *iters)
            }
            SolverSpec::Ogd { schedule } => online_to_batch(shard, loss, schedule),
        })
        .collect::<Result<Vec<_>>>()
        .stage(Stage::LocalSolve)
}

/// Initial clustering state for the Lloyd-type clusterers.
pub fn initial_state(erms: &[ModelVector], truth: &GroundTruth, init: &InitSpec, seed: u64) -> Result<ClusteringState> {
    let mut rng = RngStream::new(seed, streams::CLUSTER_INIT);
    match init {
        InitSpec::WarmStart { correct_fraction } => warm_start_init(erms, truth, *correct_fraction, &mut rng),
        InitSpec::Random => random_init(erms, truth.k(), &mut rng),
    }
    .stage(Stage::Clustering)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterOutcome {
    pub state: ClusteringState,
    /// Per-iteration metrics, empty when the estimated K differs from the
    /// true K.
    pub history: Vec<MisclusterReport>,
    /// Noise scale used for trimming, if any.
    pub sigma_hat: Option<f64>,
}

/// Stage II for one clusterer.
pub fn stage_cluster(
    erms: &[ModelVector],
    truth: &GroundTruth,
    init: &ClusteringState,
    spec: &ClustererSpec,
    max_iter: usize,
) -> Result<ClusterOutcome> {
    let run = |variant: LloydVariant, sigma_hat: Option<f64>| -> Result<ClusterOutcome> {
        let (state, history) = run_lloyd_variant(erms, init.clone(), &variant, max_iter, Some(truth))?;
        Ok(ClusterOutcome {
            state,
            history,
            sigma_hat,
        })
    };
    let out = match spec {
        ClustererSpec::Lloyd => run(LloydVariant::Lloyd, None),
        ClustererSpec::KGeoMedian => run(LloydVariant::KGeoMedian, None),
        ClustererSpec::TrimmedKMeans { c, sigma } => {
            let sigma_hat = match sigma {
                NoiseScale::Knn => {
                    let k = init.k().max(1);
                    Some(knn_noise_scale(erms, erms.len().div_ceil(2 * k))?)
                }
                NoiseScale::BucketMad => None,
                NoiseScale::Fixed { value } => Some(*value),
            };
            run(LloydVariant::TrimmedKMeans { sigma_hat, c: *c }, sigma_hat)
        }
        ClustererSpec::EdgeCut { gamma, min_cluster } => {
            let state = edge_cut_cluster(erms, *gamma, *min_cluster)?;
            let history = if state.k() == truth.k() {
                vec![mismetrics(&state, truth)?]
            } else {
                Vec::new()
            };
            Ok(ClusterOutcome {
                state,
                history,
                sigma_hat: None,
            })
        }
        ClustererSpec::IterFilter2 { batches } => {
            if init.k() != 2 {
                return Err(Error::config("iter_filter2 needs two clusters")).stage(Stage::Clustering);
            }
            let theta0: ModelVector = init.centers[0].sub(&init.centers[1]).scaled(0.5);
            let (theta, signs) = iterfilter_2cluster(erms, &theta0, *batches, &AggregatorSpec::iter_filter())?;
            let state = ClusteringState {
                labels: signs.iter().map(|&s| if s > 0 { 0 } else { 1 }).collect(),
                centers: vec![theta.clone(), theta.scaled(-1.0)],
                trimmed: vec![false; erms.len()],
                iteration: *batches,
            };
            let history = vec![mismetrics(init, truth)?, mismetrics(&state, truth)?];
            Ok(ClusterOutcome {
                state,
                history,
                sigma_hat: None,
            })
        }
    };
    out.stage(Stage::Clustering)
}

/// Stage II with known honest identities: honest machines get their true
/// cluster, Byzantine machines the cluster whose mean local model is nearest.
pub fn oracle_clustering(erms: &[ModelVector], truth: &GroundTruth) -> ClusteringState {
    let k = truth.k();
    let provisional: Vec<usize> = truth.labels.iter().map(|l| l.unwrap_or(0)).collect();
    let honest_only: Vec<usize> = truth.honest_indices().collect();
    let honest_erms: Vec<&ModelVector> = honest_only.iter().map(|&i| &erms[i]).collect();
    let honest_labels: Vec<usize> = honest_only.iter().map(|&i| provisional[i]).collect();
    let centers = centers_from_labels(&honest_erms, &honest_labels, &truth.centers);
    let labels = truth
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| l.unwrap_or_else(|| crate::clustering::nearest(&erms[i], &centers)))
        .collect::<Vec<_>>();
    let centers = centers_from_labels(erms, &labels, &centers);
    debug_assert_eq!(centers.len(), k);
    ClusteringState {
        trimmed: vec![false; labels.len()],
        labels,
        centers,
        iteration: 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterOpt {
    pub cluster: usize,
    pub machines: usize,
    pub w: ModelVector,
    pub stop: Option<StopReason>,
    pub step_size: Option<f64>,
    /// `(round, update_norm)` per round.
    pub rounds: Vec<(usize, f64)>,
    /// Distance of each round's iterate to the matched true center.
    pub distance_to_truth: Vec<f64>,
}

/// Stage III: optimizes every estimated cluster independently, starting from
/// its Stage II center. A cluster with no machines keeps its center.
pub fn stage_optimize(
    fleet: &Fleet,
    state: &ClusteringState,
    optimizer: &OptimizerSpec,
    settings: &OptimizationSettings,
    loss: LossSpec,
    default_beta: f64,
    seed: u64,
) -> Result<Vec<ClusterOpt>> {
    let (aggregator, local_steps) = optimizer.resolve(default_beta);
    (0..state.k())
        .into_par_iter()
        .map(|h| {
            let members: Vec<_> = fleet
                .shards
                .iter()
                .zip(&state.labels)
                .filter(|(_, &l)| l == h)
                .map(|(s, _)| s)
                .collect();
            let init = &state.centers[h];
            if members.is_empty() {
                return Ok(ClusterOpt {
                    cluster: h,
                    machines: 0,
                    w: init.clone(),
                    stop: None,
                    step_size: None,
                    rounds: Vec::new(),
                    distance_to_truth: Vec::new(),
                });
            }
            let mut workers = workers_from_shards(members.iter().copied(), loss, seed)?;
            let step = match settings.step_size {
                Some(s) => s,
                None => pooled_step(&workers)?,
            };
            let cfg = OptConfig {
                step_size: step,
                max_rounds: settings.max_rounds,
                aggregator: aggregator.clone(),
                local_steps,
                stop_tol: settings.stop_tol,
            };
            let out = if local_steps > 1 || matches!(optimizer, OptimizerSpec::FedAvg { .. }) {
                fed_avg_robust(&mut workers, &cfg, &settings.attack, init)?
            } else {
                robust_gd(&mut workers, &cfg, &settings.attack, init)?
            };
            Ok(ClusterOpt {
                cluster: h,
                machines: workers.len(),
                rounds: out.trajectory.iter().map(|r| (r.round, r.update_norm)).collect(),
                distance_to_truth: out
                    .trajectory
                    .iter()
                    .map(|r| nearest_truth_distance(&r.w, &fleet.truth))
                    .collect(),
                w: out.w,
                stop: Some(out.stop),
                step_size: Some(step),
            })
        })
        .collect::<Result<Vec<_>>>()
        .stage(Stage::Optimization)
}

fn nearest_truth_distance(w: &[f64], truth: &GroundTruth) -> f64 {
    truth.centers.iter().map(|c| c.dist(w)).fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `max ‖ŵ − w*‖/√d` over matched clusters; `None` when nothing matched.
    pub est_error: Option<f64>,
    /// True cluster matched to each estimated cluster.
    pub matching: Vec<Option<usize>>,
    /// Estimated clusters left unmatched.
    pub unmatched: usize,
}

/// Matches estimated models to true centers and reports the worst error.
pub fn evaluate(w_hats: &[ModelVector], truth: &GroundTruth) -> Evaluation {
    let matching = match_centers(w_hats, &truth.centers);
    let mut est_error: Option<f64> = None;
    for (h, m) in matching.iter().enumerate() {
        if let Some(g) = m {
            let d = truth.centers[*g].dim().max(1) as f64;
            let e = w_hats[h].dist(&truth.centers[*g]) / d.sqrt();
            est_error = Some(est_error.map_or(e, |x: f64| x.max(e)));
        }
    }
    Evaluation {
        est_error,
        unmatched: matching.iter().filter(|m| m.is_none()).count(),
        matching,
    }
}

/// Result of one (clusterer, optimizer) cell in one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub cell: String,
    pub w_hats: Vec<ModelVector>,
    pub evaluation: Evaluation,
    pub clusters: Vec<ClusterOpt>,
    /// Wall time of Stage III for this cell; not written to result files.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl RunResult {
    pub fn est_error(&self) -> Option<f64> {
        self.evaluation.est_error
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub cell: String,
    pub outcome: std::result::Result<RunResult, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringRecord {
    pub variant: String,
    pub outcome: std::result::Result<ClusterOutcome, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub cells: Vec<CellRecord>,
    pub clustering: Vec<ClusteringRecord>,
    pub ingest: Option<IngestReport>,
    /// Set when the trial failed before any cell could run.
    pub failure: Option<String>,
}

/// An experiment with its external inputs loaded.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    points: Option<Matrix>,
    gamma: Option<f64>,
}

impl Experiment {
    /// Validates the config and reads the ingest table, if any.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let points = match &config.fleet {
            FleetSource::Ingest(spec) => {
                let file = std::fs::File::open(&spec.path).map_err(|e| {
                    Error::data(format!("cannot open {}: {e}", spec.path.display()))
                })?;
                Some(read_points_csv(std::io::BufReader::new(file), &spec.csv)?)
            }
            FleetSource::Synthetic(_) => None,
        };
        Self::assemble(config, points)
    }

    /// Like [`new`](Self::new) with the ingest table supplied in memory.
    pub fn with_points(config: ExperimentConfig, points: Matrix) -> Result<Self> {
        config.validate()?;
        Self::assemble(config, Some(points))
    }

    fn assemble(config: ExperimentConfig, points: Option<Matrix>) -> Result<Self> {
        let gamma = match (&config.fleet, &points) {
            (FleetSource::Ingest(spec), Some(p)) => Some(match spec.gamma {
                Some(g) => g,
                None => default_gamma(p, GAMMA_SAMPLES, config.seed)?,
            }),
            _ => None,
        };
        Ok(Experiment { config, points, gamma })
    }

    /// Edge threshold used for ingestion (explicit or default).
    pub fn ingest_gamma(&self) -> Option<f64> {
        self.gamma
    }

    /// Fleet for the given trial seed.
    pub fn fleet(&self, seed: u64) -> Result<(Fleet, Option<IngestReport>)> {
        match &self.config.fleet {
            FleetSource::Synthetic(f) => {
                let mut f = f.clone();
                f.seed = seed;
                Ok((generate_fleet(&f)?, None))
            }
            FleetSource::Ingest(spec) => {
                let points = self.points.as_ref().ok_or_else(|| Error::data("ingest table not loaded"))?;
                let params = IngestParams {
                    gamma: self.gamma.expect("gamma resolved with the points"),
                    min_cluster: spec.min_cluster,
                    shard_size: spec.shard_size,
                    n_adv: spec.n_adv,
                    adv_noise: spec.adv_noise.clone(),
                    seed,
                };
                let ing = ingest_threshold_graph(points, &params)?;
                Ok((ing.fleet, Some(ing.report)))
            }
        }
    }

    /// Byzantine fraction used as the default trimming level.
    pub fn default_beta(&self, fleet: &Fleet) -> f64 {
        match &self.config.fleet {
            FleetSource::Synthetic(f) => f.alpha,
            FleetSource::Ingest(_) => {
                let byz = fleet.truth.labels.iter().filter(|l| l.is_none()).count();
                byz as f64 / fleet.m().max(1) as f64
            }
        }
    }

    /// Runs every cell of one trial on one shared fleet.
    pub fn run_trial(&self, trial: usize) -> TrialResult {
        let seed = trial_seed(self.config.seed, trial as u64);
        match self.run_trial_inner(trial, seed) {
            Ok(r) => r,
            Err(e) => TrialResult {
                trial,
                seed,
                cells: self
                    .config
                    .cell_names()
                    .into_iter()
                    .map(|cell| CellRecord {
                        cell,
                        outcome: Err(e.to_string()),
                    })
                    .collect(),
                clustering: Vec::new(),
                ingest: None,
                failure: Some(e.to_string()),
            },
        }
    }

    fn run_trial_inner(&self, trial: usize, seed: u64) -> Result<TrialResult> {
        let cfg = &self.config;
        let loss = cfg.loss();
        let (fleet, ingest) = self.fleet(seed).stage(Stage::Fleet)?;
        let erms = stage_erms(&fleet, &cfg.solver, loss)?;
        let init = initial_state(&erms, &fleet.truth, &cfg.clustering.init, seed)?;
        let beta = self.default_beta(&fleet);

        let mut stage2: Vec<(String, std::result::Result<ClusteringState, String>)> = Vec::new();
        let mut clustering = Vec::new();
        for spec in &cfg.clustering.clusterers {
            let out = stage_cluster(&erms, &fleet.truth, &init, spec, cfg.clustering.max_iter);
            stage2.push((
                spec.short_name().to_string(),
                out.as_ref().map(|o| o.state.clone()).map_err(|e| e.to_string()),
            ));
            clustering.push(ClusteringRecord {
                variant: spec.short_name().to_string(),
                outcome: out.map_err(|e| e.to_string()),
            });
        }
        if cfg.oracle {
            stage2.push(("ORACLE".to_string(), Ok(oracle_clustering(&erms, &fleet.truth))));
        }

        let mut cells = Vec::new();
        for (cname, state) in &stage2 {
            for opt in &cfg.optimization.optimizers {
                let cell = format!("{cname}+{}", opt.short_name());
                let outcome = match state {
                    Err(e) => Err(e.clone()),
                    Ok(state) => {
                        let start = Instant::now();
                        stage_optimize(&fleet, state, opt, &cfg.optimization, loss, beta, seed)
                            .map(|clusters| {
                                let w_hats: Vec<ModelVector> = clusters.iter().map(|c| c.w.clone()).collect();
                                RunResult {
                                    cell: cell.clone(),
                                    evaluation: evaluate(&w_hats, &fleet.truth),
                                    w_hats,
                                    clusters,
                                    wall_seconds: start.elapsed().as_secs_f64(),
                                }
                            })
                            .map_err(|e| e.to_string())
                    }
                };
                cells.push(CellRecord { cell, outcome });
            }
        }
        Ok(TrialResult {
            trial,
            seed,
            cells,
            clustering,
            ingest,
            failure: None,
        })
    }

    /// All trials, in trial order, run in parallel.
    pub fn run_grid(&self) -> GridResult {
        let trials: Vec<TrialResult> = (0..self.config.trials)
            .into_par_iter()
            .map(|t| self.run_trial(t))
            .collect();
        GridResult::new(&self.config, trials)
    }
}

/// Runs trial 0 of the config.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<TrialResult> {
    Ok(Experiment::new(config.clone())?.run_trial(0))
}

/// Validates, loads and runs every trial.
pub fn run_grid(config: &ExperimentConfig) -> Result<GridResult> {
    Ok(Experiment::new(config.clone())?.run_grid())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub mean_est_error: Option<f64>,
    /// Sample standard deviation (`n − 1` denominator; 0 for one trial).
    pub sd_est_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub trials: Vec<TrialResult>,
    pub summary: Vec<CellSummary>,
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, sd))
}

impl GridResult {
    pub fn new(config: &ExperimentConfig, trials: Vec<TrialResult>) -> Self {
        let summary = config
            .cell_names()
            .into_iter()
            .map(|cell| {
                let mut errs = Vec::new();
                let mut failed = 0;
                for t in &trials {
                    match t.cells.iter().find(|c| c.cell == cell).map(|c| &c.outcome) {
                        Some(Ok(r)) => match r.est_error() {
                            Some(e) => errs.push(e),
                            None => failed += 1,
                        },
                        _ => failed += 1,
                    }
                }
                let ms = mean_sd(&errs);
                CellSummary {
                    cell,
                    trials_ok: errs.len(),
                    trials_failed: failed,
                    mean_est_error: ms.map(|m| m.0),
                    sd_est_error: ms.map(|m| m.1),
                }
            })
            .collect();
        GridResult { trials, summary }
    }

    /// Per-trial est_error of a cell (failed trials skipped).
    pub fn errors(&self, cell: &str) -> Vec<f64> {
        self.trials
            .iter()
            .filter_map(|t| t.cells.iter().find(|c| c.cell == cell))
            .filter_map(|c| c.outcome.as_ref().ok().and_then(|r| r.est_error()))
            .collect()
    }

    pub fn cell_summary(&self, cell: &str) -> Option<&CellSummary> {
        self.summary.iter().find(|s| s.cell == cell)
    }

    /// Final clustering metrics of one variant in every trial.
    pub fn final_misclustering(&self, variant: &str) -> Vec<Option<MisclusterReport>> {
        self.trials
            .iter()
            .map(|t| {
                t.clustering
                    .iter()
                    .find(|c| c.variant == variant)
                    .and_then(|c| c.outcome.as_ref().ok())
                    .and_then(|o| o.history.last().cloned())
            })
            .collect()
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (0: rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot build a pool of {threads} threads: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            name: "tiny".into(),
            seed: 3,
            trials: 2,
            fleet: FleetSource::Synthetic(FleetConfig {
                m: 20,
                n: 30,
                d: 5,
                k: 2,
                alpha: 0.1,
                sigma: 0.5,
                adversary: Default::default(),
                seed: 0,
            }),
            loss: None,
            solver: SolverSpec::Erm,
            clustering: ClusteringSettings {
                init: InitSpec::WarmStart { correct_fraction: 0.6 },
                max_iter: 10,
                clusterers: vec![ClustererSpec::Lloyd, ClustererSpec::TrimmedKMeans { c: 2.0, sigma: NoiseScale::Knn }],
            },
            optimization: OptimizationSettings {
                optimizers: vec![OptimizerSpec::SampleMean, OptimizerSpec::TrimmedMean { beta: None }],
                step_size: None,
                max_rounds: 100,
                stop_tol: 1e-8,
                attack: AttackSpec::OwnCorruptData,
            },
            oracle: true,
        }
    }

    #[test]
    fn noiseless_pipeline_is_exact() {
        let mut cfg = tiny_config();
        cfg.fleet = FleetSource::Synthetic(FleetConfig {
            m: 20,
            n: 30,
            d: 5,
            k: 2,
            alpha: 0.0,
            sigma: 0.0,
            adversary: Default::default(),
            seed: 0,
        });
        cfg.clustering.init = InitSpec::WarmStart { correct_fraction: 1.0 };
        cfg.optimization.max_rounds = 2000;
        let g = run_grid(&cfg).unwrap();
        for s in &g.summary {
            assert!(s.mean_est_error.unwrap() <= 1e-6, "{s:?}");
        }
    }

    #[test]
    fn grid_shape() {
        let g = run_grid(&tiny_config()).unwrap();
        assert_eq!(g.summary.len(), 6);
        assert_eq!(g.trials.len(), 2);
        assert!(g.summary.iter().all(|s| s.trials_ok == 2));
    }

    #[test]
    fn bad_config_is_rejected() {
        let mut cfg = tiny_config();
        cfg.optimization.optimizers.clear();
        assert!(run_grid(&cfg).unwrap_err().is_config());
        let mut cfg = tiny_config();
        cfg.clustering.clusterers = vec![ClustererSpec::IterFilter2 { batches: 2 }];
        if let FleetSource::Synthetic(f) = &mut cfg.fleet {
            f.k = 3;
        }
        assert!(run_grid(&cfg).unwrap_err().is_config());
    }

    #[test]
    fn stage_failures_are_recorded_not_fatal() {
        let mut cfg = tiny_config();
        cfg.solver = SolverSpec::Gd { iters: 500, step: Some(100.0) };
        let g = run_grid(&cfg).unwrap();
        assert!(g.trials.iter().all(|t| t.failure.as_deref().is_some_and(|m| m.contains("stage I"))));
        assert!(g.summary.iter().all(|s| s.trials_failed == 2 && s.mean_est_error.is_none()));
    }

    #[test]
    fn sample_sd() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[7.0]), Some((7.0, 0.0)));
    }
}
