//! Fleet construction: the synthetic mixture-of-linear-regressions fleet and
//! the threshold-graph ingestion of an external feature table.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::threshold_components;
use crate::numerics::{mean_of, streams, Matrix, ModelVector, RngStream};

/// How Byzantine machines pick the coefficients they generate data from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversaryKind {
    /// `scale · Bernoulli(1/2)` per coordinate.
    ScaledBernoulli { scale: f64 },
    /// `N(0, std²)` per coordinate.
    Gaussian { std: f64 },
}

impl Default for AdversaryKind {
    fn default() -> Self {
        AdversaryKind::ScaledBernoulli { scale: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    /// Number of machines.
    pub m: usize,
    /// Samples per machine.
    pub n: usize,
    /// Dimension.
    pub d: usize,
    /// Number of clusters.
    pub k: usize,
    /// Byzantine fraction, in `[0, 0.5)`.
    pub alpha: f64,
    /// Observation noise standard deviation.
    pub sigma: f64,
    #[serde(default)]
    pub adversary: AdversaryKind,
    #[serde(default)]
    pub seed: u64,
}

impl FleetConfig {
    /// `⌈αm⌉`, guarded against representation error in `α·m`.
    pub fn byzantine_count(&self) -> usize {
        let raw = self.alpha * self.m as f64;
        ((raw - 1e-9).ceil().max(0.0) as usize).min(self.m)
    }

    /// `⌊(1−α)m⌋`; together with [`byzantine_count`](Self::byzantine_count)
    /// this always sums to `m`.
    pub fn honest_count(&self) -> usize {
        self.m - self.byzantine_count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.d == 0 || self.k == 0 {
            return Err(Error::config("m, n, d and k must all be positive"));
        }
        if !(0.0..0.5).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must lie in [0, 0.5), got {}", self.alpha)));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::config(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if self.k > self.honest_count() {
            return Err(Error::config(format!(
                "k = {} exceeds the {} honest machines",
                self.k,
                self.honest_count()
            )));
        }
        match self.adversary {
            AdversaryKind::ScaledBernoulli { scale } if !scale.is_finite() => {
                Err(Error::config("adversary scale must be finite"))
            }
            AdversaryKind::Gaussian { std } if !std.is_finite() || std < 0.0 => {
                Err(Error::config("adversary std must be finite and >= 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Ground-truth role of a machine. Only fleet construction, the attack
/// injection layer and the metrics read it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Role {
    Honest { cluster: usize },
    Byzantine,
}

impl Role {
    pub fn is_byzantine(&self) -> bool {
        matches!(self, Role::Byzantine)
    }
}

/// One machine's local data. For regression shards `y` holds the responses;
/// for point (location) shards `y` is empty and the rows of `x` are the points.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerShard {
    pub machine_id: usize,
    pub role: Role,
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl WorkerShard {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub centers: Vec<ModelVector>,
    /// True cluster per machine; `None` marks a Byzantine machine.
    pub labels: Vec<Option<usize>>,
}

impl GroundTruth {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn honest_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, l)| l.is_some()).map(|(i, _)| i)
    }

    pub fn honest_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Smallest pairwise distance between true centers (`None` for one center).
    pub fn min_separation(&self) -> Option<f64> {
        let k = self.centers.len();
        let mut best: Option<f64> = None;
        for g in 0..k {
            for h in g + 1..k {
                let dgh = self.centers[g].dist(&self.centers[h]);
                best = Some(best.map_or(dgh, |b| b.min(dgh)));
            }
        }
        best
    }
}

/// A generated or ingested fleet.
#[derive(Clone, Debug, PartialEq)]
pub struct Fleet {
    pub shards: Vec<WorkerShard>,
    pub truth: GroundTruth,
    /// Coefficients each machine generated its data from (empty for ingested
    /// fleets). Ground-truth metadata, like `role`.
    pub generators: Vec<ModelVector>,
}

impl Fleet {
    pub fn m(&self) -> usize {
        self.shards.len()
    }

    pub fn dim(&self) -> usize {
        self.truth.centers.first().map_or(0, |c| c.dim())
    }
}

fn bernoulli_vector(rng: &mut RngStream, d: usize, scale: f64) -> ModelVector {
    (0..d).map(|_| if rng.bernoulli_half() { scale } else { 0.0 }).collect()
}

fn regression_shard(rng: &mut RngStream, n: usize, coef: &[f64], sigma: f64) -> (Matrix, Vec<f64>) {
    let d = coef.len();
    let x = Matrix::from_vec(n, d, rng.normal_vec(n * d)).expect("shape is n x d");
    let mut y = x.mul_vec(coef);
    for v in &mut y {
        *v += sigma * rng.normal();
    }
    (x, y)
}

/// Synthetic mixture-of-regressions fleet.
///
/// Cluster coefficients are `Bernoulli(1/2)` per coordinate. Honest machines
/// (ids `0..⌊(1−α)m⌋`) are dealt round-robin to clusters after a shuffle, so
/// cluster sizes differ by at most one. Each honest machine draws
/// `y = Xw*_k + τ` with standard normal rows and `τ ~ N(0, σ²)`. Byzantine
/// machines (the remaining ids) draw their own coefficient vector from
/// `cfg.adversary` and generate data the same way.
pub fn generate_fleet(cfg: &FleetConfig) -> Result<Fleet> {
    cfg.validate()?;
    let honest = cfg.honest_count();

    let mut center_rng = RngStream::new(cfg.seed, streams::FLEET_CENTERS);
    let mut centers: Vec<ModelVector> = Vec::with_capacity(cfg.k);
    while centers.len() < cfg.k {
        let c = bernoulli_vector(&mut center_rng, cfg.d, 1.0);
        // centers must be pairwise distinct; redraw on a (rare, small-d) collision
        if !centers.contains(&c) {
            centers.push(c);
        } else if cfg.d < 64 && centers.len() >= (1usize << cfg.d) {
            return Err(Error::config(format!(
                "cannot draw {} distinct binary centers in dimension {}",
                cfg.k, cfg.d
            )));
        }
    }

    let mut order: Vec<usize> = (0..honest).collect();
    RngStream::new(cfg.seed, streams::FLEET_ASSIGNMENT).shuffle(&mut order);
    let mut labels: Vec<Option<usize>> = vec![None; cfg.m];
    for (slot, &machine) in order.iter().enumerate() {
        labels[machine] = Some(slot % cfg.k);
    }

    let mut shards = Vec::with_capacity(cfg.m);
    let mut generators = Vec::with_capacity(cfg.m);
    for (machine, label) in labels.iter().enumerate() {
        let mut rng = RngStream::new(cfg.seed, streams::MACHINE_BASE + machine as u64);
        let (role, coef) = match label {
            Some(k) => (Role::Honest { cluster: *k }, centers[*k].clone()),
            None => {
                let coef = match cfg.adversary {
                    AdversaryKind::ScaledBernoulli { scale } => bernoulli_vector(&mut rng, cfg.d, scale),
                    AdversaryKind::Gaussian { std } => {
                        rng.normal_vec(cfg.d).into_iter().map(|v| v * std).collect()
                    }
                };
                (Role::Byzantine, coef)
            }
        };
        let (x, y) = regression_shard(&mut rng, cfg.n, &coef, cfg.sigma);
        shards.push(WorkerShard {
            machine_id: machine,
            role,
            x,
            y,
        });
        generators.push(coef);
    }

    Ok(Fleet {
        shards,
        truth: GroundTruth { centers, labels },
        generators,
    })
}

/// Perturbation added to the points of an adversarial shard.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdvNoise {
    /// One `Bernoulli(1/2) − 0.5` vector per shard.
    #[default]
    BernoulliCentered,
    /// One `N(0, scale²)` vector per shard.
    Gaussian { scale: f64 },
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestParams {
    pub gamma: f64,
    pub min_cluster: usize,
    pub shard_size: usize,
    pub n_adv: usize,
    #[serde(default)]
    pub adv_noise: AdvNoise,
    #[serde(default)]
    pub seed: u64,
}

impl IngestParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::config(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if self.shard_size == 0 {
            return Err(Error::config("shard_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Sizes of all threshold-graph components, in discovery order.
    pub component_sizes: Vec<usize>,
    /// Sizes of the components kept as clusters.
    pub kept_sizes: Vec<usize>,
    /// Points of kept components that did not fill a whole shard.
    pub dropped_remainder: usize,
    /// Points available to build adversarial shards from.
    pub unused_points: usize,
    /// True when the unused pool was too small and adversarial shards were
    /// drawn with replacement (or from all points when it was empty).
    pub adversary_resampled: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub fleet: Fleet,
    pub report: IngestReport,
}

/// Builds a point-shard fleet from an unlabeled feature table.
///
/// Points closer than `gamma` are joined; components smaller than
/// `min_cluster` are dropped; each kept component becomes a cluster whose
/// center is the mean of its points. Its points are shuffled and cut into
/// shards of `shard_size` (a trailing partial shard is dropped and counted).
/// `n_adv` adversarial shards sample `shard_size` points from the unused pool
/// and add one perturbation vector to all of them.
pub fn ingest_threshold_graph(points: &Matrix, params: &IngestParams) -> Result<Ingested> {
    params.validate()?;
    if points.rows() == 0 {
        return Err(Error::data("no points to ingest"));
    }
    if !points.is_finite() {
        return Err(Error::data("ingested points must be finite"));
    }
    let rows: Vec<&[f64]> = points.row_iter().collect();
    let (labels, sizes) = threshold_components(&rows, params.gamma);

    let kept: Vec<usize> = (0..sizes.len()).filter(|&c| sizes[c] >= params.min_cluster).collect();
    if kept.is_empty() {
        return Err(Error::data(format!(
            "no threshold-graph component has at least {} points (largest: {})",
            params.min_cluster,
            sizes.iter().max().copied().unwrap_or(0)
        )));
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); sizes.len()];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    let mut unused: Vec<usize> = (0..sizes.len())
        .filter(|c| sizes[*c] < params.min_cluster)
        .flat_map(|c| members[c].iter().copied())
        .collect();

    let mut shard_rng = RngStream::new(params.seed, streams::INGEST_SHARDS);
    let mut centers = Vec::with_capacity(kept.len());
    let mut shards = Vec::new();
    let mut truth_labels = Vec::new();
    let mut dropped_remainder = 0;
    for (cluster, &c) in kept.iter().enumerate() {
        let idx = &members[c];
        let pts: Vec<&[f64]> = idx.iter().map(|&i| rows[i]).collect();
        centers.push(mean_of(&pts));
        let mut shuffled = idx.clone();
        shard_rng.shuffle(&mut shuffled);
        let full = shuffled.len() / params.shard_size;
        for s in 0..full {
            let chunk = &shuffled[s * params.shard_size..(s + 1) * params.shard_size];
            shards.push(WorkerShard {
                machine_id: shards.len(),
                role: Role::Honest { cluster },
                x: points.select_rows(chunk),
                y: Vec::new(),
            });
            truth_labels.push(Some(cluster));
        }
        let rest = &shuffled[full * params.shard_size..];
        dropped_remainder += rest.len();
        unused.extend_from_slice(rest);
    }
    unused.sort_unstable();

    let mut adv_rng = RngStream::new(params.seed, streams::INGEST_ADVERSARY);
    let unused_points = unused.len();
    let adversary_resampled = params.n_adv > 0 && unused.len() < params.shard_size;
    let pool: Vec<usize> = if unused.is_empty() { (0..points.rows()).collect() } else { unused };
    let d = points.cols();
    for _ in 0..params.n_adv {
        let chosen: Vec<usize> = if pool.len() >= params.shard_size {
            let mut p = pool.clone();
            // partial Fisher-Yates: first shard_size entries are a uniform sample
            for i in 0..params.shard_size {
                let j = i + adv_rng.below(p.len() - i);
                p.swap(i, j);
            }
            p.truncate(params.shard_size);
            p
        } else {
            (0..params.shard_size).map(|_| pool[adv_rng.below(pool.len())]).collect()
        };
        let shift: Vec<f64> = match &params.adv_noise {
            AdvNoise::BernoulliCentered => {
                (0..d).map(|_| if adv_rng.bernoulli_half() { 0.5 } else { -0.5 }).collect()
            }
            AdvNoise::Gaussian { scale } => adv_rng.normal_vec(d).into_iter().map(|v| v * scale).collect(),
            AdvNoise::None => vec![0.0; d],
        };
        let mut x = points.select_rows(&chosen);
        for r in 0..x.rows() {
            for (v, s) in x.row_mut(r).iter_mut().zip(&shift) {
                *v += s;
            }
        }
        shards.push(WorkerShard {
            machine_id: shards.len(),
            role: Role::Byzantine,
            x,
            y: Vec::new(),
        });
        truth_labels.push(None);
    }

    Ok(Ingested {
        fleet: Fleet {
            shards,
            truth: GroundTruth {
                centers,
                labels: truth_labels,
            },
            generators: Vec::new(),
        },
        report: IngestReport {
            component_sizes: sizes.clone(),
            kept_sizes: kept.iter().map(|&c| sizes[c]).collect(),
            dropped_remainder,
            unused_points,
            adversary_resampled,
        },
    })
}

/// CSV layout of an ingested feature table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvFormat {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub has_header: bool,
    /// Column to ignore (e.g. a relevance label), zero-based.
    #[serde(default)]
    pub label_column: Option<usize>,
}

fn default_delimiter() -> char {
    ','
}

impl Default for CsvFormat {
    fn default() -> Self {
        CsvFormat {
            delimiter: ',',
            has_header: false,
            label_column: None,
        }
    }
}

/// Reads one point per row of plain floats.
pub fn read_points_csv<R: Read>(reader: R, format: &CsvFormat) -> Result<Matrix> {
    if !format.delimiter.is_ascii() {
        return Err(Error::config("csv delimiter must be a single ASCII character"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter as u8)
        .has_headers(format.has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            if Some(col) == format.label_column {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| {
                Error::data(format!("row {}, column {}: cannot parse {:?} as a number", line + 1, col, field))
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::data(format!(
                    "row {} has {} features, expected {}",
                    line + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::data("csv contains no data rows"));
    }
    Matrix::from_rows(&rows)
}

/// Default edge threshold: the 10th percentile of up to `samples` random
/// pairwise distances.
pub fn default_gamma(points: &Matrix, samples: usize, seed: u64) -> Result<f64> {
    let n = points.rows();
    if n < 2 {
        return Err(Error::data("need at least two points to pick a default gamma"));
    }
    let mut rng = RngStream::new(seed, streams::GAMMA_SAMPLING);
    let mut dists: Vec<f64> = (0..samples.max(1))
        .map(|_| {
            let i = rng.below(n);
            let mut j = rng.below(n - 1);
            if j >= i {
                j += 1;
            }
            crate::numerics::dist_sq(points.row(i), points.row(j)).sqrt()
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    let idx = ((dists.len() as f64) * 0.1).floor() as usize;
    Ok(dists[idx.min(dists.len() - 1)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::least_squares;

    fn cfg() -> FleetConfig {
        FleetConfig {
            m: 100,
            n: 100,
            d: 100,
            k: 5,
            alpha: 0.3,
            sigma: 3.0,
            adversary: AdversaryKind::default(),
            seed: 1,
        }
    }

    #[test]
    fn fig2_config_counts() {
        let fleet = generate_fleet(&cfg()).unwrap();
        let byz = fleet.shards.iter().filter(|s| s.role.is_byzantine()).count();
        assert_eq!(byz, 30);
        assert_eq!(fleet.shards.len() - byz, 70);
        assert_eq!(fleet.truth.centers.len(), 5);
        for (s, l) in fleet.shards.iter().zip(&fleet.truth.labels) {
            assert_eq!(s.role.is_byzantine(), l.is_none());
        }
    }

    #[test]
    fn counts_partition_m_for_awkward_alphas() {
        for m in 1..60 {
            for alpha in [0.0, 0.1, 0.15, 0.2, 0.3, 0.33, 0.49] {
                let c = FleetConfig { m, alpha, ..cfg() };
                assert_eq!(c.byzantine_count() + c.honest_count(), m);
                let exact = alpha * m as f64;
                assert!(c.byzantine_count() as f64 >= exact - 1e-9);
                assert!((c.byzantine_count() as f64) < exact + 1.0);
            }
        }
    }

    #[test]
    fn no_byzantine_at_alpha_zero() {
        let fleet = generate_fleet(&FleetConfig { alpha: 0.0, m: 20, n: 10, d: 3, ..cfg() }).unwrap();
        assert!(fleet.truth.labels.iter().all(|l| matches!(l, Some(k) if *k < 5)));
    }

    #[test]
    fn too_many_clusters_is_config_error() {
        let err = generate_fleet(&FleetConfig { m: 6, k: 5, alpha: 0.3, ..cfg() }).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn noiseless_honest_shards_recover_centers() {
        let fleet = generate_fleet(&FleetConfig { sigma: 0.0, m: 12, n: 30, d: 8, k: 3, ..cfg() }).unwrap();
        for s in &fleet.shards {
            if let Role::Honest { cluster } = s.role {
                let w = least_squares(&s.x, &s.y).unwrap();
                for (a, b) in w.iter().zip(fleet.truth.centers[cluster].iter()) {
                    assert!((a - b).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn generator_supports_are_separated() {
        let fleet = generate_fleet(&cfg()).unwrap();
        for (s, g) in fleet.shards.iter().zip(&fleet.generators) {
            let allowed: &[f64] = if s.role.is_byzantine() { &[0.0, 3.0] } else { &[0.0, 1.0] };
            assert!(g.iter().all(|v| allowed.contains(v)));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_fleet(&FleetConfig { m: 10, n: 5, d: 4, k: 2, ..cfg() }).unwrap();
        let b = generate_fleet(&FleetConfig { m: 10, n: 5, d: 4, k: 2, ..cfg() }).unwrap();
        let c = generate_fleet(&FleetConfig { m: 10, n: 5, d: 4, k: 2, seed: 2, ..cfg() }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn round_robin_balances_clusters() {
        let fleet = generate_fleet(&cfg()).unwrap();
        let mut counts = [0usize; 5];
        for l in fleet.truth.labels.iter().flatten() {
            counts[*l] += 1;
        }
        assert_eq!(counts, [14; 5]);
    }

    fn two_blobs(rng: &mut RngStream, per_blob: usize) -> Matrix {
        let mut rows = Vec::new();
        for c in [0.0, 20.0] {
            for _ in 0..per_blob {
                rows.push(vec![c + 0.3 * rng.normal(), 0.3 * rng.normal()]);
            }
        }
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn ingest_two_blobs() {
        let mut rng = RngStream::new(4, 0);
        let pts = two_blobs(&mut rng, 100);
        let params = IngestParams {
            gamma: 3.0,
            min_cluster: 10,
            shard_size: 10,
            n_adv: 3,
            adv_noise: AdvNoise::BernoulliCentered,
            seed: 0,
        };
        let out = ingest_threshold_graph(&pts, &params).unwrap();
        assert_eq!(out.report.kept_sizes, vec![100, 100]);
        assert_eq!(out.fleet.truth.centers.len(), 2);
        let honest = out.fleet.shards.iter().filter(|s| !s.role.is_byzantine()).count();
        assert_eq!(honest, 20);
        assert_eq!(out.fleet.shards.len(), 23);
        // no unused points: adversaries were drawn from the whole table
        assert!(out.report.adversary_resampled);
        for s in &out.fleet.shards {
            if let Role::Honest { cluster } = s.role {
                let c = cluster as f64 * 20.0;
                assert!(s.x.row_iter().all(|r| (r[0] - c).abs() < 5.0));
            }
        }
    }

    #[test]
    fn ingest_zero_gamma_has_no_cluster() {
        let pts = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let params = IngestParams {
            gamma: 0.0,
            min_cluster: 2,
            shard_size: 1,
            n_adv: 0,
            adv_noise: AdvNoise::None,
            seed: 0,
        };
        assert!(matches!(ingest_threshold_graph(&pts, &params), Err(Error::Data(_))));
    }

    #[test]
    fn ingest_counts_remainder() {
        let mut rng = RngStream::new(4, 1);
        let pts = two_blobs(&mut rng, 25);
        let params = IngestParams {
            gamma: 3.0,
            min_cluster: 5,
            shard_size: 10,
            n_adv: 1,
            adv_noise: AdvNoise::None,
            seed: 3,
        };
        let out = ingest_threshold_graph(&pts, &params).unwrap();
        assert_eq!(out.report.dropped_remainder, 10);
        assert_eq!(out.report.unused_points, 10);
        assert!(!out.report.adversary_resampled);
    }

    #[test]
    fn csv_reader_skips_label_and_header() {
        let text = "label;a;b\n1;0.5;2\n0;1.5;-3\n";
        let fmt = CsvFormat {
            delimiter: ';',
            has_header: true,
            label_column: Some(0),
        };
        let m = read_points_csv(text.as_bytes(), &fmt).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 2));
        assert_eq!(m.row(1), &[1.5, -3.0]);
    }

    #[test]
    fn csv_reader_rejects_ragged_rows() {
        let text = "1,2\n3\n";
        assert!(read_points_csv(text.as_bytes(), &CsvFormat::default()).is_err());
    }

    #[test]
    fn default_gamma_is_small_quantile() {
        let mut rng = RngStream::new(8, 0);
        let pts = two_blobs(&mut rng, 50);
        let g = default_gamma(&pts, 2000, 0).unwrap();
        // about half of all pairs are intra-blob, so the 10% quantile is intra-blob
        assert!(g < 2.0, "{g}");
    }
}
