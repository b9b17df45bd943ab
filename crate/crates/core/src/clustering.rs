//! Stage II: clustering the local models in the presence of Byzantine points.

use serde::{Deserialize, Serialize};

use crate::datagen::GroundTruth;
use crate::error::{Error, Result};
use crate::graph::threshold_components;
use crate::metrics::{mismetrics, MisclusterReport};
use crate::numerics::{dist_sq, mean_of, median, ModelVector, RngStream};
use crate::robust_stats::{geometric_median, AggregatorSpec, GEOMEDIAN_MAX_ITER, GEOMEDIAN_TOL};

/// Default trimming constant `C` of the ball radius `C·σ̂·√d`.
pub const DEFAULT_TRIM_C: f64 = 2.0;

/// Labels and centers after some number of clustering iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringState {
    pub labels: Vec<usize>,
    pub centers: Vec<ModelVector>,
    /// Points left out of their bucket's center estimate in the last step.
    pub trimmed: Vec<bool>,
    pub iteration: usize,
}

impl ClusteringState {
    /// State with the given centers and every point at its nearest center.
    pub fn from_centers<P: AsRef<[f64]>>(points: &[P], centers: Vec<ModelVector>) -> Self {
        let labels = assign(points, &centers);
        ClusteringState {
            trimmed: vec![false; labels.len()],
            labels,
            centers,
            iteration: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn bucket_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    fn check<P: AsRef<[f64]>>(&self, points: &[P]) -> Result<()> {
        if self.labels.len() != points.len() {
            return Err(Error::input(format!(
                "state has {} labels for {} points",
                self.labels.len(),
                points.len()
            )));
        }
        if self.centers.is_empty() {
            return Err(Error::input("clustering state has no centers"));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.k()) {
            return Err(Error::input(format!("label {bad} out of range for K = {}", self.k())));
        }
        Ok(())
    }
}

/// Index of the nearest center; equidistant centers go to the lowest index.
pub fn nearest<C: AsRef<[f64]>>(point: &[f64], centers: &[C]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (h, c) in centers.iter().enumerate() {
        let d = dist_sq(point, c.as_ref());
        if d < best_d {
            best = h;
            best_d = d;
        }
    }
    best
}

pub fn assign<P: AsRef<[f64]>, C: AsRef<[f64]>>(points: &[P], centers: &[C]) -> Vec<usize> {
    points.iter().map(|p| nearest(p.as_ref(), centers)).collect()
}

/// Connected components of the threshold graph over the points. Components
/// with at least `min_cluster` members become clusters, numbered by their
/// smallest member; points of smaller components join the nearest surviving
/// center.
pub fn edge_cut_cluster<P: AsRef<[f64]>>(points: &[P], gamma: f64, min_cluster: usize) -> Result<ClusteringState> {
    if !(gamma > 0.0) {
        return Err(Error::config(format!("edge-cut threshold must be positive, got {gamma}")));
    }
    let (comp, sizes) = threshold_components(points, gamma);
    let mut cluster_of = vec![None; sizes.len()];
    let mut members: Vec<Vec<&[f64]>> = Vec::new();
    for (c, &size) in sizes.iter().enumerate() {
        if size >= min_cluster.max(1) {
            cluster_of[c] = Some(members.len());
            members.push(Vec::new());
        }
    }
    if members.is_empty() {
        return Err(Error::Clustering(format!(
            "no threshold-graph component has at least {min_cluster} points (largest: {})",
            sizes.iter().max().copied().unwrap_or(0)
        )));
    }
    for (i, p) in points.iter().enumerate() {
        if let Some(k) = cluster_of[comp[i]] {
            members[k].push(p.as_ref());
        }
    }
    let centers: Vec<ModelVector> = members.iter().map(|m| mean_of(m)).collect();
    let labels = points
        .iter()
        .enumerate()
        .map(|(i, p)| cluster_of[comp[i]].unwrap_or_else(|| nearest(p.as_ref(), &centers)))
        .collect::<Vec<_>>();
    Ok(ClusteringState {
        trimmed: vec![false; labels.len()],
        labels,
        centers,
        iteration: 0,
    })
}

/// Which center estimator a Lloyd-type iteration uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LloydVariant {
    /// Sample mean of the bucket.
    Lloyd,
    /// Geometric median of the bucket.
    KGeoMedian,
    /// Sample mean of the bucket points within `C·σ̂·√d` of the bucket's
    /// geometric median. `sigma_hat: None` estimates σ̂ per bucket from the
    /// median distance to the geometric median.
    TrimmedKMeans {
        #[serde(default)]
        sigma_hat: Option<f64>,
        #[serde(default = "default_c")]
        c: f64,
    },
}

fn default_c() -> f64 {
    DEFAULT_TRIM_C
}

impl LloydVariant {
    pub fn name(&self) -> &'static str {
        match self {
            LloydVariant::Lloyd => "lloyd",
            LloydVariant::KGeoMedian => "kgeomedian",
            LloydVariant::TrimmedKMeans { .. } => "trimmed_kmeans",
        }
    }
}

fn buckets(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut b = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        b[l].push(i);
    }
    b
}

/// Re-seeds every center whose bucket is empty at the point farthest from its
/// own center (ties to the lowest index), never using a point twice.
fn reseed_empty<P: AsRef<[f64]>>(points: &[P], labels: &[usize], old: &[ModelVector], centers: &mut [Option<ModelVector>]) {
    let mut used = vec![false; points.len()];
    for h in 0..centers.len() {
        if centers[h].is_some() {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = dist_sq(p.as_ref(), &old[labels[i]]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        centers[h] = Some(match best {
            Some((i, _)) => {
                used[i] = true;
                ModelVector::new(points[i].as_ref().to_vec())
            }
            None => old[h].clone(),
        });
    }
}

/// Sample means of the buckets given by `labels`, with the empty-bucket rule.
/// `fallback` supplies the "own center" for the farthest-point rule.
pub fn centers_from_labels<P: AsRef<[f64]>>(points: &[P], labels: &[usize], fallback: &[ModelVector]) -> Vec<ModelVector> {
    let k = fallback.len();
    let mut centers: Vec<Option<ModelVector>> = buckets(labels, k)
        .iter()
        .map(|b| {
            if b.is_empty() {
                None
            } else {
                let rows: Vec<&[f64]> = b.iter().map(|&i| points[i].as_ref()).collect();
                Some(mean_of(&rows))
            }
        })
        .collect();
    reseed_empty(points, labels, fallback, &mut centers);
    centers.into_iter().map(|c| c.expect("every bucket filled")).collect()
}

/// Noise-scale estimate for a fleet of local models: the median over points of
/// the distance to the `neighbor`-th nearest other point, divided by `√(2d)`.
///
/// Two independent estimates of the same center differ by `√2·σ` per
/// coordinate, so when `neighbor` is below the smallest cluster size the
/// neighbor distance measures within-cluster spread only.
pub fn knn_noise_scale<P: AsRef<[f64]>>(points: &[P], neighbor: usize) -> Result<f64> {
    let m = points.len();
    if m < 2 {
        return Err(Error::input("noise scale needs at least two points"));
    }
    let d = points[0].as_ref().len();
    let kth = neighbor.clamp(1, m - 1);
    let mut per_point: Vec<f64> = (0..m)
        .map(|i| {
            let mut ds: Vec<f64> = (0..m)
                .filter(|&j| j != i)
                .map(|j| dist_sq(points[i].as_ref(), points[j].as_ref()))
                .collect();
            let (_, v, _) = ds.select_nth_unstable_by(kth - 1, f64::total_cmp);
            v.sqrt()
        })
        .collect();
    Ok(median(&mut per_point) / (2.0 * d as f64).sqrt())
}

fn center_step<P: AsRef<[f64]>>(points: &[P], state: &ClusteringState, variant: &LloydVariant) -> Result<ClusteringState> {
    state.check(points)?;
    let m = points.len();
    let k = state.k();
    let d = state.centers[0].dim();
    let mut trimmed = vec![false; m];
    let mut centers: Vec<Option<ModelVector>> = Vec::with_capacity(k);
    for (h, bucket) in buckets(&state.labels, k).iter().enumerate() {
        if bucket.is_empty() {
            centers.push(None);
            continue;
        }
        let rows: Vec<&[f64]> = bucket.iter().map(|&i| points[i].as_ref()).collect();
        let center = match variant {
            LloydVariant::Lloyd => mean_of(&rows),
            LloydVariant::KGeoMedian => geometric_median(&rows, GEOMEDIAN_TOL, GEOMEDIAN_MAX_ITER)?,
            LloydVariant::TrimmedKMeans { sigma_hat, c } => {
                let gm = geometric_median(&rows, GEOMEDIAN_TOL, GEOMEDIAN_MAX_ITER)?;
                let dists: Vec<f64> = rows.iter().map(|r| dist_sq(r, &gm).sqrt()).collect();
                let sigma = match sigma_hat {
                    Some(s) => *s,
                    None => 1.4826 * median(&mut dists.clone()) / (d as f64).sqrt(),
                };
                let radius = c * sigma * (d as f64).sqrt();
                let mut kept = Vec::with_capacity(rows.len());
                for ((&i, r), dist) in bucket.iter().zip(&rows).zip(&dists) {
                    if *dist <= radius {
                        kept.push(*r);
                    } else {
                        trimmed[i] = true;
                    }
                }
                if kept.is_empty() {
                    state.centers[h].clone()
                } else {
                    mean_of(&kept)
                }
            }
        };
        centers.push(Some(center));
    }
    reseed_empty(points, &state.labels, &state.centers, &mut centers);
    let centers: Vec<ModelVector> = centers.into_iter().map(|c| c.expect("every bucket filled")).collect();
    Ok(ClusteringState {
        labels: assign(points, &centers),
        centers,
        trimmed,
        iteration: state.iteration + 1,
    })
}

/// One Trimmed K-means step: per bucket, trim points outside the ball of
/// radius `C·σ̂·√d` around the bucket's geometric median, average the rest,
/// then relabel every point by its nearest new center.
pub fn trimmed_kmeans_step<P: AsRef<[f64]>>(
    points: &[P],
    state: &ClusteringState,
    sigma_hat: Option<f64>,
    c: f64,
) -> Result<ClusteringState> {
    center_step(points, state, &LloydVariant::TrimmedKMeans { sigma_hat, c })
}

pub fn lloyd_step<P: AsRef<[f64]>>(points: &[P], state: &ClusteringState) -> Result<ClusteringState> {
    center_step(points, state, &LloydVariant::Lloyd)
}

/// Iterates `variant` from `init` until the labels stop changing or
/// `max_iter` steps. With ground truth, the returned history holds one report
/// per state, starting with `init`.
pub fn run_lloyd_variant<P: AsRef<[f64]>>(
    points: &[P],
    init: ClusteringState,
    variant: &LloydVariant,
    max_iter: usize,
    truth: Option<&GroundTruth>,
) -> Result<(ClusteringState, Vec<MisclusterReport>)> {
    if let LloydVariant::TrimmedKMeans { sigma_hat, c } = variant {
        if !(*c > 0.0) || sigma_hat.is_some_and(|s| !(s >= 0.0)) {
            return Err(Error::config("trimming radius parameters must be positive"));
        }
    }
    init.check(points)?;
    let mut history = Vec::new();
    if let Some(t) = truth {
        history.push(mismetrics(&init, t)?);
    }
    let mut state = init;
    for _ in 0..max_iter {
        let next = center_step(points, &state, variant)?;
        let done = next.labels == state.labels;
        state = next;
        if let Some(t) = truth {
            history.push(mismetrics(&state, t)?);
        }
        if done {
            break;
        }
    }
    Ok((state, history))
}

/// Two-cluster `±θ` clustering by sample splitting.
///
/// The first `⌊m/T⌋·T` points are split into `T` consecutive batches. Batch
/// `t` is sign-aligned against the current estimate (`ν = argmin ‖νy − θ‖`,
/// ties to `+1`) and `filter` estimates the new `θ` from the aligned batch.
/// Every point, remainder included, is finally labeled against `θ̂^{(T)}`.
pub fn iterfilter_2cluster<P: AsRef<[f64]>>(
    points: &[P],
    theta0: &[f64],
    t_batches: usize,
    filter: &AggregatorSpec,
) -> Result<(ModelVector, Vec<i8>)> {
    let m = points.len();
    if t_batches == 0 || m < t_batches {
        return Err(Error::config(format!("need 1 <= T <= m, got T = {t_batches}, m = {m}")));
    }
    let sign = |y: &[f64], theta: &[f64]| -> i8 {
        if crate::numerics::dot(y, theta) >= 0.0 {
            1
        } else {
            -1
        }
    };
    let batch = m / t_batches;
    let mut theta = ModelVector::new(theta0.to_vec());
    for t in 0..t_batches {
        let aligned: Vec<ModelVector> = points[t * batch..(t + 1) * batch]
            .iter()
            .map(|p| {
                let p = p.as_ref();
                let s = sign(p, &theta) as f64;
                p.iter().map(|v| s * v).collect()
            })
            .collect();
        theta = filter.aggregate(&aligned)?;
    }
    let labels = points.iter().map(|p| sign(p.as_ref(), &theta)).collect();
    Ok((theta, labels))
}

/// Initial labels with a controlled fraction of correct honest assignments.
///
/// Exactly `⌈correct_fraction · h⌉` of the `h` honest machines keep their true
/// label; the others get a uniformly random wrong label, and Byzantine
/// machines a uniformly random label. Centers are the bucket means.
pub fn warm_start_init<P: AsRef<[f64]>>(
    points: &[P],
    truth: &GroundTruth,
    correct_fraction: f64,
    rng: &mut RngStream,
) -> Result<ClusteringState> {
    if !(0.0..=1.0).contains(&correct_fraction) {
        return Err(Error::config(format!("correct fraction must lie in [0, 1], got {correct_fraction}")));
    }
    let k = truth.k();
    if k == 0 || truth.labels.len() != points.len() {
        return Err(Error::input("ground truth does not match the points"));
    }
    let mut honest: Vec<usize> = truth.honest_indices().collect();
    rng.shuffle(&mut honest);
    let keep = ((correct_fraction * honest.len() as f64 - 1e-9).ceil().max(0.0) as usize).min(honest.len());
    let mut labels = vec![0; points.len()];
    for (rank, &i) in honest.iter().enumerate() {
        let true_label = truth.labels[i].expect("honest");
        labels[i] = if rank < keep || k == 1 {
            true_label
        } else {
            let r = rng.below(k - 1);
            if r >= true_label {
                r + 1
            } else {
                r
            }
        };
    }
    for (i, l) in truth.labels.iter().enumerate() {
        if l.is_none() {
            labels[i] = rng.below(k);
        }
    }
    let centers = centers_from_labels(points, &labels, &truth.centers);
    Ok(ClusteringState {
        trimmed: vec![false; labels.len()],
        labels,
        centers,
        iteration: 0,
    })
}

/// `K` distinct points chosen uniformly at random as the initial centers.
pub fn random_init<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut RngStream) -> Result<ClusteringState> {
    if k == 0 || k > points.len() {
        return Err(Error::config(format!("cannot pick {k} initial centers from {} points", points.len())));
    }
    let mut idx: Vec<usize> = (0..points.len()).collect();
    rng.shuffle(&mut idx);
    let centers = idx[..k].iter().map(|&i| ModelVector::new(points[i].as_ref().to_vec())).collect();
    Ok(ClusteringState::from_centers(points, centers))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[&[f64]]) -> Vec<ModelVector> {
        v.iter().map(|p| ModelVector::new(p.to_vec())).collect()
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let c = pts(&[&[1.0], &[-1.0]]);
        assert_eq!(nearest(&[0.0], &c), 0);
    }

    #[test]
    fn relabel_is_idempotent() {
        let mut rng = RngStream::new(1, 0);
        let p: Vec<ModelVector> = (0..30).map(|_| rng.normal_vec(3).into()).collect();
        let c = pts(&[&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &[-1.0, 0.5, 0.0]]);
        let a = assign(&p, &c);
        let s = ClusteringState::from_centers(&p, c.clone());
        assert_eq!(a, s.labels);
        assert_eq!(assign(&p, &c), a);
    }

    #[test]
    fn edge_cut_three_blobs() {
        let mut rng = RngStream::new(2, 0);
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut p = Vec::new();
        for i in 0..30 {
            let c = centers[i % 3];
            p.push(ModelVector::new(vec![c[0] + 0.3 * rng.normal(), c[1] + 0.3 * rng.normal()]));
        }
        let s = edge_cut_cluster(&p, 3.0, 2).unwrap();
        assert_eq!(s.k(), 3);
        for i in 0..30 {
            assert_eq!(s.labels[i], i % 3);
        }
    }

    #[test]
    fn edge_cut_trivial_cases() {
        let p = pts(&[&[0.0], &[1.0], &[5.0]]);
        assert_eq!(edge_cut_cluster(&p, 100.0, 1).unwrap().k(), 1);
        let s = edge_cut_cluster(&p, 0.5, 1).unwrap();
        assert_eq!(s.k(), 3);
        assert_eq!(s.labels, vec![0, 1, 2]);
        assert!(matches!(edge_cut_cluster(&p, 0.5, 2), Err(Error::Clustering(_))));
        // small component attached to nearest survivor
        let s = edge_cut_cluster(&p, 1.5, 2).unwrap();
        assert_eq!((s.k(), s.labels.clone()), (1, vec![0, 0, 0]));
    }

    #[test]
    fn trimming_inactive_equals_lloyd() {
        let mut rng = RngStream::new(3, 0);
        let p: Vec<ModelVector> = (0..40).map(|_| rng.normal_vec(2).into()).collect();
        let init = ClusteringState::from_centers(&p, pts(&[&[-1.0, 0.0], &[1.0, 0.0]]));
        let a = trimmed_kmeans_step(&p, &init, Some(1e6), 2.0).unwrap();
        let b = lloyd_step(&p, &init).unwrap();
        assert_eq!(a.centers, b.centers);
        assert_eq!(a.labels, b.labels);
        assert!(a.trimmed.iter().all(|t| !t));
    }

    #[test]
    fn trimmed_far_adversary_is_removed() {
        let theta = [1.0, 2.0];
        let mut rng = RngStream::new(4, 0);
        let mut p = Vec::new();
        for i in 0..20 {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            p.push(ModelVector::new(vec![s * theta[0] + 0.1 * rng.normal(), s * theta[1] + 0.1 * rng.normal()]));
        }
        p.push(ModelVector::new(vec![1e6, 1e6]));
        let mut labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        labels.push(0);
        let init = ClusteringState {
            trimmed: vec![false; 21],
            labels: labels.clone(),
            centers: pts(&[&theta, &[-1.0, -2.0]]),
            iteration: 0,
        };
        let next = trimmed_kmeans_step(&p, &init, Some(0.1), 3.0).unwrap();
        assert!(next.trimmed[20]);
        // oracle: the same step with the adversary deleted
        let honest = p[..20].to_vec();
        let init_h = ClusteringState {
            trimmed: vec![false; 20],
            labels: labels[..20].to_vec(),
            centers: init.centers.clone(),
            iteration: 0,
        };
        let h = trimmed_kmeans_step(&honest, &init_h, Some(0.1), 3.0).unwrap();
        for g in 0..2 {
            assert!(next.centers[g].dist(&h.centers[g]) <= 1e-9);
        }
    }

    #[test]
    fn trimmed_single_cluster_hand_case() {
        let p = pts(&[&[0.0], &[1.0], &[100.0]]);
        let init = ClusteringState {
            trimmed: vec![false; 3],
            labels: vec![0; 3],
            centers: pts(&[&[0.0]]),
            iteration: 0,
        };
        // geometric median is 1; radius 2 keeps {0, 1}
        let s = trimmed_kmeans_step(&p, &init, Some(1.0), 2.0).unwrap();
        assert!((s.centers[0][0] - 0.5).abs() < 1e-6);
        assert_eq!(s.trimmed, vec![false, false, true]);
    }

    #[test]
    fn empty_untrimmed_bucket_keeps_center() {
        let p = pts(&[&[0.0], &[10.0], &[12.0]]);
        let init = ClusteringState {
            trimmed: vec![false; 3],
            labels: vec![0, 1, 1],
            centers: pts(&[&[0.0], &[11.0]]),
            iteration: 0,
        };
        // zero radius, bucket 1 has no point at its geometric median (which is
        // anywhere on [10, 12]); the center stays put unless a point coincides
        let s = trimmed_kmeans_step(&p, &init, Some(0.0), 2.0).unwrap();
        assert_eq!(s.centers[0].as_ref(), &[0.0]);
        assert!(s.trimmed[1] || s.trimmed[2]);
    }

    #[test]
    fn empty_bucket_is_reseeded_at_farthest_point() {
        let p = pts(&[&[0.0], &[1.0], &[9.0]]);
        let init = ClusteringState {
            trimmed: vec![false; 3],
            labels: vec![0, 0, 0],
            centers: pts(&[&[0.0], &[50.0]]),
            iteration: 0,
        };
        let s = lloyd_step(&p, &init).unwrap();
        assert_eq!(s.centers[1].as_ref(), &[9.0]);
        assert_eq!(s.labels, vec![0, 0, 1]);
    }

    // Textbook Lloyd written independently: recompute means, reassign, repeat.
    fn textbook_kmeans(p: &[[f64; 2]], mut centers: Vec<[f64; 2]>, iters: usize) -> Vec<Vec<usize>> {
        let mut traj = Vec::new();
        let mut labels: Vec<usize> = p
            .iter()
            .map(|x| {
                let mut best = (0, f64::MAX);
                for (h, c) in centers.iter().enumerate() {
                    let d = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                    if d < best.1 {
                        best = (h, d);
                    }
                }
                best.0
            })
            .collect();
        traj.push(labels.clone());
        for _ in 0..iters {
            for (h, c) in centers.iter_mut().enumerate() {
                let mem: Vec<&[f64; 2]> = p.iter().zip(&labels).filter(|(_, &l)| l == h).map(|(x, _)| x).collect();
                if !mem.is_empty() {
                    let n = mem.len() as f64;
                    *c = [mem.iter().map(|x| x[0]).sum::<f64>() / n, mem.iter().map(|x| x[1]).sum::<f64>() / n];
                }
            }
            labels = p
                .iter()
                .map(|x| {
                    let mut best = (0, f64::MAX);
                    for (h, c) in centers.iter().enumerate() {
                        let d = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                        if d < best.1 {
                            best = (h, d);
                        }
                    }
                    best.0
                })
                .collect();
            traj.push(labels.clone());
        }
        traj
    }

    #[test]
    fn lloyd_matches_textbook_trajectory() {
        let mut rng = RngStream::new(5, 0);
        let p: Vec<[f64; 2]> = (0..20)
            .map(|i| {
                let off = [(i % 3) as f64 * 2.0, (i % 2) as f64];
                [off[0] + rng.normal(), off[1] + rng.normal()]
            })
            .collect();
        let init = vec![p[0], p[1], p[2]];
        let oracle = textbook_kmeans(&p, init.clone(), 8);
        let mv: Vec<ModelVector> = p.iter().map(|x| ModelVector::new(x.to_vec())).collect();
        let mut state = ClusteringState::from_centers(&mv, init.iter().map(|c| ModelVector::new(c.to_vec())).collect());
        assert_eq!(state.labels, oracle[0]);
        for labels in &oracle[1..] {
            state = lloyd_step(&mv, &state).unwrap();
            assert_eq!(&state.labels, labels);
        }
    }

    #[test]
    fn lloyd_objective_decreases() {
        let mut rng = RngStream::new(6, 0);
        let p: Vec<ModelVector> = (0..60).map(|i| rng.normal_vec(3).into_iter().map(|v| v + (i % 4) as f64).collect()).collect();
        let objective = |s: &ClusteringState| -> f64 { p.iter().zip(&s.labels).map(|(x, &l)| dist_sq(x, &s.centers[l])).sum() };
        let mut s = random_init(&p, 4, &mut rng).unwrap();
        let mut prev = objective(&s);
        for _ in 0..10 {
            s = lloyd_step(&p, &s).unwrap();
            let cur = objective(&s);
            assert!(cur <= prev + 1e-9);
            prev = cur;
        }
    }

    fn symmetric_truth(m: usize, d: usize, sep: f64, seed: u64) -> (Vec<ModelVector>, GroundTruth) {
        let theta: ModelVector = (0..d).map(|i| if i == 0 { sep } else { 0.0 }).collect();
        let mut rng = RngStream::new(seed, 0);
        let mut labels = Vec::new();
        let p = (0..m)
            .map(|i| {
                let g = i % 2;
                labels.push(Some(g));
                let s = if g == 0 { 1.0 } else { -1.0 };
                theta.iter().map(|v| s * v + rng.normal()).collect()
            })
            .collect();
        (
            p,
            GroundTruth {
                centers: vec![theta.clone(), theta.scaled(-1.0)],
                labels,
            },
        )
    }

    #[test]
    fn warm_start_exact_correct_count() {
        let (p, truth) = symmetric_truth(70, 3, 5.0, 7);
        let mut rng = RngStream::new(7, 1);
        let s = warm_start_init(&p, &truth, 0.6, &mut rng).unwrap();
        let correct = (0..70).filter(|&i| Some(s.labels[i]) == truth.labels[i]).count();
        assert_eq!(correct, 42);
    }

    #[test]
    fn noiseless_variants_converge_fast() {
        let theta = [4.0, 0.0, 0.0];
        let mut p = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let g = i % 2;
            let s = if g == 0 { 1.0 } else { -1.0 };
            p.push(ModelVector::new(theta.iter().map(|v| s * v).collect()));
            labels.push(Some(g));
        }
        let truth = GroundTruth {
            centers: vec![ModelVector::new(theta.to_vec()), ModelVector::new(theta.iter().map(|v| -v).collect())],
            labels,
        };
        for variant in [
            LloydVariant::Lloyd,
            LloydVariant::KGeoMedian,
            LloydVariant::TrimmedKMeans {
                sigma_hat: Some(0.1),
                c: 2.0,
            },
        ] {
            let mut rng = RngStream::new(8, 0);
            let init = warm_start_init(&p, &truth, 0.6, &mut rng).unwrap();
            let (_, hist) = run_lloyd_variant(&p, init, &variant, 3, Some(&truth)).unwrap();
            assert_eq!(hist.last().unwrap().a_s, 0.0, "{variant:?}");
        }
    }

    #[test]
    fn iterfilter_noiseless_recovers_theta() {
        let theta = ModelVector::new(vec![1.0, -2.0, 0.5]);
        let p: Vec<ModelVector> = (0..50).map(|i| if i % 2 == 0 { theta.clone() } else { theta.scaled(-1.0) }).collect();
        let (est, labels) = iterfilter_2cluster(&p, &theta.scaled(0.6), 5, &AggregatorSpec::iter_filter()).unwrap();
        assert!(est.dist(&theta) < 1e-12);
        for (i, l) in labels.iter().enumerate() {
            assert_eq!(*l, if i % 2 == 0 { 1 } else { -1 });
        }
    }

    #[test]
    fn iterfilter_sign_symmetry() {
        let (p, truth) = symmetric_truth(100, 4, 3.0, 9);
        let theta0 = truth.centers[0].scaled(0.6);
        let f = AggregatorSpec::iter_filter();
        let (a, la) = iterfilter_2cluster(&p, &theta0, 4, &f).unwrap();
        let neg: Vec<ModelVector> = p.iter().map(|x| x.scaled(-1.0)).collect();
        let (b, lb) = iterfilter_2cluster(&neg, &theta0.scaled(-1.0), 4, &f).unwrap();
        assert!(a.add(&b).norm() < 1e-9);
        assert_eq!(la, lb);
    }

    #[test]
    fn iterfilter_rejects_too_many_batches() {
        let p = pts(&[&[1.0], &[2.0]]);
        assert!(matches!(
            iterfilter_2cluster(&p, &[1.0], 3, &AggregatorSpec::iter_filter()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn knn_scale_recovers_sigma() {
        let mut rng = RngStream::new(10, 0);
        let d = 200;
        let p: Vec<ModelVector> = (0..60).map(|i| rng.normal_vec(d).into_iter().map(|v| 0.5 * v + (i % 3) as f64 * 10.0).collect()).collect();
        let s = knn_noise_scale(&p, 5).unwrap();
        assert!((s - 0.5).abs() < 0.05, "{s}");
    }
}
