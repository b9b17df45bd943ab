//! Misclustering and center-error metrics, and label matching between
//! estimated and true clusters.

use serde::{Deserialize, Serialize};

use crate::clustering::ClusteringState;
use crate::datagen::GroundTruth;
use crate::error::{Error, Result};
use crate::numerics::ModelVector;

/// Largest K for which label matching is solved exactly.
pub const HUNGARIAN_MAX_K: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisclusterReport {
    pub iteration: usize,
    /// Fraction of honest machines with a wrong label.
    pub a_s: f64,
    /// Worst cluster-wise misclustering fraction.
    pub g_s: f64,
    /// `g_s` restricted to untrimmed points, charging trimmed own-cluster
    /// points as misclustered.
    pub g_s_u: f64,
    /// `max_h ‖θ̂_h − θ_h‖ / Δ`; `None` with a single true center.
    pub lambda_s: Option<f64>,
    /// Minimum separation of the true centers.
    pub delta: Option<f64>,
    /// Maximum over minimum true-center separation.
    pub lambda_ratio: Option<f64>,
    /// `confusion[g][h]`: machines of true cluster `g` (last row: Byzantine)
    /// carrying estimated label `h`.
    pub confusion: Vec<Vec<usize>>,
    /// True cluster matched to each estimated label.
    pub matching: Vec<usize>,
}

/// Minimum-cost assignment of rows to distinct columns (`rows ≤ cols`).
/// Returns the column of every row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= cols");
    // potentials formulation, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Greedy assignment: repeatedly take the cheapest unused (row, column) pair.
/// Rows left over when columns run out get `None`.
pub fn greedy_assignment(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    let m = cost.first().map_or(0, |r| r.len());
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * m);
    for (i, row) in cost.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            pairs.push((c, i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; n];
    let mut col_used = vec![false; m];
    for (_, i, j) in pairs {
        if out[i].is_none() && !col_used[j] {
            out[i] = Some(j);
            col_used[j] = true;
        }
    }
    out
}

/// Matches each estimated center to a distinct true center, minimizing total
/// distance (exactly for equal counts up to [`HUNGARIAN_MAX_K`], greedily
/// otherwise). Estimated centers beyond the number of true ones may stay
/// unmatched.
pub fn match_centers(estimated: &[ModelVector], truth: &[ModelVector]) -> Vec<Option<usize>> {
    let cost: Vec<Vec<f64>> = estimated.iter().map(|e| truth.iter().map(|t| e.dist(t)).collect()).collect();
    if estimated.len() == truth.len() && estimated.len() <= HUNGARIAN_MAX_K {
        hungarian(&cost).into_iter().map(Some).collect()
    } else {
        greedy_assignment(&cost)
    }
}

/// Label permutation maximizing agreement with the true honest labels.
fn match_labels(confusion: &[Vec<usize>], k: usize) -> Vec<usize> {
    // rows: estimated label, columns: true label, cost = −agreement
    let cost: Vec<Vec<f64>> = (0..k).map(|h| (0..k).map(|g| -(confusion[g][h] as f64)).collect()).collect();
    if k <= HUNGARIAN_MAX_K {
        hungarian(&cost)
    } else {
        greedy_assignment(&cost).into_iter().map(|m| m.expect("square")).collect()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Misclustering metrics of `state` against the truth, after relabeling the
/// estimated clusters by the best matching permutation.
pub fn mismetrics(state: &ClusteringState, truth: &GroundTruth) -> Result<MisclusterReport> {
    let k = truth.k();
    if state.k() != k {
        return Err(Error::input(format!(
            "state has {} clusters, ground truth has {k}",
            state.k()
        )));
    }
    if state.labels.len() != truth.labels.len() {
        return Err(Error::input("state and ground truth cover different machines"));
    }
    let mut confusion = vec![vec![0usize; k]; k + 1];
    let mut untrimmed = vec![vec![0usize; k]; k + 1];
    for (i, &h) in state.labels.iter().enumerate() {
        let g = truth.labels[i].unwrap_or(k);
        confusion[g][h] += 1;
        if !state.trimmed.get(i).copied().unwrap_or(false) {
            untrimmed[g][h] += 1;
        }
    }
    let matching = match_labels(&confusion, k);
    // est_of[g]: estimated label standing in for true cluster g
    let mut est_of = vec![0; k];
    for (h, &g) in matching.iter().enumerate() {
        est_of[g] = h;
    }

    let honest = truth.honest_count();
    let correct: usize = (0..k).map(|g| confusion[g][est_of[g]]).sum();
    let a_s = ratio(honest - correct, honest);

    let mut g_s: f64 = 0.0;
    let mut g_s_u: f64 = 0.0;
    for h in 0..k {
        let e = est_of[h];
        let true_size: usize = confusion[h].iter().sum();
        let honest_in_e: usize = (0..k).map(|g| confusion[g][e]).sum();
        let foreign_in_e = honest_in_e - confusion[h][e];
        let lost = true_size - confusion[h][e];
        g_s = g_s.max(ratio(foreign_in_e, honest_in_e)).max(ratio(lost, true_size));

        let honest_in_e_u: usize = (0..k).map(|g| untrimmed[g][e]).sum();
        let foreign_in_e_u = honest_in_e_u - untrimmed[h][e];
        let trimmed_own = confusion[h][e] - untrimmed[h][e];
        g_s_u = g_s_u
            .max(ratio(foreign_in_e_u, honest_in_e_u))
            .max(ratio(lost + trimmed_own, true_size));
    }

    let delta = truth.min_separation();
    let lambda_s = delta.map(|dl| {
        (0..k)
            .map(|h| state.centers[est_of[h]].dist(&truth.centers[h]) / dl)
            .fold(0.0, f64::max)
    });
    let lambda_ratio = delta.map(|dl| {
        let mut max_sep: f64 = 0.0;
        for g in 0..k {
            for h in g + 1..k {
                max_sep = max_sep.max(truth.centers[g].dist(&truth.centers[h]));
            }
        }
        max_sep / dl
    });

    Ok(MisclusterReport {
        iteration: state.iteration,
        a_s,
        g_s,
        g_s_u,
        lambda_s,
        delta,
        lambda_ratio,
        confusion,
        matching,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = RngStream::new(11, 0);
        for n in 1..=6 {
            for _ in 0..20 {
                let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.uniform()).collect()).collect();
                let best = permutations(n)
                    .iter()
                    .map(|p| (0..n).map(|i| cost[i][p[i]]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                let a = hungarian(&cost);
                let got: f64 = (0..n).map(|i| cost[i][a[i]]).sum();
                assert!((got - best).abs() < 1e-12);
                let mut cols = a.clone();
                cols.sort();
                assert_eq!(cols, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn hungarian_rectangular() {
        let cost = vec![vec![5.0, 1.0, 9.0], vec![1.0, 2.0, 9.0]];
        assert_eq!(hungarian(&cost), vec![1, 0]);
    }

    fn truth2() -> GroundTruth {
        GroundTruth {
            centers: vec![ModelVector::new(vec![1.0]), ModelVector::new(vec![-1.0])],
            labels: vec![Some(0), Some(0), Some(0), Some(1), Some(1), None],
        }
    }

    fn state(labels: Vec<usize>) -> ClusteringState {
        ClusteringState {
            trimmed: vec![false; labels.len()],
            labels,
            centers: vec![ModelVector::new(vec![1.0]), ModelVector::new(vec![-1.0])],
            iteration: 0,
        }
    }

    #[test]
    fn perfect_and_swapped_labels() {
        let t = truth2();
        let r = mismetrics(&state(vec![0, 0, 0, 1, 1, 0]), &t).unwrap();
        assert_eq!((r.a_s, r.g_s), (0.0, 0.0));
        assert_eq!(r.lambda_s, Some(0.0));

        let t = GroundTruth {
            centers: t.centers.clone(),
            labels: vec![Some(0), Some(0), Some(1), Some(1)],
        };
        // every label swapped: the matching absorbs the swap
        let r = mismetrics(&state(vec![1, 1, 0, 0]), &t).unwrap();
        assert_eq!(r.a_s, 0.0);
        assert_eq!(r.matching, vec![1, 0]);
    }

    #[test]
    fn single_bucket_is_half_wrong() {
        // one estimated bucket holds everything: half the honest points are
        // necessarily wrong under any permutation
        let t = GroundTruth {
            centers: truth2().centers,
            labels: vec![Some(0), Some(0), Some(1), Some(1)],
        };
        let r = mismetrics(&state(vec![0, 0, 0, 0]), &t).unwrap();
        assert_eq!(r.a_s, 0.5);
    }

    #[test]
    fn hand_computed_g_s() {
        // true: {0,1,2} in cluster 0, {3,4} in cluster 1, 5 Byzantine
        // estimated: 0,1 -> 0 ; 2,3,4,5 -> 1
        // est 0: honest 2, foreign 0 ; true 0 lost 1 of 3 -> 1/3
        // est 1: honest 3, foreign 1 -> 1/3 ; true 1 lost 0
        let t = truth2();
        let r = mismetrics(&state(vec![0, 0, 1, 1, 1, 1]), &t).unwrap();
        assert!((r.a_s - 0.2).abs() < 1e-15);
        assert!((r.g_s - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.confusion, vec![vec![2, 1], vec![0, 2], vec![0, 1]]);

        // trimming machine 4 (own cluster 1, in est 1): second term becomes 1/2
        let mut s = state(vec![0, 0, 1, 1, 1, 1]);
        s.trimmed[4] = true;
        let r = mismetrics(&s, &t).unwrap();
        assert!((r.g_s_u - 0.5).abs() < 1e-15);
    }

    #[test]
    fn permutation_invariance() {
        let t = GroundTruth {
            centers: vec![ModelVector::new(vec![0.0, 0.0]), ModelVector::new(vec![3.0, 0.0]), ModelVector::new(vec![0.0, 4.0])],
            labels: vec![Some(0), Some(1), Some(2), Some(0), Some(1), Some(2), None],
        };
        let base = ClusteringState {
            trimmed: vec![false; 7],
            labels: vec![0, 1, 2, 1, 1, 0, 2],
            centers: vec![ModelVector::new(vec![0.1, 0.0]), ModelVector::new(vec![3.0, 0.5]), ModelVector::new(vec![0.0, 3.0])],
            iteration: 0,
        };
        let r0 = mismetrics(&base, &t).unwrap();
        let perm = [2, 0, 1];
        let mut p = base.clone();
        p.labels = base.labels.iter().map(|&l| perm[l]).collect();
        for (h, &to) in perm.iter().enumerate() {
            p.centers[to] = base.centers[h].clone();
        }
        let r1 = mismetrics(&p, &t).unwrap();
        assert_eq!(r0.a_s, r1.a_s);
        assert_eq!(r0.g_s, r1.g_s);
        assert_eq!(r0.lambda_s, r1.lambda_s);
    }

    #[test]
    fn k_mismatch_is_input_error() {
        let mut s = state(vec![0; 6]);
        s.centers.pop();
        assert!(matches!(mismetrics(&s, &truth2()), Err(Error::Input(_))));
    }

    #[test]
    fn center_matching() {
        let est = vec![ModelVector::new(vec![5.0]), ModelVector::new(vec![0.1]), ModelVector::new(vec![9.0])];
        let tru = vec![ModelVector::new(vec![0.0]), ModelVector::new(vec![5.0])];
        assert_eq!(match_centers(&est, &tru), vec![Some(1), Some(0), None]);
    }
}
