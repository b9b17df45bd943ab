//! Robust location estimators shared by the clustering and optimization
//! stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{covariance, dist_sq, mean_of, median, top_eigenpair, ModelVector};

pub const GEOMEDIAN_TOL: f64 = 1e-7;
pub const GEOMEDIAN_MAX_ITER: usize = 500;
/// Fraction of the input removed per filtering round.
pub const FILTER_REMOVAL_FRACTION: f64 = 0.05;

/// Which estimator aggregates a set of vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregatorSpec {
    SampleMean,
    TrimmedMean {
        beta: f64,
    },
    CoordMedian,
    GeoMedian {
        #[serde(default = "default_gm_tol")]
        tol: f64,
        #[serde(default = "default_gm_iter")]
        max_iter: usize,
    },
    IterFilter {
        /// Stop filtering once the top covariance eigenvalue is at most this.
        /// `None` uses `4σ̂²`, σ̂ the MAD-scale of the projections.
        #[serde(default)]
        variance_bound: Option<f64>,
        #[serde(default = "default_filter_rounds")]
        max_rounds: usize,
    },
}

fn default_gm_tol() -> f64 {
    GEOMEDIAN_TOL
}

fn default_gm_iter() -> usize {
    GEOMEDIAN_MAX_ITER
}

fn default_filter_rounds() -> usize {
    50
}

impl AggregatorSpec {
    pub fn geo_median() -> Self {
        AggregatorSpec::GeoMedian {
            tol: GEOMEDIAN_TOL,
            max_iter: GEOMEDIAN_MAX_ITER,
        }
    }

    pub fn iter_filter() -> Self {
        AggregatorSpec::IterFilter {
            variance_bound: None,
            max_rounds: default_filter_rounds(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AggregatorSpec::TrimmedMean { beta } if !(0.0..0.5).contains(&beta) => {
                Err(Error::config(format!("trimmed mean beta must lie in [0, 0.5), got {beta}")))
            }
            AggregatorSpec::GeoMedian { tol, .. } if !(tol > 0.0) => {
                Err(Error::config("geometric median tolerance must be positive"))
            }
            AggregatorSpec::IterFilter {
                variance_bound: Some(b),
                ..
            } if !(b >= 0.0) => Err(Error::config("filter variance bound must be >= 0")),
            _ => Ok(()),
        }
    }

    pub fn aggregate<P: AsRef<[f64]>>(&self, points: &[P]) -> Result<ModelVector> {
        self.validate()?;
        match *self {
            AggregatorSpec::SampleMean => sample_mean(points),
            AggregatorSpec::TrimmedMean { beta } => trimmed_mean(points, beta),
            AggregatorSpec::CoordMedian => coord_median(points),
            AggregatorSpec::GeoMedian { tol, max_iter } => geometric_median(points, tol, max_iter),
            AggregatorSpec::IterFilter {
                variance_bound,
                max_rounds,
            } => {
                // a single report cannot be filtered; it is its own mean
                if points.len() == 1 {
                    sample_mean(points)
                } else {
                    iter_filter_mean(points, variance_bound, max_rounds)
                }
            }
        }
    }
}

fn check_points<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| Error::input("estimator needs at least one point"))?;
    let d = first.as_ref().len();
    for (i, p) in points.iter().enumerate() {
        let p = p.as_ref();
        if p.len() != d {
            return Err(Error::input(format!("point {i} has dimension {}, expected {d}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("point {i} has a non-finite coordinate")));
        }
    }
    Ok(d)
}

fn as_slices<P: AsRef<[f64]>>(points: &[P]) -> Vec<&[f64]> {
    points.iter().map(|p| p.as_ref()).collect()
}

pub fn sample_mean<P: AsRef<[f64]>>(points: &[P]) -> Result<ModelVector> {
    check_points(points)?;
    Ok(mean_of(&as_slices(points)))
}

/// Number of values trimmed from each side for `t` values.
pub fn trim_count(t: usize, beta: f64) -> usize {
    (beta * t as f64).floor() as usize
}

/// Coordinate-wise trimmed mean: per coordinate, drop the `⌊βt⌋` largest and
/// `⌊βt⌋` smallest values and average the rest.
pub fn trimmed_mean<P: AsRef<[f64]>>(points: &[P], beta: f64) -> Result<ModelVector> {
    let d = check_points(points)?;
    if !(0.0..0.5).contains(&beta) {
        return Err(Error::config(format!("trimmed mean beta must lie in [0, 0.5), got {beta}")));
    }
    let t = points.len();
    let k = trim_count(t, beta);
    if 2 * k >= t {
        return Err(Error::config(format!("trimming {k} per side leaves nothing of {t} points")));
    }
    let mut column = vec![0.0; t];
    let out = (0..d)
        .map(|j| {
            for (c, p) in column.iter_mut().zip(points) {
                *c = p.as_ref()[j];
            }
            column.sort_by(f64::total_cmp);
            let kept = &column[k..t - k];
            kept.iter().sum::<f64>() / kept.len() as f64
        })
        .collect();
    Ok(out)
}

/// Coordinate-wise median; even counts average the two middle values.
pub fn coord_median<P: AsRef<[f64]>>(points: &[P]) -> Result<ModelVector> {
    let d = check_points(points)?;
    let mut column = vec![0.0; points.len()];
    Ok((0..d)
        .map(|j| {
            for (c, p) in column.iter_mut().zip(points) {
                *c = p.as_ref()[j];
            }
            median(&mut column)
        })
        .collect())
}

/// Geometric median by Weiszfeld iteration, with the Vardi–Zhang correction
/// when the iterate lands on a data point. Starts from the coordinate-wise
/// median and stops when a step moves less than `tol · max(1, ‖y‖)`.
pub fn geometric_median<P: AsRef<[f64]>>(points: &[P], tol: f64, max_iter: usize) -> Result<ModelVector> {
    let d = check_points(points)?;
    let pts = as_slices(points);
    if pts.iter().all(|p| *p == pts[0]) {
        return Ok(ModelVector::new(pts[0].to_vec()));
    }
    let mut y = coord_median(points)?;
    let mut numer = vec![0.0; d];
    let mut pull = vec![0.0; d];
    for _ in 0..max_iter {
        numer.iter_mut().for_each(|v| *v = 0.0);
        pull.iter_mut().for_each(|v| *v = 0.0);
        let mut denom = 0.0;
        let mut coincident = 0usize;
        let scale = y.norm().max(1.0);
        for p in &pts {
            let dist = dist_sq(p, &y).sqrt();
            if dist <= 1e-12 * scale {
                coincident += 1;
                continue;
            }
            let w = 1.0 / dist;
            denom += w;
            for j in 0..d {
                numer[j] += w * p[j];
                pull[j] += w * (p[j] - y[j]);
            }
        }
        if denom == 0.0 {
            break;
        }
        let weiszfeld: Vec<f64> = numer.iter().map(|v| v / denom).collect();
        let next: ModelVector = if coincident == 0 {
            weiszfeld.into()
        } else {
            // y sits on `coincident` data points: it is optimal when the pull of
            // the others is no stronger than their combined weight
            let r = crate::numerics::norm(&pull);
            if r <= coincident as f64 {
                break;
            }
            let mix = coincident as f64 / r;
            weiszfeld
                .iter()
                .zip(y.iter())
                .map(|(t, yj)| (1.0 - mix) * t + mix * yj)
                .collect()
        };
        let step = next.dist(&y);
        y = next;
        if step <= tol * y.norm().max(1.0) {
            break;
        }
    }
    Ok(y)
}

/// Spectral filtering mean.
///
/// Each round computes the mean `μ` and top covariance eigenpair `(λ, v)` of
/// the surviving points; if `λ` is within the variance bound the mean is
/// returned, otherwise the `⌈0.05·t⌉` survivors with the largest
/// `⟨p − μ, v⟩²` are removed, never going below `⌈t/2⌉` survivors.
pub fn iter_filter_mean<P: AsRef<[f64]>>(
    points: &[P],
    variance_bound: Option<f64>,
    max_rounds: usize,
) -> Result<ModelVector> {
    check_points(points)?;
    let t = points.len();
    if t < 2 {
        return Err(Error::input("iterative filtering needs at least two points"));
    }
    if let Some(b) = variance_bound {
        if !(b >= 0.0) {
            return Err(Error::config("filter variance bound must be >= 0"));
        }
    }
    let all = as_slices(points);
    let per_round = (FILTER_REMOVAL_FRACTION * t as f64).ceil() as usize;
    let floor = t.div_ceil(2);
    let mut alive: Vec<usize> = (0..t).collect();

    for _ in 0..max_rounds {
        let survivors: Vec<&[f64]> = alive.iter().map(|&i| all[i]).collect();
        let (mu, cov) = covariance(&survivors);
        let (lambda, v) = top_eigenpair(&cov)?;
        let proj: Vec<f64> = survivors
            .iter()
            .map(|p| p.iter().zip(mu.iter()).zip(v.iter()).map(|((x, m), vj)| (x - m) * vj).sum())
            .collect();
        let bound = match variance_bound {
            Some(b) => b,
            None => {
                let mut pj = proj.clone();
                let center = median(&mut pj);
                let mut dev: Vec<f64> = proj.iter().map(|p| (p - center).abs()).collect();
                let sigma = 1.4826 * median(&mut dev);
                4.0 * sigma * sigma
            }
        };
        if lambda <= bound {
            return Ok(mu);
        }
        let remove = per_round.min(alive.len() - floor);
        if remove == 0 {
            return Ok(mu);
        }
        let mut order: Vec<usize> = (0..alive.len()).collect();
        // largest score first; index order breaks ties
        order.sort_by(|&a, &b| (proj[b] * proj[b]).total_cmp(&(proj[a] * proj[a])).then(a.cmp(&b)));
        let mut drop = vec![false; alive.len()];
        for &o in &order[..remove] {
            drop[o] = true;
        }
        alive = alive.iter().zip(&drop).filter(|(_, &dr)| !dr).map(|(&i, _)| i).collect();
    }
    let survivors: Vec<&[f64]> = alive.iter().map(|&i| all[i]).collect();
    Ok(mean_of(&survivors))
}
