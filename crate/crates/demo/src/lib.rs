//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations are exposed: robust location estimates of a 2-D point
//! cloud, step-by-step 2-D clustering with K-means, K-geomedians or trimmed
//! K-means, and misclustering-versus-iteration curves on a small synthetic
//! fleet. Points cross the boundary as flat `[x0, y0, x1, y1, ...]` arrays.

use byzfed::clustering::{knn_noise_scale, random_init, run_lloyd_variant, warm_start_init, ClusteringState, LloydVariant};
use byzfed::datagen::{generate_fleet, FleetConfig, GroundTruth};
use byzfed::metrics::mismetrics;
use byzfed::numerics::RngStream;
use byzfed::pipeline::{stage_erms, SolverSpec};
use byzfed::robust_stats::{coord_median, geometric_median, iter_filter_mean, sample_mean, trimmed_mean};
use byzfed::ModelVector;
use serde::Serialize;
use wasm_bindgen::prelude::*;

// Errors stay plain strings until they cross into JavaScript, so that the
// logic can be unit-tested on the host, where `JsError` cannot be built.
type DemoResult<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn js<T>(r: DemoResult<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

fn unflatten(flat: &[f64]) -> DemoResult<Vec<ModelVector>> {
    if !flat.len().is_multiple_of(2) || flat.is_empty() {
        return Err("expected a non-empty list of x, y pairs".into());
    }
    Ok(flat.chunks_exact(2).map(|p| ModelVector::new(p.to_vec())).collect())
}

fn flatten(points: &[ModelVector]) -> Vec<f64> {
    points.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Location estimates of a 2-D cloud, flattened in the order sample mean,
/// trimmed mean (`beta`), coordinate-wise median, geometric median and
/// iterative filter.
#[wasm_bindgen]
pub fn robust_means(points: &[f64], beta: f64) -> Result<Vec<f64>, JsError> {
    js(location_estimates(points, beta))
}

fn location_estimates(points: &[f64], beta: f64) -> DemoResult<Vec<f64>> {
    let pts = unflatten(points)?;
    let mut out = Vec::with_capacity(10);
    out.extend(sample_mean(&pts).map_err(err)?.iter());
    out.extend(trimmed_mean(&pts, beta).map_err(err)?.iter());
    out.extend(coord_median(&pts).map_err(err)?.iter());
    out.extend(geometric_median(&pts, 1e-9, 1000).map_err(err)?.iter());
    if pts.len() >= 2 {
        out.extend(iter_filter_mean(&pts, None, 50).map_err(err)?.iter());
    } else {
        out.extend(pts[0].iter());
    }
    Ok(out)
}

/// A 2-D Gaussian mixture with a block of outliers, clustered one Lloyd step
/// at a time.
#[wasm_bindgen]
pub struct ClusterDemo {
    points: Vec<ModelVector>,
    truth: GroundTruth,
    state: ClusteringState,
    sigma_hat: f64,
}

#[wasm_bindgen]
impl ClusterDemo {
    /// `k` clusters of `per_cluster` points with unit noise, centers on a
    /// circle of radius `radius`, plus `outliers` points far off to one side.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, k: usize, per_cluster: usize, outliers: usize, radius: f64) -> Result<ClusterDemo, JsError> {
        js(Self::build(seed.into(), k, per_cluster, outliers, radius))
    }

    /// Restarts from random centers (`warm < 0`) or from labels where a
    /// `warm` fraction of honest points is correct.
    pub fn reset(&mut self, seed: u32, warm: f64) -> Result<(), JsError> {
        js(self.restart(seed.into(), warm))
    }

    /// One center/assignment step with `"km"`, `"kgm"` or `"tkm"`.
    pub fn step(&mut self, variant: &str) -> Result<(), JsError> {
        js(self.advance(variant))
    }

    pub fn points(&self) -> Vec<f64> {
        flatten(&self.points)
    }

    /// Ground-truth cluster per point, `-1` for outliers.
    pub fn true_labels(&self) -> Vec<i32> {
        self.truth.labels.iter().map(|l| l.map_or(-1, |v| v as i32)).collect()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.state.labels.iter().map(|&l| l as u32).collect()
    }

    pub fn trimmed(&self) -> Vec<u8> {
        self.state.trimmed.iter().map(|&t| u8::from(t)).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        flatten(&self.state.centers)
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration
    }

    /// Trimming radius used by `"tkm"`.
    pub fn trim_radius(&self) -> f64 {
        byzfed::clustering::DEFAULT_TRIM_C * self.sigma_hat * 2f64.sqrt()
    }

    /// Fraction of honest points with a wrong label, under the best matching
    /// of estimated to true clusters.
    pub fn misclustering(&self) -> Result<f64, JsError> {
        js(self.a_s())
    }
}

impl ClusterDemo {
    fn build(seed: u64, k: usize, per_cluster: usize, outliers: usize, radius: f64) -> DemoResult<ClusterDemo> {
        if k == 0 || per_cluster == 0 {
            return Err("need at least one cluster and one point per cluster".into());
        }
        let mut rng = RngStream::new(seed, 0);
        let centers: Vec<ModelVector> = (0..k)
            .map(|j| {
                let a = std::f64::consts::TAU * j as f64 / k as f64;
                ModelVector::new(vec![radius * a.cos(), radius * a.sin()])
            })
            .collect();
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (j, c) in centers.iter().enumerate() {
            for _ in 0..per_cluster {
                points.push(ModelVector::new(vec![c[0] + rng.normal(), c[1] + rng.normal()]));
                labels.push(Some(j));
            }
        }
        for _ in 0..outliers {
            points.push(ModelVector::new(vec![3.0 * radius + rng.normal(), 2.0 * radius + rng.normal()]));
            labels.push(None);
        }
        let truth = GroundTruth { centers, labels };
        let state = random_init(&points, k, &mut rng).map_err(err)?;
        let sigma_hat = knn_noise_scale(&points, points.len().div_ceil(2 * k)).map_err(err)?;
        Ok(ClusterDemo {
            points,
            truth,
            state,
            sigma_hat,
        })
    }

    fn restart(&mut self, seed: u64, warm: f64) -> DemoResult<()> {
        let mut rng = RngStream::new(seed, 1);
        self.state = if warm < 0.0 {
            random_init(&self.points, self.truth.k(), &mut rng)
        } else {
            warm_start_init(&self.points, &self.truth, warm.min(1.0), &mut rng)
        }
        .map_err(err)?;
        Ok(())
    }

    fn advance(&mut self, variant: &str) -> DemoResult<()> {
        let variant = match variant {
            "km" => LloydVariant::Lloyd,
            "kgm" => LloydVariant::KGeoMedian,
            "tkm" => LloydVariant::TrimmedKMeans {
                sigma_hat: Some(self.sigma_hat),
                c: byzfed::clustering::DEFAULT_TRIM_C,
            },
            other => return Err(format!("unknown variant {other:?}")),
        };
        let (state, _) = run_lloyd_variant(&self.points, self.state.clone(), &variant, 1, None).map_err(err)?;
        self.state = state;
        Ok(())
    }

    fn a_s(&self) -> DemoResult<f64> {
        Ok(mismetrics(&self.state, &self.truth).map_err(err)?.a_s)
    }
}

#[derive(Serialize)]
struct Curves {
    iterations: usize,
    km: Vec<f64>,
    kgm: Vec<f64>,
    tkm: Vec<f64>,
}

/// Misclustering against iteration for the three Lloyd variants on a small
/// mixture-of-regressions fleet (m = 60, n = 40, d = 20, K = 3), starting from
/// a 60% warm start. Returns JSON `{iterations, km, kgm, tkm}`.
#[wasm_bindgen]
pub fn misclustering_curves(seed: u32, sigma: f64, alpha: f64, iterations: usize) -> Result<String, JsError> {
    js(curves_json(seed.into(), sigma, alpha, iterations))
}

fn curves_json(seed: u64, sigma: f64, alpha: f64, iterations: usize) -> DemoResult<String> {
    let fleet = generate_fleet(&FleetConfig {
        m: 60,
        n: 40,
        d: 20,
        k: 3,
        alpha,
        sigma,
        adversary: Default::default(),
        seed,
    })
    .map_err(err)?;
    let erms = stage_erms(&fleet, &SolverSpec::Erm, Default::default()).map_err(err)?;
    let mut rng = RngStream::new(seed, 2);
    let init = warm_start_init(&erms, &fleet.truth, 0.6, &mut rng).map_err(err)?;
    let sigma_hat = knn_noise_scale(&erms, erms.len().div_ceil(6)).map_err(err)?;
    let curve = |variant: LloydVariant| -> DemoResult<Vec<f64>> {
        let (_, history) = run_lloyd_variant(&erms, init.clone(), &variant, iterations, Some(&fleet.truth)).map_err(err)?;
        let mut a: Vec<f64> = history.iter().map(|r| r.a_s).collect();
        // Converged runs stop early; hold the last value to the end.
        let last = *a.last().unwrap_or(&0.0);
        a.resize(iterations + 1, last);
        Ok(a)
    };
    let curves = Curves {
        iterations,
        km: curve(LloydVariant::Lloyd)?,
        kgm: curve(LloydVariant::KGeoMedian)?,
        tkm: curve(LloydVariant::TrimmedKMeans {
            sigma_hat: Some(sigma_hat),
            c: byzfed::clustering::DEFAULT_TRIM_C,
        })?,
    };
    serde_json::to_string(&curves).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robust_means_resist_a_far_outlier() {
        let mut flat = Vec::new();
        for i in 0..9 {
            flat.extend([i as f64 * 0.1, 0.0]);
        }
        flat.extend([1000.0, 1000.0]);
        let out = location_estimates(&flat, 0.1).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out[0] > 50.0, "sample mean should be dragged away");
        for est in out[2..].chunks(2) {
            assert!(est[0] < 1.0 && est[1].abs() < 1.0, "{est:?}");
        }
    }

    #[test]
    fn trimmed_kmeans_separates_the_demo_mixture() {
        let mut demo = ClusterDemo::build(3, 3, 40, 12, 8.0).unwrap();
        demo.restart(1, 0.6).unwrap();
        for _ in 0..10 {
            demo.advance("tkm").unwrap();
        }
        assert_eq!(demo.a_s().unwrap(), 0.0);
        assert_eq!(demo.points().len(), 2 * (120 + 12));
        assert_eq!(demo.labels().len(), 132);
        assert!(demo.advance("nope").is_err());
    }

    #[test]
    fn curves_have_one_value_per_iteration() {
        let json = curves_json(5, 1.0, 0.2, 8).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["km", "kgm", "tkm"] {
            assert_eq!(v[key].as_array().unwrap().len(), 9);
        }
    }
}
