//! Stage I: what each machine computes from its own shard.

use serde::{Deserialize, Serialize};

use crate::datagen::WorkerShard;
use crate::error::{Error, Result};
use crate::numerics::{dot, least_squares, mean_of, top_eigenpair, Matrix, ModelVector};

/// Iterates whose norm exceeds this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Per-sample loss `f(w; ·)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    /// `½(xᵀw − y)²` on regression samples.
    #[default]
    SquaredError,
    /// `½‖w − x‖²` on point samples; the local ERM is the shard mean.
    LocationSquared,
}

/// One data point as seen by a streaming learner.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub y: f64,
}

impl LossSpec {
    pub fn value(&self, w: &[f64], s: Sample<'_>) -> f64 {
        match self {
            LossSpec::SquaredError => 0.5 * (dot(s.x, w) - s.y).powi(2),
            LossSpec::LocationSquared => 0.5 * crate::numerics::dist_sq(w, s.x),
        }
    }

    pub fn gradient(&self, w: &[f64], s: Sample<'_>) -> ModelVector {
        match self {
            LossSpec::SquaredError => {
                let r = dot(s.x, w) - s.y;
                s.x.iter().map(|xi| r * xi).collect()
            }
            LossSpec::LocationSquared => w.iter().zip(s.x).map(|(a, b)| a - b).collect(),
        }
    }

    fn check_shard(&self, shard: &WorkerShard) -> Result<()> {
        if shard.is_empty() {
            return Err(Error::input(format!("machine {} has an empty shard", shard.machine_id)));
        }
        if *self == LossSpec::SquaredError && shard.y.len() != shard.len() {
            return Err(Error::input(format!(
                "machine {}: squared-error loss needs one response per row ({} rows, {} responses)",
                shard.machine_id,
                shard.len(),
                shard.y.len()
            )));
        }
        Ok(())
    }
}

/// Samples of a shard in stored order.
pub fn samples<'a>(shard: &'a WorkerShard) -> impl Iterator<Item = Sample<'a>> + 'a {
    shard.x.row_iter().enumerate().map(move |(i, x)| Sample {
        x,
        y: shard.y.get(i).copied().unwrap_or(0.0),
    })
}

/// Exact minimizer of the shard's average loss.
pub fn local_erm(shard: &WorkerShard, loss: LossSpec) -> Result<ModelVector> {
    loss.check_shard(shard)?;
    match loss {
        LossSpec::SquaredError => least_squares(&shard.x, &shard.y),
        LossSpec::LocationSquared => {
            let rows: Vec<&[f64]> = shard.x.row_iter().collect();
            Ok(mean_of(&rows))
        }
    }
}

/// `∇F(w) = (1/n) Σⱼ ∇f(w; sampleⱼ)`, computed straight from the data.
pub fn local_gradient(shard: &WorkerShard, loss: LossSpec, w: &[f64]) -> Result<ModelVector> {
    loss.check_shard(shard)?;
    if w.len() != shard.dim() {
        return Err(Error::input(format!(
            "model has dimension {}, shard has {}",
            w.len(),
            shard.dim()
        )));
    }
    let mut g = ModelVector::zeros(shard.dim());
    for s in samples(shard) {
        g.axpy(1.0, &loss.gradient(w, s));
    }
    Ok(g.scaled(1.0 / shard.len() as f64))
}

/// The shard's average loss as a quadratic `F(w) = ½wᵀHw − bᵀw + c`, with the
/// Hessian and linear term precomputed so that repeated gradient evaluations
/// cost O(d²) instead of O(nd).
#[derive(Clone, Debug, PartialEq)]
pub struct LocalObjective {
    hessian: Matrix,
    linear: ModelVector,
}

impl LocalObjective {
    pub fn from_shard(shard: &WorkerShard, loss: LossSpec) -> Result<Self> {
        loss.check_shard(shard)?;
        let inv_n = 1.0 / shard.len() as f64;
        match loss {
            LossSpec::SquaredError => {
                let mut hessian = shard.x.gram();
                hessian.scale(inv_n);
                let linear = ModelVector::new(shard.x.tr_mul_vec(&shard.y)).scaled(inv_n);
                Ok(LocalObjective { hessian, linear })
            }
            LossSpec::LocationSquared => {
                let rows: Vec<&[f64]> = shard.x.row_iter().collect();
                Ok(LocalObjective {
                    hessian: Matrix::identity(shard.dim()),
                    linear: mean_of(&rows),
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.dim()
    }

    pub fn hessian(&self) -> &Matrix {
        &self.hessian
    }

    pub fn gradient(&self, w: &[f64]) -> ModelVector {
        let hw = self.hessian.mul_vec(w);
        hw.iter().zip(self.linear.iter()).map(|(a, b)| a - b).collect()
    }

    /// `steps` gradient-descent steps of size `step` starting from `w`.
    pub fn descend(&self, w: &[f64], step: f64, steps: usize) -> ModelVector {
        let mut v = ModelVector::new(w.to_vec());
        for _ in 0..steps {
            let g = self.gradient(&v);
            v.axpy(-step, &g);
        }
        v
    }

    /// `1 / λ_max(H)`, the largest stable constant step.
    pub fn inverse_smoothness(&self) -> Result<f64> {
        let (l, _) = top_eigenpair(&self.hessian)?;
        if l <= 0.0 {
            return Err(Error::numeric("local objective has a zero Hessian"));
        }
        Ok(1.0 / l)
    }
}

/// Gradient descent on the shard's average loss from the origin.
///
/// Approximate by construction: with few iterations it stops short of the ERM
/// (which on square or wide designs acts as a regularizer).
pub fn gd_erm(shard: &WorkerShard, loss: LossSpec, step: f64, iters: usize) -> Result<ModelVector> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::config(format!("gradient step must be positive, got {step}")));
    }
    let obj = LocalObjective::from_shard(shard, loss)?;
    let mut w = ModelVector::zeros(obj.dim());
    for it in 0..iters {
        let g = obj.gradient(&w);
        w.axpy(-step, &g);
        if !w.is_finite() || w.norm() > DIVERGENCE_NORM {
            return Err(Error::numeric(format!(
                "machine {}: gradient descent diverged at iteration {it} (step {step})",
                shard.machine_id
            )));
        }
    }
    Ok(w)
}

/// Default GD step for a shard: `1 / λ_max` of its loss Hessian.
pub fn default_gd_step(shard: &WorkerShard, loss: LossSpec) -> Result<f64> {
    LocalObjective::from_shard(shard, loss)?.inverse_smoothness()
}

/// Online gradient descent schedule: `η_l = 1/(λ l)`, iterates projected onto
/// the ℓ₂ ball of the given radius (`None`: `2√d`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OgdSchedule {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub radius: Option<f64>,
}

fn default_lambda() -> f64 {
    1.0
}

impl Default for OgdSchedule {
    fn default() -> Self {
        OgdSchedule {
            lambda: 1.0,
            radius: None,
        }
    }
}

/// Online-to-batch conversion over a sample stream: runs projected OGD from
/// the origin, reading each sample exactly once, and returns the average of
/// the iterates `w₁..w_n` it played.
pub fn online_to_batch_stream<'a, I>(samples: I, dim: usize, loss: LossSpec, schedule: &OgdSchedule) -> Result<ModelVector>
where
    I: IntoIterator<Item = Sample<'a>>,
{
    if !(schedule.lambda > 0.0) {
        return Err(Error::config("OGD strong-convexity constant must be positive"));
    }
    let radius = schedule.radius.unwrap_or(2.0 * (dim as f64).sqrt());
    let mut w = ModelVector::zeros(dim);
    let mut sum = ModelVector::zeros(dim);
    let mut count = 0usize;
    for s in samples {
        if s.x.len() != dim {
            return Err(Error::input("sample dimension does not match the model"));
        }
        count += 1;
        sum.axpy(1.0, &w);
        let eta = 1.0 / (schedule.lambda * count as f64);
        let g = loss.gradient(&w, s);
        w.axpy(-eta, &g);
        let nw = w.norm();
        if nw > radius {
            w = w.scaled(radius / nw);
        }
    }
    if count == 0 {
        return Err(Error::input("online-to-batch needs at least one sample"));
    }
    Ok(sum.scaled(1.0 / count as f64))
}

pub fn online_to_batch(shard: &WorkerShard, loss: LossSpec, schedule: &OgdSchedule) -> Result<ModelVector> {
    loss.check_shard(shard)?;
    online_to_batch_stream(samples(shard), shard.dim(), loss, schedule)
}
