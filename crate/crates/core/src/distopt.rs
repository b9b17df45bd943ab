//! Stage III: robust distributed gradient descent and robust federated
//! averaging within one estimated cluster.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::WorkerShard;
use crate::error::{Error, Result};
use crate::localsolve::{LocalObjective, LossSpec, DIVERGENCE_NORM};
use crate::numerics::{streams, top_eigenpair, Matrix, ModelVector, RngStream};
use crate::robust_stats::AggregatorSpec;

pub const DEFAULT_MAX_ROUNDS: usize = 300;
pub const DEFAULT_STOP_TOL: f64 = 1e-8;

/// What Byzantine machines report in place of an honest gradient or model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    /// Byzantine machines stay silent and are left out of aggregation.
    None,
    /// Honest computation on the machine's own (corrupt) data.
    #[default]
    OwnCorruptData,
    /// `−scale` times the honest report on its own data.
    SignFlip { scale: f64 },
    /// Independent `N(0, scale²)` coordinates each round.
    RandomGauss { scale: f64 },
    /// The same fixed vector every round.
    ConstantVector { value: Vec<f64> },
}

/// One machine as the server sees it: an objective it can be asked to
/// evaluate, and whether its replies are adversarial.
#[derive(Clone, Debug)]
pub struct SimulatedWorker {
    pub machine_id: usize,
    objective: LocalObjective,
    adversary: Option<RngStream>,
}

impl SimulatedWorker {
    pub fn honest(machine_id: usize, objective: LocalObjective) -> Self {
        SimulatedWorker {
            machine_id,
            objective,
            adversary: None,
        }
    }

    pub fn byzantine(machine_id: usize, objective: LocalObjective, attack_seed: u64) -> Self {
        SimulatedWorker {
            machine_id,
            objective,
            adversary: Some(RngStream::new(attack_seed, streams::ATTACK_BASE + machine_id as u64)),
        }
    }

    /// Builds a worker from a shard, reading its role.
    pub fn from_shard(shard: &WorkerShard, loss: LossSpec, attack_seed: u64) -> Result<Self> {
        let obj = LocalObjective::from_shard(shard, loss)?;
        Ok(if shard.role.is_byzantine() {
            SimulatedWorker::byzantine(shard.machine_id, obj, attack_seed)
        } else {
            SimulatedWorker::honest(shard.machine_id, obj)
        })
    }

    pub fn is_byzantine(&self) -> bool {
        self.adversary.is_some()
    }

    pub fn objective(&self) -> &LocalObjective {
        &self.objective
    }

    /// `honest` is the report an honest machine would send on this worker's
    /// data; `center` is the point the attack is relative to (zero for
    /// gradients, the global model for local models).
    fn report(&mut self, honest: ModelVector, center: &[f64], attack: &AttackSpec) -> Option<ModelVector> {
        let Some(rng) = self.adversary.as_mut() else {
            return Some(honest);
        };
        match attack {
            AttackSpec::None => None,
            AttackSpec::OwnCorruptData => Some(honest),
            AttackSpec::SignFlip { scale } => Some(
                honest
                    .iter()
                    .zip(center)
                    .map(|(h, c)| c - scale * (h - c))
                    .collect(),
            ),
            AttackSpec::RandomGauss { scale } => {
                Some(center.iter().map(|c| c + scale * rng.normal()).collect())
            }
            AttackSpec::ConstantVector { value } => Some(ModelVector::new(value.clone())),
        }
    }
}

pub fn workers_from_shards<'a, I>(shards: I, loss: LossSpec, attack_seed: u64) -> Result<Vec<SimulatedWorker>>
where
    I: IntoIterator<Item = &'a WorkerShard>,
{
    shards
        .into_iter()
        .map(|s| SimulatedWorker::from_shard(s, loss, attack_seed))
        .collect()
}

/// `1 / λ_max` of the average Hessian of the workers' objectives.
pub fn pooled_step(workers: &[SimulatedWorker]) -> Result<f64> {
    let first = workers.first().ok_or_else(|| Error::input("no workers"))?;
    let d = first.objective.dim();
    let mut h = Matrix::zeros(d, d);
    for w in workers {
        h.add_scaled(1.0 / workers.len() as f64, w.objective.hessian());
    }
    let (l, _) = top_eigenpair(&h)?;
    if !(l > 0.0) {
        return Err(Error::numeric("pooled Hessian is zero"));
    }
    Ok(1.0 / l)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub step_size: f64,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    pub aggregator: AggregatorSpec,
    /// 1: gradient aggregation. More: each machine takes this many local
    /// steps and the server aggregates the resulting models.
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
}

fn default_rounds() -> usize {
    DEFAULT_MAX_ROUNDS
}

fn default_local_steps() -> usize {
    1
}

fn default_stop_tol() -> f64 {
    DEFAULT_STOP_TOL
}

impl OptConfig {
    pub fn new(step_size: f64, aggregator: AggregatorSpec) -> Self {
        OptConfig {
            step_size,
            max_rounds: DEFAULT_MAX_ROUNDS,
            aggregator,
            local_steps: 1,
            stop_tol: DEFAULT_STOP_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::config(format!("step size must be positive and finite, got {}", self.step_size)));
        }
        if self.local_steps == 0 {
            return Err(Error::config("local_steps must be at least 1"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::config("stop_tol must be non-negative"));
        }
        self.aggregator.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxRounds,
    /// The iterate blew up; the outcome holds the last finite iterate.
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub update_norm: f64,
    pub w: ModelVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptOutcome {
    pub w: ModelVector,
    pub trajectory: Vec<RoundRecord>,
    pub stop: StopReason,
}

fn run_rounds(
    workers: &mut [SimulatedWorker],
    cfg: &OptConfig,
    attack: &AttackSpec,
    init: &[f64],
    model_space: bool,
) -> Result<OptOutcome> {
    cfg.validate()?;
    if workers.is_empty() {
        return Err(Error::input("cluster has no workers"));
    }
    if let Some(w) = workers.iter().find(|w| w.objective.dim() != init.len()) {
        return Err(Error::input(format!(
            "worker {} has dimension {}, model has {}",
            w.machine_id,
            w.objective.dim(),
            init.len()
        )));
    }
    let mut w = ModelVector::new(init.to_vec());
    let mut trajectory = Vec::new();
    let zero = ModelVector::zeros(init.len());
    for round in 0..cfg.max_rounds {
        let reports: Vec<ModelVector> = workers
            .par_iter_mut()
            .map(|worker| {
                if model_space {
                    let local = worker.objective.descend(&w, cfg.step_size, cfg.local_steps);
                    worker.report(local, &w, attack)
                } else {
                    let g = worker.objective.gradient(&w);
                    worker.report(g, &zero, attack)
                }
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        if reports.is_empty() {
            return Err(Error::input("every worker in the cluster is silent"));
        }
        let agg = cfg.aggregator.aggregate(&reports)?;
        let next = if model_space {
            agg
        } else {
            let mut v = w.clone();
            v.axpy(-cfg.step_size, &agg);
            v
        };
        let update_norm = next.dist(&w);
        if !next.is_finite() || next.norm() > DIVERGENCE_NORM {
            return Ok(OptOutcome {
                w,
                trajectory,
                stop: StopReason::Diverged,
            });
        }
        w = next;
        trajectory.push(RoundRecord {
            round,
            update_norm,
            w: w.clone(),
        });
        if update_norm < cfg.stop_tol {
            return Ok(OptOutcome {
                w,
                trajectory,
                stop: StopReason::Converged,
            });
        }
    }
    Ok(OptOutcome {
        w,
        trajectory,
        stop: StopReason::MaxRounds,
    })
}

/// `w_{t+1} = w_t − η · aggregate({gᵢ(w_t)})` over the workers of one cluster.
///
/// Ignores `cfg.local_steps`.
pub fn robust_gd(workers: &mut [SimulatedWorker], cfg: &OptConfig, attack: &AttackSpec, init: &[f64]) -> Result<OptOutcome> {
    run_rounds(workers, cfg, attack, init, false)
}

/// Robust federated averaging: every round each machine takes
/// `cfg.local_steps` gradient steps from the global model on its own data and
/// the server aggregates the returned models.
pub fn fed_avg_robust(workers: &mut [SimulatedWorker], cfg: &OptConfig, attack: &AttackSpec, init: &[f64]) -> Result<OptOutcome> {
    run_rounds(workers, cfg, attack, init, true)
}
