//! Loading experiment configs and applying command-line overrides.

use std::path::{Path, PathBuf};

use byzfed::datagen::FleetConfig;
use byzfed::distopt::AttackSpec;
use byzfed::pipeline::{
    ClustererSpec, ClusteringSettings, ExperimentConfig, FleetSource, IngestSpec, InitSpec, NoiseScale,
    OptimizationSettings, OptimizerSpec, SolverSpec,
};

/// A failure the user fixes by changing the config or the flags.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<byzfed::Error> for ConfigError {
    fn from(e: byzfed::Error) -> Self {
        match e.root() {
            byzfed::Error::Config(msg) => ConfigError(msg.clone()),
            _ => ConfigError(e.to_string()),
        }
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Reads a TOML config. A relative ingest path is taken relative to the
/// config file.
pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    if let FleetSource::Ingest(spec) = &mut cfg.fleet {
        if spec.path.is_relative() {
            if let Some(dir) = path.parent() {
                spec.path = dir.join(&spec.path);
            }
        }
    }
    Ok(cfg)
}

pub fn to_toml(cfg: &ExperimentConfig) -> String {
    toml::to_string_pretty(cfg).expect("experiment configs always serialize")
}

pub fn default_clusterers() -> Vec<ClustererSpec> {
    vec![
        ClustererSpec::Lloyd,
        ClustererSpec::KGeoMedian,
        ClustererSpec::TrimmedKMeans {
            c: byzfed::clustering::DEFAULT_TRIM_C,
            sigma: NoiseScale::Knn,
        },
    ]
}

pub fn default_optimizers() -> Vec<OptimizerSpec> {
    vec![
        OptimizerSpec::SampleMean,
        OptimizerSpec::TrimmedMean { beta: None },
        OptimizerSpec::FedAvg {
            local_steps: 5,
            beta: None,
        },
    ]
}

fn default_optimization() -> OptimizationSettings {
    OptimizationSettings {
        optimizers: default_optimizers(),
        step_size: None,
        max_rounds: byzfed::distopt::DEFAULT_MAX_ROUNDS,
        stop_tol: byzfed::distopt::DEFAULT_STOP_TOL,
        attack: AttackSpec::OwnCorruptData,
    }
}

/// The synthetic mixture-of-regressions setup used when `synth` gets no
/// config file.
pub fn default_synthetic() -> ExperimentConfig {
    ExperimentConfig {
        name: "synthetic".into(),
        seed: 2024,
        trials: 20,
        fleet: FleetSource::Synthetic(FleetConfig {
            m: 100,
            n: 100,
            d: 100,
            k: 5,
            alpha: 0.3,
            sigma: 2.0,
            adversary: Default::default(),
            seed: 0,
        }),
        loss: None,
        solver: SolverSpec::Gd { iters: 20, step: None },
        clustering: ClusteringSettings {
            init: InitSpec::WarmStart { correct_fraction: 0.6 },
            max_iter: 15,
            clusterers: default_clusterers(),
        },
        optimization: default_optimization(),
        oracle: false,
    }
}

/// Ingest setup used when `ingest` gets no config file.
pub fn default_ingest(data: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        name: "ingest".into(),
        seed: 2024,
        trials: 1,
        fleet: FleetSource::Ingest(IngestSpec {
            path: data,
            csv: Default::default(),
            gamma: None,
            min_cluster: 100,
            shard_size: 50,
            n_adv: 10,
            adv_noise: Default::default(),
        }),
        loss: None,
        solver: SolverSpec::Erm,
        clustering: ClusteringSettings {
            init: InitSpec::Random,
            max_iter: 15,
            clusterers: default_clusterers(),
        },
        optimization: default_optimization(),
        oracle: false,
    }
}

/// Flag values that replace config-file values when present.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub clusterers: Option<Vec<String>>,
    pub aggregators: Option<Vec<String>>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub data: Option<PathBuf>,
    pub shard_size: Option<usize>,
    pub n_adv: Option<usize>,
    pub min_cluster: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), ConfigError> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        match &mut cfg.fleet {
            FleetSource::Synthetic(f) => {
                if let Some(a) = self.alpha {
                    f.alpha = a;
                }
                if let Some(s) = self.sigma {
                    f.sigma = s;
                }
                let ingest_only = [
                    ("--gamma", self.gamma.is_some()),
                    ("--data", self.data.is_some()),
                    ("--shard-size", self.shard_size.is_some()),
                    ("--n-adv", self.n_adv.is_some()),
                    ("--min-cluster", self.min_cluster.is_some()),
                ];
                if let Some((flag, _)) = ingest_only.iter().find(|(_, set)| *set) {
                    return err(format!("{flag} only applies to ingested fleets"));
                }
            }
            FleetSource::Ingest(spec) => {
                if self.alpha.is_some() || self.sigma.is_some() {
                    return err("--alpha and --sigma only apply to synthetic fleets (use --n-adv)");
                }
                if let Some(g) = self.gamma {
                    spec.gamma = Some(g);
                }
                if let Some(p) = &self.data {
                    spec.path = p.clone();
                }
                if let Some(s) = self.shard_size {
                    spec.shard_size = s;
                }
                if let Some(n) = self.n_adv {
                    spec.n_adv = n;
                }
                if let Some(m) = self.min_cluster {
                    spec.min_cluster = m;
                }
            }
        }
        if let Some(names) = &self.clusterers {
            cfg.clustering.clusterers = names
                .iter()
                .map(|n| {
                    ClustererSpec::from_short_name(n)
                        .ok_or_else(|| ConfigError(format!("unknown clusterer {n:?} (expected KM, KGM or TKM)")))
                })
                .collect::<Result<_, _>>()?;
        }
        if let Some(names) = &self.aggregators {
            cfg.optimization.optimizers = names
                .iter()
                .map(|n| {
                    OptimizerSpec::from_short_name(n).ok_or_else(|| {
                        ConfigError(format!("unknown aggregator {n:?} (expected SM, TM, MED, GM, IF or FA)"))
                    })
                })
                .collect::<Result<_, _>>()?;
        }
        if let Some(b) = self.beta {
            cfg.optimization.optimizers = cfg.optimization.optimizers.drain(..).map(|o| o.with_beta(b)).collect();
        }
        cfg.validate().map_err(ConfigError::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_a_toml_round_trip() {
        for cfg in [default_synthetic(), default_ingest(PathBuf::from("points.csv"))] {
            let text = to_toml(&cfg);
            let back: ExperimentConfig = toml::from_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut cfg = default_synthetic();
        let o = Overrides {
            seed: Some(5),
            alpha: Some(0.1),
            clusterers: Some(vec!["tkm".into()]),
            aggregators: Some(vec!["TM".into(), "FA".into()]),
            beta: Some(0.25),
            ..Default::default()
        };
        o.apply(&mut cfg).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.cell_names(), vec!["TKM+TM", "TKM+FA"]);
        assert_eq!(cfg.optimization.optimizers[0], OptimizerSpec::TrimmedMean { beta: Some(0.25) });
        let FleetSource::Synthetic(f) = &cfg.fleet else { panic!() };
        assert_eq!(f.alpha, 0.1);
    }

    #[test]
    fn misplaced_flags_are_config_errors() {
        let mut cfg = default_synthetic();
        let o = Overrides {
            gamma: Some(1.0),
            ..Default::default()
        };
        assert!(o.apply(&mut cfg).is_err());

        let mut cfg = default_ingest(PathBuf::from("x.csv"));
        let o = Overrides {
            sigma: Some(1.0),
            ..Default::default()
        };
        assert!(o.apply(&mut cfg).is_err());

        let mut cfg = default_synthetic();
        let o = Overrides {
            aggregators: Some(vec!["XYZ".into()]),
            ..Default::default()
        };
        assert!(o.apply(&mut cfg).is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut cfg = default_synthetic();
        let o = Overrides {
            beta: Some(0.7),
            ..Default::default()
        };
        assert!(o.apply(&mut cfg).is_err());
    }
}
