//! Experiment configuration documents.
//!
//! A config is a single JSON object with a `problem` and a `run` section.
//! Unknown keys are rejected and parse errors name the offending field path.
//! Defaults that do not depend on the problem are materialized by serde; the
//! rest are filled in by [`ExperimentConfig::resolve`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{fedpd_eta_limit, Algorithm, InitPoint, RunConfig, StepSchedule};
use crate::data::{
    identical_shards, load_csv, shard_round_robin, strong_noniid_shards, weak_noniid_shards,
    DEFAULT_FAMILY, DEFAULT_NOISE_HALFWIDTH,
};
use crate::error::{invalid, Error, Result};
use crate::local_solvers::{
    default_inner_step, default_max_inner, OracleIConfig, OracleIIConfig, OracleVariant,
};
use crate::problems::{ChainSpec, LossFamily, Problem};

fn default_family() -> LossFamily {
    DEFAULT_FAMILY
}

fn default_noise() -> f64 {
    DEFAULT_NOISE_HALFWIDTH
}

fn one() -> usize {
    1
}

/// Where the data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Weak {
        agents: usize,
        samples_per_agent: usize,
        dim: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_family")]
        family: LossFamily,
        #[serde(default)]
        lipschitz: Option<f64>,
    },
    Strong {
        agents: usize,
        samples_per_agent: usize,
        dim: usize,
        #[serde(default = "default_noise")]
        noise_halfwidth: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_family")]
        family: LossFamily,
        #[serde(default)]
        lipschitz: Option<f64>,
    },
    /// Every agent holds the same weakly generated shard.
    Identical {
        agents: usize,
        samples_per_agent: usize,
        dim: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_family")]
        family: LossFamily,
        #[serde(default)]
        lipschitz: Option<f64>,
    },
    /// Header-free `label,f1,...,fd` rows dealt round-robin to `agents`.
    Csv {
        path: PathBuf,
        agents: usize,
        #[serde(default = "default_family")]
        family: LossFamily,
        #[serde(default)]
        lipschitz: Option<f64>,
    },
    QuadraticPair {
        #[serde(default = "one")]
        dim: usize,
    },
    Chain {
        chain_len: usize,
        agents: usize,
        eps: f64,
        lipschitz: f64,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem> {
        let (problem, lipschitz) = match self {
            ProblemSpec::Weak {
                agents,
                samples_per_agent,
                dim,
                seed,
                family,
                lipschitz,
            } => (
                Problem::from_shards(
                    family.clone(),
                    weak_noniid_shards(*agents, *samples_per_agent, *dim, *seed)?,
                )?,
                *lipschitz,
            ),
            ProblemSpec::Strong {
                agents,
                samples_per_agent,
                dim,
                noise_halfwidth,
                seed,
                family,
                lipschitz,
            } => {
                let shards = strong_noniid_shards(
                    *agents,
                    *samples_per_agent,
                    *dim,
                    *noise_halfwidth,
                    *seed,
                )?;
                (Problem::from_shards(family.clone(), shards)?, *lipschitz)
            }
            ProblemSpec::Identical {
                agents,
                samples_per_agent,
                dim,
                seed,
                family,
                lipschitz,
            } => (
                Problem::from_shards(
                    family.clone(),
                    identical_shards(*agents, *samples_per_agent, *dim, *seed)?,
                )?,
                *lipschitz,
            ),
            ProblemSpec::Csv {
                path,
                agents,
                family,
                lipschitz,
            } => {
                let shards = shard_round_robin(load_csv(path)?, *agents)?;
                (Problem::from_shards(family.clone(), shards)?, *lipschitz)
            }
            ProblemSpec::QuadraticPair { dim } => (Problem::quadratic_pair(*dim)?, None),
            ProblemSpec::Chain {
                chain_len,
                agents,
                eps,
                lipschitz,
            } => (
                Problem::chain(ChainSpec::new(*chain_len, *agents, *eps, *lipschitz)?)?,
                None,
            ),
        };
        match lipschitz {
            Some(l) => problem.with_lipschitz(l),
            None => Ok(problem),
        }
    }

    /// Resolves a relative CSV path against `base`.
    pub fn rebase(&mut self, base: &Path) {
        if let ProblemSpec::Csv { path, .. } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

/// Run settings; omitted problem-dependent values are derived from `L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    /// Defaults to `(√5-1)/(8L)` for FedPD and `1/(2L)` otherwise.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub p: f64,
    /// Defaults to `L`.
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default)]
    pub eps1: Option<f64>,
    #[serde(default)]
    pub inner_step: Option<f64>,
    #[serde(default)]
    pub max_inner: Option<usize>,
    #[serde(default)]
    pub check_every: Option<usize>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub refresh_period: Option<usize>,
    #[serde(default)]
    pub init: InitPoint,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
}

fn default_rounds() -> usize {
    100
}

fn default_local_steps() -> usize {
    8
}

fn default_divergence() -> f64 {
    crate::algorithms::DEFAULT_DIVERGENCE_THRESHOLD
}

impl RunSpec {
    pub fn new(algorithm: Algorithm) -> Self {
        serde_json::from_value(serde_json::json!({ "algorithm": algorithm }))
            .expect("defaults are valid")
    }

    /// Concrete run configuration for `problem`.
    pub fn to_run_config(&self, problem: &Problem) -> Result<RunConfig> {
        let l = problem.lipschitz();
        let eta = self.eta.unwrap_or(if self.algorithm.is_fedpd() {
            fedpd_eta_limit(l) / 2.0
        } else {
            0.5 / l
        });
        let eps1 = self.eps1.unwrap_or(crate::algorithms::DEFAULT_EPS1);
        let oracle1 = match self.algorithm {
            Algorithm::FedPdGd | Algorithm::FedPdSgd => Some(OracleIConfig {
                variant: if self.algorithm == Algorithm::FedPdGd {
                    OracleVariant::Gd
                } else {
                    OracleVariant::Sgd
                },
                inner_step: self.inner_step.unwrap_or(default_inner_step(eta, l)),
                eps1,
                max_inner: self.max_inner.unwrap_or(default_max_inner(eta, l, eps1)),
                batch: self.batch,
                check_every: self.check_every.unwrap_or(10),
            }),
            _ => None,
        };
        let oracle2 = match self.algorithm {
            Algorithm::FedPdVr => Some(OracleIIConfig {
                gamma: self
                    .gamma
                    .unwrap_or(10.0 * eta / (self.batch as f64 * l.sqrt())),
                q: self.local_steps,
                refresh_period: self
                    .refresh_period
                    .unwrap_or(crate::algorithms::DEFAULT_REFRESH_PERIOD),
                batch: self.batch,
            }),
            _ => None,
        };
        let cfg = RunConfig {
            algorithm: self.algorithm,
            rounds: self.rounds,
            local_steps: self.local_steps,
            eta,
            p: self.p,
            rho: self.rho.unwrap_or(l),
            schedule: self.schedule.clone(),
            batch: self.batch,
            oracle1,
            oracle2,
            init: self.init.clone(),
            seed: self.seed,
            divergence_threshold: self.divergence_threshold,
        };
        cfg.resolved(problem)
    }
}

/// A complete experiment document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Write every `trace_every`-th round (the last round is always written).
    #[serde(default = "one")]
    pub trace_every: usize,
}

/// Fully materialized experiment, as embedded in run summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedExperiment {
    pub problem: ProblemSpec,
    pub lipschitz: f64,
    pub run: RunConfig,
    pub output_dir: Option<PathBuf>,
    pub trace_every: usize,
}

impl ExperimentConfig {
    /// Strict parse; errors carry the JSON path of the offending field.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::InvalidConfig(format!("at `{path}`: {}", e.into_inner()))
        })?;
        if cfg.trace_every == 0 {
            return Err(invalid("at `trace_every`: must be at least 1"));
        }
        Ok(cfg)
    }

    /// Reads a config file; relative CSV paths resolve against its directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.problem.rebase(dir);
        }
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<(Problem, ResolvedExperiment)> {
        let problem = self.problem.build()?;
        let run = self.run.to_run_config(&problem)?;
        let resolved = ResolvedExperiment {
            problem: self.problem.clone(),
            lipschitz: problem.lipschitz(),
            run,
            output_dir: self.output_dir.clone(),
            trace_every: self.trace_every,
        };
        Ok((problem, resolved))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "problem": {"kind": "quadratic_pair"},
        "run": {"algorithm": "fedpd-gd", "eta": 0.2, "rounds": 3}
    }"#;

    #[test]
    fn minimal_config_resolves() {
        let cfg = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        let (problem, resolved) = cfg.resolve().unwrap();
        assert_eq!(problem.n_agents(), 2);
        let o = resolved.run.oracle1.unwrap();
        assert_eq!(o.inner_step, 0.2 / 1.2);
        assert_eq!(resolved.run.rounds, 3);
    }

    #[test]
    fn unknown_field_is_named() {
        let text = r#"{"problem": {"kind": "quadratic_pair"}, "run": {"algorithm": "fedavg-gd", "etaa": 1}}"#;
        let msg = ExperimentConfig::from_json_str(text)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("etaa"), "{msg}");
        let text = r#"{"problem": {"kind": "quadratic_pair"}, "run": {"algorithm": "fedavg-gd", "eta": "x"}}"#;
        let msg = ExperimentConfig::from_json_str(text)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("run.eta"), "{msg}");
    }

    #[test]
    fn run_spec_defaults() {
        let spec = RunSpec::new(Algorithm::FedAvgGd);
        assert_eq!(spec.rounds, 100);
        assert_eq!(spec.local_steps, 8);
        assert_eq!(spec.batch, 1);
        let p = Problem::quadratic_pair(1).unwrap();
        let cfg = spec.to_run_config(&p).unwrap();
        assert_eq!(cfg.eta, 0.5);
    }
}
