//! Experiment configuration. One TOML file describes the sources, the
//! target, how sources are trained, how contexts are fitted and how each
//! method adapts. Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptConfig, QModelConfig};
use crate::context::{FitConfig, NormalizationMode};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::mdp::TaskHandle;
use crate::nn::MlpConfig;
use crate::training::{PolicyGradientConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub paradigm: Paradigm,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub sources: Vec<TaskConfig>,
    pub target: TaskConfig,
    pub source_training: SourceTraining,
    pub context: ContextConfig,
    pub adapt: AdaptConfig,
    /// Student network of the policy and actor-critic paradigms.
    #[serde(default)]
    pub student: Option<MlpConfig>,
    /// Adapted Q model of the value paradigm.
    #[serde(default)]
    pub q_model: Option<QModelConfig>,
    /// TOML file with `weights = [...]` replacing the similarity weights.
    /// Relative paths resolve against the config file's directory.
    #[serde(default)]
    pub weights_override: Option<PathBuf>,
    #[serde(default = "default_sk_episodes")]
    pub sk_episodes: usize,
}

fn default_sk_episodes() -> usize {
    crate::baselines::SK_EPISODES
}

/// Which kind of source knowledge is transferred.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Policy,
    Value,
    ActorCritic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Carol,
    CarolPlus,
    Pd,
    Lfs,
    Sk,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Carol,
        Method::CarolPlus,
        Method::Pd,
        Method::Lfs,
        Method::Sk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Carol => "carol",
            Method::CarolPlus => "carol_plus",
            Method::Pd => "pd",
            Method::Lfs => "lfs",
            Method::Sk => "sk",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::config("method", format!("unknown method `{name}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub env: EnvSpec,
    #[serde(default)]
    pub seed: u64,
    pub episode_cap: usize,
}

impl TaskConfig {
    pub fn task(&self) -> Result<TaskHandle> {
        TaskHandle::new(self.env.clone(), self.seed, self.episode_cap)
    }
}

/// How source knowledge is obtained. Tabular trainers store the greedy
/// policy alongside the Q-table so that every paradigm can use them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceTraining {
    ValueIteration {
        gamma: f64,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    QLearning {
        train: TrainConfig,
    },
    PolicyGradient {
        actor: MlpConfig,
        critic: MlpConfig,
        train: PolicyGradientConfig,
    },
}

fn default_tol() -> f64 {
    1e-10
}

fn default_probe_samples() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    /// Uniform-random transitions collected per source for model fitting.
    pub samples: usize,
    /// Target probe size.
    #[serde(default = "default_probe_samples")]
    pub probe_samples: usize,
    pub fit: FitConfig,
    #[serde(default)]
    pub mode: NormalizationMode,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::config(origin.display().to_string(), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, path)?;
        if let (Some(w), Some(dir)) = (&cfg.weights_override, path.parent()) {
            if w.is_relative() {
                cfg.weights_override = Some(dir.join(w));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment_id.is_empty() {
            return Err(Error::config("experiment_id", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "seed list must not be empty"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "method list must not be empty"));
        }
        if self.sources.is_empty() {
            return Err(Error::config("sources", "need at least one source"));
        }
        let mut names: Vec<&str> = self.sources.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("sources.name", "source names must be unique"));
        }
        if let Some(bad) = names.iter().find(|n| {
            n.is_empty()
                || !n
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        }) {
            return Err(Error::config(
                "sources.name",
                format!("`{bad}` is not a plain file name"),
            ));
        }
        let target = self.target.task()?;
        for s in &self.sources {
            s.task()?.spaces().check_compatible(&target.spaces())?;
        }
        self.adapt.validate()?;
        match self.paradigm {
            Paradigm::Value if self.q_model.is_none() => {
                return Err(Error::config("q_model", "required by the value paradigm"));
            }
            Paradigm::Policy | Paradigm::ActorCritic if self.student.is_none() => {
                return Err(Error::config(
                    "student",
                    "required by the policy and actor_critic paradigms",
                ));
            }
            _ => {}
        }
        if self.context.samples < 10 || self.context.probe_samples == 0 {
            return Err(Error::config(
                "context",
                "samples must be at least 10 and probe_samples positive",
            ));
        }
        if self.sk_episodes == 0 {
            return Err(Error::config("sk_episodes", "must be positive"));
        }
        Ok(())
    }
}

/// Contents of a weights override file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub weights: Vec<f64>,
}

impl WeightsFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::config(path.display().to_string(), e.message().to_string()))
    }
}
