//! Run configuration read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::dataset::SynthConfig;
use crate::env::EnvConfig;
use crate::learner::{Ablation, Algorithm, LearnerConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Training schedule and learner hyper-parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Training episodes between evaluation rounds.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Environment steps between update rounds.
    pub update_every: usize,
    pub critic_updates: usize,
    pub actor_updates: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub tau: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub lr_alpha: f64,
    pub lr_estimator: f64,
    pub alpha_init: f64,
    pub noise_std: f64,
    pub hidden: Vec<usize>,
    /// Action-penalty weight of the baseline's barrier reward.
    pub beta: f64,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 300,
            eval_every: 10,
            eval_episodes: 5,
            update_every: 60,
            critic_updates: 10,
            actor_updates: 1,
            batch_size: 128,
            buffer_capacity: 5000,
            tau: 0.01,
            lr_critic: 1e-3,
            lr_actor: 1e-4,
            lr_alpha: 1e-4,
            lr_estimator: 1e-3,
            alpha_init: 1.0,
            noise_std: 1.0,
            hidden: vec![64, 64],
            beta: 0.1,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn learner_config(&self, algorithm: Algorithm, ablation: Ablation, env: &EnvConfig) -> LearnerConfig {
        LearnerConfig {
            algorithm,
            ablation,
            hidden: self.hidden.clone(),
            lr_critic: self.lr_critic,
            lr_actor: self.lr_actor,
            lr_alpha: self.lr_alpha,
            lr_estimator: self.lr_estimator,
            tau: self.tau,
            gamma: env.gamma,
            alpha_init: self.alpha_init,
            noise_std: self.noise_std,
            cost_limit: env.cost_limit,
            batch_size: self.batch_size,
            critic_updates: self.critic_updates,
            actor_updates: self.actor_updates,
            grad_clip: self.grad_clip,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("eval_every", self.eval_every),
            ("update_every", self.update_every),
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("train.{name} must be positive")));
            }
        }
        if self.batch_size > self.buffer_capacity {
            return Err(ConfigError::Invalid("train.batch_size exceeds train.buffer_capacity".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(ConfigError::Invalid("train.tau must lie in [0, 1]".into()));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(ConfigError::Invalid("train.noise_std must be finite and non-negative".into()));
        }
        if self.hidden.contains(&0) {
            return Err(ConfigError::Invalid("train.hidden sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Synthetic dataset generated at run time instead of read from CSV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub seed: u64,
    #[serde(default)]
    pub shape: SynthConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub network: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSource>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ablation: Ablation,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.network);
        if let Some(d) = self.dataset.as_mut() {
            join(d);
        }
        join(&mut self.out_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.algorithms.is_empty() {
            return Err(ConfigError::Invalid("`algorithms` is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("`seeds` is empty".into()));
        }
        match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid("set either `dataset` or `[synthetic]`, not both".into()))
            }
            (None, None) => return Err(ConfigError::Invalid("one of `dataset` or `[synthetic]` is required".into())),
            _ => {}
        }
        self.ablation
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.ablation.any() && self.algorithms.contains(&Algorithm::MaddpgBaseline) {
            return Err(ConfigError::Invalid("ablation flags only apply to madelc".into()));
        }
        self.train.validate()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of everything that determines a run's artifacts apart from the
    /// seed and the algorithm, which are part of the run id anyway.
    /// Returns the first 8 hex digits of the SHA-256.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.seeds.clear();
        canonical.algorithms.clear();
        canonical.out_dir = PathBuf::new();
        // Inputs are hashed by content so that moving the files keeps the id.
        canonical.network = PathBuf::new();
        canonical.dataset = canonical.dataset.as_ref().map(|_| PathBuf::new());
        let mut h = Sha256::new();
        h.update(canonical.to_toml_string().as_bytes());
        for path in [Some(&self.network), self.dataset.as_ref()].into_iter().flatten() {
            if let Ok(bytes) = std::fs::read(path) {
                h.update(&bytes);
            }
        }
        h.finalize().iter().take(4).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_id(&self, algorithm: Algorithm, seed: u64) -> String {
        format!("{}-{}-s{seed}", algorithm.name(), self.hash())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
algorithms = ["madelc", "maddpg_baseline"]
seeds = [1, 2]
network = "net.toml"

[synthetic]
seed = 3
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.env, EnvConfig::default());
        assert_eq!(cfg.synthetic.unwrap().shape, SynthConfig::default());
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = format!("{MINIMAL}\n[train]\nlearning_rate = 1.0\n");
        assert!(matches!(RunConfig::from_toml_str(&bad), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn conflicting_ablations_rejected() {
        let text = r#"
algorithms = ["madelc"]
seeds = [1]
network = "n.toml"
dataset = "d.csv"
[ablation]
no_cost_critic = true
no_q_loss = true
"#;
        assert!(matches!(RunConfig::from_toml_str(text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn hash_ignores_seeds_but_not_hyperparameters() {
        let a = RunConfig::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seeds = vec![9];
        assert_eq!(a.hash(), b.hash());
        b.train.lr_actor *= 2.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.run_id(Algorithm::Madelc, 4), format!("madelc-{}-s4", a.hash()));
    }

    #[test]
    fn round_trips_through_toml() {
        let a = RunConfig::from_toml_str(MINIMAL).unwrap();
        let b = RunConfig::from_toml_str(&a.to_toml_string()).unwrap();
        assert_eq!(a, b);
    }
}
