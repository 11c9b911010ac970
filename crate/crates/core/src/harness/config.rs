use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{ClusterOptions, ProbeOptions};
use crate::error::{Error, Result};
use crate::numerics::AdamConfig;
use crate::recommender::{ModelConfig, Variant};
use crate::simulator::SimConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// A checkpoint is written every this many updates, plus at step 0 and
    /// at the end.
    pub checkpoint_every: u64,
    /// Share of users (the highest ids) held out from training.
    pub holdout_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            steps: 5000,
            batch_size: 64,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            checkpoint_every: 1000,
            holdout_fraction: 0.2,
        }
    }
}

impl TrainingConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub clusters: usize,
    pub factor_rank: usize,
    pub als_sweeps: usize,
    pub als_ridge: f64,
    pub kmeans_iterations: usize,
    pub probe_iterations: usize,
    pub probe_learning_rate: f64,
    pub probe_l2: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let c = ClusterOptions::default();
        let p = ProbeOptions::default();
        Self {
            clusters: c.k,
            factor_rank: c.rank,
            als_sweeps: c.als_sweeps,
            als_ridge: c.ridge,
            kmeans_iterations: c.kmeans_iterations,
            probe_iterations: p.iterations,
            probe_learning_rate: p.learning_rate,
            probe_l2: p.l2,
        }
    }
}

impl AnalysisConfig {
    pub fn cluster_options(&self) -> ClusterOptions {
        ClusterOptions {
            k: self.clusters,
            rank: self.factor_rank,
            als_sweeps: self.als_sweeps,
            ridge: self.als_ridge,
            kmeans_iterations: self.kmeans_iterations,
        }
    }

    pub fn probe_options(&self) -> ProbeOptions {
        ProbeOptions { iterations: self.probe_iterations, learning_rate: self.probe_learning_rate, l2: self.probe_l2 }
    }
}

/// Everything a run depends on. `seed` drives model initialisation, batch
/// sampling, clustering and the probe; `simulator.seed` drives the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: Variant,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub analysis: AnalysisConfig,
    pub simulator: SimConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.simulator.validate()?;
        self.model.validate()?;
        if self.model.latent_dim >= self.simulator.y_dim() {
            return Err(Error::Config(format!(
                "model.latent_dim must be smaller than the {} future-behavior features",
                self.simulator.y_dim()
            )));
        }
        let t = &self.training;
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if t.batch_size == 0 {
            return bad("training.batch_size must be positive");
        }
        if t.checkpoint_every == 0 {
            return bad("training.checkpoint_every must be positive");
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return bad("training.learning_rate must be positive");
        }
        if !((0.0..1.0).contains(&t.beta1) && (0.0..1.0).contains(&t.beta2) && t.adam_epsilon > 0.0) {
            return bad("training.beta1 and training.beta2 must lie in [0, 1) and training.adam_epsilon be positive");
        }
        let split = self.split();
        if !(t.holdout_fraction > 0.0 && t.holdout_fraction < 1.0) || split.0 == 0 || split.0 == self.simulator.n_users
        {
            return bad("training.holdout_fraction must leave at least one training and one held-out user");
        }
        let a = &self.analysis;
        if a.clusters == 0 || a.factor_rank == 0 || a.factor_rank > self.simulator.catalog_size {
            return bad(
                "analysis.clusters and analysis.factor_rank must be positive and factor_rank at most the catalog size",
            );
        }
        if !(a.als_ridge > 0.0 && a.probe_learning_rate > 0.0 && a.probe_l2 >= 0.0) {
            return bad(
                "analysis.als_ridge and analysis.probe_learning_rate must be positive, analysis.probe_l2 non-negative",
            );
        }
        Ok(())
    }

    /// `(n_train, n_users)`: users `0..n_train` train, the rest are held out.
    pub fn split(&self) -> (usize, usize) {
        let n = self.simulator.n_users;
        let held = (n as f64 * self.training.holdout_fraction).round() as usize;
        (n.saturating_sub(held), n)
    }

    /// Context one-hots appended to `x`.
    pub fn context_dim(&self) -> usize {
        self.simulator.x_dim() - self.simulator.y_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_verbatim() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml().unwrap(), text);
        assert_eq!(c.split(), (160, 200));
        assert_eq!(c.context_dim(), 8);
    }

    #[test]
    fn partial_files_take_defaults() {
        let c = RunConfig::from_toml("seed = 3\nvariant = \"control\"\n[training]\nsteps = 10\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.variant, Variant::Control);
        assert_eq!(c.training.steps, 10);
        assert_eq!(c.training.batch_size, 64);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml("[model]\nlatent_dims = 3\n").unwrap_err().to_string();
        assert!(err.contains("latent_dims"), "{err}");
        let err = RunConfig::from_toml("learning_rate = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml("[training]\nholdout_fraction = 0.0\n").is_err());
        assert!(RunConfig::from_toml("[model]\nlambda = -1.0\n").is_err());
        assert!(RunConfig::from_toml("[model]\nlatent_dim = 8\n").is_err());
        assert!(RunConfig::from_toml("[simulator]\nn_users = 0\n").is_err());
        assert!(RunConfig::from_toml("variant = \"both\"\n").is_err());
    }
}
