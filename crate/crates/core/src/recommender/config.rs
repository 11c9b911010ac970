use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent_intent::InitScope;

/// Recommender without (`control`) or with (`experiment`) the intent module.
/// The control model feeds zeros in place of `z` and trains with `λ = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Control,
    #[default]
    Experiment,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "control" => Ok(Variant::Control),
            "experiment" => Ok(Variant::Experiment),
            other => Err(Error::Config(format!("variant must be control or experiment, got `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Supervised next-item cross-entropy.
    #[default]
    CrossEntropy,
    /// REINFORCE with a moving-average baseline; reward 1 when the sampled
    /// item's topic is the one the user's current regime prefers most.
    Reinforce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub intent_hidden: Vec<usize>,
    pub soft_clip: bool,
    pub clip_lower: f64,
    pub clip_upper: f64,
    pub init_epsilon: f64,
    /// Which intent-network layers `init_epsilon` applies to.
    pub init_scope: InitScope,
    pub embedding_dim: usize,
    pub gru_hidden: usize,
    /// Most recent items fed to the GRU.
    pub history_len: usize,
    pub post_fusion_hidden: Vec<usize>,
    pub lambda: f64,
    pub loss: LossMode,
    pub baseline_decay: f64,
    /// Feed the prior mean instead of a prior sample to the recommender.
    pub serve_prior_mean: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 4,
            intent_hidden: vec![32, 32],
            soft_clip: true,
            clip_lower: -8.0,
            clip_upper: 4.0,
            init_epsilon: 1e-3,
            init_scope: InitScope::OutputLayer,
            embedding_dim: 16,
            gru_hidden: 32,
            history_len: 10,
            post_fusion_hidden: vec![32],
            lambda: 0.1,
            loss: LossMode::CrossEntropy,
            baseline_decay: 0.9,
            serve_prior_mean: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("model.{msg}")));
        if self.latent_dim == 0 || self.embedding_dim == 0 || self.gru_hidden == 0 {
            return bad("latent_dim, embedding_dim and gru_hidden must be positive");
        }
        if self.intent_hidden.contains(&0) || self.post_fusion_hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.clip_lower.is_finite() && self.clip_upper.is_finite() && self.clip_lower < self.clip_upper) {
            return bad("clip_lower must be below clip_upper");
        }
        if !(self.init_epsilon > 0.0 && self.init_epsilon.is_finite()) {
            return bad("init_epsilon must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad("baseline_decay must lie in [0, 1)");
        }
        Ok(())
    }
}
