use crate::error::{Error, Result};
use crate::numerics::{Tensor, Var};

/// Softmax distribution over the catalog.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyDistribution {
    pub logits: Tensor,
    pub probabilities: Tensor,
}

impl PolicyDistribution {
    /// Softmax with the maximum logit subtracted first.
    pub fn from_logits(logits: Tensor) -> Result<Self> {
        if !logits.is_finite() {
            return Err(Error::NonFinite("policy logits".into()));
        }
        let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.data().iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        let probabilities = Tensor::new(logits.shape().to_vec(), exp.iter().map(|e| e / total).collect())?;
        Ok(Self { logits, probabilities })
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn log_prob(&self, item: usize) -> Result<f64> {
        let n = self.len();
        if item >= n {
            return Err(Error::OutOfRange { what: "item", index: item, bound: n });
        }
        let row = self.logits.data();
        Ok(row[item] - crate::numerics::log_sum_exp(row))
    }

    /// Inverse-CDF draw from a uniform `u ∈ [0, 1)`.
    pub fn sample(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.probabilities.data().iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.len() - 1
    }

    pub fn argmax(&self) -> usize {
        let d = self.logits.data();
        (0..d.len()).fold(0, |best, i| if d[i] > d[best] { i } else { best })
    }
}

/// `−log π(label)`.
pub fn rec_loss_ce(dist: &PolicyDistribution, label: usize) -> Result<f64> {
    Ok(-dist.log_prob(label)?)
}

/// `−(reward − baseline) · log π(action)`; its gradient is the score-function
/// estimator.
pub fn rec_loss_reinforce(dist: &PolicyDistribution, action: usize, reward: f64, baseline: f64) -> Result<f64> {
    let lp = dist.log_prob(action)?;
    let advantage = reward - baseline;
    Ok(if advantage == 0.0 { 0.0 } else { -advantage * lp })
}

/// `rec − λ · elbo`. `λ = 0` is the control model.
pub fn total_loss(rec: f64, elbo: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(rec - lambda * elbo)
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(())
}

/// Batch-mean cross-entropy of `logits` (`batch × catalog`) against `labels`.
pub fn ce_loss<'g>(logits: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let n = labels.len() as f64;
    Ok(logits.log_softmax_pick(labels)?.sum().scale(-1.0 / n))
}

/// Batch-mean REINFORCE surrogate `−(1/B) Σ aᵢ · log π(actionᵢ)` with the
/// advantages `aᵢ` held constant.
pub fn reinforce_loss<'g>(logits: Var<'g>, actions: &[usize], advantages: &[f64]) -> Result<Var<'g>> {
    if actions.len() != advantages.len() {
        return Err(Error::shape("reinforce_loss advantages", actions.len(), advantages.len()));
    }
    let weights = logits.graph().constant(Tensor::matrix(actions.len(), 1, advantages.to_vec())?);
    let n = actions.len() as f64;
    Ok(logits.log_softmax_pick(actions)?.mul(weights)?.sum().scale(-1.0 / n))
}

/// Exponential moving average of rewards, used as the REINFORCE baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MovingBaseline {
    pub value: f64,
    pub decay: f64,
}

impl MovingBaseline {
    pub fn new(decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::invalid(format!("baseline decay must lie in [0, 1), got {decay}")));
        }
        Ok(Self { value: 0.0, decay })
    }

    pub fn update(&mut self, mean_reward: f64) {
        self.value = self.decay * self.value + (1.0 - self.decay) * mean_reward;
    }
}
