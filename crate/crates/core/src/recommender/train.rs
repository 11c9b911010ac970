use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{LossMode, ModelConfig, Variant};
use super::model::{BoundRecommender, IntentRecommender, RecommenderDims};
use super::policy::{ce_loss, check_lambda, reinforce_loss, MovingBaseline, PolicyDistribution};
use crate::error::{Error, Result};
use crate::latent_intent::{BoundIntent, ClipBounds, IntentDims};
use crate::numerics::{adam_step, AdamConfig, AdamState, Bound, Graph, Tensor, Var};
use crate::seeding::{self, Stream};
use crate::simulator::{behavior_features, BehaviorFeatures, SimConfig, Trajectory};

/// One request: the user's recent items, the behavior features at `t`, and
/// what happened next.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub user: usize,
    pub t: usize,
    /// Up to `history_len` items consumed before `t`, oldest first.
    pub history: Vec<usize>,
    pub features: BehaviorFeatures,
    /// Item consumed at `t`.
    pub label: usize,
    pub regime: usize,
    /// Topic rewarded in REINFORCE mode.
    pub target_topic: usize,
}

/// Every step of every trajectory as an [`Example`], in user-then-step order.
pub fn build_examples(trajectories: &[Trajectory], sim: &SimConfig, history_len: usize) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(trajectories.iter().map(Trajectory::len).sum());
    for traj in trajectories {
        let items: Vec<usize> = traj.items().collect();
        for (t, step) in traj.steps.iter().enumerate() {
            out.push(Example {
                user: traj.user,
                t,
                history: items[t.saturating_sub(history_len)..t].to_vec(),
                features: behavior_features(traj, t, sim.window)?,
                label: step.item,
                regime: step.regime,
                target_topic: sim.preferred_topic(step.regime),
            });
        }
    }
    Ok(out)
}

/// Examples stacked into matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub histories: Vec<Vec<usize>>,
    pub x: Tensor,
    pub y: Tensor,
    pub context: Tensor,
    pub labels: Vec<usize>,
    pub target_topics: Vec<usize>,
}

impl Batch {
    pub fn from_examples(examples: &[&Example]) -> Result<Self> {
        let first = examples.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let stack = |f: &dyn Fn(&Example) -> &[f64], width: usize| -> Result<Tensor> {
            let mut data = Vec::with_capacity(examples.len() * width);
            for e in examples {
                let row = f(e);
                if row.len() != width {
                    return Err(Error::shape("batch row", width, row.len()));
                }
                data.extend_from_slice(row);
            }
            Tensor::matrix(examples.len(), width, data)
        };
        let f = &first.features;
        Ok(Self {
            histories: examples.iter().map(|e| e.history.clone()).collect(),
            x: stack(&|e| &e.features.x, f.x.len())?,
            y: stack(&|e| &e.features.y, f.y.len())?,
            context: stack(&|e| e.features.context(), f.context().len())?,
            labels: examples.iter().map(|e| e.label).collect(),
            target_topics: examples.iter().map(|e| e.target_topic).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Every random quantity one training step consumes, drawn up front so the
/// step itself is a deterministic function.
#[derive(Clone, Debug, PartialEq)]
pub struct StepNoise {
    /// `batch × d_z` noise for the served prior sample.
    pub prior: Tensor,
    /// `batch × d_z` noise for the posterior sample inside the ELBO.
    pub posterior: Tensor,
    /// One `U[0, 1)` per example for REINFORCE action sampling.
    pub uniforms: Vec<f64>,
}

impl StepNoise {
    pub fn draw(rng: &mut impl Rng, batch: usize, latent_dim: usize) -> Self {
        let mut normal = |n: usize| -> Tensor {
            let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Tensor::matrix(batch, latent_dim, data).expect("positive dims")
        };
        let prior = normal(batch * latent_dim);
        let posterior = normal(batch * latent_dim);
        let uniforms = (0..batch).map(|_| rng.random::<f64>()).collect();
        Self { prior, posterior, uniforms }
    }
}

/// Draws step `step`'s batch indices and noise from the per-step stream of
/// `seed`.
pub fn sample_step(
    seed: u64,
    step: u64,
    n_examples: usize,
    batch_size: usize,
    latent_dim: usize,
) -> (Vec<usize>, StepNoise) {
    let mut rng = seeding::rng(seed, Stream::TrainStep, step);
    let indices = (0..batch_size).map(|_| rng.random_range(0..n_examples)).collect();
    let noise = StepNoise::draw(&mut rng, batch_size, latent_dim);
    (indices, noise)
}

/// The shape of an [`IntentRecommender`] without its parameters, enough to
/// build a loss over parameters bound elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub variant: Variant,
    pub intent: IntentDims,
    pub clip: Option<ClipBounds>,
    pub recommender: RecommenderDims,
}

impl IntentRecommender {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            variant: self.variant,
            intent: self.intent.dims.clone(),
            clip: self.intent.clip,
            recommender: self.recommender.dims.clone(),
        }
    }
}

impl Architecture {
    /// Splits six bound sets (in [`IntentRecommender::param_sets`] order).
    pub fn bind<'g>(&self, sets: &[Bound<'g>]) -> Result<(BoundIntent<'g>, BoundRecommender<'g>)> {
        if sets.len() != 6 {
            return Err(Error::shape("bound parameter sets", 6, sets.len()));
        }
        let intent =
            BoundIntent::new(self.intent.clone(), self.clip, sets[0].clone(), sets[1].clone(), sets[2].clone());
        let rec = BoundRecommender::new(self.recommender.clone(), sets[3].clone(), sets[4].clone(), sets[5].clone());
        Ok((intent, rec))
    }
}

/// Loss pieces of one batch, all batch means.
pub struct LossVars<'g> {
    pub total: Var<'g>,
    pub rec: Var<'g>,
    pub elbo: Var<'g>,
    pub recon: Var<'g>,
    pub kl: Var<'g>,
    /// Smallest and largest log-variance produced by any of the three
    /// intent networks on this batch.
    pub log_var_range: (f64, f64),
    pub mean_reward: f64,
}

/// Builds `L = L_rec − λ·L_ELBO` for a batch.
///
/// The recommender sees `z` through a stop-gradient (zeros for the control
/// variant), so the intent networks receive gradient only from the ELBO
/// term. With `λ = 0` the ELBO is still computed for logging but left out
/// of the total.
#[allow(clippy::too_many_arguments)]
pub fn build_loss<'g>(
    graph: &'g Graph,
    arch: &Architecture,
    sets: &[Bound<'g>],
    config: &ModelConfig,
    batch: &Batch,
    noise: &StepNoise,
    baseline: f64,
    item_topics: &[usize],
) -> Result<LossVars<'g>> {
    build_loss_with_z(graph, arch, sets, config, batch, noise, baseline, item_topics, None)
}

/// [`build_loss`] with the recommender's `z` optionally pinned to a given
/// value. Pinning `z` to what the stop-gradient would have produced gives
/// the same loss and gradients at these parameters, but keeps finite
/// differences from seeing the detached path.
#[allow(clippy::too_many_arguments)]
pub fn build_loss_with_z<'g>(
    graph: &'g Graph,
    arch: &Architecture,
    sets: &[Bound<'g>],
    config: &ModelConfig,
    batch: &Batch,
    noise: &StepNoise,
    baseline: f64,
    item_topics: &[usize],
    pinned_z: Option<&Tensor>,
) -> Result<LossVars<'g>> {
    let lambda = effective_lambda(arch.variant, config.lambda)?;
    let (intent, rec) = arch.bind(sets)?;
    let x = graph.constant(batch.x.clone());
    let y = graph.constant(batch.y.clone());

    let prior = intent.prior(x)?;
    let z = match (arch.variant, pinned_z) {
        (Variant::Experiment, Some(z)) => {
            let expected = [batch.len(), arch.intent.z];
            if z.shape() != expected {
                return Err(Error::shape("pinned z", format!("{expected:?}"), format!("{:?}", z.shape())));
            }
            graph.constant(z.clone())
        }
        (Variant::Control, _) => graph.constant(Tensor::zeros(&[batch.len(), arch.intent.z])),
        (Variant::Experiment, None) if config.serve_prior_mean => prior.mean.stop_gradient(),
        (Variant::Experiment, None) => prior.sample(graph.constant(noise.prior.clone()))?.stop_gradient(),
    };
    let histories: Vec<&[usize]> = batch.histories.iter().map(Vec::as_slice).collect();
    let hidden = rec.encode_history(graph, &histories)?;
    let user = rec.fuse(hidden, z, graph.constant(batch.context.clone()))?;
    let logits = rec.logits(user)?;

    let (rec_loss, mean_reward) = match config.loss {
        LossMode::CrossEntropy => (ce_loss(logits, &batch.labels)?, 0.0),
        LossMode::Reinforce => {
            let values = logits.value();
            let mut actions = Vec::with_capacity(batch.len());
            let mut rewards = Vec::with_capacity(batch.len());
            for i in 0..batch.len() {
                let dist = PolicyDistribution::from_logits(Tensor::vector(values.row(i).to_vec()))?;
                let a = dist.sample(noise.uniforms[i]);
                actions.push(a);
                let topic = *item_topics.get(a).ok_or(Error::OutOfRange {
                    what: "item topic",
                    index: a,
                    bound: item_topics.len(),
                })?;
                rewards.push(f64::from(u8::from(topic == batch.target_topics[i])));
            }
            let advantages: Vec<f64> = rewards.iter().map(|r| r - baseline).collect();
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            (reinforce_loss(logits, &actions, &advantages)?, mean)
        }
    };

    let terms = intent.elbo_with_prior(prior, x, y, graph.constant(noise.posterior.clone()))?;
    let n = batch.len() as f64;
    let recon = terms.recon.sum().scale(1.0 / n);
    let kl = terms.kl.sum().scale(1.0 / n);
    let elbo = recon.sub(kl)?;
    let total = if lambda == 0.0 { rec_loss } else { rec_loss.sub(elbo.scale(lambda))? };

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for g in [&terms.prior, &terms.posterior, &terms.likelihood] {
        for &v in g.log_var.value().data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    Ok(LossVars { total, rec: rec_loss, elbo, recon, kl, log_var_range: (lo, hi), mean_reward })
}

/// `λ` actually applied: zero for the control variant.
pub fn effective_lambda(variant: Variant, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(match variant {
        Variant::Control => 0.0,
        Variant::Experiment => lambda,
    })
}

/// Parameters plus everything else a resumed run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: IntentRecommender,
    /// One per parameter set, same order.
    pub optimizers: Vec<AdamState>,
    pub baseline: MovingBaseline,
    /// Updates applied so far.
    pub step: u64,
}

impl TrainState {
    pub fn new(model: IntentRecommender, adam: AdamConfig, baseline_decay: f64) -> Result<Self> {
        let optimizers = model.param_sets().iter().map(|p| AdamState::new(p, adam)).collect();
        Ok(Self { model, optimizers, baseline: MovingBaseline::new(baseline_decay)?, step: 0 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub total_loss: f64,
    pub rec_loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub logvar_min: f64,
    pub logvar_max: f64,
}

/// Evaluates the loss and gradients at the current parameters and, when
/// `update` is set, applies one Adam step to every parameter set and
/// advances the REINFORCE baseline.
///
/// The returned metrics describe the parameters before the update.
pub fn train_step(
    state: &mut TrainState,
    config: &ModelConfig,
    batch: &Batch,
    noise: &StepNoise,
    item_topics: &[usize],
    update: bool,
) -> Result<StepMetrics> {
    let arch = state.model.architecture();
    let graph = Graph::new();
    let bound: Vec<Bound<'_>> = state.model.param_sets().iter().map(|p| p.bind(&graph)).collect();
    let loss = build_loss(&graph, &arch, &bound, config, batch, noise, state.baseline.value, item_topics)?;

    let step = state.step;
    let value = |v: Var<'_>, term: &'static str| -> Result<f64> {
        let x = v.value().item();
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::Diverged { step, term })
        }
    };
    let rec = value(loss.rec, "rec_loss")?;
    let recon = value(loss.recon, "recon")?;
    let kl = value(loss.kl, "kl")?;
    let total = value(loss.total, "total_loss")?;

    let grads = graph.backward(loss.total)?;
    let mut norm_sq = 0.0;
    for (set, b) in state.model.param_sets_mut().into_iter().zip(&bound) {
        set.store_grads(b, &grads)?;
        norm_sq += set.grad_norm_sq();
    }
    let grad_norm = norm_sq.sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::Diverged { step, term: "grad_norm" });
    }

    if update {
        for (set, opt) in state.model.param_sets_mut().into_iter().zip(&mut state.optimizers) {
            adam_step(set, opt).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { step, term: "parameters" },
                other => other,
            })?;
        }
        if config.loss == LossMode::Reinforce {
            state.baseline.update(loss.mean_reward);
        }
        state.step += 1;
    }
    Ok(StepMetrics {
        step,
        total_loss: total,
        rec_loss: rec,
        recon,
        kl,
        grad_norm,
        logvar_min: loss.log_var_range.0,
        logvar_max: loss.log_var_range.1,
    })
}

const EVAL_BATCH: usize = 500;

/// Mean `log π(label)` over `examples`. `z` is a prior sample drawn from the
/// evaluation stream of `seed` (or the prior mean when configured).
pub fn next_item_log_likelihood(
    model: &IntentRecommender,
    config: &ModelConfig,
    examples: &[&Example],
    seed: u64,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to evaluate"));
    }
    let d_z = model.intent.dims.z;
    let mut total = 0.0;
    for (k, chunk) in examples.chunks(EVAL_BATCH).enumerate() {
        let batch = Batch::from_examples(chunk)?;
        let mut rng = seeding::rng(seed, Stream::Evaluation, k as u64);
        let noise = StepNoise::draw(&mut rng, batch.len(), d_z);
        let graph = Graph::new();
        let intent = model.intent.bind(&graph, false);
        let rec = model.recommender.bind(&graph, false);
        let prior = intent.prior(graph.constant(batch.x.clone()))?;
        let z = model.serving_z(&graph, &prior, graph.constant(noise.prior), config.serve_prior_mean)?;
        let histories: Vec<&[usize]> = batch.histories.iter().map(Vec::as_slice).collect();
        let hidden = rec.encode_history(&graph, &histories)?;
        let logits = rec.logits(rec.fuse(hidden, z, graph.constant(batch.context.clone()))?)?;
        total += logits.log_softmax_pick(&batch.labels)?.sum().value().item();
    }
    Ok(total / examples.len() as f64)
}
