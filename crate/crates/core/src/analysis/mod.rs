//! Latent-space analysis.
//!
//! The KL divergence from the prior `p(z|x)` to the posterior `q(z|x,y)` is
//! how far observing future behavior moves the intent belief: a surprise
//! signal. It is stratified by item novelty, topic novelty (topics from a
//! co-occurrence factorization and k-means) and whether search behavior
//! switched on or off. A logistic probe checks that prior samples of `z`
//! carry the simulator's ground-truth regime.

mod probe;
mod topics;

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::latent_intent::{kl_diag_gaussian, kl_terms, IntentModule};
use crate::numerics::Tensor;
use crate::recommender::Example;
use crate::simulator::Trajectory;

pub use probe::{intent_probe, ProbeOptions, ProbeResult};
pub use topics::{als, build_topic_clusters, cooccurrence, kmeans, ClusterOptions, TopicModel};

/// `KL(q(z|x,y) ‖ p(z|x))` for one pair.
pub fn posterior_prior_kl(model: &IntentModule, x: &Tensor, y: &Tensor) -> Result<f64> {
    kl_diag_gaussian(&model.encode(x, y)?, &model.prior(x)?)
}

const KL_CHUNK: usize = 1000;

/// [`posterior_prior_kl`] for every example, batched.
pub fn posterior_prior_kl_batch(model: &IntentModule, examples: &[&Example]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(KL_CHUNK) {
        let (xs, ys) = stack_xy(chunk)?;
        let (p, q) = model.prior_posterior_batch(&xs, &ys)?;
        for r in 0..chunk.len() {
            out.push(kl_terms(q.mean.row(r), q.log_var.row(r), p.mean.row(r), p.log_var.row(r)));
        }
    }
    Ok(out)
}

/// One `z ~ p(z|x)` per example.
pub fn prior_samples(model: &IntentModule, examples: &[&Example], rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(KL_CHUNK) {
        let (xs, _) = stack_xy(chunk)?;
        let p = model.prior_batch(&xs)?;
        for r in 0..chunk.len() {
            let z = p
                .mean
                .row(r)
                .iter()
                .zip(p.log_var.row(r))
                .map(|(m, lv)| m + (0.5 * lv).exp() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            out.push(z);
        }
    }
    Ok(out)
}

fn stack_xy(examples: &[&Example]) -> Result<(Tensor, Tensor)> {
    let dx = examples[0].features.x.len();
    let dy = examples[0].features.y.len();
    let xs = examples.iter().flat_map(|e| e.features.x.iter().copied()).collect();
    let ys = examples.iter().flat_map(|e| e.features.y.iter().copied()).collect();
    Ok((Tensor::matrix(examples.len(), dx, xs)?, Tensor::matrix(examples.len(), dy, ys)?))
}

/// Three-way novelty of a consumed item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Novelty {
    /// The user has not consumed this item before.
    NewItem,
    /// Item seen before, but not its topic cluster.
    NewTopicOnly,
    Old,
}

/// Both binary views: item-level and topic-level novelty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoveltyLabels {
    pub new_item: bool,
    pub new_topic: bool,
}

impl NoveltyLabels {
    pub fn novelty(self) -> Novelty {
        if self.new_item {
            Novelty::NewItem
        } else if self.new_topic {
            Novelty::NewTopicOnly
        } else {
            Novelty::Old
        }
    }
}

/// Novelty of the item consumed at step `t` relative to steps `< t`.
pub fn label_novelty(trajectory: &Trajectory, t: usize, topics: &TopicModel) -> Result<NoveltyLabels> {
    if t >= trajectory.len() {
        return Err(Error::OutOfRange { what: "step", index: t, bound: trajectory.len() });
    }
    let item = trajectory.steps[t].item;
    let cluster = topics.cluster_of(item)?;
    let mut new_item = true;
    let mut new_topic = true;
    for s in &trajectory.steps[..t] {
        new_item &= s.item != item;
        new_topic &= topics.cluster_of(s.item)? != cluster;
    }
    Ok(NoveltyLabels { new_item, new_topic })
}

/// Novelty labels for every step, in one pass.
pub fn label_trajectory(trajectory: &Trajectory, topics: &TopicModel) -> Result<Vec<NoveltyLabels>> {
    let mut seen_items = std::collections::HashSet::new();
    let mut seen_topics = vec![false; topics.k];
    trajectory
        .steps
        .iter()
        .map(|s| {
            let c = topics.cluster_of(s.item)?;
            let labels = NoveltyLabels { new_item: seen_items.insert(s.item), new_topic: !seen_topics[c] };
            seen_topics[c] = true;
            Ok(labels)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchChange {
    Changed,
    Unchanged,
}

/// Changed when the user searched in exactly one of the two windows.
pub fn label_search_change(s_past: u32, s_future: u32) -> SearchChange {
    if (s_past > 0) != (s_future > 0) {
        SearchChange::Changed
    } else {
        SearchChange::Unchanged
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurpriseRecord {
    pub user: usize,
    pub step: usize,
    pub kl: f64,
    pub novelty: NoveltyLabels,
    pub search: SearchChange,
    /// Training step of the evaluated checkpoint.
    pub training_step: u64,
}

/// KL and cohort labels for every step of `trajectories`. `examples` must
/// hold the same (user, step) pairs in the same order.
pub fn surprise_records(
    model: &IntentModule,
    trajectories: &[Trajectory],
    examples: &[&Example],
    topics: &TopicModel,
    training_step: u64,
) -> Result<Vec<SurpriseRecord>> {
    let kls = posterior_prior_kl_batch(model, examples)?;
    let mut labels = Vec::with_capacity(examples.len());
    for traj in trajectories {
        labels.extend(label_trajectory(traj, topics)?.into_iter().map(|l| (traj.user, l)));
    }
    if labels.len() != examples.len() {
        return Err(Error::shape("surprise examples", labels.len(), examples.len()));
    }
    examples
        .iter()
        .zip(labels)
        .zip(kls)
        .map(|((e, (user, novelty)), kl)| {
            if e.user != user {
                return Err(Error::invalid("examples and trajectories are not aligned"));
            }
            Ok(SurpriseRecord {
                user: e.user,
                step: e.t,
                kl,
                novelty,
                search: label_search_change(e.features.s_past, e.features.s_future),
                training_step,
            })
        })
        .collect()
}

pub const COHORTS: [&str; 6] = ["new_item", "old_item", "new_topic", "old_topic", "search_changed", "search_unchanged"];

fn in_cohort(r: &SurpriseRecord, cohort: usize) -> bool {
    match cohort {
        0 => r.novelty.new_item,
        1 => !r.novelty.new_item,
        2 => r.novelty.new_topic,
        3 => !r.novelty.new_topic,
        4 => r.search == SearchChange::Changed,
        _ => r.search == SearchChange::Unchanged,
    }
}

pub const SURPRISE_HEADER: [&str; 5] = ["training_step", "cohort", "mean_kl", "count", "stderr"];

/// One row of the surprise report. Empty cohorts have no mean; cohorts of
/// one have no standard error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CohortSummary {
    pub training_step: u64,
    pub cohort: String,
    pub mean_kl: Option<f64>,
    pub count: usize,
    pub stderr: Option<f64>,
}

/// Mean KL with its standard error for each cohort, in [`COHORTS`] order.
pub fn summarize(records: &[SurpriseRecord], training_step: u64) -> Vec<CohortSummary> {
    (0..COHORTS.len())
        .map(|c| {
            let kls: Vec<f64> = records.iter().filter(|r| in_cohort(r, c)).map(|r| r.kl).collect();
            let n = kls.len();
            let mean = (n > 0).then(|| kls.iter().sum::<f64>() / n as f64);
            let stderr = mean.filter(|_| n > 1).map(|m| {
                let var = kls.iter().map(|k| (k - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            });
            CohortSummary { training_step, cohort: COHORTS[c].to_string(), mean_kl: mean, count: n, stderr }
        })
        .collect()
}

pub fn write_surprise_csv(path: &Path, rows: &[CohortSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SURPRISE_HEADER)?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.training_step.to_string(),
            r.cohort.clone(),
            opt(r.mean_kl),
            r.count.to_string(),
            opt(r.stderr),
        ])?;
    }
    w.flush()?;
    Ok(())
}
