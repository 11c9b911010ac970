//! Synthetic users whose behavior is driven by a hidden intent regime.
//!
//! Each user follows a Markov chain over regimes. At every step the active
//! regime draws a Poisson count per behavior channel and a consumed item
//! (topic from the regime's preference, then uniform within the topic).
//! Past-window and future-window features are therefore independent given
//! the regime, the same structure the intent model assumes.

mod dataset;
mod features;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{self, Stream};

pub use dataset::{generate_dataset, read_dataset, write_dataset, DatasetRow, DATASET_HEADER};
pub use features::{behavior_features, BehaviorFeatures, DEVICES, TIME_BUCKETS};

/// Behavior channels counted per step; `searches` feeds the search-change
/// analysis.
pub const CHANNELS: [&str; 8] = ["clicks", "searches", "likes", "shares", "skips", "comments", "saves", "replays"];
pub const SEARCH_CHANNEL: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentRegime {
    /// Categorical distribution over topics.
    pub topic_preference: Vec<f64>,
    /// Poisson mean per channel per step, in [`CHANNELS`] order.
    pub rates: Vec<f64>,
    /// Probability of leaving this regime at each step.
    pub switch_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_topics: usize,
    pub catalog_size: usize,
    pub trajectory_len: usize,
    /// Steps in each of the past and future behavior windows.
    pub window: usize,
    /// Steps per time-of-day bucket.
    pub time_bucket_steps: usize,
    pub regimes: Vec<IntentRegime>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let topics = |weights: [f64; 8]| weights.to_vec();
        Self {
            seed: 20240501,
            n_users: 200,
            n_topics: 8,
            catalog_size: 500,
            trajectory_len: 200,
            window: 5,
            time_bucket_steps: 25,
            regimes: vec![
                // explore: search-heavy, spread over every topic
                IntentRegime {
                    topic_preference: vec![0.125; 8],
                    rates: vec![2.0, 1.2, 0.3, 0.1, 1.0, 0.1, 0.2, 0.0],
                    switch_prob: 0.05,
                },
                // continue: never searches, sticks to two topics
                IntentRegime {
                    topic_preference: topics([0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
                    rates: vec![3.0, 0.0, 0.8, 0.2, 0.2, 0.3, 0.6, 1.0],
                    switch_prob: 0.05,
                },
                // background: low engagement
                IntentRegime {
                    topic_preference: topics([0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]),
                    rates: vec![0.4, 0.1, 0.05, 0.0, 0.1, 0.0, 0.05, 0.3],
                    switch_prob: 0.05,
                },
                // social: likes, shares, comments
                IntentRegime {
                    topic_preference: topics([0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0]),
                    rates: vec![1.5, 0.5, 1.5, 1.0, 0.4, 1.0, 0.3, 0.1],
                    switch_prob: 0.05,
                },
            ],
        }
    }
}

impl SimConfig {
    pub fn n_intents(&self) -> usize {
        self.regimes.len()
    }

    pub fn x_dim(&self) -> usize {
        CHANNELS.len() + TIME_BUCKETS + DEVICES
    }

    pub fn y_dim(&self) -> usize {
        CHANNELS.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("simulator.{msg}")));
        if self.n_users == 0 {
            return bad("n_users must be at least 1".into());
        }
        if self.n_topics == 0 || self.catalog_size < self.n_topics {
            return bad(format!(
                "catalog_size ({}) must be at least n_topics ({}) > 0",
                self.catalog_size, self.n_topics
            ));
        }
        if self.trajectory_len == 0 || self.window == 0 || self.time_bucket_steps == 0 {
            return bad("trajectory_len, window and time_bucket_steps must be positive".into());
        }
        if self.regimes.is_empty() {
            return bad("regimes must not be empty".into());
        }
        for (k, r) in self.regimes.iter().enumerate() {
            if r.topic_preference.len() != self.n_topics {
                return bad(format!("regimes[{k}].topic_preference needs {} entries", self.n_topics));
            }
            let total: f64 = r.topic_preference.iter().sum();
            if r.topic_preference.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return bad(format!("regimes[{k}].topic_preference must be non-negative and sum to 1"));
            }
            if r.rates.len() != CHANNELS.len() || r.rates.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad(format!("regimes[{k}].rates needs {} non-negative entries", CHANNELS.len()));
            }
            if !(0.0..=1.0).contains(&r.switch_prob) {
                return bad(format!("regimes[{k}].switch_prob must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Items of `topic`: a contiguous block of the catalog.
    pub fn topic_items(&self, topic: usize) -> std::ops::Range<usize> {
        topic * self.catalog_size / self.n_topics..(topic + 1) * self.catalog_size / self.n_topics
    }

    pub fn topic_of(&self, item: usize) -> usize {
        ((item + 1) * self.n_topics - 1) / self.catalog_size
    }

    /// The topic a regime prefers most (lowest index on ties).
    pub fn preferred_topic(&self, regime: usize) -> usize {
        let pref = &self.regimes[regime].topic_preference;
        let mut best = 0;
        for (t, &p) in pref.iter().enumerate() {
            if p > pref[best] {
                best = t;
            }
        }
        best
    }

    /// Seed of user `index`'s stream.
    pub fn user_seed(&self, index: usize) -> u64 {
        seeding::stream_seed(self.seed, Stream::Users, index as u64)
    }
}

/// One simulated step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub item: usize,
    pub topic: usize,
    pub regime: usize,
    /// True exactly when `regime` differs from the previous step's.
    pub switched: bool,
    pub time_bucket: usize,
    pub device: usize,
    pub counts: [u32; CHANNELS.len()],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub user: usize,
    pub steps: Vec<Step>,
}

/// An item consumption at a step index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InteractionEvent {
    pub item_id: usize,
    pub timestamp: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = InteractionEvent> + '_ {
        self.steps.iter().enumerate().map(|(t, s)| InteractionEvent { item_id: s.item, timestamp: t })
    }

    pub fn items(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.item)
    }
}

/// Simulates user `user` from its own seed.
pub fn simulate_user(config: &SimConfig, user: usize, user_seed: u64) -> Result<Trajectory> {
    config.validate()?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(user_seed);
    let k = config.n_intents();

    let topic_dists = config
        .regimes
        .iter()
        .map(|r| WeightedIndex::new(&r.topic_preference).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let count_dists: Vec<Vec<Option<Poisson<f64>>>> = config
        .regimes
        .iter()
        .map(|r| {
            r.rates
                .iter()
                .map(|&rate| (rate > 0.0).then(|| Poisson::new(rate).expect("validated positive rate")))
                .collect()
        })
        .collect();

    let device = rng.random_range(0..DEVICES);
    let first_bucket = rng.random_range(0..TIME_BUCKETS);
    let mut regime = rng.random_range(0..k);
    let mut steps = Vec::with_capacity(config.trajectory_len);
    for t in 0..config.trajectory_len {
        let mut switched = false;
        if t > 0 && k > 1 && rng.random_bool(config.regimes[regime].switch_prob) {
            // uniform over the other regimes
            let next = rng.random_range(0..k - 1);
            regime = if next >= regime { next + 1 } else { next };
            switched = true;
        }
        let mut counts = [0u32; CHANNELS.len()];
        for (c, dist) in counts.iter_mut().zip(&count_dists[regime]) {
            if let Some(d) = dist {
                *c = d.sample(&mut rng) as u32;
            }
        }
        let topic = topic_dists[regime].sample(&mut rng);
        let item = rng.random_range(config.topic_items(topic));
        steps.push(Step {
            item,
            topic,
            regime,
            switched,
            time_bucket: (first_bucket + t / config.time_bucket_steps) % TIME_BUCKETS,
            device,
            counts,
        });
    }
    Ok(Trajectory { user, steps })
}

/// Simulates users `0..n_users` with seeds derived from `config.seed`.
pub fn simulate_all(config: &SimConfig) -> Result<Vec<Trajectory>> {
    (0..config.n_users).map(|u| simulate_user(config, u, config.user_seed(u))).collect()
}
