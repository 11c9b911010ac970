use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::checkpoint::{checkpoint_name, list_checkpoints, load_checkpoint, save_checkpoint};
use super::config::RunConfig;
use crate::analysis::{
    build_topic_clusters, intent_probe, prior_samples, summarize, surprise_records, write_surprise_csv, ProbeResult,
};
use crate::error::{Error, Result};
use crate::numerics::{grad_check, GradCheckOptions, Graph};
use crate::recommender::{
    build_examples, build_loss_with_z, next_item_log_likelihood, sample_step, train_step, Batch, Example,
    IntentRecommender, LossMode, StepMetrics, TrainState, Variant, PARAM_SET_NAMES,
};
use crate::seeding::{self, Stream};
use crate::simulator::{generate_dataset, read_dataset, simulate_all, SimConfig, Trajectory};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: [&str; 8] =
    ["step", "total_loss", "rec_loss", "recon", "kl", "grad_norm", "logvar_min", "logvar_max"];
pub const SURPRISE_FILE: &str = "surprise.csv";
pub const PROBE_FILE: &str = "probe.csv";
pub const PROBE_HEADER: [&str; 6] = ["features", "accuracy", "baseline", "baseline_stderr", "n_train", "n_test"];
pub const NEXT_ITEM_FILE: &str = "nextitem.csv";
pub const NEXT_ITEM_HEADER: [&str; 5] = ["variant", "training_step", "log_likelihood", "n_examples", "n_users"];
pub const TOPICS_FILE: &str = "topics.csv";
pub const TOPICS_HEADER: [&str; 3] = ["item", "cluster", "true_topic"];
pub const ANALYSIS_META_FILE: &str = "analysis.json";

/// Rows `n_users × trajectory_len` written to `out`.
pub fn cmd_generate(config: &RunConfig, out: &Path) -> Result<usize> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    generate_dataset(&config.simulator, out)
}

/// Users `0..n_train` of the dataset as training examples, the rest as
/// held-out examples.
pub struct SplitData {
    pub trajectories: Vec<Trajectory>,
    pub n_train: usize,
    pub train: Vec<Example>,
    pub held_out: Vec<Example>,
}

pub fn load_split(config: &RunConfig, data: &Path) -> Result<SplitData> {
    let trajectories = read_dataset(data, &config.simulator)?;
    let (n_train, n_users) = config.split();
    if trajectories.len() != n_users {
        return Err(Error::Dataset(format!(
            "{}: {} users, config expects {n_users}",
            data.display(),
            trajectories.len()
        )));
    }
    let examples = build_examples(&trajectories, &config.simulator, config.model.history_len)?;
    let (train, held_out): (Vec<Example>, Vec<Example>) = examples.into_iter().partition(|e| e.user < n_train);
    Ok(SplitData { trajectories, n_train, train, held_out })
}

fn item_topics(sim: &SimConfig) -> Vec<usize> {
    (0..sim.catalog_size).map(|i| sim.topic_of(i)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub metrics: Vec<StepMetrics>,
    pub checkpoints: Vec<PathBuf>,
    pub resumed_from: Option<u64>,
}

fn metrics_record(m: &StepMetrics) -> [String; 8] {
    [
        m.step.to_string(),
        m.total_loss.to_string(),
        m.rec_loss.to_string(),
        m.recon.to_string(),
        m.kl.to_string(),
        m.grad_norm.to_string(),
        m.logvar_min.to_string(),
        m.logvar_max.to_string(),
    ]
}

pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(METRICS_HEADER) {
        return Err(Error::Dataset(format!("{}: unexpected metrics header", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Dataset(format!("{}: bad metrics row {rec:?}", path.display())))
        };
        out.push(StepMetrics {
            step: f(0)? as u64,
            total_loss: f(1)?,
            rec_loss: f(2)?,
            recon: f(3)?,
            kl: f(4)?,
            grad_norm: f(5)?,
            logvar_min: f(6)?,
            logvar_max: f(7)?,
        });
    }
    Ok(out)
}

/// Trains for `config.training.steps` updates, writing `metrics.csv` and
/// checkpoints into `out_dir`.
///
/// Row `s` of the metrics describes the parameters after `s` updates on the
/// batch of step `s`; the last row (`s = steps`) is evaluated without
/// updating. Checkpoints hold the state after 0, every `checkpoint_every`,
/// and `steps` updates.
///
/// With `resume`, training restarts from the latest checkpoint in `out_dir`
/// (whose configuration must match apart from `training.steps`) and metrics
/// rows from that step on are recomputed.
///
/// On a non-finite loss the metrics so far are written and
/// [`Error::Diverged`] is returned.
pub fn cmd_train(config: &RunConfig, data: &Path, out_dir: &Path, resume: bool) -> Result<TrainSummary> {
    config.validate()?;
    let split = load_split(config, data)?;
    if split.train.is_empty() {
        return Err(Error::Dataset("no training examples".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join(METRICS_FILE);

    let (mut state, mut metrics, resumed_from) = match resume {
        true => {
            let (step, path) = list_checkpoints(out_dir)?.pop().ok_or_else(|| Error::Checkpoint {
                path: out_dir.to_path_buf(),
                reason: "no checkpoint to resume from".into(),
            })?;
            let (saved, state) = load_checkpoint(&path)?;
            let mut expected = saved.clone();
            expected.training.steps = config.training.steps;
            if expected != *config {
                return Err(Error::Checkpoint {
                    path,
                    reason: "configuration differs from the checkpoint (only training.steps may change)".into(),
                });
            }
            if step > config.training.steps {
                return Err(Error::Checkpoint {
                    path,
                    reason: format!("checkpoint is past training.steps = {}", config.training.steps),
                });
            }
            let mut metrics = if metrics_path.exists() { read_metrics(&metrics_path)? } else { Vec::new() };
            metrics.retain(|m| m.step < step);
            (state, metrics, Some(step))
        }
        false => {
            let model = IntentRecommender::init(
                &config.model,
                config.variant,
                config.simulator.x_dim(),
                config.simulator.y_dim(),
                config.context_dim(),
                config.simulator.catalog_size,
                config.seed,
            )?;
            (TrainState::new(model, config.training.adam(), config.model.baseline_decay)?, Vec::new(), None)
        }
    };

    let topics = item_topics(&config.simulator);
    let t = &config.training;
    let mut checkpoints = Vec::new();
    let mut save = |state: &TrainState| -> Result<()> {
        let path = out_dir.join(checkpoint_name(state.step));
        save_checkpoint(&path, config, state)?;
        checkpoints.push(path);
        Ok(())
    };
    if resumed_from.is_none() {
        save(&state)?;
    }
    let outcome = (|| -> Result<()> {
        loop {
            let s = state.step;
            let update = s < t.steps;
            let (indices, noise) =
                sample_step(config.seed, s, split.train.len(), t.batch_size, config.model.latent_dim);
            let refs: Vec<&Example> = indices.iter().map(|&i| &split.train[i]).collect();
            let batch = Batch::from_examples(&refs)?;
            metrics.push(train_step(&mut state, &config.model, &batch, &noise, &topics, update)?);
            if !update {
                break;
            }
            if state.step % t.checkpoint_every == 0 || state.step == t.steps {
                save(&state)?;
            }
        }
        Ok(())
    })();

    let mut w = csv::Writer::from_path(&metrics_path)?;
    w.write_record(METRICS_HEADER)?;
    for m in &metrics {
        w.write_record(metrics_record(m))?;
    }
    w.flush()?;
    outcome?;
    Ok(TrainSummary { metrics, checkpoints, resumed_from })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub features: &'static str,
    pub result: ProbeResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisSummary {
    pub config: RunConfig,
    pub surprise: Vec<crate::analysis::CohortSummary>,
    pub probes: Vec<ProbeRow>,
    pub log_likelihood: f64,
    pub final_step: u64,
}

#[derive(Serialize)]
struct AnalysisMeta<'a> {
    kl_examples: &'static str,
    probe_train: &'static str,
    probe_test: &'static str,
    topic_clusters_from: &'static str,
    n_train_users: usize,
    n_users: usize,
    held_out_examples: usize,
    checkpoint_steps: &'a [u64],
    variant: Variant,
    seed: u64,
}

/// Surprise report over every checkpoint in `checkpoint_dir`, plus the
/// intent probe and held-out next-item log-likelihood of the latest one.
///
/// KL statistics use the held-out users; topic clusters and the probe's
/// training rows come from the training users.
pub fn cmd_analyze(checkpoint_dir: &Path, data: &Path, out_dir: &Path) -> Result<AnalysisSummary> {
    let found = if checkpoint_dir.is_dir() { list_checkpoints(checkpoint_dir)? } else { Vec::new() };
    let Some((_, latest)) = found.last() else {
        return Err(Error::Checkpoint { path: checkpoint_dir.to_path_buf(), reason: "no checkpoints found".into() });
    };
    let (config, final_state) = load_checkpoint(latest)?;
    let split = load_split(&config, data)?;
    if split.held_out.is_empty() {
        return Err(Error::Dataset("no held-out examples".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let train_items: Vec<Vec<usize>> =
        split.trajectories[..split.n_train].iter().map(|t| t.items().collect()).collect();
    let topics = build_topic_clusters(
        &train_items,
        config.simulator.catalog_size,
        config.analysis.cluster_options(),
        seeding::stream_seed(config.seed, Stream::Clustering, 0),
    )?;
    let mut w = csv::Writer::from_path(out_dir.join(TOPICS_FILE))?;
    w.write_record(TOPICS_HEADER)?;
    for (item, &c) in topics.assignment.iter().enumerate() {
        w.write_record([item.to_string(), c.to_string(), config.simulator.topic_of(item).to_string()])?;
    }
    w.flush()?;

    let held_trajs = &split.trajectories[split.n_train..];
    let held: Vec<&Example> = split.held_out.iter().collect();
    let mut surprise = Vec::new();
    let mut steps = Vec::new();
    for (step, path) in &found {
        let (cfg, state) = load_checkpoint(path)?;
        if cfg != config {
            return Err(Error::Checkpoint {
                path: path.clone(),
                reason: "checkpoints in one directory must share a configuration".into(),
            });
        }
        let records = surprise_records(&state.model.intent, held_trajs, &held, &topics, *step)?;
        surprise.extend(summarize(&records, *step));
        steps.push(*step);
    }
    write_surprise_csv(&out_dir.join(SURPRISE_FILE), &surprise)?;

    let model = &final_state.model;
    let train: Vec<&Example> = split.train.iter().collect();
    let mut rng = seeding::rng(config.seed, Stream::Probe, 0);
    let z_train = prior_samples(&model.intent, &train, &mut rng)?;
    let z_test = prior_samples(&model.intent, &held, &mut rng)?;
    let noise = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..model.intent.dims.z).map(|_| rng.sample(StandardNormal)).collect()).collect()
    };
    let noise_train = noise(train.len(), &mut rng);
    let noise_test = noise(held.len(), &mut rng);
    let regimes = config.simulator.n_intents();
    let one_hot = |es: &[&Example]| -> Vec<Vec<f64>> {
        es.iter().map(|e| (0..regimes).map(|r| f64::from(u8::from(r == e.regime))).collect()).collect()
    };
    let labels = |es: &[&Example]| -> Vec<usize> { es.iter().map(|e| e.regime).collect() };
    let (l_train, l_test) = (labels(&train), labels(&held));
    let options = config.analysis.probe_options();
    let probes = vec![
        ProbeRow { features: "prior_z", result: intent_probe(&z_train, &l_train, &z_test, &l_test, options)? },
        ProbeRow { features: "noise", result: intent_probe(&noise_train, &l_train, &noise_test, &l_test, options)? },
        ProbeRow {
            features: "one_hot_regime",
            result: intent_probe(&one_hot(&train), &l_train, &one_hot(&held), &l_test, options)?,
        },
    ];
    let mut w = csv::Writer::from_path(out_dir.join(PROBE_FILE))?;
    w.write_record(PROBE_HEADER)?;
    for p in &probes {
        let r = &p.result;
        w.write_record([
            p.features.to_string(),
            r.accuracy.to_string(),
            r.baseline.to_string(),
            r.baseline_stderr.to_string(),
            r.n_train.to_string(),
            r.n_test.to_string(),
        ])?;
    }
    w.flush()?;

    let log_likelihood = next_item_log_likelihood(model, &config.model, &held, config.seed)?;
    let mut w = csv::Writer::from_path(out_dir.join(NEXT_ITEM_FILE))?;
    w.write_record(NEXT_ITEM_HEADER)?;
    w.write_record([
        variant_name(config.variant).to_string(),
        final_state.step.to_string(),
        log_likelihood.to_string(),
        held.len().to_string(),
        held_trajs.len().to_string(),
    ])?;
    w.flush()?;

    let meta = AnalysisMeta {
        kl_examples: "held_out_users",
        probe_train: "training_users",
        probe_test: "held_out_users",
        topic_clusters_from: "training_users",
        n_train_users: split.n_train,
        n_users: split.trajectories.len(),
        held_out_examples: held.len(),
        checkpoint_steps: &steps,
        variant: config.variant,
        seed: config.seed,
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(out_dir.join(ANALYSIS_META_FILE), text)?;

    Ok(AnalysisSummary { config, surprise, probes, log_likelihood, final_step: final_state.step })
}

pub fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Control => "control",
        Variant::Experiment => "experiment",
    }
}

/// Reads an analysis CSV back as string records, header first.
pub fn read_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(BufReader::new(File::open(path)?));
    r.records().map(|rec| Ok(rec?.iter().map(str::to_string).collect())).collect()
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_USERS: usize = 2;
const GRADCHECK_BATCH: usize = 4;
const GRADCHECK_CATALOG: usize = 40;
const SCRAMBLE_SCALE: f64 = 0.3;
const GRADCHECK_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckLine {
    pub name: String,
    pub elements: usize,
    pub max_relative_error: f64,
    /// Analytic and numeric gradient at the worst element.
    pub worst: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckSummary {
    pub tensors: Vec<GradCheckLine>,
    pub max_relative_error: f64,
}

impl GradCheckSummary {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRADCHECK_TOLERANCE
    }
}

/// Finite-difference check of the full experiment-variant loss
/// (cross-entropy plus ELBO, frozen noise) on a small simulated batch, at
/// weights scrambled away from their initialisation so that no gradient is
/// trivially zero. The catalog is shrunk to keep the check fast; every
/// other dimension follows `config`.
pub fn cmd_gradcheck(config: &RunConfig, fault: Option<f64>) -> Result<GradCheckSummary> {
    config.validate()?;
    let sim = SimConfig {
        n_users: GRADCHECK_USERS,
        catalog_size: GRADCHECK_CATALOG.max(config.simulator.n_topics),
        trajectory_len: config.simulator.trajectory_len.min(30),
        ..config.simulator.clone()
    };
    let trajectories = simulate_all(&sim)?;
    let examples = build_examples(&trajectories, &sim, config.model.history_len)?;
    let mut model_config = config.model.clone();
    model_config.loss = LossMode::CrossEntropy;
    if model_config.lambda == 0.0 {
        model_config.lambda = 1.0;
    }
    let mut model = IntentRecommender::init(
        &model_config,
        Variant::Experiment,
        sim.x_dim(),
        sim.y_dim(),
        config.context_dim(),
        sim.catalog_size,
        config.seed,
    )?;
    let mut rng = seeding::rng(config.seed, Stream::ModelInit, 2);
    for set in model.param_sets_mut() {
        let names: Vec<String> = set.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            for v in set.get_mut(&name)?.data_mut() {
                *v += SCRAMBLE_SCALE * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    let (indices, noise) = sample_step(config.seed, 0, examples.len(), GRADCHECK_BATCH, model_config.latent_dim);
    let refs: Vec<&Example> = indices.iter().map(|&i| &examples[i]).collect();
    let batch = Batch::from_examples(&refs)?;
    let topics = item_topics(&sim);
    let arch = model.architecture();
    // the recommender's z, pinned at its unperturbed value (see build_loss_with_z)
    let z = {
        let graph = Graph::new();
        let prior = model.intent.bind(&graph, false).prior(graph.constant(batch.x.clone()))?;
        let z = model.serving_z(&graph, &prior, graph.constant(noise.prior.clone()), model_config.serve_prior_mean)?;
        (*z.value()).clone()
    };
    let mut sets = model.param_sets_mut();
    let report = grad_check(&mut sets, GradCheckOptions { step: GRADCHECK_STEP, fault }, |g, b| {
        Ok(build_loss_with_z(g, &arch, b, &model_config, &batch, &noise, 0.0, &topics, Some(&z))?.total)
    })?;
    let tensors: Vec<GradCheckLine> = report
        .tensors
        .iter()
        .map(|t| GradCheckLine {
            name: format!("{}/{}", PARAM_SET_NAMES[t.set], t.name),
            elements: t.elements,
            max_relative_error: t.max_relative_error,
            worst: (t.analytic, t.numeric),
        })
        .collect();
    Ok(GradCheckSummary { tensors, max_relative_error: report.max_relative_error() })
}
