#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use intentrec::harness::RunConfig;
use intentrec::latent_intent::{ClipBounds, IntentDims, IntentModule};
use intentrec::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gauss–Hermite nodes and weights for `∫ e^{−t²} f(t) dt`. Nodes start
/// from the Jacobi-matrix eigenvalues and are polished by Newton iteration on
/// the orthonormal Hermite recurrence, which also gives the weights.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let jacobi =
        nalgebra::DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64 / 2.0).sqrt() } else { 0.0 });
    let mut nodes: Vec<f64> = jacobi.symmetric_eigen().eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    let nf = n as f64;
    nodes
        .into_iter()
        .map(|mut z| {
            let mut pp = 1.0;
            for _ in 0..20 {
                let (mut p1, mut p2) = (PI.powf(-0.25), 0.0);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let step = p1 / pp;
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            (z, 2.0 / (pp * pp))
        })
        .collect()
}

/// `log N(y; μ, diag(exp(log_var)))`, written out independently of the
/// library.
pub fn log_normal(y: &[f64], mean: &[f64], log_var: &[f64]) -> f64 {
    y.iter()
        .zip(mean)
        .zip(log_var)
        .map(|((y, m), lv)| -0.5 * (2.0 * PI).ln() - 0.5 * lv - (y - m).powi(2) / (2.0 * lv.exp()))
        .sum()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// A config small enough to generate, train and analyze in about a second.
pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.simulator.n_users = 20;
    c.simulator.trajectory_len = 40;
    c.training.steps = 30;
    c.training.batch_size = 16;
    c.training.checkpoint_every = 10;
    c.analysis.clusters = 4;
    c.analysis.probe_iterations = 50;
    c
}

pub fn write_config(path: &Path, config: &RunConfig) {
    std::fs::write(path, config.to_toml().unwrap()).unwrap();
}

/// Every file of `dir`, sorted by name, with its bytes.
pub fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

/// A `d_z = 1` intent module with every weight redrawn from `U(−scale, scale)`.
pub fn scrambled_1d_model(seed: u64, x: usize, y: usize, scale: f64) -> IntentModule {
    let dims = IntentDims { x, y, z: 1, hidden: vec![8] };
    let mut m = IntentModule::init(dims, Some(ClipBounds::default()), 1e-3, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5);
    for set in m.param_sets_mut() {
        let names: Vec<String> = set.iter().map(|(n, _)| n.to_string()).collect();
        for n in names {
            for v in set.get_mut(&n).unwrap().data_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
    }
    m
}

/// `log ∫ p(y|z) p(z|x) dz` with `z = μ + √2 σ t`.
pub fn quadrature_log_marginal(m: &IntentModule, x: &Tensor, y: &Tensor, rule: &[(f64, f64)]) -> f64 {
    let prior = m.prior(x).unwrap();
    let (mu, sd) = (prior.mean.data()[0], (0.5 * prior.log_var.data()[0]).exp());
    let terms: Vec<f64> = rule
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|&(t, w)| {
            let z = mu + 2f64.sqrt() * sd * t;
            let d = m.decode(&Tensor::vector(vec![z])).unwrap();
            (w / PI.sqrt()).ln() + log_normal(y.data(), d.mean.data(), d.log_var.data())
        })
        .collect();
    log_sum_exp(&terms)
}
