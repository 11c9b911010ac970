use crate::error::{Error, Result};
use crate::numerics::{adam_step, evaluate_with_gradients, AdamConfig, AdamState, ParameterSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { iterations: 300, learning_rate: 0.05, l2: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// Held-out accuracy of always predicting the most common training
    /// label.
    pub baseline: f64,
    /// Binomial standard error of `baseline` on the test set.
    pub baseline_stderr: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Multinomial logistic regression from features to labels, fitted on the
/// training rows (standardised with training statistics) and scored on the
/// test rows.
pub fn intent_probe(
    train: &[Vec<f64>],
    train_labels: &[usize],
    test: &[Vec<f64>],
    test_labels: &[usize],
    options: ProbeOptions,
) -> Result<ProbeResult> {
    if train.len() != train_labels.len() || test.len() != test_labels.len() {
        return Err(Error::invalid("probe features and labels differ in length"));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("probe needs training and test rows"));
    }
    let dim = train[0].len();
    if dim == 0 || train.iter().chain(test).any(|r| r.len() != dim) {
        return Err(Error::invalid("probe rows must share one positive width"));
    }
    let classes = train_labels.iter().chain(test_labels).max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    for &l in train_labels {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::invalid("probe needs at least two distinct labels"));
    }
    let majority = (0..classes).fold(0, |best, c| if counts[c] > counts[best] { c } else { best });

    let n = train.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|d| train.iter().map(|r| r[d]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..dim)
        .map(|d| {
            let var = train.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let standardise = |rows: &[Vec<f64>]| -> Result<Tensor> {
        let data = rows.iter().flat_map(|r| (0..dim).map(|d| (r[d] - mean[d]) / std[d]).collect::<Vec<_>>()).collect();
        Tensor::matrix(rows.len(), dim, data)
    };
    let xs = standardise(train)?;

    let mut params = ParameterSet::new();
    params.insert("weight", Tensor::zeros(&[dim, classes]))?;
    params.insert("bias", Tensor::zeros(&[classes]))?;
    let mut adam = AdamState::new(&params, AdamConfig::with_learning_rate(options.learning_rate));
    for _ in 0..options.iterations {
        evaluate_with_gradients(&mut [&mut params], |g, b| {
            let w = b[0].get("weight")?;
            let logits = g.constant(xs.clone()).matmul(w)?.add_row(b[0].get("bias")?)?;
            let ce = logits.log_softmax_pick(train_labels)?.sum().scale(-1.0 / n);
            ce.add(w.mul(w)?.sum().scale(options.l2))
        })?;
        adam_step(&mut params, &mut adam)?;
    }

    let xt = standardise(test)?;
    let w = params.get("weight")?;
    let bias = params.get("bias")?;
    let mut correct = 0usize;
    let mut base_correct = 0usize;
    for (r, &label) in test_labels.iter().enumerate() {
        let score = |c: usize| bias.data()[c] + (0..dim).map(|d| xt.get(r, d) * w.get(d, c)).sum::<f64>();
        let pred = (0..classes).fold(0, |best, c| if score(c) > score(best) { c } else { best });
        correct += usize::from(pred == label);
        base_correct += usize::from(majority == label);
    }
    let m = test.len() as f64;
    let baseline = base_correct as f64 / m;
    Ok(ProbeResult {
        accuracy: correct as f64 / m,
        baseline,
        baseline_stderr: (baseline * (1.0 - baseline) / m).sqrt(),
        n_train: train.len(),
        n_test: test.len(),
    })
}
