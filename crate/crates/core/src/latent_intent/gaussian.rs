use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{scalar, Tensor, Var};

/// Open interval `(lower, upper)` that log-variances are softly clipped to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipBounds {
    lower: f64,
    upper: f64,
}

impl ClipBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::invalid(format!("clip bounds need finite a < b, got ({lower}, {upper})")));
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn contains(&self, v: f64) -> bool {
        v > self.lower && v < self.upper
    }
}

impl Default for ClipBounds {
    fn default() -> Self {
        Self { lower: -8.0, upper: 4.0 }
    }
}

/// `f(v) = v − log(1 + e^(v−b)) + log(1 + e^(a−v))`, element-wise.
pub fn soft_clip(v: &Tensor, bounds: ClipBounds) -> Tensor {
    v.map(|x| scalar::soft_clip(x, bounds.lower, bounds.upper))
}

/// Gaussian with diagonal covariance, stored as mean and log-variance.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl DiagGaussian {
    pub fn new(mean: Tensor, log_var: Tensor) -> Result<Self> {
        if mean.shape() != log_var.shape() {
            return Err(Error::shape("DiagGaussian", format!("{:?}", mean.shape()), format!("{:?}", log_var.shape())));
        }
        Ok(Self { mean, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: Tensor::zeros(&[dim]), log_var: Tensor::zeros(&[dim]) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Prior,
    Posterior,
}

/// A reparameterized draw `z = mean + exp(log_var / 2) ⊙ noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub z: Tensor,
    pub noise: Tensor,
    pub source: SampleSource,
}

pub fn reparameterize(g: &DiagGaussian, noise: &Tensor, source: SampleSource) -> Result<LatentSample> {
    if noise.len() != g.dim() {
        return Err(Error::shape("reparameterize noise", g.dim(), noise.len()));
    }
    let z = g
        .mean
        .data()
        .iter()
        .zip(g.log_var.data())
        .zip(noise.data())
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    Ok(LatentSample { z: Tensor::vector(z), noise: noise.clone(), source })
}

/// Closed-form `KL(q ‖ p)` between diagonal Gaussians. Each coordinate is
/// evaluated as `½(expm1(d) − d + Δμ² / σ²_p)` with `d = log σ²_q − log σ²_p`,
/// which is exactly zero when `q = p` and never negative after rounding.
pub fn kl_diag_gaussian(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::shape("kl_diag_gaussian", q.dim(), p.dim()));
    }
    Ok(kl_terms(q.mean.data(), q.log_var.data(), p.mean.data(), p.log_var.data()))
}

pub(crate) fn kl_terms(mq: &[f64], lq: &[f64], mp: &[f64], lp: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..mq.len() {
        let d = lq[i] - lp[i];
        let dm = mq[i] - mp[i];
        total += 0.5 * (d.exp_m1() - d + dm * dm * (-lp[i]).exp());
    }
    total
}

/// `Σᵢ −½ log 2π − ½ log σ²ᵢ − (yᵢ − μᵢ)² / (2σ²ᵢ)`.
pub fn gaussian_log_likelihood(g: &DiagGaussian, y: &Tensor) -> Result<f64> {
    if y.len() != g.dim() {
        return Err(Error::shape("gaussian_log_likelihood", g.dim(), y.len()));
    }
    Ok(log_likelihood_terms(g.mean.data(), g.log_var.data(), y.data()))
}

pub(crate) fn log_likelihood_terms(mean: &[f64], log_var: &[f64], y: &[f64]) -> f64 {
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    mean.iter()
        .zip(log_var)
        .zip(y)
        .map(|((m, lv), y)| -half_log_2pi - 0.5 * lv - 0.5 * (y - m).powi(2) * (-lv).exp())
        .sum()
}

/// Batch of diagonal Gaussians on a graph, one per row.
#[derive(Clone, Copy)]
pub struct GaussianVars<'g> {
    pub mean: Var<'g>,
    pub log_var: Var<'g>,
}

impl<'g> GaussianVars<'g> {
    /// Splits a `batch × 2d` network output into mean and (optionally
    /// soft-clipped) log-variance.
    pub fn from_output(out: Var<'g>, dim: usize, clip: Option<ClipBounds>) -> Result<Self> {
        let mean = out.slice_cols(0, dim)?;
        let raw = out.slice_cols(dim, 2 * dim)?;
        let log_var = match clip {
            Some(b) => raw.soft_clip(b.lower, b.upper),
            None => raw,
        };
        Ok(Self { mean, log_var })
    }

    pub fn sample(&self, noise: Var<'g>) -> Result<Var<'g>> {
        self.mean.add(self.log_var.scale(0.5).exp().mul(noise)?)
    }

    /// Element-wise KL terms of `self ‖ p`; summing gives the KL of each row.
    pub fn kl_terms(&self, p: &GaussianVars<'g>) -> Result<Var<'g>> {
        let d = self.log_var.sub(p.log_var)?;
        let dm = self.mean.sub(p.mean)?;
        let spread = dm.mul(dm)?.mul(p.log_var.scale(-1.0).exp())?;
        Ok(d.expm1().sub(d)?.add(spread)?.scale(0.5))
    }

    /// Element-wise log-density terms of `y`.
    pub fn log_likelihood_terms(&self, y: Var<'g>) -> Result<Var<'g>> {
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        let resid = y.sub(self.mean)?;
        let quad = resid.mul(resid)?.mul(self.log_var.scale(-1.0).exp())?;
        Ok(self.log_var.add(quad)?.scale(-0.5).add_scalar(-half_log_2pi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Graph;
    use proptest::prelude::*;

    fn gauss(mean: &[f64], log_var: &[f64]) -> DiagGaussian {
        DiagGaussian::new(Tensor::vector(mean.to_vec()), Tensor::vector(log_var.to_vec())).unwrap()
    }

    #[test]
    fn soft_clip_fixed_points_and_asymptotes() {
        let b = ClipBounds::new(-10.0, 10.0).unwrap();
        let out = soft_clip(&Tensor::vector(vec![0.0, 100.0, -100.0]), b);
        assert_eq!(out.data()[0], 0.0);
        assert!((out.data()[1] - 10.0).abs() < 1e-8);
        assert!((out.data()[2] + 10.0).abs() < 1e-8);
        assert!(out.data().iter().all(|&v| b.contains(v)));
    }

    #[test]
    fn soft_clip_handles_extreme_inputs() {
        let b = ClipBounds::default();
        let out = soft_clip(&Tensor::vector(vec![1e308, -1e308, 750.0, -750.0]), b);
        assert!(out.is_finite());
        assert!(out.data().iter().all(|&v| b.contains(v)), "{out:?}");
    }

    #[test]
    fn clip_bounds_validation() {
        assert!(ClipBounds::new(1.0, 1.0).is_err());
        assert!(ClipBounds::new(2.0, 1.0).is_err());
        assert!(ClipBounds::new(f64::NEG_INFINITY, 1.0).is_err());
    }

    #[test]
    fn reparameterize_examples() {
        let g = gauss(&[0.5, -1.0], &[0.0, 2.0]);
        let s = reparameterize(&g, &Tensor::vector(vec![0.0, 0.0]), SampleSource::Prior).unwrap();
        assert_eq!(s.z.data(), &[0.5, -1.0]);
        let s = reparameterize(&gauss(&[0.5], &[0.0]), &Tensor::vector(vec![2.0]), SampleSource::Posterior).unwrap();
        assert_eq!(s.z.data(), &[2.5]);
        assert_eq!(s.source, SampleSource::Posterior);
        assert!(reparameterize(&g, &Tensor::vector(vec![1.0]), SampleSource::Prior).is_err());
    }

    #[test]
    fn kl_closed_form_examples() {
        let p = gauss(&[0.0], &[0.0]);
        assert_eq!(kl_diag_gaussian(&p, &p).unwrap(), 0.0);
        assert!((kl_diag_gaussian(&gauss(&[1.0], &[0.0]), &p).unwrap() - 0.5).abs() < 1e-15);
        let wide = gauss(&[0.0], &[4f64.ln()]);
        let expected = 0.5 * (4.0 - 1.0 - 4f64.ln());
        assert!((kl_diag_gaussian(&wide, &p).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.806853).abs() < 1e-6);
        assert!(kl_diag_gaussian(&wide, &gauss(&[0.0, 0.0], &[0.0, 0.0])).is_err());
    }

    #[test]
    fn log_likelihood_examples() {
        let g = gauss(&[0.0], &[0.0]);
        let at0 = gaussian_log_likelihood(&g, &Tensor::vector(vec![0.0])).unwrap();
        let at1 = gaussian_log_likelihood(&g, &Tensor::vector(vec![1.0])).unwrap();
        assert!((at0 + 0.918939).abs() < 1e-6);
        assert!((at1 + 1.418939).abs() < 1e-6);

        let multi = gauss(&[0.3, -1.0, 2.0], &[0.1, -0.5, 1.2]);
        let y = [0.7, 0.2, -1.0];
        let joint = gaussian_log_likelihood(&multi, &Tensor::vector(y.to_vec())).unwrap();
        let parts: f64 = (0..3)
            .map(|i| {
                let g = gauss(&[multi.mean.data()[i]], &[multi.log_var.data()[i]]);
                gaussian_log_likelihood(&g, &Tensor::vector(vec![y[i]])).unwrap()
            })
            .sum();
        assert!((joint - parts).abs() < 1e-12);
    }

    #[test]
    fn graph_forms_agree_with_closed_forms() {
        let q = gauss(&[0.3, -1.0, 2.0], &[0.1, -0.5, 1.2]);
        let p = gauss(&[-0.2, 0.4, 1.0], &[0.0, 0.7, -2.0]);
        let y = Tensor::vector(vec![0.7, 0.2, -1.0]);
        let g = Graph::new();
        let vars = |d: &DiagGaussian| GaussianVars {
            mean: g.constant(d.mean.clone()),
            log_var: g.constant(d.log_var.clone()),
        };
        let (qv, pv) = (vars(&q), vars(&p));
        let kl = qv.kl_terms(&pv).unwrap().sum().value().item();
        assert!((kl - kl_diag_gaussian(&q, &p).unwrap()).abs() < 1e-13);
        let ll = qv.log_likelihood_terms(g.constant(y.clone())).unwrap().sum().value().item();
        assert!((ll - gaussian_log_likelihood(&q, &y).unwrap()).abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn kl_is_non_negative_and_zero_only_on_equality(
            mq in prop::collection::vec(-5.0f64..5.0, 4),
            lq in prop::collection::vec(-6.0f64..3.0, 4),
            mp in prop::collection::vec(-5.0f64..5.0, 4),
            lp in prop::collection::vec(-6.0f64..3.0, 4),
        ) {
            let q = gauss(&mq, &lq);
            let p = gauss(&mp, &lp);
            let kl = kl_diag_gaussian(&q, &p).unwrap();
            prop_assert!(kl >= 0.0);
            prop_assert_eq!(kl_diag_gaussian(&q, &q).unwrap(), 0.0);
        }

        #[test]
        fn soft_clip_stays_inside_and_is_monotone(mut xs in prop::collection::vec(-30.0f64..30.0, 2..50)) {
            let b = ClipBounds::new(-10.0, 10.0).unwrap();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            let out = soft_clip(&Tensor::vector(xs.clone()), b);
            for w in out.data().windows(2) {
                prop_assert!(w[0] < w[1]);
            }
            prop_assert!(out.data().iter().all(|&v| b.contains(v)));
        }
    }
}
