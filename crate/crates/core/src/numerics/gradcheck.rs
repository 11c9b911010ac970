use super::graph::{Graph, Var};
use super::params::{evaluate, evaluate_with_gradients, Bound, ParameterSet};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|, 1e−8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub set: usize,
    pub name: String,
    pub elements: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_relative_error).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Multiplies every analytic gradient by `1 + fault` before comparing.
    /// Exists to prove the check can fail.
    pub fault: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: DEFAULT_STEP, fault: None }
    }
}

/// Compares the analytic gradient of `loss_fn` with central differences,
/// element by element, for every parameter of every set.
///
/// `loss_fn` must be deterministic: any noise it consumes has to be frozen
/// outside of it. The parameters are restored exactly before returning.
pub fn grad_check<F>(sets: &mut [&mut ParameterSet], options: GradCheckOptions, loss_fn: F) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Bound<'g>]) -> Result<Var<'g>>,
{
    let h = options.step;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }

    let base = evaluate_with_gradients(sets, &loss_fn)?;
    let again = evaluate(&frozen(sets), &loss_fn)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic { first: base, second: again });
    }

    let mut report = GradCheckReport::default();
    for s in 0..sets.len() {
        let names: Vec<String> = sets[s].iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let analytic: Vec<f64> =
                sets[s].grad(&name)?.data().iter().map(|g| g * (1.0 + options.fault.unwrap_or(0.0))).collect();
            let mut check = TensorCheck {
                set: s,
                name: name.clone(),
                elements: analytic.len(),
                max_relative_error: 0.0,
                worst_index: 0,
                analytic: 0.0,
                numeric: 0.0,
            };
            for (i, &a) in analytic.iter().enumerate() {
                let original = sets[s].get(&name)?.data()[i];
                sets[s].get_mut(&name)?.data_mut()[i] = original + h;
                let plus = evaluate(&frozen(sets), &loss_fn);
                sets[s].get_mut(&name)?.data_mut()[i] = original - h;
                let minus = evaluate(&frozen(sets), &loss_fn);
                sets[s].get_mut(&name)?.data_mut()[i] = original;
                let numeric = (plus? - minus?) / (2.0 * h);
                let err = relative_error(a, numeric);
                if err > check.max_relative_error || err.is_nan() {
                    check.max_relative_error = err;
                    check.worst_index = i;
                    check.analytic = a;
                    check.numeric = numeric;
                }
            }
            report.tensors.push(check);
        }
    }
    Ok(report)
}

fn frozen<'a>(sets: &'a [&mut ParameterSet]) -> Vec<&'a ParameterSet> {
    sets.iter().map(|s| &**s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn quadratic_set() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::vector(vec![0.3, -1.2, 2.0])).unwrap();
        p
    }

    fn quadratic<'g>(_: &'g Graph, b: &[Bound<'g>]) -> Result<Var<'g>> {
        let w = b[0].get("w")?;
        Ok(w.mul(w)?.scale(1.5).sum())
    }

    #[test]
    fn quadratic_loss_checks_tightly() {
        let mut p = quadratic_set();
        let report = grad_check(&mut [&mut p], GradCheckOptions::default(), quadratic).unwrap();
        assert!(report.max_relative_error() < 1e-9, "{report:?}");
        assert_eq!(p.get("w").unwrap().data(), &[0.3, -1.2, 2.0]);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut p = quadratic_set();
        let options = GradCheckOptions { fault: Some(0.1), ..Default::default() };
        let err = grad_check(&mut [&mut p], options, quadratic).unwrap().max_relative_error();
        // 0.1 g / 1.1 g
        assert!((err - 0.1 / 1.1).abs() < 1e-6, "{err}");
    }

    #[test]
    fn non_positive_step_is_rejected() {
        let mut p = quadratic_set();
        let options = GradCheckOptions { step: 0.0, ..Default::default() };
        assert!(grad_check(&mut [&mut p], options, quadratic).is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
    }
}
