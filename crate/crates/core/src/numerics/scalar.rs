//! Scalar helpers shared by the graph ops and the plain evaluators.

/// `log(1 + exp(t))` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `x − softplus(x − upper) + softplus(lower − x)`, kept strictly inside
/// `(lower, upper)` even where the exact value rounds onto a bound.
pub fn soft_clip(x: f64, lower: f64, upper: f64) -> f64 {
    let v = x - softplus(x - upper) + softplus(lower - x);
    v.clamp(lower.next_up(), upper.next_down())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_form_where_that_is_safe() {
        for t in [-30.0, -2.0, 0.0, 0.5, 3.0, 30.0] {
            let naive = (1.0 + f64::exp(t)).ln();
            assert!((softplus(t) - naive).abs() < 1e-12, "t = {t}");
        }
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for t in [-800.0, -3.0, 0.0, 1.5, 800.0] {
            assert!((sigmoid(t) + sigmoid(-t) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
