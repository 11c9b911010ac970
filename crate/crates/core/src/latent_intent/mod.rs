//! Conditional VAE over user intent.
//!
//! Three diagonal-Gaussian networks: the prior `p(z|x)` from past behavior
//! and context, the variational posterior `q(z|x,y)` which also sees future
//! behavior, and the decoder `p(y|z)`, which sees only `z` so that `x` and `y`
//! are conditionally independent given the intent. All log-variances pass
//! through [`soft_clip`]; together with near-zero weight initialisation this
//! keeps the KL term bounded during training.

mod gaussian;
mod model;

pub use gaussian::{
    gaussian_log_likelihood, kl_diag_gaussian, reparameterize, soft_clip, ClipBounds, DiagGaussian, GaussianVars,
    LatentSample, SampleSource,
};
pub use model::{BoundIntent, ElboTerms, ElboVars, GaussianRows, InitScope, IntentDims, IntentModule};

pub(crate) use gaussian::kl_terms;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{MlpSpec, Tensor, WeightInit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims() -> IntentDims {
        IntentDims { x: 16, y: 8, z: 4, hidden: vec![32, 32] }
    }

    fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Tensor {
        Tensor::vector((0..n).map(|_| rng.random_range(-scale..scale)).collect())
    }

    fn scrambled(seed: u64) -> IntentModule {
        let mut m = IntentModule::init(dims(), Some(ClipBounds::default()), 1e-3, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for set in m.param_sets_mut() {
            let names: Vec<String> = set.iter().map(|(n, _)| n.to_string()).collect();
            for n in names {
                for v in set.get_mut(&n).unwrap().data_mut() {
                    *v = rng.random_range(-3.0..3.0);
                }
            }
        }
        m
    }

    #[test]
    fn init_zeroes_biases_and_bounds_weights() {
        for scope in [InitScope::OutputLayer, InitScope::AllLayers] {
            let m = IntentModule::init_scoped(dims(), Some(ClipBounds::default()), 1e-3, scope, 1).unwrap();
            for set in m.param_sets() {
                for (name, p) in set.iter() {
                    if name.ends_with("bias") {
                        assert!(p.value.data().iter().all(|&v| v == 0.0), "{name}");
                    } else if name == "layer2.weight" || scope == InitScope::AllLayers {
                        assert!(p.value.max_abs() <= 1e-3, "{scope:?} {name}");
                    } else {
                        // fan-in scale: 1/sqrt(rows)
                        let bound = 1.0 / (p.value.shape()[0] as f64).sqrt();
                        assert!(p.value.max_abs() <= bound && p.value.max_abs() > 1e-3, "{name}");
                    }
                }
            }
        }
    }

    #[test]
    fn both_scopes_start_with_negligible_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for scope in [InitScope::OutputLayer, InitScope::AllLayers] {
            let m = IntentModule::init_scoped(dims(), Some(ClipBounds::default()), 1e-3, scope, 5).unwrap();
            for _ in 0..100 {
                let x = random_vec(&mut rng, 16, 3.0);
                let y = random_vec(&mut rng, 8, 3.0);
                let kl = kl_diag_gaussian(&m.encode(&x, &y).unwrap(), &m.prior(&x).unwrap()).unwrap();
                assert!((0.0..1e-3).contains(&kl), "{scope:?} {kl}");
            }
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = IntentModule::init(dims(), None, 1e-3, 9).unwrap();
        let b = IntentModule::init(dims(), None, 1e-3, 9).unwrap();
        let c = IntentModule::init(dims(), None, 1e-3, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_bad_arguments() {
        assert!(IntentModule::init(dims(), None, 0.0, 1).is_err());
        assert!(IntentModule::init(dims(), None, -1e-3, 1).is_err());
        let wide = IntentDims { z: 8, ..dims() };
        assert!(IntentModule::init(wide, None, 1e-3, 1).is_err());
    }

    #[test]
    fn networks_start_near_standard_normal() {
        let clip = ClipBounds::default();
        let m = IntentModule::init(dims(), Some(clip), 1e-3, 3).unwrap();
        let centre = soft_clip(&Tensor::vector(vec![0.0]), clip).data()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x = random_vec(&mut rng, 16, 3.0);
            let y = random_vec(&mut rng, 8, 3.0);
            let z = random_vec(&mut rng, 4, 3.0);
            for g in [m.prior(&x).unwrap(), m.encode(&x, &y).unwrap()] {
                assert_eq!(g.dim(), 4);
                assert!(g.mean.max_abs() < 1e-2);
                assert!(g.log_var.data().iter().all(|v| (v - centre).abs() < 1e-2));
            }
            let d = m.decode(&z).unwrap();
            assert_eq!(d.dim(), 8);
            assert!(d.mean.max_abs() < 1e-2);
            assert!(d.log_var.data().iter().all(|v| (v - centre).abs() < 1e-2));

            let kl = kl_diag_gaussian(&m.encode(&x, &y).unwrap(), &m.prior(&x).unwrap()).unwrap();
            assert!(kl < 1e-3, "{kl}");
            let terms = m.elbo(&x, &y, &random_vec(&mut rng, 4, 2.0)).unwrap();
            assert!(terms.kl < 1e-3);
        }
    }

    #[test]
    fn log_variances_stay_inside_clip_bounds_for_wild_weights() {
        let clip = ClipBounds::default();
        let m = scrambled(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let x = random_vec(&mut rng, 16, 5.0);
            let y = random_vec(&mut rng, 8, 5.0);
            let p = m.prior(&x).unwrap();
            let q = m.encode(&x, &y).unwrap();
            let d = m.decode(&q.mean).unwrap();
            for g in [&p, &q, &d] {
                assert!(g.log_var.data().iter().all(|&v| clip.contains(v)));
            }
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let m = scrambled(7);
        let x = Tensor::vector((0..16).map(|i| i as f64 / 7.0).collect());
        let y = Tensor::vector((0..8).map(|i| i as f64 / 3.0).collect());
        let z = Tensor::vector(vec![0.1, -0.2, 0.3, 0.0]);
        assert_eq!(m.prior(&x).unwrap(), m.prior(&x).unwrap());
        assert_eq!(m.encode(&x, &y).unwrap(), m.encode(&x, &y).unwrap());
        assert_eq!(m.decode(&z).unwrap(), m.decode(&z).unwrap());
    }

    #[test]
    fn shape_errors_are_reported() {
        let m = scrambled(8);
        assert!(m.prior(&Tensor::zeros(&[15])).is_err());
        assert!(m.encode(&Tensor::zeros(&[16]), &Tensor::zeros(&[7])).is_err());
        assert!(m.decode(&Tensor::zeros(&[5])).is_err());
        assert!(m.elbo(&Tensor::zeros(&[16]), &Tensor::zeros(&[8]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn encoder_sharing_prior_weights_gives_zero_kl() {
        let mut m = scrambled(11);
        // Encoder = prior with zero weights on the y half of its first layer.
        let spec = m.dims.encoder_spec();
        for layer in 0..spec.layers() {
            let (wn, bn) = (MlpSpec::weight_name(layer), MlpSpec::bias_name(layer));
            let pw = m.prior.get(&wn).unwrap().clone();
            let w = m.encoder.get_mut(&wn).unwrap();
            let cols = w.cols();
            w.data_mut().fill(0.0);
            w.data_mut()[..pw.len()].copy_from_slice(pw.data());
            assert_eq!(cols, pw.cols());
            let pb = m.prior.get(&bn).unwrap().clone();
            *m.encoder.get_mut(&bn).unwrap() = pb;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let x = random_vec(&mut rng, 16, 2.0);
            let y = random_vec(&mut rng, 8, 2.0);
            let noise = random_vec(&mut rng, 4, 2.0);
            let t = m.elbo(&x, &y, &noise).unwrap();
            assert_eq!(t.kl, 0.0);
            assert_eq!(t.elbo, t.recon);
        }
    }

    #[test]
    fn elbo_matches_its_definition() {
        let m = scrambled(13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_vec(&mut rng, 16, 1.0);
        let y = random_vec(&mut rng, 8, 1.0);
        let noise = random_vec(&mut rng, 4, 1.0);
        let q = m.encode(&x, &y).unwrap();
        let z = reparameterize(&q, &noise, SampleSource::Posterior).unwrap();
        let recon = gaussian_log_likelihood(&m.decode(&z.z).unwrap(), &y).unwrap();
        let kl = kl_diag_gaussian(&q, &m.prior(&x).unwrap()).unwrap();
        let t = m.elbo(&x, &y, &noise).unwrap();
        assert!((t.recon - recon).abs() < 1e-10);
        assert!((t.kl - kl).abs() < 1e-10);
        assert!((t.elbo - (recon - kl)).abs() < 1e-10);
    }

    #[test]
    fn weight_init_variant_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = WeightInit::Uniform(0.25).matrix(50, 50, &mut rng);
        assert!(w.max_abs() <= 0.25);
        assert!(w.max_abs() > 0.2);
    }
}
