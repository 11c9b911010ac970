//! Sequential recommender conditioned on latent intent.
//!
//! A GRU summarises the most recent items. Its final state is concatenated
//! with a detached prior sample `z ~ p(z|x)` and the context one-hots, passed
//! through the post-fusion MLP, and scored against an output embedding per
//! item to give a softmax policy. Training minimises `L_rec − λ·L_ELBO`.

mod config;
mod model;
mod policy;
mod train;

pub use config::{LossMode, ModelConfig, Variant};
pub use model::{BoundRecommender, IntentRecommender, RecommenderDims, RecommenderParams, PARAM_SET_NAMES};
pub use policy::{
    ce_loss, rec_loss_ce, rec_loss_reinforce, reinforce_loss, total_loss, MovingBaseline, PolicyDistribution,
};
pub use train::{
    build_examples, build_loss, build_loss_with_z, effective_lambda, next_item_log_likelihood, sample_step, train_step,
    Architecture, Batch, Example, LossVars, StepMetrics, StepNoise, TrainState,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{evaluate_with_gradients, AdamConfig, ParameterSet};
    use crate::simulator::{simulate_all, SimConfig};

    struct Fixture {
        sim: SimConfig,
        examples: Vec<Example>,
        topics: Vec<usize>,
    }

    fn fixture() -> Fixture {
        let sim = SimConfig { n_users: 6, trajectory_len: 40, ..SimConfig::default() };
        let trajs = simulate_all(&sim).unwrap();
        let examples = build_examples(&trajs, &sim, 10).unwrap();
        let topics = (0..sim.catalog_size).map(|i| sim.topic_of(i)).collect();
        Fixture { sim, examples, topics }
    }

    fn model(f: &Fixture, variant: Variant, seed: u64) -> IntentRecommender {
        IntentRecommender::init(
            &ModelConfig::default(),
            variant,
            f.sim.x_dim(),
            f.sim.y_dim(),
            8,
            f.sim.catalog_size,
            seed,
        )
        .unwrap()
    }

    fn batch(f: &Fixture, step: u64) -> (Batch, StepNoise) {
        let (idx, noise) = sample_step(9, step, f.examples.len(), 16, 4);
        let refs: Vec<&Example> = idx.iter().map(|&i| &f.examples[i]).collect();
        (Batch::from_examples(&refs).unwrap(), noise)
    }

    #[test]
    fn examples_carry_truncated_histories() {
        let f = fixture();
        assert_eq!(f.examples.len(), 6 * 40);
        assert!(f.examples[0].history.is_empty());
        assert_eq!(f.examples[3].history.len(), 3);
        assert_eq!(f.examples[25].history.len(), 10);
        assert_eq!(f.examples[25].history.last(), Some(&f.examples[24].label));
    }

    #[test]
    fn rec_loss_never_reaches_the_intent_networks() {
        let f = fixture();
        let config = ModelConfig::default();
        let mut m = model(&f, Variant::Experiment, 1);
        let arch = m.architecture();
        for step in 0..5 {
            let (b, noise) = batch(&f, step);
            let mut sets: Vec<&mut ParameterSet> = m.param_sets_mut().into_iter().collect();
            evaluate_with_gradients(&mut sets, |g, bound| {
                Ok(build_loss(g, &arch, bound, &config, &b, &noise, 0.0, &f.topics)?.rec)
            })
            .unwrap();
            for set in &m.param_sets()[..3] {
                assert_eq!(set.grad_norm_sq(), 0.0);
            }
            assert!(m.recommender.post_fusion.grad_norm_sq() > 0.0);
        }
    }

    #[test]
    fn intent_gradient_is_minus_lambda_times_elbo_gradient() {
        let f = fixture();
        let config = ModelConfig::default();
        let (b, noise) = batch(&f, 0);
        let mut m = model(&f, Variant::Experiment, 2);
        let arch = m.architecture();
        let mut grads = Vec::new();
        for part in ["total", "elbo"] {
            let mut sets: Vec<&mut ParameterSet> = m.param_sets_mut().into_iter().collect();
            evaluate_with_gradients(&mut sets, |g, bound| {
                let l = build_loss(g, &arch, bound, &config, &b, &noise, 0.0, &f.topics)?;
                Ok(if part == "total" { l.total } else { l.elbo })
            })
            .unwrap();
            grads.push(m.intent.prior.grad("layer0.weight").unwrap().clone());
        }
        for (t, e) in grads[0].data().iter().zip(grads[1].data()) {
            assert!((t + config.lambda * e).abs() <= 1e-12 * (1.0 + e.abs()), "{t} vs {e}");
        }
    }

    #[test]
    fn control_variant_leaves_the_intent_module_untouched() {
        let f = fixture();
        let config = ModelConfig::default();
        let m = model(&f, Variant::Control, 3);
        let before = m.intent.clone();
        let mut state = TrainState::new(m, AdamConfig::default(), 0.9).unwrap();
        for step in 0..20 {
            let (b, noise) = batch(&f, step);
            train_step(&mut state, &config, &b, &noise, &f.topics, true).unwrap();
        }
        assert_eq!(state.model.intent, before);
        assert_ne!(state.model.recommender.post_fusion, model(&f, Variant::Control, 3).recommender.post_fusion);
    }

    #[test]
    fn zero_lambda_experiment_keeps_intent_fixed() {
        let f = fixture();
        let config = ModelConfig { lambda: 0.0, ..ModelConfig::default() };
        let m = model(&f, Variant::Experiment, 3);
        let before = m.intent.clone();
        let mut state = TrainState::new(m, AdamConfig::default(), 0.9).unwrap();
        for step in 0..10 {
            let (b, noise) = batch(&f, step);
            train_step(&mut state, &config, &b, &noise, &f.topics, true).unwrap();
        }
        assert_eq!(state.model.intent, before);
    }

    #[test]
    fn negative_lambda_is_rejected() {
        assert!(effective_lambda(Variant::Experiment, -0.5).is_err());
        assert_eq!(effective_lambda(Variant::Control, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn training_is_deterministic_and_bounded() {
        let f = fixture();
        for loss in [LossMode::CrossEntropy, LossMode::Reinforce] {
            let config = ModelConfig { loss, ..ModelConfig::default() };
            let run = || {
                let mut state = TrainState::new(model(&f, Variant::Experiment, 4), AdamConfig::default(), 0.9).unwrap();
                (0..30)
                    .map(|step| {
                        let (b, noise) = batch(&f, step);
                        train_step(&mut state, &config, &b, &noise, &f.topics, true).unwrap()
                    })
                    .collect::<Vec<_>>()
            };
            let a = run();
            assert_eq!(a, run());
            assert!(a[0].kl < 1e-3, "{}", a[0].kl);
            for m in &a {
                assert!(m.kl.is_finite() && (0.0..=50.0).contains(&m.kl));
                assert!(m.logvar_min > -8.0 && m.logvar_max < 4.0);
            }
        }
    }

    #[test]
    fn evaluation_without_update_leaves_state_alone() {
        let f = fixture();
        let config = ModelConfig::default();
        let mut state = TrainState::new(model(&f, Variant::Experiment, 5), AdamConfig::default(), 0.9).unwrap();
        let before = state.clone();
        let (b, noise) = batch(&f, 0);
        train_step(&mut state, &config, &b, &noise, &f.topics, false).unwrap();
        assert_eq!(state.step, 0);
        for (a, b) in state.model.param_sets().iter().zip(before.model.param_sets()) {
            for ((_, pa), (_, pb)) in a.iter().zip(b.iter()) {
                assert_eq!(pa.value, pb.value);
            }
        }
        assert_eq!(state.optimizers, before.optimizers);
    }

    #[test]
    fn held_out_likelihood_is_a_mean_log_probability() {
        let f = fixture();
        let m = model(&f, Variant::Experiment, 6);
        let refs: Vec<&Example> = f.examples.iter().collect();
        let ll = next_item_log_likelihood(&m, &ModelConfig::default(), &refs, 1).unwrap();
        // near-uniform at init
        assert!((ll + (500f64).ln()).abs() < 0.1, "{ll}");
        assert_eq!(ll, next_item_log_likelihood(&m, &ModelConfig::default(), &refs, 1).unwrap());
    }
}
