//! Property tests over randomly drawn inputs.

use intentrec::harness::{decode_checkpoint, encode_checkpoint, RunConfig};
use intentrec::numerics::{Graph, ParameterSet, Tensor};
use intentrec::recommender::{reinforce_loss, sample_step, IntentRecommender, MovingBaseline, TrainState, Variant};
use intentrec::seeding::{stream_seed, Stream};
use intentrec::simulator::{simulate_user, SimConfig};
use proptest::prelude::*;

fn small_config(seed: u64, variant: Variant) -> RunConfig {
    let mut c = RunConfig { seed, variant, ..RunConfig::default() };
    c.simulator.catalog_size = 40;
    c.model.intent_hidden = vec![8];
    c.model.gru_hidden = 8;
    c.model.post_fusion_hidden = vec![8];
    c
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 32,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn config_survives_toml(seed in any::<u64>(), lr in 1e-6f64..1.0, lambda in 0.0f64..10.0, steps in 0u64..100_000) {
        let mut c = RunConfig { seed, ..RunConfig::default() };
        c.training.learning_rate = lr;
        c.training.steps = steps;
        c.model.lambda = lambda;
        prop_assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(
        seed in 0u64..1000,
        step in any::<u64>(),
        baseline in -1e3f64..1e3,
        experiment in any::<bool>(),
    ) {
        let variant = if experiment { Variant::Experiment } else { Variant::Control };
        let c = small_config(seed, variant);
        let model = IntentRecommender::init(
            &c.model, variant, c.simulator.x_dim(), c.simulator.y_dim(), c.context_dim(), 40, seed,
        ).unwrap();
        let mut s = TrainState::new(model, c.training.adam(), c.model.baseline_decay).unwrap();
        s.step = step;
        s.baseline.value = baseline;
        let bytes = encode_checkpoint(&c, &s).unwrap();
        let (c2, s2) = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(&c2, &c);
        prop_assert_eq!(&s2, &s);
        prop_assert_eq!(encode_checkpoint(&c2, &s2).unwrap(), bytes);
    }

    #[test]
    fn streams_do_not_collide(master in any::<u64>(), i in 0u64..1_000_000, j in 0u64..1_000_000) {
        let streams = [Stream::Users, Stream::ModelInit, Stream::TrainStep, Stream::Evaluation, Stream::Clustering, Stream::Probe];
        for a in streams {
            prop_assert_eq!(stream_seed(master, a, i), stream_seed(master, a, i));
            for b in streams {
                if a != b || i != j {
                    prop_assert_ne!(stream_seed(master, a, i), stream_seed(master, b, j));
                }
            }
        }
    }

    #[test]
    fn step_batches_are_in_range_and_reproducible(seed in any::<u64>(), step in any::<u64>(), n in 1usize..500, b in 1usize..64) {
        let (idx, noise) = sample_step(seed, step, n, b, 4);
        prop_assert_eq!(idx.len(), b);
        prop_assert!(idx.iter().all(|&i| i < n));
        prop_assert!(noise.uniforms.iter().all(|u| (0.0..1.0).contains(u)));
        prop_assert_eq!(sample_step(seed, step, n, b, 4), (idx, noise));
    }

    #[test]
    fn baseline_stays_within_reward_range(decay in 0.0f64..0.999, rewards in prop::collection::vec(0.0f64..1.0, 1..200)) {
        let mut b = MovingBaseline::new(decay).unwrap();
        for r in rewards {
            b.update(r);
            prop_assert!((0.0..=1.0).contains(&b.value));
        }
    }

    #[test]
    fn reinforce_pushes_the_chosen_logit_with_the_advantage(
        logits in prop::collection::vec(-5.0f64..5.0, 2..10),
        pick in any::<prop::sample::Index>(),
        advantage in prop_oneof![-3.0f64..-1e-3, 1e-3f64..3.0],
    ) {
        let a = pick.index(logits.len());
        let mut p = ParameterSet::new();
        p.insert("l", Tensor::matrix(1, logits.len(), logits.clone()).unwrap()).unwrap();
        let graph = Graph::new();
        let bound = p.bind(&graph);
        let loss = reinforce_loss(bound.get("l").unwrap(), &[a], &[advantage]).unwrap();
        let grads = graph.backward(loss).unwrap();
        p.store_grads(&bound, &grads).unwrap();
        let g = p.grad("l").unwrap().data().to_vec();
        // descent raises the chosen logit exactly when the advantage is positive
        prop_assert_eq!(g[a] < 0.0, advantage > 0.0);
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn simulated_users_respect_the_catalog(seed in any::<u64>(), user in 0usize..1000) {
        let c = SimConfig { seed, trajectory_len: 30, ..SimConfig::default() };
        let t = simulate_user(&c, user, c.user_seed(user)).unwrap();
        prop_assert_eq!(t.len(), 30);
        for (k, s) in t.steps.iter().enumerate() {
            prop_assert!(s.item < c.catalog_size);
            prop_assert_eq!(s.topic, c.topic_of(s.item));
            prop_assert!(s.regime < c.n_intents());
            if k > 0 {
                prop_assert_eq!(s.switched, s.regime != t.steps[k - 1].regime);
            }
        }
        prop_assert_eq!(simulate_user(&c, user, c.user_seed(user)).unwrap(), t);
    }
}
