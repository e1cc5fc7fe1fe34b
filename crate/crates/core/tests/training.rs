use std::sync::Arc;

use arsched_core::env::{EnvConfig, EnvShared, WsAction, WsObservation, ROW_FEATURES};
use arsched_core::nn::Adam;
use arsched_core::policy::{ActMode, Policy, WsPolicyNet};
use arsched_core::topology::build_bcube;
use arsched_core::train::{ppo_update, TrainConfig, Trainer, WsTransition};
use arsched_core::workload::{build_all_trees, Granularity};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn two_armed() -> WsObservation<f64> {
    let mut rows = vec![0.5; 2 * ROW_FEATURES];
    rows[0] = 0.9;
    rows[ROW_FEATURES] = 0.1;
    WsObservation {
        rows,
        mask: vec![true, true],
        occupancy: vec![false; 4],
        global: vec![0.0, 1.0, 0.0, 0.0],
    }
}

#[test]
fn bandit_preference_for_the_paying_arm_grows() {
    let obs = two_armed();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut policy = WsPolicyNet::<f64>::new(32, &mut rng);
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        entropy_coef: 0.0,
        ..TrainConfig::default()
    };
    let mut opt = Adam::new(policy.num_params(), cfg.learning_rate);
    let mut history = vec![policy.probabilities(&obs).unwrap()[0]];
    for _ in 0..50 {
        let batch: Vec<WsTransition<f64>> = (0..64)
            .map(|_| {
                let (action, logp) = policy.act(&obs, &mut rng, ActMode::Sample).unwrap();
                let reward = if action == WsAction::Pick(0) { 1.0 } else { 0.0 };
                WsTransition {
                    obs: obs.clone(),
                    next_obs: obs.clone(),
                    action,
                    reward,
                    logp,
                    value: policy.value(&obs).unwrap(),
                    ret: reward,
                }
            })
            .collect();
        ppo_update(&mut policy, &mut opt, &batch, &cfg).unwrap();
        history.push(policy.probabilities(&obs).unwrap()[0]);
    }
    for w in history.windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "{history:?}");
    }
    assert!(history[50] > 0.9, "{history:?}");
}

#[test]
fn smallest_bcube_reaches_the_two_round_optimum() {
    let g = build_bcube(2, 0).unwrap();
    let set = Arc::new(build_all_trees(&g, Granularity::Hop).unwrap());
    let shared = EnvShared::new(set, EnvConfig::default());
    for seed in 0..4 {
        let config = TrainConfig {
            outer_iterations: 1,
            seed,
            ..TrainConfig::default()
        };
        let mut trainer: Trainer<f64> = Trainer::new(Arc::clone(&shared), config).unwrap();
        trainer.train(|_| {}, |_| {}).unwrap();
        let summary = trainer.evaluate(&[0, 1, 2]).unwrap();
        assert_eq!(summary.mean, 2.0, "seed {seed}");
    }
}
