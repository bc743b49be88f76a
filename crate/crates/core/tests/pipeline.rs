//! Library-level pipeline test at a compact scale: generate a world, train
//! briefly, evaluate with oracle-grouped windows, and check the report's
//! internal consistency.

use capplan_core::infer::estimate_transition;
use capplan_core::metrics::{evaluate, EvalWindow};
use capplan_core::model::{CriticConfig, GeneratorConfig};
use capplan_core::synthworld::{
    generate_dataset, gt_plan_distribution, keyed_windows, PipelineParams, ProceduralWorldParams,
    SplitRatios,
};
use capplan_core::train::{fit, TrainConfig};

fn params(seed: u64) -> PipelineParams {
    PipelineParams {
        world: ProceduralWorldParams {
            num_tasks: 2,
            vocab_size: 8,
            obs_dim: 32,
            obs_noise_sigma: 0.1,
            caption_informativeness: 1.0,
            path_len: 5,
            branch_positions: vec![2],
            branch_prob: 0.7,
            share_observation_means: false,
            seed,
        },
        num_videos: 16,
        horizons: vec![3],
        ratios: SplitRatios::default(),
        seed,
    }
}

fn small_model() -> GeneratorConfig {
    GeneratorConfig {
        obs_dim: 32,
        embed_hidden: 32,
        hidden: 16,
        layers: 2,
        heads: 2,
        memory_entries: 16,
        noise_dim: 8,
        ffn_hidden: 32,
        max_horizon: 5,
        num_actions: 8,
        use_context: true,
        critic: CriticConfig {
            proj: 32,
            hidden1: 16,
            hidden2: 8,
        },
    }
}

#[test]
fn generate_train_evaluate_round_trip() {
    let data = generate_dataset(&params(31)).unwrap();
    let outcome = fit(
        &data.split,
        &small_model(),
        &TrainConfig {
            epochs: 10,
            batch_size: 8,
            initial_lr: 2e-3,
            val_every: 5,
            val_samples: 8,
            seed: 31,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let state = outcome.best.state;

    let train_plans: Vec<Vec<usize>> = data.split.train.iter().map(|w| w.actions.clone()).collect();
    let transitions = estimate_transition(&train_plans, 8, 1.0).unwrap();
    let windows: Vec<EvalWindow> = keyed_windows(&data.split.test)
        .into_iter()
        .map(|(key, w)| {
            let ann = data.annotation(&key).unwrap();
            let dist = gt_plan_distribution(&data.world, ann.start_state, ann.goal_state, 3).unwrap();
            EvalWindow {
                window: w.clone(),
                group_key: (ann.start_state, ann.goal_state),
                gt_distribution: Some(dist),
            }
        })
        .collect();
    assert!(!windows.is_empty());

    let report = evaluate(&state, &windows, 64, &transitions, 5).unwrap();
    assert!(report.all_finite());
    assert!(report.sr <= report.macc + 1e-9);
    assert!((0.0..=100.0).contains(&report.sr));
    assert!((0.0..=100.0).contains(&report.macc));
    assert!((0.0..=100.0).contains(&report.miou));
    assert!(report.kl >= 0.0);
    assert!(report.nll >= 0.0);
    assert!((0.0..=2.0).contains(&report.cosine_distance));
    assert!((0.0..=1.0).contains(&report.mode_precision));
    assert!((0.0..=1.0).contains(&report.mode_recall));
    assert_eq!(report.horizon, 3);
    assert_eq!(report.num_samples_k, 64);

    // the whole path is deterministic
    let again = evaluate(&state, &windows, 64, &transitions, 5).unwrap();
    assert_eq!(report, again);
}
