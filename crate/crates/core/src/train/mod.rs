//! Adversarial training: the loss weights and schedule, the alternating
//! critic/generator step, the fitting loop with validation-based model
//! selection, and gradient verification.

mod check;
mod losses;

pub use check::{
    analytic_gradients, build_check_batch, compare_gradients, compare_gradients_multi_scale,
    eval_loss, grad_check, numeric_gradients, GradCheckBatch, GradCheckReport, LossKind,
};
pub use losses::{
    contrastive_loss, critic_loss, cross_entropy_loss, generator_adv_loss, CRITIC_CLAMP,
};

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::domain::PlanWindow;
use crate::infer::{estimate_transition, plan, InferError};
use crate::linalg::Mat;
use crate::model::{init_parameters, Checkpoint, GeneratorConfig, ModelError, ModelState, Params};
use crate::seeds::{self, tag};
use crate::synthworld::DatasetSplit;

use losses::{critic_loss_backward, forward_batch, generator_losses_backward, one_hot_rows};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {term} at {at}")]
    NonFiniteLoss { term: &'static str, at: String },
    #[error("training requires a nonempty {0} split")]
    EmptySplit(&'static str),
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error("writing loss curve: {0}")]
    Io(#[from] std::io::Error),
}

/// Optimization hyperparameters. The learning-rate schedule is
/// `initial_lr * decay_factor^floor(epoch / decay_every)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub lambda_c: f64,
    pub lambda_ca: f64,
    pub lambda_adv: f64,
    pub critic_steps: usize,
    pub momentum: f64,
    /// Evaluate validation SR every this many epochs (and always at the end).
    pub val_every: usize,
    /// Samples drawn per validation window when decoding.
    pub val_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            initial_lr: 7e-4,
            decay_factor: 0.65,
            decay_every: 40,
            batch_size: 32,
            lambda_c: 1.0,
            lambda_ca: 1.0,
            lambda_adv: 0.1,
            critic_steps: 1,
            momentum: 0.9,
            val_every: 5,
            val_samples: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be positive".to_string());
        }
        if self.initial_lr.is_nan() || self.initial_lr <= 0.0 {
            problems.push("initial_lr must be positive".to_string());
        }
        if self.decay_factor.is_nan() || self.decay_factor <= 0.0 || self.decay_factor >= 1.0 {
            problems.push("decay_factor must lie in (0, 1)".to_string());
        }
        for (name, v) in [
            ("decay_every", self.decay_every),
            ("batch_size", self.batch_size),
            ("critic_steps", self.critic_steps),
            ("val_every", self.val_every),
            ("val_samples", self.val_samples),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if self.momentum.is_nan() || self.momentum < 0.0 || self.momentum >= 1.0 {
            problems.push("momentum must lie in [0, 1)".to_string());
        }
        for (name, v) in [
            ("lambda_c", self.lambda_c),
            ("lambda_ca", self.lambda_ca),
            ("lambda_adv", self.lambda_adv),
        ] {
            if v.is_nan() || v < 0.0 {
                problems.push(format!("{name} must be non-negative"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(problems.join("; ")))
        }
    }
}

/// Learning rate at a (0-indexed) epoch.
pub fn learning_rate(config: &TrainConfig, epoch: usize) -> f64 {
    config.initial_lr * config.decay_factor.powi((epoch / config.decay_every) as i32)
}

/// Per-term losses reported by one training step (batch means).
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_ca: f64,
    pub l_gen_adv: f64,
    pub l_critic: f64,
    pub total: f64,
}

/// One row of the loss curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_c: f64,
    pub l_ca: f64,
    pub l_gen_adv: f64,
    pub l_critic: f64,
    pub lr: f64,
    pub val_sr: Option<f64>,
}

/// Everything `fit` returns: the final state, the per-epoch loss curve, and
/// the best-on-validation checkpoint.
pub struct FitOutcome {
    pub final_state: ModelState,
    pub curve: Vec<EpochStats>,
    pub best: Checkpoint,
}

/// SGD-with-momentum trainer holding the velocity buffers. Exactly one
/// trainer owns a mutable model during training.
pub struct Trainer {
    config: TrainConfig,
    velocity: Params,
}

#[derive(Clone, Copy, PartialEq)]
enum ParamGroup {
    Generator,
    Critic,
}

fn in_group(name: &str, group: ParamGroup) -> bool {
    let is_critic = name.starts_with("critic.");
    match group {
        ParamGroup::Critic => is_critic,
        ParamGroup::Generator => !is_critic,
    }
}

impl Trainer {
    pub fn new(config: TrainConfig, gen_config: &GeneratorConfig) -> Result<Self, TrainError> {
        config.validate()?;
        Ok(Trainer {
            velocity: Params::zeros_like(gen_config),
            config,
        })
    }

    fn apply(&mut self, state: &mut ModelState, grads: &Params, lr: f64, group: ParamGroup) {
        let momentum = self.config.momentum;
        let mut params = state.params.named_slices_mut();
        let mut velocity = self.velocity.named_slices_mut();
        let grads = grads.named_slices();
        for (((name, p), (_, v)), (_, g)) in
            params.iter_mut().zip(velocity.iter_mut()).zip(grads.iter())
        {
            if !in_group(name, group) {
                continue;
            }
            for ((pi, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *vi = momentum * *vi + gi;
                *pi -= lr * *vi;
            }
        }
    }

    /// One critic update followed by one generator update on a batch.
    /// Deterministic given (state, batch, step_seed).
    pub fn step(
        &mut self,
        state: &mut ModelState,
        batch: &[PlanWindow],
        lr: f64,
        step_seed: u64,
    ) -> Result<LossBreakdown, TrainError> {
        assert!(!batch.is_empty(), "batch must be nonempty");
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
        let zs: Vec<Vec<f64>> = batch
            .iter()
            .map(|_| {
                (0..state.config.noise_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        let fwd = forward_batch(state, batch, &zs)?;
        // catch runaway logits before the critic sees malformed inputs
        for (window, sample) in batch.iter().zip(&fwd.samples) {
            if !cross_entropy_loss(&sample.fwd.logits, &window.actions).is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    term: "cross-entropy loss",
                    at: format!("step seed {step_seed}"),
                });
            }
        }
        let reals: Vec<Mat> = batch
            .iter()
            .map(|w| one_hot_rows(&w.actions, state.config.num_actions))
            .collect();
        let fakes: Vec<Mat> = fwd.samples.iter().map(|s| s.probs.clone()).collect();

        let mut l_critic = 0.0;
        for _ in 0..self.config.critic_steps {
            let mut grads = Params::zeros_like(&state.config);
            l_critic = critic_loss_backward(state, &reals, &fakes, &mut grads)?;
            if !l_critic.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    term: "critic loss",
                    at: format!("step seed {step_seed}"),
                });
            }
            if !grads.all_finite() {
                return Err(TrainError::NonFiniteLoss {
                    term: "critic gradients",
                    at: format!("step seed {step_seed}"),
                });
            }
            self.apply(state, &grads, lr, ParamGroup::Critic);
        }

        let mut grads = Params::zeros_like(&state.config);
        let (l_ca, l_c, l_adv) = generator_losses_backward(
            state,
            batch,
            &fwd,
            self.config.lambda_ca,
            self.config.lambda_c,
            self.config.lambda_adv,
            &mut grads,
        )?;
        for (term, value) in [
            ("cross-entropy loss", l_ca),
            ("contrastive loss", l_c),
            ("generator-adversarial loss", l_adv),
        ] {
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    term,
                    at: format!("step seed {step_seed}"),
                });
            }
        }
        if !grads.all_finite() {
            return Err(TrainError::NonFiniteLoss {
                term: "generator gradients",
                at: format!("step seed {step_seed}"),
            });
        }
        self.apply(state, &grads, lr, ParamGroup::Generator);

        Ok(LossBreakdown {
            l_c,
            l_ca,
            l_gen_adv: l_adv,
            l_critic,
            total: self.config.lambda_ca * l_ca
                + self.config.lambda_c * l_c
                + self.config.lambda_adv * l_adv,
        })
    }
}

/// Validation success rate: decode every window and compare exactly.
fn validation_sr(
    state: &ModelState,
    val: &[PlanWindow],
    transitions: &crate::domain::TransitionMatrix,
    samples: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    let mut hits = 0usize;
    for (idx, window) in val.iter().enumerate() {
        let (decoded, _) = plan(state, window, samples, transitions, seed + idx as u64)?;
        if decoded == window.actions {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / val.len() as f64)
}

/// Train from a fresh initialization.
pub fn fit(
    split: &DatasetSplit,
    gen_config: &GeneratorConfig,
    config: &TrainConfig,
) -> Result<FitOutcome, TrainError> {
    let state = init_parameters(gen_config, config.seed)?;
    fit_from(state, 0, split, config)
}

/// Continue training an existing state from `start_epoch` (resume support).
///
/// Runs through `config.epochs` epochs, decaying the learning rate on the
/// configured schedule, evaluating validation SR every `val_every` epochs
/// (and at the final epoch), and keeping the best-on-validation checkpoint.
pub fn fit_from(
    mut state: ModelState,
    start_epoch: usize,
    split: &DatasetSplit,
    config: &TrainConfig,
) -> Result<FitOutcome, TrainError> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if split.val.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    let n = state.config.num_actions;
    let train_plans: Vec<Vec<usize>> = split.train.iter().map(|w| w.actions.clone()).collect();
    let transitions = match estimate_transition(&train_plans, n, 1.0) {
        Ok(t) => t,
        // single-step plans carry no pairs; fall back to uniform transitions
        Err(InferError::NoTransitions) => crate::domain::TransitionMatrix::new(
            Mat::from_fn(n, n, |_, _| 1.0 / n as f64),
        )
        .expect("uniform rows are stochastic"),
        Err(e) => return Err(e.into()),
    };

    let mut trainer = Trainer::new(config.clone(), &state.config)?;
    let mut curve = Vec::with_capacity(config.epochs.saturating_sub(start_epoch));
    let mut best: Option<(f64, Checkpoint)> = None;

    for epoch in start_epoch..config.epochs {
        let lr = learning_rate(config, epoch);
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, tag::TRAIN, epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<PlanWindow> =
                chunk.iter().map(|&i| split.train[i].clone()).collect();
            let step_seed = seeds::derive(
                config.seed,
                tag::TRAIN,
                ((epoch as u64) << 24) | (step as u64 + 1) | (1 << 63),
            );
            let breakdown = trainer
                .step(&mut state, &batch, lr, step_seed)
                .map_err(|e| match e {
                    TrainError::NonFiniteLoss { term, at } => TrainError::NonFiniteLoss {
                        term,
                        at: format!("epoch {epoch}, step {step} ({at})"),
                    },
                    other => other,
                })?;
            sums.0 += breakdown.l_c;
            sums.1 += breakdown.l_ca;
            sums.2 += breakdown.l_gen_adv;
            sums.3 += breakdown.l_critic;
            steps += 1;
        }
        let inv = 1.0 / steps.max(1) as f64;

        let val_sr = if (epoch + 1) % config.val_every == 0 || epoch + 1 == config.epochs {
            let sr = validation_sr(
                &state,
                &split.val,
                &transitions,
                config.val_samples,
                seeds::derive(config.seed, tag::EVAL, epoch as u64),
            )?;
            let better = match &best {
                Some((best_sr, _)) => sr > *best_sr,
                None => true,
            };
            if better {
                best = Some((
                    sr,
                    Checkpoint {
                        state: state.clone(),
                        epoch,
                        seed: config.seed,
                    },
                ));
            }
            Some(sr)
        } else {
            None
        };

        curve.push(EpochStats {
            epoch,
            l_c: sums.0 * inv,
            l_ca: sums.1 * inv,
            l_gen_adv: sums.2 * inv,
            l_critic: sums.3 * inv,
            lr,
            val_sr,
        });
    }

    let best = best.expect("validation runs at least once").1;
    Ok(FitOutcome {
        final_state: state,
        curve,
        best,
    })
}

/// Write the loss curve as line-delimited text:
/// `epoch,l_c,l_ca,l_gen_adv,l_critic,lr,val_sr` (val_sr empty on epochs
/// without a validation pass).
pub fn write_loss_curve(curve: &[EpochStats], path: &std::path::Path) -> Result<(), TrainError> {
    use std::fmt::Write as _;
    let mut out = String::from("epoch,l_c,l_ca,l_gen_adv,l_critic,lr,val_sr\n");
    for row in curve {
        let _ = write!(
            out,
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},",
            row.epoch, row.l_c, row.l_ca, row.l_gen_adv, row.l_critic, row.lr
        );
        if let Some(sr) = row.val_sr {
            let _ = write!(out, "{sr:.9e}");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GeneratorConfig;
    use crate::synthworld::{
        build_world, curate_windows, procedural_spec, sample_video, split_dataset,
        ProceduralWorldParams, SplitRatios,
    };

    fn tiny_world_windows(seed: u64, count: usize, horizon: usize) -> Vec<PlanWindow> {
        let params = ProceduralWorldParams {
            num_tasks: 2,
            vocab_size: 4,
            obs_dim: 12,
            obs_noise_sigma: 0.05,
            caption_informativeness: 1.0,
            path_len: 4,
            branch_positions: vec![],
            branch_prob: 0.5,
            share_observation_means: false,
            seed,
        };
        let world = build_world(procedural_spec(&params)).unwrap();
        let mut windows = Vec::new();
        let mut i = 0;
        while windows.len() < count {
            let video = sample_video(&world, 10_000 + seed + i);
            windows.extend(curate_windows(&video, horizon).windows);
            i += 1;
        }
        windows.truncate(count);
        windows
    }

    #[test]
    fn learning_rate_schedule_table() {
        let config = TrainConfig::default();
        let expect = [
            (0, 7e-4),
            (39, 7e-4),
            (40, 4.55e-4),
            (79, 4.55e-4),
            (80, 2.9575e-4),
            (199, 7e-4 * 0.65_f64.powi(4)),
        ];
        for (epoch, want) in expect {
            let got = learning_rate(&config, epoch);
            assert!((got - want).abs() < 1e-12, "epoch {epoch}: {got} vs {want}");
        }
    }

    /// A freshly initialized model sits near a symmetric point where several
    /// gradients are at the finite-difference noise floor; a few warm-up
    /// steps move the check to a generic point.
    fn warmed_tiny_state(seed: u64, windows: &[PlanWindow]) -> ModelState {
        let mut state = init_parameters(&GeneratorConfig::tiny(), seed).unwrap();
        let mut trainer = Trainer::new(
            TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            &state.config,
        )
        .unwrap();
        for step in 0..5 {
            trainer.step(&mut state, windows, 1e-2, 777 + step).unwrap();
        }
        state
    }

    #[test]
    fn grad_check_tiny_config_within_tolerance() {
        let windows = tiny_world_windows(3, 2, 2);
        let state = warmed_tiny_state(7, &windows);
        let report = grad_check(&state, &windows, 1e-5).unwrap();
        for (kind, err) in &report.per_loss {
            assert!(*err <= 1e-4, "{kind}: relative error {err}");
        }
        assert!(report.max_rel_error <= 1e-4);
    }

    #[test]
    fn grad_check_flat_loss_has_zero_error() {
        // context disabled: the contrastive loss is identically zero, so both
        // analytic and numeric gradients vanish
        let mut config = GeneratorConfig::tiny();
        config.use_context = false;
        let state = init_parameters(&config, 7).unwrap();
        let windows = tiny_world_windows(4, 1, 2);
        let batch = build_check_batch(&state, &windows).unwrap();
        let analytic = analytic_gradients(&state, &batch, LossKind::Contrastive).unwrap();
        let numeric = numeric_gradients(&state, &batch, LossKind::Contrastive, 1e-5).unwrap();
        assert!(compare_gradients(&analytic, &numeric) <= 1e-8);
    }

    #[test]
    fn grad_check_detects_injected_fault() {
        let windows = tiny_world_windows(5, 2, 2);
        let state = warmed_tiny_state(9, &windows);
        let batch = build_check_batch(&state, &windows).unwrap();
        let mut analytic = analytic_gradients(&state, &batch, LossKind::CrossEntropy).unwrap();
        let fine = numeric_gradients(&state, &batch, LossKind::CrossEntropy, 1e-5).unwrap();
        let coarse = numeric_gradients(&state, &batch, LossKind::CrossEntropy, 1e-4).unwrap();
        assert!(compare_gradients_multi_scale(&analytic, &[fine.clone(), coarse.clone()]) <= 1e-4);
        // corrupt the largest-magnitude gradient entry by 1%
        {
            let mut slices = analytic.named_slices_mut();
            let mut best = (0, 0, 0.0f64);
            for (s, (_, slice)) in slices.iter().enumerate() {
                for (e, &v) in slice.iter().enumerate() {
                    if v.abs() > best.2 {
                        best = (s, e, v.abs());
                    }
                }
            }
            slices[best.0].1[best.1] *= 1.01;
        }
        // the corruption is visible at every step size
        assert!(compare_gradients(&analytic, &fine) > 1e-3);
        assert!(compare_gradients(&analytic, &coarse) > 1e-3);
        assert!(compare_gradients_multi_scale(&analytic, &[fine, coarse]) > 1e-3);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut state = init_parameters(&GeneratorConfig::tiny(), 11).unwrap();
        let before = state.clone();
        let windows = tiny_world_windows(6, 3, 2);
        let mut trainer = Trainer::new(
            TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
            &state.config,
        )
        .unwrap();
        let breakdown = trainer.step(&mut state, &windows, 0.0, 99).unwrap();
        assert_eq!(state, before);
        assert!(breakdown.total.is_finite());
        assert!(breakdown.l_critic.is_finite());
    }

    #[test]
    fn train_step_is_deterministic() {
        let windows = tiny_world_windows(7, 4, 2);
        let run = || {
            let mut state = init_parameters(&GeneratorConfig::tiny(), 13).unwrap();
            let mut trainer = Trainer::new(
                TrainConfig {
                    seed: 5,
                    ..TrainConfig::default()
                },
                &state.config,
            )
            .unwrap();
            let b = trainer.step(&mut state, &windows, 1e-3, 1234).unwrap();
            (state, b)
        };
        let (s1, b1) = run();
        let (s2, b2) = run();
        assert_eq!(s1, s2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn single_step_descends_on_singleton_batch() {
        // pure supervised objective (cross-entropy + contrastive) so the
        // descent target is the exact function the step optimizes
        let mut state = init_parameters(&GeneratorConfig::tiny(), 17).unwrap();
        let windows = tiny_world_windows(8, 1, 2);
        let batch = build_check_batch(&state, &windows).unwrap();
        let before = eval_loss(&state, &batch, LossKind::CrossEntropy).unwrap()
            + eval_loss(&state, &batch, LossKind::Contrastive).unwrap();
        // apply one descent step with the same frozen noise
        let fwd = losses::forward_batch(&state, &windows, &batch.zs).unwrap();
        let mut grads = Params::zeros_like(&state.config);
        losses::generator_losses_backward(&state, &windows, &fwd, 1.0, 1.0, 0.0, &mut grads)
            .unwrap();
        let lr = 1e-5;
        state.params.add_scaled(&grads, -lr);
        let after = eval_loss(&state, &batch, LossKind::CrossEntropy).unwrap()
            + eval_loss(&state, &batch, LossKind::Contrastive).unwrap();
        assert!(after < before, "no descent: {before} -> {after}");
    }

    #[test]
    fn non_finite_loss_is_named() {
        let mut state = init_parameters(&GeneratorConfig::tiny(), 19).unwrap();
        // an infinite head bias poisons the logits
        state.params.output_head.b = vec![f64::INFINITY, 0.0, 0.0, 0.0];
        let mut windows = tiny_world_windows(9, 1, 2);
        windows[0].actions = vec![1, 1];
        let mut trainer = Trainer::new(
            TrainConfig {
                seed: 2,
                ..TrainConfig::default()
            },
            &state.config,
        )
        .unwrap();
        let err = trainer.step(&mut state, &windows, 1e-3, 5).unwrap_err();
        match err {
            TrainError::NonFiniteLoss { term, .. } => assert_eq!(term, "cross-entropy loss"),
            other => panic!("expected non-finite loss, got {other}"),
        }
    }

    fn overfit_split(seed: u64) -> DatasetSplit {
        let params = ProceduralWorldParams {
            num_tasks: 2,
            vocab_size: 4,
            obs_dim: 12,
            obs_noise_sigma: 0.02,
            caption_informativeness: 1.0,
            path_len: 4,
            branch_positions: vec![],
            branch_prob: 0.5,
            share_observation_means: false,
            seed,
        };
        let world = build_world(procedural_spec(&params)).unwrap();
        let grouped: Vec<_> = (0..8)
            .map(|i| {
                let v = sample_video(&world, 600 + seed * 131 + i);
                (v.video_id.clone(), curate_windows(&v, 2).windows)
            })
            .collect();
        split_dataset(grouped, SplitRatios::default(), seed).unwrap()
    }

    #[test]
    fn overfit_tiny_set_shrinks_cross_entropy() {
        let mut ratios = Vec::new();
        for seed in [1u64, 2, 3] {
            let split = overfit_split(seed);
            let config = TrainConfig {
                epochs: 90,
                batch_size: 8,
                initial_lr: 3e-3,
                val_every: 30,
                val_samples: 8,
                seed,
                ..TrainConfig::default()
            };
            let outcome = fit(&split, &GeneratorConfig::tiny(), &config).unwrap();
            let first = outcome.curve.first().unwrap().l_ca;
            let last = outcome.curve.last().unwrap().l_ca;
            ratios.push(last / first);
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ratios[1];
        assert!(median < 0.1, "median final/initial L_ca ratio {median}");
    }

    #[test]
    fn fit_emits_one_stat_per_epoch_and_selects_best() {
        let split = overfit_split(4);
        let config = TrainConfig {
            epochs: 6,
            batch_size: 8,
            val_every: 2,
            val_samples: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let outcome = fit(&split, &GeneratorConfig::tiny(), &config).unwrap();
        assert_eq!(outcome.curve.len(), 6);
        assert!(outcome.curve.iter().filter(|s| s.val_sr.is_some()).count() >= 3);
        assert!(outcome.best.epoch < 6);
        // deterministic rerun
        let again = fit(&split, &GeneratorConfig::tiny(), &config).unwrap();
        assert_eq!(outcome.final_state, again.final_state);
        assert_eq!(outcome.curve, again.curve);
        assert_eq!(outcome.best.state, again.best.state);
    }

    #[test]
    fn caption_firewall_with_zero_lambda() {
        // with lambda_c = 0 and captions zeroed, training must never read the
        // caption fields: scrambling them cannot change the result
        let split = overfit_split(5);
        let zero_caps = |mut s: DatasetSplit, fill: f64| {
            for list in [&mut s.train, &mut s.val, &mut s.test] {
                for w in list.iter_mut() {
                    w.start_caption_emb = vec![fill; w.start_caption_emb.len()];
                    w.goal_caption_emb = vec![fill; w.goal_caption_emb.len()];
                }
            }
            s
        };
        let a = zero_caps(split.clone(), 0.0);
        let b = zero_caps(split, 123.456);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            lambda_c: 0.0,
            val_every: 3,
            val_samples: 4,
            seed: 21,
            ..TrainConfig::default()
        };
        let out_a = fit(&a, &GeneratorConfig::tiny(), &config).unwrap();
        let out_b = fit(&b, &GeneratorConfig::tiny(), &config).unwrap();
        assert_eq!(out_a.final_state, out_b.final_state);
    }

    #[test]
    fn loss_curve_write_is_deterministic() {
        let curve = vec![
            EpochStats {
                epoch: 0,
                l_c: 1.25,
                l_ca: 2.5,
                l_gen_adv: 0.7,
                l_critic: 1.4,
                lr: 7e-4,
                val_sr: None,
            },
            EpochStats {
                epoch: 1,
                l_c: 1.0,
                l_ca: 2.0,
                l_gen_adv: 0.6,
                l_critic: 1.3,
                lr: 7e-4,
                val_sr: Some(12.5),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_loss_curve(&curve, &a).unwrap();
        write_loss_curve(&curve, &b).unwrap();
        let text_a = std::fs::read_to_string(&a).unwrap();
        assert_eq!(text_a, std::fs::read_to_string(&b).unwrap());
        assert!(text_a.starts_with("epoch,l_c,l_ca,l_gen_adv,l_critic,lr,val_sr\n"));
        assert!(text_a.lines().nth(1).unwrap().ends_with(','));
    }
}
