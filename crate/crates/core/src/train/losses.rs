//! The three training losses and their batched forward/backward drivers.
//!
//! The same backward drivers serve both the optimizer and the gradient
//! check, so the finite-difference oracle exercises the exact code path used
//! in training.

use crate::domain::{one_hot, PlanWindow};
use crate::linalg::{axpy, dot, log_softmax, Mat};
use crate::model::{
    backward_caption_embedding, backward_generator_sample, critic_backward, finish_shared_kv,
    generator_forward, shared_kv, ModelError, ModelState, Params, SharedKvGrads,
};
use crate::model::{critic_forward_cached, embed_caption_cached};

/// Critic outputs are clamped to [CLAMP, 1 - CLAMP] inside the adversarial
/// losses so they stay finite.
pub const CRITIC_CLAMP: f64 = 1e-7;

/// Contrastive alignment loss between context tokens and caption embeddings.
///
/// For each token, the matching caption is the positive and every embedding
/// in `negatives` joins the softmax denominator. Returns the loss and a flag
/// that is true when the denominator contained only the positive (an empty
/// negative pool), in which case the loss degenerates to zero.
pub fn contrastive_loss(
    context_tokens: &[Vec<f64>],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
) -> (f64, bool) {
    assert_eq!(
        context_tokens.len(),
        positives.len(),
        "each context token needs a matching positive"
    );
    let mut loss = 0.0;
    for (token, positive) in context_tokens.iter().zip(positives) {
        let pos_logit = dot(positive, token);
        let mut logits = Vec::with_capacity(negatives.len() + 1);
        logits.push(pos_logit);
        for neg in negatives {
            logits.push(dot(neg, token));
        }
        loss -= log_softmax(&logits)[0];
    }
    (loss, negatives.is_empty())
}

/// Cross-entropy between per-step logits and the ground-truth action
/// indices, summed over steps (not averaged).
pub fn cross_entropy_loss(logits: &Mat, gt_actions: &[usize]) -> f64 {
    assert_eq!(logits.rows(), gt_actions.len(), "logits/actions length");
    let mut loss = 0.0;
    for (t, &a) in gt_actions.iter().enumerate() {
        loss -= log_softmax(logits.row(t))[a];
    }
    loss
}

fn clamp_critic(c: f64) -> f64 {
    c.clamp(CRITIC_CLAMP, 1.0 - CRITIC_CLAMP)
}

/// Binary cross-entropy for the critic: real sequences should score 1, fake
/// sequences 0. Inputs are fixed probability-row matrices (gradients never
/// flow into the generator from here).
pub fn critic_loss(
    state: &ModelState,
    real_sequences: &[Mat],
    fake_sequences: &[Mat],
) -> Result<f64, ModelError> {
    let mut real_term = 0.0;
    for rows in real_sequences {
        let c = clamp_critic(crate::model::critic_forward(state, rows)?);
        real_term -= c.ln();
    }
    let mut fake_term = 0.0;
    for rows in fake_sequences {
        let c = clamp_critic(crate::model::critic_forward(state, rows)?);
        fake_term -= (1.0 - c).ln();
    }
    Ok(real_term / real_sequences.len().max(1) as f64
        + fake_term / fake_sequences.len().max(1) as f64)
}

/// Non-saturating generator objective: the critic should call the fakes real.
pub fn generator_adv_loss(state: &ModelState, fake_sequences: &[Mat]) -> Result<f64, ModelError> {
    let mut loss = 0.0;
    for rows in fake_sequences {
        let c = clamp_critic(crate::model::critic_forward(state, rows)?);
        loss -= c.ln();
    }
    Ok(loss / fake_sequences.len().max(1) as f64)
}

// ---------------------------------------------------------------------------
// Batched forward state shared by the trainer and the gradient check
// ---------------------------------------------------------------------------

pub(crate) struct SampleForward {
    pub fwd: crate::model::ForwardCaches,
    /// Row-wise softmax of the logits.
    pub probs: Mat,
}

pub(crate) struct BatchForward {
    pub samples: Vec<SampleForward>,
}

pub(crate) fn softmax_rows(logits: &Mat) -> Mat {
    let mut probs = logits.clone();
    for t in 0..probs.rows() {
        crate::linalg::softmax_in_place(probs.row_mut(t));
    }
    probs
}

pub(crate) fn forward_batch(
    state: &ModelState,
    windows: &[PlanWindow],
    zs: &[Vec<f64>],
) -> Result<BatchForward, ModelError> {
    assert_eq!(windows.len(), zs.len());
    let shared = shared_kv(state);
    let mut samples = Vec::with_capacity(windows.len());
    for (window, z) in windows.iter().zip(zs) {
        let fwd = generator_forward(state, window, z, &shared)?;
        let probs = softmax_rows(&fwd.logits);
        samples.push(SampleForward { fwd, probs });
    }
    Ok(BatchForward { samples })
}

/// One-hot row matrix for a ground-truth action sequence.
pub(crate) fn one_hot_rows(actions: &[usize], num_actions: usize) -> Mat {
    let mut rows = Mat::zeros(actions.len(), num_actions);
    for (t, &a) in actions.iter().enumerate() {
        let encoded = one_hot(a, num_actions).expect("validated action index");
        rows.row_mut(t).copy_from_slice(&encoded);
    }
    rows
}

/// Values of the generator-side losses for a batch, without gradients.
/// Mirrors `generator_losses_backward` exactly.
pub(crate) fn generator_loss_values(
    state: &ModelState,
    windows: &[PlanWindow],
    batch: &BatchForward,
) -> Result<(f64, f64, f64), ModelError> {
    let b = windows.len() as f64;
    let mut l_ca = 0.0;
    for (window, sample) in windows.iter().zip(&batch.samples) {
        l_ca += cross_entropy_loss(&sample.fwd.logits, &window.actions);
    }
    l_ca /= b;

    let l_c = if state.config.use_context {
        let mut tokens = Vec::with_capacity(2 * windows.len());
        let mut caps = Vec::with_capacity(2 * windows.len());
        for (window, sample) in windows.iter().zip(&batch.samples) {
            let (tok_s, tok_g) = sample
                .fwd
                .context_tokens
                .as_ref()
                .expect("context enabled");
            tokens.push(tok_s.clone());
            tokens.push(tok_g.clone());
            caps.push(embed_caption_cached(state, &window.start_caption_emb)?.0);
            caps.push(embed_caption_cached(state, &window.goal_caption_emb)?.0);
        }
        let mut loss = 0.0;
        for (j, token) in tokens.iter().enumerate() {
            let logits: Vec<f64> = caps.iter().map(|cap| dot(cap, token)).collect();
            loss -= log_softmax(&logits)[j];
        }
        loss / b
    } else {
        0.0
    };

    let fakes: Vec<Mat> = batch.samples.iter().map(|s| s.probs.clone()).collect();
    let l_adv = generator_adv_loss(state, &fakes)?;
    Ok((l_ca, l_c, l_adv))
}

/// Gradient of `lambda_ca * L_ca + lambda_c * L_c + lambda_adv * L_adv` with
/// respect to every parameter (critic parameters receive the adversarial
/// term's true gradient; the optimizer simply never applies it to them).
/// Returns the unweighted loss values.
pub(crate) fn generator_losses_backward(
    state: &ModelState,
    windows: &[PlanWindow],
    batch: &BatchForward,
    lambda_ca: f64,
    lambda_c: f64,
    lambda_adv: f64,
    grads: &mut Params,
) -> Result<(f64, f64, f64), ModelError> {
    let b = windows.len() as f64;
    let inv_b = 1.0 / b;
    let n = state.config.num_actions;
    let mut skg = SharedKvGrads::zeros(
        state.config.layers,
        state.config.memory_entries,
        state.config.hidden,
    );

    // contrastive loss: token and caption gradients over the batch pool
    let mut l_c = 0.0;
    let mut token_grads: Vec<Vec<f64>> = Vec::new();
    let mut cap_data: Vec<(Vec<f64>, crate::model::CapCache)> = Vec::new();
    let use_contrastive = state.config.use_context && lambda_c != 0.0;
    if use_contrastive {
        let mut tokens: Vec<&[f64]> = Vec::with_capacity(2 * windows.len());
        for sample in &batch.samples {
            let (tok_s, tok_g) = sample
                .fwd
                .context_tokens
                .as_ref()
                .expect("context enabled");
            tokens.push(tok_s);
            tokens.push(tok_g);
        }
        for window in windows {
            cap_data.push(embed_caption_cached(state, &window.start_caption_emb)?);
            cap_data.push(embed_caption_cached(state, &window.goal_caption_emb)?);
        }
        let caps: Vec<&[f64]> = cap_data.iter().map(|(c, _)| c.as_slice()).collect();
        let d = state.config.hidden;
        token_grads = vec![vec![0.0; d]; tokens.len()];
        let mut cap_grads = vec![vec![0.0; d]; caps.len()];
        for (j, token) in tokens.iter().enumerate() {
            let raw: Vec<f64> = caps.iter().map(|cap| dot(cap, token)).collect();
            let ls = log_softmax(&raw);
            l_c -= ls[j];
            for (m, cap) in caps.iter().enumerate() {
                let dlogit = (ls[m].exp() - if m == j { 1.0 } else { 0.0 }) * inv_b * lambda_c;
                if dlogit != 0.0 {
                    axpy(&mut token_grads[j], cap, dlogit);
                    axpy(&mut cap_grads[m], token, dlogit);
                }
            }
        }
        l_c *= inv_b;
        for ((_, cache), grad) in cap_data.iter().zip(&cap_grads) {
            backward_caption_embedding(state, cache, grad, grads);
        }
    }

    // cross-entropy and adversarial gradients flow through the logits
    let mut l_ca = 0.0;
    let mut l_adv = 0.0;
    for (i, (window, sample)) in windows.iter().zip(&batch.samples).enumerate() {
        let horizon = window.horizon;
        let mut d_logits = Mat::zeros(horizon, n);

        // cross-entropy: d logits = softmax - one_hot, per step
        l_ca += cross_entropy_loss(&sample.fwd.logits, &window.actions);
        if lambda_ca != 0.0 {
            for (t, &a) in window.actions.iter().enumerate() {
                let row = d_logits.row_mut(t);
                axpy(row, sample.probs.row(t), lambda_ca * inv_b);
                row[a] -= lambda_ca * inv_b;
            }
        }

        // adversarial: through the critic into the probability rows
        let (c, critic_cache) = critic_forward_cached(state, &sample.probs)?;
        let clamped = clamp_critic(c);
        l_adv -= clamped.ln();
        if lambda_adv != 0.0 {
            let d_value = if (CRITIC_CLAMP..=1.0 - CRITIC_CLAMP).contains(&c) {
                -lambda_adv * inv_b / clamped
            } else {
                0.0
            };
            if d_value != 0.0 {
                let mut d_probs = Mat::zeros(horizon, n);
                critic_backward(state, &critic_cache, d_value, grads, Some(&mut d_probs));
                // softmax backward per row
                for t in 0..horizon {
                    let p = sample.probs.row(t);
                    let dp = d_probs.row(t);
                    let weighted: f64 = dp.iter().zip(p).map(|(a, b)| a * b).sum();
                    let row = d_logits.row_mut(t);
                    for c in 0..n {
                        row[c] += p[c] * (dp[c] - weighted);
                    }
                }
            }
        }

        let extra = if use_contrastive {
            Some((
                token_grads[2 * i].as_slice(),
                token_grads[2 * i + 1].as_slice(),
            ))
        } else {
            None
        };
        backward_generator_sample(state, &sample.fwd, &d_logits, extra, grads, &mut skg);
    }
    finish_shared_kv(state, &skg, grads);
    Ok((l_ca * inv_b, l_c, l_adv * inv_b))
}

/// Critic BCE loss and parameter gradients for fixed real/fake inputs.
pub(crate) fn critic_loss_backward(
    state: &ModelState,
    reals: &[Mat],
    fakes: &[Mat],
    grads: &mut Params,
) -> Result<f64, ModelError> {
    let inv_r = 1.0 / reals.len().max(1) as f64;
    let inv_f = 1.0 / fakes.len().max(1) as f64;
    let mut loss = 0.0;
    for rows in reals {
        let (c, cache) = critic_forward_cached(state, rows)?;
        let clamped = clamp_critic(c);
        loss -= clamped.ln() * inv_r;
        if (CRITIC_CLAMP..=1.0 - CRITIC_CLAMP).contains(&c) {
            critic_backward(state, &cache, -inv_r / clamped, grads, None);
        }
    }
    for rows in fakes {
        let (c, cache) = critic_forward_cached(state, rows)?;
        let clamped = clamp_critic(c);
        loss -= (1.0 - clamped).ln() * inv_f;
        if (CRITIC_CLAMP..=1.0 - CRITIC_CLAMP).contains(&c) {
            critic_backward(state, &cache, inv_f / (1.0 - clamped), grads, None);
        }
    }
    Ok(loss)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;

    #[test]
    fn contrastive_two_tokens_two_orthogonal_negatives() {
        let tokens = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let positives = tokens.clone();
        let negatives = vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, -1.0]];
        let (loss, degenerate) = contrastive_loss(&tokens, &positives, &negatives);
        let e = std::f64::consts::E;
        let expected = 2.0 * -(e / (e + 2.0)).ln();
        assert!((loss - expected).abs() < 1e-9);
        assert!((loss - 1.1029).abs() < 1e-4);
        assert!(!degenerate);
    }

    #[test]
    fn contrastive_positive_only_pool_is_zero() {
        let tokens = vec![vec![0.6, 0.8]];
        let positives = vec![vec![0.0, 1.0]];
        let (loss, degenerate) = contrastive_loss(&tokens, &positives, &[]);
        assert_eq!(loss, 0.0);
        assert!(degenerate);
    }

    #[test]
    fn contrastive_equal_logits_give_ln_two() {
        let tokens = vec![vec![1.0, 0.0]];
        let positives = vec![vec![0.0, 1.0]];
        let negatives = vec![vec![0.0, -1.0]];
        let (loss, _) = contrastive_loss(&tokens, &positives, &negatives);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_half_probability_per_step() {
        // logits chosen so each step's ground truth has probability 0.5
        let logits = Mat::from_vec(2, 2, vec![0.0, 0.0, 0.0, 0.0]);
        let loss = cross_entropy_loss(&logits, &[0, 1]);
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_confident_prediction_tends_to_zero() {
        let logits = Mat::from_vec(1, 3, vec![50.0, 0.0, 0.0]);
        assert!(cross_entropy_loss(&logits, &[0]) < 1e-12);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Mat::from_vec(1, 4, vec![2.0, 2.0, 2.0, 2.0]);
        let loss = cross_entropy_loss(&logits, &[2]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    fn zero_critic_state() -> ModelState {
        use crate::model::{init_parameters, GeneratorConfig, Linear};
        let mut state = init_parameters(&GeneratorConfig::tiny(), 2).unwrap();
        let c = &mut state.params.critic;
        c.proj = Linear::zeros(c.proj.input_dim(), c.proj.output_dim());
        c.l1 = Linear::zeros(c.l1.input_dim(), c.l1.output_dim());
        c.l2 = Linear::zeros(c.l2.input_dim(), c.l2.output_dim());
        c.out = Linear::zeros(c.out.input_dim(), 1);
        state
    }

    #[test]
    fn critic_loss_at_half_is_two_ln_two() {
        let state = zero_critic_state();
        let n = state.config.num_actions;
        let rows = one_hot_rows(&[0, 1], n);
        let loss = critic_loss(&state, &[rows.clone()], &[rows]).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn generator_adv_loss_at_half_is_ln_two() {
        let state = zero_critic_state();
        let n = state.config.num_actions;
        let rows = one_hot_rows(&[2, 3], n);
        let loss = generator_adv_loss(&state, &[rows]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn adversarial_losses_stay_finite_under_extreme_scores() {
        use crate::model::{init_parameters, GeneratorConfig};
        let mut state = init_parameters(&GeneratorConfig::tiny(), 3).unwrap();
        // enormous output bias drives the sigmoid into saturation
        state.params.critic.out.b = vec![1e4];
        let n = state.config.num_actions;
        let rows = one_hot_rows(&[0, 0], n);
        let fake_loss = critic_loss(&state, &[rows.clone()], &[rows.clone()]).unwrap();
        assert!(fake_loss.is_finite());
        state.params.critic.out.b = vec![-1e4];
        let gen_loss = generator_adv_loss(&state, &[rows]).unwrap();
        assert!(gen_loss.is_finite());
    }
}
