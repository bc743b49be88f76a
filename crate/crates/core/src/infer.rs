//! Inference: draw K noise-conditioned plans, aggregate them into a marginal
//! per-step distribution, and decode the most probable sequence under a
//! first-order transition model with the Viterbi algorithm.
//!
//! `brute_force_decode` scores every possible path with the same arithmetic
//! (bit-identical accumulation order) and serves as the oracle for
//! `viterbi_decode`, including tie cases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::domain::{DomainError, PlanDistribution, PlanWindow, TransitionMatrix};
use crate::linalg::{softmax_in_place, Mat};
use crate::model::{ModelError, ModelState};

#[derive(Debug, Error)]
pub enum InferError {
    #[error("degenerate emissions at step {step}: entire row is zero")]
    DegenerateEmissions { step: usize },
    #[error("no transitions available: every training plan is shorter than 2 steps")]
    NoTransitions,
    #[error("instance too large for exhaustive decoding: {states}^{horizon} paths")]
    InstanceTooLarge { states: usize, horizon: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// K sampled plans of horizon T, drawn with a fixed seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPlans {
    pub plans: Vec<Vec<usize>>,
    pub horizon: usize,
    pub seed: u64,
}

impl SampledPlans {
    pub fn k(&self) -> usize {
        self.plans.len()
    }
}

/// Draw K latent noise vectors and run the generator on each, converting
/// every timestep's logits to a one-hot by argmax (ties toward the lowest
/// index). Deterministic given the seed.
pub fn sample_plans(
    state: &ModelState,
    window: &PlanWindow,
    k: usize,
    seed: u64,
) -> Result<SampledPlans, InferError> {
    assert!(k >= 1, "need at least one sample");
    let sampler = state.plan_sampler(window)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; state.config.noise_dim];
    let mut plans = Vec::with_capacity(k);
    for _ in 0..k {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        plans.push(sampler.sample(&z)?);
    }
    Ok(SampledPlans {
        plans,
        horizon: window.horizon,
        seed,
    })
}

/// Per-timestep action frequencies over the sampled plans (rows sum to 1).
pub fn marginal_distribution(
    samples: &SampledPlans,
    num_actions: usize,
) -> Result<PlanDistribution, InferError> {
    assert!(samples.k() >= 1, "need at least one sample");
    let k = samples.k() as f64;
    let mut counts = Mat::zeros(samples.horizon, num_actions);
    for plan in &samples.plans {
        for (t, &a) in plan.iter().enumerate() {
            counts.set(t, a, counts.get(t, a) + 1.0);
        }
    }
    for t in 0..counts.rows() {
        let row = counts.row_mut(t);
        for v in row.iter_mut() {
            *v /= k;
        }
        // kill the residual rounding so rows sum to 1 exactly
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(PlanDistribution::new(counts)?)
}

/// Estimate the transition matrix from training plans: tally how often
/// action i is followed by action j, L1-normalize each row (zero rows stay
/// zero), then apply a row-wise softmax with temperature `tau`. The softmax
/// makes every entry strictly positive; unseen source actions come out
/// uniform.
pub fn estimate_transition(
    train_plans: &[Vec<usize>],
    num_actions: usize,
    tau: f64,
) -> Result<TransitionMatrix, InferError> {
    let mut counts = Mat::zeros(num_actions, num_actions);
    let mut any = false;
    for plan in train_plans {
        for pair in plan.windows(2) {
            counts.set(pair[0], pair[1], counts.get(pair[0], pair[1]) + 1.0);
            any = true;
        }
    }
    if !any {
        return Err(InferError::NoTransitions);
    }
    for i in 0..num_actions {
        let row = counts.row_mut(i);
        let l1: f64 = row.iter().map(|v| v.abs()).sum();
        if l1 > 0.0 {
            for v in row.iter_mut() {
                *v /= l1;
            }
        }
        for v in row.iter_mut() {
            *v /= tau;
        }
        softmax_in_place(row);
    }
    Ok(TransitionMatrix::new(counts)?)
}

fn check_emissions(emissions: &PlanDistribution) -> Result<(), InferError> {
    for t in 0..emissions.horizon() {
        if emissions.row(t).iter().all(|&v| v <= 0.0) {
            return Err(InferError::DegenerateEmissions { step: t });
        }
    }
    Ok(())
}

/// Exact value of a product of f64 probabilities, stored as an arbitrary-
/// precision mantissa times a power of two. Products of doubles are exact in
/// this representation, so path-score comparisons have no rounding and ties
/// are mathematical ties. An empty mantissa encodes zero.
#[derive(Debug, Clone, PartialEq)]
struct ExactProduct {
    limbs: Vec<u64>,
    exp: i64,
}

impl ExactProduct {
    fn one() -> Self {
        ExactProduct {
            limbs: vec![1],
            exp: 0,
        }
    }

    fn zero() -> Self {
        ExactProduct {
            limbs: Vec::new(),
            exp: 0,
        }
    }

    fn is_zero(&self) -> bool {
        self.limbs.is_empty()
    }

    /// Multiply by a finite non-negative f64.
    fn mul_f64(&mut self, value: f64) {
        debug_assert!(value >= 0.0 && value.is_finite());
        if self.is_zero() {
            return;
        }
        if value == 0.0 {
            *self = ExactProduct::zero();
            return;
        }
        let bits = value.to_bits();
        let exp_field = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & 0x000f_ffff_ffff_ffff;
        let (mantissa, exp) = if exp_field == 0 {
            (frac, -1074)
        } else {
            (frac | (1 << 52), exp_field - 1075)
        };
        self.exp += exp;
        let mut carry: u128 = 0;
        for limb in self.limbs.iter_mut() {
            let prod = *limb as u128 * mantissa as u128 + carry;
            *limb = prod as u64;
            carry = prod >> 64;
        }
        if carry != 0 {
            self.limbs.push(carry as u64);
        }
        while self.limbs.last() == Some(&0) {
            self.limbs.pop();
        }
    }

    fn bit_len(&self) -> i64 {
        match self.limbs.last() {
            None => 0,
            Some(top) => (self.limbs.len() as i64 - 1) * 64 + (64 - top.leading_zeros() as i64),
        }
    }

    /// Mantissa limbs shifted so the most significant bit sits at the top of
    /// the highest limb.
    fn msb_aligned(&self) -> Vec<u64> {
        let top = *self.limbs.last().expect("nonzero");
        let shift = top.leading_zeros();
        if shift == 0 {
            return self.limbs.clone();
        }
        let mut out = vec![0u64; self.limbs.len()];
        for (i, &limb) in self.limbs.iter().enumerate() {
            out[i] |= limb << shift;
            if i + 1 < out.len() {
                out[i + 1] |= limb >> (64 - shift);
            } else {
                debug_assert_eq!(limb >> (64 - shift), 0);
            }
        }
        out
    }

    fn cmp(&self, other: &ExactProduct) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match (self.is_zero(), other.is_zero()) {
            (true, true) => return Ordering::Equal,
            (true, false) => return Ordering::Less,
            (false, true) => return Ordering::Greater,
            (false, false) => {}
        }
        let magnitude = (self.exp + self.bit_len()).cmp(&(other.exp + other.bit_len()));
        if magnitude != Ordering::Equal {
            return magnitude;
        }
        let a = self.msb_aligned();
        let b = other.msb_aligned();
        for k in 0..a.len().max(b.len()) {
            let av = if k < a.len() { a[a.len() - 1 - k] } else { 0 };
            let bv = if k < b.len() { b[b.len() - 1 - k] } else { 0 };
            match av.cmp(&bv) {
                Ordering::Equal => {}
                other => return other,
            }
        }
        Ordering::Equal
    }
}

/// Most probable action sequence under transition matrix A and emission
/// matrix B: the argmax over paths of
/// `log B[0][s0] + sum_t (log A[s_{t-1}][s_t] + log B[t][s_t])`,
/// with zero emissions scoring as log 0 = -inf. Score ties break toward the
/// lexicographically smallest path.
///
/// Path scores are compared as exact products (equivalently, exact log
/// sums), so the tie-break is a statement about real numbers rather than
/// accumulation order, and [`brute_force_decode`] agrees bit-for-bit.
pub fn viterbi_decode(
    transitions: &TransitionMatrix,
    emissions: &PlanDistribution,
) -> Result<Vec<usize>, InferError> {
    let horizon = emissions.horizon();
    let n = emissions.num_actions();
    assert_eq!(
        transitions.num_actions(),
        n,
        "transition/emission size mismatch"
    );
    check_emissions(emissions)?;

    // best[t][s]: the best achievable probability of a path suffix starting
    // in state s at step t (dynamic program over suffixes so the forward
    // reconstruction can pick the smallest state among optimal choices)
    let mut best: Vec<Vec<ExactProduct>> = vec![vec![ExactProduct::zero(); n]; horizon];
    for s in 0..n {
        let mut p = ExactProduct::one();
        p.mul_f64(emissions.row(horizon - 1)[s]);
        best[horizon - 1][s] = p;
    }
    for t in (0..horizon - 1).rev() {
        for s in 0..n {
            let mut m = ExactProduct::zero();
            for j in 0..n {
                let mut cand = best[t + 1][j].clone();
                cand.mul_f64(transitions.row(s)[j]);
                if cand.cmp(&m) == std::cmp::Ordering::Greater {
                    m = cand;
                }
            }
            m.mul_f64(emissions.row(t)[s]);
            best[t][s] = m;
        }
    }

    let mut path = Vec::with_capacity(horizon);
    let mut first = 0;
    for (s, score) in best[0].iter().enumerate().skip(1) {
        if score.cmp(&best[0][first]) == std::cmp::Ordering::Greater {
            first = s;
        }
    }
    path.push(first);
    for t in 1..horizon {
        let prev = path[t - 1];
        let mut best_state = 0;
        let mut best_score = ExactProduct::zero();
        for (j, suffix) in best[t].iter().enumerate() {
            let mut cand = suffix.clone();
            cand.mul_f64(transitions.row(prev)[j]);
            if cand.cmp(&best_score) == std::cmp::Ordering::Greater {
                best_score = cand;
                best_state = j;
            }
        }
        path.push(best_state);
    }
    Ok(path)
}

/// Exhaustive oracle for [`viterbi_decode`]: scores every path with the same
/// exact-product arithmetic and the same lexicographic tie-break.
pub fn brute_force_decode(
    transitions: &TransitionMatrix,
    emissions: &PlanDistribution,
) -> Result<Vec<usize>, InferError> {
    let horizon = emissions.horizon();
    let n = emissions.num_actions();
    if (n as f64).powi(horizon as i32) > 1e6 {
        return Err(InferError::InstanceTooLarge { states: n, horizon });
    }
    check_emissions(emissions)?;

    let mut best_path: Option<Vec<usize>> = None;
    let mut best_score = ExactProduct::zero();
    let mut path = vec![0usize; horizon];
    loop {
        let mut score = ExactProduct::one();
        score.mul_f64(emissions.row(0)[path[0]]);
        for t in 1..horizon {
            score.mul_f64(transitions.row(path[t - 1])[path[t]]);
            score.mul_f64(emissions.row(t)[path[t]]);
        }
        let better = match &best_path {
            None => true,
            Some(_) => score.cmp(&best_score) == std::cmp::Ordering::Greater,
        };
        if better {
            best_score = score;
            best_path = Some(path.clone());
        }
        // advance to the next path in lexicographic order
        let mut pos = horizon;
        let mut done = true;
        while pos > 0 {
            pos -= 1;
            path[pos] += 1;
            if path[pos] < n {
                done = false;
                break;
            }
            path[pos] = 0;
        }
        if done {
            return Ok(best_path.expect("at least one path scored"));
        }
    }
}

/// End-to-end inference for one window: sample K plans, aggregate the
/// marginal distribution, and Viterbi-decode it against the transition
/// matrix.
pub fn plan(
    state: &ModelState,
    window: &PlanWindow,
    k: usize,
    transitions: &TransitionMatrix,
    seed: u64,
) -> Result<(Vec<usize>, PlanDistribution), InferError> {
    let samples = sample_plans(state, window, k, seed)?;
    let marginal = marginal_distribution(&samples, state.config.num_actions)?;
    let decoded = viterbi_decode(transitions, &marginal)?;
    Ok((decoded, marginal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_parameters, GeneratorConfig, Linear};
    use proptest::prelude::*;

    fn plan_dist(rows: Vec<Vec<f64>>) -> PlanDistribution {
        let r = rows.len();
        let c = rows[0].len();
        PlanDistribution::new(Mat::from_vec(r, c, rows.concat())).unwrap()
    }

    fn transition(rows: Vec<Vec<f64>>) -> TransitionMatrix {
        let r = rows.len();
        TransitionMatrix::new(Mat::from_vec(r, r, rows.concat())).unwrap()
    }

    fn uniform_transition(n: usize) -> TransitionMatrix {
        transition(vec![vec![1.0 / n as f64; n]; n])
    }

    fn tiny_window(state: &ModelState, horizon: usize) -> PlanWindow {
        let dim = state.config.obs_dim;
        PlanWindow {
            start_obs: (0..dim).map(|i| (i as f64 * 0.37).sin()).collect(),
            goal_obs: (0..dim).map(|i| (i as f64 * 0.71).cos()).collect(),
            start_caption_emb: vec![0.1; dim],
            goal_caption_emb: vec![0.2; dim],
            actions: vec![0; horizon],
            horizon,
            source_video_id: "v".into(),
            task_id: None,
        }
    }

    fn product_of(factors: &[f64]) -> ExactProduct {
        let mut p = ExactProduct::one();
        for &f in factors {
            p.mul_f64(f);
        }
        p
    }

    #[test]
    fn exact_product_is_order_independent() {
        use std::cmp::Ordering;
        let a = product_of(&[0.3, 0.7, 0.123456]);
        let b = product_of(&[0.123456, 0.7, 0.3]);
        assert_eq!(a.cmp(&b), Ordering::Equal);
        // mathematically equal factorizations of the same dyadic value
        let c = product_of(&[0.5, 0.5]);
        let d = product_of(&[0.25]);
        assert_eq!(c.cmp(&d), Ordering::Equal);
    }

    #[test]
    fn exact_product_orders_strictly() {
        use std::cmp::Ordering;
        assert_eq!(product_of(&[0.5]).cmp(&product_of(&[0.25])), Ordering::Greater);
        assert_eq!(
            product_of(&[0.1, 0.9]).cmp(&product_of(&[0.2, 0.9])),
            Ordering::Less
        );
        // one-ulp differences are visible
        let tiny_more = 0.1f64.next_up();
        assert_eq!(
            product_of(&[tiny_more, 0.77]).cmp(&product_of(&[0.1, 0.77])),
            Ordering::Greater
        );
        // exponent tracking keeps severely underflowing products ordered
        let a = product_of(&[1e-300, 1e-300, 0.5]);
        let b = product_of(&[1e-300, 1e-300, 0.25]);
        assert_eq!(a.cmp(&b), Ordering::Greater);
    }

    #[test]
    fn exact_product_zero_handling() {
        use std::cmp::Ordering;
        let zero = product_of(&[0.5, 0.0]);
        assert!(zero.is_zero());
        assert_eq!(zero.cmp(&product_of(&[1e-300, 1e-300])), Ordering::Less);
        assert_eq!(zero.cmp(&product_of(&[0.0])), Ordering::Equal);
    }

    #[test]
    fn sample_plans_shape_and_determinism() {
        let state = init_parameters(&GeneratorConfig::tiny(), 3).unwrap();
        let window = tiny_window(&state, 2);
        let a = sample_plans(&state, &window, 4, 9).unwrap();
        assert_eq!(a.plans.len(), 4);
        assert!(a.plans.iter().all(|p| p.len() == 2));
        assert!(a
            .plans
            .iter()
            .all(|p| p.iter().all(|&x| x < state.config.num_actions)));
        let b = sample_plans(&state, &window, 4, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_output_head_makes_all_plans_identical() {
        let mut state = init_parameters(&GeneratorConfig::tiny(), 4).unwrap();
        // zero head weights + fixed bias: logits independent of the noise
        let n = state.config.num_actions;
        state.params.output_head = Linear::zeros(state.config.hidden, n);
        state.params.output_head.b = vec![0.0, 3.0, 1.0, -1.0];
        let window = tiny_window(&state, 2);
        let samples = sample_plans(&state, &window, 8, 11).unwrap();
        for p in &samples.plans {
            assert_eq!(p, &vec![1, 1]);
        }
    }

    #[test]
    fn marginal_hand_counted_example() {
        let samples = SampledPlans {
            plans: vec![vec![0, 1], vec![0, 2], vec![1, 1], vec![0, 1]],
            horizon: 2,
            seed: 0,
        };
        let dist = marginal_distribution(&samples, 3).unwrap();
        assert_eq!(dist.row(0), &[0.75, 0.25, 0.0]);
        assert_eq!(dist.row(1), &[0.0, 0.75, 0.25]);
    }

    #[test]
    fn marginal_single_sample_is_one_hot() {
        let samples = SampledPlans {
            plans: vec![vec![2, 0]],
            horizon: 2,
            seed: 0,
        };
        let dist = marginal_distribution(&samples, 3).unwrap();
        assert_eq!(dist.row(0), &[0.0, 0.0, 1.0]);
        assert_eq!(dist.row(1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn marginal_identical_plans_are_one_hot_rows() {
        let samples = SampledPlans {
            plans: vec![vec![1, 2]; 7],
            horizon: 2,
            seed: 0,
        };
        let dist = marginal_distribution(&samples, 4).unwrap();
        assert_eq!(dist.row(0), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(dist.row(1), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn transition_worked_example() {
        let plans = vec![vec![0, 1, 2], vec![0, 1, 1]];
        let a = estimate_transition(&plans, 3, 1.0).unwrap();
        // row 0: counts [0,2,0] -> L1 [0,1,0] -> softmax (1, e, 1)/(2+e)
        let e = std::f64::consts::E;
        assert!((a.row(0)[0] - 1.0 / (2.0 + e)).abs() < 1e-12);
        assert!((a.row(0)[1] - e / (2.0 + e)).abs() < 1e-12);
        assert!((a.row(0)[0] - 0.21194).abs() < 1e-4);
        assert!((a.row(0)[1] - 0.57612).abs() < 1e-4);
        // row 1: counts [0,1,1] -> L1 [0,0.5,0.5] -> softmax(0,0.5,0.5)
        let denom = 1.0 + 2.0 * (0.5f64).exp();
        assert!((a.row(1)[0] - 1.0 / denom).abs() < 1e-12);
        assert!((a.row(1)[1] - (0.5f64).exp() / denom).abs() < 1e-12);
        assert!((a.row(1)[2] - (0.5f64).exp() / denom).abs() < 1e-12);
        // row 2: zero counts -> uniform
        for &v in a.row(2) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_requires_some_pair() {
        assert!(matches!(
            estimate_transition(&[vec![1], vec![2]], 3, 1.0),
            Err(InferError::NoTransitions)
        ));
    }

    #[test]
    fn transition_invariant_under_duplication() {
        let plans = vec![vec![0, 1, 2], vec![2, 2, 0]];
        let doubled: Vec<Vec<usize>> = plans.iter().chain(plans.iter()).cloned().collect();
        let a = estimate_transition(&plans, 3, 1.0).unwrap();
        let b = estimate_transition(&doubled, 3, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn viterbi_uniform_transitions_reduce_to_argmax() {
        let b = plan_dist(vec![vec![0.9, 0.1], vec![0.2, 0.8]]);
        let a = uniform_transition(2);
        assert_eq!(viterbi_decode(&a, &b).unwrap(), vec![0, 1]);
    }

    #[test]
    fn viterbi_tie_breaks_lexicographically() {
        let b = plan_dist(vec![vec![0.6, 0.4], vec![0.6, 0.4]]);
        let a = transition(vec![vec![0.1, 0.9], vec![0.9, 0.1]]);
        // paths 01 and 10 tie at probability 0.216
        assert_eq!(viterbi_decode(&a, &b).unwrap(), vec![0, 1]);
        assert_eq!(brute_force_decode(&a, &b).unwrap(), vec![0, 1]);
    }

    #[test]
    fn viterbi_single_step_is_row_argmax() {
        let b = plan_dist(vec![vec![0.2, 0.5, 0.3]]);
        let a = uniform_transition(3);
        assert_eq!(viterbi_decode(&a, &b).unwrap(), vec![1]);
    }

    #[test]
    fn viterbi_rejects_zero_emission_row() {
        let raw = PlanDistribution::new_unchecked(Mat::from_vec(2, 2, vec![0.0, 0.0, 0.5, 0.5]));
        let a = uniform_transition(2);
        match viterbi_decode(&a, &raw) {
            Err(InferError::DegenerateEmissions { step }) => assert_eq!(step, 0),
            other => panic!("expected degenerate emissions, got {other:?}"),
        }
    }

    #[test]
    fn brute_force_rejects_huge_instances() {
        let b = plan_dist(vec![vec![0.1; 10]; 7]);
        let a = uniform_transition(10);
        assert!(matches!(
            brute_force_decode(&a, &b),
            Err(InferError::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn zero_emission_entries_never_win() {
        // entries of exactly zero never win but do not poison the decode
        let b = plan_dist(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        let a = transition(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_eq!(viterbi_decode(&a, &b).unwrap(), vec![0, 1, 0]);
        assert_eq!(brute_force_decode(&a, &b).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn plan_composes_deterministically() {
        let state = init_parameters(&GeneratorConfig::tiny(), 6).unwrap();
        let window = tiny_window(&state, 2);
        let a = uniform_transition(state.config.num_actions);
        let (p1, d1) = plan(&state, &window, 16, &a, 33).unwrap();
        let (p2, d2) = plan(&state, &window, 16, &a, 33).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(d1, d2);
        assert_eq!(p1.len(), 2);
    }

    #[test]
    fn deterministic_generator_with_uniform_transitions_is_argmax() {
        let mut state = init_parameters(&GeneratorConfig::tiny(), 8).unwrap();
        let n = state.config.num_actions;
        state.params.output_head = Linear::zeros(state.config.hidden, n);
        state.params.output_head.b = vec![0.0, 0.5, 2.0, 1.0];
        let window = tiny_window(&state, 2);
        let a = uniform_transition(n);
        let (decoded, _) = plan(&state, &window, 32, &a, 7).unwrap();
        assert_eq!(decoded, vec![2, 2]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        /// Oracle equivalence on randomized instances; the coarse value grid
        /// provokes exact score ties.
        #[test]
        fn viterbi_matches_brute_force(
            n in 2usize..=6,
            horizon in 2usize..=5,
            seed in any::<u32>(),
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
            let grid = [0.0, 0.25, 0.5, 1.0];
            let mut b = Mat::zeros(horizon, n);
            for t in 0..horizon {
                loop {
                    let mut sum = 0.0;
                    for c in 0..n {
                        let v = grid[rng.random_range(0..grid.len())];
                        b.set(t, c, v);
                        sum += v;
                    }
                    if sum > 0.0 {
                        for c in 0..n {
                            b.set(t, c, b.get(t, c) / sum);
                        }
                        break;
                    }
                }
            }
            let mut a = Mat::zeros(n, n);
            for i in 0..n {
                let mut sum = 0.0;
                for j in 0..n {
                    let v = [1.0, 1.0, 2.0, 4.0][rng.random_range(0..4)];
                    a.set(i, j, v);
                    sum += v;
                }
                for j in 0..n {
                    a.set(i, j, a.get(i, j) / sum);
                }
            }
            let b = PlanDistribution::new(b).unwrap();
            let a = TransitionMatrix::new(a).unwrap();
            let fast = viterbi_decode(&a, &b).unwrap();
            let exact = brute_force_decode(&a, &b).unwrap();
            prop_assert_eq!(fast, exact);
        }
    }
}
