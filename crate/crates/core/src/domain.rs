//! Shared domain types: the action vocabulary, plan windows, plan/transition
//! distributions, and metric reports.
//!
//! Everything here is immutable after construction and safe to share across
//! threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Mat;

/// Tolerance for row-stochastic checks on distributions.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("action index {index} out of range for vocabulary of size {size}")]
    ActionIndexOutOfRange { index: usize, size: usize },
    #[error("vocabulary must contain at least 2 distinct actions, got {0}")]
    VocabularyTooSmall(usize),
    #[error("duplicate action name: {0}")]
    DuplicateActionName(String),
    #[error("one-hot size must be positive")]
    EmptyOneHot,
    #[error("plan window validation failed: {}", violations.join("; "))]
    InvalidWindow { violations: Vec<String> },
    #[error("row {row} of {what} sums to {sum}, expected 1 within {tol}")]
    RowNotStochastic {
        what: &'static str,
        row: usize,
        sum: f64,
        tol: f64,
    },
    #[error("entry ({row}, {col}) of {what} is {value}, outside {bounds}")]
    EntryOutOfBounds {
        what: &'static str,
        row: usize,
        col: usize,
        value: f64,
        bounds: &'static str,
    },
}

/// Ordered set of distinct action labels; indices are `0..len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionVocabulary {
    names: Vec<String>,
}

impl ActionVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self, DomainError> {
        if names.len() < 2 {
            return Err(DomainError::VocabularyTooSmall(names.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.clone()) {
                return Err(DomainError::DuplicateActionName(n.clone()));
            }
        }
        Ok(ActionVocabulary { names })
    }

    /// Vocabulary with generated labels `a00..`, handy for synthetic worlds.
    pub fn generic(size: usize) -> Result<Self, DomainError> {
        Self::new((0..size).map(|i| format!("a{i:02}")).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(|s| s.as_str())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One training/evaluation sample: start/goal observations, their caption
/// embeddings, and the ground-truth action sequence between them.
///
/// `task_id` is carried for evaluation grouping only; no model-facing
/// operation may read it (see the conformance tests).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanWindow {
    pub start_obs: Vec<f64>,
    pub goal_obs: Vec<f64>,
    pub start_caption_emb: Vec<f64>,
    pub goal_caption_emb: Vec<f64>,
    pub actions: Vec<usize>,
    pub horizon: usize,
    pub source_video_id: String,
    pub task_id: Option<String>,
}

impl PlanWindow {
    pub fn obs_dim(&self) -> usize {
        self.start_obs.len()
    }
}

/// Validate a window against the vocabulary and expected embedding dimension.
///
/// Returns the window unchanged when every invariant holds; otherwise reports
/// every violation found, not just the first.
pub fn validate_window(
    window: PlanWindow,
    vocab: &ActionVocabulary,
    expected_dim: usize,
) -> Result<PlanWindow, DomainError> {
    let mut violations = Vec::new();
    let vectors = [
        ("start_obs", &window.start_obs),
        ("goal_obs", &window.goal_obs),
        ("start_caption_emb", &window.start_caption_emb),
        ("goal_caption_emb", &window.goal_caption_emb),
    ];
    for (name, v) in vectors {
        if v.len() != expected_dim {
            violations.push(format!(
                "{name} has dimension {}, expected {expected_dim}",
                v.len()
            ));
        }
        if v.iter().any(|x| !x.is_finite()) {
            violations.push(format!("non-finite observation entry in {name}"));
        }
    }
    if window.horizon == 0 {
        violations.push("horizon must be positive".to_string());
    }
    if window.actions.len() != window.horizon {
        violations.push(format!(
            "actions has length {}, expected horizon {}",
            window.actions.len(),
            window.horizon
        ));
    }
    for (t, &a) in window.actions.iter().enumerate() {
        if a >= vocab.len() {
            violations.push(format!(
                "action index out of range at step {t}: {a} >= {}",
                vocab.len()
            ));
        }
    }
    if violations.is_empty() {
        Ok(window)
    } else {
        Err(DomainError::InvalidWindow { violations })
    }
}

/// One-hot encoding of an action index.
pub fn one_hot(index: usize, size: usize) -> Result<Vec<f64>, DomainError> {
    if size == 0 {
        return Err(DomainError::EmptyOneHot);
    }
    if index >= size {
        return Err(DomainError::ActionIndexOutOfRange { index, size });
    }
    let mut v = vec![0.0; size];
    v[index] = 1.0;
    Ok(v)
}

/// A T x N row-stochastic matrix of per-timestep marginal action
/// probabilities. Doubles as the emission matrix for Viterbi decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanDistribution {
    probs: Mat,
}

impl PlanDistribution {
    pub fn new(probs: Mat) -> Result<Self, DomainError> {
        for r in 0..probs.rows() {
            let mut sum = 0.0;
            for (c, &v) in probs.row(r).iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(DomainError::EntryOutOfBounds {
                        what: "plan distribution",
                        row: r,
                        col: c,
                        value: v,
                        bounds: "[0, 1]",
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(DomainError::RowNotStochastic {
                    what: "plan distribution",
                    row: r,
                    sum,
                    tol: ROW_SUM_TOL,
                });
            }
        }
        Ok(PlanDistribution { probs })
    }

    /// Bypass validation; test-only escape hatch for exercising error paths
    /// that the invariants otherwise rule out.
    #[cfg(test)]
    pub(crate) fn new_unchecked(probs: Mat) -> Self {
        PlanDistribution { probs }
    }

    pub fn horizon(&self) -> usize {
        self.probs.rows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.cols()
    }

    pub fn probs(&self) -> &Mat {
        &self.probs
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.probs.row(t)
    }
}

/// An N x N row-stochastic, strictly positive transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    probs: Mat,
}

impl TransitionMatrix {
    pub fn new(probs: Mat) -> Result<Self, DomainError> {
        assert_eq!(probs.rows(), probs.cols(), "transition matrix must be square");
        for r in 0..probs.rows() {
            let mut sum = 0.0;
            for (c, &v) in probs.row(r).iter().enumerate() {
                if !(v > 0.0 && v < 1.0) {
                    return Err(DomainError::EntryOutOfBounds {
                        what: "transition matrix",
                        row: r,
                        col: c,
                        value: v,
                        bounds: "(0, 1)",
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(DomainError::RowNotStochastic {
                    what: "transition matrix",
                    row: r,
                    sum,
                    tol: ROW_SUM_TOL,
                });
            }
        }
        Ok(TransitionMatrix { probs })
    }

    pub fn num_actions(&self) -> usize {
        self.probs.rows()
    }

    pub fn probs(&self) -> &Mat {
        &self.probs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }
}

/// All eight evaluation metrics for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub horizon: usize,
    /// Exact-sequence success rate, percent.
    pub sr: f64,
    /// Order-aware element-wise accuracy, percent.
    pub macc: f64,
    /// Order-free set overlap, percent.
    pub miou: f64,
    pub kl: f64,
    pub nll: f64,
    pub cosine_distance: f64,
    pub mode_precision: f64,
    pub mode_recall: f64,
    #[serde(rename = "K")]
    pub num_samples_k: usize,
    pub seed: u64,
}

impl MetricReport {
    pub fn all_finite(&self) -> bool {
        [
            self.sr,
            self.macc,
            self.miou,
            self.kl,
            self.nll,
            self.cosine_distance,
            self.mode_precision,
            self.mode_recall,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window_for_test(actions: Vec<usize>, dim: usize) -> PlanWindow {
        let horizon = actions.len();
        PlanWindow {
            start_obs: vec![0.1; dim],
            goal_obs: vec![0.2; dim],
            start_caption_emb: vec![0.3; dim],
            goal_caption_emb: vec![0.4; dim],
            actions,
            horizon,
            source_video_id: "v0".to_string(),
            task_id: None,
        }
    }

    #[test]
    fn one_hot_basic() {
        assert_eq!(one_hot(2, 4).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn one_hot_degenerate_vocabulary() {
        assert_eq!(one_hot(0, 1).unwrap(), vec![1.0]);
    }

    #[test]
    fn one_hot_last_index() {
        assert_eq!(one_hot(3, 4).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn one_hot_out_of_range_names_index_and_size() {
        let err = one_hot(4, 4).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('4'), "{msg}");
        assert!(msg.contains("size 4"), "{msg}");
    }

    #[test]
    fn one_hot_sums_to_one_with_single_nonzero() {
        for size in 1..9 {
            for idx in 0..size {
                let v = one_hot(idx, size).unwrap();
                assert_eq!(v.iter().sum::<f64>(), 1.0);
                assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 1);
            }
        }
    }

    #[test]
    fn validate_window_identity_on_valid_input() {
        let vocab = ActionVocabulary::generic(12).unwrap();
        let w = window_for_test(vec![0, 5, 11], 512);
        let validated = validate_window(w.clone(), &vocab, 512).unwrap();
        assert_eq!(validated, w);
    }

    #[test]
    fn validate_window_rejects_out_of_range_action() {
        let vocab = ActionVocabulary::generic(12).unwrap();
        let w = window_for_test(vec![0, 12, 3], 16);
        let err = validate_window(w, &vocab, 16).unwrap_err();
        assert!(err.to_string().contains("action index out of range"));
    }

    #[test]
    fn validate_window_rejects_non_finite_observation() {
        let vocab = ActionVocabulary::generic(12).unwrap();
        let mut w = window_for_test(vec![0, 1], 16);
        w.start_obs[3] = f64::NAN;
        let err = validate_window(w, &vocab, 16).unwrap_err();
        assert!(err.to_string().contains("non-finite observation"));
    }

    #[test]
    fn validate_window_lists_every_violation() {
        let vocab = ActionVocabulary::generic(4).unwrap();
        let mut w = window_for_test(vec![0, 9], 16);
        w.goal_obs = vec![f64::INFINITY; 8];
        let err = validate_window(w, &vocab, 16).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("goal_obs has dimension 8"), "{msg}");
        assert!(msg.contains("non-finite observation"), "{msg}");
        assert!(msg.contains("action index out of range"), "{msg}");
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_tiny_sets() {
        assert!(ActionVocabulary::new(vec!["a".into()]).is_err());
        assert!(ActionVocabulary::new(vec!["a".into(), "a".into()]).is_err());
        let v = ActionVocabulary::new(vec!["pour".into(), "stir".into()]).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.name(1), Some("stir"));
    }

    #[test]
    fn plan_distribution_enforces_row_sums() {
        let ok = Mat::from_vec(2, 2, vec![0.25, 0.75, 1.0, 0.0]);
        assert!(PlanDistribution::new(ok).is_ok());
        let bad = Mat::from_vec(1, 2, vec![0.6, 0.6]);
        assert!(PlanDistribution::new(bad).is_err());
        let neg = Mat::from_vec(1, 2, vec![-0.1, 1.1]);
        assert!(PlanDistribution::new(neg).is_err());
    }

    #[test]
    fn transition_matrix_requires_strict_positivity() {
        let ok = Mat::from_vec(2, 2, vec![0.5, 0.5, 0.2, 0.8]);
        assert!(TransitionMatrix::new(ok).is_ok());
        let zero_entry = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.5, 0.5]);
        assert!(TransitionMatrix::new(zero_entry).is_err());
    }
}
