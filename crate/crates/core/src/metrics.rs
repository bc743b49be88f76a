//! Evaluation metrics: success rate, mean accuracy, mean IoU, and the
//! distributional suite (KL divergence, mode precision/recall, NLL, cosine
//! distance) computed over groups of windows that share a start/goal state.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::domain::{DomainError, MetricReport, PlanDistribution, PlanWindow, TransitionMatrix};
use crate::infer::{
    marginal_distribution, sample_plans, viterbi_decode, InferError, SampledPlans,
};
use crate::linalg::{dot, l2_norm, Mat};
use crate::model::ModelState;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction/ground-truth mismatch: {0}")]
    LengthMismatch(String),
    #[error("evaluation set is empty")]
    EmptyInput,
    #[error("evaluation windows mix horizons {0} and {1}")]
    MixedHorizons(usize, usize),
    #[error("{which} distribution sums to {sum}, expected 1 within 1e-6")]
    Unnormalized { which: &'static str, sum: f64 },
    #[error("cosine distance undefined for a zero vector")]
    ZeroVector,
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn check_paired(preds: &[Vec<usize>], gts: &[Vec<usize>]) -> Result<(), MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        if p.len() != g.len() {
            return Err(MetricsError::LengthMismatch(format!(
                "sample {i}: prediction has {} steps, ground truth {}",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

/// Percentage of samples whose predicted sequence matches the ground truth
/// exactly.
pub fn success_rate(preds: &[Vec<usize>], gts: &[Vec<usize>]) -> Result<f64, MetricsError> {
    check_paired(preds, gts)?;
    let hits = preds.iter().zip(gts).filter(|(p, g)| p == g).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// Mean per-position match rate across samples, as a percentage.
pub fn mean_accuracy(preds: &[Vec<usize>], gts: &[Vec<usize>]) -> Result<f64, MetricsError> {
    check_paired(preds, gts)?;
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let matches = p.iter().zip(g).filter(|(a, b)| a == b).count();
        total += matches as f64 / p.len() as f64;
    }
    Ok(100.0 * total / preds.len() as f64)
}

/// Mean per-sample intersection-over-union of the action sets, order-free,
/// as a percentage.
pub fn mean_iou(preds: &[Vec<usize>], gts: &[Vec<usize>]) -> Result<f64, MetricsError> {
    check_paired(preds, gts)?;
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let ps: BTreeSet<usize> = p.iter().copied().collect();
        let gs: BTreeSet<usize> = g.iter().copied().collect();
        let inter = ps.intersection(&gs).count() as f64;
        let union = ps.union(&gs).count() as f64;
        total += inter / union;
    }
    Ok(100.0 * total / preds.len() as f64)
}

/// KL(gt || pred) over the union support, with predicted probabilities
/// floored at `epsilon` and renormalized. Penalizes ground-truth modes the
/// prediction misses.
pub fn kl_divergence(
    pred: &BTreeMap<Vec<usize>, f64>,
    gt: &BTreeMap<Vec<usize>, f64>,
    epsilon: f64,
) -> Result<f64, MetricsError> {
    for (which, dist) in [("predicted", pred), ("ground-truth", gt)] {
        let sum: f64 = dist.values().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(MetricsError::Unnormalized { which, sum });
        }
    }
    let support: BTreeSet<&Vec<usize>> = pred.keys().chain(gt.keys()).collect();
    let mut floored: BTreeMap<&Vec<usize>, f64> = BTreeMap::new();
    let mut total = 0.0;
    for &plan in &support {
        let p = pred.get(plan).copied().unwrap_or(0.0).max(epsilon);
        floored.insert(plan, p);
        total += p;
    }
    let mut kl = 0.0;
    for (plan, &g) in gt {
        if g > 0.0 {
            let p = floored[&plan] / total;
            kl += g * (g / p).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// One evaluation group: every window sharing a (start, goal) state, its
/// ground-truth plans with multiplicities, the pooled predicted samples, and
/// the exact plan distribution when the world oracle provides one.
#[derive(Debug, Clone)]
pub struct EvalGroup {
    pub key: (usize, usize),
    pub gt_plans: Vec<Vec<usize>>,
    pub predicted_samples: SampledPlans,
    pub gt_distribution: Option<BTreeMap<Vec<usize>, f64>>,
}

/// Mode precision: fraction of predicted samples equal to some ground-truth
/// mode. Mode recall: fraction of ground-truth modes appearing at least once
/// among the samples.
pub fn mode_metrics(group: &EvalGroup) -> (f64, f64) {
    let modes: BTreeSet<&Vec<usize>> = group.gt_plans.iter().collect();
    let samples = &group.predicted_samples.plans;
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let on_mode = samples.iter().filter(|p| modes.contains(p)).count();
    let precision = on_mode as f64 / samples.len() as f64;
    let sampled: BTreeSet<&Vec<usize>> = samples.iter().collect();
    let recalled = modes.iter().filter(|m| sampled.contains(*m)).count();
    let recall = recalled as f64 / modes.len() as f64;
    (precision, recall)
}

/// Mean negative log likelihood of the ground-truth plans under the sample
/// frequencies, floored by `epsilon` (default: half a sample's worth,
/// 1/(2K)).
pub fn nll(group: &EvalGroup, epsilon: f64) -> f64 {
    let k = group.predicted_samples.k() as f64;
    let mut counts: BTreeMap<&Vec<usize>, usize> = BTreeMap::new();
    for p in &group.predicted_samples.plans {
        *counts.entry(p).or_insert(0) += 1;
    }
    let mut total = 0.0;
    for gt in &group.gt_plans {
        let freq = counts.get(gt).copied().unwrap_or(0) as f64 / k;
        total += -(freq + epsilon).ln();
    }
    total / group.gt_plans.len() as f64
}

/// One minus the cosine similarity of the flattened distribution matrices.
pub fn cosine_distance(
    pred: &PlanDistribution,
    gt: &PlanDistribution,
) -> Result<f64, MetricsError> {
    if pred.horizon() != gt.horizon() || pred.num_actions() != gt.num_actions() {
        return Err(MetricsError::LengthMismatch(format!(
            "distribution shapes {}x{} vs {}x{}",
            pred.horizon(),
            pred.num_actions(),
            gt.horizon(),
            gt.num_actions()
        )));
    }
    let a = pred.probs().data();
    let b = gt.probs().data();
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    Ok(1.0 - dot(a, b) / (na * nb))
}

/// A test window annotated with its evaluation group key and, when the world
/// oracle is available, the exact conditional plan distribution.
#[derive(Debug, Clone)]
pub struct EvalWindow {
    pub window: PlanWindow,
    pub group_key: (usize, usize),
    pub gt_distribution: Option<BTreeMap<Vec<usize>, f64>>,
}

/// Marginal per-step distribution of an exact plan distribution.
fn exact_marginal(
    dist: &BTreeMap<Vec<usize>, f64>,
    horizon: usize,
    num_actions: usize,
) -> Result<PlanDistribution, MetricsError> {
    let mut m = Mat::zeros(horizon, num_actions);
    for (plan, &p) in dist {
        for (t, &a) in plan.iter().enumerate() {
            m.set(t, a, m.get(t, a) + p);
        }
    }
    for t in 0..horizon {
        let row = m.row_mut(t);
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(PlanDistribution::new(m)?)
}

fn empirical_distribution(plans: &[Vec<usize>]) -> BTreeMap<Vec<usize>, f64> {
    let mut counts: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for p in plans {
        *counts.entry(p.clone()).or_insert(0.0) += 1.0;
    }
    let total = plans.len() as f64;
    for v in counts.values_mut() {
        *v /= total;
    }
    counts
}

/// Evaluate one horizon's windows: Viterbi-decode every window for SR, mAcc,
/// and mIoU, then pool per-group samples (exactly K per group) for the
/// distributional metrics, averaged over groups in sorted key order.
///
/// Per-window sample seeds are `seed + window_index`; results are
/// deterministic and independent of the window order.
pub fn evaluate(
    state: &ModelState,
    windows: &[EvalWindow],
    k: usize,
    transitions: &TransitionMatrix,
    seed: u64,
) -> Result<MetricReport, MetricsError> {
    if windows.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let horizon = windows[0].window.horizon;
    for w in windows {
        if w.window.horizon != horizon {
            return Err(MetricsError::MixedHorizons(horizon, w.window.horizon));
        }
    }
    let n = state.config.num_actions;

    // order-independent seeds: windows are processed in a canonical sort
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.sort_by(|&a, &b| {
        let wa = &windows[a];
        let wb = &windows[b];
        (wa.group_key, &wa.window.source_video_id, &wa.window.actions, a)
            .cmp(&(wb.group_key, &wb.window.source_video_id, &wb.window.actions, b))
    });

    let mut preds = Vec::with_capacity(windows.len());
    let mut gts = Vec::with_capacity(windows.len());
    let mut groups: BTreeMap<(usize, usize), Vec<(usize, SampledPlans)>> = BTreeMap::new();
    for (rank, &idx) in order.iter().enumerate() {
        let ew = &windows[idx];
        let samples = sample_plans(state, &ew.window, k, seed.wrapping_add(rank as u64))?;
        let marginal = marginal_distribution(&samples, n)?;
        preds.push(viterbi_decode(transitions, &marginal)?);
        gts.push(ew.window.actions.clone());
        groups.entry(ew.group_key).or_default().push((idx, samples));
    }

    let sr = success_rate(&preds, &gts)?;
    let macc = mean_accuracy(&preds, &gts)?;
    let miou = mean_iou(&preds, &gts)?;

    let mut kl_sum = 0.0;
    let mut nll_sum = 0.0;
    let mut cos_sum = 0.0;
    let mut prec_sum = 0.0;
    let mut rec_sum = 0.0;
    let num_groups = groups.len() as f64;
    for (key, members) in &groups {
        // pool exactly K samples per group, spread evenly over its windows
        let m = members.len();
        let per = k.div_ceil(m);
        let mut pooled = Vec::with_capacity(k);
        'outer: for round in 0..per {
            for (_, samples) in members {
                if round < samples.plans.len() {
                    pooled.push(samples.plans[round].clone());
                    if pooled.len() == k {
                        break 'outer;
                    }
                }
            }
        }
        let pooled = SampledPlans {
            plans: pooled,
            horizon,
            seed,
        };
        let gt_plans: Vec<Vec<usize>> = members
            .iter()
            .map(|(idx, _)| windows[*idx].window.actions.clone())
            .collect();
        let gt_distribution = members
            .iter()
            .find_map(|(idx, _)| windows[*idx].gt_distribution.clone());
        let group = EvalGroup {
            key: *key,
            gt_plans,
            predicted_samples: pooled,
            gt_distribution,
        };

        let pred_dist = empirical_distribution(&group.predicted_samples.plans);
        let gt_dist = match &group.gt_distribution {
            Some(d) => d.clone(),
            None => empirical_distribution(&group.gt_plans),
        };
        kl_sum += kl_divergence(&pred_dist, &gt_dist, 1e-8)?;
        nll_sum += nll(&group, 1.0 / (2.0 * k as f64));
        let (p, r) = mode_metrics(&group);
        prec_sum += p;
        rec_sum += r;
        let pred_marginal = marginal_distribution(&group.predicted_samples, n)?;
        let gt_marginal = exact_marginal(&gt_dist, horizon, n)?;
        cos_sum += cosine_distance(&pred_marginal, &gt_marginal)?;
    }

    Ok(MetricReport {
        horizon,
        sr,
        macc,
        miou,
        kl: kl_sum / num_groups,
        nll: nll_sum / num_groups,
        cosine_distance: cos_sum / num_groups,
        mode_precision: prec_sum / num_groups,
        mode_recall: rec_sum / num_groups,
        num_samples_k: k,
        seed,
    })
}
