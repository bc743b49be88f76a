//! Forward passes. Every operation is pure: the state is never mutated, and
//! identical inputs produce identical outputs.
//!
//! Training needs intermediate activations, so the workhorse functions return
//! a cache alongside their output; the cache types are consumed by the
//! backward passes in this module's sibling.

use crate::domain::PlanWindow;
use crate::linalg::{axpy, dot, l2_norm, softmax_in_place, Mat};

use super::state::{Attention, LayerNorm, Mlp2, ModelState};
use super::ModelError;

/// Floor for every normalization denominator.
pub const NORM_EPS: f64 = 1e-6;

fn check_dim(what: &str, got: usize, expected: usize) -> Result<(), ModelError> {
    if got != expected {
        return Err(ModelError::ShapeMismatch {
            what: what.to_string(),
            expected,
            got,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// MLPs and normalization
// ---------------------------------------------------------------------------

/// Cache for a two-layer MLP applied to a single vector.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub x: Vec<f64>,
    pub h_pre: Vec<f64>,
    pub h: Vec<f64>,
}

pub(super) fn mlp2_forward(m: &Mlp2, x: &[f64]) -> (Vec<f64>, MlpCache) {
    let h_pre = m.l1.forward_vec(x);
    let h: Vec<f64> = h_pre.iter().map(|&v| v.max(0.0)).collect();
    let y = m.l2.forward_vec(&h);
    (
        y,
        MlpCache {
            x: x.to_vec(),
            h_pre,
            h,
        },
    )
}

/// Cache for a two-layer MLP applied row-wise to a matrix.
#[derive(Debug, Clone)]
pub struct MlpMatCache {
    pub x: Mat,
    pub h_pre: Mat,
    pub h: Mat,
}

pub(super) fn mlp2_forward_mat(m: &Mlp2, x: &Mat) -> (Mat, MlpMatCache) {
    let h_pre = m.l1.forward_mat(x);
    let mut h = h_pre.clone();
    for v in h.data_mut() {
        *v = v.max(0.0);
    }
    let y = m.l2.forward_mat(&h);
    (
        y,
        MlpMatCache {
            x: x.clone(),
            h_pre,
            h,
        },
    )
}

/// Cache for L2 normalization `y = x / max(|x|, eps)`.
#[derive(Debug, Clone)]
pub struct L2Cache {
    pub y: Vec<f64>,
    pub scale: f64,
    pub clipped: bool,
}

pub(super) fn l2_normalize(x: &[f64]) -> (Vec<f64>, L2Cache) {
    let norm = l2_norm(x);
    let (denom, clipped) = if norm >= NORM_EPS {
        (norm, false)
    } else {
        (NORM_EPS, true)
    };
    let scale = 1.0 / denom;
    let y: Vec<f64> = x.iter().map(|&v| v * scale).collect();
    (y.clone(), L2Cache { y, scale, clipped })
}

/// Row-wise LayerNorm cache.
#[derive(Debug, Clone)]
pub struct LnCache {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
}

pub(super) fn layer_norm_forward(ln: &LayerNorm, x: &Mat) -> (Mat, LnCache) {
    let d = x.cols();
    let mut out = Mat::zeros(x.rows(), d);
    let mut xhat = Mat::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_std.push(is);
        let xhat_row = xhat.row_mut(r);
        let out_row = out.row_mut(r);
        for c in 0..d {
            let xh = (row[c] - mean) * is;
            xhat_row[c] = xh;
            out_row[c] = ln.gain[c] * xh + ln.bias[c];
        }
    }
    (out, LnCache { xhat, inv_std })
}

// ---------------------------------------------------------------------------
// Embedders and context
// ---------------------------------------------------------------------------

/// Embed a raw observation vector into the model width.
pub fn embed_observation(state: &ModelState, obs: &[f64]) -> Result<Vec<f64>, ModelError> {
    Ok(embed_observation_cached(state, obs)?.0)
}

pub(super) fn embed_observation_cached(
    state: &ModelState,
    obs: &[f64],
) -> Result<(Vec<f64>, MlpCache), ModelError> {
    check_dim("observation", obs.len(), state.config.obs_dim)?;
    Ok(mlp2_forward(&state.params.obs_embedder, obs))
}

/// Cache for the caption embedder (MLP then unit normalization).
#[derive(Debug, Clone)]
pub struct CapCache {
    pub mlp: MlpCache,
    pub norm: L2Cache,
}

/// Embed a raw caption embedding; the output is L2-normalized.
pub fn embed_caption(state: &ModelState, caption: &[f64]) -> Result<Vec<f64>, ModelError> {
    Ok(embed_caption_cached(state, caption)?.0)
}

pub(crate) fn embed_caption_cached(
    state: &ModelState,
    caption: &[f64],
) -> Result<(Vec<f64>, CapCache), ModelError> {
    check_dim("caption embedding", caption.len(), state.config.obs_dim)?;
    let (y, mlp) = mlp2_forward(&state.params.cap_embedder, caption);
    let (unit, norm) = l2_normalize(&y);
    Ok((unit, CapCache { mlp, norm }))
}

/// Cache for the context head.
#[derive(Debug, Clone)]
pub struct ContextCache {
    pub x: Vec<f64>,
    pub trunk_pre: Vec<f64>,
    pub trunk_h: Vec<f64>,
    pub start_norm: L2Cache,
    pub goal_norm: L2Cache,
}

/// Compute the two context tokens (start-aligned, goal-aligned) from the raw
/// start/goal observations. Each token is unit-norm.
pub fn compute_context(
    state: &ModelState,
    v_start: &[f64],
    v_goal: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    compute_context_cached(state, v_start, v_goal).map(|(s, g, _)| (s, g))
}

pub(super) fn compute_context_cached(
    state: &ModelState,
    v_start: &[f64],
    v_goal: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, ContextCache), ModelError> {
    check_dim("context start observation", v_start.len(), state.config.obs_dim)?;
    check_dim("context goal observation", v_goal.len(), state.config.obs_dim)?;
    let mut x = Vec::with_capacity(2 * state.config.obs_dim);
    x.extend_from_slice(v_start);
    x.extend_from_slice(v_goal);
    let trunk_pre = state.params.context_trunk.forward_vec(&x);
    let trunk_h: Vec<f64> = trunk_pre.iter().map(|&v| v.max(0.0)).collect();
    let start_raw = state.params.context_start.forward_vec(&trunk_h);
    let goal_raw = state.params.context_goal.forward_vec(&trunk_h);
    let (start_tok, start_norm) = l2_normalize(&start_raw);
    let (goal_tok, goal_norm) = l2_normalize(&goal_raw);
    Ok((
        start_tok,
        goal_tok,
        ContextCache {
            x,
            trunk_pre,
            trunk_h,
            start_norm,
            goal_norm,
        },
    ))
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

/// Fixed sinusoidal positional code for (1-based) step `t_index + 1`.
pub fn positional_code(t_index: usize, dim: usize) -> Vec<f64> {
    let p = (t_index + 1) as f64;
    let mut code = vec![0.0; dim];
    let mut i = 0;
    while 2 * i < dim {
        let freq = (-((2 * i) as f64) / dim as f64 * 10_000f64.ln()).exp();
        code[2 * i] = (p * freq).sin();
        if 2 * i + 1 < dim {
            code[2 * i + 1] = (p * freq).cos();
        }
        i += 1;
    }
    code
}

/// Cache for query construction.
#[derive(Debug, Clone)]
pub struct QueryCache {
    pub z: Vec<f64>,
    pub horizon: usize,
}

/// Assemble the T query tokens: learned query + positional code + projected
/// noise, with the embedded start observation added to the first query and
/// the embedded goal observation to the last (both to the single query when
/// T = 1).
pub fn build_queries(
    state: &ModelState,
    horizon: usize,
    v_start_emb: &[f64],
    v_goal_emb: &[f64],
    z: &[f64],
) -> Result<(Mat, QueryCache), ModelError> {
    let d = state.config.hidden;
    if horizon == 0 || horizon > state.config.max_horizon {
        return Err(ModelError::HorizonOutOfRange {
            horizon,
            max: state.config.max_horizon,
        });
    }
    check_dim("noise vector", z.len(), state.config.noise_dim)?;
    check_dim("start embedding", v_start_emb.len(), d)?;
    check_dim("goal embedding", v_goal_emb.len(), d)?;
    let z_proj = state.params.noise_proj.forward_vec(z);
    let mut queries = Mat::zeros(horizon, d);
    for t in 0..horizon {
        let row = queries.row_mut(t);
        row.copy_from_slice(state.params.query_table.row(t));
        axpy(row, &positional_code(t, d), 1.0);
        axpy(row, &z_proj, 1.0);
    }
    axpy(queries.row_mut(0), v_start_emb, 1.0);
    axpy(queries.row_mut(horizon - 1), v_goal_emb, 1.0);
    Ok((
        queries,
        QueryCache {
            z: z.to_vec(),
            horizon,
        },
    ))
}

// ---------------------------------------------------------------------------
// Attention and the decoder stack
// ---------------------------------------------------------------------------

/// Per-layer K/V projections of the memory bank. The memory is shared across
/// every sample, so these are computed once per training step (or once per
/// sampler) instead of once per forward pass.
#[derive(Debug, Clone)]
pub struct SharedKv {
    pub k: Vec<Mat>,
    pub v: Vec<Mat>,
}

/// Project the memory bank through every layer's cross-attention K/V.
pub fn shared_kv(state: &ModelState) -> SharedKv {
    let mut k = Vec::with_capacity(state.config.layers);
    let mut v = Vec::with_capacity(state.config.layers);
    for block in &state.params.blocks {
        k.push(state.params.memory.matmul(&block.cross_attn.wk));
        v.push(state.params.memory.matmul(&block.cross_attn.wv));
    }
    SharedKv { k, v }
}

/// Cache of one multi-head attention application.
#[derive(Debug, Clone)]
pub struct AttnCache {
    /// Rows fed to the Q projection.
    pub q_in: Mat,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    /// Softmax attention weights, one (Lq x Lkv) matrix per head.
    pub probs: Vec<Mat>,
    /// Concatenated head outputs before the output projection.
    pub pre_out: Mat,
}

/// Multi-head attention core given already-projected K and V.
fn attention_core(q: &Mat, k: &Mat, v: &Mat, heads: usize) -> (Mat, Vec<Mat>) {
    let d = q.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let lq = q.rows();
    let lkv = k.rows();
    let mut pre_out = Mat::zeros(lq, d);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let lo = h * dh;
        let hi = lo + dh;
        let mut p = Mat::zeros(lq, lkv);
        for i in 0..lq {
            let qi = &q.row(i)[lo..hi];
            let row = p.row_mut(i);
            for (j, pj) in row.iter_mut().enumerate() {
                *pj = dot(qi, &k.row(j)[lo..hi]) * scale;
            }
            softmax_in_place(row);
        }
        for i in 0..lq {
            let out_slice = &mut pre_out.row_mut(i)[lo..hi];
            for j in 0..lkv {
                let w = p.get(i, j);
                if w != 0.0 {
                    axpy(out_slice, &v.row(j)[lo..hi], w);
                }
            }
        }
        probs.push(p);
    }
    (pre_out, probs)
}

fn attention_forward(a: &Attention, q_in: &Mat, k: Mat, v: Mat, heads: usize) -> (Mat, AttnCache) {
    let q = q_in.matmul(&a.wq);
    let (pre_out, probs) = attention_core(&q, &k, &v, heads);
    let out = a.wo.forward_mat(&pre_out);
    (
        out,
        AttnCache {
            q_in: q_in.clone(),
            q,
            k,
            v,
            probs,
            pre_out,
        },
    )
}

/// Cache of one decoder block.
#[derive(Debug, Clone)]
pub struct BlockCache {
    pub x_in: Mat,
    pub ln1: LnCache,
    pub self_attn: AttnCache,
    pub x_after_sa: Mat,
    pub ln2: LnCache,
    pub cross_attn: AttnCache,
    pub x_after_ca: Mat,
    pub ln3: LnCache,
    pub ffn: MlpMatCache,
}

/// Cache of a full decoder forward pass.
#[derive(Debug, Clone)]
pub struct DecoderCache {
    pub blocks: Vec<BlockCache>,
    pub final_ln: LnCache,
    pub y: Mat,
    /// Context tokens that were appended to the memory, if any.
    pub ctx: Option<Mat>,
}

/// Run the decoder stack over the queries and produce T x N action logits.
///
/// Each block runs self-attention over the plan queries, then cross-attention
/// with K = V = the shared memory bank — extended by the two context tokens
/// when the context path is enabled — then a feed-forward. Every block reads
/// the same memory and the same context tokens; the context contributes only
/// through cross-attention and never occupies an output position.
pub fn decoder_forward(
    state: &ModelState,
    queries: &Mat,
    shared: &SharedKv,
    context: Option<(&[f64], &[f64])>,
) -> Result<(Mat, DecoderCache), ModelError> {
    let d = state.config.hidden;
    check_dim("query width", queries.cols(), d)?;
    let context = if state.config.use_context { context } else { None };
    let ctx_rows = context.map(|(s, g)| {
        let mut m = Mat::zeros(2, d);
        m.row_mut(0).copy_from_slice(s);
        m.row_mut(1).copy_from_slice(g);
        m
    });

    let mut x = queries.clone();
    let mut blocks = Vec::with_capacity(state.params.blocks.len());
    for (layer, block) in state.params.blocks.iter().enumerate() {
        let x_in = x.clone();
        let (ln1_out, ln1) = layer_norm_forward(&block.ln1, &x);
        let k_self = ln1_out.matmul(&block.self_attn.wk);
        let v_self = ln1_out.matmul(&block.self_attn.wv);
        let (sa_out, sa_cache) =
            attention_forward(&block.self_attn, &ln1_out, k_self, v_self, state.config.heads);
        x.add_scaled(&sa_out, 1.0);
        let x_after_sa = x.clone();

        let (ln2_out, ln2) = layer_norm_forward(&block.ln2, &x);
        let (k_full, v_full) = match &ctx_rows {
            Some(rows) => (
                shared.k[layer].vstack(&rows.matmul(&block.cross_attn.wk)),
                shared.v[layer].vstack(&rows.matmul(&block.cross_attn.wv)),
            ),
            None => (shared.k[layer].clone(), shared.v[layer].clone()),
        };
        let q = ln2_out.matmul(&block.cross_attn.wq);
        let (pre_out, probs) = attention_core(&q, &k_full, &v_full, state.config.heads);
        let ca_out = block.cross_attn.wo.forward_mat(&pre_out);
        let ca_cache = AttnCache {
            q_in: ln2_out,
            q,
            k: k_full,
            v: v_full,
            probs,
            pre_out,
        };
        x.add_scaled(&ca_out, 1.0);
        let x_after_ca = x.clone();

        let (ln3_out, ln3) = layer_norm_forward(&block.ln3, &x);
        let (ffn_out, ffn_cache) = mlp2_forward_mat(&block.ffn, &ln3_out);
        x.add_scaled(&ffn_out, 1.0);

        blocks.push(BlockCache {
            x_in,
            ln1,
            self_attn: sa_cache,
            x_after_sa,
            ln2,
            cross_attn: ca_cache,
            x_after_ca,
            ln3,
            ffn: ffn_cache,
        });
    }
    let (y, final_ln) = layer_norm_forward(&state.params.final_norm, &x);
    let logits = state.params.output_head.forward_mat(&y);
    Ok((
        logits,
        DecoderCache {
            blocks,
            final_ln,
            y,
            ctx: ctx_rows,
        },
    ))
}

// ---------------------------------------------------------------------------
// Critic
// ---------------------------------------------------------------------------

/// Cache of a critic forward pass.
#[derive(Debug, Clone)]
pub struct CriticCache {
    pub x: Vec<f64>,
    pub h0_pre: Vec<f64>,
    pub h0: Vec<f64>,
    pub h1_pre: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2_pre: Vec<f64>,
    pub h2: Vec<f64>,
    pub score: f64,
}

/// Score a T x N sequence of per-step action probability rows in (0, 1).
///
/// Rows must lie in the probability simplex (tolerance 1e-6); one-hot ground
/// truth rows qualify. The flattened sequence is zero-padded to the maximum
/// horizon before the input projection.
pub fn critic_forward(state: &ModelState, rows: &Mat) -> Result<f64, ModelError> {
    Ok(critic_forward_cached(state, rows)?.0)
}

pub(crate) fn critic_forward_cached(
    state: &ModelState,
    rows: &Mat,
) -> Result<(f64, CriticCache), ModelError> {
    let config = &state.config;
    check_dim("critic input columns", rows.cols(), config.num_actions)?;
    if rows.rows() == 0 || rows.rows() > config.max_horizon {
        return Err(ModelError::HorizonOutOfRange {
            horizon: rows.rows(),
            max: config.max_horizon,
        });
    }
    const SIMPLEX_TOL: f64 = 1e-6;
    for r in 0..rows.rows() {
        let row = rows.row(r);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(ModelError::NotInSimplex {
                row: r,
                detail: format!("row sums to {sum}"),
            });
        }
        if let Some(v) = row
            .iter()
            .find(|v| !(**v >= -SIMPLEX_TOL && **v <= 1.0 + SIMPLEX_TOL))
        {
            return Err(ModelError::NotInSimplex {
                row: r,
                detail: format!("entry {v} outside [0, 1]"),
            });
        }
    }
    let mut x = vec![0.0; config.max_horizon * config.num_actions];
    x[..rows.rows() * config.num_actions].copy_from_slice(rows.data());
    let c = &state.params.critic;
    let h0_pre = c.proj.forward_vec(&x);
    let h0: Vec<f64> = h0_pre.iter().map(|&v| v.max(0.0)).collect();
    let h1_pre = c.l1.forward_vec(&h0);
    let h1: Vec<f64> = h1_pre.iter().map(|&v| v.max(0.0)).collect();
    let h2_pre = c.l2.forward_vec(&h1);
    let h2: Vec<f64> = h2_pre.iter().map(|&v| v.max(0.0)).collect();
    let score = c.out.forward_vec(&h2)[0];
    let value = 1.0 / (1.0 + (-score).exp());
    Ok((
        value,
        CriticCache {
            x,
            h0_pre,
            h0,
            h1_pre,
            h1,
            h2_pre,
            h2,
            score,
        },
    ))
}

// ---------------------------------------------------------------------------
// Whole-sample forward (training) and the inference sampler
// ---------------------------------------------------------------------------

/// Every activation needed to backpropagate one window's losses.
pub struct ForwardCaches {
    pub start_emb: MlpCache,
    pub goal_emb: MlpCache,
    pub context: Option<ContextCache>,
    pub context_tokens: Option<(Vec<f64>, Vec<f64>)>,
    pub query: QueryCache,
    pub queries: Mat,
    pub decoder: DecoderCache,
    pub logits: Mat,
}

/// Full generator forward pass for one window and one noise draw.
pub fn generator_forward(
    state: &ModelState,
    window: &PlanWindow,
    z: &[f64],
    shared: &SharedKv,
) -> Result<ForwardCaches, ModelError> {
    let (start_vec, start_emb) = embed_observation_cached(state, &window.start_obs)?;
    let (goal_vec, goal_emb) = embed_observation_cached(state, &window.goal_obs)?;
    let (context_tokens, context) = if state.config.use_context {
        let (s, g, cache) = compute_context_cached(state, &window.start_obs, &window.goal_obs)?;
        (Some((s, g)), Some(cache))
    } else {
        (None, None)
    };
    let (queries, query) = build_queries(state, window.horizon, &start_vec, &goal_vec, z)?;
    let ctx_ref = context_tokens
        .as_ref()
        .map(|(s, g)| (s.as_slice(), g.as_slice()));
    let (logits, decoder) = decoder_forward(state, &queries, shared, ctx_ref)?;
    Ok(ForwardCaches {
        start_emb,
        goal_emb,
        context,
        context_tokens,
        query,
        queries,
        decoder,
        logits,
    })
}

/// Precomputed per-window machinery for drawing many plan samples cheaply:
/// embeddings, context, memory K/V, and the noise-free query base are shared
/// across all K draws; only the noise projection and the decoder stack run
/// per draw.
pub struct PlanSampler<'a> {
    state: &'a ModelState,
    horizon: usize,
    base_queries: Mat,
    k_full: Vec<Mat>,
    v_full: Vec<Mat>,
}

impl ModelState {
    pub fn plan_sampler(&self, window: &PlanWindow) -> Result<PlanSampler<'_>, ModelError> {
        let start_emb = embed_observation(self, &window.start_obs)?;
        let goal_emb = embed_observation(self, &window.goal_obs)?;
        let zero_z = vec![0.0; self.config.noise_dim];
        let (mut base_queries, _) =
            build_queries(self, window.horizon, &start_emb, &goal_emb, &zero_z)?;
        // remove the zero-noise projector bias; logits_for adds the real one
        let zero_proj = self.params.noise_proj.forward_vec(&zero_z);
        for t in 0..base_queries.rows() {
            axpy(base_queries.row_mut(t), &zero_proj, -1.0);
        }
        let shared = shared_kv(self);
        let context = if self.config.use_context {
            Some(compute_context(self, &window.start_obs, &window.goal_obs)?)
        } else {
            None
        };
        let mut k_full = Vec::with_capacity(self.config.layers);
        let mut v_full = Vec::with_capacity(self.config.layers);
        for (layer, block) in self.params.blocks.iter().enumerate() {
            match &context {
                Some((s, g)) => {
                    let mut rows = Mat::zeros(2, self.config.hidden);
                    rows.row_mut(0).copy_from_slice(s);
                    rows.row_mut(1).copy_from_slice(g);
                    k_full.push(shared.k[layer].vstack(&rows.matmul(&block.cross_attn.wk)));
                    v_full.push(shared.v[layer].vstack(&rows.matmul(&block.cross_attn.wv)));
                }
                None => {
                    k_full.push(shared.k[layer].clone());
                    v_full.push(shared.v[layer].clone());
                }
            }
        }
        Ok(PlanSampler {
            state: self,
            horizon: window.horizon,
            base_queries,
            k_full,
            v_full,
        })
    }
}

impl PlanSampler<'_> {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Action logits for one noise draw.
    pub fn logits_for(&self, z: &[f64]) -> Result<Mat, ModelError> {
        check_dim("noise vector", z.len(), self.state.config.noise_dim)?;
        let params = &self.state.params;
        let heads = self.state.config.heads;
        let z_proj = params.noise_proj.forward_vec(z);
        let mut x = self.base_queries.clone();
        for t in 0..x.rows() {
            axpy(x.row_mut(t), &z_proj, 1.0);
        }
        for (layer, block) in params.blocks.iter().enumerate() {
            let (ln1_out, _) = layer_norm_forward(&block.ln1, &x);
            let q = ln1_out.matmul(&block.self_attn.wq);
            let k = ln1_out.matmul(&block.self_attn.wk);
            let v = ln1_out.matmul(&block.self_attn.wv);
            let (pre, _) = attention_core(&q, &k, &v, heads);
            x.add_scaled(&block.self_attn.wo.forward_mat(&pre), 1.0);

            let (ln2_out, _) = layer_norm_forward(&block.ln2, &x);
            let q = ln2_out.matmul(&block.cross_attn.wq);
            let (pre, _) = attention_core(&q, &self.k_full[layer], &self.v_full[layer], heads);
            x.add_scaled(&block.cross_attn.wo.forward_mat(&pre), 1.0);

            let (ln3_out, _) = layer_norm_forward(&block.ln3, &x);
            let (ffn_out, _) = mlp2_forward_mat(&block.ffn, &ln3_out);
            x.add_scaled(&ffn_out, 1.0);
        }
        let (y, _) = layer_norm_forward(&params.final_norm, &x);
        Ok(params.output_head.forward_mat(&y))
    }

    /// One plan: per-step argmax over the logits, ties toward lower indices.
    pub fn sample(&self, z: &[f64]) -> Result<Vec<usize>, ModelError> {
        let logits = self.logits_for(z)?;
        Ok((0..logits.rows())
            .map(|t| argmax_lowest(logits.row(t)))
            .collect())
    }
}

/// Index of the maximum entry; the lowest index wins ties.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_parameters, GeneratorConfig, Linear};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn tiny_state(seed: u64) -> ModelState {
        init_parameters(&GeneratorConfig::tiny(), seed).unwrap()
    }

    fn tiny_window(state: &ModelState, rng: &mut ChaCha8Rng, horizon: usize) -> PlanWindow {
        let dim = state.config.obs_dim;
        PlanWindow {
            start_obs: rand_vec(rng, dim),
            goal_obs: rand_vec(rng, dim),
            start_caption_emb: rand_vec(rng, dim),
            goal_caption_emb: rand_vec(rng, dim),
            actions: (0..horizon).map(|t| t % state.config.num_actions).collect(),
            horizon,
            source_video_id: "v".into(),
            task_id: None,
        }
    }

    #[test]
    fn embed_observation_shape_and_determinism() {
        let state = tiny_state(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obs = rand_vec(&mut rng, state.config.obs_dim);
        let a = embed_observation(&state, &obs).unwrap();
        let b = embed_observation(&state, &obs).unwrap();
        assert_eq!(a.len(), state.config.hidden);
        assert_eq!(a, b);
        assert!(embed_observation(&state, &obs[1..]).is_err());
    }

    #[test]
    fn zero_weight_embedder_returns_final_bias() {
        let mut state = tiny_state(1);
        let d = state.config.hidden;
        state.params.obs_embedder.l1.w = Mat::zeros(state.config.obs_dim, state.config.embed_hidden);
        state.params.obs_embedder.l1.b = vec![0.0; state.config.embed_hidden];
        state.params.obs_embedder.l2.w = Mat::zeros(state.config.embed_hidden, d);
        state.params.obs_embedder.l2.b = (0..d).map(|i| i as f64 * 0.5 - 1.0).collect();
        let obs = vec![0.3; state.config.obs_dim];
        let out = embed_observation(&state, &obs).unwrap();
        assert_eq!(out, state.params.obs_embedder.l2.b);
    }

    #[test]
    fn caption_embedding_is_unit_norm() {
        let state = tiny_state(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cap = rand_vec(&mut rng, state.config.obs_dim);
        let out = embed_caption(&state, &cap).unwrap();
        assert_eq!(out.len(), state.config.hidden);
        assert!((l2_norm(&out) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_caption_embedder_returns_normalized_bias() {
        let mut state = tiny_state(1);
        let d = state.config.hidden;
        state.params.cap_embedder.l1.w = Mat::zeros(state.config.obs_dim, state.config.embed_hidden);
        state.params.cap_embedder.l2.w = Mat::zeros(state.config.embed_hidden, d);
        let bias: Vec<f64> = (0..d).map(|i| (i + 1) as f64).collect();
        state.params.cap_embedder.l2.b = bias.clone();
        let out = embed_caption(&state, &vec![1.0; state.config.obs_dim]).unwrap();
        let norm = l2_norm(&bias);
        for (o, b) in out.iter().zip(&bias) {
            assert!((o - b / norm).abs() < 1e-12);
        }
    }

    #[test]
    fn context_tokens_are_unit_norm() {
        let state = tiny_state(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = rand_vec(&mut rng, state.config.obs_dim);
        let g = rand_vec(&mut rng, state.config.obs_dim);
        let (tok_s, tok_g) = compute_context(&state, &s, &g).unwrap();
        assert_eq!(tok_s.len(), state.config.hidden);
        assert!((l2_norm(&tok_s) - 1.0).abs() < 1e-9);
        assert!((l2_norm(&tok_g) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_context_returns_normalized_biases() {
        let mut state = tiny_state(1);
        let d = state.config.hidden;
        state.params.context_trunk.w = Mat::zeros(2 * state.config.obs_dim, state.config.embed_hidden);
        state.params.context_trunk.b = vec![0.0; state.config.embed_hidden];
        state.params.context_start.w = Mat::zeros(state.config.embed_hidden, d);
        state.params.context_goal.w = Mat::zeros(state.config.embed_hidden, d);
        let bias: Vec<f64> = (0..d).map(|i| (i as f64) - 2.0).collect();
        state.params.context_start.b = bias.clone();
        state.params.context_goal.b = bias.clone();
        let (tok_s, tok_g) = compute_context(
            &state,
            &vec![0.5; state.config.obs_dim],
            &vec![-0.5; state.config.obs_dim],
        )
        .unwrap();
        let norm = l2_norm(&bias);
        for i in 0..d {
            assert!((tok_s[i] - bias[i] / norm).abs() < 1e-12);
            assert!((tok_g[i] - bias[i] / norm).abs() < 1e-12);
        }
    }

    #[test]
    fn build_queries_shapes_and_boundaries() {
        let state = tiny_state(7);
        let d = state.config.hidden;
        let start = vec![0.25; d];
        let goal = vec![-0.5; d];
        let z = vec![0.0; state.config.noise_dim];
        let (q, _) = build_queries(&state, 2, &start, &goal, &z).unwrap();
        assert_eq!((q.rows(), q.cols()), (2, d));
        // T = 1: the single token receives both augmentations
        let (q1, _) = build_queries(&state, 1, &start, &goal, &z).unwrap();
        let expected_extra: Vec<f64> = start.iter().zip(&goal).map(|(a, b)| a + b).collect();
        let base: Vec<f64> = q1
            .row(0)
            .iter()
            .zip(expected_extra.iter())
            .map(|(v, e)| v - e)
            .collect();
        let code = positional_code(0, d);
        for (i, b) in base.iter().enumerate() {
            // remaining parts: table row + positional code (z projection is bias-only = 0)
            let want = state.params.query_table.get(0, i) + code[i];
            assert!((b - want).abs() < 1e-12);
        }
        assert!(build_queries(&state, 3, &start, &goal, &z).is_err());
    }

    #[test]
    fn queries_with_zero_noise_path_ignore_z_value_direction() {
        let mut state = tiny_state(8);
        state.params.noise_proj.w = Mat::zeros(state.config.noise_dim, state.config.hidden);
        state.params.noise_proj.b = vec![0.0; state.config.hidden];
        let d = state.config.hidden;
        let start = vec![0.1; d];
        let goal = vec![0.2; d];
        let za = vec![1.5; state.config.noise_dim];
        let zb = vec![-3.0; state.config.noise_dim];
        let (qa, _) = build_queries(&state, 2, &start, &goal, &za).unwrap();
        let (qb, _) = build_queries(&state, 2, &start, &goal, &zb).unwrap();
        assert_eq!(qa, qb);
    }

    #[test]
    fn decoder_logits_shape_and_determinism() {
        let state = tiny_state(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let window = tiny_window(&state, &mut rng, 2);
        let shared = shared_kv(&state);
        let z = rand_vec(&mut rng, state.config.noise_dim);
        let f1 = generator_forward(&state, &window, &z, &shared).unwrap();
        let f2 = generator_forward(&state, &window, &z, &shared).unwrap();
        assert_eq!((f1.logits.rows(), f1.logits.cols()), (2, state.config.num_actions));
        assert_eq!(f1.logits, f2.logits);
        assert!(f1.logits.is_finite());
    }

    #[test]
    fn zero_weight_decoder_emits_output_bias() {
        let mut state = tiny_state(11);
        let config = state.config.clone();
        // zero every block's weights; keep norms at gain 1
        let zero_linear = |l: &mut Linear| {
            *l = Linear::zeros(l.input_dim(), l.output_dim());
        };
        let d = config.hidden;
        for block in &mut state.params.blocks {
            for attn in [&mut block.self_attn, &mut block.cross_attn] {
                attn.wq = Mat::zeros(d, d);
                attn.wk = Mat::zeros(d, d);
                attn.wv = Mat::zeros(d, d);
                zero_linear(&mut attn.wo);
            }
            zero_linear(&mut block.ffn.l1);
            zero_linear(&mut block.ffn.l2);
        }
        state.params.output_head.w = Mat::zeros(config.hidden, config.num_actions);
        let bias: Vec<f64> = (0..config.num_actions).map(|i| i as f64 * 0.25).collect();
        state.params.output_head.b = bias.clone();
        let shared = shared_kv(&state);
        let queries = Mat::from_fn(2, config.hidden, |r, c| (r + c) as f64 * 0.1);
        let (logits, _) = decoder_forward(&state, &queries, &shared, None).unwrap();
        for t in 0..2 {
            for (a, b) in logits.row(t).iter().zip(&bias) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn memory_changes_decoder_output() {
        let state = tiny_state(12);
        let mut altered = state.clone();
        altered.params.memory.set(0, 0, altered.params.memory.get(0, 0) + 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let window = tiny_window(&state, &mut rng, 2);
        let z = rand_vec(&mut rng, state.config.noise_dim);
        let a = generator_forward(&state, &window, &z, &shared_kv(&state)).unwrap();
        let b = generator_forward(&altered, &window, &z, &shared_kv(&altered)).unwrap();
        assert_ne!(a.logits, b.logits);
    }

    #[test]
    fn masked_context_equals_no_context_baseline() {
        let state = tiny_state(14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let window = tiny_window(&state, &mut rng, 2);
        let z = rand_vec(&mut rng, state.config.noise_dim);
        let shared = shared_kv(&state);
        // context enabled but tokens dropped entirely = ablated baseline
        let (start_emb, goal_emb) = (
            embed_observation(&state, &window.start_obs).unwrap(),
            embed_observation(&state, &window.goal_obs).unwrap(),
        );
        let (queries, _) = build_queries(&state, 2, &start_emb, &goal_emb, &z).unwrap();
        let (with_none, _) = decoder_forward(&state, &queries, &shared, None).unwrap();
        let mut ablated = state.clone();
        ablated.config.use_context = false;
        let (via_flag, _) = decoder_forward(&ablated, &queries, &shared_kv(&ablated), None).unwrap();
        assert_eq!(with_none, via_flag);
        // and context genuinely changes the output for generic weights
        let (tok_s, tok_g) = compute_context(&state, &window.start_obs, &window.goal_obs).unwrap();
        let (with_ctx, _) =
            decoder_forward(&state, &queries, &shared, Some((&tok_s, &tok_g))).unwrap();
        assert_ne!(with_ctx, with_none);
    }

    #[test]
    fn critic_range_and_zero_weights() {
        let state = tiny_state(16);
        let n = state.config.num_actions;
        let rows = Mat::from_fn(2, n, |_, c| if c == 0 { 1.0 } else { 0.0 });
        let v = critic_forward(&state, &rows).unwrap();
        assert!(v > 0.0 && v < 1.0);

        let mut zeroed = state.clone();
        zeroed.params.critic.proj.w = Mat::zeros(zeroed.params.critic.proj.w.rows(), zeroed.params.critic.proj.w.cols());
        zeroed.params.critic.proj.b = vec![0.0; zeroed.params.critic.proj.b.len()];
        zeroed.params.critic.l1.w = Mat::zeros(zeroed.params.critic.l1.w.rows(), zeroed.params.critic.l1.w.cols());
        zeroed.params.critic.l1.b = vec![0.0; zeroed.params.critic.l1.b.len()];
        zeroed.params.critic.l2.w = Mat::zeros(zeroed.params.critic.l2.w.rows(), zeroed.params.critic.l2.w.cols());
        zeroed.params.critic.l2.b = vec![0.0; zeroed.params.critic.l2.b.len()];
        zeroed.params.critic.out.w = Mat::zeros(zeroed.params.critic.out.w.rows(), 1);
        zeroed.params.critic.out.b = vec![0.0];
        assert_eq!(critic_forward(&zeroed, &rows).unwrap(), 0.5);
    }

    #[test]
    fn critic_rejects_non_simplex_rows() {
        let state = tiny_state(17);
        let n = state.config.num_actions;
        let rows = Mat::from_fn(1, n, |_, _| 0.5);
        assert!(matches!(
            critic_forward(&state, &rows),
            Err(ModelError::NotInSimplex { .. })
        ));
    }

    #[test]
    fn sampler_matches_full_forward() {
        let state = tiny_state(18);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let window = tiny_window(&state, &mut rng, 2);
        let shared = shared_kv(&state);
        let sampler = state.plan_sampler(&window).unwrap();
        for trial in 0..5 {
            let z = rand_vec(&mut rng, state.config.noise_dim);
            let full = generator_forward(&state, &window, &z, &shared).unwrap();
            let fast = sampler.logits_for(&z).unwrap();
            for t in 0..2 {
                for c in 0..state.config.num_actions {
                    assert!(
                        (full.logits.get(t, c) - fast.get(t, c)).abs() < 1e-12,
                        "trial {trial} mismatch at ({t},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax_lowest(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax_lowest(&[0.1, 0.5, 0.5]), 1);
    }
}
