//! Analytic gradients, computed layer by layer against the caches from the
//! forward passes. Every path here is validated against central finite
//! differences by the training module's gradient check.

use crate::linalg::{axpy, dot, Mat};

use super::forward::{
    AttnCache, CapCache, ContextCache, CriticCache, ForwardCaches, L2Cache, LnCache, MlpCache,
    MlpMatCache,
};
use super::state::{Attention, LayerNorm, Linear, Mlp2, ModelState, Params};

fn linear_backward_mat(l: &Linear, x: &Mat, dy: &Mat, g: &mut Linear, dx: Option<&mut Mat>) {
    g.w.add_scaled(&x.matmul_at(dy), 1.0);
    for r in 0..dy.rows() {
        axpy(&mut g.b, dy.row(r), 1.0);
    }
    if let Some(dx) = dx {
        dx.add_scaled(&dy.matmul_bt(&l.w), 1.0);
    }
}

fn linear_backward_vec(
    l: &Linear,
    x: &[f64],
    dy: &[f64],
    g: &mut Linear,
    mut dx: Option<&mut [f64]>,
) {
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            axpy(g.w.row_mut(i), dy, xi);
        }
    }
    axpy(&mut g.b, dy, 1.0);
    if let Some(dx) = dx.as_deref_mut() {
        for (i, d) in dx.iter_mut().enumerate() {
            *d += dot(l.w.row(i), dy);
        }
    }
}

/// Bias-free projection backward: `y = x W`.
fn proj_backward(w: &Mat, x: &Mat, dy: &Mat, gw: &mut Mat, dx: Option<&mut Mat>) {
    gw.add_scaled(&x.matmul_at(dy), 1.0);
    if let Some(dx) = dx {
        dx.add_scaled(&dy.matmul_bt(w), 1.0);
    }
}

fn mlp2_backward_vec(m: &Mlp2, cache: &MlpCache, dy: &[f64], g: &mut Mlp2, dx: Option<&mut [f64]>) {
    let mut dh = vec![0.0; cache.h.len()];
    linear_backward_vec(&m.l2, &cache.h, dy, &mut g.l2, Some(&mut dh));
    for (d, &pre) in dh.iter_mut().zip(&cache.h_pre) {
        if pre <= 0.0 {
            *d = 0.0;
        }
    }
    linear_backward_vec(&m.l1, &cache.x, &dh, &mut g.l1, dx);
}

fn mlp2_backward_mat(m: &Mlp2, cache: &MlpMatCache, dy: &Mat, g: &mut Mlp2, dx: Option<&mut Mat>) {
    let mut dh = Mat::zeros(cache.h.rows(), cache.h.cols());
    linear_backward_mat(&m.l2, &cache.h, dy, &mut g.l2, Some(&mut dh));
    for (d, &pre) in dh.data_mut().iter_mut().zip(cache.h_pre.data()) {
        if pre <= 0.0 {
            *d = 0.0;
        }
    }
    linear_backward_mat(&m.l1, &cache.x, &dh, &mut g.l1, dx);
}

fn l2_backward(cache: &L2Cache, dy: &[f64]) -> Vec<f64> {
    if cache.clipped {
        return dy.iter().map(|&g| g * cache.scale).collect();
    }
    let gy = dot(dy, &cache.y);
    dy.iter()
        .zip(&cache.y)
        .map(|(&g, &y)| (g - y * gy) * cache.scale)
        .collect()
}

fn layer_norm_backward(ln: &LayerNorm, cache: &LnCache, dy: &Mat, g: &mut LayerNorm, dx: &mut Mat) {
    let cols = dy.cols();
    let inv_n = 1.0 / cols as f64;
    let mut dxhat = vec![0.0; cols];
    for r in 0..dy.rows() {
        let dy_row = dy.row(r);
        let xhat = cache.xhat.row(r);
        let inv_std = cache.inv_std[r];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..cols {
            g.gain[c] += dy_row[c] * xhat[c];
            g.bias[c] += dy_row[c];
            dxhat[c] = dy_row[c] * ln.gain[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xhat[c];
        }
        mean_dxhat *= inv_n;
        mean_dxhat_xhat *= inv_n;
        let dx_row = dx.row_mut(r);
        for c in 0..cols {
            dx_row[c] += inv_std * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
        }
    }
}

/// Core attention backward: gradients of the pre-projection output w.r.t.
/// projected Q, K, V.
#[allow(clippy::too_many_arguments)]
fn attention_core_backward(
    d_pre_out: &Mat,
    q: &Mat,
    k: &Mat,
    v: &Mat,
    probs: &[Mat],
    heads: usize,
    dq: &mut Mat,
    dk: &mut Mat,
    dv: &mut Mat,
) {
    let d = q.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let lq = q.rows();
    let lkv = k.rows();
    let mut dp = vec![0.0; lkv];
    for (h, p) in probs.iter().enumerate() {
        let lo = h * dh;
        let hi = lo + dh;
        for i in 0..lq {
            let dout_i = &d_pre_out.row(i)[lo..hi];
            for (j, dpj) in dp.iter_mut().enumerate() {
                *dpj = dot(dout_i, &v.row(j)[lo..hi]);
                let w = p.get(i, j);
                if w != 0.0 {
                    axpy(&mut dv.row_mut(j)[lo..hi], dout_i, w);
                }
            }
            let p_row = p.row(i);
            let weighted: f64 = dp.iter().zip(p_row).map(|(a, b)| a * b).sum();
            for j in 0..lkv {
                let ds = p_row[j] * (dp[j] - weighted) * scale;
                if ds != 0.0 {
                    axpy(&mut dq.row_mut(i)[lo..hi], &k.row(j)[lo..hi], ds);
                    axpy(&mut dk.row_mut(j)[lo..hi], &q.row(i)[lo..hi], ds);
                }
            }
        }
    }
}

fn self_attention_backward(
    a: &Attention,
    cache: &AttnCache,
    d_out: &Mat,
    heads: usize,
    g: &mut Attention,
    d_q_in: &mut Mat,
) {
    let (rows, cols) = (cache.pre_out.rows(), cache.pre_out.cols());
    let mut d_pre = Mat::zeros(rows, cols);
    linear_backward_mat(&a.wo, &cache.pre_out, d_out, &mut g.wo, Some(&mut d_pre));
    let mut dq = Mat::zeros(cache.q.rows(), cols);
    let mut dk = Mat::zeros(cache.k.rows(), cols);
    let mut dv = Mat::zeros(cache.v.rows(), cols);
    attention_core_backward(
        &d_pre,
        &cache.q,
        &cache.k,
        &cache.v,
        &cache.probs,
        heads,
        &mut dq,
        &mut dk,
        &mut dv,
    );
    proj_backward(&a.wq, &cache.q_in, &dq, &mut g.wq, Some(d_q_in));
    proj_backward(&a.wk, &cache.q_in, &dk, &mut g.wk, Some(d_q_in));
    proj_backward(&a.wv, &cache.q_in, &dv, &mut g.wv, Some(d_q_in));
}

/// Gradients w.r.t. the per-layer projected memory K/V, accumulated over a
/// batch and folded into the weight/memory gradients once per step.
#[derive(Debug, Clone)]
pub struct SharedKvGrads {
    pub dk: Vec<Mat>,
    pub dv: Vec<Mat>,
}

impl SharedKvGrads {
    pub fn zeros(layers: usize, memory_entries: usize, hidden: usize) -> Self {
        SharedKvGrads {
            dk: (0..layers).map(|_| Mat::zeros(memory_entries, hidden)).collect(),
            dv: (0..layers).map(|_| Mat::zeros(memory_entries, hidden)).collect(),
        }
    }
}

/// Fold the accumulated shared-K/V gradients into the cross-attention weight
/// and memory-bank gradients. Call once per step after every sample's
/// backward pass.
pub fn finish_shared_kv(state: &ModelState, skg: &SharedKvGrads, g: &mut Params) {
    for (layer, block) in state.params.blocks.iter().enumerate() {
        let gb = &mut g.blocks[layer];
        gb.cross_attn
            .wk
            .add_scaled(&state.params.memory.matmul_at(&skg.dk[layer]), 1.0);
        gb.cross_attn
            .wv
            .add_scaled(&state.params.memory.matmul_at(&skg.dv[layer]), 1.0);
        g.memory
            .add_scaled(&skg.dk[layer].matmul_bt(&block.cross_attn.wk), 1.0);
        g.memory
            .add_scaled(&skg.dv[layer].matmul_bt(&block.cross_attn.wv), 1.0);
    }
}

#[allow(clippy::too_many_arguments)]
fn cross_attention_backward(
    a: &Attention,
    cache: &AttnCache,
    d_out: &Mat,
    heads: usize,
    memory_entries: usize,
    ctx: Option<&Mat>,
    g: &mut Attention,
    d_q_in: &mut Mat,
    d_shared_k: &mut Mat,
    d_shared_v: &mut Mat,
    mut d_ctx: Option<&mut Mat>,
) {
    let cols = cache.pre_out.cols();
    let mut d_pre = Mat::zeros(cache.pre_out.rows(), cols);
    linear_backward_mat(&a.wo, &cache.pre_out, d_out, &mut g.wo, Some(&mut d_pre));
    let mut dq = Mat::zeros(cache.q.rows(), cols);
    let mut dk = Mat::zeros(cache.k.rows(), cols);
    let mut dv = Mat::zeros(cache.v.rows(), cols);
    attention_core_backward(
        &d_pre,
        &cache.q,
        &cache.k,
        &cache.v,
        &cache.probs,
        heads,
        &mut dq,
        &mut dk,
        &mut dv,
    );
    proj_backward(&a.wq, &cache.q_in, &dq, &mut g.wq, Some(d_q_in));
    // Memory rows: defer the weight/memory gradient to finish_shared_kv.
    for r in 0..memory_entries {
        axpy(d_shared_k.row_mut(r), dk.row(r), 1.0);
        axpy(d_shared_v.row_mut(r), dv.row(r), 1.0);
    }
    // Context rows: direct weight gradient and token gradient.
    if let Some(ctx_rows) = ctx {
        for (c, r) in (memory_entries..dk.rows()).enumerate() {
            for (i, &xi) in ctx_rows.row(c).iter().enumerate() {
                if xi != 0.0 {
                    axpy(g.wk.row_mut(i), dk.row(r), xi);
                    axpy(g.wv.row_mut(i), dv.row(r), xi);
                }
            }
            if let Some(d_ctx) = d_ctx.as_deref_mut() {
                let d_ctx_row = d_ctx.row_mut(c);
                for (i, d) in d_ctx_row.iter_mut().enumerate() {
                    *d += dot(a.wk.row(i), dk.row(r)) + dot(a.wv.row(i), dv.row(r));
                }
            }
        }
    }
}

/// Backpropagate one sample's combined logit gradient (and any extra context
/// token gradient from the contrastive loss) through the decoder stack, the
/// queries, the observation embedder, and the context head.
pub fn backward_generator_sample(
    state: &ModelState,
    fwd: &ForwardCaches,
    d_logits: &Mat,
    d_tokens_extra: Option<(&[f64], &[f64])>,
    g: &mut Params,
    skg: &mut SharedKvGrads,
) {
    let config = &state.config;
    let d = config.hidden;
    let horizon = fwd.logits.rows();
    let dec = &fwd.decoder;

    // output head and final norm
    let mut dy = Mat::zeros(horizon, d);
    linear_backward_mat(
        &state.params.output_head,
        &dec.y,
        d_logits,
        &mut g.output_head,
        Some(&mut dy),
    );
    let mut dx = Mat::zeros(horizon, d);
    layer_norm_backward(&state.params.final_norm, &dec.final_ln, &dy, &mut g.final_norm, &mut dx);

    let mut d_ctx_rows = dec.ctx.as_ref().map(|_| Mat::zeros(2, d));
    for (layer, block) in state.params.blocks.iter().enumerate().rev() {
        let cache = &dec.blocks[layer];
        let gb = &mut g.blocks[layer];

        // feed-forward sub-block
        let mut d_ln3_out = Mat::zeros(horizon, d);
        mlp2_backward_mat(&block.ffn, &cache.ffn, &dx, &mut gb.ffn, Some(&mut d_ln3_out));
        layer_norm_backward(&block.ln3, &cache.ln3, &d_ln3_out, &mut gb.ln3, &mut dx);

        // cross-attention sub-block
        let mut d_ln2_out = Mat::zeros(horizon, d);
        cross_attention_backward(
            &block.cross_attn,
            &cache.cross_attn,
            &dx,
            config.heads,
            config.memory_entries,
            dec.ctx.as_ref(),
            &mut gb.cross_attn,
            &mut d_ln2_out,
            &mut skg.dk[layer],
            &mut skg.dv[layer],
            d_ctx_rows.as_mut(),
        );
        layer_norm_backward(&block.ln2, &cache.ln2, &d_ln2_out, &mut gb.ln2, &mut dx);

        // self-attention sub-block
        let mut d_ln1_out = Mat::zeros(horizon, d);
        self_attention_backward(
            &block.self_attn,
            &cache.self_attn,
            &dx,
            config.heads,
            &mut gb.self_attn,
            &mut d_ln1_out,
        );
        layer_norm_backward(&block.ln1, &cache.ln1, &d_ln1_out, &mut gb.ln1, &mut dx);
    }

    // queries: table rows, noise projector, observation embeddings
    for t in 0..horizon {
        axpy(g.query_table.row_mut(t), dx.row(t), 1.0);
    }
    let mut dz_proj = vec![0.0; d];
    for t in 0..horizon {
        axpy(&mut dz_proj, dx.row(t), 1.0);
    }
    linear_backward_vec(
        &state.params.noise_proj,
        &fwd.query.z,
        &dz_proj,
        &mut g.noise_proj,
        None,
    );
    let d_start_emb = dx.row(0).to_vec();
    let d_goal_emb = dx.row(horizon - 1).to_vec();
    backward_observation_embedding(state, &fwd.start_emb, &d_start_emb, g);
    backward_observation_embedding(state, &fwd.goal_emb, &d_goal_emb, g);

    // context head: decoder contribution plus the contrastive loss term
    if let Some(ctx_cache) = &fwd.context {
        let mut d_tok_s = vec![0.0; d];
        let mut d_tok_g = vec![0.0; d];
        if let Some(rows) = &d_ctx_rows {
            axpy(&mut d_tok_s, rows.row(0), 1.0);
            axpy(&mut d_tok_g, rows.row(1), 1.0);
        }
        if let Some((extra_s, extra_g)) = d_tokens_extra {
            axpy(&mut d_tok_s, extra_s, 1.0);
            axpy(&mut d_tok_g, extra_g, 1.0);
        }
        backward_context(state, ctx_cache, &d_tok_s, &d_tok_g, g);
    }
}

/// Gradient of an observation embedding back into the embedder MLP.
pub fn backward_observation_embedding(
    state: &ModelState,
    cache: &MlpCache,
    d_emb: &[f64],
    g: &mut Params,
) {
    mlp2_backward_vec(
        &state.params.obs_embedder,
        cache,
        d_emb,
        &mut g.obs_embedder,
        None,
    );
}

/// Gradient of a unit-norm caption embedding back into the caption embedder.
pub fn backward_caption_embedding(
    state: &ModelState,
    cache: &CapCache,
    d_unit: &[f64],
    g: &mut Params,
) {
    let d_raw = l2_backward(&cache.norm, d_unit);
    mlp2_backward_vec(
        &state.params.cap_embedder,
        &cache.mlp,
        &d_raw,
        &mut g.cap_embedder,
        None,
    );
}

/// Gradient of the two context tokens back through the context head. The raw
/// observations receive no gradient (they are inputs).
pub fn backward_context(
    state: &ModelState,
    cache: &ContextCache,
    d_tok_s: &[f64],
    d_tok_g: &[f64],
    g: &mut Params,
) {
    let ds_raw = l2_backward(&cache.start_norm, d_tok_s);
    let dg_raw = l2_backward(&cache.goal_norm, d_tok_g);
    let mut d_trunk_h = vec![0.0; cache.trunk_h.len()];
    linear_backward_vec(
        &state.params.context_start,
        &cache.trunk_h,
        &ds_raw,
        &mut g.context_start,
        Some(&mut d_trunk_h),
    );
    linear_backward_vec(
        &state.params.context_goal,
        &cache.trunk_h,
        &dg_raw,
        &mut g.context_goal,
        Some(&mut d_trunk_h),
    );
    for (d, &pre) in d_trunk_h.iter_mut().zip(&cache.trunk_pre) {
        if pre <= 0.0 {
            *d = 0.0;
        }
    }
    linear_backward_vec(
        &state.params.context_trunk,
        &cache.x,
        &d_trunk_h,
        &mut g.context_trunk,
        None,
    );
}

/// Backward through the critic given d(loss)/d(critic value). Parameter
/// gradients accumulate into `g`; when `d_input_rows` is given, the gradient
/// w.r.t. the (unpadded) input rows accumulates there too.
pub fn critic_backward(
    state: &ModelState,
    cache: &CriticCache,
    d_value: f64,
    g: &mut Params,
    d_input_rows: Option<&mut Mat>,
) {
    let c = &state.params.critic;
    let gc = &mut g.critic;
    let value = 1.0 / (1.0 + (-cache.score).exp());
    let d_score = d_value * value * (1.0 - value);

    let mut dh2 = vec![0.0; cache.h2.len()];
    linear_backward_vec(&c.out, &cache.h2, &[d_score], &mut gc.out, Some(&mut dh2));
    for (d, &pre) in dh2.iter_mut().zip(&cache.h2_pre) {
        if pre <= 0.0 {
            *d = 0.0;
        }
    }
    let mut dh1 = vec![0.0; cache.h1.len()];
    linear_backward_vec(&c.l2, &cache.h1, &dh2, &mut gc.l2, Some(&mut dh1));
    for (d, &pre) in dh1.iter_mut().zip(&cache.h1_pre) {
        if pre <= 0.0 {
            *d = 0.0;
        }
    }
    let mut dh0 = vec![0.0; cache.h0.len()];
    linear_backward_vec(&c.l1, &cache.h0, &dh1, &mut gc.l1, Some(&mut dh0));
    for (d, &pre) in dh0.iter_mut().zip(&cache.h0_pre) {
        if pre <= 0.0 {
            *d = 0.0;
        }
    }
    if let Some(rows) = d_input_rows {
        let mut dx = vec![0.0; cache.x.len()];
        linear_backward_vec(&c.proj, &cache.x, &dh0, &mut gc.proj, Some(&mut dx));
        let n = rows.cols();
        for t in 0..rows.rows() {
            axpy(rows.row_mut(t), &dx[t * n..(t + 1) * n], 1.0);
        }
    } else {
        linear_backward_vec(&c.proj, &cache.x, &dh0, &mut gc.proj, None);
    }
}
