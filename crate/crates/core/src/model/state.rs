//! Parameter containers and initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Mat;
use crate::seeds::{self, tag};

use super::config::GeneratorConfig;
use super::ModelError;

/// Fully-connected layer, weights stored input-major: `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Mat::zeros(input, output),
            b: vec![0.0; output],
        }
    }

    fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (input as f64).sqrt();
        Linear {
            w: Mat::from_fn(input, output, |_, _| {
                let n: f64 = StandardNormal.sample(rng);
                n * scale
            }),
            b: vec![0.0; output],
        }
    }

    pub fn output_dim(&self) -> usize {
        self.b.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    /// Forward for a single row vector.
    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.w.rows());
        let mut y = self.b.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            crate::linalg::axpy(&mut y, self.w.row(i), xi);
        }
        y
    }

    /// Forward for a stack of row vectors.
    pub fn forward_mat(&self, x: &Mat) -> Mat {
        let mut y = x.matmul(&self.w);
        for r in 0..y.rows() {
            crate::linalg::axpy(y.row_mut(r), &self.b, 1.0);
        }
        y
    }
}

/// Two-layer MLP with a ReLU between the layers (none at the output).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp2 {
    fn init(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Mlp2 {
            l1: Linear::init(input, hidden, rng),
            l2: Linear::init(hidden, output, rng),
        }
    }

    fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp2 {
            l1: Linear::zeros(input, hidden),
            l2: Linear::zeros(hidden, output),
        }
    }
}

/// LayerNorm gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    fn ones(dim: usize) -> Self {
        LayerNorm {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    fn zeros(dim: usize) -> Self {
        LayerNorm {
            gain: vec![0.0; dim],
            bias: vec![0.0; dim],
        }
    }
}

/// Multi-head attention projections. Q/K/V are bias-free (a key bias shifts
/// every attention score in a row equally and cancels in the softmax); the
/// output projection keeps its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Linear,
}

impl Attention {
    fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let mut proj = || {
            Mat::from_fn(dim, dim, |_, _| {
                let n: f64 = StandardNormal.sample(rng);
                n * scale
            })
        };
        let wq = proj();
        let wk = proj();
        let wv = proj();
        Attention {
            wq,
            wk,
            wv,
            wo: Linear::init(dim, dim, rng),
        }
    }

    fn zeros(dim: usize) -> Self {
        Attention {
            wq: Mat::zeros(dim, dim),
            wk: Mat::zeros(dim, dim),
            wv: Mat::zeros(dim, dim),
            wo: Linear::zeros(dim, dim),
        }
    }
}

/// One decoder block: self-attention over the plan queries, cross-attention
/// into the shared memory (and context), and a feed-forward, each pre-normed
/// with a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBlock {
    pub ln1: LayerNorm,
    pub self_attn: Attention,
    pub ln2: LayerNorm,
    pub cross_attn: Attention,
    pub ln3: LayerNorm,
    pub ffn: Mlp2,
}

/// Critic parameters: flatten -> proj -> hidden1 -> hidden2 -> 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    pub proj: Linear,
    pub l1: Linear,
    pub l2: Linear,
    pub out: Linear,
}

/// Every learnable array of the model. The same structure doubles as the
/// gradient and momentum container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub obs_embedder: Mlp2,
    pub cap_embedder: Mlp2,
    pub context_trunk: Linear,
    pub context_start: Linear,
    pub context_goal: Linear,
    pub query_table: Mat,
    pub memory: Mat,
    pub noise_proj: Linear,
    pub blocks: Vec<DecoderBlock>,
    pub final_norm: LayerNorm,
    pub output_head: Linear,
    pub critic: CriticParams,
}

impl Params {
    fn build(config: &GeneratorConfig, mut init: Option<&mut ChaCha8Rng>) -> Self {
        let d = config.hidden;
        let linear = |input: usize, output: usize, rng: &mut Option<&mut ChaCha8Rng>| {
            match rng {
                Some(r) => Linear::init(input, output, r),
                None => Linear::zeros(input, output),
            }
        };
        let mut rng = init.as_deref_mut();

        let obs_embedder = match &mut rng {
            Some(r) => Mlp2::init(config.obs_dim, config.embed_hidden, d, r),
            None => Mlp2::zeros(config.obs_dim, config.embed_hidden, d),
        };
        let cap_embedder = match &mut rng {
            Some(r) => Mlp2::init(config.obs_dim, config.embed_hidden, d, r),
            None => Mlp2::zeros(config.obs_dim, config.embed_hidden, d),
        };
        let context_trunk = linear(2 * config.obs_dim, config.embed_hidden, &mut rng);
        let context_start = linear(config.embed_hidden, d, &mut rng);
        let context_goal = linear(config.embed_hidden, d, &mut rng);
        let table = |rows: usize, cols: usize, rng: &mut Option<&mut ChaCha8Rng>| match rng {
            Some(r) => {
                let scale = 1.0 / (cols as f64).sqrt();
                Mat::from_fn(rows, cols, |_, _| {
                    let n: f64 = StandardNormal.sample(*r);
                    n * scale
                })
            }
            None => Mat::zeros(rows, cols),
        };
        let query_table = table(config.max_horizon, d, &mut rng);
        let memory = table(config.memory_entries, d, &mut rng);
        let noise_proj = linear(config.noise_dim, d, &mut rng);
        let mut blocks = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            blocks.push(DecoderBlock {
                ln1: if rng.is_some() { LayerNorm::ones(d) } else { LayerNorm::zeros(d) },
                self_attn: match &mut rng {
                    Some(r) => Attention::init(d, r),
                    None => Attention::zeros(d),
                },
                ln2: if rng.is_some() { LayerNorm::ones(d) } else { LayerNorm::zeros(d) },
                cross_attn: match &mut rng {
                    Some(r) => Attention::init(d, r),
                    None => Attention::zeros(d),
                },
                ln3: if rng.is_some() { LayerNorm::ones(d) } else { LayerNorm::zeros(d) },
                ffn: match &mut rng {
                    Some(r) => Mlp2::init(d, config.ffn_hidden, d, r),
                    None => Mlp2::zeros(d, config.ffn_hidden, d),
                },
            });
        }
        let final_norm = if rng.is_some() { LayerNorm::ones(d) } else { LayerNorm::zeros(d) };
        let output_head = linear(d, config.num_actions, &mut rng);
        let critic = CriticParams {
            proj: linear(
                config.max_horizon * config.num_actions,
                config.critic.proj,
                &mut rng,
            ),
            l1: linear(config.critic.proj, config.critic.hidden1, &mut rng),
            l2: linear(config.critic.hidden1, config.critic.hidden2, &mut rng),
            out: linear(config.critic.hidden2, 1, &mut rng),
        };
        Params {
            obs_embedder,
            cap_embedder,
            context_trunk,
            context_start,
            context_goal,
            query_table,
            memory,
            noise_proj,
            blocks,
            final_norm,
            output_head,
            critic,
        }
    }

    /// Zero-valued container with the same shapes (gradients, momentum).
    pub fn zeros_like(config: &GeneratorConfig) -> Self {
        Params::build(config, None)
    }

    /// Named views over every parameter array, in a fixed order.
    pub fn named_slices(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        fn lin<'a>(out: &mut Vec<(String, &'a [f64])>, name: &str, l: &'a Linear) {
            out.push((format!("{name}.w"), l.w.data()));
            out.push((format!("{name}.b"), &l.b));
        }
        fn mlp<'a>(out: &mut Vec<(String, &'a [f64])>, name: &str, m: &'a Mlp2) {
            lin(out, &format!("{name}.l1"), &m.l1);
            lin(out, &format!("{name}.l2"), &m.l2);
        }
        fn norm<'a>(out: &mut Vec<(String, &'a [f64])>, name: &str, n: &'a LayerNorm) {
            out.push((format!("{name}.gain"), &n.gain));
            out.push((format!("{name}.bias"), &n.bias));
        }
        fn attn<'a>(out: &mut Vec<(String, &'a [f64])>, name: &str, a: &'a Attention) {
            out.push((format!("{name}.wq"), a.wq.data()));
            out.push((format!("{name}.wk"), a.wk.data()));
            out.push((format!("{name}.wv"), a.wv.data()));
            lin(out, &format!("{name}.wo"), &a.wo);
        }
        mlp(&mut out, "obs_embedder", &self.obs_embedder);
        mlp(&mut out, "cap_embedder", &self.cap_embedder);
        lin(&mut out, "context_trunk", &self.context_trunk);
        lin(&mut out, "context_start", &self.context_start);
        lin(&mut out, "context_goal", &self.context_goal);
        out.push(("query_table".to_string(), self.query_table.data()));
        out.push(("memory".to_string(), self.memory.data()));
        lin(&mut out, "noise_proj", &self.noise_proj);
        for (i, b) in self.blocks.iter().enumerate() {
            norm(&mut out, &format!("blocks.{i}.ln1"), &b.ln1);
            attn(&mut out, &format!("blocks.{i}.self_attn"), &b.self_attn);
            norm(&mut out, &format!("blocks.{i}.ln2"), &b.ln2);
            attn(&mut out, &format!("blocks.{i}.cross_attn"), &b.cross_attn);
            norm(&mut out, &format!("blocks.{i}.ln3"), &b.ln3);
            mlp(&mut out, &format!("blocks.{i}.ffn"), &b.ffn);
        }
        norm(&mut out, "final_norm", &self.final_norm);
        lin(&mut out, "output_head", &self.output_head);
        lin(&mut out, "critic.proj", &self.critic.proj);
        lin(&mut out, "critic.l1", &self.critic.l1);
        lin(&mut out, "critic.l2", &self.critic.l2);
        lin(&mut out, "critic.out", &self.critic.out);
        out
    }

    /// Mutable named views, same order as [`Params::named_slices`].
    pub fn named_slices_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        fn lin<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: &str, l: &'a mut Linear) {
            let Linear { w, b } = l;
            out.push((format!("{name}.w"), w.data_mut()));
            out.push((format!("{name}.b"), b.as_mut_slice()));
        }
        fn mlp<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: &str, m: &'a mut Mlp2) {
            let Mlp2 { l1, l2 } = m;
            lin(out, &format!("{name}.l1"), l1);
            lin(out, &format!("{name}.l2"), l2);
        }
        fn norm<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: &str, n: &'a mut LayerNorm) {
            let LayerNorm { gain, bias } = n;
            out.push((format!("{name}.gain"), gain.as_mut_slice()));
            out.push((format!("{name}.bias"), bias.as_mut_slice()));
        }
        fn attn<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: &str, a: &'a mut Attention) {
            let Attention { wq, wk, wv, wo } = a;
            out.push((format!("{name}.wq"), wq.data_mut()));
            out.push((format!("{name}.wk"), wk.data_mut()));
            out.push((format!("{name}.wv"), wv.data_mut()));
            lin(out, &format!("{name}.wo"), wo);
        }
        let Params {
            obs_embedder,
            cap_embedder,
            context_trunk,
            context_start,
            context_goal,
            query_table,
            memory,
            noise_proj,
            blocks,
            final_norm,
            output_head,
            critic,
        } = self;
        mlp(&mut out, "obs_embedder", obs_embedder);
        mlp(&mut out, "cap_embedder", cap_embedder);
        lin(&mut out, "context_trunk", context_trunk);
        lin(&mut out, "context_start", context_start);
        lin(&mut out, "context_goal", context_goal);
        out.push(("query_table".to_string(), query_table.data_mut()));
        out.push(("memory".to_string(), memory.data_mut()));
        lin(&mut out, "noise_proj", noise_proj);
        for (i, b) in blocks.iter_mut().enumerate() {
            let DecoderBlock {
                ln1,
                self_attn,
                ln2,
                cross_attn,
                ln3,
                ffn,
            } = b;
            norm(&mut out, &format!("blocks.{i}.ln1"), ln1);
            attn(&mut out, &format!("blocks.{i}.self_attn"), self_attn);
            norm(&mut out, &format!("blocks.{i}.ln2"), ln2);
            attn(&mut out, &format!("blocks.{i}.cross_attn"), cross_attn);
            norm(&mut out, &format!("blocks.{i}.ln3"), ln3);
            mlp(&mut out, &format!("blocks.{i}.ffn"), ffn);
        }
        norm(&mut out, "final_norm", final_norm);
        lin(&mut out, "output_head", output_head);
        let CriticParams { proj, l1, l2, out: c_out } = critic;
        lin(&mut out, "critic.proj", proj);
        lin(&mut out, "critic.l1", l1);
        lin(&mut out, "critic.l2", l2);
        lin(&mut out, "critic.out", c_out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_slices().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_slices()
            .iter()
            .all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }

    /// `self += other * scale`, entry-wise across every array.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        let mut mine = self.named_slices_mut();
        let theirs = other.named_slices();
        assert_eq!(mine.len(), theirs.len());
        for ((_, dst), (_, src)) in mine.iter_mut().zip(theirs.iter()) {
            crate::linalg::axpy(dst, src, scale);
        }
    }
}

/// Learnable parameters plus configuration; immutable during inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: GeneratorConfig,
    pub params: Params,
}

/// Initialize parameters deterministically: zero-mean weights scaled by
/// fan-in, zero biases, unit LayerNorm gains.
pub fn init_parameters(config: &GeneratorConfig, seed: u64) -> Result<ModelState, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, tag::MODEL_INIT, 0));
    let params = Params::build(config, Some(&mut rng));
    Ok(ModelState {
        config: config.clone(),
        params,
    })
}
