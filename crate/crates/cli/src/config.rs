//! Flat key=value run configuration.
//!
//! One config file drives every subcommand; flags override file keys (and
//! `--set key=value` can override any key). Precedence, lowest to highest:
//! built-in defaults, config file, `--set` overrides, named flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use capplan_core::model::{CriticConfig, GeneratorConfig};
use capplan_core::synthworld::{PipelineParams, ProceduralWorldParams, SplitRatios};
use capplan_core::train::TrainConfig;

/// Every tunable of the pipeline, addressable by a flat dotted key.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,

    pub world_num_tasks: usize,
    pub world_vocab_size: usize,
    pub world_obs_dim: usize,
    pub world_obs_noise_sigma: f64,
    pub world_caption_informativeness: f64,
    pub world_path_len: usize,
    pub world_branch_positions: Vec<usize>,
    pub world_branch_prob: f64,
    pub world_share_observation_means: bool,
    pub world_num_videos: usize,

    pub data_horizons: Vec<usize>,

    pub model_hidden: usize,
    pub model_layers: usize,
    pub model_heads: usize,
    pub model_memory_entries: usize,
    pub model_noise_dim: usize,
    pub model_embed_hidden: usize,
    pub model_ffn_hidden: usize,
    pub model_max_horizon: usize,
    pub model_use_context: bool,

    pub critic_proj: usize,
    pub critic_hidden1: usize,
    pub critic_hidden2: usize,

    pub train_epochs: usize,
    pub train_initial_lr: f64,
    pub train_decay_factor: f64,
    pub train_decay_every: usize,
    pub train_batch_size: usize,
    pub train_lambda_c: f64,
    pub train_lambda_ca: f64,
    pub train_lambda_adv: f64,
    pub train_critic_steps: usize,
    pub train_momentum: f64,
    pub train_val_every: usize,
    pub train_val_samples: usize,
    pub train_ablate_context: bool,

    pub eval_samples: usize,
    pub eval_horizons: Option<Vec<usize>>,

    pub paths_dataset: PathBuf,
    pub paths_checkpoint: PathBuf,
    pub paths_results: PathBuf,
    pub paths_curve: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            world_num_tasks: 4,
            world_vocab_size: 12,
            world_obs_dim: 512,
            world_obs_noise_sigma: 0.1,
            world_caption_informativeness: 1.0,
            world_path_len: 8,
            world_branch_positions: vec![3],
            world_branch_prob: 0.7,
            world_share_observation_means: false,
            world_num_videos: 60,
            data_horizons: vec![3],
            model_hidden: 128,
            model_layers: 2,
            model_heads: 8,
            model_memory_entries: 128,
            model_noise_dim: 32,
            model_embed_hidden: 256,
            model_ffn_hidden: 512,
            model_max_horizon: 5,
            model_use_context: true,
            critic_proj: 256,
            critic_hidden1: 64,
            critic_hidden2: 32,
            train_epochs: 200,
            train_initial_lr: 7e-4,
            train_decay_factor: 0.65,
            train_decay_every: 40,
            train_batch_size: 32,
            train_lambda_c: 1.0,
            train_lambda_ca: 1.0,
            train_lambda_adv: 0.1,
            train_critic_steps: 1,
            train_momentum: 0.9,
            train_val_every: 5,
            train_val_samples: 32,
            train_ablate_context: false,
            eval_samples: 1500,
            eval_horizons: None,
            paths_dataset: PathBuf::from("data"),
            paths_checkpoint: PathBuf::from("model.ckpt.json"),
            paths_results: PathBuf::from("results.jsonl"),
            paths_curve: PathBuf::from("loss_curve.csv"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("invalid value {value:?} for key {key}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("invalid boolean {other:?} for key {key}")),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, String> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|part| parse::<usize>(key, part))
        .collect()
}

impl RunConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "world.num_tasks" => self.world_num_tasks = parse(key, value)?,
            "world.vocab_size" => self.world_vocab_size = parse(key, value)?,
            "world.obs_dim" => self.world_obs_dim = parse(key, value)?,
            "world.obs_noise_sigma" => self.world_obs_noise_sigma = parse(key, value)?,
            "world.caption_informativeness" => {
                self.world_caption_informativeness = parse(key, value)?
            }
            "world.path_len" => self.world_path_len = parse(key, value)?,
            "world.branch_positions" => self.world_branch_positions = parse_list(key, value)?,
            "world.branch_prob" => self.world_branch_prob = parse(key, value)?,
            "world.share_observation_means" => {
                self.world_share_observation_means = parse_bool(key, value)?
            }
            "world.num_videos" => self.world_num_videos = parse(key, value)?,
            "data.horizons" => self.data_horizons = parse_list(key, value)?,
            "model.hidden" => self.model_hidden = parse(key, value)?,
            "model.layers" => self.model_layers = parse(key, value)?,
            "model.heads" => self.model_heads = parse(key, value)?,
            "model.memory_entries" => self.model_memory_entries = parse(key, value)?,
            "model.noise_dim" => self.model_noise_dim = parse(key, value)?,
            "model.embed_hidden" => self.model_embed_hidden = parse(key, value)?,
            "model.ffn_hidden" => self.model_ffn_hidden = parse(key, value)?,
            "model.max_horizon" => self.model_max_horizon = parse(key, value)?,
            "model.use_context" => self.model_use_context = parse_bool(key, value)?,
            "critic.proj" => self.critic_proj = parse(key, value)?,
            "critic.hidden1" => self.critic_hidden1 = parse(key, value)?,
            "critic.hidden2" => self.critic_hidden2 = parse(key, value)?,
            "train.epochs" => self.train_epochs = parse(key, value)?,
            "train.initial_lr" => self.train_initial_lr = parse(key, value)?,
            "train.decay_factor" => self.train_decay_factor = parse(key, value)?,
            "train.decay_every" => self.train_decay_every = parse(key, value)?,
            "train.batch_size" => self.train_batch_size = parse(key, value)?,
            "train.lambda_c" => self.train_lambda_c = parse(key, value)?,
            "train.lambda_ca" => self.train_lambda_ca = parse(key, value)?,
            "train.lambda_adv" => self.train_lambda_adv = parse(key, value)?,
            "train.critic_steps" => self.train_critic_steps = parse(key, value)?,
            "train.momentum" => self.train_momentum = parse(key, value)?,
            "train.val_every" => self.train_val_every = parse(key, value)?,
            "train.val_samples" => self.train_val_samples = parse(key, value)?,
            "train.ablate_context" => self.train_ablate_context = parse_bool(key, value)?,
            "eval.samples" => self.eval_samples = parse(key, value)?,
            "eval.horizons" => self.eval_horizons = Some(parse_list(key, value)?),
            "paths.dataset" => self.paths_dataset = PathBuf::from(value.trim()),
            "paths.checkpoint" => self.paths_checkpoint = PathBuf::from(value.trim()),
            "paths.results" => self.paths_results = PathBuf::from(value.trim()),
            "paths.curve" => self.paths_curve = PathBuf::from(value.trim()),
            other => return Err(format!("unknown config key: {other}")),
        }
        Ok(())
    }

    /// Parse a config file: one `key = value` per line, `#` comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), lineno + 1))?;
            self.set(key.trim(), value)
                .map_err(|e| format!("{}:{}: {e}", path.display(), lineno + 1))?;
        }
        Ok(())
    }

    /// Final sanity checks after all overrides are applied.
    pub fn validate(&self) -> Result<(), String> {
        let mut paths = [
            ("paths.dataset", &self.paths_dataset),
            ("paths.checkpoint", &self.paths_checkpoint),
            ("paths.results", &self.paths_results),
            ("paths.curve", &self.paths_curve),
        ];
        paths.sort_by_key(|(_, p)| p.to_path_buf());
        for pair in paths.windows(2) {
            if pair[0].1 == pair[1].1 {
                return Err(format!(
                    "{} and {} must point at distinct paths ({})",
                    pair[0].0,
                    pair[1].0,
                    pair[0].1.display()
                ));
            }
        }
        if self.data_horizons.is_empty() {
            return Err("data.horizons must not be empty".to_string());
        }
        if self.data_horizons.iter().any(|&h| h == 0) {
            return Err("horizons must be positive".to_string());
        }
        if self
            .data_horizons
            .iter()
            .chain(self.eval_horizons.iter().flatten())
            .any(|&h| h > self.model_max_horizon)
        {
            return Err(format!(
                "a requested horizon exceeds model.max_horizon ({})",
                self.model_max_horizon
            ));
        }
        Ok(())
    }

    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            world: ProceduralWorldParams {
                num_tasks: self.world_num_tasks,
                vocab_size: self.world_vocab_size,
                obs_dim: self.world_obs_dim,
                obs_noise_sigma: self.world_obs_noise_sigma,
                caption_informativeness: self.world_caption_informativeness,
                path_len: self.world_path_len,
                branch_positions: self.world_branch_positions.clone(),
                branch_prob: self.world_branch_prob,
                share_observation_means: self.world_share_observation_means,
                seed: self.seed,
            },
            num_videos: self.world_num_videos,
            horizons: self.data_horizons.clone(),
            ratios: SplitRatios::default(),
            seed: self.seed,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            obs_dim: self.world_obs_dim,
            embed_hidden: self.model_embed_hidden,
            hidden: self.model_hidden,
            layers: self.model_layers,
            heads: self.model_heads,
            memory_entries: self.model_memory_entries,
            noise_dim: self.model_noise_dim,
            ffn_hidden: self.model_ffn_hidden,
            max_horizon: self.model_max_horizon,
            num_actions: self.world_vocab_size,
            use_context: self.model_use_context && !self.train_ablate_context,
            critic: CriticConfig {
                proj: self.critic_proj,
                hidden1: self.critic_hidden1,
                hidden2: self.critic_hidden2,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            initial_lr: self.train_initial_lr,
            decay_factor: self.train_decay_factor,
            decay_every: self.train_decay_every,
            batch_size: self.train_batch_size,
            lambda_c: if self.train_ablate_context {
                0.0
            } else {
                self.train_lambda_c
            },
            lambda_ca: self.train_lambda_ca,
            lambda_adv: self.train_lambda_adv,
            critic_steps: self.train_critic_steps,
            momentum: self.train_momentum,
            val_every: self.train_val_every,
            val_samples: self.train_val_samples,
            seed: self.seed,
        }
    }

    pub fn eval_horizons(&self) -> Vec<usize> {
        self.eval_horizons
            .clone()
            .unwrap_or_else(|| self.data_horizons.clone())
    }

    /// Render every key at its current value (documentation and `--dump`).
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let list = |xs: &[usize]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        kv("seed", self.seed.to_string());
        kv("world.num_tasks", self.world_num_tasks.to_string());
        kv("world.vocab_size", self.world_vocab_size.to_string());
        kv("world.obs_dim", self.world_obs_dim.to_string());
        kv("world.obs_noise_sigma", self.world_obs_noise_sigma.to_string());
        kv(
            "world.caption_informativeness",
            self.world_caption_informativeness.to_string(),
        );
        kv("world.path_len", self.world_path_len.to_string());
        kv("world.branch_positions", list(&self.world_branch_positions));
        kv("world.branch_prob", self.world_branch_prob.to_string());
        kv(
            "world.share_observation_means",
            self.world_share_observation_means.to_string(),
        );
        kv("world.num_videos", self.world_num_videos.to_string());
        kv("data.horizons", list(&self.data_horizons));
        kv("model.hidden", self.model_hidden.to_string());
        kv("model.layers", self.model_layers.to_string());
        kv("model.heads", self.model_heads.to_string());
        kv("model.memory_entries", self.model_memory_entries.to_string());
        kv("model.noise_dim", self.model_noise_dim.to_string());
        kv("model.embed_hidden", self.model_embed_hidden.to_string());
        kv("model.ffn_hidden", self.model_ffn_hidden.to_string());
        kv("model.max_horizon", self.model_max_horizon.to_string());
        kv("model.use_context", self.model_use_context.to_string());
        kv("critic.proj", self.critic_proj.to_string());
        kv("critic.hidden1", self.critic_hidden1.to_string());
        kv("critic.hidden2", self.critic_hidden2.to_string());
        kv("train.epochs", self.train_epochs.to_string());
        kv("train.initial_lr", self.train_initial_lr.to_string());
        kv("train.decay_factor", self.train_decay_factor.to_string());
        kv("train.decay_every", self.train_decay_every.to_string());
        kv("train.batch_size", self.train_batch_size.to_string());
        kv("train.lambda_c", self.train_lambda_c.to_string());
        kv("train.lambda_ca", self.train_lambda_ca.to_string());
        kv("train.lambda_adv", self.train_lambda_adv.to_string());
        kv("train.critic_steps", self.train_critic_steps.to_string());
        kv("train.momentum", self.train_momentum.to_string());
        kv("train.val_every", self.train_val_every.to_string());
        kv("train.val_samples", self.train_val_samples.to_string());
        kv("train.ablate_context", self.train_ablate_context.to_string());
        kv("eval.samples", self.eval_samples.to_string());
        kv(
            "eval.horizons",
            self.eval_horizons
                .as_ref()
                .map(|h| list(h))
                .unwrap_or_else(|| list(&self.data_horizons)),
        );
        kv("paths.dataset", self.paths_dataset.display().to_string());
        kv("paths.checkpoint", self.paths_checkpoint.display().to_string());
        kv("paths.results", self.paths_results.display().to_string());
        kv("paths.curve", self.paths_curve.display().to_string());
        out
    }
}
