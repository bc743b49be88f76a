//! Generator and critic configuration.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Critic MLP sizes. The flattened action sequence is first projected to
/// `proj`, then passed through `proj -> hidden1 -> hidden2 -> 1` with ReLU
/// activations and a final sigmoid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub proj: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            proj: 256,
            hidden1: 64,
            hidden2: 32,
        }
    }
}

/// Architecture hyperparameters for the generator and critic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Input feature dimension (observations and caption embeddings).
    pub obs_dim: usize,
    /// Hidden width of the input embedders (the middle of 512 -> 256 -> 128).
    pub embed_hidden: usize,
    /// Model width d.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub memory_entries: usize,
    pub noise_dim: usize,
    pub ffn_hidden: usize,
    pub max_horizon: usize,
    pub num_actions: usize,
    /// Ablation switch: when false the context path is masked out of
    /// cross-attention entirely and caption embeddings are never read.
    pub use_context: bool,
    pub critic: CriticConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            obs_dim: 512,
            embed_hidden: 256,
            hidden: 128,
            layers: 2,
            heads: 8,
            memory_entries: 128,
            noise_dim: 32,
            ffn_hidden: 512,
            max_horizon: 5,
            num_actions: 12,
            use_context: true,
            critic: CriticConfig::default(),
        }
    }
}

impl GeneratorConfig {
    /// Shrunken configuration for gradient checks and fast tests.
    pub fn tiny() -> Self {
        GeneratorConfig {
            obs_dim: 12,
            embed_hidden: 16,
            hidden: 8,
            layers: 2,
            heads: 2,
            memory_entries: 8,
            noise_dim: 4,
            ffn_hidden: 32,
            max_horizon: 2,
            num_actions: 4,
            use_context: true,
            critic: CriticConfig {
                proj: 16,
                hidden1: 8,
                hidden2: 4,
            },
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("obs_dim", self.obs_dim),
            ("embed_hidden", self.embed_hidden),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("heads", self.heads),
            ("memory_entries", self.memory_entries),
            ("noise_dim", self.noise_dim),
            ("ffn_hidden", self.ffn_hidden),
            ("max_horizon", self.max_horizon),
            ("num_actions", self.num_actions),
            ("critic.proj", self.critic.proj),
            ("critic.hidden1", self.critic.hidden1),
            ("critic.hidden2", self.critic.hidden2),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if self.heads != 0 && self.hidden % self.heads != 0 {
            problems.push(format!(
                "hidden ({}) must be divisible by heads ({})",
                self.hidden, self.heads
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Config(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_reference_constants() {
        let c = GeneratorConfig::default();
        assert_eq!(c.obs_dim, 512);
        assert_eq!(c.embed_hidden, 256);
        assert_eq!(c.hidden, 128);
        assert_eq!(c.layers, 2);
        assert_eq!(c.heads, 8);
        assert_eq!(c.memory_entries, 128);
        assert_eq!(c.noise_dim, 32);
        assert_eq!(c.critic, CriticConfig { proj: 256, hidden1: 64, hidden2: 32 });
        c.validate().unwrap();
    }

    #[test]
    fn indivisible_heads_rejected() {
        let c = GeneratorConfig {
            heads: 7,
            ..GeneratorConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
