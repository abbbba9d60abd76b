use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of encoder layers.
    pub depth: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ffn: usize,
    /// Longest source + target sequence; sizes the position table.
    pub max_len: usize,
    pub vocab_size: usize,
    /// 1-based layers that receive knowledge after their feed-forward block.
    pub injection_layers: Vec<usize>,
    /// Hidden size of each direction of the knowledge encoder.
    pub knowledge_hidden: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub copy_loss_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 4,
            d_model: 128,
            heads: 4,
            d_ffn: 256,
            max_len: 128,
            vocab_size: 0,
            injection_layers: vec![1, 2, 4],
            knowledge_hidden: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            epochs: 200,
            rng_seed: 0,
            copy_loss_weight: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("depth", self.depth),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ffn", self.d_ffn),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
            ("knowledge_hidden", self.knowledge_hidden),
            ("batch_size", self.batch_size),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        for &layer in &self.injection_layers {
            if layer == 0 || layer > self.depth {
                return Err(Error::InvalidConfig(format!(
                    "injection layer {layer} outside 1..={}",
                    self.depth
                )));
            }
        }
        let mut sorted = self.injection_layers.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.injection_layers.len() {
            return Err(Error::InvalidConfig("duplicate injection layer".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn injects_at(&self, layer: usize) -> bool {
        self.injection_layers.contains(&layer)
    }
}
