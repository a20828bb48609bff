use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingMode, NUM_SPECIAL};
use crate::error::{Error, Result};
use crate::recurrent::HeadKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Encoder-Decoder: the reply is conditioned on the last input sentence only.
    EncDec,
    /// Hierarchical encoder-decoder with a sentence-level context network.
    Hred,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::EncDec => "encdec",
            Architecture::Hred => "hred",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub head: HeadKind,
    pub embedding_mode: EmbeddingMode,
}

impl ModelConfig {
    /// Model sizes used when nothing else is specified.
    pub const DEFAULT_EMBED_DIM: usize = 300;
    pub const DEFAULT_HIDDEN_DIM: usize = 300;
    pub const DEFAULT_DEPTH: usize = 2;

    pub fn new(arch: Architecture, vocab_size: usize) -> Self {
        Self {
            arch,
            vocab_size,
            embed_dim: Self::DEFAULT_EMBED_DIM,
            hidden_dim: Self::DEFAULT_HIDDEN_DIM,
            depth: Self::DEFAULT_DEPTH,
            head: HeadKind::Softmax,
            embedding_mode: EmbeddingMode::Trainable,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.depth == 0 {
            return Err(Error::Config(
                "embedding size, hidden size and depth must be positive".into(),
            ));
        }
        if self.vocab_size < NUM_SPECIAL {
            return Err(Error::Config(format!(
                "vocabulary of {} tokens cannot hold the {NUM_SPECIAL} special tokens",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Width of the output head: vocabulary for softmax, embedding for cosine.
    pub fn head_dim(&self) -> usize {
        match self.head {
            HeadKind::Softmax => self.vocab_size,
            HeadKind::Cosine => self.embed_dim,
        }
    }
}
