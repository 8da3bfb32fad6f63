//! Encoders, the term scorer, the value network and the sequence generator,
//! all built on the tape in [`tape`].

mod checkpoint;
mod encoder;
mod policy;
pub mod tape;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use encoder::Encoder;
pub use policy::{Encoded, PolicyModel, SeqState};
pub use tape::{grad_check, grad_check_report, GradCheck, Graph, Group, ParamId, ParamStore, Slot, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    FeedForward,
    Convolutional,
    Recurrent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Recurrent layers.
    pub layers: usize,
    /// Convolution windows, first layer first.
    pub windows: Vec<usize>,
    /// Filters of every convolution layer except the last, which has `d`.
    pub filters: usize,
    /// Per-direction hidden size of a recurrent encoder.
    pub hidden: usize,
    pub bidirectional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Convolutional,
            layers: 2,
            windows: vec![3, 3],
            filters: 32,
            hidden: 16,
            bidirectional: true,
        }
    }
}

impl EncoderConfig {
    pub fn feed_forward() -> Self {
        EncoderConfig { kind: EncoderKind::FeedForward, layers: 1, windows: vec![], ..Default::default() }
    }

    pub fn convolutional(windows: &[usize], filters: usize) -> Self {
        EncoderConfig {
            kind: EncoderKind::Convolutional,
            layers: windows.len(),
            windows: windows.to_vec(),
            filters,
            ..Default::default()
        }
    }

    pub fn recurrent(layers: usize, hidden: usize, bidirectional: bool) -> Self {
        EncoderConfig { kind: EncoderKind::Recurrent, layers, windows: vec![], hidden, bidirectional, ..Default::default() }
    }

    /// Width of the vector this encoder produces.
    pub fn output_dim(&self, d: usize) -> usize {
        match self.kind {
            EncoderKind::Recurrent => self.hidden * if self.bidirectional { 2 } else { 1 },
            _ => d,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self.kind {
            EncoderKind::FeedForward => {}
            EncoderKind::Convolutional => {
                if self.windows.is_empty() {
                    return Err(Error::Config("convolutional encoder needs at least one window".into()));
                }
                if let Some(w) = self.windows.iter().find(|w| **w % 2 == 0) {
                    return Err(Error::Config(format!("window sizes must be odd, got {w}")));
                }
                if self.filters == 0 {
                    return Err(Error::Config("filter count must be positive".into()));
                }
            }
            EncoderKind::Recurrent => {
                if self.layers == 0 || self.hidden == 0 {
                    return Err(Error::Config("recurrent layers and hidden size must be positive".into()));
                }
            }
        }
        if self.output_dim(d) != d {
            return Err(Error::Config(format!("encoder produces {} dims but d = {d}", self.output_dim(d))));
        }
        Ok(())
    }
}

/// Policy architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ff,
    Cnn,
    Rnn,
    RnnSeq,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Ff, ModelKind::Cnn, ModelKind::Rnn, ModelKind::RnnSeq];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ff => "ff",
            ModelKind::Cnn => "cnn",
            ModelKind::Rnn => "rnn",
            ModelKind::RnnSeq => "rnn-seq",
        }
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, ModelKind::Rnn | ModelKind::RnnSeq)
    }

    pub fn is_sequential(self) -> bool {
        self == ModelKind::RnnSeq
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?} (expected ff, cnn, rnn or rnn-seq)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d: usize,
    /// Width of the word vectors fed to the encoders.
    pub emb_dim: usize,
    /// Context words on each side of a candidate term.
    pub radius: usize,
    pub query_encoder: EncoderConfig,
    pub term_encoder: EncoderConfig,
    /// Gated (LSTM) update for the sequence generator; `false` gives the plain
    /// `tanh` recurrence.
    pub gated: bool,
}

impl ModelConfig {
    /// Standard layout for a model kind: FF one hidden layer, CNN windows 3,3
    /// for queries and 9,3 for terms, RNN a 2-layer bidirectional LSTM.
    pub fn new(kind: ModelKind, d: usize, emb_dim: usize) -> Self {
        let radius = crate::prf::CONTEXT_RADIUS;
        let (query_encoder, term_encoder) = match kind {
            ModelKind::Ff => (EncoderConfig::feed_forward(), EncoderConfig::feed_forward()),
            ModelKind::Cnn => {
                (EncoderConfig::convolutional(&[3, 3], d), EncoderConfig::convolutional(&[2 * radius + 1, 3], d))
            }
            ModelKind::Rnn | ModelKind::RnnSeq => {
                let bi = d.is_multiple_of(2);
                let h = if bi { d / 2 } else { d };
                (EncoderConfig::recurrent(2, h, bi), EncoderConfig::recurrent(2, h, bi))
            }
        };
        ModelConfig { kind, d, emb_dim, radius, query_encoder, term_encoder, gated: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.emb_dim == 0 {
            return Err(Error::Config("d and embedding dimension must be positive".into()));
        }
        self.query_encoder.validate(self.d)?;
        self.term_encoder.validate(self.d)
    }
}
