//! Toy encoder-decoder transformer with per-site attention variants,
//! its training objectives and checkpoints.

mod checkpoint;
mod loss;
mod params;
mod train;
mod transformer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use loss::{
    corpus_loss, example_gradients, full_document_examples, full_document_loss, local_context_examples,
    local_context_loss, perplexity, token_accuracy, Example,
};
pub use params::ModelParams;
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};
pub use transformer::{shift_right, AnchorMode, CrossAttention, Encoded, Transformer};

use crate::alignment::AlignMode;
use crate::attention::AttentionVariant;
use crate::error::{Error, Result};

/// Positional information: sinusoids added to the embeddings, or learned
/// per-offset score biases inside attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PosEnc {
    #[serde(rename = "abs", alias = "absolute")]
    Absolute,
    #[serde(rename = "rel", alias = "relative")]
    Relative,
}

impl PosEnc {
    pub fn name(self) -> &'static str {
        match self {
            Self::Absolute => "abs",
            Self::Relative => "rel",
        }
    }
}

impl FromStr for PosEnc {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" | "absolute" => Ok(Self::Absolute),
            "rel" | "relative" => Ok(Self::Relative),
            _ => Err(Error::InvalidArgument(format!("unknown positional encoding {s:?}"))),
        }
    }
}

impl fmt::Display for PosEnc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub enc_self: AttentionVariant,
    pub dec_self: AttentionVariant,
    pub cross: AttentionVariant,
    /// Window radius `w`; also the clipping distance of relative offsets.
    pub window: usize,
    pub pos_enc: PosEnc,
    /// Cross-attention anchors used while decoding.
    pub align: AlignMode,
    pub dropout: f64,
    pub label_smoothing: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            ffn_dim: 256,
            enc_self: AttentionVariant::Window,
            dec_self: AttentionVariant::Window,
            cross: AttentionVariant::Window,
            window: 10,
            pos_enc: PosEnc::Absolute,
            align: AlignMode::SentAlign,
            dropout: 0.1,
            label_smoothing: 0.1,
        }
    }
}

impl ModelConfig {
    /// Same attention variant at all three sites.
    pub fn with_variant(mut self, variant: AttentionVariant) -> Self {
        self.enc_self = variant;
        self.dec_self = variant;
        self.cross = variant;
        self
    }

    pub fn sites(&self) -> [AttentionVariant; 3] {
        [self.enc_self, self.dec_self, self.cross]
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 || self.ffn_dim == 0 {
            return bad("layer counts and ffn_dim must be positive".into());
        }
        let windowed = self.sites().contains(&AttentionVariant::Window);
        if (windowed || self.pos_enc == PosEnc::Relative) && self.window == 0 {
            return bad("window radius must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if let AlignMode::Ratio { ratio } = self.align {
            if !(ratio.is_finite() && ratio > 0.0) {
                return bad(format!("alignment ratio {ratio} must be positive"));
            }
        }
        Ok(())
    }
}
