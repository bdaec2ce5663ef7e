use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architectural variants. `Full` is the complete encoder-decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// No decoder: pooled memory goes through a linear head producing all horizons.
    EncoderOnly,
    /// No encoder stacks: memory is the pooled patch embedding plus node embedding.
    DecoderOnly,
    /// Step-wise tokens (patch length forced to 1).
    NoPatch,
    /// Decoder layers keep self-attention but drop cross-attention.
    NoCrossAttn,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::EncoderOnly,
        Ablation::DecoderOnly,
        Ablation::NoPatch,
        Ablation::NoCrossAttn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "Full",
            Ablation::EncoderOnly => "EncoderOnly",
            Ablation::DecoderOnly => "DecoderOnly",
            Ablation::NoPatch => "NoPatch",
            Ablation::NoCrossAttn => "NoCrossAttn",
        }
    }

    pub fn has_encoders(self) -> bool {
        self != Ablation::DecoderOnly
    }

    pub fn has_decoder(self) -> bool {
        self != Ablation::EncoderOnly
    }

    pub fn has_cross_attention(self) -> bool {
        self.has_decoder() && self != Ablation::NoCrossAttn
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation `{s}`; expected one of Full, EncoderOnly, DecoderOnly, NoPatch, NoCrossAttn"
                ))
            })
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Input window length in steps.
    pub input_len: usize,
    /// Forecast horizon in steps.
    pub horizon: usize,
    pub patch_len: usize,
    pub d_model: usize,
    pub heads: usize,
    pub temporal_depth: usize,
    pub spatial_depth: usize,
    /// Hidden width of the feed-forward sublayers as a multiple of `d_model`.
    pub ffn_mult: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_len: 24,
            horizon: 4,
            patch_len: 4,
            d_model: 64,
            heads: 4,
            temporal_depth: 2,
            spatial_depth: 2,
            ffn_mult: 2,
            dropout: 0.1,
            activation: Activation::Relu,
            ablation: Ablation::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_len == 0 {
            return fail("patch_len must be at least 1".into());
        }
        if self.input_len < self.patch_len {
            return fail(format!(
                "input_len {} is shorter than patch_len {}",
                self.input_len, self.patch_len
            ));
        }
        if self.horizon == 0 {
            return fail("horizon must be at least 1".into());
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.ffn_mult == 0 {
            return fail("ffn_mult must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0,1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Patch length actually used (1 under `NoPatch`).
    pub fn effective_patch(&self) -> usize {
        if self.ablation == Ablation::NoPatch {
            1
        } else {
            self.patch_len
        }
    }

    /// Number of patch tokens per node.
    pub fn n_patches(&self) -> usize {
        self.input_len / self.effective_patch()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn ffn_width(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    /// Decoder depth follows the temporal encoder depth.
    pub fn decoder_depth(&self) -> usize {
        self.temporal_depth
    }
}
