use serde::{Deserialize, Serialize};

use crate::attention::MaskMode;
use crate::data::synth::GON_KNEE_INDEX;
use crate::error::{Error, Result};
use crate::nn::Activation;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Focalgatednet,
    Transformer,
    Dlinear,
    Nlinear,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Focalgatednet => "FocalGatedNet",
            Variant::Transformer => "Transformer",
            Variant::Dlinear => "DLinear",
            Variant::Nlinear => "NLinear",
        }
    }
}

/// Which decoder blocks a FocalGatedNet keeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    GluDcf,
    DcfOnly,
    GluOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::GluDcf, Ablation::DcfOnly, Ablation::GluOnly];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::GluDcf => "GLU+DCF",
            Ablation::DcfOnly => "DCF",
            Ablation::GluOnly => "GLU",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEmbedding {
    #[default]
    None,
    Sinusoidal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputEmbedding {
    /// Position-wise dense projection `input_dim -> d_model`.
    #[default]
    Dense,
    /// Causal width-3 convolution `input_dim -> d_model`.
    TokenConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Mha,
    Dcf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub ablation: Ablation,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub dropout_rate: f64,
    pub glu_kernel: usize,
    pub glu_causal: bool,
    /// Encoder input length in samples.
    pub lookback: usize,
    /// Known-history prefix of the decoder input; `None` means `lookback / 2`.
    pub label_len: Option<usize>,
    /// Forecast length in samples.
    pub horizon: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub positional_embedding: PositionalEmbedding,
    pub embedding: InputEmbedding,
    pub ffn_activation: Activation,
    pub mask_mode: MaskMode,
    /// DLinear moving-average window.
    pub moving_avg: usize,
    /// Input channel holding the target's own history (linear baselines).
    pub target_feature: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Focalgatednet,
            ablation: Ablation::GluDcf,
            n_encoder_layers: 3,
            n_decoder_layers: 2,
            d_model: 512,
            d_ff: 2048,
            n_heads: 8,
            dropout_rate: 0.05,
            glu_kernel: 3,
            glu_causal: true,
            lookback: 128,
            label_len: None,
            horizon: 20,
            input_dim: 40,
            output_dim: 1,
            positional_embedding: PositionalEmbedding::None,
            embedding: InputEmbedding::Dense,
            ffn_activation: Activation::Relu,
            mask_mode: MaskMode::PreSoftmaxAdditive,
            moving_avg: 25,
            target_feature: GON_KNEE_INDEX,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for desk-scale checks.
    pub fn toy() -> Self {
        ModelConfig {
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            d_model: 16,
            d_ff: 32,
            n_heads: 2,
            lookback: 8,
            horizon: 4,
            ..Default::default()
        }
    }

    pub fn label_len(&self) -> usize {
        self.label_len.unwrap_or(self.lookback / 2)
    }

    pub fn decoder_len(&self) -> usize {
        self.label_len() + self.horizon
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.variant, Variant::Dlinear | Variant::Nlinear)
    }

    pub fn decoder_attention(&self) -> AttentionKind {
        match (self.variant, self.ablation) {
            (Variant::Focalgatednet, Ablation::GluDcf | Ablation::DcfOnly) => AttentionKind::Dcf,
            _ => AttentionKind::Mha,
        }
    }

    pub fn uses_glu(&self) -> bool {
        self.variant == Variant::Focalgatednet && self.ablation != Ablation::DcfOnly
    }

    /// Moving-average window actually applied: the configured width capped
    /// at the lookback and rounded down to odd.
    pub fn effective_moving_avg(&self) -> usize {
        let w = self.moving_avg.min(self.lookback).max(1);
        if w.is_multiple_of(2) {
            w - 1
        } else {
            w
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.lookback == 0 || self.horizon == 0 {
            return bad(format!("lookback {} and horizon {} must be >= 1", self.lookback, self.horizon));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return bad("input_dim and output_dim must be >= 1".into());
        }
        if self.label_len() > self.lookback {
            return bad(format!("label_len {} exceeds lookback {}", self.label_len(), self.lookback));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.is_linear() {
            if self.variant == Variant::Dlinear && self.lookback < 2 {
                return bad(format!("DLinear needs lookback >= 2, got {}", self.lookback));
            }
            if self.moving_avg == 0 {
                return bad("moving_avg must be >= 1".into());
            }
            if self.output_dim != 1 {
                return bad("linear baselines forecast a single channel".into());
            }
            if self.target_feature >= self.input_dim {
                return bad(format!("target_feature {} outside input_dim {}", self.target_feature, self.input_dim));
            }
            return Ok(());
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_ff == 0 || self.n_encoder_layers == 0 || self.n_decoder_layers == 0 {
            return bad("d_ff and layer counts must be >= 1".into());
        }
        if self.glu_kernel == 0 || (!self.glu_causal && self.glu_kernel.is_multiple_of(2)) {
            return bad(format!("invalid GLU kernel width {}", self.glu_kernel));
        }
        Ok(())
    }
}
