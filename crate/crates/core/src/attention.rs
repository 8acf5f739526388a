//! Multi-head attention for the encoder and Dynamic Contextual Focus (DCF)
//! attention for the decoder.
//!
//! DCF pipeline, per head:
//!
//! 1. `Q = x_q W_Q`, `K = x_kv W_K`, `V = x_kv W_V`, split into `h` heads.
//! 2. `A = softmax(Q Kᵀ / sqrt(d_model · h))`, masked per [`MaskMode`].
//! 3. Context `C[l] = Σ_j A[l, j] V[j]`.
//! 4. Salience `s[l] = Σ_d C[l, d]`; focus weights `W = dropout(softmax_l(s))`.
//! 5. Gated values `G[l] = W[l] · V'[l]` with `V' = V` for self-attention and
//!    `V' = C` for cross-attention.
//! 6. Heads are concatenated and projected by `W_O`.
//!
//! With [`FocusScope::Causal`] the focus softmax at position `l` normalises
//! over positions `0..=l` only, which keeps a decoder strictly causal.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::ForwardCtx;
use crate::tensor::{Scalar, Tensor};

/// Added to blocked scores in additive mode.
pub const MASK_FILL: f64 = -1e9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Blocked scores get [`MASK_FILL`] before the softmax; rows sum to 1.
    #[default]
    PreSoftmaxAdditive,
    /// Softmax first, then multiply by the 0/1 mask. Rows are not renormalised.
    LiteralPostSoftmax,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusScope {
    #[default]
    Global,
    Causal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub dropout_rate: f64,
    pub mask_mode: MaskMode,
    pub focus: FocusScope,
}

impl AttentionConfig {
    pub fn new(d_model: usize, n_heads: usize) -> Result<Self> {
        let cfg = AttentionConfig {
            d_model,
            n_heads,
            dropout_rate: 0.0,
            mask_mode: MaskMode::default(),
            focus: FocusScope::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// DCF scaling factor `1 / sqrt(d_model · h)`.
    pub fn dcf_scale(&self) -> f64 {
        1.0 / ((self.d_model * self.n_heads) as f64).sqrt()
    }

    /// Conventional `1 / sqrt(d_k)`.
    pub fn mha_scale(&self) -> f64 {
        1.0 / (self.d_head() as f64).sqrt()
    }
}

/// Visibility of key positions per query position; shared across batch and heads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    visible: Vec<bool>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, visible: Vec<bool>) -> Result<Self> {
        if visible.len() != rows * cols {
            return Err(Error::dim("mask", format!("{rows}x{cols} mask with {} entries", visible.len())));
        }
        Ok(AttentionMask { rows, cols, visible })
    }

    /// Lower-triangular, diagonal included.
    pub fn causal(len: usize) -> Self {
        let visible = (0..len * len).map(|k| k % len <= k / len).collect();
        AttentionMask { rows: len, cols: len, visible }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_visible(&self, q: usize, k: usize) -> bool {
        self.visible[q * self.cols + k]
    }

    fn to_tensor<T: Scalar>(&self, on: f64, off: f64) -> Tensor<T> {
        let data = self.visible.iter().map(|&v| T::of(if v { on } else { off })).collect();
        Tensor::new(vec![self.rows, self.cols], data).expect("mask shape is consistent")
    }
}

/// Projection matrices, each `[d_model, d_model]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

fn split_heads<T: Scalar>(tape: &mut Tape<T>, x: Var, h: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (b, l, d) = (s[0], s[1], s[2]);
    let r = tape.reshape(x, vec![b, l, h, d / h])?;
    tape.permute(r, &[0, 2, 1, 3])
}

fn merge_heads<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (b, h, l, dk) = (s[0], s[1], s[2], s[3]);
    let p = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(p, vec![b, l, h * dk])
}

fn check_stream<T: Scalar>(tape: &Tape<T>, x: Var, cfg: &AttentionConfig) -> Result<()> {
    let s = tape.shape(x);
    if s.len() != 3 || s[2] != cfg.d_model {
        return Err(Error::dim("attention", format!("expected [B, L, {}], got {:?}", cfg.d_model, s)));
    }
    Ok(())
}

/// Linear projections followed by the head split; each output is `[B, h, L, d_k]`.
pub fn project_qkv<T: Scalar>(
    tape: &mut Tape<T>,
    x_query: Var,
    x_kv: Var,
    w: &AttentionWeights,
    cfg: &AttentionConfig,
) -> Result<(Var, Var, Var)> {
    check_stream(tape, x_query, cfg)?;
    check_stream(tape, x_kv, cfg)?;
    if tape.shape(x_query)[0] != tape.shape(x_kv)[0] {
        return Err(Error::shapes("attention", tape.shape(x_query), tape.shape(x_kv)));
    }
    let q = tape.matmul(x_query, w.wq)?;
    let k = tape.matmul(x_kv, w.wk)?;
    let v = tape.matmul(x_kv, w.wv)?;
    Ok((split_heads(tape, q, cfg.n_heads)?, split_heads(tape, k, cfg.n_heads)?, split_heads(tape, v, cfg.n_heads)?))
}

/// `Q Kᵀ · scale`, shape `[B, h, L_q, L_kv]`.
pub fn scaled_scores<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, scale: f64) -> Result<Var> {
    let kt = tape.transpose(k, -1, -2)?;
    let s = tape.matmul(q, kt)?;
    Ok(tape.scale(s, T::of(scale)))
}

pub fn apply_mask_and_normalize<T: Scalar>(
    tape: &mut Tape<T>,
    scores: Var,
    mask: Option<&AttentionMask>,
    mode: MaskMode,
) -> Result<Var> {
    let Some(mask) = mask else {
        return tape.softmax(scores, -1);
    };
    let s = tape.shape(scores);
    let (lq, lk) = (s[s.len() - 2], s[s.len() - 1]);
    if mask.rows != lq || mask.cols != lk {
        return Err(Error::dim("mask", format!("{}x{} mask for {lq}x{lk} scores", mask.rows, mask.cols)));
    }
    match mode {
        MaskMode::PreSoftmaxAdditive => {
            if let Some(row) = (0..lq).find(|&r| (0..lk).all(|c| !mask.is_visible(r, c))) {
                return Err(Error::DegenerateMask { row });
            }
            let fill = tape.constant(mask.to_tensor(0.0, MASK_FILL));
            let masked = tape.add(scores, fill)?;
            tape.softmax(masked, -1)
        }
        MaskMode::LiteralPostSoftmax => {
            let a = tape.softmax(scores, -1)?;
            let m = tape.constant(mask.to_tensor(1.0, 0.0));
            tape.mul(a, m)
        }
    }
}

/// Every intermediate of one DCF evaluation.
#[derive(Clone, Copy, Debug)]
pub struct DcfTrace {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub scores: Var,
    pub attention: Var,
    pub context: Var,
    pub salience: Var,
    pub focus: Var,
    pub gated: Var,
    pub output: Var,
}

/// DCF attention. Self-attention is recognised by `x_query == x_kv`.
pub fn dcf_attention<T: Scalar>(
    tape: &mut Tape<T>,
    x_query: Var,
    x_kv: Var,
    w: &AttentionWeights,
    mask: Option<&AttentionMask>,
    cfg: &AttentionConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    Ok(dcf_attention_traced(tape, x_query, x_kv, w, mask, cfg, ctx)?.output)
}

pub fn dcf_attention_traced<T: Scalar>(
    tape: &mut Tape<T>,
    x_query: Var,
    x_kv: Var,
    w: &AttentionWeights,
    mask: Option<&AttentionMask>,
    cfg: &AttentionConfig,
    ctx: &mut ForwardCtx,
) -> Result<DcfTrace> {
    let (q, k, v) = project_qkv(tape, x_query, x_kv, w, cfg)?;
    let scores = scaled_scores(tape, q, k, cfg.dcf_scale())?;
    let attention = apply_mask_and_normalize(tape, scores, mask, cfg.mask_mode)?;
    let context = tape.matmul(attention, v)?;
    let salience = tape.sum_axis(context, -1)?;
    let weights = match cfg.focus {
        FocusScope::Global => tape.softmax(salience, -1)?,
        FocusScope::Causal => tape.prefix_softmax(salience, -1)?,
    };
    let focus = tape.dropout(weights, cfg.dropout_rate, ctx.training, &mut ctx.rng)?;
    let mut gate_shape = tape.shape(focus).to_vec();
    gate_shape.push(1);
    let gate = tape.reshape(focus, gate_shape)?;
    let values = if x_query == x_kv { v } else { context };
    let gated = tape.mul(gate, values)?;
    let merged = merge_heads(tape, gated)?;
    let output = tape.matmul(merged, w.wo)?;
    Ok(DcfTrace { q, k, v, scores, attention, context, salience, focus, gated, output })
}

/// Conventional multi-head attention: `1/sqrt(d_k)` scaling, additive mask,
/// dropout on the attention weights.
pub fn standard_mha<T: Scalar>(
    tape: &mut Tape<T>,
    x_query: Var,
    x_kv: Var,
    w: &AttentionWeights,
    mask: Option<&AttentionMask>,
    cfg: &AttentionConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let (q, k, v) = project_qkv(tape, x_query, x_kv, w, cfg)?;
    let scores = scaled_scores(tape, q, k, cfg.mha_scale())?;
    let a = apply_mask_and_normalize(tape, scores, mask, MaskMode::PreSoftmaxAdditive)?;
    let a = tape.dropout(a, cfg.dropout_rate, ctx.training, &mut ctx.rng)?;
    let ctx_v = tape.matmul(a, v)?;
    let merged = merge_heads(tape, ctx_v)?;
    tape.matmul(merged, w.wo)
}
