//! Forward-pass context and the small dense building blocks shared by the
//! encoder, decoder and baselines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Training flag plus the RNG stream that drives dropout.
#[derive(Clone, Debug)]
pub struct ForwardCtx {
    pub training: bool,
    pub rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx { training: false, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    pub fn train(seed: u64) -> Self {
        ForwardCtx { training: true, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, tape: &mut Tape<T>, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Gelu => tape.gelu(x),
        }
    }
}

/// `x · w (+ b)` with `w: [in, out]`.
pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add(y, b),
        None => Ok(y),
    }
}

/// Residual connection followed by layer normalisation (post-norm).
pub fn add_norm<T: Scalar>(tape: &mut Tape<T>, x: Var, sublayer_out: Var, gain: Var, offset: Var) -> Result<Var> {
    let r = tape.add(x, sublayer_out)?;
    tape.layer_norm(r, gain, offset, T::of(LAYER_NORM_EPS))
}

pub struct FeedForward {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Position-wise `d_model -> d_ff -> d_model` network.
pub fn feed_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    p: &FeedForward,
    act: Activation,
    dropout: f64,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let h = linear(tape, x, p.w1, Some(p.b1))?;
    let h = act.apply(tape, h);
    let h = tape.dropout(h, dropout, ctx.training, &mut ctx.rng)?;
    linear(tape, h, p.w2, Some(p.b2))
}
