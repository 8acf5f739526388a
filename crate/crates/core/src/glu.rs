//! Convolutional gated linear unit: `σ(W_g * x + b_g) ⊙ (W_h * x + b_h)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GluConfig {
    pub d_model: usize,
    pub kernel: usize,
    pub causal: bool,
}

impl GluConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 {
            return Err(Error::Config("GLU kernel width must be >= 1".into()));
        }
        if !self.causal && self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("non-causal GLU needs an odd kernel, got {}", self.kernel)));
        }
        Ok(())
    }
}

/// Gate and value kernels are `[k, d_model, d_model]`, biases `[d_model]`.
#[derive(Clone, Copy, Debug)]
pub struct GluWeights {
    pub w_gate: Var,
    pub b_gate: Var,
    pub w_value: Var,
    pub b_value: Var,
}

pub fn glu_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, w: &GluWeights, cfg: &GluConfig) -> Result<Var> {
    cfg.validate()?;
    let s = tape.shape(x);
    if s.len() != 3 || s[2] != cfg.d_model {
        return Err(Error::dim("glu", format!("expected [B, L, {}], got {:?}", cfg.d_model, s)));
    }
    let gate = tape.conv1d(x, w.w_gate, Some(w.b_gate), cfg.causal)?;
    let gate = tape.sigmoid(gate);
    let value = tape.conv1d(x, w.w_value, Some(w.b_value), cfg.causal)?;
    tape.mul(gate, value)
}
