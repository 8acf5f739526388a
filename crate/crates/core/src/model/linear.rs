//! DLinear and NLinear: one linear map over the lookback per channel, with
//! weights shared across channels.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::linear;
use crate::tensor::Scalar;

/// `w: [L_in, H]`, `b: [H]`.
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

fn check_input<T: Scalar>(tape: &Tape<T>, x: Var, lin: &LinearVars) -> Result<()> {
    let s = tape.shape(x);
    let ws = tape.shape(lin.w);
    if s.len() != 3 || ws.len() != 2 || ws[0] != s[1] {
        return Err(Error::shapes("linear baseline", s, ws));
    }
    Ok(())
}

/// Maps `[B, L, C]` through a time-axis linear layer to `[B, H, C]`.
fn time_linear<T: Scalar>(tape: &mut Tape<T>, x: Var, lin: &LinearVars) -> Result<Var> {
    let xt = tape.transpose(x, 1, 2)?;
    let y = linear(tape, xt, lin.w, Some(lin.b))?;
    tape.transpose(y, 1, 2)
}

/// Splits `x: [B, L, C]` into (trend, seasonal) with an edge-replicated
/// moving average of odd width `window`.
pub fn decompose<T: Scalar>(tape: &mut Tape<T>, x: Var, window: usize) -> Result<(Var, Var)> {
    let trend = tape.moving_average(x, window)?;
    let seasonal = tape.sub(x, trend)?;
    Ok((trend, seasonal))
}

pub fn dlinear_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    trend_lin: &LinearVars,
    seasonal_lin: &LinearVars,
    window: usize,
) -> Result<Var> {
    check_input(tape, x, trend_lin)?;
    if tape.shape(x)[1] < 2 {
        return Err(Error::Config("DLinear needs a lookback of at least 2".into()));
    }
    let (trend, seasonal) = decompose(tape, x, window)?;
    let t = time_linear(tape, trend, trend_lin)?;
    let s = time_linear(tape, seasonal, seasonal_lin)?;
    tape.add(t, s)
}

/// `Linear(x - x_last) + x_last`.
pub fn nlinear_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, lin: &LinearVars) -> Result<Var> {
    check_input(tape, x, lin)?;
    let len = tape.shape(x)[1];
    let last = tape.slice(x, 1, len - 1, 1)?;
    let centred = tape.sub(x, last)?;
    let y = time_linear(tape, centred, lin)?;
    tape.add(y, last)
}
