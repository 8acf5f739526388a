use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: BETA1, beta2: BETA2, eps: ADAM_EPS }
    }
}

/// First/second moment buffers shaped like the parameters, plus the step
/// counter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub hyper: AdamHyper,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self::with_hyper(params, AdamHyper::default())
    }

    pub fn with_hyper(params: &[Tensor<T>], hyper: AdamHyper) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        AdamState { hyper, m: zeros(), v: zeros(), step: 0 }
    }
}

/// One bias-corrected Adam update. Every parameter needs a gradient.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Usage(format!(
            "{} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        match g {
            None => return Err(Error::Usage(format!("parameter {i} has no gradient"))),
            Some(g) if g.shape() != p.shape() => return Err(Error::shapes("adam_step", p.shape(), g.shape())),
            Some(_) => {}
        }
    }
    let AdamHyper { beta1, beta2, eps } = state.hyper;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].as_ref().expect("checked above").data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j].f64();
            let mj = beta1 * m[j].f64() + (1.0 - beta1) * gj;
            let vj = beta2 * v[j].f64() + (1.0 - beta2) * gj * gj;
            m[j] = T::of(mj);
            v[j] = T::of(vj);
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
            *w = T::of(w.f64() - update);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().flat_map(|g| g.data().iter()).map(|x| x.f64() * x.f64()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x = T::of(x.f64() * k);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Tensor<f64> {
        Tensor::scalar(x)
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = vec![scalar(0.0)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Some(scalar(1.0))], &mut s, 1e-3).unwrap();
        assert!((p[0].item() + 1e-3).abs() < 1e-6);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![scalar(1.5), Tensor::from_f64(vec![2], &[3.0, -4.0]).unwrap()];
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            let g = vec![Some(scalar(0.0)), Some(Tensor::zeros(vec![2]))];
            adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        }
        assert_eq!(p[0].item(), 1.5);
        assert_eq!(p[1].data(), &[3.0, -4.0]);
    }

    #[test]
    fn missing_gradient_is_usage_error() {
        let mut p = vec![scalar(0.0)];
        let mut s = AdamState::new(&p);
        assert!(matches!(adam_step(&mut p, &[None], &mut s, 0.1), Err(Error::Usage(_))));
    }

    #[test]
    fn quadratic_converges() {
        let mut p = vec![scalar(0.0)];
        let mut s = AdamState::new(&p);
        for _ in 0..200 {
            let g = 2.0 * (p[0].item() - 3.0);
            adam_step(&mut p, &[Some(scalar(g))], &mut s, 0.1).unwrap();
        }
        assert!((p[0].item() - 3.0).abs() < 0.05, "{}", p[0].item());
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g: Vec<Option<Tensor<f64>>> = vec![Some(Tensor::from_f64(vec![2], &[3.0, 4.0]).unwrap())];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        let d = g[0].as_ref().unwrap().data();
        assert!((d[0] - 0.6).abs() < 1e-12 && (d[1] - 0.8).abs() < 1e-12);
    }
}
