#![allow(dead_code)]

pub mod fixtures;
pub mod gradcases;

use fgn_core::autodiff::{Tape, Var};
use fgn_core::tensor::Tensor;
use fgn_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `sum(y * r)` for a fixed random `r`, turning any output into a scalar
/// whose gradient exercises every element.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let r = rand_tensor(&mut rng(seed), &shape, 1.0);
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

/// Plain-loop reference implementations, independent of the tape.
#[allow(clippy::needless_range_loop)]
pub mod oracle {
    use fgn_core::tensor::Tensor;

    fn at3(t: &Tensor<f64>, i: usize, j: usize, k: usize) -> f64 {
        let s = t.shape();
        t.data()[(i * s[1] + j) * s[2] + k]
    }

    fn softmax(xs: &[f64]) -> Vec<f64> {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|v| v / z).collect()
    }

    /// `x[b] · W` restricted to output columns `cols`.
    fn project(x: &Tensor<f64>, b: usize, w: &Tensor<f64>, cols: std::ops::Range<usize>) -> Vec<Vec<f64>> {
        let (l, d) = (x.shape()[1], x.shape()[2]);
        let n = w.shape()[1];
        (0..l)
            .map(|t| cols.clone().map(|c| (0..d).map(|i| at3(x, b, t, i) * w.data()[i * n + c]).sum()).collect())
            .collect()
    }

    pub struct Weights<'a> {
        pub wq: &'a Tensor<f64>,
        pub wk: &'a Tensor<f64>,
        pub wv: &'a Tensor<f64>,
        pub wo: &'a Tensor<f64>,
    }

    #[derive(Clone, Copy)]
    pub enum Mask<'a> {
        None,
        Additive(&'a dyn Fn(usize, usize) -> bool),
        Literal(&'a dyn Fn(usize, usize) -> bool),
    }

    /// Per-head attention matrix for batch `b`, head `hh`.
    fn attention(q: &[Vec<f64>], k: &[Vec<f64>], scale: f64, mask: Mask) -> Vec<Vec<f64>> {
        q.iter()
            .enumerate()
            .map(|(i, qi)| {
                let scores: Vec<f64> = k
                    .iter()
                    .enumerate()
                    .map(|(j, kj)| {
                        let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        match mask {
                            Mask::Additive(vis) if !vis(i, j) => s - 1e9,
                            _ => s,
                        }
                    })
                    .collect();
                let mut a = softmax(&scores);
                if let Mask::Literal(vis) = mask {
                    for (j, v) in a.iter_mut().enumerate() {
                        if !vis(i, j) {
                            *v = 0.0;
                        }
                    }
                }
                a
            })
            .collect()
    }

    fn mix(a: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        a.iter()
            .map(|row| (0..v[0].len()).map(|c| row.iter().zip(v).map(|(w, vr)| w * vr[c]).sum()).collect())
            .collect()
    }

    fn output(merged: &[Vec<Vec<f64>>], wo: &Tensor<f64>) -> Vec<f64> {
        let d = wo.shape()[0];
        let mut out = Vec::new();
        for m in merged {
            for row in m {
                for c in 0..d {
                    out.push((0..d).map(|i| row[i] * wo.data()[i * d + c]).sum());
                }
            }
        }
        out
    }

    /// Step-by-step DCF attention. Returns `[B, L_q, d]` flattened.
    pub fn dcf(
        xq: &Tensor<f64>,
        xkv: &Tensor<f64>,
        w: &Weights,
        h: usize,
        mask: Mask,
        causal_focus: bool,
        self_attention: bool,
    ) -> Vec<f64> {
        let (bsz, lq, d) = (xq.shape()[0], xq.shape()[1], xq.shape()[2]);
        let dk = d / h;
        let scale = 1.0 / ((d * h) as f64).sqrt();
        let mut merged = vec![vec![vec![0.0; d]; lq]; bsz];
        for b in 0..bsz {
            for hh in 0..h {
                let cols = hh * dk..(hh + 1) * dk;
                let q = project(xq, b, w.wq, cols.clone());
                let k = project(xkv, b, w.wk, cols.clone());
                let v = project(xkv, b, w.wv, cols.clone());
                let a = attention(&q, &k, scale, mask);
                let c = mix(&a, &v);
                let s: Vec<f64> = c.iter().map(|row| row.iter().sum()).collect();
                for l in 0..lq {
                    let wl = if causal_focus { softmax(&s[..=l])[l] } else { softmax(&s)[l] };
                    let src = if self_attention { &v[l] } else { &c[l] };
                    for (j, val) in src.iter().enumerate() {
                        merged[b][l][hh * dk + j] = wl * val;
                    }
                }
            }
        }
        output(&merged, w.wo)
    }

    /// Conventional multi-head attention with `1/sqrt(d_k)` scaling.
    pub fn mha(xq: &Tensor<f64>, xkv: &Tensor<f64>, w: &Weights, h: usize, mask: Mask) -> Vec<f64> {
        let (bsz, lq, d) = (xq.shape()[0], xq.shape()[1], xq.shape()[2]);
        let dk = d / h;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut merged = vec![vec![vec![0.0; d]; lq]; bsz];
        for b in 0..bsz {
            for hh in 0..h {
                let cols = hh * dk..(hh + 1) * dk;
                let q = project(xq, b, w.wq, cols.clone());
                let k = project(xkv, b, w.wk, cols.clone());
                let v = project(xkv, b, w.wv, cols);
                let c = mix(&attention(&q, &k, scale, mask), &v);
                for l in 0..lq {
                    merged[b][l][hh * dk..(hh + 1) * dk].copy_from_slice(&c[l]);
                }
            }
        }
        output(&merged, w.wo)
    }

    /// Same-length 1-D convolution, kernel `[k, C_in, C_out]`.
    pub fn conv1d(x: &Tensor<f64>, w: &Tensor<f64>, bias: &[f64], causal: bool) -> Vec<f64> {
        let (bsz, len, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (k, cout) = (w.shape()[0], w.shape()[2]);
        let pad = if causal { k - 1 } else { (k - 1) / 2 };
        let mut out = Vec::with_capacity(bsz * len * cout);
        for b in 0..bsz {
            for t in 0..len {
                for o in 0..cout {
                    let mut acc = bias[o];
                    for j in 0..k {
                        let src = t as isize + j as isize - pad as isize;
                        if src < 0 || src >= len as isize {
                            continue;
                        }
                        for c in 0..cin {
                            acc += at3(x, b, src as usize, c) * w.data()[(j * cin + c) * cout + o];
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// `σ(conv_g) ⊙ conv_h`.
    pub fn glu(x: &Tensor<f64>, wg: &Tensor<f64>, bg: &[f64], wh: &Tensor<f64>, bh: &[f64], causal: bool) -> Vec<f64> {
        let g = conv1d(x, wg, bg, causal);
        let v = conv1d(x, wh, bh, causal);
        g.iter().zip(&v).map(|(a, b)| sigmoid(*a) * b).collect()
    }

    /// Textbook error metrics: `(mae, rmse, mape, r2 percent)`, with `None`
    /// for R² when the truth is constant.
    pub fn metrics(pred: &[f64], truth: &[f64]) -> (f64, f64, f64, Option<f64>) {
        let n = truth.len() as f64;
        let errs: Vec<f64> = pred.iter().zip(truth).map(|(p, y)| p - y).collect();
        let mae = errs.iter().map(|e| e.abs()).sum::<f64>() / n;
        let mse = errs.iter().map(|e| e * e).sum::<f64>() / n;
        let mape = errs.iter().zip(truth).map(|(e, y)| e.abs() / y.abs().max(0.01)).sum::<f64>() / n;
        let mean = truth.iter().sum::<f64>() / n;
        let var = truth.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let constant = truth.iter().all(|&y| y == truth[0]);
        let r2 = (!constant).then(|| 100.0 * (1.0 - mse / var));
        (mae, mse.sqrt(), mape, r2)
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random `(prediction, truth)` pairs: lengths 1..=1000, with exact copies,
/// single-element nudges and constant truths mixed in.
pub fn metric_cases(seed: u64, n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let len = r.random_range(1..=1000);
            let truth: Vec<f64> = if i % 10 == 9 {
                vec![r.random_range(-10.0..70.0); len]
            } else {
                (0..len).map(|_| r.random_range(-10.0..70.0)).collect()
            };
            let pred = match i % 5 {
                0 => truth.clone(),
                1 => {
                    let mut p = truth.clone();
                    let j = r.random_range(0..len);
                    p[j] = p[j].next_up();
                    p
                }
                _ => {
                    let scale = 10f64.powf(r.random_range(-3.0..1.5));
                    truth.iter().map(|y| y + scale * r.random_range(-1.0..1.0)).collect()
                }
            };
            (pred, truth)
        })
        .collect()
}

/// Compares `compute_metrics` with the textbook reference on one case.
pub fn check_metrics_case(pred: &[f64], truth: &[f64], tol: f64) -> std::result::Result<(), String> {
    use fgn_core::metrics::{compute_metrics, RSquared};
    let m = compute_metrics(pred, truth).map_err(|e| e.to_string())?;
    let (mae, rmse, mape, r2) = oracle::metrics(pred, truth);
    let close = |a: f64, b: f64| (a - b).abs() <= tol * b.abs().max(1.0);
    if !close(m.mae, mae) || !close(m.rmse, rmse) || !close(m.mape, mape) {
        return Err(format!("{m:?} vs reference ({mae}, {rmse}, {mape})"));
    }
    if m.rmse < m.mae {
        return Err(format!("rmse {} < mae {}", m.rmse, m.mae));
    }
    match (m.r2, r2) {
        (RSquared::Undefined, None) => {}
        (RSquared::Percent(a), Some(b)) if close(a, b) => {}
        (a, b) => return Err(format!("r2 {a:?} vs reference {b:?}")),
    }
    let exact = pred == truth;
    if r2.is_some() && (m.r2 == RSquared::Percent(100.0)) != exact {
        return Err(format!("r2 {:?} with exact = {exact}", m.r2));
    }
    Ok(())
}

/// Trains a linear baseline on the line `y = t` and returns the worst
/// absolute forecast error on held-out windows, in units of `y`.
pub fn fit_line(variant: fgn_core::Variant) -> f64 {
    use fgn_core::data::{prepare, RecordingTable, WindowSpec};
    use fgn_core::nn::ForwardCtx;
    use fgn_core::train::{train_step, AdamState};
    use fgn_core::{Model, ModelConfig};

    let n = 400;
    let time: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let table = RecordingTable::new(time.clone(), vec!["y".into()], vec![time]).unwrap();
    let spec = WindowSpec { lookback: 8, label_len: 4, horizon: 4, stride: 1 };
    let data = prepare::<f64>(&table, &["y".to_string()], "y", spec, 0.8, 0.1).unwrap();
    let cfg = ModelConfig { variant, input_dim: 1, target_feature: 0, ..ModelConfig::toy() };
    let mut m = Model::<f64>::build(&cfg, 0).unwrap();
    let mut state = AdamState::new(m.params().tensors());
    let mut ctx = ForwardCtx::eval();
    let idx: Vec<usize> = (0..data.train.len()).collect();
    for step in 0..3000 {
        let lr = if step < 2000 { 1e-2 } else { 1e-3 };
        train_step(&mut m, &data.train, &idx, &mut state, lr, None, &mut ctx).unwrap();
    }
    let (pred, truth) = fgn_core::metrics::collect_predictions(&m, &data.test, &data.target_stats, 64).unwrap();
    pred.iter().zip(&truth).map(|(p, t)| (p - t).abs()).fold(0.0, f64::max)
}
