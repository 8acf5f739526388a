mod common;

use common::fixtures::{glu_cfg as cfg, Glu};
use common::oracle;
use common::{max_abs_diff, rand_tensor, rng};
use fgn_core::tensor::Tensor;
use fgn_core::Error;
use rand::Rng;

#[test]
fn matches_convolution_oracle() {
    let mut r = rng(30);
    for (k, causal) in [(1, true), (2, true), (3, true), (3, false), (5, false)] {
        let g = Glu::random(&mut r, k, 3);
        let x = rand_tensor(&mut r, &[2, 6, 3], 1.0);
        let got = g.forward(&x, &cfg(3, k, causal)).unwrap();
        let want = oracle::glu(&x, &g.wg, g.bg.data(), &g.wh, g.bh.data(), causal);
        assert!(max_abs_diff(&got, &want) < 1e-12, "k={k} causal={causal}");
    }
}

#[test]
fn zero_gate_halves_value_branch() {
    let mut r = rng(31);
    let mut g = Glu::random(&mut r, 3, 4);
    g.wg = Tensor::zeros(vec![3, 4, 4]);
    g.bg = Tensor::zeros(vec![4]);
    let x = rand_tensor(&mut r, &[2, 5, 4], 2.0);
    let got = g.forward(&x, &cfg(4, 3, true)).unwrap();
    let half: Vec<f64> = g.conv_h(&x, true).iter().map(|v| 0.5 * v).collect();
    assert!(max_abs_diff(&got, &half) < 1e-6);
}

#[test]
fn zero_value_kernel_gives_zero() {
    let mut r = rng(32);
    let mut g = Glu::random(&mut r, 3, 4);
    g.wh = Tensor::zeros(vec![3, 4, 4]);
    g.bh = Tensor::zeros(vec![4]);
    let x = rand_tensor(&mut r, &[2, 5, 4], 2.0);
    assert!(g.forward(&x, &cfg(4, 3, true)).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn width_one_equals_gated_dense_layer() {
    let mut r = rng(33);
    let (b, l, d) = (2, 4, 3);
    let g = Glu::random(&mut r, 1, d);
    let x = rand_tensor(&mut r, &[b, l, d], 1.0);
    let got = g.forward(&x, &cfg(d, 1, true)).unwrap();
    // y[p, o] = σ(x[p]·Wg[:, o] + bg[o]) · (x[p]·Wh[:, o] + bh[o]) at each position p
    let mut want = Vec::new();
    for row in x.data().chunks(d) {
        for o in 0..d {
            let dot = |w: &Tensor<f64>, bias: &Tensor<f64>| {
                bias.data()[o] + (0..d).map(|i| row[i] * w.data()[i * d + o]).sum::<f64>()
            };
            want.push(oracle::sigmoid(dot(&g.wg, &g.bg)) * dot(&g.wh, &g.bh));
        }
    }
    assert!(max_abs_diff(&got, &want) <= 1e-6);
}

#[test]
fn output_bounded_by_value_branch() {
    let mut r = rng(34);
    for _ in 0..20 {
        let g = Glu::random(&mut r, 3, 4);
        let x = rand_tensor(&mut r, &[2, 6, 4], 3.0);
        let y = g.forward(&x, &cfg(4, 3, true)).unwrap();
        for (a, b) in y.iter().zip(g.conv_h(&x, true)) {
            assert!(a.abs() <= b.abs());
        }
    }
}

#[test]
fn causal_output_ignores_future_positions() {
    let mut r = rng(35);
    let (len, d) = (8, 3);
    for _ in 0..100 {
        let g = Glu::random(&mut r, 3, d);
        let x = rand_tensor(&mut r, &[2, len, d], 1.0);
        let base = g.forward(&x, &cfg(d, 3, true)).unwrap();
        let t = r.random_range(0..len - 1);
        let mut xp = x.clone();
        for b in 0..2 {
            for p in t + 1..len {
                for j in 0..d {
                    xp.data_mut()[(b * len + p) * d + j] += r.random_range(-5.0..5.0);
                }
            }
        }
        let out = g.forward(&xp, &cfg(d, 3, true)).unwrap();
        for b in 0..2 {
            let rows = b * len * d..(b * len + t + 1) * d;
            assert_eq!(out[rows.clone()], base[rows]);
        }
    }
}

#[test]
fn width_mismatch_is_dimension_error() {
    let mut r = rng(36);
    let g = Glu::random(&mut r, 3, 4);
    let x = rand_tensor(&mut r, &[1, 5, 3], 1.0);
    assert!(matches!(g.forward(&x, &cfg(4, 3, true)), Err(Error::Dimension { .. })));
}

#[test]
fn invalid_kernel_is_config_error() {
    assert!(cfg(4, 0, true).validate().is_err());
    assert!(cfg(4, 2, false).validate().is_err());
    assert!(cfg(4, 2, true).validate().is_ok());
}
