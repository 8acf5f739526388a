//! Gradient-check cases shared by the gradient tests and the acceptance run.
//! Each group returns `(name, report)` pairs; callers decide tolerances.

use super::{rand_tensor, rng, weighted_sum};
use fgn_core::attention::{
    dcf_attention, standard_mha, AttentionConfig, AttentionMask, AttentionWeights, FocusScope, MaskMode,
};
use fgn_core::autodiff::{Tape, Var};
use fgn_core::glu::{glu_forward, GluConfig, GluWeights};
use fgn_core::gradcheck::{check, GradCheckReport};
use fgn_core::model::{Model, ModelConfig, Variant};
use fgn_core::nn::{Activation, ForwardCtx};
use fgn_core::tensor::Tensor;
use fgn_core::train::mse_loss;
use fgn_core::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
/// Primitive tolerance.
pub const TOL: f64 = 1e-5;
/// Whole-model tolerance.
pub const MODEL_TOL: f64 = 1e-3;

pub type Case = (String, GradCheckReport);

fn unary(name: &str, shape: &[usize], seed: u64, f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>) -> Case {
    let x = rand_tensor(&mut rng(seed), shape, 2.0);
    let r = check(&[x], H, |t, v| {
        let y = f(t, v[0])?;
        weighted_sum(t, y, seed + 1)
    })
    .unwrap();
    (name.into(), r)
}

fn binary(name: &str, sa: &[usize], sb: &[usize], f: impl Fn(&mut Tape<f64>, Var, Var) -> Result<Var>) -> Case {
    let mut g = rng(11);
    let inputs = [rand_tensor(&mut g, sa, 1.5), rand_tensor(&mut g, sb, 1.5)];
    let r = check(&inputs, H, |t, v| {
        let y = f(t, v[0], v[1])?;
        weighted_sum(t, y, 12)
    })
    .unwrap();
    (name.into(), r)
}

pub fn elementwise() -> Vec<Case> {
    vec![
        binary("add", &[2, 3, 4], &[4], |t, a, b| t.add(a, b)),
        binary("sub", &[2, 1, 4], &[3, 1], |t, a, b| t.sub(a, b)),
        binary("mul", &[2, 3, 4], &[2, 1, 4], |t, a, b| t.mul(a, b)),
        unary("scale", &[5], 3, |t, x| Ok(t.scale(x, -2.5))),
    ]
}

pub fn matmul() -> Vec<Case> {
    vec![
        binary("matmul 2d", &[3, 4], &[4, 5], |t, a, b| t.matmul(a, b)),
        binary("matmul batch x 2d", &[2, 3, 4], &[4, 5], |t, a, b| t.matmul(a, b)),
        binary("matmul 2d x batch", &[3, 4], &[2, 4, 5], |t, a, b| t.matmul(a, b)),
        binary("matmul 4d", &[2, 2, 3, 4], &[2, 2, 4, 3], |t, a, b| t.matmul(a, b)),
    ]
}

pub fn activations() -> Vec<Case> {
    // relu samples stay away from the kink
    let x = Tensor::from_f64(vec![6], &[-1.3, -0.4, -0.05, 0.07, 0.9, 2.2]).unwrap();
    let relu = check(&[x], H, |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y, 9)
    })
    .unwrap();
    vec![
        unary("sigmoid", &[3, 4], 5, |t, x| Ok(t.sigmoid(x))),
        unary("gelu", &[3, 4], 6, |t, x| Ok(t.gelu(x))),
        ("relu".into(), relu),
    ]
}

pub fn softmax() -> Vec<Case> {
    // large spread exercises the running-max rescaling of the prefix form
    let x = Tensor::from_f64(vec![6], &[-4.0, 3.0, -2.0, 7.5, 1.0, 9.0]).unwrap();
    let spread = check(&[x], H, |t, v| {
        let y = t.prefix_softmax(v[0], 0)?;
        weighted_sum(t, y, 25)
    })
    .unwrap();
    vec![
        unary("softmax", &[5], 21, |t, x| t.softmax(x, -1)),
        unary("softmax axis 1", &[2, 4, 3], 22, |t, x| t.softmax(x, 1)),
        unary("prefix_softmax last", &[2, 7], 23, |t, x| t.prefix_softmax(x, -1)),
        unary("prefix_softmax middle", &[2, 6, 3], 24, |t, x| t.prefix_softmax(x, 1)),
        ("prefix_softmax spread".into(), spread),
    ]
}

pub fn layer_norm() -> Vec<Case> {
    let mut g = rng(31);
    let inputs = [rand_tensor(&mut g, &[2, 3, 5], 2.0), rand_tensor(&mut g, &[5], 1.0), rand_tensor(&mut g, &[5], 1.0)];
    let r = check(&inputs, H, |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
        weighted_sum(t, y, 32)
    })
    .unwrap();
    vec![("layer_norm".into(), r)]
}

pub fn conv1d() -> Vec<Case> {
    [true, false]
        .into_iter()
        .map(|causal| {
            let mut g = rng(41);
            let inputs = [
                rand_tensor(&mut g, &[1, 4, 2], 1.0),
                rand_tensor(&mut g, &[3, 2, 3], 1.0),
                rand_tensor(&mut g, &[3], 1.0),
            ];
            let r = check(&inputs, H, |t, v| {
                let y = t.conv1d(v[0], v[1], Some(v[2]), causal)?;
                weighted_sum(t, y, 42)
            })
            .unwrap();
            (if causal { "conv1d causal" } else { "conv1d same" }.into(), r)
        })
        .collect()
}

pub fn dropout() -> Vec<Case> {
    vec![unary("dropout", &[4, 6], 51, |t, x| {
        let mut r = ChaCha8Rng::seed_from_u64(99);
        t.dropout(x, 0.3, true, &mut r)
    })]
}

pub fn shape_ops() -> Vec<Case> {
    vec![
        unary("reshape", &[2, 6], 61, |t, x| t.reshape(x, vec![3, 4])),
        unary("permute", &[2, 3, 4], 62, |t, x| t.permute(x, &[2, 0, 1])),
        unary("transpose", &[2, 3, 4], 63, |t, x| t.transpose(x, -1, -2)),
        unary("slice", &[2, 5, 3], 64, |t, x| t.slice(x, 1, 1, 3)),
        binary("concat", &[2, 3, 4], &[2, 2, 4], |t, a, b| t.concat(&[a, b], 1)),
    ]
}

pub fn reductions() -> Vec<Case> {
    vec![
        unary("sum", &[3, 4], 71, |t, x| {
            let s = t.sum(x);
            t.mul(s, s)
        }),
        unary("mean", &[3, 4], 72, |t, x| {
            let s = t.mean(x);
            t.mul(s, s)
        }),
        unary("sum_axis", &[2, 3, 4], 73, |t, x| t.sum_axis(x, 1)),
        unary("moving_average", &[2, 9, 2], 74, |t, x| t.moving_average(x, 5)),
        binary("mse", &[2, 3, 1], &[2, 3, 1], mse_loss),
    ]
}

fn attention_case(
    dcf: bool,
    cross: bool,
    mask: Option<AttentionMask>,
    focus: FocusScope,
    mode: MaskMode,
) -> GradCheckReport {
    let mut g = rng(81);
    let (b, l, lk, d) = (2, 4, if cross { 5 } else { 4 }, 4);
    let mut inputs = vec![rand_tensor(&mut g, &[b, l, d], 1.0), rand_tensor(&mut g, &[b, lk, d], 1.0)];
    for _ in 0..4 {
        inputs.push(rand_tensor(&mut g, &[d, d], 0.8));
    }
    let mut cfg = AttentionConfig::new(d, 2).unwrap();
    cfg.focus = focus;
    cfg.mask_mode = mode;
    check(&inputs, H, |t, v| {
        let w = AttentionWeights { wq: v[2], wk: v[3], wv: v[4], wo: v[5] };
        let xkv = if cross { v[1] } else { v[0] };
        let mut ctx = ForwardCtx::eval();
        let y = if dcf {
            dcf_attention(t, v[0], xkv, &w, mask.as_ref(), &cfg, &mut ctx)?
        } else {
            standard_mha(t, v[0], xkv, &w, mask.as_ref(), &cfg, &mut ctx)?
        };
        weighted_sum(t, y, 82)
    })
    .unwrap()
}

pub fn attention() -> Vec<Case> {
    let causal = || Some(AttentionMask::causal(4));
    let (g, c) = (FocusScope::Global, FocusScope::Causal);
    let (add, lit) = (MaskMode::PreSoftmaxAdditive, MaskMode::LiteralPostSoftmax);
    vec![
        ("dcf self".into(), attention_case(true, false, None, g, add)),
        ("dcf cross".into(), attention_case(true, true, None, g, add)),
        ("dcf causal".into(), attention_case(true, false, causal(), c, add)),
        ("dcf literal".into(), attention_case(true, false, causal(), g, lit)),
        ("mha masked".into(), attention_case(false, false, causal(), g, add)),
        ("mha cross".into(), attention_case(false, true, None, g, add)),
    ]
}

pub fn glu() -> Vec<Case> {
    let mut g = rng(91);
    let d = 3;
    let inputs = [
        rand_tensor(&mut g, &[2, 5, d], 1.0),
        rand_tensor(&mut g, &[3, d, d], 0.7),
        rand_tensor(&mut g, &[d], 0.5),
        rand_tensor(&mut g, &[3, d, d], 0.7),
        rand_tensor(&mut g, &[d], 0.5),
    ];
    let cfg = GluConfig { d_model: d, kernel: 3, causal: true };
    let r = check(&inputs, H, |t, v| {
        let w = GluWeights { w_gate: v[1], b_gate: v[2], w_value: v[3], b_value: v[4] };
        let y = glu_forward(t, v[0], &w, &cfg)?;
        weighted_sum(t, y, 92)
    })
    .unwrap();
    vec![("glu".into(), r)]
}

pub fn primitives() -> Vec<Case> {
    [elementwise, matmul, activations, softmax, layer_norm, conv1d, dropout, shape_ops, reductions, attention, glu]
        .iter()
        .flat_map(|f| f())
        .collect()
}

fn full_model_check(cfg: &ModelConfig, h: f64) -> GradCheckReport {
    let model = Model::<f64>::build(cfg, 3).unwrap();
    let mut g = rng(101);
    let enc = rand_tensor(&mut g, &[2, cfg.lookback, cfg.input_dim], 1.0);
    let dec = rand_tensor(&mut g, &[2, cfg.decoder_len(), cfg.input_dim], 1.0);
    let target = rand_tensor(&mut g, &[2, cfg.horizon, 1], 1.0);
    check(model.params().tensors(), h, |t, v| {
        let e = t.constant(enc.clone());
        let d = t.constant(dec.clone());
        let y = model.forward_bound(t, v, e, d, &mut ForwardCtx::eval())?;
        let tg = t.constant(target.clone());
        mse_loss(t, y, tg)
    })
    .unwrap()
}

fn toy(variant: Variant) -> ModelConfig {
    ModelConfig { variant, dropout_rate: 0.0, input_dim: 3, target_feature: 0, ..ModelConfig::toy() }
}

// A step of 1e-4 lets some central differences straddle a ReLU kink, so the
// 1e-4 check runs on the GELU network; the ReLU network is checked with a
// step small enough to stay on one side of every kink.
pub fn full_model(variant: Variant) -> Vec<Case> {
    let gelu = ModelConfig { ffn_activation: Activation::Gelu, ..toy(variant) };
    vec![
        (format!("{} gelu h=1e-4", variant.name()), full_model_check(&gelu, 1e-4)),
        (format!("{} relu h=1e-5", variant.name()), full_model_check(&toy(variant), 1e-5)),
    ]
}
