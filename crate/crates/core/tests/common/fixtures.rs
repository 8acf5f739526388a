//! Random attention and GLU instances evaluated through the tape.

use fgn_core::attention::{
    dcf_attention_traced, standard_mha, AttentionConfig, AttentionMask, AttentionWeights, DcfTrace, FocusScope,
    MaskMode,
};
use fgn_core::autodiff::Tape;
use fgn_core::glu::{glu_forward, GluConfig, GluWeights};
use fgn_core::nn::ForwardCtx;
use fgn_core::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::oracle;
use super::rand_tensor;

pub struct Case {
    pub xq: Tensor<f64>,
    pub xkv: Option<Tensor<f64>>,
    pub w: [Tensor<f64>; 4],
}

impl Case {
    pub fn random(rng: &mut ChaCha8Rng, b: usize, lq: usize, lkv: Option<usize>, d: usize) -> Self {
        let xq = rand_tensor(rng, &[b, lq, d], 1.0);
        let xkv = lkv.map(|l| rand_tensor(rng, &[b, l, d], 1.0));
        let w = std::array::from_fn(|_| rand_tensor(rng, &[d, d], 1.0));
        Case { xq, xkv, w }
    }

    pub fn weights(&self) -> oracle::Weights<'_> {
        oracle::Weights { wq: &self.w[0], wk: &self.w[1], wv: &self.w[2], wo: &self.w[3] }
    }

    pub fn kv(&self) -> &Tensor<f64> {
        self.xkv.as_ref().unwrap_or(&self.xq)
    }

    pub fn dcf(&self, cfg: &AttentionConfig, mask: Option<&AttentionMask>) -> (Tape<f64>, DcfTrace) {
        let mut tape = Tape::new();
        let xq = tape.constant(self.xq.clone());
        let xkv = match &self.xkv {
            Some(t) => tape.constant(t.clone()),
            None => xq,
        };
        let [wq, wk, wv, wo] = self.w.clone().map(|t| tape.constant(t));
        let w = AttentionWeights { wq, wk, wv, wo };
        let trace = dcf_attention_traced(&mut tape, xq, xkv, &w, mask, cfg, &mut ForwardCtx::eval()).unwrap();
        (tape, trace)
    }

    pub fn dcf_out(&self, cfg: &AttentionConfig, mask: Option<&AttentionMask>) -> Vec<f64> {
        let (tape, trace) = self.dcf(cfg, mask);
        tape.value(trace.output).data().to_vec()
    }

    pub fn mha_out(&self, cfg: &AttentionConfig, mask: Option<&AttentionMask>) -> Vec<f64> {
        let mut tape = Tape::new();
        let xq = tape.constant(self.xq.clone());
        let xkv = match &self.xkv {
            Some(t) => tape.constant(t.clone()),
            None => xq,
        };
        let [wq, wk, wv, wo] = self.w.clone().map(|t| tape.constant(t));
        let w = AttentionWeights { wq, wk, wv, wo };
        let y = standard_mha(&mut tape, xq, xkv, &w, mask, cfg, &mut ForwardCtx::eval()).unwrap();
        tape.value(y).data().to_vec()
    }
}

pub fn attn_cfg(d: usize, h: usize, mode: MaskMode, focus: FocusScope) -> AttentionConfig {
    AttentionConfig { mask_mode: mode, focus, ..AttentionConfig::new(d, h).unwrap() }
}

pub fn random_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> AttentionMask {
    // every row keeps at least one visible key
    let mut vis: Vec<bool> = (0..rows * cols).map(|_| rng.random_bool(0.6)).collect();
    for r in 0..rows {
        let c = rng.random_range(0..cols);
        vis[r * cols + c] = true;
    }
    AttentionMask::new(rows, cols, vis).unwrap()
}

pub struct Glu {
    pub wg: Tensor<f64>,
    pub bg: Tensor<f64>,
    pub wh: Tensor<f64>,
    pub bh: Tensor<f64>,
}

impl Glu {
    pub fn random(r: &mut ChaCha8Rng, k: usize, d: usize) -> Self {
        Glu {
            wg: rand_tensor(r, &[k, d, d], 1.0),
            bg: rand_tensor(r, &[d], 0.5),
            wh: rand_tensor(r, &[k, d, d], 1.0),
            bh: rand_tensor(r, &[d], 0.5),
        }
    }

    pub fn forward(&self, x: &Tensor<f64>, cfg: &GluConfig) -> fgn_core::Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = GluWeights {
            w_gate: tape.constant(self.wg.clone()),
            b_gate: tape.constant(self.bg.clone()),
            w_value: tape.constant(self.wh.clone()),
            b_value: tape.constant(self.bh.clone()),
        };
        let y = glu_forward(&mut tape, xv, &w, cfg)?;
        Ok(tape.value(y).data().to_vec())
    }

    pub fn conv_h(&self, x: &Tensor<f64>, causal: bool) -> Vec<f64> {
        oracle::conv1d(x, &self.wh, self.bh.data(), causal)
    }
}

pub fn glu_cfg(d: usize, k: usize, causal: bool) -> GluConfig {
    GluConfig { d_model: d, kernel: k, causal }
}
