//! FocalGatedNet and the baseline forecasters.
//!
//! Encoder–decoder variants (FocalGatedNet and the vanilla Transformer) use
//! post-norm residual sublayers throughout. Encoder layers are standard
//! multi-head attention plus a feed-forward network. Each decoder layer
//! is: causal self-attention, cross-attention over the encoder output, an
//! optional GLU sublayer, and a feed-forward network. The forecast is the
//! last `horizon` positions of the decoder output after a final dense
//! projection.

mod config;
mod linear;
mod params;

pub use config::{Ablation, AttentionKind, InputEmbedding, ModelConfig, PositionalEmbedding, Variant};
pub use linear::{decompose, dlinear_forward, nlinear_forward, LinearVars};
pub use params::{Init, ParamId, ParamStore};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{dcf_attention, standard_mha, AttentionConfig, AttentionMask, AttentionWeights, FocusScope};
use crate::autodiff::{Tape, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::glu::{glu_forward, GluConfig, GluWeights};
use crate::nn::{add_norm, feed_forward, linear, FeedForward, ForwardCtx};
use crate::tensor::{Scalar, Tensor};
use params::ParamBuilder;

/// Anything that maps a batch to a `[B, H, output_dim]` forecast in
/// normalised target units.
pub trait Forecaster<T: Scalar> {
    fn forecast(&self, batch: &Batch<T>) -> Result<Tensor<T>>;
}

#[derive(Clone, Copy, Debug)]
struct LinearP {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct NormP {
    gain: ParamId,
    offset: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct AttnP {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct FfnP {
    up: LinearP,
    down: LinearP,
}

#[derive(Clone, Copy, Debug)]
struct GluP {
    w_gate: ParamId,
    b_gate: ParamId,
    w_value: ParamId,
    b_value: ParamId,
}

#[derive(Clone, Copy, Debug)]
enum EmbedP {
    Dense(LinearP),
    TokenConv { w: ParamId, b: ParamId },
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: AttnP,
    norm_attn: NormP,
    ffn: FfnP,
    norm_ffn: NormP,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: AttnP,
    norm_self: NormP,
    cross_attn: AttnP,
    norm_cross: NormP,
    glu: Option<(GluP, NormP)>,
    ffn: FfnP,
    norm_ffn: NormP,
}

#[derive(Clone, Debug)]
enum Layout {
    EncoderDecoder {
        enc_embed: EmbedP,
        encoder: Vec<EncoderLayer>,
        dec_embed: EmbedP,
        decoder: Vec<DecoderLayer>,
        head: LinearP,
    },
    DLinear {
        trend: LinearP,
        seasonal: LinearP,
    },
    NLinear {
        lin: LinearP,
    },
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    layout: Layout,
    params: ParamStore<T>,
}

fn dense<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, fan_in: usize, out: usize) -> LinearP {
    LinearP {
        w: pb.add(format!("{name}.weight"), vec![fan_in, out], Init::Uniform { fan_in }),
        b: pb.add(format!("{name}.bias"), vec![out], Init::Zeros),
    }
}

fn norm<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, d: usize) -> NormP {
    NormP {
        gain: pb.add(format!("{name}.gain"), vec![d], Init::Ones),
        offset: pb.add(format!("{name}.offset"), vec![d], Init::Zeros),
    }
}

fn attn<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, d: usize) -> AttnP {
    let mut m = |s: &str| pb.add(format!("{name}.{s}"), vec![d, d], Init::Uniform { fan_in: d });
    AttnP { wq: m("w_q"), wk: m("w_k"), wv: m("w_v"), wo: m("w_o") }
}

fn ffn<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, d: usize, d_ff: usize) -> FfnP {
    FfnP { up: dense(pb, &format!("{name}.up"), d, d_ff), down: dense(pb, &format!("{name}.down"), d_ff, d) }
}

fn embed<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, cfg: &ModelConfig) -> EmbedP {
    match cfg.embedding {
        InputEmbedding::Dense => EmbedP::Dense(dense(pb, name, cfg.input_dim, cfg.d_model)),
        InputEmbedding::TokenConv => {
            let fan_in = 3 * cfg.input_dim;
            EmbedP::TokenConv {
                w: pb.add(format!("{name}.weight"), vec![3, cfg.input_dim, cfg.d_model], Init::Uniform { fan_in }),
                b: pb.add(format!("{name}.bias"), vec![cfg.d_model], Init::Zeros),
            }
        }
    }
}

impl<T: Scalar> Model<T> {
    /// Declares every parameter in a fixed order and initialises it from `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut rng);
        let (d, l, h) = (config.d_model, config.lookback, config.horizon);
        let layout = match config.variant {
            Variant::Dlinear => {
                Layout::DLinear { trend: dense(&mut pb, "trend", l, h), seasonal: dense(&mut pb, "seasonal", l, h) }
            }
            Variant::Nlinear => Layout::NLinear { lin: dense(&mut pb, "linear", l, h) },
            Variant::Focalgatednet | Variant::Transformer => {
                let enc_embed = embed(&mut pb, "enc_embed", config);
                let encoder = (0..config.n_encoder_layers)
                    .map(|i| {
                        let p = format!("encoder.{i}");
                        EncoderLayer {
                            attn: attn(&mut pb, &format!("{p}.attn"), d),
                            norm_attn: norm(&mut pb, &format!("{p}.norm_attn"), d),
                            ffn: ffn(&mut pb, &format!("{p}.ffn"), d, config.d_ff),
                            norm_ffn: norm(&mut pb, &format!("{p}.norm_ffn"), d),
                        }
                    })
                    .collect();
                let dec_embed = embed(&mut pb, "dec_embed", config);
                let k = config.glu_kernel;
                let decoder = (0..config.n_decoder_layers)
                    .map(|i| {
                        let p = format!("decoder.{i}");
                        let self_attn = attn(&mut pb, &format!("{p}.self_attn"), d);
                        let norm_self = norm(&mut pb, &format!("{p}.norm_self"), d);
                        let cross_attn = attn(&mut pb, &format!("{p}.cross_attn"), d);
                        let norm_cross = norm(&mut pb, &format!("{p}.norm_cross"), d);
                        let glu = config.uses_glu().then(|| {
                            let fan_in = k * d;
                            let g = GluP {
                                w_gate: pb.add(format!("{p}.glu.w_gate"), vec![k, d, d], Init::Uniform { fan_in }),
                                b_gate: pb.add(format!("{p}.glu.b_gate"), vec![d], Init::Zeros),
                                w_value: pb.add(format!("{p}.glu.w_value"), vec![k, d, d], Init::Uniform { fan_in }),
                                b_value: pb.add(format!("{p}.glu.b_value"), vec![d], Init::Zeros),
                            };
                            (g, norm(&mut pb, &format!("{p}.norm_glu"), d))
                        });
                        DecoderLayer {
                            self_attn,
                            norm_self,
                            cross_attn,
                            norm_cross,
                            glu,
                            ffn: ffn(&mut pb, &format!("{p}.ffn"), d, config.d_ff),
                            norm_ffn: norm(&mut pb, &format!("{p}.norm_ffn"), d),
                        }
                    })
                    .collect();
                let head = dense(&mut pb, "head", d, config.output_dim);
                Layout::EncoderDecoder { enc_embed, encoder, dec_embed, decoder, head }
            }
        };
        Ok(Model { config: config.clone(), layout, params: pb.finish() })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Sublayer description, one entry per block, in execution order.
    pub fn layer_inventory(&self) -> Vec<String> {
        let mut out = Vec::new();
        match &self.layout {
            Layout::DLinear { .. } => out.extend(["decompose".into(), "linear.trend".into(), "linear.seasonal".into()]),
            Layout::NLinear { .. } => out.extend(["subtract_last".into(), "linear".into(), "add_last".into()]),
            Layout::EncoderDecoder { encoder, decoder, .. } => {
                out.push("enc_embed".into());
                for i in 0..encoder.len() {
                    out.push(format!("encoder.{i}.self_attn:mha"));
                    out.push(format!("encoder.{i}.ffn"));
                }
                out.push("dec_embed".into());
                let kind = match self.config.decoder_attention() {
                    AttentionKind::Dcf => "dcf",
                    AttentionKind::Mha => "mha",
                };
                for (i, layer) in decoder.iter().enumerate() {
                    out.push(format!("decoder.{i}.self_attn:{kind}"));
                    out.push(format!("decoder.{i}.cross_attn:{kind}"));
                    if layer.glu.is_some() {
                        out.push(format!("decoder.{i}.glu"));
                    }
                    out.push(format!("decoder.{i}.ffn"));
                }
                out.push("head".into());
            }
        }
        out
    }

    /// Runs the model on a tape with trainable parameters.
    /// Returns the forecast `[B, H, output_dim]` and the parameter leaves in
    /// declaration order.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        encoder_input: &Tensor<T>,
        decoder_input: &Tensor<T>,
        ctx: &mut ForwardCtx,
    ) -> Result<(Var, Vec<Var>)> {
        let vars = self.params.bind(tape, true);
        let enc = tape.constant(encoder_input.clone());
        let dec = tape.constant(decoder_input.clone());
        let out = self.forward_bound(tape, &vars, enc, dec, ctx)?;
        Ok((out, vars))
    }

    /// Evaluation-mode forecast.
    pub fn predict(&self, encoder_input: &Tensor<T>, decoder_input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let enc = tape.constant(encoder_input.clone());
        let dec = tape.constant(decoder_input.clone());
        let out = self.forward_bound(&mut tape, &vars, enc, dec, &mut ForwardCtx::eval())?;
        Ok(tape.value(out).clone())
    }

    /// Forward pass over parameter vars already on `tape` (as returned by
    /// [`ParamStore::bind`]).
    pub fn forward_bound(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        enc: Var,
        dec: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let cfg = &self.config;
        let es = tape.shape(enc).to_vec();
        if es.len() != 3 || es[1] != cfg.lookback || es[2] != cfg.input_dim {
            return Err(Error::dim(
                "model",
                format!("encoder input {es:?}, expected [B, {}, {}]", cfg.lookback, cfg.input_dim),
            ));
        }
        let v = |id: ParamId| vars[id.0];
        match &self.layout {
            Layout::DLinear { trend, seasonal } => {
                let x = tape.slice(enc, 2, cfg.target_feature, 1)?;
                let lv = |p: &LinearP| LinearVars { w: v(p.w), b: v(p.b) };
                dlinear_forward(tape, x, &lv(trend), &lv(seasonal), cfg.effective_moving_avg())
            }
            Layout::NLinear { lin } => {
                let x = tape.slice(enc, 2, cfg.target_feature, 1)?;
                nlinear_forward(tape, x, &LinearVars { w: v(lin.w), b: v(lin.b) })
            }
            Layout::EncoderDecoder { enc_embed, encoder, dec_embed, decoder, head } => {
                let ds = tape.shape(dec).to_vec();
                if ds.len() != 3 || ds[0] != es[0] || ds[1] != cfg.decoder_len() || ds[2] != cfg.input_dim {
                    return Err(Error::dim(
                        "model",
                        format!("decoder input {ds:?}, expected [{}, {}, {}]", es[0], cfg.decoder_len(), cfg.input_dim),
                    ));
                }
                let mut enc_cfg = AttentionConfig::new(cfg.d_model, cfg.n_heads)?;
                enc_cfg.dropout_rate = cfg.dropout_rate;
                let dec_cfg =
                    AttentionConfig { mask_mode: cfg.mask_mode, focus: FocusScope::Causal, ..enc_cfg.clone() };
                let ffn_vars =
                    |f: &FfnP| FeedForward { w1: v(f.up.w), b1: v(f.up.b), w2: v(f.down.w), b2: v(f.down.b) };
                let attn_vars = |a: &AttnP| AttentionWeights { wq: v(a.wq), wk: v(a.wk), wv: v(a.wv), wo: v(a.wo) };

                let mut x = self.embed(tape, enc_embed, vars, enc)?;
                for layer in encoder {
                    let a = standard_mha(tape, x, x, &attn_vars(&layer.attn), None, &enc_cfg, ctx)?;
                    x = add_norm(tape, x, a, v(layer.norm_attn.gain), v(layer.norm_attn.offset))?;
                    let f = feed_forward(tape, x, &ffn_vars(&layer.ffn), cfg.ffn_activation, cfg.dropout_rate, ctx)?;
                    x = add_norm(tape, x, f, v(layer.norm_ffn.gain), v(layer.norm_ffn.offset))?;
                }
                let memory = x;

                let causal = AttentionMask::causal(cfg.decoder_len());
                let use_dcf = cfg.decoder_attention() == AttentionKind::Dcf;
                let mut y = self.embed(tape, dec_embed, vars, dec)?;
                for layer in decoder {
                    let w = attn_vars(&layer.self_attn);
                    let a = if use_dcf {
                        dcf_attention(tape, y, y, &w, Some(&causal), &dec_cfg, ctx)?
                    } else {
                        standard_mha(tape, y, y, &w, Some(&causal), &enc_cfg, ctx)?
                    };
                    y = add_norm(tape, y, a, v(layer.norm_self.gain), v(layer.norm_self.offset))?;
                    let w = attn_vars(&layer.cross_attn);
                    let c = if use_dcf {
                        dcf_attention(tape, y, memory, &w, None, &dec_cfg, ctx)?
                    } else {
                        standard_mha(tape, y, memory, &w, None, &enc_cfg, ctx)?
                    };
                    y = add_norm(tape, y, c, v(layer.norm_cross.gain), v(layer.norm_cross.offset))?;
                    if let Some((g, n)) = &layer.glu {
                        let gw = GluWeights {
                            w_gate: v(g.w_gate),
                            b_gate: v(g.b_gate),
                            w_value: v(g.w_value),
                            b_value: v(g.b_value),
                        };
                        let gc = GluConfig { d_model: cfg.d_model, kernel: cfg.glu_kernel, causal: cfg.glu_causal };
                        let o = glu_forward(tape, y, &gw, &gc)?;
                        y = add_norm(tape, y, o, v(n.gain), v(n.offset))?;
                    }
                    let f = feed_forward(tape, y, &ffn_vars(&layer.ffn), cfg.ffn_activation, cfg.dropout_rate, ctx)?;
                    y = add_norm(tape, y, f, v(layer.norm_ffn.gain), v(layer.norm_ffn.offset))?;
                }
                let out = linear(tape, y, v(head.w), Some(v(head.b)))?;
                tape.slice(out, 1, cfg.label_len(), cfg.horizon)
            }
        }
    }

    fn embed(&self, tape: &mut Tape<T>, p: &EmbedP, vars: &[Var], x: Var) -> Result<Var> {
        let e = match *p {
            EmbedP::Dense(l) => linear(tape, x, vars[l.w.0], Some(vars[l.b.0]))?,
            EmbedP::TokenConv { w, b } => tape.conv1d(x, vars[w.0], Some(vars[b.0]), true)?,
        };
        match self.config.positional_embedding {
            PositionalEmbedding::None => Ok(e),
            PositionalEmbedding::Sinusoidal => {
                let len = tape.shape(e)[1];
                let pe = tape.constant(sinusoidal_encoding(len, self.config.d_model));
                tape.add(e, pe)
            }
        }
    }
}

impl<T: Scalar> Forecaster<T> for Model<T> {
    fn forecast(&self, batch: &Batch<T>) -> Result<Tensor<T>> {
        self.predict(&batch.encoder, &batch.decoder)
    }
}

/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(...)`.
pub fn sinusoidal_encoding<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * d);
    for p in 0..len {
        for j in 0..d {
            let rate = 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let a = p as f64 / rate;
            data.push(T::of(if j % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    Tensor::new(vec![len, d], data).expect("encoding shape is consistent")
}
