//! Shared fixtures for the criterion benches.

use fgn_core::data::Batch;
use fgn_core::{Model, ModelConfig, Tensor};

/// Builds a model and a random-free batch of the given size.
pub fn fixture(cfg: &ModelConfig, batch: usize) -> (Model<f32>, Batch<f32>) {
    let model = Model::build(cfg, 0).expect("bench config is valid");
    let f = cfg.input_dim;
    let ramp = |len: usize| {
        let data = (0..batch * len * f).map(|i| ((i % 97) as f32 / 97.0) - 0.5).collect();
        Tensor::new(vec![batch, len, f], data).expect("shape")
    };
    let b = Batch {
        starts: (0..batch).collect(),
        encoder: ramp(cfg.lookback),
        decoder: ramp(cfg.decoder_len()),
        target: Tensor::zeros(vec![batch, cfg.horizon, cfg.output_dim]),
        target_raw: vec![0.0; batch * cfg.horizon],
    };
    (model, b)
}
