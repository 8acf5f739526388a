mod common;

use common::{check_metrics_case, metric_cases};
use fgn_core::data::{prepare, synth, synth_gait, Batch, RecordingTable, SynthConfig, WindowSpec};
use fgn_core::metrics::{bench_inference, evaluate, AblationGrid, AblationRow, RSquared};
use fgn_core::model::{Ablation, Forecaster, Model, ModelConfig, Variant};
use fgn_core::tensor::{Scalar, Tensor};
use fgn_core::{DataError, Error};
use proptest::prelude::*;

#[test]
fn matches_brute_force_reference() {
    for (i, (pred, truth)) in metric_cases(40, 1000).iter().enumerate() {
        if let Err(e) = check_metrics_case(pred, truth, 1e-9) {
            panic!("case {i} (n = {}): {e}", truth.len());
        }
    }
}

proptest! {
    #[test]
    fn rmse_dominates_mae(v in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..200)) {
        let (p, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let m = fgn_core::metrics::compute_metrics(&p, &y).unwrap();
        prop_assert!(m.rmse >= m.mae);
        prop_assert!(m.mae >= 0.0 && m.mape >= 0.0);
        if let RSquared::Percent(r) = m.r2 {
            prop_assert!(r <= 100.0);
            prop_assert_eq!(r == 100.0, p == y);
        }
    }
}

/// Returns the batch's own target.
struct Echo;

impl<T: Scalar> Forecaster<T> for Echo {
    fn forecast(&self, batch: &Batch<T>) -> fgn_core::Result<Tensor<T>> {
        Ok(batch.target.clone())
    }
}

/// Returns zeros in original units.
struct Zero(f64);

impl<T: Scalar> Forecaster<T> for Zero {
    fn forecast(&self, batch: &Batch<T>) -> fgn_core::Result<Tensor<T>> {
        let mut t = batch.target.clone();
        t.data_mut().iter_mut().for_each(|v| *v = T::of(self.0));
        Ok(t)
    }
}

fn gait(h: usize) -> fgn_core::data::PreparedData<f32> {
    let table = synth_gait(&SynthConfig { n_cycles: 4, ..Default::default() }).unwrap();
    let spec = WindowSpec { lookback: 8, label_len: 4, horizon: h, stride: 5 };
    prepare(&table, &synth::feature_names(), synth::TARGET, spec, 0.8, 0.1).unwrap()
}

#[test]
fn oracle_forecaster_is_perfect() {
    let data = gait(5);
    let m = evaluate(&Echo, &data.test, &data.target_stats, 16).unwrap();
    assert_eq!((m.mae, m.rmse, m.mape), (0.0, 0.0, 0.0));
    assert_eq!(m.r2, RSquared::Percent(100.0));
    assert_eq!(m.n, data.test.len() * 5);
}

#[test]
fn constant_zero_forecast_has_negative_r2() {
    let data = gait(5);
    // normalised value that denormalises to 0 degrees
    let z = -data.target_stats.mean[0] / data.target_stats.std[0];
    let m = evaluate(&Zero(z), &data.test, &data.target_stats, 16).unwrap();
    assert!(matches!(m.r2, RSquared::Percent(r) if r < 0.0), "{:?}", m.r2);
}

#[test]
fn zero_nlinear_is_exact_on_a_flat_test_region() {
    // ramp over the training rows, flat afterwards
    let n = 200;
    let time: Vec<f64> = (0..n).map(f64::from).collect();
    let y: Vec<f64> = (0..n).map(|i| f64::from(i.min(150))).collect();
    let table = RecordingTable::new(time, vec!["y".into()], vec![y]).unwrap();
    let spec = WindowSpec { lookback: 8, label_len: 4, horizon: 4, stride: 1 };
    let names = ["y".to_string()];
    let data = prepare::<f32>(&table, &names, "y", spec, 0.8, 0.1).unwrap();
    let cfg = ModelConfig { variant: Variant::Nlinear, input_dim: 1, target_feature: 0, ..ModelConfig::toy() };
    let mut model = Model::<f32>::build(&cfg, 0).unwrap();
    for t in model.params_mut().tensors_mut() {
        t.data_mut().fill(0.0);
    }
    let m = evaluate(&model, &data.test, &data.target_stats, 8).unwrap();
    assert_eq!(m.mae, 0.0);
    assert_eq!(m.r2, RSquared::Undefined);
}

#[test]
fn target_statistics_must_be_single_channel() {
    let data = gait(5);
    let err = evaluate(&Echo, &data.test, &data.feature_stats, 16).unwrap_err();
    assert!(matches!(err, Error::Data(DataError::ChannelMismatch(_))), "{err}");
}

#[test]
fn wrong_forecast_shape_is_rejected() {
    struct Short;
    impl Forecaster<f32> for Short {
        fn forecast(&self, batch: &Batch<f32>) -> fgn_core::Result<Tensor<f32>> {
            Ok(Tensor::zeros(vec![batch.starts.len(), 1, 1]))
        }
    }
    let data = gait(5);
    assert!(matches!(evaluate(&Short, &data.test, &data.target_stats, 16), Err(Error::Dimension { .. })));
}

#[test]
fn timing_statistics() {
    let data = gait(20);
    let batch = data.test.batch(&(0..8).collect::<Vec<_>>());
    let cfg = ModelConfig { horizon: 20, ..ModelConfig::toy() };
    let fgn = Model::<f32>::build(&cfg, 0).unwrap();
    let one = bench_inference(&fgn, &batch, 0, 1).unwrap();
    assert_eq!(one.p50_ms, one.mean_ms);
    assert_eq!(one.p95_ms, one.mean_ms);
    let t = bench_inference(&fgn, &batch, 2, 15).unwrap();
    assert_eq!((t.batch_size, t.n_trials), (8, 15));
    assert!(t.mean_ms > 0.0 && t.mean_ms.is_finite());
    assert!(t.p50_ms <= t.p95_ms);
    assert!(bench_inference(&fgn, &batch, 0, 0).is_err());

    let lin = ModelConfig { variant: Variant::Dlinear, target_feature: synth::GON_KNEE_INDEX, ..cfg };
    let dlinear = Model::<f32>::build(&lin, 0).unwrap();
    let d = bench_inference(&dlinear, &batch, 2, 15).unwrap();
    assert!(d.p50_ms < t.p50_ms, "DLinear {} ms vs FocalGatedNet {} ms", d.p50_ms, t.p50_ms);
}

#[test]
fn ablation_grid_bolds_row_minima() {
    let row = |h, a, mae, rmse| AblationRow { horizon_steps: h, ablation: a, mae, rmse };
    let grid = AblationGrid {
        horizons: vec![1, 20],
        rows: vec![
            row(1, Ablation::GluDcf, 0.5, 0.9),
            row(1, Ablation::DcfOnly, 0.7, 0.8),
            row(1, Ablation::GluOnly, 0.6, 1.0),
            row(20, Ablation::GluDcf, 2.0, 3.0),
            row(20, Ablation::DcfOnly, 2.5, 3.5),
        ],
    };
    let text = grid.render(1.0);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("Horizon") && lines[0].contains("GLU+DCF MAE"));
    let cells: Vec<&str> = lines[2].split_whitespace().collect();
    assert_eq!(cells, ["1", "ms", "**0.500**", "0.900", "0.700", "**0.800**", "0.600", "1.000"]);
    let cells: Vec<&str> = lines[3].split_whitespace().collect();
    assert_eq!(cells, ["20", "ms", "**2.000**", "**3.000**", "2.500", "3.500", "-", "-"]);
}
