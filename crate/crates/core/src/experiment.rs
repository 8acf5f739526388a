//! Wiring from a data source and configs to trained models and reports.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{
    load_csv, prepare, resample_linear, synth, synth_gait, CsvSchema, PreparedData, RecordingTable, SynthConfig,
    WindowSpec, TIME_COLUMN,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, AblationGrid, AblationRow, Metrics, MetricsReport, RSquared, MAPE_DELTA};
use crate::model::{Ablation, Model, ModelConfig, Variant};
use crate::train::{train, LossTrace, TrainRunConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CSV recording; the synthetic generator is used when absent.
    pub path: Option<PathBuf>,
    pub time_column: String,
    pub features: Vec<String>,
    pub target: String,
    /// Feature column holding the measured history of the target, used by
    /// the single-channel baselines.
    pub history: Option<String>,
    pub resample_hz: Option<f64>,
    pub stride: usize,
    pub split: f64,
    pub val_fraction: f64,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            time_column: TIME_COLUMN.into(),
            features: synth::feature_names(),
            target: synth::TARGET.into(),
            history: Some(synth::HISTORY.into()),
            resample_hz: None,
            stride: 1,
            split: 0.8,
            val_fraction: 0.1,
            synth: SynthConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn load(&self) -> Result<RecordingTable> {
        let table = match &self.path {
            Some(p) => {
                let mut columns = self.features.clone();
                if !columns.contains(&self.target) {
                    columns.push(self.target.clone());
                }
                load_csv(p, &CsvSchema { time_column: self.time_column.clone(), columns })?
            }
            None => synth_gait(&self.synth)?,
        };
        match self.resample_hz {
            Some(hz) => resample_linear(&table, hz),
            None => Ok(table),
        }
    }

    /// Fills in the data-dependent model fields: `input_dim` and
    /// `target_feature`.
    pub fn bind_model(&self, model: &ModelConfig) -> Result<ModelConfig> {
        let mut m = model.clone();
        m.input_dim = self.features.len();
        let hist = self.history.as_ref().and_then(|h| self.features.iter().position(|f| f == h));
        match hist {
            Some(i) => m.target_feature = i,
            None if m.is_linear() => {
                return Err(Error::Config(format!("{} needs a `history` column among the features", m.variant.name())))
            }
            None => m.target_feature = 0,
        }
        m.validate()?;
        Ok(m)
    }

    pub fn prepare(&self, table: &RecordingTable, model: &ModelConfig) -> Result<PreparedData<f32>> {
        let spec = WindowSpec {
            lookback: model.lookback,
            label_len: model.label_len(),
            horizon: model.horizon,
            stride: self.stride,
        };
        prepare(table, &self.features, &self.target, spec, self.split, self.val_fraction)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainRunConfig,
    pub data: DataConfig,
}

pub fn display_name(cfg: &ModelConfig) -> String {
    match (cfg.variant, cfg.ablation) {
        (Variant::Focalgatednet, Ablation::GluDcf)
        | (Variant::Transformer | Variant::Dlinear | Variant::Nlinear, _) => cfg.variant.name().into(),
        (Variant::Focalgatednet, a) => format!("FocalGatedNet ({})", a.label()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub seed: u64,
    pub best_val_loss: f64,
    pub test: Metrics,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    /// Restart with the lowest validation loss.
    pub model: Model<f32>,
    pub trace: LossTrace,
    pub report: MetricsReport,
    pub restarts: Vec<RestartRecord>,
    /// Test metrics averaged over restarts.
    pub mean_test: Metrics,
}

/// Milliseconds per sample of the prepared recording.
pub fn step_ms(table: &RecordingTable) -> f64 {
    table.sample_rate_hz().map_or(1.0, |hz| 1000.0 / hz)
}

/// Trains `restarts` independently initialised models on fixed splits.
pub fn run_experiment(
    model_cfg: &ModelConfig,
    run: &TrainRunConfig,
    data: &PreparedData<f32>,
    ms_per_step: f64,
) -> Result<ExperimentOutcome> {
    run.validate()?;
    let mut best: Option<(Model<f32>, LossTrace)> = None;
    let mut restarts = Vec::with_capacity(run.restarts);
    for r in 0..run.restarts as u64 {
        let seed = run.seed.wrapping_add(r);
        let mut model = Model::<f32>::build(model_cfg, seed)?;
        let trace = train(&mut model, &data.train, &data.val, &TrainRunConfig { seed, ..run.clone() })?;
        let test = evaluate(&model, &data.test, &data.target_stats, run.batch_size)?;
        restarts.push(RestartRecord { seed, best_val_loss: trace.best_val_loss, test });
        if best.as_ref().is_none_or(|(_, t)| trace.best_val_loss < t.best_val_loss) {
            best = Some((model, trace));
        }
    }
    let (model, trace) = best.expect("at least one restart");
    let chosen = restarts.iter().find(|r| r.best_val_loss == trace.best_val_loss).expect("recorded").test;
    let report = MetricsReport {
        model: display_name(model_cfg),
        horizon_steps: model_cfg.horizon,
        horizon_ms: model_cfg.horizon as f64 * ms_per_step,
        metrics: chosen,
        mape_delta: MAPE_DELTA,
    };
    Ok(ExperimentOutcome { model, trace, report, mean_test: mean_metrics(&restarts), restarts })
}

fn mean_metrics(runs: &[RestartRecord]) -> Metrics {
    let k = runs.len() as f64;
    let avg = |f: fn(&Metrics) -> f64| runs.iter().map(|r| f(&r.test)).sum::<f64>() / k;
    let r2: Option<Vec<f64>> = runs.iter().map(|r| r.test.r2.value()).collect();
    Metrics {
        mae: avg(|m| m.mae),
        rmse: avg(|m| m.rmse),
        mape: avg(|m| m.mape),
        r2: r2.map_or(RSquared::Undefined, |v| RSquared::Percent(v.iter().sum::<f64>() / k)),
        n: runs[0].test.n,
    }
}

pub const ABLATION_HORIZONS: [usize; 6] = [1, 20, 40, 60, 80, 100];

/// Trains every ablation variant at every horizon with identical seeds and
/// data, one model per cell.
pub fn run_ablation(base: &ExperimentConfig, table: &RecordingTable, horizons: &[usize]) -> Result<AblationGrid> {
    let mut rows = Vec::with_capacity(horizons.len() * Ablation::ALL.len());
    for &h in horizons {
        let mut cfg =
            base.data.bind_model(&ModelConfig { horizon: h, variant: Variant::Focalgatednet, ..base.model.clone() })?;
        let data = base.data.prepare(table, &cfg)?;
        for a in Ablation::ALL {
            cfg.ablation = a;
            let out = run_experiment(&cfg, &base.train, &data, step_ms(table))?;
            rows.push(AblationRow {
                horizon_steps: h,
                ablation: a,
                mae: out.report.metrics.mae,
                rmse: out.report.metrics.rmse,
            });
        }
    }
    Ok(AblationGrid { horizons: horizons.to_vec(), rows })
}
