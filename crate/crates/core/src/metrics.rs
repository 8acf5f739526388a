//! Forecast error metrics, evaluation, ablation grids and latency timing.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{NormalizationStats, WindowSet};
use crate::error::{DataError, Error, Result};
use crate::model::Forecaster;
use crate::tensor::Scalar;

/// Floor on `|y|` in the MAPE denominator, in degrees.
pub const MAPE_DELTA: f64 = 1e-2;

/// Coefficient of determination in percent; undefined for constant truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RSquared {
    Percent(f64),
    Undefined,
}

impl RSquared {
    pub fn value(self) -> Option<f64> {
        match self {
            RSquared::Percent(v) => Some(v),
            RSquared::Undefined => None,
        }
    }
}

impl std::fmt::Display for RSquared {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RSquared::Percent(v) => write!(f, "{v:.2}"),
            RSquared::Undefined => f.write_str("undef"),
        }
    }
}

impl Serialize for RSquared {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            RSquared::Percent(v) => s.serialize_f64(*v),
            RSquared::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for RSquared {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(RSquared::Percent(v)),
            Repr::Text(s) if s == "undefined" => Ok(RSquared::Undefined),
            Repr::Text(s) => Err(serde::de::Error::custom(format!("bad r2 value {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Fraction, not percent.
    pub mape: f64,
    pub r2: RSquared,
    pub n: usize,
}

pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Metric(format!("{} predictions vs {} targets", pred.len(), truth.len())));
    }
    let n = pred.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let (mut abs, mut sse, mut ape, mut sst) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &y) in pred.iter().zip(truth) {
        let e = p - y;
        abs += e.abs();
        sse += e * e;
        ape += e.abs() / y.abs().max(MAPE_DELTA);
        sst += (y - mean) * (y - mean);
    }
    // the float mean of a constant series need not equal it, so test directly
    let r2 = if truth.iter().all(|&y| y == truth[0]) {
        RSquared::Undefined
    } else if sse == 0.0 {
        RSquared::Percent(100.0)
    } else {
        // rounding must not report a perfect score for an imperfect fit
        RSquared::Percent((100.0 * (1.0 - sse / sst)).min(100f64.next_down()))
    };
    let mae = abs / n;
    // RMSE >= MAE holds exactly; the max only absorbs last-bit rounding
    Ok(Metrics { mae, rmse: (sse / n).sqrt().max(mae), mape: ape / n, r2, n: pred.len() })
}

/// Denormalises forecasts with the training statistics and pools every
/// horizon step of every window.
pub fn evaluate<T: Scalar, F: Forecaster<T> + ?Sized>(
    model: &F,
    test: &WindowSet<T>,
    target_stats: &NormalizationStats,
    batch_size: usize,
) -> Result<Metrics> {
    let (pred, truth) = collect_predictions(model, test, target_stats, batch_size)?;
    compute_metrics(&pred, &truth)
}

/// Denormalised `(prediction, truth)` pairs over a whole window set.
pub fn collect_predictions<T: Scalar, F: Forecaster<T> + ?Sized>(
    model: &F,
    set: &WindowSet<T>,
    target_stats: &NormalizationStats,
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if target_stats.names.len() != 1 {
        return Err(DataError::ChannelMismatch(format!(
            "expected statistics for one target channel, got {:?}",
            target_stats.names
        ))
        .into());
    }
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for b in set.batches(batch_size) {
        let p = model.forecast(&b)?;
        if p.shape() != b.target.shape() {
            return Err(Error::shapes("evaluate", p.shape(), b.target.shape()));
        }
        pred.extend(p.data().iter().map(|v| target_stats.denormalize(0, v.f64())));
        truth.extend(b.target.data().iter().map(|v| target_stats.denormalize(0, v.f64())));
    }
    Ok((pred, truth))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub batch_size: usize,
    pub n_trials: usize,
    /// Per forward pass, milliseconds.
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl TimingStats {
    pub fn per_window_ms(&self) -> f64 {
        self.mean_ms / self.batch_size as f64
    }
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn bench_inference<T: Scalar, F: Forecaster<T> + ?Sized>(
    model: &F,
    batch: &crate::data::Batch<T>,
    n_warmup: usize,
    n_trials: usize,
) -> Result<TimingStats> {
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be >= 1".into()));
    }
    for _ in 0..n_warmup {
        model.forecast(batch)?;
    }
    let mut times = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let t0 = Instant::now();
        let out = model.forecast(batch)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    let mean_ms = times.iter().sum::<f64>() / n_trials as f64;
    times.sort_by(f64::total_cmp);
    Ok(TimingStats {
        batch_size: batch.starts.len(),
        n_trials,
        mean_ms,
        p50_ms: percentile(&times, 0.5),
        p95_ms: percentile(&times, 0.95),
    })
}

/// One model's test result at one horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub horizon_steps: usize,
    pub horizon_ms: f64,
    pub metrics: Metrics,
    pub mape_delta: f64,
}

const TABLE_HEADER: [&str; 6] = ["Model", "Horizon", "MAE", "RMSE", "MAPE", "R² (%)"];

pub fn format_row(r: &MetricsReport) -> [String; 6] {
    let m = &r.metrics;
    [
        r.model.clone(),
        format!("{} ms", r.horizon_ms),
        format!("{:.3}", m.mae),
        format!("{:.3}", m.rmse),
        format!("{:.3}", m.mape),
        m.r2.to_string(),
    ]
}

fn aligned(rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, &w))| {
                let pad = w - s.chars().count();
                if c == 0 {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// Aligned text table with the MAPE convention in the footer.
pub fn render_reports(reports: &[MetricsReport]) -> String {
    let mut rows = vec![TABLE_HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    rows.extend(reports.iter().map(|r| format_row(r).to_vec()));
    let mut out = aligned(&rows);
    let _ = writeln!(
        out,
        "\nMAPE is a fraction with denominator max(|y|, {MAPE_DELTA}) degrees; errors pooled over all horizon steps."
    );
    out
}

pub fn render_timing(model: &str, t: &TimingStats) -> String {
    format!(
        "Inference timing ({model}, batch {}, {} trials)\n  mean {:.3} ms  p50 {:.3} ms  p95 {:.3} ms  per window {:.4} ms\n",
        t.batch_size,
        t.n_trials,
        t.mean_ms,
        t.p50_ms,
        t.p95_ms,
        t.per_window_ms()
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub horizon_steps: usize,
    pub ablation: crate::model::Ablation,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub horizons: Vec<usize>,
    pub rows: Vec<AblationRow>,
}

impl AblationGrid {
    pub fn get(&self, horizon: usize, ablation: crate::model::Ablation) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.horizon_steps == horizon && r.ablation == ablation)
    }

    /// One line per horizon, MAE/RMSE per variant; per-line minima in bold.
    pub fn render(&self, ms_per_step: f64) -> String {
        use crate::model::Ablation;
        let mut head = vec!["Horizon".to_string()];
        for a in Ablation::ALL {
            head.push(format!("{} MAE", a.label()));
            head.push(format!("{} RMSE", a.label()));
        }
        let mut rows = vec![head];
        for &h in &self.horizons {
            let cells: Vec<Option<&AblationRow>> = Ablation::ALL.iter().map(|&a| self.get(h, a)).collect();
            let best = |f: fn(&AblationRow) -> f64| cells.iter().flatten().map(|r| f(r)).fold(f64::INFINITY, f64::min);
            let (bm, br) = (best(|r| r.mae), best(|r| r.rmse));
            let mut row = vec![format!("{} ms", h as f64 * ms_per_step)];
            for c in &cells {
                let fmt = |v: f64, b: f64| {
                    let s = format!("{v:.3}");
                    if v == b {
                        format!("**{s}**")
                    } else {
                        s
                    }
                };
                match c {
                    Some(r) => {
                        row.push(fmt(r.mae, bm));
                        row.push(fmt(r.rmse, br));
                    }
                    None => row.extend(["-".to_string(), "-".to_string()]),
                }
            }
            rows.push(row);
        }
        aligned(&rows)
    }
}
