use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::normalize::{fit_normalizer, NormalizationStats};
use super::table::RecordingTable;
use crate::error::{DataError, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lookback: usize,
    pub label_len: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn span(&self) -> usize {
        self.lookback + self.horizon
    }

    fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 || self.stride == 0 || self.label_len > self.lookback {
            return Err(Error::Config(format!("invalid window spec {self:?}")));
        }
        Ok(())
    }
}

/// `floor((len - L_in - H) / stride) + 1`, or 0 when the span does not fit.
pub fn window_count(len: usize, spec: &WindowSpec) -> usize {
    if len < spec.span() {
        0
    } else {
        (len - spec.span()) / spec.stride + 1
    }
}

/// Start rows of every window lying entirely inside `region`.
pub fn window_starts(region: Range<usize>, spec: &WindowSpec) -> Vec<usize> {
    let n = window_count(region.len(), spec);
    (0..n).map(|i| region.start + i * spec.stride).collect()
}

/// Contiguous row ranges: training, validation (tail of the training split)
/// and test.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitPlan {
    /// First row of the test split; everything before it is training data.
    pub fn boundary(&self) -> usize {
        self.test.start
    }
}

pub fn split_rows(len: usize, split: f64, val_fraction: f64) -> Result<SplitPlan> {
    if !(0.0 < split && split < 1.0) || !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("split {split} / validation fraction {val_fraction} out of range")));
    }
    let boundary = (len as f64 * split).floor() as usize;
    let val_len = (boundary as f64 * val_fraction).floor() as usize;
    Ok(SplitPlan { train: 0..boundary - val_len, val: boundary - val_len..boundary, test: boundary..len })
}

/// Train/test window start rows for a table of `len` rows.
pub fn make_windows(len: usize, spec: &WindowSpec, split: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    if len < spec.span() {
        return Err(DataError::TooShort { len, needed: spec.span() }.into());
    }
    let plan = split_rows(len, split, 0.0)?;
    Ok((window_starts(plan.train, spec), window_starts(plan.test, spec)))
}

#[derive(Debug)]
struct Source<T> {
    n_features: usize,
    /// Row-major `[len, n_features]`, normalised.
    features: Vec<T>,
    target: Vec<T>,
    target_raw: Vec<f64>,
    time_ms: Vec<f64>,
}

/// One materialised window.
#[derive(Clone, Debug)]
pub struct WindowedSample<T> {
    pub start: usize,
    /// `[L_in, F]`
    pub encoder: Tensor<T>,
    /// `[label_len + H, F]`; the last `H` rows are zero.
    pub decoder: Tensor<T>,
    /// `[H, 1]`, normalised.
    pub target: Tensor<T>,
    /// Target in original units.
    pub target_raw: Vec<f64>,
}

/// Stacked windows.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub starts: Vec<usize>,
    /// `[B, L_in, F]`
    pub encoder: Tensor<T>,
    /// `[B, label_len + H, F]`
    pub decoder: Tensor<T>,
    /// `[B, H, 1]`, normalised.
    pub target: Tensor<T>,
    /// `B * H` values in original units.
    pub target_raw: Vec<f64>,
}

/// Windows over a shared, read-only normalised recording.
#[derive(Clone, Debug)]
pub struct WindowSet<T> {
    source: Arc<Source<T>>,
    starts: Vec<usize>,
    spec: WindowSpec,
}

impl<T: Scalar> WindowSet<T> {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn n_features(&self) -> usize {
        self.source.n_features
    }

    /// Time stamps covered by window `i`, lookback through horizon.
    pub fn time_span(&self, i: usize) -> (f64, f64) {
        let s = self.starts[i];
        (self.source.time_ms[s], self.source.time_ms[s + self.spec.span() - 1])
    }

    pub fn sample(&self, i: usize) -> WindowedSample<T> {
        let b = self.batch(&[i]);
        let f = self.n_features();
        let (l, d, h) = (self.spec.lookback, self.spec.label_len + self.spec.horizon, self.spec.horizon);
        WindowedSample {
            start: self.starts[i],
            encoder: b.encoder.reshape(vec![l, f]).expect("window shape"),
            decoder: b.decoder.reshape(vec![d, f]).expect("window shape"),
            target: b.target.reshape(vec![h, 1]).expect("window shape"),
            target_raw: b.target_raw,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch<T> {
        let src = &*self.source;
        let f = src.n_features;
        let WindowSpec { lookback: l, label_len, horizon: h, .. } = self.spec;
        let dec_len = label_len + h;
        let bsz = indices.len();
        let mut enc = Vec::with_capacity(bsz * l * f);
        let mut dec = Vec::with_capacity(bsz * dec_len * f);
        let mut tgt = Vec::with_capacity(bsz * h);
        let mut raw = Vec::with_capacity(bsz * h);
        let mut starts = Vec::with_capacity(bsz);
        for &i in indices {
            let s = self.starts[i];
            starts.push(s);
            enc.extend_from_slice(&src.features[s * f..(s + l) * f]);
            dec.extend_from_slice(&src.features[(s + l - label_len) * f..(s + l) * f]);
            dec.extend(std::iter::repeat_n(T::zero(), h * f));
            tgt.extend_from_slice(&src.target[s + l..s + l + h]);
            raw.extend_from_slice(&src.target_raw[s + l..s + l + h]);
        }
        Batch {
            starts,
            encoder: Tensor::new(vec![bsz, l, f], enc).expect("batch shape"),
            decoder: Tensor::new(vec![bsz, dec_len, f], dec).expect("batch shape"),
            target: Tensor::new(vec![bsz, h, 1], tgt).expect("batch shape"),
            target_raw: raw,
        }
    }

    /// Consecutive batches of at most `batch_size` windows, in index order.
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = Batch<T>> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let chunks: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |c| self.batch(&c))
    }
}

/// Normalised windows for all three splits plus the statistics used.
#[derive(Clone, Debug)]
pub struct PreparedData<T> {
    pub train: WindowSet<T>,
    pub val: WindowSet<T>,
    pub test: WindowSet<T>,
    pub feature_stats: NormalizationStats,
    pub target_stats: NormalizationStats,
    pub plan: SplitPlan,
}

/// Splits, normalises with training-split statistics, and windows `table`.
pub fn prepare<T: Scalar>(
    table: &RecordingTable,
    features: &[String],
    target: &str,
    spec: WindowSpec,
    split: f64,
    val_fraction: f64,
) -> Result<PreparedData<T>> {
    spec.validate()?;
    if features.is_empty() {
        return Err(Error::Config("no input features selected".into()));
    }
    let plan = split_rows(table.len(), split, val_fraction)?;
    if plan.boundary() == 0 {
        return Err(DataError::TooShort { len: table.len(), needed: spec.span() }.into());
    }
    let train_rows = table.slice_rows(0..plan.boundary())?;
    let feature_stats = fit_normalizer(&train_rows.select(features)?)?;
    let target_stats = fit_normalizer(&train_rows.select(&[target.to_string()])?)?;

    let n = table.len();
    let f = features.len();
    let cols = features.iter().map(|c| table.column(c)).collect::<Result<Vec<_>, _>>()?;
    let mut data = vec![T::zero(); n * f];
    for (c, col) in cols.iter().enumerate() {
        for r in 0..n {
            data[r * f + c] = T::of(feature_stats.normalize(c, col[r]));
        }
    }
    let raw = table.column(target)?.to_vec();
    let norm = raw.iter().map(|&v| T::of(target_stats.normalize(0, v))).collect();
    let source = Arc::new(Source {
        n_features: f,
        features: data,
        target: norm,
        target_raw: raw,
        time_ms: table.time_ms().to_vec(),
    });
    let set = |region: Range<usize>, required: bool| -> Result<WindowSet<T>> {
        let starts = window_starts(region.clone(), &spec);
        if required && starts.is_empty() {
            return Err(DataError::TooShort { len: region.len(), needed: spec.span() }.into());
        }
        Ok(WindowSet { source: Arc::clone(&source), starts, spec })
    };
    Ok(PreparedData {
        train: set(plan.train.clone(), true)?,
        val: set(plan.val.clone(), val_fraction > 0.0)?,
        test: set(plan.test.clone(), true)?,
        feature_stats,
        target_stats,
        plan,
    })
}
