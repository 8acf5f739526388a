use serde::{Deserialize, Serialize};

use super::table::RecordingTable;
use crate::error::{DataError, Result};

/// Per-channel mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const MIN_STD: f64 = 1e-12;

pub fn fit_normalizer(train: &RecordingTable) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(DataError::Empty.into());
    }
    let n = train.len() as f64;
    let mut stats = NormalizationStats { names: Vec::new(), mean: Vec::new(), std: Vec::new() };
    for (name, col) in train.columns() {
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < MIN_STD {
            return Err(DataError::ZeroVariance(name.into()).into());
        }
        stats.names.push(name.into());
        stats.mean.push(mean);
        stats.std.push(std);
    }
    Ok(stats)
}

impl NormalizationStats {
    pub fn index(&self, name: &str) -> Result<usize, DataError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| DataError::ChannelMismatch(format!("no statistics for channel `{name}`")))
    }

    pub fn normalize(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    pub fn denormalize(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }

    /// Restricts the statistics to the named channels, in that order.
    pub fn subset(&self, names: &[String]) -> Result<Self> {
        let idx = names.iter().map(|n| self.index(n)).collect::<Result<Vec<_>, _>>()?;
        Ok(NormalizationStats {
            names: names.to_vec(),
            mean: idx.iter().map(|&i| self.mean[i]).collect(),
            std: idx.iter().map(|&i| self.std[i]).collect(),
        })
    }

    fn transform(&self, table: &RecordingTable, inverse: bool) -> Result<RecordingTable> {
        let idx = table.names().iter().map(|n| self.index(n)).collect::<Result<Vec<_>, _>>()?;
        Ok(table.map_columns(|c, col| {
            let k = idx[c];
            col.iter().map(|&v| if inverse { self.denormalize(k, v) } else { self.normalize(k, v) }).collect()
        }))
    }
}

pub fn apply_normalizer(table: &RecordingTable, stats: &NormalizationStats) -> Result<RecordingTable> {
    stats.transform(table, false)
}

pub fn denormalize_table(table: &RecordingTable, stats: &NormalizationStats) -> Result<RecordingTable> {
    stats.transform(table, true)
}
