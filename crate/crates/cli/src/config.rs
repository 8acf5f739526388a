//! Run files: TOML with `[model]`, `[train]` and `[data]` tables.
//!
//! ```toml
//! preset = "toy"          # or "full"; [model] keys override it
//! out = "runs/h20"        # output directory, relative to this file
//!
//! [model]
//! horizon = 20
//!
//! [train]
//! base_lr = 3e-3
//! seed = 0                # FGN_SEED and --seed override this
//!
//! [data]
//! path = "gait.csv"       # omit to use the synthetic generator
//! stride = 20
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fgn_core::experiment::{DataConfig, ExperimentConfig};
use fgn_core::train::TrainRunConfig;
use fgn_core::ModelConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// d_model 16, one layer each side, lookback 8.
    #[default]
    Toy,
    /// d_model 512, 3 encoder and 2 decoder layers, lookback 128.
    Full,
}

impl Preset {
    fn model(self) -> ModelConfig {
        match self {
            Preset::Toy => ModelConfig::toy(),
            Preset::Full => ModelConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunFile {
    pub preset: Preset,
    pub out: Option<PathBuf>,
    pub model: toml::Table,
    pub train: TrainRunConfig,
    pub data: DataConfig,
}

/// A fully resolved run: every model field explicit.
#[derive(Clone, Debug)]
pub struct Run {
    pub experiment: ExperimentConfig,
    pub out: Option<PathBuf>,
}

impl RunFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`; data and output paths in it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut file = Self::parse(&text).with_context(|| format!("config error in {}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        file.data.path = file.data.path.map(|p| dir.join(p));
        file.out = file.out.map(|p| dir.join(p));
        Ok(file)
    }

    pub fn resolve(&self) -> Result<Run> {
        let mut model = toml::Table::try_from(self.preset.model())?;
        model.extend(self.model.clone());
        let model: ModelConfig = model.try_into().context("config error in [model]")?;
        Ok(Run {
            experiment: ExperimentConfig { model, train: self.train.clone(), data: self.data.clone() },
            out: self.out.clone(),
        })
    }
}

impl Run {
    /// Explicit run file reproducing this run.
    pub fn to_toml(&self) -> Result<String> {
        let file = RunFile {
            preset: Preset::Toy,
            out: None,
            model: toml::Table::try_from(&self.experiment.model)?,
            train: self.experiment.train.clone(),
            data: self.experiment.data.clone(),
        };
        Ok(toml::to_string(&file)?)
    }
}

pub fn load_or_default(path: Option<&Path>) -> Result<Run> {
    match path {
        Some(p) => RunFile::load(p)?.resolve(),
        None => RunFile::default().resolve(),
    }
}
