//! Deterministic gait-like recordings for desk-scale experiments.
//!
//! Layout: 11 EMG envelopes, 4 IMUs × 6 axes, 5 goniometer angles (40
//! sensor channels), then the clean `knee_angle` target. The knee target is
//! a three-harmonic function of gait phase spanning roughly 2–65 degrees;
//! `gon_knee` is a noisy measurement of it. `noise_std` is expressed in units
//! of each channel's nominal amplitude.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::table::RecordingTable;
use crate::error::{Error, Result};

pub const N_EMG: usize = 11;
pub const IMU_SEGMENTS: [&str; 4] = ["torso", "thigh", "shank", "foot"];
pub const IMU_AXES: [&str; 6] = ["acc_x", "acc_y", "acc_z", "gyr_x", "gyr_y", "gyr_z"];
pub const GON_CHANNELS: [&str; 5] = ["gon_hip_sag", "gon_hip_front", "gon_knee", "gon_ankle_sag", "gon_ankle_front"];
pub const N_FEATURES: usize = N_EMG + 24 + 5;
/// Position of `gon_knee` among the feature channels.
pub const GON_KNEE_INDEX: usize = N_EMG + 24 + 2;
pub const TARGET: &str = "knee_angle";
pub const HISTORY: &str = "gon_knee";

const KNEE_MEAN: f64 = 20.0;
const KNEE_HARMONICS: [(f64, f64); 3] = [(20.0, 1.69), (17.0, -2.64), (8.0, -1.26)];

/// Knee flexion in degrees at gait phase `phase ∈ [0, 1)`.
pub fn knee_angle(phase: f64) -> f64 {
    KNEE_MEAN
        + KNEE_HARMONICS
            .iter()
            .enumerate()
            .map(|(i, &(a, p))| a * (TAU * (i + 1) as f64 * phase + p).cos())
            .sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_cycles: usize,
    pub cycle_ms: usize,
    pub rate_hz: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_cycles: 60, cycle_ms: 1000, rate_hz: 1000, noise_std: 0.05, seed: 0 }
    }
}

pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = (0..N_EMG).map(|i| format!("emg_{i:02}")).collect();
    for seg in IMU_SEGMENTS {
        for axis in IMU_AXES {
            names.push(format!("imu_{seg}_{axis}"));
        }
    }
    names.extend(GON_CHANNELS.iter().map(|s| s.to_string()));
    names
}

/// Clean value and nominal amplitude of feature channel `c` at `phase`.
fn feature(c: usize, phase: f64) -> (f64, f64) {
    let cf = c as f64;
    if c < N_EMG {
        // half-wave rectified, squared burst centred at a channel-specific phase
        let onset = cf / N_EMG as f64;
        let a = (TAU * (phase - onset)).cos().max(0.0);
        return (a * a, 1.0);
    }
    if c < N_EMG + 24 {
        let k = cf - N_EMG as f64;
        let v = (TAU * phase + 0.37 * k).cos()
            + 0.5 * (2.0 * TAU * phase + 0.91 * k).sin()
            + 0.25 * (3.0 * TAU * phase - 0.53 * k).cos();
        return (v, 1.0);
    }
    match c - N_EMG - 24 {
        0 => (10.0 + 25.0 * (TAU * phase + 2.9).cos(), 25.0),
        1 => (4.0 * (TAU * phase).sin() + 2.0 * (2.0 * TAU * phase).cos(), 4.0),
        2 => (knee_angle(phase), 30.0),
        3 => (15.0 * (TAU * phase - 0.8).sin() + 6.0 * (2.0 * TAU * phase + 0.4).sin(), 15.0),
        _ => (3.0 * (TAU * phase + 1.1).cos(), 3.0),
    }
}

pub fn synth_gait(cfg: &SynthConfig) -> Result<RecordingTable> {
    if cfg.n_cycles == 0 || cfg.cycle_ms == 0 || cfg.rate_hz == 0 {
        return Err(Error::Config("n_cycles, cycle_ms and rate_hz must be >= 1".into()));
    }
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
        return Err(Error::Config(format!("noise_std {} must be finite and >= 0", cfg.noise_std)));
    }
    let rows = cfg.n_cycles * cfg.cycle_ms * cfg.rate_hz / 1000;
    let step = 1000.0 / cfg.rate_hz as f64;
    let time: Vec<f64> = (0..rows).map(|i| i as f64 * step).collect();
    let phase = |t: f64| (t % cfg.cycle_ms as f64) / cfg.cycle_ms as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut columns = Vec::with_capacity(N_FEATURES + 1);
    for c in 0..N_FEATURES {
        let col = time
            .iter()
            .map(|&t| {
                let (v, amp) = feature(c, phase(t));
                if cfg.noise_std > 0.0 {
                    v + cfg.noise_std * amp * unit.sample(&mut rng)
                } else {
                    v
                }
            })
            .collect();
        columns.push(col);
    }
    columns.push(time.iter().map(|&t| knee_angle(phase(t))).collect());
    let mut names = feature_names();
    names.push(TARGET.into());
    RecordingTable::new(time, names, columns)
}
