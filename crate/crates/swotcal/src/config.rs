//! Experiment configuration: a strict-schema JSON document with one master
//! seed. Unknown keys fail fast with the offending key named; every run
//! logs the fully resolved config and its hash.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calnet::ArchConfig;
use crate::error::{Result, SwotError};
use crate::fieldgen::GriddedPreset;
use crate::osse::{default_error_params, ErrorParams, FieldParams, GridParams};
use crate::scale_space::{default_scales, ScaleList};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleParams {
    pub n_bands: usize,
    pub delta_km: f64,
}

impl Default for ScaleParams {
    fn default() -> Self {
        ScaleParams { n_bands: 20, delta_km: 8.0 }
    }
}

impl ScaleParams {
    pub fn scales(&self) -> Result<ScaleList> {
        default_scales(self.n_bands, self.delta_km)
    }

    /// Parse the "NxD" grammar, e.g. "20x8" for 20 bands spaced 8 km.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('x').collect();
        if parts.len() != 2 {
            return Err(SwotError::Config(format!(
                "scale string '{s}' must look like '<n_bands>x<delta_km>', e.g. 20x8"
            )));
        }
        let n_bands: usize =
            parts[0].parse().map_err(|_| SwotError::Config(format!("bad band count in '{s}'")))?;
        let delta_km: f64 =
            parts[1].parse().map_err(|_| SwotError::Config(format!("bad band spacing in '{s}'")))?;
        Ok(ScaleParams { n_bands, delta_km })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub n_segments: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub max_lr: f64,
    pub cycle_epochs: usize,
    pub anneal_factor: f64,
    #[serde(default)]
    pub loss_weights: Option<(f64, f64, f64)>,
    /// Multipliers on the resolved loss weights (ssh, gradient, Laplacian).
    #[serde(default = "default_tilt")]
    pub loss_tilt: (f64, f64, f64),
    /// Fraction of fields (not segments) held out for validation.
    pub val_fraction: f64,
}

fn default_tilt() -> (f64, f64, f64) {
    (1.0, 1.0, 1.0)
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            n_segments: 500,
            epochs: 50,
            batch_size: 4,
            base_lr: 1e-4,
            max_lr: 1e-3,
            cycle_epochs: 20,
            anneal_factor: 0.5,
            loss_weights: None,
            loss_tilt: (1.0, 1.0, 1.0),
            val_fraction: 0.1,
        }
    }
}

impl TrainParams {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            base_lr: self.base_lr,
            max_lr: self.max_lr,
            cycle_epochs: self.cycle_epochs,
            anneal_factor: self.anneal_factor,
            loss_weights: self.loss_weights,
            loss_tilt: self.loss_tilt,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    pub n_segments: usize,
    /// Blur-scale grid of the per-scale error curves.
    pub curve_scales: ScaleParams,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams { n_segments: 50, curve_scales: ScaleParams::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub field: FieldParams,
    pub grid: GridParams,
    pub errors: Vec<ErrorParams>,
    pub gridded_preset: GriddedPreset,
    pub scales: ScaleParams,
    pub arch: ArchConfig,
    pub train: TrainParams,
    pub eval: EvalParams,
}

impl ExperimentConfig {
    /// The desk-scale defaults: 512 km segments, 500 training segments,
    /// a 32-channel single-block network and 50 epochs.
    pub fn desk_default() -> Self {
        ExperimentConfig {
            seed: 0,
            field: FieldParams::default(),
            grid: GridParams::default(),
            errors: default_error_params(),
            gridded_preset: GriddedPreset::neural_like(),
            scales: ScaleParams::default(),
            arch: ArchConfig {
                n_blocks: 1,
                n_channels: 32,
                ..ArchConfig::default()
            },
            // five annealed cycles across the 50 desk epochs ending at
            // base_lr, with extra weight on the curvature term so the
            // fine scales of the residual converge within the short run
            train: TrainParams {
                cycle_epochs: 10,
                loss_tilt: (1.0, 2.0, 6.0),
                ..TrainParams::default()
            },
            eval: EvalParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.grid.build()?;
        self.gridded_preset.validate()?;
        self.scales.scales()?;
        let mut arch = self.arch.clone();
        arch.scale_bands = self.scales.n_bands;
        arch.scale_delta_km = self.scales.delta_km;
        arch.validate()?;
        self.train.to_train_config(self.seed).validate()?;
        self.eval.curve_scales.scales()?;
        if self.errors.is_empty() {
            return Err(SwotError::Config("at least one error component required".into()));
        }
        if !(0.0..1.0).contains(&self.train.val_fraction) {
            return Err(SwotError::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            SwotError::Config(format!("{}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON (stable field order via the struct definition).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// FNV-1a hash of the canonical JSON, hex-encoded.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in serde_json::to_string(self).expect("config serializes").as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
