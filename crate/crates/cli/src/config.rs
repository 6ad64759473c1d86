//! TOML configuration for the physical model and the schedule layout.
//!
//! Both sections are optional and may be given partially; omitted fields
//! keep the library defaults. Unknown keys are rejected so typos surface
//! instead of silently falling back.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use echo_core::compiler::LayoutParams;
use echo_core::kernel::EnsembleModel;
use echo_core::types::PulseShape;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelSection,
    pub layout: LayoutSection,
}

/// Mirror of [`EnsembleModel`] with TOML-friendly field types.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub bandwidth_ghz: f64,
    pub grid_points: usize,
    /// Coherence time in microseconds; `inf` disables decoherence.
    pub t2_coherence_us: f64,
    pub optical_depth_scale: f64,
    pub phase_jitter_sigma: f64,
    pub jitter_intra_factor: f64,
    pub depletion_eta: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = EnsembleModel::default();
        Self {
            bandwidth_ghz: m.bandwidth_ghz,
            grid_points: m.grid_points,
            t2_coherence_us: m.t2_coherence_us,
            optical_depth_scale: m.optical_depth_scale,
            phase_jitter_sigma: m.phase_jitter_sigma,
            jitter_intra_factor: m.jitter_intra_factor,
            depletion_eta: m.depletion_eta,
        }
    }
}

impl ModelSection {
    pub fn to_model(&self) -> EnsembleModel {
        EnsembleModel {
            bandwidth_ghz: self.bandwidth_ghz,
            grid_points: self.grid_points,
            t2_coherence_us: self.t2_coherence_us,
            optical_depth_scale: self.optical_depth_scale,
            phase_jitter_sigma: self.phase_jitter_sigma,
            jitter_intra_factor: self.jitter_intra_factor,
            depletion_eta: self.depletion_eta,
        }
    }
}

/// Mirror of [`LayoutParams`]; `pulse_shape` is `"rect"` or `"gauss"`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutSection {
    pub mode_spacing: f64,
    pub pulse_duration: f64,
    pub pulse_shape: String,
    pub write_time: f64,
    pub write_amplitude: f64,
    pub data_offset: f64,
    pub read_offset: f64,
    pub cluster_guard: f64,
    pub max_horizon_steps: usize,
}

impl Default for LayoutSection {
    fn default() -> Self {
        let l = LayoutParams::default();
        Self {
            mode_spacing: l.mode_spacing,
            pulse_duration: l.pulse_duration,
            pulse_shape: l.pulse_shape.as_str().to_owned(),
            write_time: l.write_time,
            write_amplitude: l.write_amplitude,
            data_offset: l.data_offset,
            read_offset: l.read_offset,
            cluster_guard: l.cluster_guard,
            max_horizon_steps: l.max_horizon_steps,
        }
    }
}

impl LayoutSection {
    pub fn to_layout(&self) -> Result<LayoutParams> {
        let pulse_shape = match self.pulse_shape.as_str() {
            "rect" | "rectangular" => PulseShape::Rectangular,
            "gauss" | "gaussian" => PulseShape::Gaussian,
            other => bail!("unknown pulse_shape {other:?}, expected \"rect\" or \"gauss\""),
        };
        Ok(LayoutParams {
            mode_spacing: self.mode_spacing,
            pulse_duration: self.pulse_duration,
            pulse_shape,
            write_time: self.write_time,
            write_amplitude: self.write_amplitude,
            data_offset: self.data_offset,
            read_offset: self.read_offset,
            cluster_guard: self.cluster_guard,
            max_horizon_steps: self.max_horizon_steps,
        })
    }
}

/// Loads the config file, or the defaults when no path was given.
pub fn load(path: Option<&Path>) -> Result<Config> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}
