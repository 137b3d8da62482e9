//! Top-level toolkit configuration: one struct holding every tunable with
//! the published operating point as defaults, deserializable from TOML.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postproc::PipelineConfig;
use crate::synthgen::SynthConfig;

/// Sliding-window parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    /// Window side length s in pixels.
    pub size: usize,
    /// Overlap ratio alpha in [0, 1).
    pub overlap: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { size: 768, overlap: 0.75 }
    }
}

/// Hotspot-core clustering parameters for detection classification.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CoreConfig {
    /// DBSCAN neighborhood radius in pixels.
    pub epsilon_px: f64,
    /// DBSCAN minimum cluster size.
    pub min_pts: usize,
    /// Within-mask percentile above which pixels are clustered.
    pub percentile: f64,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self { epsilon_px: 10.0, min_pts: 25, percentile: 98.0 }
    }
}

/// Evaluation parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Instance-matching IoU threshold theta.
    pub theta: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { theta: 0.1 }
    }
}

/// Everything the CLI needs, grouped per stage. Unspecified fields fall back
/// to defaults, so a TOML file only has to name what it overrides.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ToolkitConfig {
    /// Master seed; every stochastic stage derives its own stream from it.
    pub seed: u64,
    /// Detector threshold k in z-score units.
    pub oracle_k: OracleConfig,
    pub window: WindowConfig,
    pub synth: SynthConfig,
    pub postproc: PipelineConfig,
    pub core: CoreConfig,
    pub eval: EvalConfig,
}

/// Oracle detector threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub k: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { k: 4.0 }
    }
}

impl ToolkitConfig {
    pub fn validate(&self) -> Result<()> {
        self.postproc.validate()?;
        if !(0.0..1.0).contains(&self.window.overlap) {
            return Err(Error::InvalidParameter("window.overlap must be in [0, 1)".into()));
        }
        if self.window.size == 0 {
            return Err(Error::InvalidParameter("window.size must be > 0".into()));
        }
        if !(self.core.epsilon_px > 0.0) {
            return Err(Error::InvalidParameter("core.epsilon_px must be > 0".into()));
        }
        if self.core.min_pts == 0 {
            return Err(Error::InvalidParameter("core.min_pts must be > 0".into()));
        }
        if !(0.0..=100.0).contains(&self.core.percentile) {
            return Err(Error::InvalidParameter("core.percentile must be in [0, 100]".into()));
        }
        if !(0.0 < self.eval.theta && self.eval.theta < 1.0) {
            return Err(Error::InvalidParameter("eval.theta must be in (0, 1)".into()));
        }
        if !(self.oracle_k.k > 0.0) {
            return Err(Error::InvalidParameter("oracle_k.k must be > 0".into()));
        }
        Ok(())
    }
}
