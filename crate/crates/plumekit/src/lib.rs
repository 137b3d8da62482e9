//! Scene-level methane plume detection toolkit.
//!
//! The crate covers the full desk-scale pipeline: synthetic XCH4 scene
//! generation, a deterministic threshold oracle detector, sliding-window
//! inference over large rasters, physics-informed post-processing in three
//! operating modes, QND-based artifact classification with a random forest,
//! probabilistic plume maps, and instance/pixel evaluation metrics.

pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod postproc;
pub mod probmap;
pub mod qnd;
pub mod raster;
pub mod rng;
pub mod synthgen;
pub mod tiler;

pub use config::ToolkitConfig;
pub use detector::{DetectionSet, Instance, PatchDetection};
pub use error::{Error, Result};
pub use raster::{BinaryMask, GridGeometry, Patch, SceneGrid};
pub use synthgen::{ArtifactKind, ArtifactSpec, PlumeLabel, PlumeSpec, SynthConfig};
