//! Per-patch detection interface, the deterministic threshold oracle used in
//! place of a neural detector, and JSON import/export of scene-space
//! detection sets.

use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GridGeometry, Patch};

/// Excess z-score that saturates the soft mask at 1.0.
pub const SOFT_MASK_SCALE: f64 = 4.0;
/// Minimum component area for the oracle, in pixels.
pub const ORACLE_MIN_AREA: usize = 5;

/// One patch-local detection: confidence score, tight bbox, and a soft mask
/// over the bbox with values in [0, 1].
#[derive(Debug, Clone)]
pub struct PatchDetection {
    pub score: f64,
    /// (row0, col0, rows, cols), patch-local.
    pub bbox: [usize; 4],
    pub soft_mask: Array2<f32>,
    pub mask: BinaryMask,
}

/// Where a scene-space instance came from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    /// Origins of the windows that produced this instance.
    pub windows: Vec<(usize, usize)>,
    /// Number of raw detections merged into this instance.
    pub merged: usize,
}

/// A detection in scene coordinates.
#[derive(Debug, Clone)]
pub struct Instance {
    pub mask: BinaryMask,
    /// Soft values over the mask bbox, row-major; zero outside the mask.
    pub soft: Array2<f32>,
    pub score: f64,
    pub provenance: Provenance,
}

impl Instance {
    pub fn area(&self) -> usize {
        self.mask.area()
    }

    pub fn bbox(&self) -> [usize; 4] {
        self.mask.bbox
    }
}

/// Scene-space detections plus the geometry they live in.
#[derive(Debug, Clone)]
pub struct DetectionSet {
    pub geometry: GridGeometry,
    pub instances: Vec<Instance>,
}

/// Anything that can turn a normalized patch into detections.
pub trait PatchDetector {
    fn detect(&self, patch: &Patch) -> Vec<PatchDetection>;
}

/// Threshold-and-components oracle: 8-connected components of valid pixels
/// with normalized value above `k`, area >= 5 px. The soft mask is the
/// excess above `k` rescaled by [`SOFT_MASK_SCALE`] and clipped to [0, 1];
/// the score is logistic(mean excess / 2), spreading real signals over
/// (0.5, 1).
#[derive(Debug, Clone, Copy)]
pub struct OracleDetector {
    pub k: f64,
}

impl OracleDetector {
    pub fn new(k: f64) -> Self {
        Self { k }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl PatchDetector for OracleDetector {
    fn detect(&self, patch: &Patch) -> Vec<PatchDetection> {
        let (h, w) = patch.values.dim();
        let k = self.k as f32;
        let above = Array2::from_shape_fn((h, w), |(r, c)| {
            patch.valid[(r, c)] && patch.values[(r, c)] > k
        });

        let mut labels = Array2::from_elem((h, w), 0u32);
        let mut components: Vec<Vec<(usize, usize)>> = Vec::new();
        for start_r in 0..h {
            for start_c in 0..w {
                if !above[(start_r, start_c)] || labels[(start_r, start_c)] != 0 {
                    continue;
                }
                let id = components.len() as u32 + 1;
                let mut pixels = Vec::new();
                let mut stack = vec![(start_r, start_c)];
                labels[(start_r, start_c)] = id;
                while let Some((r, c)) = stack.pop() {
                    pixels.push((r, c));
                    for dr in -1i64..=1 {
                        for dc in -1i64..=1 {
                            let nr = r as i64 + dr;
                            let nc = c as i64 + dc;
                            if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                                continue;
                            }
                            let p = (nr as usize, nc as usize);
                            if above[p] && labels[p] == 0 {
                                labels[p] = id;
                                stack.push(p);
                            }
                        }
                    }
                }
                components.push(pixels);
            }
        }

        let mut detections = Vec::new();
        for pixels in components {
            if pixels.len() < ORACLE_MIN_AREA {
                continue;
            }
            let r0 = pixels.iter().map(|p| p.0).min().unwrap();
            let r1 = pixels.iter().map(|p| p.0).max().unwrap();
            let c0 = pixels.iter().map(|p| p.1).min().unwrap();
            let c1 = pixels.iter().map(|p| p.1).max().unwrap();
            let (rows, cols) = (r1 - r0 + 1, c1 - c0 + 1);
            let mut local = Array2::from_elem((rows, cols), false);
            let mut soft = Array2::zeros((rows, cols));
            let mut excess_sum = 0.0f64;
            for &(r, c) in &pixels {
                let excess = patch.values[(r, c)] as f64 - self.k;
                excess_sum += excess;
                local[(r - r0, c - c0)] = true;
                soft[(r - r0, c - c0)] = (excess / SOFT_MASK_SCALE).clamp(0.0, 1.0) as f32;
            }
            let mean_excess = excess_sum / pixels.len() as f64;
            let mask = BinaryMask::from_local(r0, c0, local.view()).expect("nonempty component");
            detections.push(PatchDetection {
                score: logistic(mean_excess / 2.0),
                bbox: [r0, c0, rows, cols],
                soft_mask: soft,
                mask,
            });
        }
        detections
    }
}

// ---------------------------------------------------------------------------
// Detection JSON schema
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MaskJson {
    rle: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct DetectionJson {
    score: f64,
    bbox: [usize; 4],
    mask: MaskJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    soft: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct DetectionFileJson {
    geometry: GridGeometry,
    detections: Vec<DetectionJson>,
}

/// Serialize a detection set to the detection JSON schema. Soft masks are
/// base64 little-endian f32 over the bbox.
pub fn detections_to_json(set: &DetectionSet) -> Result<String> {
    let engine = base64::engine::general_purpose::STANDARD;
    let detections = set
        .instances
        .iter()
        .map(|inst| {
            let mut bytes = Vec::with_capacity(inst.soft.len() * 4);
            for &v in inst.soft.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            DetectionJson {
                score: inst.score,
                bbox: inst.mask.bbox,
                mask: MaskJson { rle: inst.mask.rle.clone() },
                soft: Some(engine.encode(bytes)),
            }
        })
        .collect();
    let file = DetectionFileJson { geometry: set.geometry, detections };
    Ok(serde_json::to_string(&file)?)
}

pub fn export_detections<P: AsRef<std::path::Path>>(set: &DetectionSet, path: P) -> Result<()> {
    std::fs::write(path, detections_to_json(set)?)?;
    Ok(())
}

/// Parse and validate detections against the given geometry.
pub fn detections_from_json(json: &str, geometry: &GridGeometry) -> Result<DetectionSet> {
    let file: DetectionFileJson =
        serde_json::from_str(json).map_err(|e| Error::Schema(e.to_string()))?;
    if file.geometry.width != geometry.width || file.geometry.height != geometry.height {
        return Err(Error::Schema(format!(
            "geometry mismatch: file {}x{}, expected {}x{}",
            file.geometry.height, file.geometry.width, geometry.height, geometry.width
        )));
    }
    let engine = base64::engine::general_purpose::STANDARD;
    let mut instances = Vec::with_capacity(file.detections.len());
    for (i, det) in file.detections.into_iter().enumerate() {
        if !(0.0..=1.0).contains(&det.score) {
            return Err(Error::Schema(format!(
                "detection {i}: score {} outside [0,1]",
                det.score
            )));
        }
        let [r0, c0, rows, cols] = det.bbox;
        if rows == 0 || cols == 0 || r0 + rows > geometry.height || c0 + cols > geometry.width {
            return Err(Error::Schema(format!("detection {i}: bbox out of bounds")));
        }
        let mask = BinaryMask { bbox: det.bbox, rle: det.mask.rle };
        mask.validate()
            .map_err(|e| Error::Schema(format!("detection {i}: {e}")))?;
        let soft = match det.soft {
            Some(b64) => {
                let bytes = engine
                    .decode(b64)
                    .map_err(|e| Error::Schema(format!("detection {i}: bad base64: {e}")))?;
                if bytes.len() != rows * cols * 4 {
                    return Err(Error::Schema(format!(
                        "detection {i}: soft payload length {} != {}",
                        bytes.len(),
                        rows * cols * 4
                    )));
                }
                let vals: Vec<f32> = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                if vals.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Schema(format!(
                        "detection {i}: soft value outside [0,1]"
                    )));
                }
                Array2::from_shape_vec((rows, cols), vals).expect("length checked")
            }
            None => {
                // hard mask: 1.0 on foreground
                let local = mask.decode_local()?;
                Array2::from_shape_fn((rows, cols), |p| if local[p] { 1.0 } else { 0.0 })
            }
        };
        instances.push(Instance {
            mask,
            soft,
            score: det.score,
            provenance: Provenance::default(),
        });
    }
    Ok(DetectionSet { geometry: *geometry, instances })
}

pub fn import_detections<P: AsRef<std::path::Path>>(
    path: P,
    geometry: &GridGeometry,
) -> Result<DetectionSet> {
    let json = std::fs::read_to_string(path)?;
    detections_from_json(&json, geometry)
}
