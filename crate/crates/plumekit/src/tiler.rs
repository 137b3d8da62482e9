//! Overlapping-window planning over full scenes, per-window detection, and
//! remapping of patch-local detections to scene coordinates.

use crate::detector::{DetectionSet, Instance, PatchDetection, PatchDetector, Provenance};
use crate::error::{Error, Result};
use crate::raster::{extract_patch, GridGeometry, SceneGrid};

/// Planned sliding windows: size `s`, overlap ratio `alpha`, and the window
/// origins. The stride is floor(s * (1 - alpha)); the last window per axis
/// is clamped flush with the scene edge so no margin goes uncovered.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub size: usize,
    pub overlap: f64,
    pub stride: usize,
    pub origins: Vec<(usize, usize)>,
}

fn axis_origins(dim: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut origins = Vec::new();
    let last = dim - size;
    let mut o = 0;
    while o < last {
        origins.push(o);
        o += stride;
    }
    origins.push(last); // flush final window; dedup below
    origins.dedup();
    origins
}

pub fn plan_windows(geometry: &GridGeometry, size: usize, alpha: f64) -> Result<WindowPlan> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter("overlap ratio must be in [0, 1)".into()));
    }
    if size == 0 || size > geometry.height || size > geometry.width {
        return Err(Error::InvalidParameter(format!(
            "window size {size} exceeds scene {}x{}",
            geometry.height, geometry.width
        )));
    }
    let stride = (size as f64 * (1.0 - alpha)).floor() as usize;
    if stride == 0 {
        return Err(Error::InvalidParameter("stride underflow: overlap too close to 1".into()));
    }
    let rows = axis_origins(geometry.height, size, stride);
    let cols = axis_origins(geometry.width, size, stride);
    let mut origins = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            origins.push((r, c));
        }
    }
    Ok(WindowPlan { size, overlap: alpha, stride, origins })
}

/// Translate a patch-local detection into scene coordinates, recording the
/// originating window.
pub fn map_to_scene(det: &PatchDetection, origin: (usize, usize)) -> Instance {
    Instance {
        mask: det.mask.translate(origin.0, origin.1),
        soft: det.soft_mask.clone(),
        score: det.score,
        provenance: Provenance { windows: vec![origin], merged: 1 },
    }
}

/// Run a detector over every planned window and collect the remapped
/// detections. Each window is normalized independently as its own patch.
/// Output order is normalized: by window origin, then score descending.
pub fn run_scene<D: PatchDetector>(
    scene: &SceneGrid,
    detector: &D,
    size: usize,
    alpha: f64,
) -> Result<DetectionSet> {
    let plan = plan_windows(&scene.geometry, size, alpha)?;
    let mut instances = Vec::new();
    for &origin in &plan.origins {
        let patch = match extract_patch(scene, origin, size) {
            Ok(p) => p,
            // an entirely invalid window contributes nothing
            Err(Error::EmptyPatch) => continue,
            Err(e) => return Err(e),
        };
        for det in detector.detect(&patch) {
            instances.push(map_to_scene(&det, origin));
        }
    }
    instances.sort_by(|a, b| {
        a.provenance
            .windows
            .cmp(&b.provenance.windows)
            .then(b.score.partial_cmp(&a.score).expect("finite scores"))
            .then(a.mask.bbox.cmp(&b.mask.bbox))
    });
    Ok(DetectionSet { geometry: scene.geometry, instances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::OracleDetector;
    use crate::raster::BinaryMask;
    use ndarray::Array2;

    #[test]
    fn paper_operating_point_origins() {
        let g = GridGeometry::new(1000, 1000, 45.0).unwrap();
        let plan = plan_windows(&g, 768, 0.75).unwrap();
        assert_eq!(plan.stride, 192);
        let rows: Vec<usize> = {
            let mut v: Vec<usize> = plan.origins.iter().map(|o| o.0).collect();
            v.dedup();
            v
        };
        assert_eq!(rows, vec![0, 192, 232]);
        assert_eq!(plan.origins.len(), 9);
    }

    #[test]
    fn single_window_when_scene_equals_size() {
        let g = GridGeometry::new(128, 128, 45.0).unwrap();
        let plan = plan_windows(&g, 128, 0.75).unwrap();
        assert_eq!(plan.origins, vec![(0, 0)]);
    }

    #[test]
    fn zero_overlap_tiles_flush() {
        let g = GridGeometry::new(100, 100, 45.0).unwrap();
        let plan = plan_windows(&g, 40, 0.0).unwrap();
        let rows: Vec<usize> = {
            let mut v: Vec<usize> = plan.origins.iter().map(|o| o.0).collect();
            v.dedup();
            v
        };
        assert_eq!(rows, vec![0, 40, 60]);
    }

    #[test]
    fn oversized_window_errors() {
        let g = GridGeometry::new(100, 100, 45.0).unwrap();
        assert!(plan_windows(&g, 128, 0.5).is_err());
    }

    #[test]
    fn full_coverage_and_interior_multiplicity() {
        let g = GridGeometry::new(1000, 1000, 45.0).unwrap();
        let plan = plan_windows(&g, 768, 0.75).unwrap();
        let mut cover = Array2::from_elem((1000, 1000), 0u32);
        for &(r0, c0) in &plan.origins {
            for r in r0..r0 + 768 {
                for c in c0..c0 + 768 {
                    cover[(r, c)] += 1;
                }
            }
        }
        assert!(cover.iter().all(|&n| n >= 1));
        // all three per-axis origins {0, 192, 232} span the scene center, so
        // central pixels sit in every one of the 9 windows
        for r in 400..600 {
            for c in 400..600 {
                assert!(cover[(r, c)] >= 9, "({r},{c}) covered {} times", cover[(r, c)]);
            }
        }
    }

    #[test]
    fn map_translation_preserves_area() {
        let mut local = Array2::from_elem((5, 5), false);
        for r in 1..4 {
            for c in 1..4 {
                local[(r, c)] = true;
            }
        }
        let mask = BinaryMask::from_array(local.view()).unwrap();
        let det = PatchDetection {
            score: 0.9,
            bbox: mask.bbox,
            soft_mask: Array2::from_elem((3, 3), 1.0),
            mask,
        };
        let inst = map_to_scene(&det, (192, 0));
        assert_eq!(inst.mask.bbox, [193, 1, 3, 3]);
        assert_eq!(inst.area(), 9);

        let identity = map_to_scene(&det, (0, 0));
        assert_eq!(identity.mask.bbox, det.bbox);
    }

    #[test]
    fn empty_scene_yields_no_detections() {
        let g = GridGeometry::new(64, 64, 45.0).unwrap();
        let scene = crate::raster::SceneGrid::new(
            g,
            Array2::from_elem((64, 64), 1900.0),
            Array2::from_elem((64, 64), true),
            None,
        )
        .unwrap();
        let set = run_scene(&scene, &OracleDetector::new(4.0), 32, 0.5).unwrap();
        assert!(set.instances.is_empty());
    }

    #[test]
    fn plume_detected_in_every_covering_window() {
        let g = GridGeometry::new(96, 96, 45.0).unwrap();
        let mut xch4 = Array2::from_elem((96, 96), 1900.0f32);
        // strong compact enhancement near the center
        for r in 44..52 {
            for c in 44..52 {
                xch4[(r, c)] = 2400.0;
            }
        }
        let scene = crate::raster::SceneGrid::new(
            g,
            xch4,
            Array2::from_elem((96, 96), true),
            None,
        )
        .unwrap();
        let set = run_scene(&scene, &OracleDetector::new(3.0), 64, 0.5).unwrap();
        let plan = plan_windows(&g, 64, 0.5).unwrap();
        let covering = plan
            .origins
            .iter()
            .filter(|&&(r, c)| r <= 44 && 52 <= r + 64 && c <= 44 && 52 <= c + 64)
            .count();
        assert!(covering >= 4);
        assert!(set.instances.len() >= covering);
    }
}
