//! Scene-level post-processing: confidence filtering, mask-IoU NMS, the
//! physics-informed fiber (skeleton) filter, proximity-based merging, size
//! filtering, and the composition of the three operating modes.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::detector::{Instance, Provenance};
use crate::error::{Error, Result};
use crate::qnd::{self, RandomForestModel};
use crate::raster::{BinaryMask, SceneGrid};

/// Operating modes, ordered from most inclusive to most selective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineMode {
    Baseline,
    HighSensitivity,
    HighPrecision,
}

/// Post-processing thresholds. Defaults are the published operating point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Confidence threshold tau.
    pub tau: f64,
    /// NMS IoU threshold delta.
    pub delta: f64,
    /// Fiber-to-major-axis rejection threshold.
    pub fiber_ratio_max: f64,
    /// Minimum mask area (px^2) for the size-threshold alternative filter.
    pub size_floor: Option<usize>,
    pub mode: PipelineMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: 0.8,
            delta: 0.2,
            fiber_ratio_max: 1.25,
            size_floor: None,
            mode: PipelineMode::Baseline,
        }
    }
}

/// Default size floor in px^2 when the size-threshold filter is requested.
pub const DEFAULT_SIZE_FLOOR_PX2: usize = 1500;

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidParameter("tau must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidParameter("delta must be in [0, 1]".into()));
        }
        if !(self.fiber_ratio_max > 1.0) {
            return Err(Error::InvalidParameter("fiber_ratio_max must be > 1".into()));
        }
        Ok(())
    }
}

/// Keep detections with score >= tau, preserving order.
pub fn filter_confidence(dets: Vec<Instance>, tau: f64) -> Vec<Instance> {
    dets.into_iter().filter(|d| d.score >= tau).collect()
}

/// Mask intersection-over-union. Errors only when both masks are empty,
/// which a well-formed [`BinaryMask`] cannot be.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_area(b) as f64;
    let union = a.area() as f64 + b.area() as f64 - inter;
    if union == 0.0 {
        return Err(Error::InvalidParameter("IoU of two empty masks".into()));
    }
    Ok(inter / union)
}

fn nms_order(dets: &[Instance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .score
            .partial_cmp(&dets[i].score)
            .expect("finite scores")
            .then(dets[j].area().cmp(&dets[i].area()))
            .then(dets[i].mask.bbox.cmp(&dets[j].mask.bbox))
    });
    order
}

/// Greedy mask-IoU non-maximum suppression: walk detections by descending
/// score (ties: larger area, then lexicographic bbox) and keep one iff its
/// IoU with every already-kept detection is <= delta.
pub fn nms(dets: Vec<Instance>, delta: f64) -> Vec<Instance> {
    let order = nms_order(&dets);
    let mut kept: Vec<Instance> = Vec::new();
    for i in order {
        let candidate = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| mask_iou(&k.mask, &candidate.mask).unwrap_or(0.0) > delta);
        if !suppressed {
            kept.push(candidate.clone());
        }
    }
    kept
}

// ---------------------------------------------------------------------------
// Skeleton morphology
// ---------------------------------------------------------------------------

fn neighbors8(grid: &Array2<bool>, r: usize, c: usize) -> [bool; 8] {
    let (h, w) = grid.dim();
    // p2..p9 clockwise from north
    let offs = [(-1i64, 0i64), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];
    let mut out = [false; 8];
    for (i, (dr, dc)) in offs.iter().enumerate() {
        let nr = r as i64 + dr;
        let nc = c as i64 + dc;
        if nr >= 0 && nc >= 0 && nr < h as i64 && nc < w as i64 {
            out[i] = grid[(nr as usize, nc as usize)];
        }
    }
    out
}

fn transitions(n: &[bool; 8]) -> usize {
    (0..8).filter(|&i| !n[i] && n[(i + 1) % 8]).count()
}

/// Zhang-Suen thinning to a one-pixel-wide 8-connected skeleton.
pub fn skeletonize(mask: &BinaryMask) -> Result<BinaryMask> {
    let mut grid = mask.decode_local()?;
    if mask.area() == 0 {
        return Err(Error::TooSmallToSkeletonize);
    }
    thin_in_place(&mut grid);
    let local = BinaryMask::from_array(grid.view())?;
    Ok(BinaryMask {
        bbox: [
            mask.bbox[0] + local.bbox[0],
            mask.bbox[1] + local.bbox[1],
            local.bbox[2],
            local.bbox[3],
        ],
        rle: local.rle,
    })
}

fn thin_in_place(grid: &mut Array2<bool>) {
    let (h, w) = grid.dim();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut to_delete = Vec::new();
            for r in 0..h {
                for c in 0..w {
                    if !grid[(r, c)] {
                        continue;
                    }
                    let n = neighbors8(grid, r, c);
                    let b: usize = n.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) || transitions(&n) != 1 {
                        continue;
                    }
                    // n = [p2, p3, p4, p5, p6, p7, p8, p9]
                    let (cond1, cond2) = if pass == 0 {
                        (!(n[0] && n[2] && n[4]), !(n[2] && n[4] && n[6]))
                    } else {
                        (!(n[0] && n[2] && n[6]), !(n[0] && n[4] && n[6]))
                    };
                    if cond1 && cond2 {
                        to_delete.push((r, c));
                    }
                }
            }
            if !to_delete.is_empty() {
                changed = true;
                for p in to_delete {
                    grid[p] = false;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Turn background regions not reachable from the border into foreground.
/// Speckle-noise holes inside a detection mask would otherwise leave loops in
/// the skeleton and inflate the fiber length of a shape that is not fibrous.
fn fill_holes(grid: &mut Array2<bool>) {
    let (h, w) = grid.dim();
    let mut outside = Array2::from_elem((h, w), false);
    let mut stack = Vec::new();
    for r in 0..h {
        for c in [0, w - 1] {
            if !grid[(r, c)] && !outside[(r, c)] {
                outside[(r, c)] = true;
                stack.push((r, c));
            }
        }
    }
    for c in 0..w {
        for r in [0, h - 1] {
            if !grid[(r, c)] && !outside[(r, c)] {
                outside[(r, c)] = true;
                stack.push((r, c));
            }
        }
    }
    while let Some((r, c)) = stack.pop() {
        for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let nr = r as i64 + dr;
            let nc = c as i64 + dc;
            if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                continue;
            }
            let np = (nr as usize, nc as usize);
            if !grid[np] && !outside[np] {
                outside[np] = true;
                stack.push(np);
            }
        }
    }
    for r in 0..h {
        for c in 0..w {
            if !grid[(r, c)] && !outside[(r, c)] {
                grid[(r, c)] = true;
            }
        }
    }
}

fn erode3x3(grid: &Array2<bool>) -> Array2<bool> {
    let (h, w) = grid.dim();
    let mut out = Array2::from_elem((h, w), false);
    for r in 0..h {
        for c in 0..w {
            out[(r, c)] = grid[(r, c)]
                && neighbors8(grid, r, c).iter().filter(|&&v| v).count() == 8;
        }
    }
    out
}

fn dilate3x3(grid: &Array2<bool>) -> Array2<bool> {
    let (h, w) = grid.dim();
    let mut out = Array2::from_elem((h, w), false);
    for r in 0..h {
        for c in 0..w {
            out[(r, c)] = grid[(r, c)] || neighbors8(grid, r, c).iter().any(|&v| v);
        }
    }
    out
}

/// Binary opening of radius `n` (n erosions then n dilations). Strips the
/// thin noise tendrils that ride along a detection's threshold contour while
/// leaving any solid body intact. Shapes that are nothing but thin strokes
/// (bars, crosses, spider arms) erode away completely; callers fall back to
/// the raw mask in that case so those stay measurably fibrous.
fn open_n(grid: &Array2<bool>, n: usize) -> Array2<bool> {
    let mut out = grid.clone();
    for _ in 0..n {
        out = erode3x3(&out);
    }
    for _ in 0..n {
        out = dilate3x3(&out);
    }
    out
}

fn neighbor_coords(grid: &Array2<bool>, r: usize, c: usize) -> Vec<(usize, usize)> {
    let (h, w) = grid.dim();
    let mut out = Vec::new();
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            if dr == 0 && dc == 0 {
                continue;
            }
            let nr = r as i64 + dr;
            let nc = c as i64 + dc;
            if nr >= 0 && nc >= 0 && nr < h as i64 && nc < w as i64 && grid[(nr as usize, nc as usize)]
            {
                out.push((nr as usize, nc as usize));
            }
        }
    }
    out
}

/// Remove skeleton spurs: from each endpoint, walk the degree-2 chain; if it
/// reaches a junction (>= 3 neighbors) within `eps` steps the chain is a
/// boundary-noise whisker and is deleted. Chains that never meet a junction
/// (bars, star arms longer than `eps`) are left alone. Repeats until stable
/// since removing one spur can expose another.
fn prune_spurs(grid: &mut Array2<bool>, eps: usize) {
    loop {
        let (h, w) = grid.dim();
        let mut removed = false;
        let endpoints: Vec<(usize, usize)> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .filter(|&(r, c)| grid[(r, c)] && neighbor_coords(grid, r, c).len() <= 1)
            .collect();
        for start in endpoints {
            if !grid[start] || neighbor_coords(grid, start.0, start.1).len() != 1 {
                continue;
            }
            let mut chain = vec![start];
            let mut prev = start;
            let mut cur = neighbor_coords(grid, start.0, start.1)[0];
            let mut junction = false;
            while chain.len() <= eps {
                let nbrs = neighbor_coords(grid, cur.0, cur.1);
                if nbrs.len() >= 3 {
                    junction = true;
                    break;
                }
                chain.push(cur);
                match nbrs.into_iter().find(|&p| p != prev && !chain.contains(&p)) {
                    Some(next) => {
                        prev = cur;
                        cur = next;
                    }
                    None => break,
                }
            }
            if junction {
                for p in chain {
                    grid[p] = false;
                }
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
}

/// Shape report for the fiber filter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MorphologyReport {
    /// Total skeleton path length in pixels (diagonal steps count sqrt(2)).
    pub fiber_length: f64,
    /// Major axis of the moments-equivalent ellipse: 4 * sqrt(lambda_max).
    pub major_axis: f64,
    pub ratio: f64,
    pub skeleton_pixels: usize,
}

/// Total path length of the skeleton: the sum, over skeleton connected
/// components, of the minimum spanning tree length of the 8-connected pixel
/// graph (unit orthogonal steps, sqrt(2) diagonal steps). A straight
/// one-pixel line of L pixels measures L - 1; branching "spider" arms all
/// contribute, which is what inflates the ratio for artifact topologies.
fn skeleton_length(pixels: &[(usize, usize)]) -> f64 {
    if pixels.len() <= 1 {
        return 0.0;
    }
    use std::collections::HashMap;
    let index: HashMap<(usize, usize), usize> =
        pixels.iter().copied().enumerate().map(|(i, p)| (p, i)).collect();
    let n = pixels.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut total = 0.0;
    let mut visited = 0usize;
    let mut component_seed = 0usize;
    while visited < n {
        // start a new component
        while in_tree[component_seed] {
            component_seed += 1;
        }
        best[component_seed] = 0.0;
        loop {
            let mut u = usize::MAX;
            let mut ub = f64::INFINITY;
            for i in 0..n {
                if !in_tree[i] && best[i] < ub {
                    ub = best[i];
                    u = i;
                }
            }
            if u == usize::MAX {
                break; // component exhausted
            }
            in_tree[u] = true;
            visited += 1;
            total += ub;
            let (r, c) = pixels[u];
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let np = (r as i64 + dr, c as i64 + dc);
                    if np.0 < 0 || np.1 < 0 {
                        continue;
                    }
                    if let Some(&v) = index.get(&(np.0 as usize, np.1 as usize)) {
                        let wgt = if dr != 0 && dc != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                        if !in_tree[v] && wgt < best[v] {
                            best[v] = wgt;
                        }
                    }
                }
            }
        }
    }
    total
}

/// Minimum mask area for skeleton morphology to be meaningful.
pub const FIBER_MIN_AREA: usize = 5;

/// Compute the fiber length, moments-ellipse major axis, and their ratio.
pub fn fiber_metrics(mask: &BinaryMask) -> Result<MorphologyReport> {
    if mask.area() < FIBER_MIN_AREA {
        return Err(Error::TooSmallToSkeletonize);
    }
    let mut grid = mask.decode_local()?;
    fill_holes(&mut grid);
    let (rows0, cols0) = grid.dim();
    let radius = (rows0.max(cols0) / 32).clamp(1, 3);
    let opened = open_n(&grid, radius);
    if opened.iter().filter(|&&v| v).count() >= FIBER_MIN_AREA {
        grid = opened;
        fill_holes(&mut grid);
    }
    thin_in_place(&mut grid);
    let (rows, cols) = grid.dim();
    let eps = ((0.35 * rows.max(cols) as f64).ceil() as usize).max(2);
    prune_spurs(&mut grid, eps);
    let skeleton_pixels: Vec<(usize, usize)> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .filter(|&p| grid[p])
        .collect();
    let fiber_length = skeleton_length(&skeleton_pixels).max(1.0);

    let pixels = mask.pixels();
    let n = pixels.len() as f64;
    let (mut mr, mut mc) = (0.0f64, 0.0f64);
    for &(r, c) in &pixels {
        mr += r as f64;
        mc += c as f64;
    }
    mr /= n;
    mc /= n;
    let (mut srr, mut scc, mut src) = (0.0f64, 0.0f64, 0.0f64);
    for &(r, c) in &pixels {
        let dr = r as f64 - mr;
        let dc = c as f64 - mc;
        srr += dr * dr;
        scc += dc * dc;
        src += dr * dc;
    }
    srr /= n;
    scc /= n;
    src /= n;
    let tr = srr + scc;
    let det = srr * scc - src * src;
    let lambda_max = tr / 2.0 + (tr * tr / 4.0 - det).max(0.0).sqrt();
    let major_axis = 4.0 * lambda_max.sqrt();

    Ok(MorphologyReport {
        fiber_length,
        major_axis,
        ratio: fiber_length / major_axis,
        skeleton_pixels: skeleton_pixels.len(),
    })
}

/// Default fiber-to-major-axis rejection threshold.
pub const FIBER_RATIO_MAX: f64 = 1.25;

/// Discard detections whose fiber-to-major-axis ratio exceeds the threshold.
/// Masks below the skeletonization floor pass through unfiltered; the size
/// and QND stages own them.
pub fn fiber_filter(dets: Vec<Instance>, fiber_ratio_max: f64) -> Vec<Instance> {
    dets.into_iter()
        .filter(|d| {
            if d.area() < FIBER_MIN_AREA {
                return true;
            }
            match fiber_metrics(&d.mask) {
                Ok(report) => report.ratio <= fiber_ratio_max,
                Err(_) => true,
            }
        })
        .collect()
}

/// Merge connected groups of mask-intersecting detections into single
/// instances: union mask and bbox, area-weighted average score, per-pixel
/// max of soft values, concatenated provenance.
pub fn merge_proximal(dets: Vec<Instance>) -> Vec<Instance> {
    let n = dets.len();
    // union-find over the intersection graph
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if dets[i].mask.intersection_area(&dets[j].mask) > 0 {
                let ri = find(&mut parent, i);
                let rj = find(&mut parent, j);
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }

    let mut merged: Vec<Instance> = groups
        .into_values()
        .map(|members| {
            if members.len() == 1 {
                return dets[members[0]].clone();
            }
            let masks: Vec<&BinaryMask> = members.iter().map(|&i| &dets[i].mask).collect();
            let mask = BinaryMask::union(&masks).expect("nonempty members");
            let [r0, c0, rows, cols] = mask.bbox;
            let mut soft = Array2::zeros((rows, cols));
            let mut weighted = 0.0f64;
            let mut total_area = 0.0f64;
            let mut windows = Vec::new();
            let mut merged_count = 0usize;
            for &i in &members {
                let d = &dets[i];
                let area = d.area() as f64;
                weighted += area * d.score;
                total_area += area;
                windows.extend(d.provenance.windows.iter().copied());
                merged_count += d.provenance.merged.max(1);
                let [dr0, dc0, drows, dcols] = d.mask.bbox;
                for r in 0..drows {
                    for c in 0..dcols {
                        let v = d.soft[(r, c)];
                        let target = (dr0 - r0 + r, dc0 - c0 + c);
                        if v > soft[target] {
                            soft[target] = v;
                        }
                    }
                }
            }
            windows.sort();
            windows.dedup();
            Instance {
                mask,
                soft,
                score: weighted / total_area,
                provenance: Provenance { windows, merged: merged_count },
            }
        })
        .collect();
    // normalized output order
    merged.sort_by(|a, b| {
        a.mask
            .bbox
            .cmp(&b.mask.bbox)
            .then(b.score.partial_cmp(&a.score).expect("finite scores"))
    });
    merged
}

/// Keep detections with mask area >= floor (inclusive).
pub fn size_filter(dets: Vec<Instance>, floor_px2: usize) -> Vec<Instance> {
    dets.into_iter().filter(|d| d.area() >= floor_px2).collect()
}

/// Run the full post-processing pipeline for the configured mode:
///
/// - baseline: confidence filter, then NMS
/// - high-sensitivity: baseline, then fiber filter, then proximity merging
/// - high-precision: high-sensitivity, then QND classification (detections
///   without a hotspot core are treated as artifacts) or, when no classifier
///   is supplied, the size-threshold fallback.
pub fn run_mode(
    dets: Vec<Instance>,
    scene: &SceneGrid,
    config: &PipelineConfig,
    classifier: Option<&RandomForestModel>,
) -> Result<Vec<Instance>> {
    config.validate()?;
    let baseline = nms(filter_confidence(dets, config.tau), config.delta);
    if config.mode == PipelineMode::Baseline {
        return Ok(baseline);
    }
    let high_sensitivity = merge_proximal(fiber_filter(baseline, config.fiber_ratio_max));
    if config.mode == PipelineMode::HighSensitivity {
        return Ok(high_sensitivity);
    }
    match (classifier, config.size_floor) {
        (Some(model), _) => {
            let mut kept = Vec::new();
            for det in high_sensitivity {
                match qnd::extract_features(scene, &det.mask) {
                    Ok(features) => {
                        let (class, _) = model.predict(&features.as_vector())?;
                        if class == qnd::Class::Plume {
                            kept.push(det);
                        }
                    }
                    // no hotspot core / degenerate distribution: artifact-like
                    Err(Error::NoHotspotCore) | Err(Error::DegenerateDistribution) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(kept)
        }
        (None, Some(floor)) => Ok(size_filter(high_sensitivity, floor)),
        (None, None) => Err(Error::MissingClassifier),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GridGeometry;
    use ndarray::Array2;
    use rand::Rng;

    fn mask_from(pixels: &[(usize, usize)]) -> BinaryMask {
        let h = pixels.iter().map(|p| p.0).max().unwrap() + 1;
        let w = pixels.iter().map(|p| p.1).max().unwrap() + 1;
        let mut grid = Array2::from_elem((h, w), false);
        for &p in pixels {
            grid[p] = true;
        }
        BinaryMask::from_array(grid.view()).unwrap()
    }

    fn inst(pixels: &[(usize, usize)], score: f64) -> Instance {
        let mask = mask_from(pixels);
        let [_, _, rows, cols] = mask.bbox;
        Instance {
            mask,
            soft: Array2::from_elem((rows, cols), 1.0),
            score,
            provenance: Provenance { windows: vec![(0, 0)], merged: 1 },
        }
    }

    fn rect(r0: usize, c0: usize, rows: usize, cols: usize) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for r in r0..r0 + rows {
            for c in c0..c0 + cols {
                v.push((r, c));
            }
        }
        v
    }

    #[test]
    fn iou_hand_case() {
        // 2x2 squares offset by one: intersection 2, union 6
        let a = mask_from(&rect(0, 0, 2, 2));
        let b = mask_from(&rect(1, 0, 2, 2));
        let iou = mask_iou(&a, &b).unwrap();
        assert!((iou - 2.0 / 6.0).abs() < 1e-12);
        assert!((mask_iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let far = mask_from(&rect(10, 10, 2, 2));
        assert_eq!(mask_iou(&a, &far).unwrap(), 0.0);
    }

    #[test]
    fn confidence_filter_is_inclusive() {
        let dets = vec![
            inst(&rect(0, 0, 3, 3), 0.79),
            inst(&rect(10, 0, 3, 3), 0.8),
            inst(&rect(20, 0, 3, 3), 1.0),
        ];
        let kept = filter_confidence(dets.clone(), 0.8);
        assert_eq!(kept.len(), 2);
        let strict = filter_confidence(dets, 1.0);
        assert_eq!(strict.len(), 1);
        assert_eq!(strict[0].score, 1.0);
    }

    #[test]
    fn nms_suppresses_heavy_overlap_keeps_light() {
        // IoU of the 10x10 pair: 90/110 > 0.2 -> lower score suppressed
        let a = inst(&rect(0, 0, 10, 10), 0.9);
        let b = inst(&rect(1, 0, 10, 10), 0.8);
        // IoU with a: 0 -> kept
        let c = inst(&rect(50, 50, 10, 10), 0.5);
        let kept = nms(vec![b.clone(), c.clone(), a.clone()], 0.2);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].mask.bbox, a.mask.bbox);
        assert_eq!(kept[1].mask.bbox, c.mask.bbox);

        // delta high enough to tolerate the overlap keeps all three
        let all = nms(vec![a, b, c], 0.9);
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn nms_tie_breaks_on_area_then_bbox() {
        let small = inst(&rect(0, 0, 4, 4), 0.7);
        let big = inst(&rect(0, 0, 6, 6), 0.7); // same score, larger area wins
        let kept = nms(vec![small, big.clone()], 0.2);
        assert_eq!(kept[0].area(), big.area());
    }

    #[test]
    fn nms_invariants_on_random_inputs() {
        let mut rng = crate::rng::stream(7, "nms-test");
        for _ in 0..20 {
            let mut dets = Vec::new();
            for _ in 0..12 {
                let r0 = rng.gen_range(0..40);
                let c0 = rng.gen_range(0..40);
                let rows = rng.gen_range(3..12);
                let cols = rng.gen_range(3..12);
                let score: f64 = rng.gen_range(0.0..1.0);
                dets.push(inst(&rect(r0, c0, rows, cols), score));
            }
            let delta = 0.3;
            let kept = nms(dets.clone(), delta);
            // kept detections are pairwise below the threshold
            for i in 0..kept.len() {
                for j in (i + 1)..kept.len() {
                    assert!(mask_iou(&kept[i].mask, &kept[j].mask).unwrap() <= delta);
                }
            }
            // every dropped detection conflicts with a kept one of >= score
            for d in &dets {
                let retained = kept.iter().any(|k| k.mask == d.mask && k.score == d.score);
                if !retained {
                    assert!(kept.iter().any(|k| k.score >= d.score
                        && mask_iou(&k.mask, &d.mask).unwrap() > delta));
                }
            }
        }
    }

    #[test]
    fn skeleton_of_thin_bar_is_itself() {
        let bar = mask_from(&rect(0, 0, 1, 40));
        let skel = skeletonize(&bar).unwrap();
        assert_eq!(skel.area(), 40);
    }

    #[test]
    fn skeleton_of_thick_bar_is_thin() {
        let bar = mask_from(&rect(0, 0, 3, 40));
        let skel = skeletonize(&bar).unwrap();
        // thins to (roughly) a single 1-px line
        assert!(skel.area() <= 42, "skeleton area {}", skel.area());
        let local = skel.decode_local().unwrap();
        for col in local.columns() {
            assert!(col.iter().filter(|&&v| v).count() <= 1);
        }
    }

    #[test]
    fn thin_bar_fiber_ratio_near_one() {
        let bar = mask_from(&rect(0, 0, 1, 40));
        let report = fiber_metrics(&bar).unwrap();
        assert!((report.fiber_length - 39.0).abs() < 1e-9);
        // major axis of a uniform 40-px line: 4 * sqrt((40^2 - 1) / 12)
        let expected_major = 4.0 * ((40.0f64 * 40.0 - 1.0) / 12.0).sqrt();
        assert!((report.major_axis - expected_major).abs() < 1e-9);
        assert!(report.ratio > 0.8 && report.ratio < 1.1, "ratio {}", report.ratio);
    }

    #[test]
    fn crossing_diagonals_exceed_threshold() {
        let k = 20usize;
        let mut pixels = Vec::new();
        for i in 0..=2 * k {
            pixels.push((i, i));
            pixels.push((i, 2 * k - i));
        }
        pixels.sort();
        pixels.dedup();
        let report = fiber_metrics(&mask_from(&pixels)).unwrap();
        assert!(report.ratio > FIBER_RATIO_MAX, "ratio {}", report.ratio);
    }

    #[test]
    fn four_armed_cross_exceeds_threshold() {
        let mut pixels = Vec::new();
        for i in 0..=40 {
            pixels.push((20, i));
            pixels.push((i, 20));
        }
        pixels.sort();
        pixels.dedup();
        let report = fiber_metrics(&mask_from(&pixels)).unwrap();
        assert!(report.ratio > FIBER_RATIO_MAX, "ratio {}", report.ratio);
    }

    #[test]
    fn disk_passes_fiber_filter() {
        let mut pixels = Vec::new();
        for r in 0..25usize {
            for c in 0..25usize {
                let dr = r as f64 - 12.0;
                let dc = c as f64 - 12.0;
                if dr * dr + dc * dc <= 100.0 {
                    pixels.push((r, c));
                }
            }
        }
        let report = fiber_metrics(&mask_from(&pixels)).unwrap();
        assert!(report.ratio <= FIBER_RATIO_MAX, "ratio {}", report.ratio);
        let kept = fiber_filter(vec![inst(&pixels, 0.9)], FIBER_RATIO_MAX);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn tiny_masks_bypass_fiber_filter() {
        let dot = inst(&rect(0, 0, 2, 2), 0.9);
        assert!(fiber_metrics(&dot.mask).is_err());
        let kept = fiber_filter(vec![dot], FIBER_RATIO_MAX);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn merge_unions_masks_and_area_weights_scores() {
        let a = inst(&rect(0, 0, 4, 4), 1.0); // area 16
        let b = inst(&rect(3, 3, 4, 4), 0.5); // area 16, overlaps a at (3,3)
        let merged = merge_proximal(vec![a, b]);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].area(), 31);
        assert!((merged[0].score - 0.75).abs() < 1e-12);
        assert_eq!(merged[0].provenance.merged, 2);
    }

    #[test]
    fn merge_is_transitive_but_not_promiscuous() {
        let a = inst(&rect(0, 0, 4, 4), 0.9);
        let b = inst(&rect(3, 3, 4, 4), 0.8); // touches a
        let c = inst(&rect(6, 6, 4, 4), 0.7); // touches b, not a
        let d = inst(&rect(30, 30, 4, 4), 0.6); // isolated
        let merged = merge_proximal(vec![a, b, c, d]);
        assert_eq!(merged.len(), 2);
        let chain = merged.iter().find(|m| m.provenance.merged == 3).unwrap();
        assert_eq!(chain.mask.bbox, [0, 0, 10, 10]);
        assert!(merged.iter().any(|m| m.provenance.merged == 1 && m.score == 0.6));
    }

    #[test]
    fn merge_of_disjoint_set_is_identity_up_to_order() {
        let dets = vec![
            inst(&rect(0, 0, 3, 3), 0.9),
            inst(&rect(10, 10, 3, 3), 0.8),
        ];
        let merged = merge_proximal(dets.clone());
        assert_eq!(merged.len(), 2);
        for d in &dets {
            assert!(merged.iter().any(|m| m.mask == d.mask && m.score == d.score));
        }
    }

    #[test]
    fn size_filter_floor_is_inclusive() {
        let at_floor = inst(&rect(0, 0, 10, 10), 0.9); // exactly 100 px
        let below = inst(&rect(20, 0, 9, 11), 0.9); // 99 px
        let kept = size_filter(vec![at_floor, below], 100);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].area(), 100);
    }

    fn flat_scene(n: usize) -> SceneGrid {
        SceneGrid::new(
            GridGeometry::new(n, n, 45.0).unwrap(),
            Array2::from_elem((n, n), 1900.0),
            Array2::from_elem((n, n), true),
            None,
        )
        .unwrap()
    }

    #[test]
    fn baseline_mode_is_filter_then_nms() {
        let scene = flat_scene(64);
        let dets = vec![
            inst(&rect(0, 0, 10, 10), 0.9),
            inst(&rect(1, 0, 10, 10), 0.85), // suppressed by NMS
            inst(&rect(40, 40, 10, 10), 0.5), // dropped by tau
        ];
        let cfg = PipelineConfig::default();
        let out = run_mode(dets.clone(), &scene, &cfg, None).unwrap();
        let reference = nms(filter_confidence(dets, cfg.tau), cfg.delta);
        assert_eq!(out.len(), 1);
        assert_eq!(out.len(), reference.len());
        assert_eq!(out[0].mask, reference[0].mask);
    }

    #[test]
    fn high_sensitivity_drops_fibrous_shapes() {
        let scene = flat_scene(64);
        let mut cross = Vec::new();
        for i in 0..=40 {
            cross.push((20, i));
            cross.push((i, 20));
        }
        cross.sort();
        cross.dedup();
        let dets = vec![inst(&cross, 0.95), inst(&rect(50, 50, 8, 8), 0.9)];
        let cfg = PipelineConfig {
            mode: PipelineMode::HighSensitivity,
            ..PipelineConfig::default()
        };
        let out = run_mode(dets, &scene, &cfg, None).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].mask.bbox, [50, 50, 8, 8]);
    }

    #[test]
    fn high_precision_without_classifier_uses_size_floor_or_errors() {
        let scene = flat_scene(64);
        let dets = vec![inst(&rect(0, 0, 10, 10), 0.9), inst(&rect(40, 40, 3, 3), 0.9)];
        let cfg = PipelineConfig {
            mode: PipelineMode::HighPrecision,
            size_floor: Some(50),
            ..PipelineConfig::default()
        };
        let out = run_mode(dets.clone(), &scene, &cfg, None).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].area(), 100);

        let bare = PipelineConfig {
            mode: PipelineMode::HighPrecision,
            size_floor: None,
            ..PipelineConfig::default()
        };
        assert!(matches!(
            run_mode(dets, &scene, &bare, None),
            Err(Error::MissingClassifier)
        ));
    }

    #[test]
    fn invalid_thresholds_rejected() {
        let bad = PipelineConfig { tau: 1.5, ..PipelineConfig::default() };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig { delta: -0.1, ..PipelineConfig::default() };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig { fiber_ratio_max: 1.0, ..PipelineConfig::default() };
        assert!(bad.validate().is_err());
    }
}
