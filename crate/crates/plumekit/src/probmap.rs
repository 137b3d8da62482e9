//! Confidence-weighted aggregation of overlapping detections into a plume
//! probability map, plus correlation diagnostics against the XCH4 field.

use ndarray::Array2;

use crate::detector::DetectionSet;
use crate::error::{Error, Result};
use crate::raster::{GridGeometry, SceneGrid};

/// Per-pixel plume probability: the confidence-weighted average of soft mask
/// values over the detections covering each pixel,
/// P(p) = sum_k s_k M_k(p) / sum_k s_k, and 0 where nothing covers p.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid {
    pub geometry: GridGeometry,
    pub p: Array2<f32>,
}

/// Build the probability map. A detection covers the pixels of its bounding
/// box (the domain of its soft mask); detections with score exactly 0 carry
/// no weight and are excluded.
pub fn aggregate(dets: &DetectionSet) -> ProbabilityGrid {
    let (h, w) = (dets.geometry.height, dets.geometry.width);
    let mut num = Array2::<f64>::zeros((h, w));
    let mut den = Array2::<f64>::zeros((h, w));
    for det in &dets.instances {
        if det.score <= 0.0 {
            continue;
        }
        let [r0, c0, rows, cols] = det.mask.bbox;
        for r in 0..rows {
            for c in 0..cols {
                let p = (r0 + r, c0 + c);
                num[p] += det.score * det.soft[(r, c)] as f64;
                den[p] += det.score;
            }
        }
    }
    let mut p = Array2::<f32>::zeros((h, w));
    for (idx, out) in p.indexed_iter_mut() {
        if den[idx] > 0.0 {
            *out = (num[idx] / den[idx]) as f32;
        }
    }
    ProbabilityGrid { geometry: dets.geometry, p }
}

/// Correlation diagnostics between the probability map and XCH4, over the
/// pixels where the map is positive and the scene valid.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorrelationReport {
    pub pearson: f64,
    pub spearman: f64,
    pub n: usize,
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Ranks with ties assigned the average of the tied positions (1-based).
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // mean of positions i+1 ..= j+1
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn correlation_report(map: &ProbabilityGrid, scene: &SceneGrid) -> Result<CorrelationReport> {
    if map.geometry != scene.geometry {
        return Err(Error::InvalidParameter("probability map / scene geometry mismatch".into()));
    }
    let mut p = Vec::new();
    let mut x = Vec::new();
    for ((r, c), &v) in map.p.indexed_iter() {
        if v > 0.0 && scene.valid[(r, c)] {
            p.push(v as f64);
            x.push(scene.xch4[(r, c)] as f64);
        }
    }
    if p.len() < 2 {
        return Err(Error::UndefinedCorrelation);
    }
    let r = pearson(&p, &x)?;
    let rho = pearson(&average_ranks(&p), &average_ranks(&x))?;
    Ok(CorrelationReport { pearson: r, spearman: rho, n: p.len() })
}
