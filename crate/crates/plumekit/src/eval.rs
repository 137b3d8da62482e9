//! Pixel- and instance-level evaluation: semantic union, precision/recall,
//! greedy instance matching, average precision, and the threshold sweep.

use serde::{Deserialize, Serialize};

use crate::detector::Instance;
use crate::error::{Error, Result};
use crate::postproc::{self, PipelineConfig};
use crate::qnd::RandomForestModel;
use crate::raster::{BinaryMask, SceneGrid};

/// Greedy matching outcome. Every pair has IoU > theta and each ground
/// truth is claimed by at most one prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchResult {
    /// (prediction index, ground-truth index, IoU)
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_truths: Vec<usize>,
}

/// Instance-level counts and scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub map: Option<f64>,
}

/// Union of instance masks: the semantic-segmentation view of a detection
/// set. `None` when there are no instances.
pub fn union_semantic(instances: &[Instance]) -> Option<BinaryMask> {
    if instances.is_empty() {
        return None;
    }
    let masks: Vec<&BinaryMask> = instances.iter().map(|i| &i.mask).collect();
    Some(BinaryMask::union(&masks).expect("nonempty input"))
}

/// Pixel precision/recall/F1 between two (possibly empty) masks. With no
/// predicted pixels precision is 1 by convention (nothing asserted, nothing
/// wrong); empty-empty scores perfect.
pub fn pixel_metrics(pred: Option<&BinaryMask>, truth: Option<&BinaryMask>) -> (f64, f64, f64) {
    let (tp, fp, fn_) = match (pred, truth) {
        (None, None) => (0usize, 0usize, 0usize),
        (Some(p), None) => (0, p.area(), 0),
        (None, Some(t)) => (0, 0, t.area()),
        (Some(p), Some(t)) => {
            let tp = p.intersection_area(t);
            (tp, p.area() - tp, t.area() - tp)
        }
    };
    counts_to_prf(tp, fp, fn_)
}

fn counts_to_prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Match predictions to ground truths greedily by descending confidence
/// (ties: larger area, then lower index): each prediction claims the
/// unclaimed truth of maximal IoU, if that IoU exceeds theta.
pub fn match_instances(
    preds: &[Instance],
    truths: &[BinaryMask],
    theta: f64,
) -> Result<MatchResult> {
    if !(0.0 < theta && theta < 1.0) {
        return Err(Error::InvalidParameter("theta must be in (0, 1)".into()));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| {
        preds[j]
            .score
            .partial_cmp(&preds[i].score)
            .expect("finite scores")
            .then(preds[j].area().cmp(&preds[i].area()))
            .then(i.cmp(&j))
    });
    let mut claimed = vec![false; truths.len()];
    let mut pairs = Vec::new();
    let mut unmatched_preds = Vec::new();
    for &pi in &order {
        let mut best: Option<(usize, f64)> = None;
        for (ti, truth) in truths.iter().enumerate() {
            if claimed[ti] {
                continue;
            }
            let iou = postproc::mask_iou(&preds[pi].mask, truth)?;
            if iou > theta && best.map_or(true, |(_, b)| iou > b) {
                best = Some((ti, iou));
            }
        }
        match best {
            Some((ti, iou)) => {
                claimed[ti] = true;
                pairs.push((pi, ti, iou));
            }
            None => unmatched_preds.push(pi),
        }
    }
    unmatched_preds.sort();
    let unmatched_truths: Vec<usize> =
        (0..truths.len()).filter(|&t| !claimed[t]).collect();
    Ok(MatchResult { pairs, unmatched_preds, unmatched_truths })
}

/// Instance precision/recall/F1 from a matching.
pub fn instance_metrics(m: &MatchResult) -> MetricsReport {
    let tp = m.pairs.len();
    let fp = m.unmatched_preds.len();
    let fn_ = m.unmatched_truths.len();
    let (precision, recall, f1) = counts_to_prf(tp, fp, fn_);
    MetricsReport { tp, fp, fn_, precision, recall, f1, map: None }
}

/// Average precision at one IoU threshold: sweep the confidence cutoff over
/// the distinct prediction scores, re-match at each, and integrate precision
/// over recall with the monotone (all-point interpolated) envelope.
pub fn map_at_iou(preds: &[Instance], truths: &[BinaryMask], theta: f64) -> Result<f64> {
    if truths.is_empty() {
        return Err(Error::InvalidParameter("mAP needs at least one ground truth".into()));
    }
    let mut cutoffs: Vec<f64> = preds.iter().map(|p| p.score).collect();
    cutoffs.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    cutoffs.dedup();
    // (recall, precision) per cutoff, in descending-cutoff order
    let mut points = Vec::with_capacity(cutoffs.len());
    for &s in &cutoffs {
        let kept: Vec<Instance> =
            preds.iter().filter(|p| p.score >= s).cloned().collect();
        let m = match_instances(&kept, truths, theta)?;
        let rep = instance_metrics(&m);
        points.push((rep.recall, rep.precision));
    }
    // monotone envelope over recall: p_env(r) = max precision at recall >= r
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite recall"));
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..points.len() {
        let (r, _) = points[k];
        if r <= prev_recall {
            continue;
        }
        let p_env = points[k..]
            .iter()
            .map(|&(_, p)| p)
            .fold(f64::NEG_INFINITY, f64::max);
        ap += (r - prev_recall) * p_env;
        prev_recall = r;
    }
    Ok(ap)
}

/// Which pipeline parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Tau,
    Delta,
    Theta,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Delta => "delta",
            SweepParam::Theta => "theta",
        }
    }
}

/// One row of a sweep: the varied parameter, its value, and the resulting
/// metrics (instance-level, after post-processing with that setting).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub report: MetricsReport,
}

/// Evaluate a grid of values for one parameter while holding the rest of the
/// configuration fixed. `dets` are raw (pre-post-processing) detections.
pub fn sweep(
    dets: &[Instance],
    truths: &[BinaryMask],
    scene: &SceneGrid,
    base: &PipelineConfig,
    theta: f64,
    param: SweepParam,
    values: &[f64],
    classifier: Option<&RandomForestModel>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("empty sweep grid".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = *base;
        let mut th = theta;
        match param {
            SweepParam::Tau => cfg.tau = v,
            SweepParam::Delta => cfg.delta = v,
            SweepParam::Theta => th = v,
        }
        let processed = postproc::run_mode(dets.to_vec(), scene, &cfg, classifier)?;
        let m = match_instances(&processed, truths, th)?;
        let mut report = instance_metrics(&m);
        report.map = Some(map_at_iou(&processed, truths, th)?);
        rows.push(SweepRow { param: param.name().to_string(), value: v, report });
    }
    Ok(rows)
}

/// Render sweep rows as CSV, ordered by (parameter, value).
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.param
            .cmp(&b.param)
            .then(a.value.partial_cmp(&b.value).expect("finite values"))
    });
    let mut out = String::from("param,value,TP,FP,FN,precision,recall,f1,map\n");
    for row in sorted {
        let r = &row.report;
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            row.param,
            row.value,
            r.tp,
            r.fp,
            r.fn_,
            r.precision,
            r.recall,
            r.f1,
            r.map.unwrap_or(f64::NAN),
        ));
    }
    out
}
