//! QND ("quantitative normality descriptor") feature extraction and the
//! plume/artifact random-forest classifier.
//!
//! A detection's within-mask XCH4 distribution is summarized by (a) hotspot
//! core statistics from DBSCAN clustering of the brightest pixels and (b) a
//! percentile-indexed normality-deviation curve compressed by a degree-6
//! polynomial fit. Albedo gets the same curve treatment; scenes without an
//! albedo channel use a constant 0.5 proxy so the feature vector keeps its
//! shape (those entries are then uninformative constants).

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, SceneGrid};

/// Classifier output classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Plume,
    Artifact,
}

/// Hotspot-core summary statistics. `contrast` and `z_score` compare the
/// core mean against the rest of the mask; `intensity` is their difference
/// in ppb.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoreMetrics {
    pub contrast: f64,
    pub z_score: f64,
    pub intensity: f64,
}

/// Default DBSCAN neighborhood radius in pixels.
pub const CORE_EPSILON_PX: f64 = 10.0;
/// Default DBSCAN minimum cluster size.
pub const CORE_MIN_PTS: usize = 25;
/// Default within-mask percentile above which pixels are clustered.
pub const CORE_PERCENTILE: f64 = 98.0;

/// Linear-interpolation percentile of a sorted slice (inclusive convention:
/// p=0 is the minimum, p=100 the maximum).
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = (p / 100.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac
    }
}

/// DBSCAN over 2-D points with Euclidean distance. Returns one label per
/// point: cluster index >= 0, or -1 for noise.
pub fn dbscan(points: &[(f64, f64)], epsilon: f64, min_pts: usize) -> Vec<i64> {
    let n = points.len();
    let eps2 = epsilon * epsilon;
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| {
                let dr = points[i].0 - points[j].0;
                let dc = points[i].1 - points[j].1;
                dr * dr + dc * dc <= eps2
            })
            .collect()
    };
    let mut labels = vec![-2i64; n]; // -2 unvisited, -1 noise
    let mut cluster = 0i64;
    for i in 0..n {
        if labels[i] != -2 {
            continue;
        }
        let nbrs = neighbors(i);
        if nbrs.len() < min_pts {
            labels[i] = -1;
            continue;
        }
        labels[i] = cluster;
        let mut frontier = nbrs;
        let mut k = 0;
        while k < frontier.len() {
            let j = frontier[k];
            k += 1;
            if labels[j] == -1 {
                labels[j] = cluster; // border point reclaimed from noise
            }
            if labels[j] != -2 {
                continue;
            }
            labels[j] = cluster;
            let jn = neighbors(j);
            if jn.len() >= min_pts {
                frontier.extend(jn);
            }
        }
        cluster += 1;
    }
    labels
}

/// Extract the hotspot core of a detection: pixels above the q-th
/// within-mask percentile, clustered with DBSCAN; the largest cluster is the
/// core. Background statistics come from the valid mask pixels outside the
/// core.
pub fn plume_core(
    scene: &SceneGrid,
    mask: &BinaryMask,
    epsilon_px: f64,
    min_pts: usize,
    q: f64,
) -> Result<(BinaryMask, CoreMetrics)> {
    if mask.area() < min_pts {
        return Err(Error::NoHotspotCore);
    }
    let pixels = mask.pixels();
    let mut valid_px: Vec<((usize, usize), f64)> = Vec::with_capacity(pixels.len());
    for &(r, c) in &pixels {
        if scene.valid[(r, c)] {
            valid_px.push(((r, c), scene.xch4[(r, c)] as f64));
        }
    }
    if valid_px.is_empty() {
        return Err(Error::NoHotspotCore);
    }
    let mut sorted: Vec<f64> = valid_px.iter().map(|&(_, v)| v).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite XCH4"));
    let threshold = percentile_sorted(&sorted, q);

    let bright: Vec<(usize, usize)> = valid_px
        .iter()
        .filter(|&&(_, v)| v > threshold)
        .map(|&(p, _)| p)
        .collect();
    if bright.is_empty() {
        return Err(Error::NoHotspotCore);
    }
    let coords: Vec<(f64, f64)> = bright.iter().map(|&(r, c)| (r as f64, c as f64)).collect();
    let labels = dbscan(&coords, epsilon_px, min_pts);
    let n_clusters = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0)) as usize;
    if n_clusters == 0 {
        return Err(Error::NoHotspotCore);
    }
    let mut sizes = vec![0usize; n_clusters];
    for &l in &labels {
        if l >= 0 {
            sizes[l as usize] += 1;
        }
    }
    let best = sizes
        .iter()
        .enumerate()
        .max_by_key(|&(i, &s)| (s, std::cmp::Reverse(i)))
        .map(|(i, _)| i as i64)
        .expect("at least one cluster");

    let core_set: std::collections::HashSet<(usize, usize)> = bright
        .iter()
        .zip(&labels)
        .filter(|&(_, &l)| l == best)
        .map(|(&p, _)| p)
        .collect();
    let (h, w) = scene.xch4.dim();
    let mut core_grid = Array2::from_elem((h, w), false);
    for &p in &core_set {
        core_grid[p] = true;
    }
    let core_mask = BinaryMask::from_array(core_grid.view())?;

    let mut core_sum = 0.0f64;
    let mut bkrd: Vec<f64> = Vec::new();
    for &(p, v) in &valid_px {
        if core_set.contains(&p) {
            core_sum += v;
        } else {
            bkrd.push(v);
        }
    }
    if bkrd.is_empty() {
        return Err(Error::NoHotspotCore);
    }
    let mu_core = core_sum / core_set.len() as f64;
    let mu_bkrd = bkrd.iter().sum::<f64>() / bkrd.len() as f64;
    let var_bkrd =
        bkrd.iter().map(|v| (v - mu_bkrd) * (v - mu_bkrd)).sum::<f64>() / bkrd.len() as f64;
    let sigma_bkrd = var_bkrd.sqrt();
    let metrics = CoreMetrics {
        contrast: mu_core / mu_bkrd,
        z_score: (mu_core - mu_bkrd) / sigma_bkrd,
        intensity: mu_core - mu_bkrd,
    };
    Ok((core_mask, metrics))
}

/// Percentile-indexed deviation of the empirical CDF from the fitted normal
/// CDF: D_i = |(1/N) sum 1(x_j <= x_i) - Phi((x_i - mu) / sigma)| at the
/// i-th percentile, i = 1..100.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QndCurve {
    pub d: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
}

/// Standard normal CDF via the error function; absolute error < 1e-10.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Minimum sample size for a meaningful deviation curve.
pub const QND_MIN_SAMPLES: usize = 30;

pub fn qnd_curve(values: &[f64]) -> Result<QndCurve> {
    let n = values.len();
    if n < QND_MIN_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "deviation curve needs >= {QND_MIN_SAMPLES} values, got {n}"
        )));
    }
    let mu = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    if sigma < 1e-12 {
        return Err(Error::DegenerateDistribution);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mut d = Vec::with_capacity(100);
    for i in 1..=100 {
        let x_i = percentile_sorted(&sorted, i as f64);
        // empirical CDF at x_i on the sorted sample
        let count = sorted.partition_point(|&v| v <= x_i);
        let ecdf = count as f64 / n as f64;
        d.push((ecdf - normal_cdf((x_i - mu) / sigma)).abs());
    }
    Ok(QndCurve { d, mu, sigma, n })
}

/// Degree-6 least-squares fit of D_i against percentile index i, with the
/// root-mean-square residual. Coefficients are in the original percentile
/// domain: p(i) = c0 + c1 i + ... + c6 i^6.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyFit {
    pub coeffs: [f64; 7],
    pub rms: f64,
}

pub fn fit_poly6(curve: &QndCurve) -> Result<PolyFit> {
    if curve.d.len() != 100 {
        return Err(Error::InvalidParameter("curve must have 100 points".into()));
    }
    // fit on [-1, 1] for conditioning: t = (i - 50.5) / 49.5
    let m = 50.5f64;
    let h = 49.5f64;
    let rows = 100;
    let mut a = nalgebra::DMatrix::<f64>::zeros(rows, 7);
    let mut b = nalgebra::DVector::<f64>::zeros(rows);
    for (row, &di) in curve.d.iter().enumerate() {
        let t = ((row + 1) as f64 - m) / h;
        let mut tk = 1.0;
        for k in 0..7 {
            a[(row, k)] = tk;
            tk *= t;
        }
        b[row] = di;
    }
    let svd = a.clone().svd(true, true);
    let sol = svd.solve(&b, 1e-12).map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let residual = &a * &sol - &b;
    let rms = (residual.norm_squared() / rows as f64).sqrt();

    // expand p(i) = q((i - m) / h) back to the original domain
    let mut coeffs = [0.0f64; 7];
    // powers of the linear map (i - m) / h = (-m/h) + (1/h) i
    let mut power = vec![1.0f64]; // ((i - m)/h)^k as i-polynomial coefficients
    for k in 0..7 {
        for (deg, &pc) in power.iter().enumerate() {
            coeffs[deg] += sol[k] * pc;
        }
        // multiply by (-m/h + i/h)
        let mut next = vec![0.0f64; power.len() + 1];
        for (deg, &pc) in power.iter().enumerate() {
            next[deg] += pc * (-m / h);
            next[deg + 1] += pc / h;
        }
        power = next;
    }
    Ok(PolyFit { coeffs, rms })
}

fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Polynomial-shape descriptors: values at the 50th and 90th percentiles and
/// the (min, max, mean) of the polynomial evaluated at the derivative's real
/// roots inside [1, 99]. With no interior critical point the endpoint values
/// at {1, 99} stand in.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PolyDescriptors {
    pub p50: f64,
    pub p90: f64,
    pub crit_min: f64,
    pub crit_max: f64,
    pub crit_mean: f64,
}

/// Real roots of the derivative inside [lo, hi], by sign bracketing on a
/// 0.01-step grid plus bisection to 1e-8.
fn derivative_roots(coeffs: &[f64; 7], lo: f64, hi: f64) -> Vec<f64> {
    let deriv: Vec<f64> = (1..7).map(|k| coeffs[k] * k as f64).collect();
    let step = 0.01;
    let mut roots = Vec::new();
    let push = |r: f64, roots: &mut Vec<f64>| {
        if roots.iter().all(|&p: &f64| (p - r).abs() > 1e-6) {
            roots.push(r);
        }
    };
    let steps = ((hi - lo) / step).round() as usize;
    let mut x0 = lo;
    let mut f0 = poly_eval(&deriv, x0);
    for s in 1..=steps {
        let x1 = lo + s as f64 * step;
        let f1 = poly_eval(&deriv, x1);
        if f0 == 0.0 {
            push(x0, &mut roots);
        } else if f0 * f1 < 0.0 {
            let (mut a, mut b) = (x0, x1);
            let mut fa = f0;
            while b - a > 1e-8 {
                let mid = 0.5 * (a + b);
                let fm = poly_eval(&deriv, mid);
                if fa * fm <= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                    fa = fm;
                }
            }
            push(0.5 * (a + b), &mut roots);
        }
        x0 = x1;
        f0 = f1;
    }
    if f0 == 0.0 {
        push(x0, &mut roots);
    }
    roots
}

pub fn poly_descriptors(coeffs: &[f64; 7]) -> PolyDescriptors {
    let roots = derivative_roots(coeffs, 1.0, 99.0);
    let at: Vec<f64> = if roots.is_empty() {
        vec![poly_eval(coeffs, 1.0), poly_eval(coeffs, 99.0)]
    } else {
        roots.iter().map(|&r| poly_eval(coeffs, r)).collect()
    };
    let crit_min = at.iter().copied().fold(f64::INFINITY, f64::min);
    let crit_max = at.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let crit_mean = at.iter().sum::<f64>() / at.len() as f64;
    PolyDescriptors {
        p50: poly_eval(coeffs, 50.0),
        p90: poly_eval(coeffs, 90.0),
        crit_min,
        crit_max,
        crit_mean,
    }
}

/// The fixed 12-feature vector fed to the classifier.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct QndFeatures {
    pub contrast: f64,
    pub z_score: f64,
    pub intensity: f64,
    pub qnd_ch4_p50: f64,
    pub qnd_alb_p50: f64,
    pub qnd_alb_p90: f64,
    pub ch4_crit_min: f64,
    pub ch4_crit_max: f64,
    pub ch4_crit_mean: f64,
    pub alb_crit_min: f64,
    pub alb_crit_max: f64,
    pub alb_crit_mean: f64,
}

pub const FEATURE_ORDER: [&str; 12] = [
    "contrast",
    "z_score",
    "intensity",
    "qnd_ch4_p50",
    "qnd_alb_p50",
    "qnd_alb_p90",
    "ch4_crit_min",
    "ch4_crit_max",
    "ch4_crit_mean",
    "alb_crit_min",
    "alb_crit_max",
    "alb_crit_mean",
];

impl QndFeatures {
    pub fn as_vector(&self) -> [f64; 12] {
        [
            self.contrast,
            self.z_score,
            self.intensity,
            self.qnd_ch4_p50,
            self.qnd_alb_p50,
            self.qnd_alb_p90,
            self.ch4_crit_min,
            self.ch4_crit_max,
            self.ch4_crit_mean,
            self.alb_crit_min,
            self.alb_crit_max,
            self.alb_crit_mean,
        ]
    }
}

/// Albedo proxy for scenes without an albedo channel: a constant field,
/// which yields a flat deviation curve of 0.5 (deterministic filler).
const ALBEDO_PROXY: f64 = 0.5;

fn curve_or_constant(values: &[f64]) -> Result<QndCurve> {
    match qnd_curve(values) {
        Ok(c) => Ok(c),
        // a constant distribution has ECDF 1 at every percentile and the
        // normal CDF is taken as its 0.5 midpoint: D = 0.5 everywhere
        Err(Error::DegenerateDistribution) => Ok(QndCurve {
            d: vec![0.5; 100],
            mu: values.first().copied().unwrap_or(ALBEDO_PROXY),
            sigma: 0.0,
            n: values.len(),
        }),
        Err(e) => Err(e),
    }
}

/// Assemble the full feature vector for one detection.
pub fn extract_features(scene: &SceneGrid, mask: &BinaryMask) -> Result<QndFeatures> {
    let (_core, metrics) = plume_core(scene, mask, CORE_EPSILON_PX, CORE_MIN_PTS, CORE_PERCENTILE)?;
    if !metrics.z_score.is_finite() || !metrics.contrast.is_finite() {
        return Err(Error::DegenerateDistribution);
    }

    let pixels = mask.pixels();
    let mut ch4 = Vec::with_capacity(pixels.len());
    let mut alb = Vec::with_capacity(pixels.len());
    for &(r, c) in &pixels {
        if scene.valid[(r, c)] {
            ch4.push(scene.xch4[(r, c)] as f64);
            alb.push(scene.albedo.as_ref().map_or(ALBEDO_PROXY, |a| a[(r, c)] as f64));
        }
    }
    let ch4_curve = qnd_curve(&ch4)?;
    let ch4_fit = fit_poly6(&ch4_curve)?;
    let ch4_desc = poly_descriptors(&ch4_fit.coeffs);

    let alb_curve = curve_or_constant(&alb)?;
    let alb_fit = fit_poly6(&alb_curve)?;
    let alb_desc = poly_descriptors(&alb_fit.coeffs);

    Ok(QndFeatures {
        contrast: metrics.contrast,
        z_score: metrics.z_score,
        intensity: metrics.intensity,
        qnd_ch4_p50: ch4_desc.p50,
        qnd_alb_p50: alb_desc.p50,
        qnd_alb_p90: alb_desc.p90,
        ch4_crit_min: ch4_desc.crit_min,
        ch4_crit_max: ch4_desc.crit_max,
        ch4_crit_mean: ch4_desc.crit_mean,
        alb_crit_min: alb_desc.crit_min,
        alb_crit_max: alb_desc.crit_max,
        alb_crit_mean: alb_desc.crit_mean,
    })
}

// ---------------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { p_plume: f64 },
}

/// One CART tree, nodes in a flat arena; index 0 is the root.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Leaf plume-probability reached by a feature vector.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { p_plume } => return *p_plume,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// Bagged CART forest with Gini splits. Deterministic for a fixed seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RandomForestModel {
    pub version: u32,
    pub feature_order: Vec<String>,
    pub trees: Vec<Tree>,
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub oob_accuracy: Option<f64>,
}

pub const RF_DEFAULT_TREES: usize = 200;
pub const RF_DEFAULT_DEPTH: usize = 12;

fn gini(plume: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = plume as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [Class],
    n_candidates: usize,
    max_depth: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let plume = idx.iter().filter(|&&i| self.y[i] == Class::Plume).count();
        self.nodes.push(Node::Leaf { p_plume: plume as f64 / idx.len() as f64 });
        self.nodes.len() - 1
    }

    fn build(&mut self, idx: &[usize], depth: usize, rng: &mut impl rand::Rng) -> usize {
        let plume = idx.iter().filter(|&&i| self.y[i] == Class::Plume).count();
        if depth >= self.max_depth || plume == 0 || plume == idx.len() || idx.len() < 2 {
            return self.leaf(idx);
        }
        let p = self.x[0].len();
        let mut features: Vec<usize> = (0..p).collect();
        // Fisher-Yates prefix: candidate subset of sqrt(p) features
        for k in 0..self.n_candidates.min(p) {
            let j = rng.gen_range(k..p);
            features.swap(k, j);
        }
        let mut candidates = features[..self.n_candidates.min(p)].to_vec();
        candidates.sort(); // fixed evaluation order for tie determinism

        let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)
        for &f in &candidates {
            let mut vals: Vec<(f64, bool)> = idx
                .iter()
                .map(|&i| (self.x[i][f], self.y[i] == Class::Plume))
                .collect();
            vals.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
            let total = vals.len();
            let total_plume: usize = vals.iter().filter(|v| v.1).count();
            let mut left_n = 0usize;
            let mut left_plume = 0usize;
            for w in 0..total - 1 {
                left_n += 1;
                if vals[w].1 {
                    left_plume += 1;
                }
                if vals[w].0 == vals[w + 1].0 {
                    continue; // can't split between equal values
                }
                let right_n = total - left_n;
                let right_plume = total_plume - left_plume;
                let impurity = (left_n as f64 * gini(left_plume, left_n)
                    + right_n as f64 * gini(right_plume, right_n))
                    / total as f64;
                if best.map_or(true, |(b, ..)| impurity < b) {
                    let threshold = 0.5 * (vals[w].0 + vals[w + 1].0);
                    best = Some((impurity, f, threshold));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(idx);
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        if left_idx.is_empty() || right_idx.is_empty() {
            return self.leaf(idx);
        }
        let node = self.nodes.len();
        self.nodes.push(Node::Leaf { p_plume: 0.0 }); // placeholder
        let left = self.build(&left_idx, depth + 1, rng);
        let right = self.build(&right_idx, depth + 1, rng);
        self.nodes[node] = Node::Split { feature, threshold, left, right };
        node
    }
}

/// Train a random forest. `x` is row-major samples by features; every tree
/// sees a bootstrap resample of size n and sqrt(p) candidate features per
/// node.
pub fn rf_train(
    x: &[Vec<f64>],
    y: &[Class],
    n_trees: usize,
    max_depth: usize,
    seed: u64,
) -> Result<RandomForestModel> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidParameter("empty or mismatched training data".into()));
    }
    let p = x[0].len();
    if p == 0 || x.iter().any(|row| row.len() != p) {
        return Err(Error::InvalidParameter("ragged feature matrix".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite feature value".into()));
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(Error::SingleClass);
    }
    let n = x.len();
    let n_candidates = (p as f64).sqrt().round().max(1.0) as usize;

    let mut trees = Vec::with_capacity(n_trees);
    // per-sample OOB accumulator: (sum of p_plume, tree count)
    let mut oob: Vec<(f64, usize)> = vec![(0.0, 0); n];
    for t in 0..n_trees {
        let mut rng = crate::rng::stream(seed, &format!("rf-tree-{t}"));
        let mut in_bag = vec![false; n];
        let mut sample: Vec<usize> = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            in_bag[i] = true;
            sample.push(i);
        }
        let mut builder =
            TreeBuilder { x, y, n_candidates, max_depth, nodes: Vec::new() };
        let root = builder.build(&sample, 0, &mut rng);
        debug_assert_eq!(root, 0);
        let tree = Tree { nodes: builder.nodes };
        for i in 0..n {
            if !in_bag[i] {
                oob[i].0 += tree.predict(&x[i]);
                oob[i].1 += 1;
            }
        }
        trees.push(tree);
    }

    let mut correct = 0usize;
    let mut counted = 0usize;
    for (i, &(sum, votes)) in oob.iter().enumerate() {
        if votes == 0 {
            continue;
        }
        counted += 1;
        let p_plume = sum / votes as f64;
        let class = if p_plume > 0.5 { Class::Plume } else { Class::Artifact };
        if class == y[i] {
            correct += 1;
        }
    }
    let oob_accuracy = (counted > 0).then(|| correct as f64 / counted as f64);

    let feature_order = if p == FEATURE_ORDER.len() {
        FEATURE_ORDER.iter().map(|s| s.to_string()).collect()
    } else {
        (0..p).map(|i| format!("f{i}")).collect()
    };
    Ok(RandomForestModel {
        version: 1,
        feature_order,
        trees,
        n_trees,
        max_depth,
        seed,
        oob_accuracy,
    })
}

impl RandomForestModel {
    /// Class and its probability: the mean of per-tree plume probabilities,
    /// argmax class, ties resolved to artifact.
    pub fn predict(&self, features: &[f64]) -> Result<(Class, f64)> {
        if features.len() != self.feature_order.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_order.len(),
                got: features.len(),
            });
        }
        let p_plume =
            self.trees.iter().map(|t| t.predict(features)).sum::<f64>() / self.trees.len() as f64;
        if p_plume > 0.5 {
            Ok((Class::Plume, p_plume))
        } else {
            Ok((Class::Artifact, 1.0 - p_plume))
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        let model: Self = serde_json::from_str(&json)?;
        if model.version != 1 {
            return Err(Error::Schema(format!("unsupported model version {}", model.version)));
        }
        if model.trees.is_empty() {
            return Err(Error::Schema("model has no trees".into()));
        }
        Ok(model)
    }
}
