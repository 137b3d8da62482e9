//! Labeled synthetic scene generation: Gaussian background noise, a
//! steady-state Gaussian-plume enhancement surrogate, hard-negative artifact
//! categories, and deterministic seeded composition.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GridGeometry, SceneGrid};
use crate::rng;

/// One synthetic plume: source pixel, emission rate and the wind/spread
/// parameters of the crosswind-Gaussian surrogate sigma_y(x) = a * x^b.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlumeSpec {
    pub source: (usize, usize),
    /// Emission rate Q in t/h.
    pub emission_rate_tph: f64,
    /// Degrees clockwise from grid north; the direction the plume extends.
    pub wind_direction_deg: f64,
    /// Wind speed u in m/s.
    pub wind_speed_ms: f64,
    pub spread_a: f64,
    pub spread_b: f64,
}

impl PlumeSpec {
    pub const DEFAULT_SPREAD_A: f64 = 0.08;
    pub const DEFAULT_SPREAD_B: f64 = 0.9;

    fn validate(&self, geometry: &GridGeometry) -> Result<()> {
        if !(self.wind_speed_ms > 0.0) {
            return Err(Error::InvalidParameter("wind speed must be > 0".into()));
        }
        if !(self.spread_a > 0.0) {
            return Err(Error::InvalidParameter("spread coefficient a must be > 0".into()));
        }
        if !(self.spread_b > 0.0 && self.spread_b <= 1.0) {
            return Err(Error::InvalidParameter("spread exponent b must be in (0, 1]".into()));
        }
        if self.source.0 >= geometry.height || self.source.1 >= geometry.width {
            return Err(Error::InvalidParameter("plume source outside grid".into()));
        }
        Ok(())
    }
}

/// Ground-truth plume label produced by injection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlumeLabel {
    pub mask: BinaryMask,
    pub source: (usize, usize),
    pub emission_rate_tph: f64,
}

/// Hard-negative artifact categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Stripe,
    CloudPatch,
    SmallEnhancement,
    DispersedEnhancement,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ArtifactSpec {
    pub kind: ArtifactKind,
    pub amplitude_ppb: f64,
    /// (row, col) center, or the starting row for stripes.
    pub placement: (usize, usize),
    /// Pixels: band height (stripe), blob radius (cloud), FWHM
    /// (small enhancement), or Gaussian sigma (dispersed enhancement).
    pub extent_px: usize,
}

impl ArtifactSpec {
    fn validate(&self, geometry: &GridGeometry) -> Result<()> {
        if !(self.amplitude_ppb > 0.0) {
            return Err(Error::InvalidParameter("artifact amplitude must be > 0".into()));
        }
        if self.extent_px < 1 {
            return Err(Error::InvalidParameter("artifact extent must be >= 1".into()));
        }
        if self.placement.0 >= geometry.height || self.placement.1 >= geometry.width {
            return Err(Error::InvalidParameter("artifact placement outside grid".into()));
        }
        if self.kind == ArtifactKind::SmallEnhancement && self.extent_px > 8 {
            return Err(Error::InvalidParameter(
                "small_enhancement FWHM must be <= 8 px".into(),
            ));
        }
        Ok(())
    }
}

/// Evaluate the steady-state Gaussian plume surrogate on the grid:
///
/// dXCH4(x, y) = K * Q / (sqrt(2 pi) * sigma_y(x) * u) * exp(-y^2 / (2 sigma_y(x)^2))
///
/// for downwind distance x >= 0 with sigma_y(x) = a * x^b. The calibration
/// constant K is fixed so that Q = 1 t/h, u = 3 m/s yields a 100 ppb peak at
/// x = 200 m. Within the source pixel, x is clamped to half a pixel to keep
/// the near-field finite.
pub fn gaussian_plume_field(spec: &PlumeSpec, geometry: &GridGeometry) -> Result<Array2<f32>> {
    spec.validate(geometry)?;
    let px = geometry.pixel_size_m;
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    let sigma_cal = spec.spread_a * 200.0f64.powf(spec.spread_b);
    let k = 100.0 * sqrt_2pi * sigma_cal * 3.0; // ppb * m * (m/s) per (t/h)
    let amp = k * spec.emission_rate_tph / (sqrt_2pi * spec.wind_speed_ms);

    let theta = spec.wind_direction_deg.to_radians();
    // Downwind unit vector in (row, col); grid north is -row.
    let (drow, dcol) = (-theta.cos(), theta.sin());
    // Crosswind unit vector.
    let (crow, ccol) = (dcol, -drow);

    let (sr, sc) = (spec.source.0 as f64, spec.source.1 as f64);
    let x_min = px / 2.0;
    let mut field = Array2::zeros((geometry.height, geometry.width));
    for ((r, c), out) in field.indexed_iter_mut() {
        let dr = (r as f64 - sr) * px;
        let dc = (c as f64 - sc) * px;
        let x = dr * drow + dc * dcol;
        if x < 0.0 {
            continue;
        }
        let y = dr * crow + dc * ccol;
        let sigma = spec.spread_a * x.max(x_min).powf(spec.spread_b);
        let arg = y * y / (2.0 * sigma * sigma);
        if arg > 60.0 {
            continue;
        }
        *out = (amp / sigma * (-arg).exp()) as f32;
    }
    Ok(field)
}

/// Maximum fraction of invalid pixels tolerated inside a plume footprint.
pub const MAX_BAD_PIXEL_FRACTION: f64 = 0.20;

/// Inject a plume into the scene. The footprint is the set of pixels whose
/// enhancement reaches `labeling_floor_ppb`; the placement is rejected when
/// the footprint overlaps a prior label or contains >= 20% invalid pixels.
/// The label mask is the footprint's connected component (8-connectivity)
/// containing the source.
pub fn inject_plume(
    scene: &SceneGrid,
    spec: &PlumeSpec,
    labeling_floor_ppb: f64,
    prior: &[PlumeLabel],
) -> Result<(SceneGrid, PlumeLabel)> {
    let field = gaussian_plume_field(spec, &scene.geometry)?;
    let floor = labeling_floor_ppb.max(1e-3) as f32;
    let footprint = field.mapv(|v| v >= floor);
    let footprint_mask = BinaryMask::from_array(footprint.view())
        .map_err(|_| Error::PlacementRejected("no pixels above labeling floor".into()))?;

    let footprint_area = footprint_mask.area();
    let invalid_inside = footprint_mask
        .pixels()
        .into_iter()
        .filter(|&(r, c)| !scene.valid[(r, c)])
        .count();
    if invalid_inside as f64 / footprint_area as f64 >= MAX_BAD_PIXEL_FRACTION {
        return Err(Error::PlacementRejected(format!(
            "{invalid_inside}/{footprint_area} footprint pixels invalid"
        )));
    }
    for label in prior {
        if footprint_mask.intersection_area(&label.mask) > 0 {
            return Err(Error::PlacementRejected("footprint overlaps a prior plume".into()));
        }
    }

    if !footprint[spec.source] {
        return Err(Error::PlacementRejected("source below labeling floor".into()));
    }
    let component = connected_component_containing(&footprint, spec.source);
    let mask = BinaryMask::from_array(component.view()).expect("component contains the source");

    let mut out = scene.clone();
    for ((r, c), &f) in field.indexed_iter() {
        if f > 0.0 && out.valid[(r, c)] {
            out.xch4[(r, c)] += f;
        }
    }
    let label = PlumeLabel {
        mask,
        source: spec.source,
        emission_rate_tph: spec.emission_rate_tph,
    };
    Ok((out, label))
}

/// 8-connected component of `mask` containing `seed` (which must be set).
fn connected_component_containing(mask: &Array2<bool>, seed: (usize, usize)) -> Array2<bool> {
    let (h, w) = mask.dim();
    let mut out = Array2::from_elem((h, w), false);
    let mut stack = vec![seed];
    out[seed] = true;
    while let Some((r, c)) = stack.pop() {
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let nr = r as i64 + dr;
                let nc = c as i64 + dc;
                if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                    continue;
                }
                let p = (nr as usize, nc as usize);
                if mask[p] && !out[p] {
                    out[p] = true;
                    stack.push(p);
                }
            }
        }
    }
    out
}

/// Add one hard-negative artifact to the scene.
pub fn inject_artifact(scene: &SceneGrid, spec: &ArtifactSpec) -> Result<SceneGrid> {
    spec.validate(&scene.geometry)?;
    let (h, w) = (scene.geometry.height, scene.geometry.width);
    let mut out = scene.clone();
    let amp = spec.amplitude_ppb as f32;
    match spec.kind {
        ArtifactKind::Stripe => {
            let r0 = spec.placement.0;
            let r1 = (r0 + spec.extent_px).min(h);
            for r in r0..r1 {
                for c in 0..w {
                    if out.valid[(r, c)] {
                        out.xch4[(r, c)] += amp;
                    }
                }
            }
        }
        ArtifactKind::CloudPatch => {
            let (cr, cc) = spec.placement;
            let radius = spec.extent_px as f64;
            let rim = radius + 2.0;
            for r in 0..h {
                for c in 0..w {
                    let d = ((r as f64 - cr as f64).powi(2) + (c as f64 - cc as f64).powi(2)).sqrt();
                    if d <= radius {
                        out.valid[(r, c)] = false;
                    } else if d <= rim && out.valid[(r, c)] {
                        // deterministic rim perturbation
                        let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
                        out.xch4[(r, c)] += sign * amp * 0.5;
                    }
                }
            }
        }
        ArtifactKind::SmallEnhancement | ArtifactKind::DispersedEnhancement => {
            let (cr, cc) = spec.placement;
            let sigma = match spec.kind {
                // extent is the FWHM for the compact bump
                ArtifactKind::SmallEnhancement => spec.extent_px as f64 / 2.3548,
                _ => spec.extent_px as f64,
            };
            let reach = (4.0 * sigma).ceil() as i64;
            for dr in -reach..=reach {
                for dc in -reach..=reach {
                    let r = cr as i64 + dr;
                    let c = cc as i64 + dc;
                    if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
                        continue;
                    }
                    let p = (r as usize, c as usize);
                    if !out.valid[p] {
                        continue;
                    }
                    let d2 = (dr * dr + dc * dc) as f64;
                    out.xch4[p] += (spec.amplitude_ppb * (-d2 / (2.0 * sigma * sigma)).exp()) as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Artifact request in a generator config; placement is sampled when absent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ArtifactGen {
    pub kind: ArtifactKind,
    pub amplitude_ppb: f64,
    pub extent_px: usize,
    #[serde(default)]
    pub placement: Option<(usize, usize)>,
}

/// Full scene-generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub pixel_size_m: f64,
    pub background_mean_ppb: f64,
    /// Default reflects the instrument's single-sounding precision.
    pub noise_std_ppb: f64,
    pub n_plumes: usize,
    pub emission_rate_range_tph: (f64, f64),
    pub wind_speed_range_ms: (f64, f64),
    pub spread_a: f64,
    pub spread_b: f64,
    pub artifacts: Vec<ArtifactGen>,
    pub invalid_fraction: f64,
    pub with_albedo: bool,
    pub max_placement_retries: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            pixel_size_m: crate::raster::GRID_SIZE_METHANESAT_M,
            background_mean_ppb: 1900.0,
            noise_std_ppb: 35.0,
            n_plumes: 0,
            emission_rate_range_tph: (0.9, 4.0),
            wind_speed_range_ms: (3.0, 3.0),
            spread_a: PlumeSpec::DEFAULT_SPREAD_A,
            spread_b: PlumeSpec::DEFAULT_SPREAD_B,
            artifacts: Vec::new(),
            invalid_fraction: 0.0,
            with_albedo: true,
            max_placement_retries: 100,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if !(self.background_mean_ppb > 0.0) {
            return Err(Error::InvalidParameter("background_mean must be > 0".into()));
        }
        if !(self.noise_std_ppb >= 0.0) {
            return Err(Error::InvalidParameter("noise_std must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.invalid_fraction) {
            return Err(Error::InvalidParameter("invalid_fraction must be in [0, 1)".into()));
        }
        let (lo, hi) = self.emission_rate_range_tph;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidParameter("bad emission rate range".into()));
        }
        let (ulo, uhi) = self.wind_speed_range_ms;
        if !(ulo > 0.0 && uhi >= ulo) {
            return Err(Error::InvalidParameter("bad wind speed range".into()));
        }
        Ok(())
    }
}

/// Deterministically generate a labeled scene from the config. Identical
/// (config, seed) pairs produce bit-identical output.
pub fn generate_scene(
    config: &SynthConfig,
) -> Result<(SceneGrid, Vec<PlumeLabel>, Vec<ArtifactSpec>)> {
    config.validate()?;
    let geometry = GridGeometry::new(config.width, config.height, config.pixel_size_m)?;
    let dim = (config.height, config.width);

    let mut valid = Array2::from_elem(dim, true);
    if config.invalid_fraction > 0.0 {
        let mut rng = rng::stream(config.seed, "invalid");
        for v in valid.iter_mut() {
            if rng.gen::<f64>() < config.invalid_fraction {
                *v = false;
            }
        }
    }

    let mut xch4 = Array2::from_elem(dim, config.background_mean_ppb as f32);
    if config.noise_std_ppb > 0.0 {
        let normal = Normal::new(0.0f64, config.noise_std_ppb)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut rng = rng::stream(config.seed, "noise");
        for v in xch4.iter_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }

    let albedo = if config.with_albedo {
        let normal =
            Normal::new(0.3f64, 0.05).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut rng = rng::stream(config.seed, "albedo");
        Some(Array2::from_shape_fn(dim, |_| {
            normal.sample(&mut rng).clamp(0.0, 1.0) as f32
        }))
    } else {
        None
    };

    let mut scene = SceneGrid::new(geometry, xch4, valid, albedo)?;

    let floor = config.noise_std_ppb.max(1e-3);
    let mut labels: Vec<PlumeLabel> = Vec::new();
    let mut plume_rng = rng::stream(config.seed, "plume");
    for _ in 0..config.n_plumes {
        let mut placed = false;
        for _ in 0..config.max_placement_retries {
            let spec = PlumeSpec {
                source: (
                    plume_rng.gen_range(0..config.height),
                    plume_rng.gen_range(0..config.width),
                ),
                emission_rate_tph: plume_rng
                    .gen_range(config.emission_rate_range_tph.0..=config.emission_rate_range_tph.1),
                wind_direction_deg: plume_rng.gen_range(0.0..360.0),
                wind_speed_ms: plume_rng
                    .gen_range(config.wind_speed_range_ms.0..=config.wind_speed_range_ms.1),
                spread_a: config.spread_a,
                spread_b: config.spread_b,
            };
            match inject_plume(&scene, &spec, floor, &labels) {
                Ok((next, label)) => {
                    scene = next;
                    labels.push(label);
                    placed = true;
                    break;
                }
                Err(Error::PlacementRejected(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        if !placed {
            return Err(Error::PlacementExhausted(config.max_placement_retries));
        }
    }

    let mut artifact_rng = rng::stream(config.seed, "artifact");
    let mut resolved = Vec::with_capacity(config.artifacts.len());
    for gen in &config.artifacts {
        let placement = gen.placement.unwrap_or_else(|| {
            (
                artifact_rng.gen_range(0..config.height),
                artifact_rng.gen_range(0..config.width),
            )
        });
        let spec = ArtifactSpec {
            kind: gen.kind,
            amplitude_ppb: gen.amplitude_ppb,
            placement,
            extent_px: gen.extent_px,
        };
        scene = inject_artifact(&scene, &spec)?;
        resolved.push(spec);
    }

    Ok((scene, labels, resolved))
}

/// Write labels as the JSON list schema:
/// `[{"mask":{...},"source":[r,c],"emission_rate_tph":x}, ...]`.
pub fn save_labels<P: AsRef<std::path::Path>>(labels: &[PlumeLabel], path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), labels)?;
    Ok(())
}

pub fn load_labels<P: AsRef<std::path::Path>>(path: P) -> Result<Vec<PlumeLabel>> {
    let file = std::fs::File::open(path)?;
    let labels: Vec<PlumeLabel> = serde_json::from_reader(std::io::BufReader::new(file))?;
    for label in &labels {
        label.mask.validate()?;
    }
    Ok(labels)
}
