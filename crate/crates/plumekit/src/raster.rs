//! Scene and mask data model: georeferenced XCH4 rasters, z-score
//! normalization with the invalid-pixel sentinel, run-length encoded binary
//! masks, patch extraction, and bit-exact SGRID file I/O.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value written to invalid pixels after normalization; chosen to sit far
/// outside the plausible z-score range.
pub const INVALID_SENTINEL: f32 = -10.0;

/// MethaneSAT L3 grid size in meters per pixel.
pub const GRID_SIZE_METHANESAT_M: f64 = 45.0;
/// MethaneAIR L3 grid size in meters per pixel.
pub const GRID_SIZE_METHANEAIR_M: f64 = 10.0;

/// Isotropic raster geometry. `origin` is informational (easting, northing
/// of the (0,0) pixel corner in meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub pixel_size_m: f64,
    #[serde(default)]
    pub origin: (f64, f64),
}

impl GridGeometry {
    pub fn new(width: usize, height: usize, pixel_size_m: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("grid dimensions must be >= 1".into()));
        }
        if !(pixel_size_m > 0.0) {
            return Err(Error::InvalidParameter("pixel_size must be > 0".into()));
        }
        Ok(Self { width, height, pixel_size_m, origin: (0.0, 0.0) })
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// A georeferenced XCH4 scene (ppb) with validity mask and optional albedo.
#[derive(Debug, Clone)]
pub struct SceneGrid {
    pub geometry: GridGeometry,
    pub xch4: Array2<f32>,
    pub valid: Array2<bool>,
    pub albedo: Option<Array2<f32>>,
}

impl SceneGrid {
    pub fn new(
        geometry: GridGeometry,
        xch4: Array2<f32>,
        valid: Array2<bool>,
        albedo: Option<Array2<f32>>,
    ) -> Result<Self> {
        let dim = (geometry.height, geometry.width);
        if xch4.dim() != dim || valid.dim() != dim {
            return Err(Error::InvalidParameter("array dimensions do not match geometry".into()));
        }
        if let Some(a) = &albedo {
            if a.dim() != dim {
                return Err(Error::InvalidParameter("albedo dimensions do not match geometry".into()));
            }
        }
        for ((r, c), &v) in valid.indexed_iter() {
            if v {
                if !xch4[(r, c)].is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "non-finite xch4 at valid pixel ({r}, {c})"
                    )));
                }
                if let Some(a) = &albedo {
                    let al = a[(r, c)];
                    if !(0.0..=1.0).contains(&al) {
                        return Err(Error::InvalidParameter(format!(
                            "albedo out of [0,1] at valid pixel ({r}, {c})"
                        )));
                    }
                }
            }
        }
        Ok(Self { geometry, xch4, valid, albedo })
    }
}

/// Z-score normalization over valid pixels: output has mean 0 and population
/// standard deviation 1 over the valid set. Invalid pixels are set to the
/// sentinel. Constant input (population std below 1e-12) maps every valid
/// pixel to 0, the fixed point of z-scoring.
pub fn normalize(values: ArrayView2<'_, f32>, valid: ArrayView2<'_, bool>) -> Result<Array2<f32>> {
    assert_eq!(values.dim(), valid.dim(), "values/valid shape mismatch");
    let mut n = 0usize;
    let mut sum = 0.0f64;
    for (&v, &ok) in values.iter().zip(valid.iter()) {
        if ok {
            n += 1;
            sum += v as f64;
        }
    }
    if n == 0 {
        return Err(Error::EmptyPatch);
    }
    let mean = sum / n as f64;
    let mut ss = 0.0f64;
    for (&v, &ok) in values.iter().zip(valid.iter()) {
        if ok {
            let d = v as f64 - mean;
            ss += d * d;
        }
    }
    let std = (ss / n as f64).sqrt();
    let mut out = Array2::from_elem(values.dim(), INVALID_SENTINEL);
    if std < 1e-12 {
        for ((r, c), &ok) in valid.indexed_iter() {
            if ok {
                out[(r, c)] = 0.0;
            }
        }
    } else {
        for ((r, c), &ok) in valid.indexed_iter() {
            if ok {
                out[(r, c)] = ((values[(r, c)] as f64 - mean) / std) as f32;
            }
        }
    }
    Ok(out)
}

/// A normalized square crop of a scene, tagged with its scene-space origin.
#[derive(Debug, Clone)]
pub struct Patch {
    pub origin: (usize, usize),
    pub size: usize,
    pub values: Array2<f32>,
    pub valid: Array2<bool>,
}

/// Extract and normalize a square patch. The window must lie fully inside
/// the scene.
pub fn extract_patch(scene: &SceneGrid, origin: (usize, usize), size: usize) -> Result<Patch> {
    let (row, col) = origin;
    let h = scene.geometry.height;
    let w = scene.geometry.width;
    if size == 0 || row + size > h || col + size > w {
        return Err(Error::OutOfBounds { row, col, size, height: h, width: w });
    }
    let values = scene.xch4.slice(ndarray::s![row..row + size, col..col + size]);
    let valid = scene.valid.slice(ndarray::s![row..row + size, col..col + size]);
    let normalized = normalize(values, valid)?;
    Ok(Patch { origin, size, values: normalized, valid: valid.to_owned() })
}

// ---------------------------------------------------------------------------
// Run-length encoding
// ---------------------------------------------------------------------------

/// Row-major RLE: alternating run lengths starting with background; the
/// first run may be 0 when the scan opens on foreground.
pub fn rle_encode(mask: ArrayView2<'_, bool>) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false; // runs start with background
    let mut len: u32 = 0;
    for &px in mask.iter() {
        if px == current {
            len += 1;
        } else {
            runs.push(len);
            current = px;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

/// Inverse of [`rle_encode`]. Errors when the runs do not sum to rows*cols.
pub fn rle_decode(runs: &[u32], rows: usize, cols: usize) -> Result<Array2<bool>> {
    let total: u64 = runs.iter().map(|&r| r as u64).sum();
    if total != (rows as u64) * (cols as u64) {
        return Err(Error::CorruptRle(format!(
            "runs sum to {total}, expected {}",
            rows * cols
        )));
    }
    let mut flat = Vec::with_capacity(rows * cols);
    let mut fg = false;
    for &run in runs {
        for _ in 0..run {
            flat.push(fg);
        }
        fg = !fg;
    }
    Ok(Array2::from_shape_vec((rows, cols), flat).expect("length checked"))
}

// ---------------------------------------------------------------------------
// BinaryMask
// ---------------------------------------------------------------------------

/// A nonempty binary mask stored as a tight bounding box plus RLE runs over
/// the box. Coordinates are in the frame of whatever raster produced it
/// (patch-local or scene-space).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    /// (row0, col0, rows, cols)
    pub bbox: [usize; 4],
    pub rle: Vec<u32>,
}

impl BinaryMask {
    /// Build from a full-frame boolean array; the bbox is tightened to the
    /// foreground extent. Errors on an all-false array.
    pub fn from_array(mask: ArrayView2<'_, bool>) -> Result<Self> {
        let mut r0 = usize::MAX;
        let mut r1 = 0usize;
        let mut c0 = usize::MAX;
        let mut c1 = 0usize;
        for ((r, c), &v) in mask.indexed_iter() {
            if v {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
        if r0 == usize::MAX {
            return Err(Error::InvalidParameter("mask has no foreground pixels".into()));
        }
        let local = mask.slice(ndarray::s![r0..=r1, c0..=c1]);
        Ok(Self { bbox: [r0, c0, r1 - r0 + 1, c1 - c0 + 1], rle: rle_encode(local) })
    }

    /// Build from a bbox-local boolean array placed at (row0, col0). The
    /// array must have foreground touching all four edges (tight bbox).
    pub fn from_local(row0: usize, col0: usize, local: ArrayView2<'_, bool>) -> Result<Self> {
        let mut m = Self::from_array(local)?;
        m.bbox[0] += row0;
        m.bbox[1] += col0;
        Ok(m)
    }

    /// Validate structural invariants (used when deserializing).
    pub fn validate(&self) -> Result<()> {
        let [_, _, rows, cols] = self.bbox;
        if rows == 0 || cols == 0 {
            return Err(Error::CorruptRle("empty bbox".into()));
        }
        let local = self.decode_local()?;
        if self.area() == 0 {
            return Err(Error::CorruptRle("mask has zero area".into()));
        }
        let tight = local.row(0).iter().any(|&v| v)
            && local.row(rows - 1).iter().any(|&v| v)
            && local.column(0).iter().any(|&v| v)
            && local.column(cols - 1).iter().any(|&v| v);
        if !tight {
            return Err(Error::CorruptRle("bbox not tight".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.bbox[2]
    }

    pub fn cols(&self) -> usize {
        self.bbox[3]
    }

    /// Foreground pixel count, straight off the runs.
    pub fn area(&self) -> usize {
        self.rle.iter().skip(1).step_by(2).map(|&r| r as usize).sum()
    }

    /// Decode to a bbox-local boolean array.
    pub fn decode_local(&self) -> Result<Array2<bool>> {
        rle_decode(&self.rle, self.bbox[2], self.bbox[3])
    }

    /// Decode into a full frame of the given dimensions.
    pub fn decode_into(&self, rows: usize, cols: usize) -> Result<Array2<bool>> {
        let [r0, c0, h, w] = self.bbox;
        if r0 + h > rows || c0 + w > cols {
            return Err(Error::OutOfBounds { row: r0, col: c0, size: h.max(w), height: rows, width: cols });
        }
        let local = self.decode_local()?;
        let mut out = Array2::from_elem((rows, cols), false);
        out.slice_mut(ndarray::s![r0..r0 + h, c0..c0 + w]).assign(&local);
        Ok(out)
    }

    /// Frame-space foreground pixel coordinates, row-major order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        let local = self.decode_local().expect("internally consistent RLE");
        let [r0, c0, ..] = self.bbox;
        local
            .indexed_iter()
            .filter(|(_, &v)| v)
            .map(|((r, c), _)| (r0 + r, c0 + c))
            .collect()
    }

    /// Translate by a frame offset (e.g. patch-local to scene-space).
    pub fn translate(&self, drow: usize, dcol: usize) -> Self {
        let mut m = self.clone();
        m.bbox[0] += drow;
        m.bbox[1] += dcol;
        m
    }

    /// Number of foreground pixels shared with `other`.
    pub fn intersection_area(&self, other: &Self) -> usize {
        let ar0 = self.bbox[0];
        let ac0 = self.bbox[1];
        let br0 = other.bbox[0];
        let bc0 = other.bbox[1];
        let r0 = ar0.max(br0);
        let c0 = ac0.max(bc0);
        let r1 = (ar0 + self.bbox[2]).min(br0 + other.bbox[2]);
        let c1 = (ac0 + self.bbox[3]).min(bc0 + other.bbox[3]);
        if r0 >= r1 || c0 >= c1 {
            return 0;
        }
        let a = self.decode_local().expect("internally consistent RLE");
        let b = other.decode_local().expect("internally consistent RLE");
        let mut count = 0usize;
        for r in r0..r1 {
            for c in c0..c1 {
                if a[(r - ar0, c - ac0)] && b[(r - br0, c - bc0)] {
                    count += 1;
                }
            }
        }
        count
    }

    /// Union of nonempty masks in a shared frame.
    pub fn union(masks: &[&Self]) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::InvalidParameter("union of zero masks".into()));
        }
        let r0 = masks.iter().map(|m| m.bbox[0]).min().unwrap();
        let c0 = masks.iter().map(|m| m.bbox[1]).min().unwrap();
        let r1 = masks.iter().map(|m| m.bbox[0] + m.bbox[2]).max().unwrap();
        let c1 = masks.iter().map(|m| m.bbox[1] + m.bbox[3]).max().unwrap();
        let mut buf = Array2::from_elem((r1 - r0, c1 - c0), false);
        for m in masks {
            let local = m.decode_local()?;
            for ((r, c), &v) in local.indexed_iter() {
                if v {
                    buf[(m.bbox[0] - r0 + r, m.bbox[1] - c0 + c)] = true;
                }
            }
        }
        Self::from_local(r0, c0, buf.view())
    }
}

// ---------------------------------------------------------------------------
// SGRID file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SgridHeader {
    magic: String,
    version: u32,
    width: usize,
    height: usize,
    pixel_size_m: f64,
    channels: Vec<String>,
}

const MAX_DIM: usize = 1 << 20;

fn read_header<R: BufRead>(reader: &mut R, magic: &str) -> Result<SgridHeader> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: SgridHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::BadHeader(e.to_string()))?;
    if header.magic != magic {
        return Err(Error::BadHeader(format!(
            "magic mismatch: expected {magic:?}, got {:?}",
            header.magic
        )));
    }
    if header.version != 1 {
        return Err(Error::BadHeader(format!("unsupported version {}", header.version)));
    }
    if header.width == 0 || header.height == 0 || header.width > MAX_DIM || header.height > MAX_DIM {
        return Err(Error::BadHeader("dimension overflow".into()));
    }
    Ok(header)
}

fn read_f32_channel<R: Read>(reader: &mut R, n: usize, dim: (usize, usize)) -> Result<Array2<f32>> {
    let mut buf = vec![0u8; n * 4];
    reader.read_exact(&mut buf).map_err(|_| Error::TruncatedPayload)?;
    let vals: Vec<f32> = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Array2::from_shape_vec(dim, vals).expect("length checked"))
}

fn write_f32_channel<W: Write>(writer: &mut W, arr: &Array2<f32>) -> Result<()> {
    for &v in arr.iter() {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Write a scene as SGRID v1: one JSON header line, then row-major channel
/// payloads (xch4 f32 LE, valid u8, albedo f32 LE when present).
pub fn save_scene<P: AsRef<Path>>(scene: &SceneGrid, path: P) -> Result<()> {
    let mut channels = vec!["xch4".to_string(), "valid".to_string()];
    if scene.albedo.is_some() {
        channels.push("albedo".to_string());
    }
    let header = SgridHeader {
        magic: "SGRID".into(),
        version: 1,
        width: scene.geometry.width,
        height: scene.geometry.height,
        pixel_size_m: scene.geometry.pixel_size_m,
        channels,
    };
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    write_f32_channel(&mut w, &scene.xch4)?;
    for &v in scene.valid.iter() {
        w.write_all(&[v as u8])?;
    }
    if let Some(a) = &scene.albedo {
        write_f32_channel(&mut w, a)?;
    }
    w.flush()?;
    Ok(())
}

/// Read an SGRID v1 scene, validating header fields and payload length.
pub fn load_scene<P: AsRef<Path>>(path: P) -> Result<SceneGrid> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let header = read_header(&mut r, "SGRID")?;
    let dim = (header.height, header.width);
    let n = header.height * header.width;
    let mut xch4 = None;
    let mut valid = None;
    let mut albedo = None;
    for ch in &header.channels {
        match ch.as_str() {
            "xch4" => xch4 = Some(read_f32_channel(&mut r, n, dim)?),
            "albedo" => albedo = Some(read_f32_channel(&mut r, n, dim)?),
            "valid" => {
                let mut buf = vec![0u8; n];
                r.read_exact(&mut buf).map_err(|_| Error::TruncatedPayload)?;
                valid = Some(
                    Array2::from_shape_vec(dim, buf.into_iter().map(|b| b != 0).collect())
                        .expect("length checked"),
                );
            }
            other => return Err(Error::BadHeader(format!("unknown channel {other:?}"))),
        }
    }
    // Trailing bytes indicate a header/payload mismatch.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::BadHeader("payload longer than header dimensions".into()));
    }
    let xch4 = xch4.ok_or_else(|| Error::BadHeader("missing xch4 channel".into()))?;
    let valid = valid.ok_or_else(|| Error::BadHeader("missing valid channel".into()))?;
    let mut geometry = GridGeometry::new(header.width, header.height, header.pixel_size_m)?;
    geometry.origin = (0.0, 0.0);
    SceneGrid::new(geometry, xch4, valid, albedo)
}

/// Write a single-channel probability grid ("PGRID" magic, channel "p").
pub fn save_pgrid<P: AsRef<Path>>(geometry: &GridGeometry, p: &Array2<f32>, path: P) -> Result<()> {
    let header = SgridHeader {
        magic: "PGRID".into(),
        version: 1,
        width: geometry.width,
        height: geometry.height,
        pixel_size_m: geometry.pixel_size_m,
        channels: vec!["p".into()],
    };
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    write_f32_channel(&mut w, p)?;
    w.flush()?;
    Ok(())
}

/// Read a PGRID probability grid.
pub fn load_pgrid<P: AsRef<Path>>(path: P) -> Result<(GridGeometry, Array2<f32>)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let header = read_header(&mut r, "PGRID")?;
    let dim = (header.height, header.width);
    let p = read_f32_channel(&mut r, header.height * header.width, dim)?;
    Ok((GridGeometry::new(header.width, header.height, header.pixel_size_m)?, p))
}
