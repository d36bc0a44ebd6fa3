//! Two-sided swath geometry: the pixel grid with its nadir gap,
//! interpolation of 2-D fields onto swath coordinates, and gap-aware
//! finite-difference operators.
//!
//! Across-track stencils never straddle the gap: each side is
//! differentiated independently, with one-sided or replicated stencils at
//! the inner and outer edges so output shapes match input shapes.

use std::sync::Arc;

use crate::error::{Result, SwotError};
use crate::fieldgen::Field2D;

/// Swath pixel grid: `n_along` rows at `pixel_km` spacing, with signed
/// across-track pixel-center offsets split into a left (negative) and a
/// right (positive) side around the nadir gap.
#[derive(Debug, Clone, PartialEq)]
pub struct SwathGrid {
    n_along: usize,
    pixel_km: f64,
    across_offsets_km: Vec<f64>,
    side_split: usize,
}

impl SwathGrid {
    pub fn n_along(&self) -> usize {
        self.n_along
    }

    pub fn pixel_km(&self) -> f64 {
        self.pixel_km
    }

    pub fn across_offsets_km(&self) -> &[f64] {
        &self.across_offsets_km
    }

    /// Index of the first right-side column; also the left column count.
    pub fn side_split(&self) -> usize {
        self.side_split
    }

    pub fn n_across(&self) -> usize {
        self.across_offsets_km.len()
    }

    pub fn n_pixels(&self) -> usize {
        self.n_along * self.n_across()
    }

    /// Largest |across offset|, km.
    pub fn outer_km(&self) -> f64 {
        self.across_offsets_km
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Build the swath grid with pixel centers from `inner_km` to `outer_km`
/// off nadir on both sides, endpoints included.
pub fn build_swath_grid(
    n_along: usize,
    pixel_km: f64,
    inner_km: f64,
    outer_km: f64,
) -> Result<SwathGrid> {
    if n_along < 3 {
        return Err(SwotError::InvalidArg(format!("n_along must be >= 3, got {n_along}")));
    }
    if pixel_km <= 0.0 {
        return Err(SwotError::InvalidArg(format!("pixel_km must be positive, got {pixel_km}")));
    }
    if inner_km <= 0.0 || outer_km <= 0.0 {
        return Err(SwotError::InvalidArg("inner_km and outer_km must be positive".into()));
    }
    if inner_km >= outer_km {
        return Err(SwotError::InvalidArg(format!(
            "inner_km ({inner_km}) must be smaller than outer_km ({outer_km})"
        )));
    }
    if inner_km < 10.0 || outer_km > 60.0 {
        return Err(SwotError::InvalidArg(format!(
            "swath must lie within 10..60 km off nadir, got {inner_km}..{outer_km}"
        )));
    }
    let steps_f = (outer_km - inner_km) / pixel_km;
    let steps = steps_f.round();
    if (steps_f - steps).abs() > 1e-9 {
        return Err(SwotError::InvalidArg(format!(
            "pixel_km ({pixel_km}) must divide outer_km - inner_km ({}) evenly",
            outer_km - inner_km
        )));
    }
    let per_side = steps as usize + 1;
    let mut offsets = Vec::with_capacity(2 * per_side);
    for j in 0..per_side {
        offsets.push(-(outer_km - j as f64 * pixel_km));
    }
    for j in 0..per_side {
        offsets.push(inner_km + j as f64 * pixel_km);
    }
    Ok(SwathGrid { n_along, pixel_km, across_offsets_km: offsets, side_split: per_side })
}

/// A scalar field on a swath grid, meters. Values are row-major:
/// `values[i * n_across + j]` for along-track row i, across-track column j.
#[derive(Debug, Clone, PartialEq)]
pub struct SwathField {
    grid: Arc<SwathGrid>,
    values: Vec<f64>,
}

impl SwathField {
    pub fn new(grid: Arc<SwathGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_pixels() {
            return Err(SwotError::InvalidArg(format!(
                "swath field length {} does not match grid {} x {}",
                values.len(),
                grid.n_along(),
                grid.n_across()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(SwotError::Numeric("swath field contains non-finite values".into()));
        }
        Ok(SwathField { grid, values })
    }

    pub fn constant(grid: Arc<SwathGrid>, c: f64) -> Self {
        let n = grid.n_pixels();
        SwathField { grid, values: vec![c; n] }
    }

    pub fn zeros(grid: Arc<SwathGrid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &Arc<SwathGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n_across() + j]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64
    }

    pub fn rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    /// Elementwise combination into a new field; grids must match.
    pub fn zip_with(&self, other: &SwathField, f: impl Fn(f64, f64) -> f64) -> Result<SwathField> {
        if self.grid != other.grid {
            return Err(SwotError::Data("swath grids do not match".into()));
        }
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| f(*a, *b))
            .collect();
        SwathField::new(self.grid.clone(), values)
    }
}

/// Bilinear interpolation of a 2-D field at arbitrary km coordinates.
/// Exact at grid nodes; errors if any point leaves the bounding box.
pub fn bilinear_sample(field: &Field2D, points: &[(f64, f64)]) -> Result<Vec<f64>> {
    if field.nx < 2 || field.ny < 2 {
        return Err(SwotError::InvalidArg("bilinear sampling needs at least a 2 x 2 field".into()));
    }
    let (max_x, max_y) = (field.max_x_km(), field.max_y_km());
    let mut out = Vec::with_capacity(points.len());
    for &(x, y) in points {
        if !(0.0..=max_x).contains(&x) || !(0.0..=max_y).contains(&y) {
            return Err(SwotError::OutOfBounds { x, y, max_x, max_y });
        }
        let gx = x / field.pixel_km;
        let gy = y / field.pixel_km;
        let mut ix = gx.floor() as usize;
        let mut iy = gy.floor() as usize;
        if ix >= field.nx - 1 {
            ix = field.nx - 2;
        }
        if iy >= field.ny - 1 {
            iy = field.ny - 2;
        }
        let fx = gx - ix as f64;
        let fy = gy - iy as f64;
        let v00 = field.at(ix, iy);
        let v10 = field.at(ix + 1, iy);
        let v01 = field.at(ix, iy + 1);
        let v11 = field.at(ix + 1, iy + 1);
        out.push(
            (1.0 - fx) * (1.0 - fy) * v00
                + fx * (1.0 - fy) * v10
                + (1.0 - fx) * fy * v01
                + fx * fy * v11,
        );
    }
    Ok(out)
}

/// Sample a straight swath segment from a 2-D field. Pixel (i, j) maps to
/// `origin + i * pixel_km * along + across_offsets[j] * across`, where
/// `along = (cos h, sin h)` and `across = (-sin h, cos h)`.
pub fn sample_swath(
    field: &Field2D,
    grid: &Arc<SwathGrid>,
    origin: (f64, f64),
    heading_rad: f64,
) -> Result<SwathField> {
    let (ax, ay) = (heading_rad.cos(), heading_rad.sin());
    let (cx, cy) = (-ay, ax);
    let len = (grid.n_along() - 1) as f64 * grid.pixel_km();
    let offs = grid.across_offsets_km();
    let (o_min, o_max) = (offs[0], offs[offs.len() - 1]);

    // the swath rectangle is convex, so checking its four corners suffices
    let (max_x, max_y) = (field.max_x_km(), field.max_y_km());
    for &(s, t) in &[(0.0, o_min), (0.0, o_max), (len, o_min), (len, o_max)] {
        let x = origin.0 + s * ax + t * cx;
        let y = origin.1 + s * ay + t * cy;
        if !(0.0..=max_x).contains(&x) || !(0.0..=max_y).contains(&y) {
            return Err(SwotError::OutOfBounds { x, y, max_x, max_y });
        }
    }

    let mut points = Vec::with_capacity(grid.n_pixels());
    for i in 0..grid.n_along() {
        let s = i as f64 * grid.pixel_km();
        for &t in offs {
            points.push((origin.0 + s * ax + t * cx, origin.1 + s * ay + t * cy));
        }
    }
    let values = bilinear_sample(field, &points)?;
    SwathField::new(grid.clone(), values)
}

/// Along- and across-track first derivatives (m/km): centered differences
/// in the interior, one-sided at edges, sides handled independently.
pub fn swath_gradient(f: &SwathField) -> (SwathField, SwathField) {
    let g = f.grid();
    let (h, w) = (g.n_along(), g.n_across());
    let mut d_al = vec![0.0; h * w];
    let mut d_ac = vec![0.0; h * w];
    d_along_plane(f.values(), &mut d_al, h, w, g.pixel_km());
    d_across_plane(f.values(), &mut d_ac, h, w, g.side_split(), g.pixel_km());
    (
        SwathField { grid: f.grid().clone(), values: d_al },
        SwathField { grid: f.grid().clone(), values: d_ac },
    )
}

/// 5-point Laplacian (m/km^2) with replicated edges, per side.
pub fn swath_laplacian(f: &SwathField) -> SwathField {
    let g = f.grid();
    let (h, w) = (g.n_along(), g.n_across());
    let mut out = vec![0.0; h * w];
    laplacian_plane(f.values(), &mut out, h, w, g.side_split(), g.pixel_km());
    SwathField { grid: f.grid().clone(), values: out }
}

// ---------------------------------------------------------------------------
// Plane-level stencils. These are the single source of truth for the
// differential operators; the autodiff tape applies the same functions and
// their adjoints channel by channel.
// ---------------------------------------------------------------------------

pub(crate) fn d_along_plane(src: &[f64], dst: &mut [f64], h: usize, w: usize, d: f64) {
    debug_assert!(h >= 3);
    let inv2 = 1.0 / (2.0 * d);
    let inv = 1.0 / d;
    for j in 0..w {
        dst[j] = (src[w + j] - src[j]) * inv;
        for i in 1..h - 1 {
            dst[i * w + j] = (src[(i + 1) * w + j] - src[(i - 1) * w + j]) * inv2;
        }
        dst[(h - 1) * w + j] = (src[(h - 1) * w + j] - src[(h - 2) * w + j]) * inv;
    }
}

pub(crate) fn d_along_adjoint_plane(grad: &[f64], acc: &mut [f64], h: usize, w: usize, d: f64) {
    let inv2 = 1.0 / (2.0 * d);
    let inv = 1.0 / d;
    for j in 0..w {
        acc[w + j] += grad[j] * inv;
        acc[j] -= grad[j] * inv;
        for i in 1..h - 1 {
            acc[(i + 1) * w + j] += grad[i * w + j] * inv2;
            acc[(i - 1) * w + j] -= grad[i * w + j] * inv2;
        }
        acc[(h - 1) * w + j] += grad[(h - 1) * w + j] * inv;
        acc[(h - 2) * w + j] -= grad[(h - 1) * w + j] * inv;
    }
}

pub(crate) fn d_across_plane(
    src: &[f64],
    dst: &mut [f64],
    h: usize,
    w: usize,
    split: usize,
    d: f64,
) {
    let inv2 = 1.0 / (2.0 * d);
    let inv = 1.0 / d;
    for i in 0..h {
        let row = &src[i * w..(i + 1) * w];
        let out = &mut dst[i * w..(i + 1) * w];
        for &(lo, hi) in &[(0usize, split), (split, w)] {
            let n = hi - lo;
            debug_assert!(n >= 2);
            out[lo] = (row[lo + 1] - row[lo]) * inv;
            for j in lo + 1..hi - 1 {
                out[j] = (row[j + 1] - row[j - 1]) * inv2;
            }
            out[hi - 1] = (row[hi - 1] - row[hi - 2]) * inv;
        }
    }
}

pub(crate) fn d_across_adjoint_plane(
    grad: &[f64],
    acc: &mut [f64],
    h: usize,
    w: usize,
    split: usize,
    d: f64,
) {
    let inv2 = 1.0 / (2.0 * d);
    let inv = 1.0 / d;
    for i in 0..h {
        let g = &grad[i * w..(i + 1) * w];
        let a = &mut acc[i * w..(i + 1) * w];
        for &(lo, hi) in &[(0usize, split), (split, w)] {
            a[lo + 1] += g[lo] * inv;
            a[lo] -= g[lo] * inv;
            for j in lo + 1..hi - 1 {
                a[j + 1] += g[j] * inv2;
                a[j - 1] -= g[j] * inv2;
            }
            a[hi - 1] += g[hi - 1] * inv;
            a[hi - 2] -= g[hi - 1] * inv;
        }
    }
}

pub(crate) fn laplacian_plane(
    src: &[f64],
    dst: &mut [f64],
    h: usize,
    w: usize,
    split: usize,
    d: f64,
) {
    let inv_d2 = 1.0 / (d * d);
    let clamp = |v: isize, lo: usize, hi: usize| -> usize {
        v.clamp(lo as isize, hi as isize - 1) as usize
    };
    for i in 0..h {
        for j in 0..w {
            let (lo, hi) = if j < split { (0, split) } else { (split, w) };
            let up = src[clamp(i as isize - 1, 0, h) * w + j];
            let dn = src[clamp(i as isize + 1, 0, h) * w + j];
            let lf = src[i * w + clamp(j as isize - 1, lo, hi)];
            let rt = src[i * w + clamp(j as isize + 1, lo, hi)];
            dst[i * w + j] = (up + dn + lf + rt - 4.0 * src[i * w + j]) * inv_d2;
        }
    }
}

pub(crate) fn laplacian_adjoint_plane(
    grad: &[f64],
    acc: &mut [f64],
    h: usize,
    w: usize,
    split: usize,
    d: f64,
) {
    let inv_d2 = 1.0 / (d * d);
    let clamp = |v: isize, lo: usize, hi: usize| -> usize {
        v.clamp(lo as isize, hi as isize - 1) as usize
    };
    for i in 0..h {
        for j in 0..w {
            let (lo, hi) = if j < split { (0, split) } else { (split, w) };
            let g = grad[i * w + j] * inv_d2;
            acc[clamp(i as isize - 1, 0, h) * w + j] += g;
            acc[clamp(i as isize + 1, 0, h) * w + j] += g;
            acc[i * w + clamp(j as isize - 1, lo, hi)] += g;
            acc[i * w + clamp(j as isize + 1, lo, hi)] += g;
            acc[i * w + j] -= 4.0 * g;
        }
    }
}
