//! One-dimensional along-track Gaussian scale-space.
//!
//! A field f and an increasing scale list [s1, ..., sS] decompose into
//! S + 1 bands
//!
//! ```text
//! [ G_s1(f), G_s2(f) - G_s1(f), ..., G_sS(f) - G_s(S-1)(f), f - G_sS(f) ]
//! ```
//!
//! where G_s is the along-track Gaussian blur. The bands telescope, so
//! summing them reconstructs f exactly; each intermediate band isolates the
//! along-track scales between its two blur widths.

use std::sync::Arc;

use crate::error::{Result, SwotError};
use crate::filters::{convolve_reflect_strided, gaussian_kernel};
use crate::swath::{SwathField, SwathGrid};

/// Strictly increasing list of blur scales in km.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleList {
    sigmas_km: Vec<f64>,
}

impl ScaleList {
    pub fn new(sigmas_km: Vec<f64>) -> Result<Self> {
        if sigmas_km.is_empty() {
            return Err(SwotError::InvalidArg("scale list must hold at least one scale".into()));
        }
        if sigmas_km[0] <= 0.0 {
            return Err(SwotError::InvalidArg("scales must be positive".into()));
        }
        if sigmas_km.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SwotError::InvalidArg("scales must be strictly increasing".into()));
        }
        Ok(ScaleList { sigmas_km })
    }

    pub fn sigmas_km(&self) -> &[f64] {
        &self.sigmas_km
    }

    pub fn n_scales(&self) -> usize {
        self.sigmas_km.len()
    }

    /// Number of decomposition bands (scales + residual high-pass).
    pub fn n_bands(&self) -> usize {
        self.sigmas_km.len() + 1
    }
}

/// Evenly spaced scales: [delta, 2*delta, ..., n_bands*delta] km.
pub fn default_scales(n_bands: usize, delta_km: f64) -> Result<ScaleList> {
    if n_bands == 0 {
        return Err(SwotError::InvalidArg("n_bands must be at least 1".into()));
    }
    if delta_km <= 0.0 {
        return Err(SwotError::InvalidArg("delta_km must be positive".into()));
    }
    ScaleList::new((1..=n_bands).map(|i| i as f64 * delta_km).collect())
}

/// The (S+1)-band decomposition of one swath field. Band b of pixel (i, j)
/// lives at `bands[(b * n_along + i) * n_across + j]`.
#[derive(Debug, Clone)]
pub struct ScaleStack {
    grid: Arc<SwathGrid>,
    scales: ScaleList,
    bands: Vec<f64>,
}

impl ScaleStack {
    pub fn grid(&self) -> &Arc<SwathGrid> {
        &self.grid
    }

    pub fn scales(&self) -> &ScaleList {
        &self.scales
    }

    pub fn n_bands(&self) -> usize {
        self.scales.n_bands()
    }

    pub fn bands(&self) -> &[f64] {
        &self.bands
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.grid.n_pixels();
        &self.bands[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.grid.n_pixels();
        &mut self.bands[b * n..(b + 1) * n]
    }

    pub fn from_parts(grid: Arc<SwathGrid>, scales: ScaleList, bands: Vec<f64>) -> Result<Self> {
        if bands.len() != scales.n_bands() * grid.n_pixels() {
            return Err(SwotError::InvalidArg(format!(
                "band buffer length {} does not match {} bands of {} pixels",
                bands.len(),
                scales.n_bands(),
                grid.n_pixels()
            )));
        }
        Ok(ScaleStack { grid, scales, bands })
    }
}

/// Along-track Gaussian blur: each across-track column convolved with a
/// discrete Gaussian of std `sigma_km / pixel_km` samples, truncated at
/// ±4σ, renormalized, mirror-reflect boundaries. Shape is preserved.
///
/// Long kernels (truncation width comparable to the signal) fold heavily
/// at the reflective boundaries; those are applied as a precomputed n x n
/// blur matrix via one GEMM over all columns, which sums exactly the same
/// kernel taps. Short kernels use the direct sliding convolution.
pub fn gaussian_blur_along(f: &SwathField, sigma_km: f64) -> Result<SwathField> {
    if sigma_km <= 0.0 {
        return Err(SwotError::InvalidArg(format!("sigma_km must be positive, got {sigma_km}")));
    }
    let g = f.grid();
    let (h, w) = (g.n_along(), g.n_across());
    let sigma_samples = sigma_km / g.pixel_km();
    let kernel_len = 2 * (4.0 * sigma_samples).ceil() as usize + 1;
    let mut out = vec![0.0; h * w];
    if kernel_len * 8 >= h {
        let matrix = blur_matrix(sigma_samples, h);
        unsafe {
            matrixmultiply::dgemm(
                h, h, w, 1.0,
                matrix.as_ptr(), h as isize, 1,
                f.values().as_ptr(), w as isize, 1,
                0.0, out.as_mut_ptr(), w as isize, 1,
            );
        }
    } else {
        let kernel = gaussian_kernel(sigma_samples);
        for j in 0..w {
            convolve_reflect_strided(&f.values()[j..], &mut out[j..], h, w, &kernel);
        }
    }
    SwathField::new(g.clone(), out)
}

/// Row-major n x n matrix equivalent of the reflect-padded truncated
/// Gaussian: row i accumulates every kernel tap onto its reflected source
/// index. Cached per (sigma, n) since decomposition reuses each scale for
/// every sample.
fn blur_matrix(sigma_samples: f64, n: usize) -> std::sync::Arc<Vec<f64>> {
    use std::cell::RefCell;
    use std::collections::HashMap;
    thread_local! {
        static CACHE: RefCell<HashMap<(u64, usize), std::sync::Arc<Vec<f64>>>> =
            RefCell::new(HashMap::new());
    }
    CACHE.with(|c| {
        let key = (sigma_samples.to_bits(), n);
        if let Some(m) = c.borrow().get(&key) {
            return m.clone();
        }
        let kernel = gaussian_kernel(sigma_samples);
        let half = kernel.len() / 2;
        let mut mat = vec![0.0; n * n];
        for i in 0..n {
            let row = &mut mat[i * n..(i + 1) * n];
            for (t, &kw) in kernel.iter().enumerate() {
                let j = crate::filters::reflect_index(i as isize + t as isize - half as isize, n);
                row[j] += kw;
            }
        }
        let m = std::sync::Arc::new(mat);
        c.borrow_mut().insert(key, m.clone());
        m
    })
}

/// Decompose a swath field into its telescoping scale bands.
pub fn decompose(f: &SwathField, scales: &ScaleList) -> Result<ScaleStack> {
    let g = f.grid().clone();
    let n = g.n_pixels();
    let n_bands = scales.n_bands();
    let mut bands = vec![0.0; n_bands * n];

    let mut prev = gaussian_blur_along(f, scales.sigmas_km()[0])?;
    bands[0..n].copy_from_slice(prev.values());
    for (b, &sigma) in scales.sigmas_km().iter().enumerate().skip(1) {
        let cur = gaussian_blur_along(f, sigma)?;
        let dst = &mut bands[b * n..(b + 1) * n];
        for i in 0..n {
            dst[i] = cur.values()[i] - prev.values()[i];
        }
        prev = cur;
    }
    let dst = &mut bands[(n_bands - 1) * n..];
    for i in 0..n {
        dst[i] = f.values()[i] - prev.values()[i];
    }
    ScaleStack::from_parts(g, scales.clone(), bands)
}

/// Sum the bands back into a single field (inverse of `decompose`).
pub fn reconstruct(stack: &ScaleStack) -> SwathField {
    let n = stack.grid().n_pixels();
    let mut out = vec![0.0; n];
    for b in 0..stack.n_bands() {
        let band = stack.band(b);
        for i in 0..n {
            out[i] += band[i];
        }
    }
    SwathField::new(stack.grid().clone(), out).expect("bands are finite")
}

/// Per-band variance fractions: var(band_b) / sum_b var(band_b).
/// Errors on an all-zero stack where the fractions are undefined.
pub fn band_energy(stack: &ScaleStack) -> Result<Vec<f64>> {
    let n = stack.grid().n_pixels() as f64;
    let mut vars = Vec::with_capacity(stack.n_bands());
    for b in 0..stack.n_bands() {
        let band = stack.band(b);
        let mean = band.iter().sum::<f64>() / n;
        vars.push(band.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
    }
    let total: f64 = vars.iter().sum();
    if total <= 0.0 {
        return Err(SwotError::Numeric("band energies undefined for an all-zero stack".into()));
    }
    Ok(vars.into_iter().map(|v| v / total).collect())
}
