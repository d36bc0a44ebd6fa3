//! Synthetic ground-truth SSH fields and emulated nadir-based gridded
//! products.
//!
//! Truth fields are Gaussian random fields with an isotropic power spectrum
//!
//! ```text
//! P(k) = (1 + (k * rolloff_km)^2)^(-spectral_slope / 2),   k in rad/km
//! ```
//!
//! so the radially averaged power periodogram falls with log-log slope
//! `-spectral_slope` at wavelengths well below the rolloff. After the
//! inverse transform the field is affinely rescaled to zero mean and
//! `target_std_m`, which makes the overall variance exact by construction.
//!
//! Gridded L4-style products are emulated as a Gaussian low-pass of the
//! truth plus correlated noise, at three quality tiers.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SwotError};
use crate::filters::{convolve_reflect_strided, convolve_valid, gaussian_kernel, kernel_l2};
use crate::rng::Rng;

/// Ground-truth SSH on a regular 2-D grid, in meters. Node `(ix, iy)` sits
/// at `(ix * pixel_km, iy * pixel_km)`; values are stored row-major by y.
#[derive(Debug, Clone)]
pub struct Field2D {
    pub nx: usize,
    pub ny: usize,
    pub pixel_km: f64,
    pub values: Vec<f64>,
}

impl Field2D {
    pub fn new(nx: usize, ny: usize, pixel_km: f64, values: Vec<f64>) -> Result<Self> {
        if pixel_km <= 0.0 {
            return Err(SwotError::InvalidArg(format!("pixel_km must be positive, got {pixel_km}")));
        }
        if values.len() != nx * ny {
            return Err(SwotError::InvalidArg(format!(
                "field values length {} does not match {nx} x {ny}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(SwotError::Numeric("field contains non-finite values".into()));
        }
        Ok(Field2D { nx, ny, pixel_km, values })
    }

    pub fn constant(nx: usize, ny: usize, pixel_km: f64, c: f64) -> Self {
        Field2D { nx, ny, pixel_km, values: vec![c; nx * ny] }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    /// Largest sampleable coordinates, km.
    pub fn max_x_km(&self) -> f64 {
        (self.nx - 1) as f64 * self.pixel_km
    }

    pub fn max_y_km(&self) -> f64 {
        (self.ny - 1) as f64 * self.pixel_km
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
            / self.values.len() as f64;
        var.sqrt()
    }
}

/// Parameters of the synthetic truth spectrum.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub nx: usize,
    pub ny: usize,
    pub pixel_km: f64,
    pub spectral_slope: f64,
    pub rolloff_km: f64,
    pub target_std_m: f64,
    pub seed: u64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec {
            nx: 640,
            ny: 640,
            pixel_km: 2.0,
            spectral_slope: 4.0,
            rolloff_km: 300.0,
            target_std_m: 0.30,
            seed: 0,
        }
    }
}

impl FieldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 16 || self.ny < 16 {
            return Err(SwotError::InvalidArg(format!(
                "field must be at least 16 x 16, got {} x {}",
                self.nx, self.ny
            )));
        }
        if self.pixel_km <= 0.0 {
            return Err(SwotError::InvalidArg("pixel_km must be positive".into()));
        }
        if self.spectral_slope <= 0.0 {
            return Err(SwotError::InvalidArg("spectral_slope must be positive".into()));
        }
        if self.rolloff_km <= 0.0 {
            return Err(SwotError::InvalidArg("rolloff_km must be positive".into()));
        }
        if self.target_std_m <= 0.0 {
            return Err(SwotError::InvalidArg("target_std_m must be positive".into()));
        }
        Ok(())
    }
}

/// Quality tier of an emulated nadir-based gridded product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    OiLike,
    NeuralLike,
    NeuralSstLike,
}

impl PresetName {
    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::OiLike => "oi_like",
            PresetName::NeuralLike => "neural_like",
            PresetName::NeuralSstLike => "neural_sst_like",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oi_like" => Ok(PresetName::OiLike),
            "neural_like" => Ok(PresetName::NeuralLike),
            "neural_sst_like" => Ok(PresetName::NeuralSstLike),
            other => Err(SwotError::Config(format!(
                "unknown gridded preset '{other}' (expected oi_like, neural_like or neural_sst_like)"
            ))),
        }
    }

    pub fn all() -> [PresetName; 3] {
        [PresetName::OiLike, PresetName::NeuralLike, PresetName::NeuralSstLike]
    }
}

/// Degradation parameters of an emulated gridded product: how strongly the
/// truth is low-passed plus how much correlated noise is added. `noise_corr_km`
/// is the autocorrelation scale of the noise, not its kernel width.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GriddedPreset {
    pub name: PresetName,
    pub lowpass_sigma_km: f64,
    pub noise_std_m: f64,
    pub noise_corr_km: f64,
}

impl Default for GriddedPreset {
    fn default() -> Self {
        GriddedPreset::neural_like()
    }
}

impl GriddedPreset {
    pub fn oi_like() -> Self {
        GriddedPreset {
            name: PresetName::OiLike,
            lowpass_sigma_km: 100.0,
            noise_std_m: 0.02,
            noise_corr_km: 150.0,
        }
    }

    pub fn neural_like() -> Self {
        GriddedPreset {
            name: PresetName::NeuralLike,
            lowpass_sigma_km: 50.0,
            noise_std_m: 0.01,
            noise_corr_km: 100.0,
        }
    }

    pub fn neural_sst_like() -> Self {
        GriddedPreset {
            name: PresetName::NeuralSstLike,
            lowpass_sigma_km: 30.0,
            noise_std_m: 0.005,
            noise_corr_km: 80.0,
        }
    }

    pub fn named(name: PresetName) -> Self {
        match name {
            PresetName::OiLike => Self::oi_like(),
            PresetName::NeuralLike => Self::neural_like(),
            PresetName::NeuralSstLike => Self::neural_sst_like(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lowpass_sigma_km <= 0.0 {
            return Err(SwotError::InvalidArg("lowpass_sigma_km must be positive".into()));
        }
        if self.noise_std_m < 0.0 {
            return Err(SwotError::InvalidArg("noise_std_m must be non-negative".into()));
        }
        if self.noise_std_m > 0.0 && self.noise_corr_km <= 0.0 {
            return Err(SwotError::InvalidArg("noise_corr_km must be positive".into()));
        }
        Ok(())
    }
}

/// Synthesize a truth field with the prescribed isotropic spectrum.
/// Deterministic for a given spec (including its seed).
pub fn synth_ssh_field(spec: &FieldSpec) -> Result<Field2D> {
    spec.validate()?;
    let (nx, ny) = (spec.nx, spec.ny);
    let mut rng = Rng::new(spec.seed);

    // Complex spectral coefficients: sqrt(P(k)) times unit complex Gaussians.
    // Taking the real part of the inverse transform keeps the same spectrum;
    // the final affine rescale sets the overall variance.
    let mut spec_grid = vec![Complex::new(0.0, 0.0); nx * ny];
    let two_pi = 2.0 * std::f64::consts::PI;
    for iy in 0..ny {
        let sy = if iy <= ny / 2 { iy as isize } else { iy as isize - ny as isize };
        let fy = sy as f64 / (ny as f64 * spec.pixel_km);
        for ix in 0..nx {
            let sx = if ix <= nx / 2 { ix as isize } else { ix as isize - nx as isize };
            let fx = sx as f64 / (nx as f64 * spec.pixel_km);
            let re = rng.normal();
            let im = rng.normal();
            if sx == 0 && sy == 0 {
                continue; // mean is fixed by the rescale below
            }
            let k = two_pi * (fx * fx + fy * fy).sqrt();
            let kr = k * spec.rolloff_km;
            let power = (1.0 + kr * kr).powf(-spec.spectral_slope / 2.0);
            let amp = power.sqrt();
            spec_grid[iy * nx + ix] = Complex::new(amp * re, amp * im);
        }
    }

    ifft2_in_place(&mut spec_grid, nx, ny);

    let mut values: Vec<f64> = spec_grid.iter().map(|c| c.re).collect();

    // Affine rescale to zero mean and the target standard deviation.
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(SwotError::Numeric("degenerate synthetic field (zero variance)".into()));
    }
    let scale = spec.target_std_m / var.sqrt();
    for v in values.iter_mut() {
        *v = (*v - mean) * scale;
    }

    Field2D::new(nx, ny, spec.pixel_km, values)
}

/// In-place 2-D inverse FFT: rows, transpose, rows, transpose back.
fn ifft2_in_place(data: &mut [Complex<f64>], nx: usize, ny: usize) {
    let mut planner = FftPlanner::new();
    let fft_x = planner.plan_fft_inverse(nx);
    for row in data.chunks_exact_mut(nx) {
        fft_x.process(row);
    }
    let mut t = vec![Complex::new(0.0, 0.0); nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            t[ix * ny + iy] = data[iy * nx + ix];
        }
    }
    let fft_y = planner.plan_fft_inverse(ny);
    for col in t.chunks_exact_mut(ny) {
        fft_y.process(col);
    }
    for ix in 0..nx {
        for iy in 0..ny {
            data[iy * nx + ix] = t[ix * ny + iy];
        }
    }
}

/// Separable isotropic Gaussian blur with mirror-reflect boundaries.
pub fn gaussian_blur_2d(field: &Field2D, sigma_km: f64) -> Field2D {
    assert!(sigma_km > 0.0);
    let kernel = gaussian_kernel(sigma_km / field.pixel_km);
    let (nx, ny) = (field.nx, field.ny);
    let mut pass_x = vec![0.0; nx * ny];
    for iy in 0..ny {
        convolve_reflect_strided(
            &field.values[iy * nx..(iy + 1) * nx],
            &mut pass_x[iy * nx..(iy + 1) * nx],
            nx,
            1,
            &kernel,
        );
    }
    let mut out = vec![0.0; nx * ny];
    for ix in 0..nx {
        convolve_reflect_strided(&pass_x[ix..], &mut out[ix..], ny, nx, &kernel);
    }
    Field2D { nx, ny, pixel_km: field.pixel_km, values: out }
}

/// Stationary correlated-noise field: white noise convolved with an
/// isotropic Gaussian (valid-mode so no boundary artifacts), rescaled to
/// `std_m`. `corr_km` is the resulting autocorrelation e^(-1/2) scale, so
/// the kernel standard deviation is corr_km / sqrt(2).
pub fn correlated_noise_field(
    nx: usize,
    ny: usize,
    pixel_km: f64,
    corr_km: f64,
    std_m: f64,
    rng: &mut Rng,
) -> Field2D {
    let kernel = gaussian_kernel(corr_km / std::f64::consts::SQRT_2 / pixel_km);
    let half = kernel.len() / 2;
    let (wx, wy) = (nx + 2 * half, ny + 2 * half);
    let mut white = vec![0.0; wx * wy];
    rng.fill_normal(&mut white);

    // rows: (wy, wx) -> (wy, nx)
    let mut pass_x = vec![0.0; nx * wy];
    for iy in 0..wy {
        convolve_valid(&white[iy * wx..(iy + 1) * wx], &mut pass_x[iy * nx..(iy + 1) * nx], &kernel);
    }
    // cols: (wy, nx) -> (ny, nx)
    let mut out = vec![0.0; nx * ny];
    let mut col_src = vec![0.0; wy];
    let mut col_dst = vec![0.0; ny];
    for ix in 0..nx {
        for iy in 0..wy {
            col_src[iy] = pass_x[iy * nx + ix];
        }
        convolve_valid(&col_src, &mut col_dst, &kernel);
        for iy in 0..ny {
            out[iy * nx + ix] = col_dst[iy];
        }
    }

    // unit-variance white noise through a separable kernel has variance
    // (sum kx^2)(sum ky^2); divide it out, then scale to the target std
    let l2 = kernel_l2(&kernel);
    let scale = std_m / (l2 * l2);
    for v in out.iter_mut() {
        *v *= scale;
    }
    Field2D { nx, ny, pixel_km, values: out }
}

/// Emulate a nadir-based gridded product: Gaussian low-pass of the truth
/// plus independent correlated noise. Deterministic per (preset, seed).
pub fn emulate_gridded_product(truth: &Field2D, preset: &GriddedPreset, seed: u64) -> Result<Field2D> {
    preset.validate()?;
    let mut out = gaussian_blur_2d(truth, preset.lowpass_sigma_km);
    if preset.noise_std_m > 0.0 {
        let mut rng = Rng::child(seed, preset_noise_tag(preset.name));
        let noise = correlated_noise_field(
            truth.nx,
            truth.ny,
            truth.pixel_km,
            preset.noise_corr_km,
            preset.noise_std_m,
            &mut rng,
        );
        for (o, n) in out.values.iter_mut().zip(noise.values.iter()) {
            *o += n;
        }
    }
    Ok(out)
}

fn preset_noise_tag(name: PresetName) -> u64 {
    match name {
        PresetName::OiLike => 0x6f69,
        PresetName::NeuralLike => 0x6e6c,
        PresetName::NeuralSstLike => 0x6e73,
    }
}
