//! Simulated KaRIN-style structured observation errors.
//!
//! Five components, each with a prescribed across-track shape driven by a
//! correlated along-track coefficient series c(i):
//!
//! * roll:               edge_std * c(i) * x/x_max          (odd in x)
//! * phase:              per-side series, edge_std * c_side(i) * x/x_max
//! * timing:             edge_std * c(i)                    (constant in x)
//! * baseline dilation:  edge_std * c(i) * (x/x_max)^2      (even in x)
//! * wet troposphere:    isotropic correlated 2-D field on the swath
//!
//! `corr_km` is the autocorrelation e^(-1/2) scale of the series (or the
//! 2-D field), i.e. acf(tau) = exp(-tau^2 / (2 corr_km^2)); the generating
//! kernel therefore has standard deviation corr_km / sqrt(2).

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SwotError};
use crate::fieldgen::correlated_noise_field;
use crate::filters::{convolve_valid, gaussian_kernel, kernel_l2};
use crate::rng::Rng;
use crate::swath::{SwathField, SwathGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Roll,
    Phase,
    Timing,
    BaselineDilation,
    WetTropo,
}

impl ErrorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorKind::Roll => "roll",
            ErrorKind::Phase => "phase",
            ErrorKind::Timing => "timing",
            ErrorKind::BaselineDilation => "baseline_dilation",
            ErrorKind::WetTropo => "wet_tropo",
        }
    }

    pub fn all() -> [ErrorKind; 5] {
        [
            ErrorKind::Roll,
            ErrorKind::Phase,
            ErrorKind::Timing,
            ErrorKind::BaselineDilation,
            ErrorKind::WetTropo,
        ]
    }

    fn seed_tag(&self) -> u64 {
        match self {
            ErrorKind::Roll => 0x726f6c6c,
            ErrorKind::Phase => 0x70686173,
            ErrorKind::Timing => 0x74696d65,
            ErrorKind::BaselineDilation => 0x62617365,
            ErrorKind::WetTropo => 0x77657474,
        }
    }
}

/// One error component's parameters. `edge_std_m` is the standard deviation
/// at the outermost across-track column (field std for wet_tropo).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSpec {
    pub kind: ErrorKind,
    pub edge_std_m: f64,
    pub corr_km: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ErrorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.edge_std_m < 0.0 {
            return Err(SwotError::InvalidArg("edge_std_m must be non-negative".into()));
        }
        if self.corr_km <= 0.0 {
            return Err(SwotError::InvalidArg("corr_km must be positive".into()));
        }
        Ok(())
    }
}

/// Default component amplitudes; seeds are derived per kind from `seed`.
pub fn default_error_specs(seed: u64) -> Vec<ErrorSpec> {
    let spec = |kind: ErrorKind, edge_std_m: f64, corr_km: f64| ErrorSpec {
        kind,
        edge_std_m,
        corr_km,
        seed: seed ^ kind.seed_tag().wrapping_mul(0x2545_f491_4f6c_dd1d),
    };
    // roll dominates by an order of magnitude so the raw observation is
    // error-swamped on every segment, not just on average
    vec![
        spec(ErrorKind::Roll, 1.00, 500.0),
        spec(ErrorKind::Phase, 0.10, 300.0),
        spec(ErrorKind::Timing, 0.05, 200.0),
        spec(ErrorKind::BaselineDilation, 0.05, 800.0),
        spec(ErrorKind::WetTropo, 0.03, 40.0),
    ]
}

/// All simulated components of one observation plus their sum.
#[derive(Debug, Clone)]
pub struct ErrorBundle {
    pub components: Vec<(ErrorKind, SwathField)>,
    pub total: SwathField,
}

/// Zero-mean unit-variance Gaussian series with Gaussian autocorrelation of
/// scale `corr_km`: white noise through a Gaussian kernel (valid mode, so
/// the series is exactly stationary), analytically rescaled to unit
/// variance. Deterministic per seed.
pub fn gen_alongtrack_series(
    n_along: usize,
    pixel_km: f64,
    corr_km: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if corr_km <= pixel_km {
        return Err(SwotError::InvalidArg(format!(
            "corr_km ({corr_km}) must exceed pixel_km ({pixel_km})"
        )));
    }
    let kernel = gaussian_kernel(corr_km / std::f64::consts::SQRT_2 / pixel_km);
    let mut rng = Rng::new(seed);
    let mut white = vec![0.0; n_along + kernel.len() - 1];
    rng.fill_normal(&mut white);
    let mut out = vec![0.0; n_along];
    convolve_valid(&white, &mut out, &kernel);
    let inv = 1.0 / kernel_l2(&kernel);
    for v in out.iter_mut() {
        *v *= inv;
    }
    Ok(out)
}

/// Across-track shapes applied to given coefficient series. Split out from
/// `gen_error_component` so tests can force c(i) = 1.
fn component_from_series(
    grid: &Arc<SwathGrid>,
    kind: ErrorKind,
    edge_std_m: f64,
    series_left: &[f64],
    series_right: &[f64],
) -> SwathField {
    let (h, w, split) = (grid.n_along(), grid.n_across(), grid.side_split());
    let x_max = grid.outer_km();
    let offs = grid.across_offsets_km();
    let mut vals = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let x = offs[j] / x_max;
            let c = if j < split { series_left[i] } else { series_right[i] };
            vals[i * w + j] = match kind {
                ErrorKind::Roll => edge_std_m * c * x,
                ErrorKind::Phase => edge_std_m * c * x,
                ErrorKind::Timing => edge_std_m * c,
                ErrorKind::BaselineDilation => edge_std_m * c * x * x,
                ErrorKind::WetTropo => unreachable!("wet_tropo has no coefficient series"),
            };
        }
    }
    SwathField::new(grid.clone(), vals).expect("component values are finite")
}

/// Generate one error component on a swath grid.
pub fn gen_error_component(grid: &Arc<SwathGrid>, spec: &ErrorSpec) -> Result<SwathField> {
    spec.validate()?;
    match spec.kind {
        ErrorKind::WetTropo => wet_tropo_field(grid, spec),
        ErrorKind::Phase => {
            // independent series per side encodes side-incoherent phase
            let left = gen_alongtrack_series(
                grid.n_along(),
                grid.pixel_km(),
                spec.corr_km,
                Rng::child(spec.seed, 0x6c).next_u64(),
            )?;
            let right = gen_alongtrack_series(
                grid.n_along(),
                grid.pixel_km(),
                spec.corr_km,
                Rng::child(spec.seed, 0x72).next_u64(),
            )?;
            Ok(component_from_series(grid, spec.kind, spec.edge_std_m, &left, &right))
        }
        _ => {
            let series =
                gen_alongtrack_series(grid.n_along(), grid.pixel_km(), spec.corr_km, spec.seed)?;
            Ok(component_from_series(grid, spec.kind, spec.edge_std_m, &series, &series))
        }
    }
}

/// Isotropic correlated 2-D field sampled at the swath columns. The noise
/// raster covers the full across extent at pixel_km spacing, so the field
/// is correlated across the nadir gap like a real path-delay screen.
fn wet_tropo_field(grid: &Arc<SwathGrid>, spec: &ErrorSpec) -> Result<SwathField> {
    let outer = grid.outer_km();
    let pixel = grid.pixel_km();
    let raster_cols = ((2.0 * outer / pixel).round() as usize) + 1;
    // map each swath column onto the raster
    let col_index: Vec<usize> = grid
        .across_offsets_km()
        .iter()
        .map(|&off| {
            let idx = (off + outer) / pixel;
            let rounded = idx.round();
            if (idx - rounded).abs() > 1e-9 {
                return Err(SwotError::InvalidArg(format!(
                    "across offset {off} km is not aligned to the {pixel} km raster"
                )));
            }
            Ok(rounded as usize)
        })
        .collect::<Result<_>>()?;

    let mut rng = Rng::child(spec.seed, 0x7774);
    let noise = correlated_noise_field(
        raster_cols,
        grid.n_along(),
        pixel,
        spec.corr_km,
        spec.edge_std_m,
        &mut rng,
    );
    let (h, w) = (grid.n_along(), grid.n_across());
    let mut vals = vec![0.0; h * w];
    for i in 0..h {
        for (j, &rc) in col_index.iter().enumerate() {
            vals[i * w + j] = noise.at(rc, i);
        }
    }
    SwathField::new(grid.clone(), vals)
}

/// Add all components to a clean swath: obs = truth + sum(components).
pub fn corrupt(truth: &SwathField, specs: &[ErrorSpec]) -> Result<(SwathField, ErrorBundle)> {
    if specs.is_empty() {
        return Err(SwotError::InvalidArg("corrupt needs at least one error spec".into()));
    }
    let mut seen = HashSet::new();
    for s in specs {
        if !seen.insert(s.kind) {
            return Err(SwotError::InvalidArg(format!(
                "duplicate error kind {} in spec list",
                s.kind.as_str()
            )));
        }
    }
    let grid = truth.grid().clone();
    let mut components = Vec::with_capacity(specs.len());
    let mut total = vec![0.0; grid.n_pixels()];
    for spec in specs {
        let comp = gen_error_component(&grid, spec)?;
        for (t, v) in total.iter_mut().zip(comp.values()) {
            *t += v;
        }
        components.push((spec.kind, comp));
    }
    let total = SwathField::new(grid.clone(), total)?;
    let obs = truth.zip_with(&total, |t, e| t + e)?;
    Ok((obs, ErrorBundle { components, total }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swath::build_swath_grid;

    fn grid() -> Arc<SwathGrid> {
        Arc::new(build_swath_grid(64, 2.0, 10.0, 60.0).unwrap())
    }

    #[test]
    fn series_variance_near_unit() {
        // short correlation so 4096 samples carry enough degrees of freedom
        // for the 10% finite-sample check
        let s = gen_alongtrack_series(4096, 2.0, 10.0, 42).unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / s.len() as f64;
        assert!((var - 1.0).abs() < 0.10, "variance {var}");
    }

    #[test]
    fn series_autocorrelation_scale() {
        // acf at lag = corr_km should sit near exp(-1/2); average over 50 seeds
        let (n, pixel, corr) = (4096usize, 2.0f64, 40.0f64);
        let lag = (corr / pixel).round() as usize;
        let mut acf_sum = 0.0;
        for seed in 0..50u64 {
            let s = gen_alongtrack_series(n, pixel, corr, 1000 + seed).unwrap();
            let mean = s.iter().sum::<f64>() / n as f64;
            let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let cov = (0..n - lag)
                .map(|i| (s[i] - mean) * (s[i + lag] - mean))
                .sum::<f64>()
                / (n - lag) as f64;
            acf_sum += cov / var;
        }
        let acf = acf_sum / 50.0;
        let target = (-0.5f64).exp();
        assert!((acf - target).abs() < 0.15, "acf {acf} vs {target}");
    }

    #[test]
    fn series_is_deterministic_and_guarded() {
        let a = gen_alongtrack_series(256, 2.0, 50.0, 7).unwrap();
        let b = gen_alongtrack_series(256, 2.0, 50.0, 7).unwrap();
        assert_eq!(a, b);
        assert!(gen_alongtrack_series(256, 2.0, 2.0, 7).is_err());
        assert!(gen_alongtrack_series(256, 2.0, 1.0, 7).is_err());
    }

    #[test]
    fn roll_shape_with_unit_series() {
        let g = grid();
        let ones = vec![1.0; g.n_along()];
        let f = component_from_series(&g, ErrorKind::Roll, 0.4, &ones, &ones);
        let w = g.n_across();
        // outermost columns at +-60 km, innermost at +-10 km
        for i in 0..g.n_along() {
            assert!((f.at(i, 0) + 0.4).abs() < 1e-15);
            assert!((f.at(i, w - 1) - 0.4).abs() < 1e-15);
            assert!((f.at(i, 25) + 0.4 / 6.0).abs() < 1e-15);
            assert!((f.at(i, 26) - 0.4 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn parity_of_shapes() {
        let g = grid();
        let w = g.n_across();
        for seed in [3u64, 19, 101] {
            let roll = gen_error_component(
                &g,
                &ErrorSpec { kind: ErrorKind::Roll, edge_std_m: 0.5, corr_km: 300.0, seed },
            )
            .unwrap();
            let base = gen_error_component(
                &g,
                &ErrorSpec {
                    kind: ErrorKind::BaselineDilation,
                    edge_std_m: 0.05,
                    corr_km: 300.0,
                    seed,
                },
            )
            .unwrap();
            let timing = gen_error_component(
                &g,
                &ErrorSpec { kind: ErrorKind::Timing, edge_std_m: 0.05, corr_km: 300.0, seed },
            )
            .unwrap();
            for i in 0..g.n_along() {
                for j in 0..w / 2 {
                    let m = w - 1 - j; // mirror column
                    assert_eq!(roll.at(i, j), -roll.at(i, m), "roll odd");
                    assert_eq!(base.at(i, j), base.at(i, m), "baseline even");
                }
                // timing: across-track variance of each row is zero
                let row0 = timing.at(i, 0);
                for j in 0..w {
                    assert_eq!(timing.at(i, j), row0);
                }
            }
        }
    }

    #[test]
    fn shapes_lie_in_their_polynomial_span() {
        let g = grid();
        let offs = g.across_offsets_km();
        let x_max = g.outer_km();
        for seed in [5u64, 55] {
            let roll = gen_error_component(
                &g,
                &ErrorSpec { kind: ErrorKind::Roll, edge_std_m: 0.7, corr_km: 250.0, seed },
            )
            .unwrap();
            let base = gen_error_component(
                &g,
                &ErrorSpec {
                    kind: ErrorKind::BaselineDilation,
                    edge_std_m: 0.3,
                    corr_km: 250.0,
                    seed,
                },
            )
            .unwrap();
            for i in 0..g.n_along() {
                // regress roll row onto x: residual must vanish
                let (mut num, mut den) = (0.0, 0.0);
                for (j, &off) in offs.iter().enumerate() {
                    let x = off / x_max;
                    num += roll.at(i, j) * x;
                    den += x * x;
                }
                let a = num / den;
                for (j, &off) in offs.iter().enumerate() {
                    let x = off / x_max;
                    assert!((roll.at(i, j) - a * x).abs() < 1e-12);
                }
                // regress baseline row onto x^2
                let (mut num, mut den) = (0.0, 0.0);
                for (j, &off) in offs.iter().enumerate() {
                    let x2 = (off / x_max) * (off / x_max);
                    num += base.at(i, j) * x2;
                    den += x2 * x2;
                }
                let a = num / den;
                for (j, &off) in offs.iter().enumerate() {
                    let x2 = (off / x_max) * (off / x_max);
                    assert!((base.at(i, j) - a * x2).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn phase_sides_are_independent_roll_sides_coherent() {
        let g = grid();
        let spec = ErrorSpec { kind: ErrorKind::Phase, edge_std_m: 0.1, corr_km: 300.0, seed: 8 };
        let phase = gen_error_component(&g, &spec).unwrap();
        let split = g.side_split();
        // mirrored columns: roll is exactly odd; phase is not (independent sides)
        let mut any_mismatch = false;
        for i in 0..g.n_along() {
            if (phase.at(i, split - 1) + phase.at(i, split)).abs() > 1e-12 {
                any_mismatch = true;
                break;
            }
        }
        assert!(any_mismatch, "phase sides unexpectedly coherent");
    }

    #[test]
    fn wet_tropo_std_close_to_edge_std() {
        let g = Arc::new(build_swath_grid(512, 2.0, 10.0, 60.0).unwrap());
        let spec =
            ErrorSpec { kind: ErrorKind::WetTropo, edge_std_m: 0.02, corr_km: 20.0, seed: 4 };
        let f = gen_error_component(&g, &spec).unwrap();
        let std = f.variance().sqrt();
        assert!((std - 0.02).abs() < 0.006, "std {std}");
    }

    #[test]
    fn corrupt_zero_amplitude_is_identity() {
        let g = grid();
        let truth = SwathField::constant(g.clone(), 0.3);
        let specs: Vec<ErrorSpec> = default_error_specs(1)
            .into_iter()
            .map(|mut s| {
                s.edge_std_m = 0.0;
                s
            })
            .collect();
        let (obs, bundle) = corrupt(&truth, &specs).unwrap();
        assert_eq!(obs.values(), truth.values());
        assert!(bundle.total.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn corrupt_total_is_sum_of_components() {
        let g = grid();
        let mut rng = crate::rng::Rng::new(2);
        let mut vals = vec![0.0; g.n_pixels()];
        rng.fill_normal(&mut vals);
        let truth = SwathField::new(g.clone(), vals).unwrap();
        let (obs, bundle) = corrupt(&truth, &default_error_specs(9)).unwrap();
        for i in 0..g.n_pixels() {
            let sum: f64 = bundle.components.iter().map(|(_, c)| c.values()[i]).sum();
            assert!((bundle.total.values()[i] - sum).abs() < 1e-12);
            assert!((obs.values()[i] - truth.values()[i] - bundle.total.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn corrupt_rejects_bad_spec_lists() {
        let g = grid();
        let truth = SwathField::constant(g, 0.0);
        assert!(corrupt(&truth, &[]).is_err());
        let spec = ErrorSpec { kind: ErrorKind::Roll, edge_std_m: 0.1, corr_km: 300.0, seed: 0 };
        assert!(corrupt(&truth, &[spec.clone(), spec]).is_err());
    }
}
