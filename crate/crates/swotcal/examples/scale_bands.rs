//! Decompose a corrupted observation into along-track scale bands and show
//! the variance concentration that motivates per-band normalization: the
//! largest-scale band dwarfs the rest until the bands are rescaled.
//!
//! Run with: cargo run --release --example scale_bands

use std::sync::Arc;

use swotcal::errorsim::{corrupt, default_error_specs};
use swotcal::fieldgen::{synth_ssh_field, FieldSpec};
use swotcal::metrics::observation_band_variance;
use swotcal::scale_space::{band_energy, decompose, default_scales, reconstruct};
use swotcal::swath::{build_swath_grid, sample_swath};
use swotcal::training::CalSample;

fn main() -> swotcal::Result<()> {
    let grid = Arc::new(build_swath_grid(256, 2.0, 10.0, 60.0)?);
    let scales = default_scales(20, 8.0)?;

    // a scale stack telescopes back to the input exactly
    let field = synth_ssh_field(&FieldSpec { seed: 5, ..FieldSpec::default() })?;
    let truth = sample_swath(&field, &grid, (300.0, 420.0), 1.1)?;
    let (obs, _) = corrupt(&truth, &default_error_specs(5))?;
    let stack = decompose(&obs, &scales)?;
    let back = reconstruct(&stack);
    let max_err = obs
        .values()
        .iter()
        .zip(back.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("reconstruction max abs error: {max_err:.2e} m over {} bands", stack.n_bands());

    let fractions = band_energy(&stack)?;
    println!("\n{:<6} {:>10} {:>14}", "band", "sigma km", "var fraction");
    for (b, frac) in fractions.iter().enumerate() {
        let sigma = if b == 0 {
            format!("<= {}", scales.sigmas_km()[0])
        } else if b < scales.n_scales() {
            format!("{}", scales.sigmas_km()[b])
        } else {
            "residual".to_string()
        };
        println!("{b:<6} {sigma:>10} {frac:>14.3e}");
    }

    // batch view: rescaling statistics from half the segments, variances
    // measured on the other half
    let mut samples = Vec::new();
    for k in 0..8 {
        let t = sample_swath(&field, &grid, (260.0 + 20.0 * k as f64, 400.0), 1.1)?;
        let (o, _) = corrupt(&t, &default_error_specs(100 + k))?;
        samples.push(CalSample { truth: t.clone(), obs: o, gridded: t, bundle: None });
    }
    let (pre, post) = observation_band_variance(&samples, &scales)?;
    let max_pre = pre.iter().cloned().fold(0.0, f64::max);
    let min_pre = pre.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_post = post.iter().cloned().fold(0.0, f64::max);
    let min_post = post.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("\nband variance spread before rescale: {:.1e}", max_pre / min_pre);
    println!("band variance spread after  rescale: {:.1e}", max_post / min_post);
    Ok(())
}
