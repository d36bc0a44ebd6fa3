//! Synthesize a truth SSH field, check its spectrum slope against the
//! prescription with a radially averaged periodogram, and write it to an
//! SWT file.
//!
//! Run with: cargo run --release --example synth_field

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use swotcal::fieldgen::{synth_ssh_field, FieldSpec};
use swotcal::swt::{self, SwtFile, SwtHeader};

fn main() -> swotcal::Result<()> {
    let spec = FieldSpec { nx: 320, ny: 320, seed: 7, ..FieldSpec::default() };
    let field = synth_ssh_field(&spec)?;
    println!(
        "field {}x{} at {} km: mean {:+.2e} m, std {:.3} m",
        field.nx,
        field.ny,
        field.pixel_km,
        field.mean(),
        field.std()
    );

    // radially averaged power periodogram
    let n = field.nx;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = field.values.iter().map(|v| Complex::new(*v, 0.0)).collect();
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut t = vec![Complex::new(0.0, 0.0); n * n];
    for iy in 0..n {
        for ix in 0..n {
            t[ix * n + iy] = buf[iy * n + ix];
        }
    }
    for col in t.chunks_exact_mut(n) {
        fft.process(col);
    }
    let domain_km = n as f64 * field.pixel_km;
    let mut power = vec![0.0f64; n / 2];
    let mut counts = vec![0usize; n / 2];
    for iy in 0..n {
        let sy = if iy <= n / 2 { iy as f64 } else { iy as f64 - n as f64 };
        for ix in 0..n {
            let sx = if ix <= n / 2 { ix as f64 } else { ix as f64 - n as f64 };
            let ring = (sx * sx + sy * sy).sqrt().round() as usize;
            if ring > 0 && ring < n / 2 {
                power[ring] += t[ix * n + iy].norm_sqr();
                counts[ring] += 1;
            }
        }
    }
    let pts: Vec<(f64, f64)> = (1..n / 2)
        .filter(|&r| {
            let wavelength = domain_km / r as f64;
            (50.0..=300.0).contains(&wavelength) && counts[r] > 0
        })
        .map(|r| ((r as f64 / domain_km).ln(), (power[r] / counts[r] as f64).ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    println!(
        "periodogram slope over 50..300 km: {slope:.2} (prescribed {})",
        -spec.spectral_slope
    );

    let mut header = SwtHeader::new("field2d", vec![vec![field.ny, field.nx]]);
    header.meta = serde_json::json!({ "pixel_km": field.pixel_km, "seed": spec.seed });
    let out = std::env::temp_dir().join("swotcal_example_field.swt");
    swt::write(&out, &SwtFile::new(header, vec![field.values.clone()])?)?;
    println!("wrote {}", out.display());
    Ok(())
}
