//! End-to-end miniature: simulate a small dataset, train a compact
//! calibration model for a few epochs, and report the improvement over the
//! gridded baseline. Takes a couple of minutes.
//!
//! Run with: cargo run --release --example train_calibrate

use swotcal::autodiff::BnMode;
use swotcal::calnet::{build_model, ArchConfig};
use swotcal::fieldgen::GriddedPreset;
use swotcal::metrics::rmse;
use swotcal::osse::{default_error_params, generate_dataset, FieldParams, GridParams};
use swotcal::training::{train, TrainConfig};

fn main() -> swotcal::Result<()> {
    let field = FieldParams::default();
    let grid_params = GridParams::default();
    let errors = default_error_params();
    let preset = GriddedPreset::neural_like();

    let (train_set, _) = generate_dataset(&field, &grid_params, &errors, &preset, 80, 1)?;
    let (val_set, _) = generate_dataset(&field, &grid_params, &errors, &preset, 16, 9001)?;
    println!("dataset: {} train / {} validation segments", train_set.len(), val_set.len());

    let grid = grid_params.build()?;
    let arch = ArchConfig { n_blocks: 1, n_channels: 16, ..ArchConfig::default() };
    let mut model = build_model(&arch, &grid, 7)?;
    println!("model: {} parameters, {} input channels", model.n_parameters(), arch.input_channels());

    let cfg = TrainConfig { epochs: 12, cycle_epochs: 12, seed: 7, ..TrainConfig::default() };
    let history = train(&mut model, &train_set, &val_set, &cfg, None)?;
    println!(
        "loss weights (ssh, grad, lap): ({:.3}, {:.3e}, {:.3e})",
        history.loss_weights.0, history.loss_weights.1, history.loss_weights.2
    );
    for e in &history.epochs {
        println!(
            "epoch {:>2}: loss {:.4e}  val RMSE {:.5} m  lr {:.2e}",
            e.epoch, e.loss, e.val_rmse, e.lr
        );
    }

    let mut cal = 0.0;
    let mut base = 0.0;
    for s in &val_set {
        let pred = model.forward_fields(&s.obs, &s.gridded, BnMode::Eval)?;
        cal += rmse(&pred, &s.truth)?.powi(2);
        base += rmse(&s.gridded, &s.truth)?.powi(2);
    }
    let cal = (cal / val_set.len() as f64).sqrt();
    let base = (base / val_set.len() as f64).sqrt();
    println!("\ncalibrated RMSE {:.5} m vs gridded baseline {:.5} m ({:.0}% of baseline)", cal, base, 100.0 * cal / base);
    Ok(())
}
