//! Central finite-difference verification of the reverse-mode engine:
//! every layer's parameter gradients are compared against numerical
//! derivatives at 64-bit precision.
//!
//! Run with: cargo run --release --example gradcheck_ops

use std::sync::Arc;

use swotcal::autodiff::gradcheck::{max_rel_error, numeric_gradient};
use swotcal::autodiff::{BnMode, ParamId, Tensor4};
use swotcal::calnet::{build_model, ArchConfig};
use swotcal::rng::Rng;
use swotcal::swath::{build_swath_grid, swath_gradient, swath_laplacian, SwathField};
use swotcal::training::{composite_loss_on_tape, TruthLeaves};

fn main() -> swotcal::Result<()> {
    let grid = Arc::new(build_swath_grid(8, 2.0, 10.0, 16.0)?);
    let cfg = ArchConfig { n_blocks: 1, n_channels: 4, scale_bands: 3, ..ArchConfig::default() };
    let mut model = build_model(&cfg, &grid, 11)?;
    let mut rng = Rng::new(12);
    for p in model.params.iter_mut() {
        for v in p.data.iter_mut() {
            *v += 0.1 * rng.normal();
        }
    }

    let mk = |seed: u64, scale: f64| {
        let mut rng = Rng::new(seed);
        let mut v = vec![0.0; grid.n_pixels()];
        rng.fill_normal(&mut v);
        v.iter_mut().for_each(|x| *x *= scale);
        SwathField::new(grid.clone(), v).unwrap()
    };
    let obs = mk(1, 1.0);
    let gridded = mk(2, 0.5);
    let truth = mk(3, 0.8);
    let weights = (1.0, 0.5, 0.2);
    let (h, w, split, pixel) =
        (grid.n_along(), grid.n_across(), grid.side_split(), grid.pixel_km());

    let eval_loss = |model: &mut swotcal::calnet::CalCNN| -> f64 {
        let saved = model.bn_state.clone();
        let input = model.assemble_input(&obs, &gridded).unwrap();
        let inputs = Tensor4::from_vec(1, cfg.input_channels(), h, w, input);
        let anchor = Tensor4::from_vec(1, 1, h, w, gridded.values().to_vec());
        let (mut tape, pred) = model.forward_batch(inputs, anchor, BnMode::Train).unwrap();
        let (dal, dac) = swath_gradient(&truth);
        let lap = swath_laplacian(&truth);
        let leaves = TruthLeaves {
            truth: tape.leaf(Tensor4::from_vec(1, 1, h, w, truth.values().to_vec())),
            d_along: tape.leaf(Tensor4::from_vec(1, 1, h, w, dal.into_values())),
            d_across: tape.leaf(Tensor4::from_vec(1, 1, h, w, dac.into_values())),
            laplacian: tape.leaf(Tensor4::from_vec(1, 1, h, w, lap.into_values())),
        };
        let (loss, _) =
            composite_loss_on_tape(&mut tape, pred, &leaves, split, pixel, weights).unwrap();
        let v = tape.value(loss).item();
        model.bn_state = saved;
        v
    };

    // analytic gradients through the tape
    {
        let saved = model.bn_state.clone();
        let input = model.assemble_input(&obs, &gridded)?;
        let inputs = Tensor4::from_vec(1, cfg.input_channels(), h, w, input);
        let anchor = Tensor4::from_vec(1, 1, h, w, gridded.values().to_vec());
        let (mut tape, pred) = model.forward_batch(inputs, anchor, BnMode::Train)?;
        let (dal, dac) = swath_gradient(&truth);
        let lap = swath_laplacian(&truth);
        let leaves = TruthLeaves {
            truth: tape.leaf(Tensor4::from_vec(1, 1, h, w, truth.values().to_vec())),
            d_along: tape.leaf(Tensor4::from_vec(1, 1, h, w, dal.into_values())),
            d_across: tape.leaf(Tensor4::from_vec(1, 1, h, w, dac.into_values())),
            laplacian: tape.leaf(Tensor4::from_vec(1, 1, h, w, lap.into_values())),
        };
        let (loss, _) = composite_loss_on_tape(&mut tape, pred, &leaves, split, pixel, weights)?;
        model.params.zero_grad();
        tape.backward(loss, &mut model.params)?;
        model.bn_state = saved;
    }

    println!("{:<24} {:>10} {:>14}", "parameter", "values", "max rel err");
    let mut worst: f64 = 0.0;
    for pi in 0..model.params.len() {
        let id = ParamId(pi);
        let name = model.params.get(id).name.clone();
        let analytic = model.params.get(id).grad.clone();
        let mut vals = model.params.get(id).data.clone();
        let numeric = numeric_gradient(&mut vals, 1e-5, |v| {
            model.params.get_mut(id).data.copy_from_slice(v);
            eval_loss(&mut model)
        });
        model.params.get_mut(id).data.copy_from_slice(&vals);
        let err = max_rel_error(&analytic, &numeric);
        worst = worst.max(err);
        println!("{name:<24} {:>10} {err:>14.2e}", vals.len());
    }
    println!("\nworst relative error: {worst:.2e} (tolerance 1e-6)");
    assert!(worst <= 1e-6);
    Ok(())
}
