//! Microbenchmark of one training step at the desk-run shape. Prints a
//! per-phase breakdown; used to keep the end-to-end budget honest.

use std::sync::Arc;
use std::time::Instant;

use swotcal::autodiff::{BnMode, Tensor4};
use swotcal::calnet::{build_model, ArchConfig};
use swotcal::rng::Rng;
use swotcal::swath::{build_swath_grid, swath_gradient, swath_laplacian, SwathField};
use swotcal::training::{composite_loss_on_tape, TruthLeaves};

fn main() {
    let grid = Arc::new(build_swath_grid(256, 2.0, 10.0, 60.0).unwrap());
    let cfg = ArchConfig { n_blocks: 1, n_channels: 32, ..ArchConfig::default() };
    let mut model = build_model(&cfg, &grid, 1).unwrap();
    let (h, w) = (grid.n_along(), grid.n_across());
    let c_in = cfg.input_channels();
    let batch = 4usize;
    let mut rng = Rng::new(2);

    let mut mk = |n: usize| -> Vec<f64> {
        let mut v = vec![0.0; n];
        rng.fill_normal(&mut v);
        v
    };
    let channels: Vec<Vec<f64>> = (0..batch).map(|_| mk(c_in * h * w)).collect();
    let anchors: Vec<Vec<f64>> = (0..batch).map(|_| mk(h * w)).collect();
    let truth: Vec<SwathField> = (0..batch)
        .map(|_| SwathField::new(grid.clone(), mk(h * w)).unwrap())
        .collect();

    let reps = 10;
    let mut t_fwd = 0.0;
    let mut t_loss = 0.0;
    let mut t_bwd = 0.0;
    let mut t_assemble = 0.0;
    for _ in 0..reps {
        let t0 = Instant::now();
        let mut input = Vec::with_capacity(batch * c_in * h * w);
        for c in &channels {
            input.extend_from_slice(c);
        }
        let inputs = Tensor4::from_vec(batch, c_in, h, w, input);
        let mut anchor = Vec::with_capacity(batch * h * w);
        for a in &anchors {
            anchor.extend_from_slice(a);
        }
        let anchor = Tensor4::from_vec(batch, 1, h, w, anchor);
        t_assemble += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let (mut tape, pred) = model.forward_batch(inputs, anchor, BnMode::Train).unwrap();
        t_fwd += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let mut tv = Vec::new();
        let mut dal = Vec::new();
        let mut dac = Vec::new();
        let mut lap = Vec::new();
        for t in &truth {
            tv.extend_from_slice(t.values());
            let (a, c) = swath_gradient(t);
            dal.extend_from_slice(a.values());
            dac.extend_from_slice(c.values());
            lap.extend_from_slice(swath_laplacian(t).values());
        }
        let leaves = TruthLeaves {
            truth: tape.leaf(Tensor4::from_vec(batch, 1, h, w, tv)),
            d_along: tape.leaf(Tensor4::from_vec(batch, 1, h, w, dal)),
            d_across: tape.leaf(Tensor4::from_vec(batch, 1, h, w, dac)),
            laplacian: tape.leaf(Tensor4::from_vec(batch, 1, h, w, lap)),
        };
        let (loss, _) = composite_loss_on_tape(
            &mut tape,
            pred,
            &leaves,
            grid.side_split(),
            grid.pixel_km(),
            (1.0, 0.5, 0.25),
        )
        .unwrap();
        t_loss += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        model.params.zero_grad();
        tape.backward(loss, &mut model.params).unwrap();
        t_bwd += t0.elapsed().as_secs_f64();
    }
    let per = |t: f64| t / reps as f64 * 1e3;
    println!("assemble {:8.2} ms", per(t_assemble));
    println!("forward  {:8.2} ms", per(t_fwd));
    println!("loss     {:8.2} ms (includes truth stencils, cached in training)", per(t_loss));
    println!("backward {:8.2} ms", per(t_bwd));
    let step = (t_assemble + t_fwd + t_loss + t_bwd) / reps as f64;
    println!("step     {:8.2} ms -> {:.1} s per 450-segment epoch", step * 1e3, step * 450.0 / batch as f64);
}
