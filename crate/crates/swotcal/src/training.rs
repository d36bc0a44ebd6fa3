//! Supervised training: composite SSH/gradient/Laplacian loss, triangular
//! cyclical learning rate with per-cycle annealing, seeded mini-batching,
//! best-checkpoint selection and divergence guards. Fully deterministic
//! for a given seed.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, BnMode, NodeId, Tape, Tensor4};
use crate::calnet::CalCNN;
use crate::error::{Result, SwotError};
use crate::errorsim::ErrorBundle;
use crate::rng::Rng;
use crate::swath::{swath_gradient, swath_laplacian, SwathField};

/// One training/evaluation record.
pub struct CalSample {
    pub truth: SwathField,
    pub obs: SwathField,
    pub gridded: SwathField,
    /// Error components, kept for diagnostics only.
    pub bundle: Option<ErrorBundle>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub max_lr: f64,
    pub cycle_epochs: usize,
    pub anneal_factor: f64,
    /// (w_ssh, w_grad, w_lap); None auto-balances the three components on
    /// the first batch of the untrained model and freezes the result.
    #[serde(default)]
    pub loss_weights: Option<(f64, f64, f64)>,
    /// Multipliers applied on top of the (auto-balanced) weights; tilting
    /// toward the gradient/Laplacian terms emphasizes fine scales.
    #[serde(default = "default_tilt")]
    pub loss_tilt: (f64, f64, f64),
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 250,
            batch_size: 4,
            base_lr: 1e-4,
            max_lr: 1e-3,
            cycle_epochs: 20,
            anneal_factor: 0.5,
            loss_weights: None,
            loss_tilt: (1.0, 1.0, 1.0),
            seed: 0,
        }
    }
}

fn default_tilt() -> (f64, f64, f64) {
    (1.0, 1.0, 1.0)
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(SwotError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(SwotError::Config("batch_size must be at least 1".into()));
        }
        if !(self.base_lr < self.max_lr) {
            return Err(SwotError::Config("base_lr must be smaller than max_lr".into()));
        }
        if self.cycle_epochs == 0 {
            return Err(SwotError::Config("cycle_epochs must be at least 1".into()));
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor <= 1.0) {
            return Err(SwotError::Config("anneal_factor must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub loss_ssh: f64,
    pub loss_grad: f64,
    pub loss_lap: f64,
    pub lr: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    /// The frozen (w_ssh, w_grad, w_lap) used for the whole run.
    pub loss_weights: (f64, f64, f64),
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
}

/// Triangular cyclical learning rate with annealed amplitude: cycles of
/// `cycle_epochs * steps_per_epoch` steps rise linearly from base_lr to
/// the cycle maximum at half cycle and fall back; after every full cycle
/// the amplitude (max - base) is multiplied by `anneal_factor`.
pub fn cyclical_lr(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let cycle_len = (cfg.cycle_epochs * steps_per_epoch).max(1);
    let cycle = step / cycle_len;
    let pos = (step % cycle_len) as f64 / cycle_len as f64;
    let tri = if pos <= 0.5 { 2.0 * pos } else { 2.0 * (1.0 - pos) };
    let amp = (cfg.max_lr - cfg.base_lr) * cfg.anneal_factor.powi(cycle as i32);
    cfg.base_lr + amp * tri
}

/// Components of the composite loss, for logging.
#[derive(Debug, Clone, Copy)]
pub struct LossComponents {
    pub ssh: f64,
    pub grad: f64,
    pub lap: f64,
}

/// Tape-level composite loss: w_ssh MSE(pred, truth) + w_grad MSE of the
/// gradients + w_lap MSE of the Laplacians. The gradient term averages the
/// along- and across-track components. Truth-side stencils are supplied as
/// precomputed leaves so only the prediction path is differentiated.
pub struct TruthLeaves {
    pub truth: NodeId,
    pub d_along: NodeId,
    pub d_across: NodeId,
    pub laplacian: NodeId,
}

pub fn composite_loss_on_tape(
    tape: &mut Tape,
    pred: NodeId,
    truth: &TruthLeaves,
    split: usize,
    pixel_km: f64,
    weights: (f64, f64, f64),
) -> Result<(NodeId, LossComponents)> {
    let (w_ssh, w_grad, w_lap) = weights;
    let m_ssh = tape.mse(pred, truth.truth)?;
    let p_al = tape.grad_along(pred, pixel_km);
    let p_ac = tape.grad_across(pred, split, pixel_km);
    let p_lap = tape.laplacian(pred, split, pixel_km);
    let m_al = tape.mse(p_al, truth.d_along)?;
    let m_ac = tape.mse(p_ac, truth.d_across)?;
    let m_lap = tape.mse(p_lap, truth.laplacian)?;
    let comps = LossComponents {
        ssh: tape.value(m_ssh).item(),
        grad: 0.5 * (tape.value(m_al).item() + tape.value(m_ac).item()),
        lap: tape.value(m_lap).item(),
    };
    let loss = tape.weighted_sum(vec![
        (m_ssh, w_ssh),
        (m_al, 0.5 * w_grad),
        (m_ac, 0.5 * w_grad),
        (m_lap, w_lap),
    ])?;
    Ok((loss, comps))
}

/// Non-differentiable convenience for diagnostics and tests: the same
/// composite loss evaluated directly on swath fields.
pub fn composite_loss(
    pred: &[SwathField],
    truth: &[SwathField],
    weights: (f64, f64, f64),
) -> Result<(f64, LossComponents)> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(SwotError::InvalidArg("loss needs matching non-empty batches".into()));
    }
    let mut c = LossComponents { ssh: 0.0, grad: 0.0, lap: 0.0 };
    let mut n_total = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if p.grid() != t.grid() {
            return Err(SwotError::Data("loss fields on different grids".into()));
        }
        let n = p.values().len();
        n_total += n;
        let se: f64 =
            p.values().iter().zip(t.values()).map(|(a, b)| (a - b) * (a - b)).sum();
        c.ssh += se;
        let (pal, pac) = swath_gradient(p);
        let (tal, tac) = swath_gradient(t);
        let ge: f64 = pal.values().iter().zip(tal.values()).map(|(a, b)| (a - b) * (a - b)).sum();
        let ge2: f64 = pac.values().iter().zip(tac.values()).map(|(a, b)| (a - b) * (a - b)).sum();
        c.grad += 0.5 * (ge + ge2);
        let pl = swath_laplacian(p);
        let tl = swath_laplacian(t);
        c.lap += pl.values().iter().zip(tl.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    let n = n_total as f64;
    c.ssh /= n;
    c.grad /= n;
    c.lap /= n;
    let loss = weights.0 * c.ssh + weights.1 * c.grad + weights.2 * c.lap;
    if !loss.is_finite() {
        return Err(SwotError::Numeric(format!(
            "non-finite loss: ssh {} grad {} lap {}",
            c.ssh, c.grad, c.lap
        )));
    }
    Ok((loss, c))
}

/// Deterministic per-epoch sample order.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::child(seed, 0x5348 ^ epoch as u64);
    rng.shuffle(&mut order);
    order
}

/// Cached per-sample tensors so the scale decomposition and truth stencils
/// are computed once, not once per epoch.
struct SampleCache {
    channels: Vec<f64>,
    gridded: Vec<f64>,
    truth: Vec<f64>,
    truth_dal: Vec<f64>,
    truth_dac: Vec<f64>,
    truth_lap: Vec<f64>,
}

fn build_cache(model: &CalCNN, samples: &[CalSample]) -> Result<Vec<SampleCache>> {
    samples
        .iter()
        .map(|s| {
            if s.truth.grid() != model.grid()
                || s.obs.grid() != model.grid()
                || s.gridded.grid() != model.grid()
            {
                return Err(SwotError::Data("sample grid does not match the model grid".into()));
            }
            let channels = model.assemble_input(&s.obs, &s.gridded)?;
            let (dal, dac) = swath_gradient(&s.truth);
            let lap = swath_laplacian(&s.truth);
            Ok(SampleCache {
                channels,
                gridded: s.gridded.values().to_vec(),
                truth: s.truth.values().to_vec(),
                truth_dal: dal.into_values(),
                truth_dac: dac.into_values(),
                truth_lap: lap.into_values(),
            })
        })
        .collect()
}

fn batch_tensor(parts: &[&[f64]], c: usize, h: usize, w: usize) -> Tensor4 {
    let chunk = c * h * w;
    let mut data = crate::autodiff::pool::acquire(parts.len() * chunk);
    for (i, p) in parts.iter().enumerate() {
        data[i * chunk..(i + 1) * chunk].copy_from_slice(p);
    }
    Tensor4::from_vec(parts.len(), c, h, w, data)
}

/// Pooled validation RMSE in eval mode.
fn validation_rmse(model: &mut CalCNN, cache: &[SampleCache], batch: usize) -> Result<f64> {
    let (h, w) = (model.grid().n_along(), model.grid().n_across());
    let c_in = model.cfg().input_channels();
    let mut se = 0.0;
    let mut n = 0usize;
    for chunk in cache.chunks(batch) {
        let inputs = batch_tensor(&chunk.iter().map(|s| s.channels.as_slice()).collect::<Vec<_>>(), c_in, h, w);
        let anchors = batch_tensor(&chunk.iter().map(|s| s.gridded.as_slice()).collect::<Vec<_>>(), 1, h, w);
        let (tape, pred) = model.forward_batch(inputs, anchors, BnMode::Eval)?;
        let pv = tape.value(pred).data();
        for (bi, s) in chunk.iter().enumerate() {
            let off = bi * h * w;
            for (i, t) in s.truth.iter().enumerate() {
                let d = pv[off + i] - t;
                se += d * d;
            }
            n += h * w;
        }
    }
    Ok((se / n as f64).sqrt())
}

/// Train a model. On return the model holds the parameters of the epoch
/// with the best validation RMSE (the untrained state counts as epoch 0).
/// `history_jsonl` receives one JSON line per epoch as training runs, so
/// a divergence abort still leaves the history on disk.
pub fn train(
    model: &mut CalCNN,
    train_set: &[CalSample],
    val_set: &[CalSample],
    cfg: &TrainConfig,
    history_jsonl: Option<&Path>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(SwotError::Data("training and validation sets must be non-empty".into()));
    }
    let (h, w) = (model.grid().n_along(), model.grid().n_across());
    let split = model.grid().side_split();
    let pixel_km = model.grid().pixel_km();
    let c_in = model.cfg().input_channels();

    let train_cache = build_cache(model, train_set)?;
    let val_cache = build_cache(model, val_set)?;

    // Resolve loss weights: equalize the three components of the untrained
    // model (whose residual head reproduces the gridded product) on the
    // first batch, then freeze.
    let weights = {
        let base = match cfg.loss_weights {
            Some(ws) => ws,
            None => {
                let k = cfg.batch_size.min(train_set.len());
                let preds: Vec<SwathField> =
                    train_set[..k].iter().map(|s| s.gridded.clone()).collect();
                let truths: Vec<SwathField> =
                    train_set[..k].iter().map(|s| s.truth.clone()).collect();
                let (_, c) = composite_loss(&preds, &truths, (1.0, 1.0, 1.0))?;
                let w_grad = if c.grad > 0.0 { c.ssh / c.grad } else { 1.0 };
                let w_lap = if c.lap > 0.0 { c.ssh / c.lap } else { 1.0 };
                (1.0, w_grad, w_lap)
            }
        };
        (base.0 * cfg.loss_tilt.0, base.1 * cfg.loss_tilt.1, base.2 * cfg.loss_tilt.2)
    };

    let mut history = TrainHistory {
        loss_weights: weights,
        epochs: Vec::with_capacity(cfg.epochs + 1),
        best_epoch: 0,
        best_val_rmse: f64::INFINITY,
    };
    let mut sink = match history_jsonl {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };
    let mut log_epoch = |history: &mut TrainHistory, stats: EpochStats| -> Result<()> {
        if let Some(s) = sink.as_mut() {
            writeln!(s, "{}", serde_json::to_string(&stats)?)?;
            s.flush()?;
        }
        history.epochs.push(stats);
        Ok(())
    };

    // epoch 0: the untrained model is a checkpoint candidate
    let val0 = validation_rmse(model, &val_cache, cfg.batch_size)?;
    {
        let k = cfg.batch_size.min(train_set.len());
        let preds: Vec<SwathField> = train_set[..k].iter().map(|s| s.gridded.clone()).collect();
        let truths: Vec<SwathField> = train_set[..k].iter().map(|s| s.truth.clone()).collect();
        let (l0, c0) = composite_loss(&preds, &truths, weights)?;
        log_epoch(
            &mut history,
            EpochStats {
                epoch: 0,
                loss: l0,
                loss_ssh: c0.ssh,
                loss_grad: c0.grad,
                loss_lap: c0.lap,
                lr: cfg.base_lr,
                val_rmse: val0,
            },
        )?;
    }
    let mut best_snapshot = model.snapshot();
    history.best_epoch = 0;
    history.best_val_rmse = val0;

    let steps_per_epoch = train_cache.len().div_ceil(cfg.batch_size);
    let mut adam = Adam::new(&model.params);
    let mut global_step = 0usize;
    let mut initial_loss: Option<f64> = None;

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train_cache.len(), cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut epoch_c = LossComponents { ssh: 0.0, grad: 0.0, lap: 0.0 };
        let mut last_lr = cfg.base_lr;
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<&SampleCache> = chunk.iter().map(|&i| &train_cache[i]).collect();
            let inputs = batch_tensor(
                &samples.iter().map(|s| s.channels.as_slice()).collect::<Vec<_>>(),
                c_in,
                h,
                w,
            );
            let anchors = batch_tensor(
                &samples.iter().map(|s| s.gridded.as_slice()).collect::<Vec<_>>(),
                1,
                h,
                w,
            );
            let (mut tape, pred) = model.forward_batch(inputs, anchors, BnMode::Train)?;
            let truth_leaves = TruthLeaves {
                truth: tape.leaf(batch_tensor(
                    &samples.iter().map(|s| s.truth.as_slice()).collect::<Vec<_>>(),
                    1,
                    h,
                    w,
                )),
                d_along: tape.leaf(batch_tensor(
                    &samples.iter().map(|s| s.truth_dal.as_slice()).collect::<Vec<_>>(),
                    1,
                    h,
                    w,
                )),
                d_across: tape.leaf(batch_tensor(
                    &samples.iter().map(|s| s.truth_dac.as_slice()).collect::<Vec<_>>(),
                    1,
                    h,
                    w,
                )),
                laplacian: tape.leaf(batch_tensor(
                    &samples.iter().map(|s| s.truth_lap.as_slice()).collect::<Vec<_>>(),
                    1,
                    h,
                    w,
                )),
            };
            let (loss, comps) =
                composite_loss_on_tape(&mut tape, pred, &truth_leaves, split, pixel_km, weights)?;
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() {
                return Err(SwotError::Numeric(format!(
                    "non-finite loss at epoch {epoch}, step {global_step}: ssh {} grad {} lap {}",
                    comps.ssh, comps.grad, comps.lap
                )));
            }
            let init = *initial_loss.get_or_insert(loss_val);
            if loss_val > 1e3 * init.max(f64::MIN_POSITIVE) {
                return Err(SwotError::Numeric(format!(
                    "training diverged at epoch {epoch}: loss {loss_val} vs initial {init} \
                     (history retained through epoch {})",
                    epoch - 1
                )));
            }
            model.params.zero_grad();
            tape.backward(loss, &mut model.params)?;
            last_lr = cyclical_lr(global_step, steps_per_epoch, cfg);
            adam.step(&mut model.params, last_lr);
            global_step += 1;
            let bw = chunk.len() as f64 / train_cache.len() as f64;
            epoch_loss += loss_val * bw;
            epoch_c.ssh += comps.ssh * bw;
            epoch_c.grad += comps.grad * bw;
            epoch_c.lap += comps.lap * bw;
        }
        let val_rmse = validation_rmse(model, &val_cache, cfg.batch_size)?;
        log_epoch(
            &mut history,
            EpochStats {
                epoch,
                loss: epoch_loss,
                loss_ssh: epoch_c.ssh,
                loss_grad: epoch_c.grad,
                loss_lap: epoch_c.lap,
                lr: last_lr,
                val_rmse,
            },
        )?;
        if val_rmse < history.best_val_rmse {
            history.best_val_rmse = val_rmse;
            history.best_epoch = epoch;
            best_snapshot = model.snapshot();
        }
    }

    model.restore(&best_snapshot);
    Ok(history)
}
