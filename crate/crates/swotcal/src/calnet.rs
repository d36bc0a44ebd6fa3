//! The calibration network.
//!
//! Inputs are the uncalibrated swath observation and the nadir-based
//! gridded product interpolated on the swath. Both are decomposed into
//! along-track scale bands and stacked as channels, normalized, then
//! processed by residual convolutional blocks whose convolutions never mix
//! the two swath sides; a swath-mixer layer after each block is the only
//! cross-side pathway. The final convolution produces a residual field
//! that is added to the gridded product, so a zero-initialized exit layer
//! reproduces the gridded baseline exactly.
//!
//! Band mixing across channels is pointwise, so the entry and exit linear
//! convolutions use 1x1 kernels; spatial context enters through the block
//! convolutions (`kernel`, default 3x3) and through the scale bands
//! themselves, which already carry long-range along-track structure.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BnMode, BnState, NodeId, ParamId, ParamSet, Tape, Tensor4};
use crate::error::{Result, SwotError};
use crate::rng::Rng;
use crate::scale_space::{decompose, default_scales, ScaleList};
use crate::swath::{SwathField, SwathGrid};

/// Ablation switches mirroring the method's component analysis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    pub no_mix: bool,
    pub no_scale_decomp: bool,
    pub no_skip: bool,
    pub no_gridded: bool,
    pub linear_only: bool,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub n_blocks: usize,
    pub n_channels: usize,
    /// Block convolution kernel (height, width); entry/exit are pointwise.
    pub kernel: (usize, usize),
    /// Scale decomposition: n_bands evenly spaced by delta_km.
    pub scale_bands: usize,
    pub scale_delta_km: f64,
    #[serde(default)]
    pub ablations: Ablations,
    /// Share split-convolution weights between the two swath sides.
    #[serde(default = "default_true")]
    pub shared_side_weights: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            n_blocks: 3,
            n_channels: 128,
            kernel: (3, 3),
            scale_bands: 20,
            scale_delta_km: 8.0,
            ablations: Ablations::default(),
            shared_side_weights: true,
        }
    }
}

impl ArchConfig {
    /// Parse a "CxB" size string, e.g. "128x3" or "32x1".
    pub fn parse_size(s: &str) -> Result<(usize, usize)> {
        let parts: Vec<&str> = s.split('x').collect();
        if parts.len() != 2 {
            return Err(SwotError::Config(format!(
                "architecture size '{s}' must look like '<channels>x<blocks>', e.g. 128x3"
            )));
        }
        let channels: usize = parts[0]
            .parse()
            .map_err(|_| SwotError::Config(format!("bad channel count in '{s}'")))?;
        let blocks: usize = parts[1]
            .parse()
            .map_err(|_| SwotError::Config(format!("bad block count in '{s}'")))?;
        if channels == 0 {
            return Err(SwotError::Config("channel count must be at least 1".into()));
        }
        Ok((channels, blocks))
    }

    pub fn scales(&self) -> Result<ScaleList> {
        default_scales(self.scale_bands, self.scale_delta_km)
    }

    /// Input channel count after the ablation switches.
    pub fn input_channels(&self) -> usize {
        let per_input = if self.ablations.no_scale_decomp { 1 } else { self.scale_bands + 1 };
        let n_inputs = if self.ablations.no_gridded { 1 } else { 2 };
        per_input * n_inputs
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 {
            return Err(SwotError::Config("n_channels must be at least 1".into()));
        }
        if self.kernel.0 % 2 == 0 || self.kernel.1 % 2 == 0 {
            return Err(SwotError::Config("block kernel dims must be odd".into()));
        }
        if self.scale_bands == 0 || self.scale_delta_km <= 0.0 {
            return Err(SwotError::Config("scale decomposition must have >= 1 positive band".into()));
        }
        Ok(())
    }
}

struct BlockIds {
    conv_w: Vec<ParamId>, // one entry when side weights are shared, else two
    conv_b: Vec<ParamId>,
    mix_w: Option<ParamId>,
    mix_b: Option<ParamId>,
}

/// The calibration model: named parameters, batch-norm state and the grid
/// it was built for.
pub struct CalCNN {
    cfg: ArchConfig,
    grid: Arc<SwathGrid>,
    pub params: ParamSet,
    pub bn_state: BnState,
    bn_gamma: ParamId,
    bn_beta: ParamId,
    entry_w: ParamId,
    entry_b: ParamId,
    blocks: Vec<BlockIds>,
    exit_w: ParamId,
    exit_b: ParamId,
}

/// Build a CalCNN with deterministic seeded initialization. The exit
/// convolution starts at zero so the untrained model reproduces the
/// gridded product; mixers start near the identity.
pub fn build_model(cfg: &ArchConfig, grid: &Arc<SwathGrid>, seed: u64) -> Result<CalCNN> {
    cfg.validate()?;
    if grid.side_split() * 2 != grid.n_across() {
        return Err(SwotError::InvalidArg("swath sides must have equal widths".into()));
    }
    let c_in = cfg.input_channels();
    let width = grid.n_across();
    let ch = cfg.n_channels;
    let n_blocks = if cfg.ablations.linear_only { 0 } else { cfg.n_blocks };
    let mut rng = Rng::child(seed, 0x63616c6e);
    let mut params = ParamSet::new();

    let bn_gamma = params.add("input_bn.gamma", vec![c_in], vec![1.0; c_in]);
    let bn_beta = params.add("input_bn.beta", vec![c_in], vec![0.0; c_in]);

    let conv_init = |params: &mut ParamSet, rng: &mut Rng, name: &str, co: usize, ci: usize, kh: usize, kw: usize| {
        let fan_in = ci * kh * kw;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data: Vec<f64> =
            (0..co * ci * kh * kw).map(|_| (rng.uniform() * 2.0 - 1.0) * bound).collect();
        let w = params.add(&format!("{name}.weight"), vec![co, ci, kh, kw], data);
        let b = params.add(&format!("{name}.bias"), vec![co], vec![0.0; co]);
        (w, b)
    };

    let (entry_w, entry_b) = conv_init(&mut params, &mut rng, "entry", ch, c_in, 1, 1);

    let mut blocks = Vec::with_capacity(n_blocks);
    for bi in 0..n_blocks {
        let sides: &[&str] = if cfg.shared_side_weights { &[""] } else { &[".left", ".right"] };
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for side in sides {
            let (w, b) = conv_init(
                &mut params,
                &mut rng,
                &format!("block{bi}.conv{side}"),
                ch,
                ch,
                cfg.kernel.0,
                cfg.kernel.1,
            );
            conv_w.push(w);
            conv_b.push(b);
        }
        let (mix_w, mix_b) = if cfg.ablations.no_mix {
            (None, None)
        } else {
            let mut data = vec![0.0; width * width];
            for j in 0..width {
                data[j * width + j] = 1.0;
            }
            for v in data.iter_mut() {
                *v += 0.01 * rng.normal();
            }
            let w = params.add(&format!("block{bi}.mix.weight"), vec![width, width], data);
            let b = params.add(&format!("block{bi}.mix.bias"), vec![width], vec![0.0; width]);
            (Some(w), Some(b))
        };
        blocks.push(BlockIds { conv_w, conv_b, mix_w, mix_b });
    }

    let exit_w = params.add("exit.weight", vec![1, ch, 1, 1], vec![0.0; ch]);
    let exit_b = params.add("exit.bias", vec![1], vec![0.0]);

    Ok(CalCNN {
        cfg: cfg.clone(),
        grid: grid.clone(),
        params,
        bn_state: BnState::new(c_in),
        bn_gamma,
        bn_beta,
        entry_w,
        entry_b,
        blocks,
        exit_w,
        exit_b,
    })
}

impl CalCNN {
    pub fn cfg(&self) -> &ArchConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Arc<SwathGrid> {
        &self.grid
    }

    pub fn n_parameters(&self) -> usize {
        self.params.n_values()
    }

    /// Stack one sample's inputs as channels, honoring the ablation
    /// switches: scale bands of the observation, then (unless no_gridded)
    /// scale bands of the gridded product.
    pub fn assemble_input(&self, obs: &SwathField, gridded: &SwathField) -> Result<Vec<f64>> {
        if obs.grid() != &self.grid || gridded.grid() != &self.grid {
            return Err(SwotError::Data("sample grid does not match the model grid".into()));
        }
        let n = self.grid.n_pixels();
        let mut out = Vec::with_capacity(self.cfg.input_channels() * n);
        if self.cfg.ablations.no_scale_decomp {
            out.extend_from_slice(obs.values());
            if !self.cfg.ablations.no_gridded {
                out.extend_from_slice(gridded.values());
            }
        } else {
            let scales = self.cfg.scales()?;
            let stack = decompose(obs, &scales)?;
            out.extend_from_slice(stack.bands());
            if !self.cfg.ablations.no_gridded {
                let stack = decompose(gridded, &scales)?;
                out.extend_from_slice(stack.bands());
            }
        }
        Ok(out)
    }

    /// Forward pass over a batch of pre-assembled inputs. `gridded` is the
    /// residual-head anchor, shape [B, 1, h, w]. Returns the tape and the
    /// prediction node.
    pub fn forward_batch(
        &mut self,
        inputs: Tensor4,
        gridded: Tensor4,
        mode: BnMode,
    ) -> Result<(Tape, NodeId)> {
        let (h, w) = (self.grid.n_along(), self.grid.n_across());
        if inputs.h != h || inputs.w != w || inputs.c != self.cfg.input_channels() {
            return Err(SwotError::Data(format!(
                "input tensor {:?} does not match model ({}, {}, {})",
                inputs.shape(),
                self.cfg.input_channels(),
                h,
                w
            )));
        }
        if gridded.shape() != (inputs.b, 1, h, w) {
            return Err(SwotError::Data("gridded anchor shape mismatch".into()));
        }
        let split = self.grid.side_split();
        let full = vec![(0usize, w)];
        let sides = [(0usize, split), (split, w)];

        let mut tape = Tape::new();
        let x = tape.leaf(inputs);
        let anchor = tape.leaf(gridded);

        let normed =
            tape.batchnorm(x, self.bn_gamma, self.bn_beta, &mut self.bn_state, mode, &self.params)?;
        // entry: pointwise, so side handling is immaterial
        let mut cur =
            tape.split_conv(normed, self.entry_w, self.entry_b, full.clone(), &self.params, true)?;

        for block in &self.blocks {
            let conv_out = if block.conv_w.len() == 1 {
                tape.split_conv(
                    cur,
                    block.conv_w[0],
                    block.conv_b[0],
                    sides.to_vec(),
                    &self.params,
                    true,
                )?
            } else {
                let left = tape.split_conv(
                    cur,
                    block.conv_w[0],
                    block.conv_b[0],
                    vec![sides[0]],
                    &self.params,
                    true,
                )?;
                let right = tape.split_conv(
                    cur,
                    block.conv_w[1],
                    block.conv_b[1],
                    vec![sides[1]],
                    &self.params,
                    true,
                )?;
                tape.add(left, right)?
            };
            let act = tape.relu(conv_out);
            let skipped = if self.cfg.ablations.no_skip { act } else { tape.add(cur, act)? };
            cur = match (block.mix_w, block.mix_b) {
                (Some(wid), Some(bid)) => tape.axis_linear(skipped, wid, bid, &self.params)?,
                _ => skipped,
            };
        }

        let residual =
            tape.split_conv(cur, self.exit_w, self.exit_b, full, &self.params, true)?;
        let pred = if self.cfg.ablations.no_gridded {
            residual
        } else {
            tape.add(residual, anchor)?
        };
        Ok((tape, pred))
    }

    /// Single-sample convenience: decompose, run, return the calibrated
    /// swath field.
    pub fn forward_fields(
        &mut self,
        obs: &SwathField,
        gridded: &SwathField,
        mode: BnMode,
    ) -> Result<SwathField> {
        let (h, w) = (self.grid.n_along(), self.grid.n_across());
        let input = self.assemble_input(obs, gridded)?;
        let inputs = Tensor4::from_vec(1, self.cfg.input_channels(), h, w, input);
        let anchor = Tensor4::from_vec(1, 1, h, w, gridded.values().to_vec());
        let (tape, pred) = self.forward_batch(inputs, anchor, mode)?;
        SwathField::new(self.grid.clone(), tape.value(pred).data().to_vec())
    }

    /// Closed-form parameter count for a config (the build must agree).
    pub fn expected_n_parameters(cfg: &ArchConfig, grid: &SwathGrid) -> usize {
        let c_in = cfg.input_channels();
        let ch = cfg.n_channels;
        let width = grid.n_across();
        let n_blocks = if cfg.ablations.linear_only { 0 } else { cfg.n_blocks };
        let mut total = 2 * c_in; // batchnorm affine
        total += ch * c_in + ch; // entry 1x1
        let sides = if cfg.shared_side_weights { 1 } else { 2 };
        let (kh, kw) = cfg.kernel;
        total += n_blocks * sides * (ch * ch * kh * kw + ch);
        if !cfg.ablations.no_mix {
            total += n_blocks * (width * width + width);
        }
        total += ch + 1; // exit 1x1
        total
    }

    /// Ordered (name, dims, values) state list: trainable parameters plus
    /// batch-norm running statistics. The serialization order is stable.
    pub fn state_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out: Vec<(String, Vec<usize>, Vec<f64>)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.shape.clone(), p.data.clone()))
            .collect();
        let c = self.bn_state.running_mean.len();
        out.push(("input_bn.running_mean".into(), vec![c], self.bn_state.running_mean.clone()));
        out.push(("input_bn.running_var".into(), vec![c], self.bn_state.running_var.clone()));
        out
    }

    /// Restore state written by `state_tensors`. Names and shapes must
    /// match the built architecture exactly.
    pub fn load_state(&mut self, tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        let expected = self.params.len() + 2;
        if tensors.len() != expected {
            return Err(SwotError::Data(format!(
                "model state has {} tensors, expected {expected}",
                tensors.len()
            )));
        }
        for (i, p) in self.params.iter_mut().enumerate() {
            let (name, shape, data) = &tensors[i];
            if name != &p.name || shape != &p.shape {
                return Err(SwotError::Data(format!(
                    "state tensor {i} is {name} {shape:?}, expected {} {:?}",
                    p.name, p.shape
                )));
            }
            p.data.copy_from_slice(data);
        }
        let (name, _, data) = &tensors[self.params.len()];
        if name != "input_bn.running_mean" || data.len() != self.bn_state.running_mean.len() {
            return Err(SwotError::Data("bad running_mean tensor".into()));
        }
        self.bn_state.running_mean.copy_from_slice(data);
        let (name, _, data) = &tensors[self.params.len() + 1];
        if name != "input_bn.running_var" || data.len() != self.bn_state.running_var.len() {
            return Err(SwotError::Data("bad running_var tensor".into()));
        }
        self.bn_state.running_var.copy_from_slice(data);
        Ok(())
    }

    /// Snapshot of all mutable state (for best-checkpoint tracking).
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.params.iter().map(|p| p.data.clone()).collect();
        out.push(self.bn_state.running_mean.clone());
        out.push(self.bn_state.running_var.clone());
        out
    }

    pub fn restore(&mut self, snap: &[Vec<f64>]) {
        let np = self.params.len();
        for (i, p) in self.params.iter_mut().enumerate() {
            p.data.copy_from_slice(&snap[i]);
        }
        self.bn_state.running_mean.copy_from_slice(&snap[np]);
        self.bn_state.running_var.copy_from_slice(&snap[np + 1]);
    }
}
