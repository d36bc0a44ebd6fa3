//! Eager reverse-mode tape over the layer set the calibration network
//! needs: split convolution, ReLU, batch normalization, across-track
//! linear maps, elementwise add, the swath differential stencils and
//! scalar MSE reductions.
//!
//! Ops execute immediately and record what backward needs. `backward`
//! visits the nodes once in exact reverse execution order, accumulating
//! cotangents additively at fan-out and parameter gradients into the
//! `ParamSet`.

use crate::error::{Result, SwotError};
use crate::swath;

use super::conv::{conv_backward_ranges, conv_forward_ranges, ConvDims};
use super::pool;
use super::tensor::Tensor4;

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Ordered collection of model parameters; names are unique.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "param shape mismatch");
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = vec![0.0; data.len()];
        self.params.push(Param { name: name.to_string(), shape, data, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn n_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer (not trained by the
/// optimizer, but part of the persisted model state).
#[derive(Debug, Clone)]
pub struct BnState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BnState {
    pub fn new(channels: usize) -> Self {
        BnState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

enum Op {
    Leaf,
    SplitConv {
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
        dims: ConvDims,
        ranges: Vec<(usize, usize)>,
        input_needs_grad: bool,
    },
    Relu {
        input: NodeId,
    },
    BatchNorm {
        input: NodeId,
        gamma: ParamId,
        beta: ParamId,
        // saved normalized activations and per-channel 1/std
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    AxisLinear {
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    GradAlong {
        input: NodeId,
        pixel_km: f64,
    },
    GradAcross {
        input: NodeId,
        split: usize,
        pixel_km: f64,
    },
    Laplacian {
        input: NodeId,
        split: usize,
        pixel_km: f64,
    },
    Mse {
        a: NodeId,
        b: NodeId,
    },
    WeightedSum {
        terms: Vec<(NodeId, f64)>,
    },
}

struct Node {
    value: Tensor4,
    op: Op,
}

/// Execution record of one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    backward_visits: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        for node in self.nodes.drain(..) {
            pool::release(node.value.into_data());
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_visits: 0 }
    }

    pub fn value(&self, id: NodeId) -> &Tensor4 {
        &self.nodes[id.0].value
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Operations visited by the last backward pass (diagnostics).
    pub fn backward_visits(&self) -> usize {
        self.backward_visits
    }

    fn push(&mut self, value: Tensor4, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaves are gradient sinks: cotangents aimed at them are dropped
    /// instead of allocated and accumulated.
    fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf)
    }

    /// Record an input tensor. Leaves never receive gradients.
    pub fn leaf(&mut self, value: Tensor4) -> NodeId {
        value.assert_finite("leaf");
        self.push(value, Op::Leaf)
    }

    /// Convolution applied independently per column range with shared
    /// weights. One range covering the full width is a plain conv2d; two
    /// ranges make the side-split convolution.
    pub fn split_conv(
        &mut self,
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
        ranges: Vec<(usize, usize)>,
        params: &ParamSet,
        input_needs_grad: bool,
    ) -> Result<NodeId> {
        let w = params.get(weight);
        let b = params.get(bias);
        if w.shape.len() != 4 {
            return Err(SwotError::InvalidArg("conv weight must be rank 4".into()));
        }
        let dims = ConvDims { co: w.shape[0], ci: w.shape[1], kh: w.shape[2], kw: w.shape[3] };
        if dims.kh % 2 == 0 || dims.kw % 2 == 0 {
            return Err(SwotError::InvalidArg("conv kernel dims must be odd".into()));
        }
        let x = self.value(input);
        if x.c != dims.ci {
            return Err(SwotError::InvalidArg(format!(
                "conv channel mismatch: input has {}, weight expects {}",
                x.c, dims.ci
            )));
        }
        if b.data.len() != dims.co {
            return Err(SwotError::InvalidArg("conv bias length mismatch".into()));
        }
        if ranges.iter().any(|&(lo, hi)| lo >= hi || hi > x.w) {
            return Err(SwotError::InvalidArg("invalid conv column ranges".into()));
        }
        // zero-fill is only needed when the ranges leave columns uncovered
        let mut sorted = ranges.clone();
        sorted.sort_unstable();
        let full_cover = sorted[0].0 == 0
            && sorted.last().unwrap().1 == x.w
            && sorted.windows(2).all(|p| p[0].1 == p[1].0);
        let buf = if full_cover {
            pool::acquire(x.b * dims.co * x.h * x.w)
        } else {
            pool::acquire_zeroed(x.b * dims.co * x.h * x.w)
        };
        let mut out = Tensor4::from_vec(x.b, dims.co, x.h, x.w, buf);
        conv_forward_ranges(x, &w.data, &b.data, &dims, &ranges, &mut out);
        out.assert_finite("split_conv");
        Ok(self.push(out, Op::SplitConv { input, weight, bias, dims, ranges, input_needs_grad }))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let mut data = pool::acquire(x.len());
        for (d, v) in data.iter_mut().zip(x.data()) {
            *d = v.max(0.0);
        }
        let out = Tensor4::from_vec(x.b, x.c, x.h, x.w, data);
        self.push(out, Op::Relu { input })
    }

    /// Batch normalization over (batch, height, width) per channel.
    /// Train mode uses batch statistics and updates `state`; eval mode
    /// normalizes with the running statistics.
    pub fn batchnorm(
        &mut self,
        input: NodeId,
        gamma: ParamId,
        beta: ParamId,
        state: &mut BnState,
        mode: BnMode,
        params: &ParamSet,
    ) -> Result<NodeId> {
        let (b, ch, hh, ww) = self.value(input).shape();
        if params.get(gamma).data.len() != ch || params.get(beta).data.len() != ch {
            return Err(SwotError::InvalidArg("batchnorm affine shape mismatch".into()));
        }
        if state.running_mean.len() != ch {
            return Err(SwotError::InvalidArg("batchnorm state channel mismatch".into()));
        }
        let n = b * hh * ww;
        if matches!(mode, BnMode::Train) && n < 2 {
            return Err(SwotError::InvalidArg(
                "batchnorm train mode needs at least 2 elements per channel".into(),
            ));
        }
        let plane = hh * ww;
        let mut out_data = pool::acquire(b * ch * plane);
        let mut xhat = pool::acquire(b * ch * plane);
        let mut inv_std = vec![0.0; ch];
        {
            let x = &self.nodes[input.0].value;
            let g = &params.get(gamma).data;
            let bt = &params.get(beta).data;
            for c in 0..ch {
                let (mean, var) = match mode {
                    BnMode::Train => {
                        // four interleaved accumulators keep the FP chains short
                        let mut s = [0.0f64; 4];
                        let mut q = [0.0f64; 4];
                        for bi in 0..b {
                            let src = x.plane(bi, c);
                            let mut it = src.chunks_exact(4);
                            for chunk in &mut it {
                                for lane in 0..4 {
                                    s[lane] += chunk[lane];
                                    q[lane] += chunk[lane] * chunk[lane];
                                }
                            }
                            for v in it.remainder() {
                                s[0] += v;
                                q[0] += v * v;
                            }
                        }
                        let sum = (s[0] + s[1]) + (s[2] + s[3]);
                        let sq = (q[0] + q[1]) + (q[2] + q[3]);
                        let mean = sum / n as f64;
                        let var = (sq / n as f64 - mean * mean).max(0.0);
                        state.running_mean[c] =
                            (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean;
                        state.running_var[c] =
                            (1.0 - state.momentum) * state.running_var[c] + state.momentum * var;
                        (mean, var)
                    }
                    BnMode::Eval => (state.running_mean[c], state.running_var[c]),
                };
                let istd = 1.0 / (var + state.eps).sqrt();
                inv_std[c] = istd;
                let (gc, bc) = (g[c], bt[c]);
                for bi in 0..b {
                    let src = x.plane(bi, c);
                    let off = (bi * ch + c) * plane;
                    let xh = &mut xhat[off..off + plane];
                    let ot = &mut out_data[off..off + plane];
                    for i in 0..plane {
                        let z = (src[i] - mean) * istd;
                        xh[i] = z;
                        ot[i] = gc * z + bc;
                    }
                }
            }
        }
        let out = Tensor4::from_vec(b, ch, hh, ww, out_data);
        out.assert_finite("batchnorm");
        Ok(self.push(out, Op::BatchNorm { input, gamma, beta, xhat, inv_std }))
    }

    /// Across-track linear map shared over batch, channels and rows:
    /// out_row = W * in_row + bias. The only cross-side pathway.
    pub fn axis_linear(
        &mut self,
        input: NodeId,
        weight: ParamId,
        bias: ParamId,
        params: &ParamSet,
    ) -> Result<NodeId> {
        let x = self.value(input);
        let w = params.get(weight);
        if w.shape.len() != 2 || w.shape[1] != x.w {
            return Err(SwotError::InvalidArg(format!(
                "axis_linear width mismatch: weight {:?} vs input width {}",
                w.shape, x.w
            )));
        }
        let w_out = w.shape[0];
        if params.get(bias).data.len() != w_out {
            return Err(SwotError::InvalidArg("axis_linear bias length mismatch".into()));
        }
        let rows = x.b * x.c * x.h;
        let mut out =
            Tensor4::from_vec(x.b, x.c, x.h, w_out, pool::acquire(x.b * x.c * x.h * w_out));
        unsafe {
            matrixmultiply::dgemm(
                rows, x.w, w_out, 1.0,
                x.data().as_ptr(), x.w as isize, 1,
                w.data.as_ptr(), 1, x.w as isize,
                0.0, out.data_mut().as_mut_ptr(), w_out as isize, 1,
            );
        }
        let b = &params.get(bias).data;
        for r in 0..rows {
            let row = &mut out.data_mut()[r * w_out..(r + 1) * w_out];
            for (v, bv) in row.iter_mut().zip(b.iter()) {
                *v += bv;
            }
        }
        out.assert_finite("axis_linear");
        Ok(self.push(out, Op::AxisLinear { input, weight, bias }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(SwotError::InvalidArg("add shape mismatch".into()));
        }
        let x = self.value(a);
        let mut data = pool::acquire(x.len());
        let (sb, sa) = (self.nodes[b.0].value.data(), x.data());
        for i in 0..data.len() {
            data[i] = sa[i] + sb[i];
        }
        let out = Tensor4::from_vec(x.b, x.c, x.h, x.w, data);
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Along-track derivative of every (batch, channel) plane, m/km.
    pub fn grad_along(&mut self, input: NodeId, pixel_km: f64) -> NodeId {
        let x = self.value(input);
        let mut out = Tensor4::from_vec(x.b, x.c, x.h, x.w, pool::acquire(x.len()));
        for bi in 0..x.b {
            for c in 0..x.c {
                let off_src = x.plane(bi, c);
                swath::d_along_plane(off_src, out.plane_mut(bi, c), x.h, x.w, pixel_km);
            }
        }
        self.push(out, Op::GradAlong { input, pixel_km })
    }

    pub fn grad_across(&mut self, input: NodeId, split: usize, pixel_km: f64) -> NodeId {
        let x = self.value(input);
        let mut out = Tensor4::from_vec(x.b, x.c, x.h, x.w, pool::acquire(x.len()));
        for bi in 0..x.b {
            for c in 0..x.c {
                swath::d_across_plane(x.plane(bi, c), out.plane_mut(bi, c), x.h, x.w, split, pixel_km);
            }
        }
        self.push(out, Op::GradAcross { input, split, pixel_km })
    }

    pub fn laplacian(&mut self, input: NodeId, split: usize, pixel_km: f64) -> NodeId {
        let x = self.value(input);
        let mut out = Tensor4::from_vec(x.b, x.c, x.h, x.w, pool::acquire(x.len()));
        for bi in 0..x.b {
            for c in 0..x.c {
                swath::laplacian_plane(x.plane(bi, c), out.plane_mut(bi, c), x.h, x.w, split, pixel_km);
            }
        }
        self.push(out, Op::Laplacian { input, split, pixel_km })
    }

    /// Mean squared difference over all elements; scalar output.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(SwotError::InvalidArg("mse shape mismatch".into()));
        }
        let va = self.value(a).data();
        let vb = self.nodes[b.0].value.data();
        let n = va.len() as f64;
        let s: f64 = va.iter().zip(vb).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(self.push(Tensor4::scalar(s / n), Op::Mse { a, b }))
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: Vec<(NodeId, f64)>) -> Result<NodeId> {
        let mut acc = 0.0;
        for &(id, w) in &terms {
            let v = self.value(id);
            if v.len() != 1 {
                return Err(SwotError::InvalidArg("weighted_sum needs scalar terms".into()));
            }
            acc += w * v.item();
        }
        Ok(self.push(Tensor4::scalar(acc), Op::WeightedSum { terms }))
    }

    /// Reverse sweep from a scalar loss; parameter gradients accumulate
    /// into `params.grad`. Each recorded operation is visited exactly once.
    pub fn backward(&mut self, loss: NodeId, params: &mut ParamSet) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(SwotError::InvalidArg(
                "backward requested for a node that was never recorded".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(SwotError::InvalidArg("backward needs a scalar loss node".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        self.backward_visits = 0;

        for idx in (0..self.nodes.len()).rev() {
            let Some(gout_taken) = grads[idx].take() else { continue };
            self.backward_visits += 1;
            let mut gout_opt = Some(gout_taken);
            // split borrows: the node being visited vs upstream grad slots
            let (node_value_shape, op) = {
                let node = &self.nodes[idx];
                (node.value.shape(), &node.op)
            };
            match op {
                Op::Leaf => {}
                Op::SplitConv { input, weight, bias, dims, ranges, input_needs_grad } => {
                    let (input, weight, bias, dims, ranges, input_needs_grad) =
                        (*input, *weight, *bias, *dims, ranges.clone(), *input_needs_grad);
                    let (b, co, h, w) = node_value_shape;
                    let gout_t = Tensor4::from_vec(b, co, h, w, gout_opt.take().unwrap());
                    let x_shape = self.nodes[input.0].value.shape();
                    // detach the weight gradient so the weight data can be
                    // borrowed immutably for the input-gradient GEMMs
                    let mut wgrad = std::mem::take(&mut params.get_mut(weight).grad);
                    let mut gb_tmp = vec![0.0; dims.co];
                    let mut gin_opt = if input_needs_grad && !self.is_leaf(input) {
                        let slot = ensure_grad(&mut grads, input.0, x_shape);
                        Some(Tensor4::from_vec(
                            x_shape.0,
                            x_shape.1,
                            x_shape.2,
                            x_shape.3,
                            std::mem::take(slot),
                        ))
                    } else {
                        None
                    };
                    conv_backward_ranges(
                        Some(&self.nodes[input.0].value),
                        &gout_t,
                        &params.get(weight).data,
                        &dims,
                        &ranges,
                        gin_opt.as_mut(),
                        Some((&mut wgrad, &mut gb_tmp)),
                    );
                    params.get_mut(weight).grad = wgrad;
                    let bp = params.get_mut(bias);
                    for (g, v) in bp.grad.iter_mut().zip(gb_tmp) {
                        *g += v;
                    }
                    if let Some(gin) = gin_opt {
                        *grads[input.0].as_mut().unwrap() = gin.into_data();
                    }
                    pool::release(gout_t.into_data());
                }
                Op::Relu { input } => {
                    let input = *input;
                    let gout = gout_opt.as_ref().unwrap();
                    if self.is_leaf(input) {
                        continue;
                    }
                    let x_shape = self.nodes[input.0].value.shape();
                    let slot = ensure_grad(&mut grads, input.0, x_shape);
                    let x = self.nodes[input.0].value.data();
                    for i in 0..gout.len() {
                        if x[i] > 0.0 {
                            slot[i] += gout[i];
                        }
                    }
                }
                Op::BatchNorm { input, gamma, beta, xhat, inv_std } => {
                    let input = *input;
                    let gout = gout_opt.as_ref().unwrap();
                    let (gamma, beta) = (*gamma, *beta);
                    let (b, ch, h, w) = node_value_shape;
                    let plane = h * w;
                    let n = (b * plane) as f64;
                    let g = params.get(gamma).data.clone();
                    // one reduction pass serves the affine gradients and the
                    // normalization sums: sum(dxhat) = gamma * sum(gout) and
                    // sum(dxhat * xhat) = gamma * sum(gout * xhat)
                    let mut acc_g = vec![0.0; ch];
                    let mut acc_b = vec![0.0; ch];
                    for c in 0..ch {
                        let (mut sg, mut sb) = (0.0, 0.0);
                        for bi in 0..b {
                            let off = (bi * ch + c) * plane;
                            for i in 0..plane {
                                sg += gout[off + i] * xhat[off + i];
                                sb += gout[off + i];
                            }
                        }
                        acc_g[c] = sg;
                        acc_b[c] = sb;
                    }
                    {
                        let gp = params.get_mut(gamma);
                        for c in 0..ch {
                            gp.grad[c] += acc_g[c];
                        }
                        let bp = params.get_mut(beta);
                        for c in 0..ch {
                            bp.grad[c] += acc_b[c];
                        }
                    }
                    // input gradient (train-mode batch statistics adjoint)
                    if !self.is_leaf(input) {
                        let x_shape = self.nodes[input.0].value.shape();
                        let slot = ensure_grad(&mut grads, input.0, x_shape);
                        for c in 0..ch {
                            let istd = inv_std[c];
                            let gc = g[c];
                            let sum_dxhat = gc * acc_b[c];
                            let sum_dxhat_xhat = gc * acc_g[c];
                            for bi in 0..b {
                                let off = (bi * ch + c) * plane;
                                for i in 0..plane {
                                    let dxh = gout[off + i] * gc;
                                    slot[off + i] += istd
                                        * (dxh
                                            - (sum_dxhat + xhat[off + i] * sum_dxhat_xhat) / n);
                                }
                            }
                        }
                    }
                }
                Op::AxisLinear { input, weight, bias } => {
                    let (input, weight, bias) = (*input, *weight, *bias);
                    let gout = gout_opt.as_ref().unwrap();
                    let (b, c, h, w_out) = node_value_shape;
                    let rows = b * c * h;
                    let x_shape = self.nodes[input.0].value.shape();
                    let w_in = x_shape.3;
                    {
                        // dW += gout^T x, db += column sums of gout
                        let x = self.nodes[input.0].value.data().as_ptr();
                        let wp = params.get_mut(weight);
                        unsafe {
                            matrixmultiply::dgemm(
                                w_out, rows, w_in, 1.0,
                                gout.as_ptr(), 1, w_out as isize,
                                x, w_in as isize, 1,
                                1.0, wp.grad.as_mut_ptr(), w_in as isize, 1,
                            );
                        }
                        let bp = params.get_mut(bias);
                        for r in 0..rows {
                            for j in 0..w_out {
                                bp.grad[j] += gout[r * w_out + j];
                            }
                        }
                    }
                    if !self.is_leaf(input) {
                        let slot = ensure_grad(&mut grads, input.0, x_shape);
                        unsafe {
                            matrixmultiply::dgemm(
                                rows, w_out, w_in, 1.0,
                                gout.as_ptr(), w_out as isize, 1,
                                params.get(weight).data.as_ptr(), w_in as isize, 1,
                                1.0, slot.as_mut_ptr(), w_in as isize, 1,
                            );
                        }
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    let gout = gout_opt.as_ref().unwrap();
                    if !self.is_leaf(a) {
                        let sa = self.nodes[a.0].value.shape();
                        let slot = ensure_grad(&mut grads, a.0, sa);
                        for i in 0..gout.len() {
                            slot[i] += gout[i];
                        }
                    }
                    if !self.is_leaf(b) {
                        let sb = self.nodes[b.0].value.shape();
                        let slot = ensure_grad(&mut grads, b.0, sb);
                        for i in 0..gout.len() {
                            slot[i] += gout[i];
                        }
                    }
                }
                Op::GradAlong { input, pixel_km } => {
                    let (input, pixel_km) = (*input, *pixel_km);
                    let gout = gout_opt.as_ref().unwrap();
                    if self.is_leaf(input) {
                        continue;
                    }
                    let (b, c, h, w) = node_value_shape;
                    let x_shape = self.nodes[input.0].value.shape();
                    let slot = ensure_grad(&mut grads, input.0, x_shape);
                    let plane = h * w;
                    for p in 0..b * c {
                        swath::d_along_adjoint_plane(
                            &gout[p * plane..(p + 1) * plane],
                            &mut slot[p * plane..(p + 1) * plane],
                            h,
                            w,
                            pixel_km,
                        );
                    }
                }
                Op::GradAcross { input, split, pixel_km } => {
                    let (input, split, pixel_km) = (*input, *split, *pixel_km);
                    let gout = gout_opt.as_ref().unwrap();
                    if self.is_leaf(input) {
                        continue;
                    }
                    let (b, c, h, w) = node_value_shape;
                    let x_shape = self.nodes[input.0].value.shape();
                    let slot = ensure_grad(&mut grads, input.0, x_shape);
                    let plane = h * w;
                    for p in 0..b * c {
                        swath::d_across_adjoint_plane(
                            &gout[p * plane..(p + 1) * plane],
                            &mut slot[p * plane..(p + 1) * plane],
                            h,
                            w,
                            split,
                            pixel_km,
                        );
                    }
                }
                Op::Laplacian { input, split, pixel_km } => {
                    let (input, split, pixel_km) = (*input, *split, *pixel_km);
                    let gout = gout_opt.as_ref().unwrap();
                    if self.is_leaf(input) {
                        continue;
                    }
                    let (b, c, h, w) = node_value_shape;
                    let x_shape = self.nodes[input.0].value.shape();
                    let slot = ensure_grad(&mut grads, input.0, x_shape);
                    let plane = h * w;
                    for p in 0..b * c {
                        swath::laplacian_adjoint_plane(
                            &gout[p * plane..(p + 1) * plane],
                            &mut slot[p * plane..(p + 1) * plane],
                            h,
                            w,
                            split,
                            pixel_km,
                        );
                    }
                }
                Op::Mse { a, b } => {
                    let (a, b) = (*a, *b);
                    let gout = gout_opt.as_ref().unwrap();
                    let g0 = gout[0];
                    let n = self.nodes[a.0].value.len() as f64;
                    if !self.is_leaf(a) {
                        let sa = self.nodes[a.0].value.shape();
                        let slot = ensure_grad(&mut grads, a.0, sa);
                        let va = self.nodes[a.0].value.data();
                        let vb = self.nodes[b.0].value.data();
                        for i in 0..va.len() {
                            slot[i] += g0 * 2.0 * (va[i] - vb[i]) / n;
                        }
                    }
                    if !self.is_leaf(b) {
                        let sb = self.nodes[b.0].value.shape();
                        let slot = ensure_grad(&mut grads, b.0, sb);
                        let va = self.nodes[a.0].value.data();
                        let vb = self.nodes[b.0].value.data();
                        for i in 0..va.len() {
                            slot[i] -= g0 * 2.0 * (va[i] - vb[i]) / n;
                        }
                    }
                }
                Op::WeightedSum { terms } => {
                    let terms = terms.clone();
                    let gout = gout_opt.as_ref().unwrap();
                    let g0 = gout[0];
                    for (id, w) in terms {
                        if self.is_leaf(id) {
                            continue;
                        }
                        let s = self.nodes[id.0].value.shape();
                        let slot = ensure_grad(&mut grads, id.0, s);
                        slot[0] += g0 * w;
                    }
                }
            }
            if let Some(v) = gout_opt.take() {
                pool::release(v);
            }
        }
        Ok(())
    }
}

fn ensure_grad<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    idx: usize,
    shape: (usize, usize, usize, usize),
) -> &'a mut Vec<f64> {
    let n = shape.0 * shape.1 * shape.2 * shape.3;
    grads[idx].get_or_insert_with(|| pool::acquire_zeroed(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{max_rel_error, numeric_gradient};
    use crate::autodiff::tensor::Tensor4;
    use crate::rng::Rng;

    fn random_tensor(b: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
        let mut rng = Rng::new(seed);
        let mut data = vec![0.0; b * c * h * w];
        rng.fill_normal(&mut data);
        Tensor4::from_vec(b, c, h, w, data)
    }

    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-6;

    #[test]
    fn relu_forward_trivia() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::from_vec(1, 1, 1, 4, vec![-2.0, -0.5, 0.5, 3.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.5, 3.0]);
    }

    #[test]
    fn relu_gradcheck_away_from_zero() {
        let mut x = random_tensor(1, 2, 3, 4, 1);
        // keep |x| > 1e-3 so the kink is never straddled
        for v in x.data_mut() {
            if v.abs() < 1e-3 {
                *v += 0.1;
            }
        }
        let run = |vals: &[f64]| -> f64 {
            let mut params = ParamSet::new();
            let mut tape = Tape::new();
            let xid = tape.leaf(Tensor4::from_vec(1, 2, 3, 4, vals.to_vec()));
            let y = tape.relu(xid);
            let z = tape.leaf(Tensor4::zeros(1, 2, 3, 4));
            let l = tape.mse(y, z).unwrap();
            let _ = &mut params;
            tape.value(l).item()
        };
        // analytic gradient: d mean(relu(x)^2) / dx
        let analytic: Vec<f64> = x
            .data()
            .iter()
            .map(|v| if *v > 0.0 { 2.0 * v / x.len() as f64 } else { 0.0 })
            .collect();
        let numeric = numeric_gradient(x.data_mut(), EPS, |vals| run(vals));
        assert!(max_rel_error(&analytic, &numeric) <= TOL);
    }

    fn conv_setup() -> (Tensor4, Vec<usize>, Vec<f64>, Vec<f64>, Vec<(usize, usize)>) {
        let x = random_tensor(2, 2, 4, 6, 10);
        let wshape = vec![3, 2, 3, 3];
        let mut rng = Rng::new(11);
        let mut w = vec![0.0; 3 * 2 * 3 * 3];
        rng.fill_normal(&mut w);
        for v in w.iter_mut() {
            *v *= 0.3;
        }
        let mut bias = vec![0.0; 3];
        rng.fill_normal(&mut bias);
        (x, wshape, w, bias, vec![(0, 3), (3, 6)])
    }

    fn conv_loss(x: &Tensor4, wshape: &[usize], w: &[f64], bias: &[f64], ranges: &[(usize, usize)]) -> f64 {
        let mut params = ParamSet::new();
        let wid = params.add("w", wshape.to_vec(), w.to_vec());
        let bid = params.add("b", vec![bias.len()], bias.to_vec());
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let y = tape.split_conv(xid, wid, bid, ranges.to_vec(), &params, true).unwrap();
        let z = tape.leaf(Tensor4::zeros(x.b, 3, x.h, x.w));
        let l = tape.mse(y, z).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn conv_gradcheck_weight_bias_input() {
        let (x, wshape, w, bias, ranges) = conv_setup();
        // analytic grads
        let mut params = ParamSet::new();
        let wid = params.add("w", wshape.clone(), w.clone());
        let bid = params.add("b", vec![3], bias.clone());
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let y = tape.split_conv(xid, wid, bid, ranges.clone(), &params, true).unwrap();
        let z = tape.leaf(Tensor4::zeros(x.b, 3, x.h, x.w));
        let l = tape.mse(y, z).unwrap();
        tape.backward(l, &mut params).unwrap();

        let mut wv = w.clone();
        let numeric = numeric_gradient(&mut wv, EPS, |vals| conv_loss(&x, &wshape, vals, &bias, &ranges));
        assert!(
            max_rel_error(&params.get(wid).grad, &numeric) <= TOL,
            "conv weight gradcheck failed"
        );

        let mut bv = bias.clone();
        let numeric = numeric_gradient(&mut bv, EPS, |vals| conv_loss(&x, &wshape, &w, vals, &ranges));
        assert!(max_rel_error(&params.get(bid).grad, &numeric) <= TOL, "conv bias gradcheck");

        // input gradient via a second backward carrying grads into leaf slot:
        // rebuild with x as the checked variable
        let mut xv = x.data().to_vec();
        let numeric = numeric_gradient(&mut xv, EPS, |vals| {
            let xt = Tensor4::from_vec(x.b, x.c, x.h, x.w, vals.to_vec());
            conv_loss(&xt, &wshape, &w, &bias, &ranges)
        });
        // pull the analytic input grad by re-running backward with a probe:
        // use the tape's grad wrt a fake "input param" is not recorded, so
        // check via the adjoint identity instead
        let mut gin = Tensor4::zeros(x.b, x.c, x.h, x.w);
        let dims = ConvDims { co: 3, ci: 2, kh: 3, kw: 3 };
        // grad of mse at y: 2 y / N
        let mut fwd = Tensor4::zeros(x.b, 3, x.h, x.w);
        crate::autodiff::conv::conv_forward_ranges(&x, &w, &bias, &dims, &ranges, &mut fwd);
        let n = fwd.len() as f64;
        let mut gy = fwd.clone();
        for v in gy.data_mut() {
            *v *= 2.0 / n;
        }
        crate::autodiff::conv::conv_grad_input_ranges(&gy, &w, &dims, &ranges, &mut gin);
        assert!(max_rel_error(gin.data(), &numeric) <= TOL, "conv input gradcheck");
    }

    #[test]
    fn conv_zero_grad_out_gives_zero_grads() {
        let (x, wshape, w, bias, ranges) = conv_setup();
        let mut params = ParamSet::new();
        let wid = params.add("w", wshape, w);
        let bid = params.add("b", vec![3], bias);
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let y = tape.split_conv(xid, wid, bid, ranges, &params, true).unwrap();
        // loss identical to itself => mse(y, y) = 0 with zero gradient
        let l = tape.mse(y, y).unwrap();
        tape.backward(l, &mut params).unwrap();
        assert!(params.get(wid).grad.iter().all(|g| *g == 0.0));
        assert!(params.get(bid).grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn conv_backward_linearity_in_cotangent() {
        // backward of 2*gout equals 2x backward of gout
        let (_x, _wshape, w, _bias, ranges) = conv_setup();
        let dims = ConvDims { co: 3, ci: 2, kh: 3, kw: 3 };
        let g = random_tensor(2, 3, 4, 6, 20);
        let mut g2 = g.clone();
        for v in g2.data_mut() {
            *v *= 2.0;
        }
        let mut gin1 = Tensor4::zeros(2, 2, 4, 6);
        let mut gin2 = Tensor4::zeros(2, 2, 4, 6);
        crate::autodiff::conv::conv_grad_input_ranges(&g, &w, &dims, &ranges, &mut gin1);
        crate::autodiff::conv::conv_grad_input_ranges(&g2, &w, &dims, &ranges, &mut gin2);
        for (a, b) in gin1.data().iter().zip(gin2.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_without_forward_rejected() {
        let mut tape = Tape::new();
        let mut params = ParamSet::new();
        assert!(tape.backward(NodeId(0), &mut params).is_err());
        let x = tape.leaf(Tensor4::zeros(1, 1, 2, 2));
        // non-scalar loss rejected
        assert!(tape.backward(x, &mut params).is_err());
    }

    #[test]
    fn batchnorm_train_statistics() {
        // large-variance input so var(out) ~ 1 to within eps effects
        let mut x = random_tensor(2, 3, 4, 8, 30);
        for v in x.data_mut() {
            *v *= 20.0;
        }
        let mut params = ParamSet::new();
        let g = params.add("g", vec![3], vec![1.0; 3]);
        let b = params.add("b", vec![3], vec![0.0; 3]);
        let mut state = BnState::new(3);
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let y = tape.batchnorm(xid, g, b, &mut state, BnMode::Train, &params).unwrap();
        let out = tape.value(y);
        let n = (2 * 4 * 8) as f64;
        for c in 0..3 {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for bi in 0..2 {
                for v in out.plane(bi, c) {
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / n;
            let var = sq / n - mean * mean;
            assert!(mean.abs() < 1e-8, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "channel {c} var {var}");
        }
    }

    #[test]
    fn batchnorm_inverse_normalization() {
        let mut x = random_tensor(2, 2, 4, 6, 31);
        // large spread keeps the eps term in 1/sqrt(var + eps) negligible
        for v in x.data_mut() {
            *v = *v * 40.0 + 3.0;
        }
        // compute per-channel population stats
        let n = (2 * 4 * 6) as f64;
        let mut gamma = vec![0.0; 2];
        let mut beta = vec![0.0; 2];
        for c in 0..2 {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for bi in 0..2 {
                for v in x.plane(bi, c) {
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / n;
            beta[c] = mean;
            gamma[c] = (sq / n - mean * mean).sqrt();
        }
        let mut params = ParamSet::new();
        let g = params.add("g", vec![2], gamma);
        let b = params.add("b", vec![2], beta);
        let mut state = BnState::new(2);
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let y = tape.batchnorm(xid, g, b, &mut state, BnMode::Train, &params).unwrap();
        for (got, want) in tape.value(y).data().iter().zip(x.data()) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    fn bn_loss(x: &Tensor4, gamma: &[f64], beta: &[f64], mode: BnMode) -> f64 {
        let mut params = ParamSet::new();
        let g = params.add("g", vec![gamma.len()], gamma.to_vec());
        let b = params.add("b", vec![beta.len()], beta.to_vec());
        let mut state = BnState::new(gamma.len());
        // seed distinctive running stats so eval mode is exercised
        for (i, v) in state.running_mean.iter_mut().enumerate() {
            *v = 0.3 * i as f64;
        }
        for (i, v) in state.running_var.iter_mut().enumerate() {
            *v = 1.0 + 0.2 * i as f64;
        }
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let y = tape.batchnorm(xid, g, b, &mut state, mode, &params).unwrap();
        let z = tape.leaf(Tensor4::zeros(x.b, x.c, x.h, x.w));
        let l = tape.mse(y, z).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn batchnorm_gradcheck_all_inputs() {
        let x = random_tensor(2, 2, 3, 4, 32);
        let gamma = vec![1.3, 0.7];
        let beta = vec![0.2, -0.4];
        for mode in [BnMode::Train, BnMode::Eval] {
            let mut params = ParamSet::new();
            let g = params.add("g", vec![2], gamma.clone());
            let b = params.add("b", vec![2], beta.clone());
            let mut state = BnState::new(2);
            for (i, v) in state.running_mean.iter_mut().enumerate() {
                *v = 0.3 * i as f64;
            }
            for (i, v) in state.running_var.iter_mut().enumerate() {
                *v = 1.0 + 0.2 * i as f64;
            }
            let mut tape = Tape::new();
            let xid = tape.leaf(x.clone());
            let y = tape.batchnorm(xid, g, b, &mut state, mode, &params).unwrap();
            let z = tape.leaf(Tensor4::zeros(2, 2, 3, 4));
            let l = tape.mse(y, z).unwrap();
            tape.backward(l, &mut params).unwrap();

            let mut gv = gamma.clone();
            let numeric = numeric_gradient(&mut gv, EPS, |vals| bn_loss(&x, vals, &beta, mode));
            assert!(max_rel_error(&params.get(g).grad, &numeric) <= TOL, "gamma {mode:?}");

            let mut bv = beta.clone();
            let numeric = numeric_gradient(&mut bv, EPS, |vals| bn_loss(&x, &gamma, vals, mode));
            assert!(max_rel_error(&params.get(b).grad, &numeric) <= TOL, "beta {mode:?}");
        }
        // input gradient, train mode (the nontrivial batch-statistics path)
        let mut xv = x.data().to_vec();
        let numeric = numeric_gradient(&mut xv, EPS, |vals| {
            let xt = Tensor4::from_vec(2, 2, 3, 4, vals.to_vec());
            bn_loss(&xt, &gamma, &beta, BnMode::Train)
        });
        // analytic input grad via adjoint identity against a probe is messy;
        // use the tape twice trick: treat x as data of an AxisLinear-free
        // path by backpropagating into a Leaf is unsupported, so verify
        // against the relu-style composite: d mse/d x via chain assembled
        // from a fresh tape with x wrapped in an identity conv.
        let mut params = ParamSet::new();
        let wid = params.add("w", vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]);
        let bid = params.add("cb", vec![2], vec![0.0; 2]);
        let g = params.add("g", vec![2], gamma.clone());
        let b = params.add("b", vec![2], beta.clone());
        let mut state = BnState::new(2);
        for (i, v) in state.running_mean.iter_mut().enumerate() {
            *v = 0.3 * i as f64;
        }
        for (i, v) in state.running_var.iter_mut().enumerate() {
            *v = 1.0 + 0.2 * i as f64;
        }
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let ident = tape.split_conv(xid, wid, bid, vec![(0, 4)], &params, true).unwrap();
        let y = tape.batchnorm(ident, g, b, &mut state, BnMode::Train, &params).unwrap();
        let z = tape.leaf(Tensor4::zeros(2, 2, 3, 4));
        let l = tape.mse(y, z).unwrap();
        tape.backward(l, &mut params).unwrap();
        // with identity weights, d loss / d w[c][c'] entries recover sums of
        // x-grads; instead compare the bias gradient of the identity conv,
        // which equals the channel-summed input gradient
        let gb = &params.get(bid).grad;
        let mut expect = vec![0.0; 2];
        for (i, gval) in numeric.iter().enumerate() {
            let c = (i / 12) % 2;
            expect[c] += gval;
        }
        for c in 0..2 {
            assert!(
                (gb[c] - expect[c]).abs() <= 1e-6 * expect[c].abs().max(1.0),
                "bn input grad via bias: {} vs {}",
                gb[c],
                expect[c]
            );
        }
    }

    #[test]
    fn batchnorm_rejects_single_element_train() {
        let mut params = ParamSet::new();
        let g = params.add("g", vec![1], vec![1.0]);
        let b = params.add("b", vec![1], vec![0.0]);
        let mut state = BnState::new(1);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::from_vec(1, 1, 1, 1, vec![2.0]));
        assert!(tape.batchnorm(x, g, b, &mut state, BnMode::Train, &params).is_err());
        assert!(tape.batchnorm(x, g, b, &mut state, BnMode::Eval, &params).is_ok());
    }

    #[test]
    fn axis_linear_identity_and_permutation() {
        let x = random_tensor(2, 3, 4, 5, 40);
        let mut params = ParamSet::new();
        let mut ident = vec![0.0; 25];
        for i in 0..5 {
            ident[i * 5 + i] = 1.0;
        }
        let w = params.add("w", vec![5, 5], ident);
        let b = params.add("b", vec![5], vec![0.0; 5]);
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let y = tape.axis_linear(xid, w, b, &params).unwrap();
        assert_eq!(tape.value(y).data(), x.data());

        // cyclic permutation matrix: out[j] = in[(j+1) % 5]
        let mut params = ParamSet::new();
        let mut perm = vec![0.0; 25];
        for j in 0..5 {
            perm[j * 5 + (j + 1) % 5] = 1.0;
        }
        let w = params.add("w", vec![5, 5], perm);
        let b = params.add("b", vec![5], vec![0.0; 5]);
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let y = tape.axis_linear(xid, w, b, &params).unwrap();
        let out = tape.value(y);
        for bi in 0..2 {
            for c in 0..3 {
                for r in 0..4 {
                    for j in 0..5 {
                        assert_eq!(
                            out.plane(bi, c)[r * 5 + j],
                            x.plane(bi, c)[r * 5 + (j + 1) % 5]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn axis_linear_matches_matmul_oracle_and_gradcheck() {
        let x = random_tensor(2, 2, 3, 4, 41);
        let mut rng = Rng::new(42);
        let mut wmat = vec![0.0; 16];
        rng.fill_normal(&mut wmat);
        let mut bias = vec![0.0; 4];
        rng.fill_normal(&mut bias);

        let mut params = ParamSet::new();
        let w = params.add("w", vec![4, 4], wmat.clone());
        let b = params.add("b", vec![4], bias.clone());
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let y = tape.axis_linear(xid, w, b, &params).unwrap();
        // oracle: per row, explicit dot products
        let out = tape.value(y);
        for bi in 0..2 {
            for c in 0..2 {
                for r in 0..3 {
                    for j in 0..4 {
                        let mut acc = bias[j];
                        for l in 0..4 {
                            acc += wmat[j * 4 + l] * x.plane(bi, c)[r * 4 + l];
                        }
                        let got = out.plane(bi, c)[r * 4 + j];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
        let z = tape.leaf(Tensor4::zeros(2, 2, 3, 4));
        let l = tape.mse(y, z).unwrap();
        tape.backward(l, &mut params).unwrap();
        let run = |wv: &[f64]| -> f64 {
            let mut params = ParamSet::new();
            let w = params.add("w", vec![4, 4], wv.to_vec());
            let b = params.add("b", vec![4], bias.clone());
            let mut tape = Tape::new();
            let xid = tape.leaf(x.clone());
            let y = tape.axis_linear(xid, w, b, &params).unwrap();
            let z = tape.leaf(Tensor4::zeros(2, 2, 3, 4));
            let l = tape.mse(y, z).unwrap();
            tape.value(l).item()
        };
        let mut wv = wmat.clone();
        let numeric = numeric_gradient(&mut wv, EPS, run);
        assert!(max_rel_error(&params.get(w).grad, &numeric) <= TOL);
    }

    #[test]
    fn stencil_ops_gradcheck() {
        // linear ops: central differences are exact to round-off
        let x = random_tensor(1, 2, 5, 6, 50);
        let split = 3usize;
        let d = 2.0;
        for which in 0..3 {
            let run = |vals: &[f64]| -> f64 {
                let xt = Tensor4::from_vec(1, 2, 5, 6, vals.to_vec());
                let mut tape = Tape::new();
                let xid = tape.leaf(xt);
                let y = match which {
                    0 => tape.grad_along(xid, d),
                    1 => tape.grad_across(xid, split, d),
                    _ => tape.laplacian(xid, split, d),
                };
                let z = tape.leaf(Tensor4::zeros(1, 2, 5, 6));
                let l = tape.mse(y, z).unwrap();
                tape.value(l).item()
            };
            // analytic via identity-conv bias trick is overkill here; use
            // the adjoint directly through a full tape with a probe param
            let mut params = ParamSet::new();
            let wid = params.add("w", vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]);
            let bid = params.add("b", vec![2], vec![0.0; 2]);
            let mut tape = Tape::new();
            let xid = tape.leaf(x.clone());
            let ident = tape.split_conv(xid, wid, bid, vec![(0, 6)], &params, true).unwrap();
            let y = match which {
                0 => tape.grad_along(ident, d),
                1 => tape.grad_across(ident, split, d),
                _ => tape.laplacian(ident, split, d),
            };
            let z = tape.leaf(Tensor4::zeros(1, 2, 5, 6));
            let l = tape.mse(y, z).unwrap();
            tape.backward(l, &mut params).unwrap();
            let gb = params.get(bid).grad.clone();
            let mut xv = x.data().to_vec();
            let numeric = numeric_gradient(&mut xv, EPS, run);
            let mut expect = vec![0.0; 2];
            for (i, g) in numeric.iter().enumerate() {
                expect[i / 30] += g;
            }
            for c in 0..2 {
                assert!(
                    (gb[c] - expect[c]).abs() <= 1e-6 * expect[c].abs().max(1e-3),
                    "stencil {which}: {} vs {}",
                    gb[c],
                    expect[c]
                );
            }
        }
    }

    #[test]
    fn tape_completeness_every_op_visited_once() {
        let x = random_tensor(1, 2, 3, 4, 60);
        let mut params = ParamSet::new();
        let w = params.add("w", vec![2, 2, 1, 1], vec![0.5, -0.2, 0.3, 0.8]);
        let b = params.add("b", vec![2], vec![0.0; 2]);
        let mut tape = Tape::new();
        let xid = tape.leaf(x);
        let c1 = tape.split_conv(xid, w, b, vec![(0, 4)], &params, true).unwrap();
        let r = tape.relu(c1);
        let s = tape.add(c1, r).unwrap(); // fan-out: c1 feeds two consumers
        let z = tape.leaf(Tensor4::zeros(1, 2, 3, 4));
        let m = tape.mse(s, z).unwrap();
        let l = tape.weighted_sum(vec![(m, 2.0)]).unwrap();
        tape.backward(l, &mut params).unwrap();
        // every operation (non-leaf node) is visited exactly once; leaves
        // are gradient sinks and receive no visit
        let n_ops = 5; // conv, relu, add, mse, weighted_sum
        assert_eq!(tape.backward_visits(), n_ops);
    }

    #[test]
    fn weighted_sum_and_add_semantics() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor4::scalar(2.0));
        let b = tape.leaf(Tensor4::scalar(-0.5));
        let s = tape.weighted_sum(vec![(a, 3.0), (b, 4.0)]).unwrap();
        assert_eq!(tape.value(s).item(), 4.0);
        let x = tape.leaf(Tensor4::from_vec(1, 1, 1, 2, vec![1.0, 2.0]));
        let y = tape.leaf(Tensor4::from_vec(1, 1, 1, 2, vec![10.0, 20.0]));
        let z = tape.add(x, y).unwrap();
        assert_eq!(tape.value(z).data(), &[11.0, 22.0]);
        // shape mismatch rejected
        assert!(tape.add(x, a).is_err());
    }
}
