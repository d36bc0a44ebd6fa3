//! 2-D convolution (cross-correlation convention) with replicate padding,
//! applied independently over across-track column ranges so that left and
//! right swath sides never mix.
//!
//! The heavy lifting runs as one dgemm per kernel tap against a
//! replicate-padded, channel-major copy of the column range: layout
//! [ci][batch][h + 2ph][wr + 2pw]. Padding bakes the boundary handling
//! into plain affine indexing, and keeping channels outermost makes the
//! whole batch one GEMM column range, so a 3x3 convolution is exactly
//! 9 GEMMs per side regardless of batch size. The padded output grid
//! carries garbage rows/columns at the margins; those positions receive
//! zero cotangents in backward, so out-of-window addresses (absorbed by a
//! small slop region) never contaminate real values.

use super::pool;
use super::tensor::Tensor4;

/// Shapes of a convolution: co output channels, ci input channels, odd
/// kernel dims kh x kw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub co: usize,
    pub ci: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvDims {
    pub fn weight_len(&self) -> usize {
        self.co * self.ci * self.kh * self.kw
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: *const f64,
    rsa: isize,
    csa: isize,
    b: *const f64,
    rsb: isize,
    csb: isize,
    beta: f64,
    c: *mut f64,
    rsc: isize,
    csc: isize,
) {
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0 * alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}


/// Replicate-padded copy of the column range [lo, hi) of every input
/// channel of one batch item, with `slop` spare elements on both ends.
/// Returns (buffer, plane_len, w2, h2); the logical origin is at `slop`.
fn build_padded(
    input: &Tensor4,
    b: usize,
    lo: usize,
    hi: usize,
    ph: usize,
    pw: usize,
    slop: usize,
) -> (Vec<f64>, usize, usize, usize) {
    let (h, w) = (input.h, input.w);
    let wr = hi - lo;
    let w2 = wr + 2 * pw;
    let h2 = h + 2 * ph;
    let plane = h2 * w2;
    // fully overwritten below except the slop margins, which only feed
    // garbage output positions
    let mut buf = pool::acquire(input.c * plane + 2 * slop);
    for v in buf[..slop].iter_mut() {
        *v = 0.0;
    }
    let tail = buf.len() - slop;
    for v in buf[tail..].iter_mut() {
        *v = 0.0;
    }
    for ci in 0..input.c {
        let src = input.plane(b, ci);
        let dst = &mut buf[slop + ci * plane..slop + (ci + 1) * plane];
        for r in 0..h2 {
            let y = (r as isize - ph as isize).clamp(0, h as isize - 1) as usize;
            let row = &src[y * w + lo..y * w + hi];
            let drow = &mut dst[r * w2..(r + 1) * w2];
            for c in 0..pw {
                drow[c] = row[0];
                drow[pw + wr + c] = row[wr - 1];
            }
            drow[pw..pw + wr].copy_from_slice(row);
        }
    }
    (buf, plane, w2, h2)
}

/// Forward convolution over the given column ranges. `weight` is laid out
/// (co, ci, kh, kw); output spatial dims equal input dims within each range.
pub fn conv_forward_ranges(
    input: &Tensor4,
    weight: &[f64],
    bias: &[f64],
    dims: &ConvDims,
    ranges: &[(usize, usize)],
    out: &mut Tensor4,
) {
    debug_assert_eq!(weight.len(), dims.weight_len());
    debug_assert_eq!(bias.len(), dims.co);
    debug_assert_eq!(input.c, dims.ci);
    debug_assert_eq!(out.c, dims.co);
    debug_assert!(dims.kh % 2 == 1 && dims.kw % 2 == 1, "kernel dims must be odd");
    let (ph, pw) = (dims.kh / 2, dims.kw / 2);
    let h = input.h;
    let w_total = input.w;

    if dims.kh == 1 && dims.kw == 1 {
        conv1x1_forward(input, weight, bias, dims, out);
        return;
    }

    let slop = pw.max(1);
    for bi in 0..input.b {
        for &(lo, hi) in ranges {
            let wr = hi - lo;
            let (pad, plane, w2, _h2) = build_padded(input, bi, lo, hi, ph, pw, slop);
            let n = h * w2;
            let mut scratch = pool::acquire_zeroed(dims.co * n);
            for dy in 0..dims.kh {
                for dx in 0..dims.kw {
                    let base = dy as isize * w2 as isize + dx as isize - pw as isize;
                    let a_ptr = unsafe { weight.as_ptr().add(dy * dims.kw + dx) };
                    let b_ptr = unsafe { pad.as_ptr().add(slop).offset(base) };
                    gemm(
                        dims.co,
                        dims.ci,
                        n,
                        1.0,
                        a_ptr,
                        (dims.ci * dims.kh * dims.kw) as isize,
                        (dims.kh * dims.kw) as isize,
                        b_ptr,
                        plane as isize,
                        1,
                        1.0,
                        scratch.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
            for co in 0..dims.co {
                let dst = out.plane_mut(bi, co);
                let src = &scratch[co * n..(co + 1) * n];
                let bv = bias[co];
                for y in 0..h {
                    let srow = &src[y * w2 + pw..y * w2 + pw + wr];
                    let drow = &mut dst[y * w_total + lo..y * w_total + hi];
                    for x in 0..wr {
                        drow[x] = srow[x] + bv;
                    }
                }
            }
            pool::release(pad);
            pool::release(scratch);
        }
    }
}

/// Gradient w.r.t. the convolution input (adjoint of the padded forward,
/// including the replicate-padding fold).
pub fn conv_grad_input_ranges(
    grad_out: &Tensor4,
    weight: &[f64],
    dims: &ConvDims,
    ranges: &[(usize, usize)],
    grad_in: &mut Tensor4,
) {
    conv_backward_ranges(None, grad_out, weight, dims, ranges, Some(grad_in), None)
}

/// Gradients w.r.t. weight and bias, accumulated into `grad_w` / `grad_b`.
pub fn conv_grad_weight_ranges(
    input: &Tensor4,
    grad_out: &Tensor4,
    dims: &ConvDims,
    ranges: &[(usize, usize)],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    conv_backward_ranges(Some(input), grad_out, &[], dims, ranges, None, Some((grad_w, grad_b)))
}

/// Combined backward: weight/bias gradients and (optionally) the input
/// gradient in one sweep, sharing the padded cotangent scratch between
/// the two per batch item and side.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward_ranges(
    input: Option<&Tensor4>,
    grad_out: &Tensor4,
    weight: &[f64],
    dims: &ConvDims,
    ranges: &[(usize, usize)],
    mut grad_in: Option<&mut Tensor4>,
    mut grad_wb: Option<(&mut [f64], &mut [f64])>,
) {
    let (ph, pw) = (dims.kh / 2, dims.kw / 2);
    let h = grad_out.h;
    let w_total = grad_out.w;

    if dims.kh == 1 && dims.kw == 1 {
        if let Some(gin) = grad_in.as_deref_mut() {
            conv1x1_grad_input(grad_out, weight, dims, gin);
        }
        if let Some((gw, gb)) = grad_wb.as_mut() {
            conv1x1_grad_weight(input.expect("weight grad needs the input"), grad_out, dims, gw, gb);
        }
        return;
    }

    let slop = pw.max(1);
    for bi in 0..grad_out.b {
        for &(lo, hi) in ranges {
            let wr = hi - lo;
            let w2 = wr + 2 * pw;
            let h2 = h + 2 * ph;
            let plane = h2 * w2;
            let n = h * w2;
            // cotangents on the padded output grid; garbage columns stay 0
            let mut gout = pool::acquire_zeroed(dims.co * n);
            for co in 0..dims.co {
                let src = grad_out.plane(bi, co);
                let dst = &mut gout[co * n..(co + 1) * n];
                for y in 0..h {
                    dst[y * w2 + pw..y * w2 + pw + wr]
                        .copy_from_slice(&src[y * w_total + lo..y * w_total + hi]);
                }
            }

            if let Some((gw, gb)) = grad_wb.as_mut() {
                let x = input.expect("weight grad needs the input");
                let (pad, pplane, pw2, _h2) = build_padded(x, bi, lo, hi, ph, pw, slop);
                debug_assert_eq!((pplane, pw2), (plane, w2));
                for (co, g) in gb.iter_mut().enumerate() {
                    let src = grad_out.plane(bi, co);
                    let mut acc = 0.0;
                    for y in 0..h {
                        for x in lo..hi {
                            acc += src[y * w_total + x];
                        }
                    }
                    *g += acc;
                }
                for dy in 0..dims.kh {
                    for dx in 0..dims.kw {
                        let base = dy as isize * w2 as isize + dx as isize - pw as isize;
                        let b_ptr = unsafe { pad.as_ptr().add(slop).offset(base) };
                        let c_ptr = unsafe { gw.as_mut_ptr().add(dy * dims.kw + dx) };
                        // gw_tap (co x ci) += gout (co x n) x pad_view (n x ci)
                        gemm(
                            dims.co,
                            n,
                            dims.ci,
                            1.0,
                            gout.as_ptr(),
                            n as isize,
                            1,
                            b_ptr,
                            1,
                            plane as isize,
                            1.0,
                            c_ptr,
                            (dims.ci * dims.kh * dims.kw) as isize,
                            (dims.kh * dims.kw) as isize,
                        );
                    }
                }
                pool::release(pad);
            }

            if let Some(gin) = grad_in.as_deref_mut() {
                let mut gpad = pool::acquire_zeroed(dims.ci * plane + 2 * slop);
                for dy in 0..dims.kh {
                    for dx in 0..dims.kw {
                        let base = dy as isize * w2 as isize + dx as isize - pw as isize;
                        let a_ptr = unsafe { weight.as_ptr().add(dy * dims.kw + dx) };
                        let c_ptr = unsafe { gpad.as_mut_ptr().add(slop).offset(base) };
                        // grad_pad += W_tap^T (ci x co)  x  gout (co x n)
                        gemm(
                            dims.ci,
                            dims.co,
                            n,
                            1.0,
                            a_ptr,
                            (dims.kh * dims.kw) as isize,
                            (dims.ci * dims.kh * dims.kw) as isize,
                            gout.as_ptr(),
                            n as isize,
                            1,
                            1.0,
                            c_ptr,
                            plane as isize,
                            1,
                        );
                    }
                }
                // fold the padded cotangents back through the replicate
                // clamp: interior columns add slice-wise, the thin pad
                // margins scatter into the clamped edge cells
                for ci in 0..dims.ci {
                    let src = &gpad[slop + ci * plane..slop + (ci + 1) * plane];
                    let dst = gin.plane_mut(bi, ci);
                    for r in 0..h2 {
                        let y = (r as isize - ph as isize).clamp(0, h as isize - 1) as usize;
                        let srow = &src[r * w2..(r + 1) * w2];
                        let drow = &mut dst[y * w_total + lo..y * w_total + hi];
                        for c in 0..pw {
                            drow[0] += srow[c];
                            drow[wr - 1] += srow[pw + wr + c];
                        }
                        let interior = &srow[pw..pw + wr];
                        for x in 0..wr {
                            drow[x] += interior[x];
                        }
                    }
                }
                pool::release(gpad);
            }
            pool::release(gout);
        }
    }
}

// Pointwise (1x1) fast paths: no padding, a single GEMM per batch item.

fn conv1x1_forward(input: &Tensor4, weight: &[f64], bias: &[f64], dims: &ConvDims, out: &mut Tensor4) {
    let n = input.h * input.w;
    for bi in 0..input.b {
        let in_ptr = input.plane(bi, 0).as_ptr();
        let out_ptr = out.plane_mut(bi, 0).as_mut_ptr();
        gemm(
            dims.co, dims.ci, n, 1.0,
            weight.as_ptr(), dims.ci as isize, 1,
            in_ptr, n as isize, 1,
            0.0, out_ptr, n as isize, 1,
        );
        for co in 0..dims.co {
            let bv = bias[co];
            for v in out.plane_mut(bi, co) {
                *v += bv;
            }
        }
    }
}

fn conv1x1_grad_input(grad_out: &Tensor4, weight: &[f64], dims: &ConvDims, grad_in: &mut Tensor4) {
    let n = grad_out.h * grad_out.w;
    for bi in 0..grad_out.b {
        gemm(
            dims.ci, dims.co, n, 1.0,
            weight.as_ptr(), 1, dims.ci as isize,
            grad_out.plane(bi, 0).as_ptr(), n as isize, 1,
            1.0, grad_in.plane_mut(bi, 0).as_mut_ptr(), n as isize, 1,
        );
    }
}

fn conv1x1_grad_weight(
    input: &Tensor4,
    grad_out: &Tensor4,
    dims: &ConvDims,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let n = input.h * input.w;
    for bi in 0..input.b {
        gemm(
            dims.co, n, dims.ci, 1.0,
            grad_out.plane(bi, 0).as_ptr(), n as isize, 1,
            input.plane(bi, 0).as_ptr(), 1, n as isize,
            1.0, grad_w.as_mut_ptr(), dims.ci as isize, 1,
        );
        for co in 0..dims.co {
            grad_b[co] += grad_out.plane(bi, co).iter().sum::<f64>();
        }
    }
}
