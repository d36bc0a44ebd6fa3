//! Discrete Gaussian kernels and 1-D convolution helpers shared by the
//! field synthesis, error simulation and scale-space modules.

/// Discrete Gaussian kernel with standard deviation `sigma` in samples,
/// truncated at ±4σ and renormalized to sum exactly 1.
pub fn gaussian_kernel(sigma_samples: f64) -> Vec<f64> {
    assert!(sigma_samples > 0.0, "sigma must be positive");
    let half = (4.0 * sigma_samples).ceil() as usize;
    let mut k = Vec::with_capacity(2 * half + 1);
    let inv = 1.0 / (2.0 * sigma_samples * sigma_samples);
    for j in -(half as isize)..=(half as isize) {
        k.push((-(j * j) as f64 * inv).exp());
    }
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Mirror-reflect an index into [0, n): ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
/// The edge sample is not repeated (period 2n - 2).
pub fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n >= 2);
    let period = (2 * n - 2) as isize;
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Convolve a strided signal with a symmetric kernel under mirror-reflect
/// boundary handling. `src` and `dst` address element i at `i * stride`.
/// Interior samples (full kernel support) take a branch-free path; only
/// the boundary-affected samples go through index reflection.
pub fn convolve_reflect_strided(
    src: &[f64],
    dst: &mut [f64],
    n: usize,
    stride: usize,
    kernel: &[f64],
) {
    let half = kernel.len() / 2;
    let reflected = |i: usize| -> f64 {
        let mut acc = 0.0;
        for (t, &w) in kernel.iter().enumerate() {
            let j = reflect_index(i as isize + t as isize - half as isize, n);
            acc += w * src[j * stride];
        }
        acc
    };
    if n <= 2 * half {
        for i in 0..n {
            dst[i * stride] = reflected(i);
        }
        return;
    }
    for i in 0..half {
        dst[i * stride] = reflected(i);
        dst[(n - 1 - i) * stride] = reflected(n - 1 - i);
    }
    for i in half..n - half {
        let base = (i - half) * stride;
        let mut acc = [0.0f64; 4];
        let mut t = 0;
        while t + 4 <= kernel.len() {
            acc[0] += kernel[t] * src[base + t * stride];
            acc[1] += kernel[t + 1] * src[base + (t + 1) * stride];
            acc[2] += kernel[t + 2] * src[base + (t + 2) * stride];
            acc[3] += kernel[t + 3] * src[base + (t + 3) * stride];
            t += 4;
        }
        let mut tail = 0.0;
        while t < kernel.len() {
            tail += kernel[t] * src[base + t * stride];
            t += 1;
        }
        dst[i * stride] = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail;
    }
}

/// Valid-mode convolution: `src` has n + kernel.len() - 1 samples and the
/// output has exactly n, each a full-support kernel sum. Used where exact
/// stationarity matters (correlated-noise generation).
pub fn convolve_valid(src: &[f64], dst: &mut [f64], kernel: &[f64]) {
    let n = dst.len();
    debug_assert_eq!(src.len(), n + kernel.len() - 1);
    for (i, out) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (t, &w) in kernel.iter().enumerate() {
            acc += w * src[i + t];
        }
        *out = acc;
    }
}

/// l2 norm of a kernel; the variance of white noise convolved with `k`
/// is sum(k^2), so dividing by this restores unit variance.
pub fn kernel_l2(kernel: &[f64]) -> f64 {
    kernel.iter().map(|w| w * w).sum::<f64>().sqrt()
}
