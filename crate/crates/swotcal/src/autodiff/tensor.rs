//! Dense 4-D tensors (batch, channels, height, width), 64-bit floats.

/// Row-major dense tensor with shape (b, c, h, w). Values are finite by
/// contract; debug builds assert this after every tape operation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(b: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 { b, c, h, w, data: vec![0.0; b * c * h * w] }
    }

    pub fn from_vec(b: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), b * c * h * w, "tensor data length mismatch");
        Tensor4 { b, c, h, w, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor4 { b: 1, c: 1, h: 1, w: 1, data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.b, self.c, self.h, self.w)
    }

    pub fn same_shape(&self, other: &Tensor4) -> bool {
        self.shape() == other.shape()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// One (batch, channel) plane of h*w values.
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let p = self.h * self.w;
        let off = (b * self.c + c) * p;
        &self.data[off..off + p]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let p = self.h * self.w;
        let off = (b * self.c + c) * p;
        &mut self.data[off..off + p]
    }

    /// Scalar value of a [1,1,1,1] tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn assert_finite(&self, what: &str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite values after {what}"
        );
    }
}
