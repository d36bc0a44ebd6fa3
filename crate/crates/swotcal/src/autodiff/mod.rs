//! Minimal reverse-mode differentiation engine over the layer set the
//! calibration network needs. 64-bit floats throughout; every run with the
//! same seed and inputs is bitwise reproducible.

pub mod conv;
pub mod gradcheck;
pub mod optim;
pub mod pool;
pub mod tape;
pub mod tensor;

pub use conv::ConvDims;
pub use optim::Adam;
pub use tape::{BnMode, BnState, NodeId, Param, ParamId, ParamSet, Tape};
pub use tensor::Tensor4;
