//! swotcal: a desk-scale observing-system simulation and calibration
//! toolkit for wide-swath altimetry.
//!
//! The crate covers the full loop:
//!
//! 1. synthesize ground-truth SSH fields with a prescribed isotropic
//!    spectrum ([`fieldgen`]) and emulate nadir-based gridded products;
//! 2. sample two-sided swath segments and add structured instrument and
//!    geophysical errors ([`swath`], [`errorsim`]);
//! 3. decompose swath signals into along-track Gaussian scale bands
//!    ([`scale_space`]);
//! 4. train a residual calibration CNN on (observation, gridded product)
//!    pairs with a from-scratch reverse-mode engine ([`autodiff`],
//!    [`calnet`], [`training`]);
//! 5. evaluate RMSE and per-scale error curves ([`metrics`]) and move data
//!    through the bit-exact SWT container ([`swt`], [`cli`]).
//!
//! See the crate examples for runnable end-to-end walkthroughs and the
//! `swotcal` binary for the command-line interface.

pub mod autodiff;
pub mod calnet;
pub mod cli;
pub mod config;
pub mod error;
pub mod errorsim;
pub mod fieldgen;
pub mod filters;
pub mod metrics;
pub mod osse;
pub mod rng;
pub mod scale_space;
pub mod swath;
pub mod swt;
pub mod training;

pub use error::{Result, SwotError};
