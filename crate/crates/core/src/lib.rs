//! Multi-level residual binarization for LSTM inference.
//!
//! Weights, biases and inputs are approximated as `α · Σ s_i 2^(1-i)` with
//! signs `s_i ∈ {-1, +1}` and `α` a power of two. Dot products then reduce
//! to XNOR-popcount over packed bitplanes followed by a single shift.
//!
//! Modules, bottom-up:
//! - [`tensor`]: dense tensors and packed sign planes
//! - [`quant`]: binarizers, multi-level quantization, fixed-point baseline
//! - [`kernels`]: multi-level dot products and matrix-vector products
//! - [`lstm`], [`qlstm`]: full-precision and quantized LSTM cells
//! - [`eval`], [`readout`]: feature extraction, accuracy, ridge readout
//! - [`explorer`]: search over per-group scaling settings
//! - [`cost`]: gate-level area/delay model of the MAC
//! - [`data`], [`model`]: file formats and the synthetic dataset

pub mod cost;
pub mod data;
pub mod error;
pub mod eval;
pub mod explorer;
pub mod kernels;
pub mod kv;
pub mod lstm;
pub mod model;
pub mod par;
pub mod qlstm;
pub mod quant;
pub mod readout;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};
pub use par::Workers;
