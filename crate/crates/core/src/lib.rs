//! Bit-exact integer kernels for log2-quantized softmax and low-precision
//! layer normalization, together with the double-precision references used
//! to audit them.
//!
//! The kernels model the hardware datapath value by value: every shift,
//! rounding step and saturation is explicit, so two runs with the same
//! configuration always produce the same bits.

pub mod ailayernorm;
pub mod calib;
pub mod e2softmax;
mod error;
pub mod fxp;
pub mod oracle;
pub mod pipemodel;
pub mod rng;

pub use error::{KernelError, Result};
