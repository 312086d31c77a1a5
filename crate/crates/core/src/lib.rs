//! Joint design of a low-precision channel quantizer and a sum-product LDPC
//! decoder.
//!
//! A small ReLU network followed by an annealed soft staircase is trained end
//! to end through an unrolled log-domain sum-product decoder, then frozen into
//! a hard quantizer and evaluated by Monte-Carlo BER simulation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod codes;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod grad;
pub mod lloyd;
pub mod quantizer;
pub mod staircase;
pub mod train;

pub use error::{Error, Result};
