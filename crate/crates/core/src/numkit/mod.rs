//! Dense `f64` tensors, a reverse-mode autodiff tape and the Adam optimizer.
//!
//! Sized for small encoders: everything is row-major, single-threaded per
//! graph, and deterministic for a fixed input and RNG seed.

mod adam;
mod graph;
pub(crate) mod kernels;
mod tensor;

#[cfg(test)]
mod tests;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use graph::{clamped_survival_nll, sigmoid, AttentionMask, Graph, Unary, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
}

/// Feed-forward non-linearity used by the encoder and the time embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Tanh,
}

impl From<Activation> for Unary {
    fn from(a: Activation) -> Self {
        match a {
            Activation::Gelu => Unary::Gelu,
            Activation::Tanh => Unary::Tanh,
        }
    }
}

/// Inverted-dropout mask: each entry is `1/(1−rate)` with probability
/// `1−rate` and `0` otherwise. `rate == 0` yields all ones without touching
/// the RNG.
pub fn dropout_mask(shape: &[usize], rate: f64, rng: &mut impl Rng) -> Result<Tensor, NumError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NumError::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(Tensor::full(shape, 1.0));
    }
    let keep = 1.0 / (1.0 - rate);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
    Tensor::new(shape.to_vec(), data)
}
