//! Double-precision recurrent and feed-forward building blocks with
//! hand-written backpropagation.
//!
//! Everything here works on flat row-major `Vec<f64>` buffers. Batched
//! sequence data is stored time-major: step `t` of a batch of `B`
//! sequences occupies rows `t * B .. (t + 1) * B`.
//!
//! Parameter containers implement [`ParamSet`], which exposes their
//! buffers as an ordered list of slices. Gradients are returned as a value
//! of the same type, so a gradient bundle is always shape-isomorphic to the
//! parameters it differentiates.

pub mod activation;
pub mod adam;
pub mod gradcheck;
mod linalg;
pub mod lstm;
pub mod mlp;
pub mod seq;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, relative_error};
pub use lstm::LstmLayer;
pub use mlp::{Dense, HiddenActivation, Mlp, OutputActivation};
pub use lstm::SparseRows;
pub use seq::{SeqBatch, SeqModel, SeqState, SeqWorkspace, PROB_CLAMP};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{0}")]
    Domain(String),
    #[error("non-finite gradient in parameter block {block} at index {index} (value {value})")]
    NonFiniteGradient { block: usize, index: usize, value: f64 },
    #[error("unsupported model document: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, NeuralError>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(NeuralError::Shape {
            context,
            expected,
            actual,
        })
    }
}

/// A container of trainable parameters viewed as an ordered list of buffers.
pub trait ParamSet {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    /// Same shapes, every entry zero.
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for s in self.param_slices() {
            out.extend_from_slice(s);
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("assign_flat", self.param_count(), flat.len())?;
        let mut offset = 0;
        for s in self.param_slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Uniform Glorot initialisation bound for a `fan_in -> fan_out` map.
pub(crate) fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
