//! Dense numerical building blocks with hand-derived backward passes.
//!
//! Every layer keeps its trainable tensors in a plain struct that implements
//! [`ParamSet`]. Gradients use the same struct type, so a gradient buffer is
//! just `params.zeros_like()` and optimizers walk both in lockstep.

mod attention;
mod dense;
mod dropout;
mod gradcheck;
mod lstm;
mod optim;
mod tensor;

pub use attention::{self_attention, AttentionParams, AttentionTape};
pub use dense::{DenseParams, DenseTape};
pub use dropout::{variational_dropout, DropoutMask, Mode};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use lstm::{
    bilstm_forward, lstm_step, BiLstmParams, BiLstmTape, LstmParams, LstmState, LstmTape,
};
pub use optim::{clip_global_norm, global_norm, Adamax, AdamaxConfig};
pub use tensor::{logsumexp, softmax_in_place, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dropout rate must be in [0, 1), got {0}")]
    BadRate(f64),
    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: String },
}

pub type Result<T> = std::result::Result<T, NnError>;

/// A fixed, ordered collection of named tensors.
///
/// `tensors` and `tensors_mut` must yield the same tensors in the same order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src: Vec<&Tensor> = other.tensors().into_iter().map(|(_, t)| t).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            dst.add_assign(src);
        }
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, items: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
