//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation as it runs. Leaves are either
//! parameters, which receive gradients, or constants, which do not. Calling
//! [`Tape::backward`] walks the tape once in reverse and returns a fresh
//! [`Gradients`]; the tape itself is never modified, so calling it again gives
//! the same answer.
//!
//! ```
//! use tailcast_core::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```

mod check;
mod tape;
mod tensor;

pub use check::grad_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("masked softmax row {0} has no unmasked entry")]
    EmptyMaskRow(usize),
    #[error("backward needs a one-element output, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = core::result::Result<T, AutodiffError>;
