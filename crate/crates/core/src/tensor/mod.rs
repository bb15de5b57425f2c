//! Dense matrices with tape-based reverse-mode differentiation.
//!
//! All model quantities (GAT activations, recurrent states, subspace
//! projections, assignment matrices and every loss) are recorded on a
//! [`Tape`] as `f64` matrices. A training step records one forward pass,
//! calls [`Tape::backward`] on the scalar loss and reads parameter
//! gradients out of the returned [`Gradients`].
//!
//! ```
//! use rolecluster::tensor::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Matrix::scalar(3.0));
//! let y = tape.hadamard(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{check_gradients, GradientCheck};
pub use matrix::{argmax, Matrix};
pub use tape::{Gradients, OpKind, Tape, Var, LOG_FLOOR};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: index {index} out of range for {bound} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: index list has length {got}, expected {expected}")]
    IndexLength {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("data of length {len} does not fit shape {shape:?}")]
    DataLength { shape: [usize; 2], len: usize },
    #[error("backward requires a 1x1 output, got shape {0:?}")]
    NotScalar([usize; 2]),
    #[error("variable {0} was not recorded on this tape")]
    ForeignVar(usize),
    #[error("loss evaluated to a non-finite value ({0})")]
    NonFinite(f64),
    #[error("finite-difference step must be positive, got {0}")]
    BadEpsilon(f64),
}
