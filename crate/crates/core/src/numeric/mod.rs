//! Dense tensors, recorded reverse-mode differentiation, Adam and the
//! finite-difference gradient oracle.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{check_param_set, finite_difference_check, DEFAULT_EPSILON};
pub use params::{Bindings, ParamSet};
pub use tape::{sigmoid, softplus, Axis, Gradients, Segments, Tape, Var, MIN_NORM};
pub use tensor::{SparseMatrix, Tensor};
