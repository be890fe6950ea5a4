//! Group contrastive self-supervised learning for graphs.
//!
//! GIN encoders feed an attention representor that splits each graph's
//! embedding into `p` groups. Training maximises a Jensen-Shannon MI estimate
//! between same-group embeddings of two views and penalises a CLUB upper
//! bound on MI between different groups of one view. Everything runs on a
//! small reverse-mode autodiff engine over `f64` tensors in [`numeric`].
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod augment;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gin;
pub mod numeric;
pub mod objectives;
pub mod representor;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
