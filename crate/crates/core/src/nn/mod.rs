//! Minimal deterministic neural-network kernel.
//!
//! Everything here is single-threaded and bit-reproducible for fixed seeds and
//! inputs: reductions always run in the same order.

mod element;
mod error;
pub mod gradcheck;
pub mod layer;
mod loss;
mod optim;
mod params;
mod sequential;
mod tensor;

pub use element::Element;
pub use error::{NnError, Result};
pub use gradcheck::{grad_check, grad_check_input, relative_error};
pub use layer::{backward, forward, LayerCache, LayerSpec};
pub use loss::{argmax_rows, softmax_cross_entropy};
pub use optim::{OptimizerConfig, Sgd};
pub use params::{Param, ParameterStore};
pub use sequential::{Sequential, SequentialCache};
pub use tensor::Tensor;
