//! Tensors, reverse-mode differentiation, Adam and gradient verification.

pub mod adam;
pub mod container;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, CoordCheck, GradCheckReport};
pub use graph::{Graph, Var};
pub use params::{Bindings, ParamStore};
pub use tensor::{layer_norm, Tensor};
