//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.

mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{gradient_check, gradient_check_against, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{Init, ParamId, Parameter, ParameterStore};
pub use tensor::Tensor;
