//! Reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor) values.

mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{check_param_gradients, finite_difference_check, relative_error, GradCheckReport};
pub(crate) use graph::Backward;
pub use graph::{Graph, Var};
pub use params::{HasParams, Param, ParamId, ParamStore};
