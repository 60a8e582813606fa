//! Small tensor library with tape-based reverse-mode differentiation,
//! covering the operator set of the downscaling network.

mod gradcheck;
mod graph;
mod kernels;
mod params;
mod suite;
mod tensor;

pub use gradcheck::{grad_check, grad_check_unary, relative_error, Coords, GradCheckReport, Probe, FD_STEP, REL_FLOOR};
pub use graph::{gelu_scalar, sigmoid_scalar, Gradients, Graph, Padding2d, TimePadding, Var, SQRT_EPS};
pub use params::{ParamManifest, ParamSet, ParamSpec, PARAMS_FILE};
pub use tensor::{Tensor, MAX_RANK};
pub use suite::{op_suite, project, SuiteResult, GRAD_TOLERANCE, OPERATORS};
