//! Minimal differentiable-function core.

mod fdcheck;
mod gaussian;
mod graph;
mod mlp;
mod optim;
mod tensor;

pub use fdcheck::{finite_diff_check, relative_error, FdReport, REL_ERROR_FLOOR};
pub use gaussian::{
    clamp_log_std, gaussian_entropy, gaussian_logprob, log_std_max, log_std_min, DiagGaussian,
    HALF_LN_2PI, HALF_LN_2PI_E, STD_MAX, STD_MIN,
};
pub use graph::{grad, Gradients, Graph, Var, PRIMITIVES};
pub use mlp::{mlp_forward, Activation, MlpSpec};
pub use optim::{sgd_step, Adam};
pub use tensor::{Checkpoint, ParamSet, Tensor};

