//! Minimal differentiable computation core: matrices, a reverse-mode tape,
//! dense networks, Adam, and a finite-difference gradient checker.

mod gradcheck;
mod mat;
mod mlp;
mod optim;
mod params;
mod tape;

pub use gradcheck::{finite_diff_check, finite_diff_check_coords, FdReport};
pub use mat::Mat;
pub use mlp::{
    check_params, forward_batch, forward_tape, init_into, init_params, mlp_forward, HiddenLayer, MlpSlots, MlpSpec,
};
pub use optim::{optimizer_step, AdamConfig, OptimState};
pub use params::{ParamLayout, ParamSlice, ParamVector, SliceKind};
pub use tape::{Activation, Gradients, ParamVars, Tape, Var};
#[allow(unused_imports)]
pub(crate) use tape::log_sum_exp;
