//! Dense `f64` kernels, nonlinearities, the project RNG and the
//! finite-difference gradient checker.

mod params;
mod rng;
mod tensor;

pub use params::{grad_check, GradCheckReport, ParamSet};
pub use rng::Rng;
pub use tensor::{
    conv1d_same, log_softmax_slice, matmul, sigmoid, softmax, softmax_backward, softmax_slice,
    Tensor,
};

pub(crate) use tensor::{axpy, conv1d_same_backward, conv1d_same_into, dot, gemv_acc, gemv_t_acc, ger_acc};
