//! Dense tensors, a reverse-mode tape, SGD and a finite-difference checker.

mod dense;
mod gradcheck;
mod sgd;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{grad_check, grad_check_detailed, GradCheck};
pub use sgd::{Sgd, SgdConfig};
pub use tape::{log_sum_exp, Gradients, Tape, Var, ARCCOS_EPS};
