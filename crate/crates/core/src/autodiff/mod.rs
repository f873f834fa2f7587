//! Reverse-mode automatic differentiation.

pub mod gradcheck;
pub mod kernels;
pub mod tape;

pub use gradcheck::{gradient_check, gradient_check_many, relative_error, GradCheckOptions, GradCheckReport};
pub use tape::{Grads, Tape, Var};
