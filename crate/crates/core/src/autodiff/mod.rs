//! Dense tensors with reverse-mode automatic differentiation.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck, REL_ERR_FLOOR};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{sigmoid, Elementwise, Stabilizer, Tape, Var, BCE_CLAMP, LEAKY_SLOPE};
