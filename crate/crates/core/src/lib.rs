//! Mixed-precision explicit ODE solvers with a dynamically scaled discrete adjoint.
//!
//! Low-precision formats (float16, bfloat16, float32) are emulated on an `f64`
//! carrier with correctly rounded primitives. The forward pass evaluates the
//! increment of an explicit one-step scheme in the low precision and
//! accumulates the state in a higher one; the backward pass differentiates
//! the discrete solution exactly, guarding each step's vector-Jacobian
//! product with a power-of-two adjoint scale.

pub mod adjoint;
pub mod csvio;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod integrate;
pub mod parallel;
pub mod precision;

pub use adjoint::{backward, backward_with_report, BackwardOptions, BackwardReport, Gradients, Objective, ScalingPolicy};
pub use dynamics::{LinearField, MlpField, Params, PolyDecayField, VelocityField};
pub use error::{Error, Result};
pub use integrate::{forward, Scheme, TimeGrid, Trajectory};
pub use parallel::ExecMode;
pub use precision::FloatFormat;
