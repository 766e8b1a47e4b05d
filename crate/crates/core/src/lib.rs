//! Numerical laboratory for the minimal Keller-Segel system
//!
//! ```text
//! u_t        = Lap u - chi div(u grad v)
//! lambda v_t = Lap v - v + u
//! ```
//!
//! on Neumann domains, for relaxation times `lambda >= 0`. With `lambda = 0`
//! the same stepper integrates the parabolic-elliptic system exactly, which is
//! what makes the fast-signal-diffusion limit `lambda -> 0` measurable.

// `!(x > 0.0)` and friends reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// stencil loops index several arrays at once
#![allow(clippy::needless_range_loop)]

pub mod dynamics;
pub mod elliptic;
pub mod error;
pub mod experiments;
pub mod functionals;
pub mod mesh;
pub mod operators;
pub mod theory;

pub use dynamics::{run, step_pe, step_pp, PPState, RunResult, StepperConfig, Termination};
pub use error::{Error, Result};
pub use functionals::DiagnosticsRecord;
pub use mesh::{make_grid, sample_initial, Field, Geometry, Grid, GridSpec, Preset};
pub use theory::ParamWitness;
