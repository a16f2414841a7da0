//! Simulation laboratory for randomly forced elasto-plastic oscillators.
//!
//! The state `x = (y, z)` lives on `M = ℝ × [-1, 1]` and evolves by the
//! differential inclusion
//!
//! ```text
//! dy/dt = f(y, z) + ζ(t),     y ∈ dz/dt + ∂g(z),
//! ```
//!
//! where `g` is the indicator of `[-1, 1]`. The crate is split into:
//!
//! - [`dynamics`]: the state space, drift models and the projected Euler scheme;
//! - [`noise`]: Brownian paths, the integrated trigonometric basis and decomposable laws;
//! - [`control`]: explicit controls steering the system between states, plus the
//!   linearised construction around a smooth reference;
//! - [`ergodics`]: Monte Carlo certificates of the Lyapunov drift, hitting times,
//!   kernel total-variation bounds, coupling and the exponential mixing rate;
//! - [`ensemble`]: seed derivation and deterministic parallel maps.
//!
//! The accompanying book (`book/`) walks through each of these with runnable
//! snippets; they are compiled as doc-tests of this crate.

pub mod control;
pub mod dynamics;
pub mod ensemble;
pub mod ergodics;
pub mod error;
pub mod export;
pub mod noise;

pub use dynamics::{DriftModel, SolverConfig, State, Trajectory};
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/control.md")]
    mod control {}
    #[doc = include_str!("../../../book/src/ergodics.md")]
    mod ergodics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
