//! Monte Carlo certificates for the chain `x_k = x(k T₀)`.
//!
//! Everything here works with the one-period [`Kernel`]: Lyapunov drift,
//! hitting times of a ball around the smooth point `p`, histogram estimates of
//! the total variation between one-step laws, the coupling construction and
//! the exponential convergence of `P*_k λ` to the invariant measure.

mod certificates;
mod coupling;
mod fit;
mod kernel;
mod measure;
mod mixing;

pub use certificates::{
    estimate_kernel_tv, hitting_time, lyapunov_drift_check, HittingStats, KernelTvEstimate,
    LyapunovPoint, LyapunovReport,
};
pub use coupling::{
    coupled_step, run_coupled_chains, CoupledPair, CouplingConfig, CouplingDraw, CouplingReport,
    MaximalCoupling, StepBranch,
};
pub use fit::{fit_line, EventTimes, LineFit, TailFit};
pub use kernel::{Kernel, NoiseSpec};
pub use measure::{tv_distance, BinConfig, EmpiricalMeasure};
pub use mixing::{
    empirical_invariant, estimate_mixing_rate, stationary_samples, InitialLaw, InvariantConfig,
    MixingConfig, MixingReport, RateEstimate, TvSeries, MAX_OVERFLOW,
};
