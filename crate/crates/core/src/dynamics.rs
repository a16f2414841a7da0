//! State space, drift models and the projected Euler scheme.
//!
//! The constraint acts on `z` only. One step of the scheme is
//!
//! ```text
//! y' = y + h f(y, z) + Δζ
//! z' = clamp(z + h y, -1, 1)
//! ```
//!
//! where `Δζ` is the integral of the forcing over the step. Inside `(-1, 1)`
//! this is the ordinary Euler step for `dz/dt = y`. On `z = ±1` with `y`
//! pointing outward the clamp freezes `z` (plastic phase); with `y`
//! pointing inward the state re-enters the interior.

use std::fmt;
use std::io;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::export;

/// Step used for central finite differences when a drift has no analytic partials.
pub const FD_STEP: f64 = 1e-6;

/// Default magnitude cap for `|y|` before a run is declared to have blown up.
pub const DEFAULT_BLOWUP_CAP: f64 = 1e9;

/// Tolerance for the drift certificate check.
pub const DRIFT_TOLERANCE: f64 = 1e-12;

/// A point `(y, z)` of `M = ℝ × [-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub y: f64,
    pub z: f64,
}

impl State {
    pub const fn new(y: f64, z: f64) -> Self {
        Self { y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.y.is_finite() && self.z.is_finite()
    }

    /// Finite and `|z| ≤ 1`.
    pub fn is_admissible(&self) -> bool {
        self.is_finite() && self.z.abs() <= 1.0
    }

    pub fn distance(&self, other: &State) -> f64 {
        (self.y - other.y).hypot(self.z - other.z)
    }

    /// The reflection `(y, z) ↦ (-y, -z)`.
    pub fn reflected(&self) -> State {
        State::new(-self.y, -self.z)
    }

    pub(crate) fn check(&self, what: &'static str) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::NonFinite(what));
        }
        if self.z.abs() > 1.0 {
            return Err(Error::Precondition(format!(
                "{what} has |z| = {} > 1",
                self.z.abs()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.y, self.z)
    }
}

/// The drift `f : M → ℝ`.
pub trait Drift: Send + Sync + fmt::Debug {
    fn eval(&self, x: State) -> f64;

    /// Analytic `(∂f/∂y, ∂f/∂z)`, if known.
    fn partials(&self, _x: State) -> Option<(f64, f64)> {
        None
    }
}

/// `f(y, z) = -y`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Linear;

impl Drift for Linear {
    fn eval(&self, x: State) -> f64 {
        -x.y
    }
    fn partials(&self, _x: State) -> Option<(f64, f64)> {
        Some((-1.0, 0.0))
    }
}

/// `f(y, z) = -y + c z`.
#[derive(Debug, Clone, Copy)]
pub struct LinearCoupled {
    pub c: f64,
}

impl Drift for LinearCoupled {
    fn eval(&self, x: State) -> f64 {
        -x.y + self.c * x.z
    }
    fn partials(&self, _x: State) -> Option<(f64, f64)> {
        Some((-1.0, self.c))
    }
}

/// `f(y, z) = -y³`. It satisfies `y f ≤ -α y² + α²/4` for every `α > 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CubicSat;

impl Drift for CubicSat {
    fn eval(&self, x: State) -> f64 {
        -x.y * x.y * x.y
    }
    fn partials(&self, x: State) -> Option<(f64, f64)> {
        Some((-3.0 * x.y * x.y, 0.0))
    }
}

type DriftFn = dyn Fn(State) -> f64 + Send + Sync;
type PartialsFn = dyn Fn(State) -> (f64, f64) + Send + Sync;

/// A drift given by closures, for registered extensions and tests.
#[derive(Clone)]
pub struct FnDrift {
    name: String,
    f: Arc<DriftFn>,
    partials: Option<Arc<PartialsFn>>,
}

impl FnDrift {
    pub fn new(name: impl Into<String>, f: impl Fn(State) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
            partials: None,
        }
    }

    pub fn with_partials(
        mut self,
        partials: impl Fn(State) -> (f64, f64) + Send + Sync + 'static,
    ) -> Self {
        self.partials = Some(Arc::new(partials));
        self
    }
}

impl fmt::Debug for FnDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDrift").field("name", &self.name).finish()
    }
}

impl Drift for FnDrift {
    fn eval(&self, x: State) -> f64 {
        (self.f)(x)
    }
    fn partials(&self, x: State) -> Option<(f64, f64)> {
        self.partials.as_ref().map(|p| p(x))
    }
}

/// A drift together with its Lyapunov certificate `y f ≤ -α y² + C`, the
/// distinguished smooth point `p` and the reference interval length `t0`.
#[derive(Debug, Clone)]
pub struct DriftModel {
    drift: Arc<dyn Drift>,
    alpha: f64,
    c_lyap: f64,
    p: State,
    smooth_radius: f64,
    t0: f64,
}

impl DriftModel {
    /// A model with `p = (0, 0)`, smoothness radius `0.5` and `t0 = 1`.
    pub fn new(drift: Arc<dyn Drift>, alpha: f64, c_lyap: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid("alpha", format!("must be positive, got {alpha}")));
        }
        if !(c_lyap.is_finite() && c_lyap >= 0.0) {
            return Err(invalid("c_lyap", format!("must be non-negative, got {c_lyap}")));
        }
        Ok(Self {
            drift,
            alpha,
            c_lyap,
            p: State::new(0.0, 0.0),
            smooth_radius: 0.5,
            t0: 1.0,
        })
    }

    /// `f = -y` with `α = 1`, `C = 0`.
    pub fn canonical() -> Self {
        Self::new(Arc::new(Linear), 1.0, 0.0).expect("canonical constants are valid")
    }

    pub fn with_smooth_point(mut self, p: State, smooth_radius: f64) -> Result<Self> {
        if !(p.is_finite() && p.z.abs() < 1.0) {
            return Err(invalid("p", format!("needs |p.z| < 1, got {p}")));
        }
        if !(smooth_radius.is_finite() && smooth_radius > 0.0) {
            return Err(invalid("smooth_radius", format!("must be positive, got {smooth_radius}")));
        }
        self.p = p;
        self.smooth_radius = smooth_radius;
        Ok(self)
    }

    pub fn with_t0(mut self, t0: f64) -> Result<Self> {
        if !(t0.is_finite() && t0 > 0.0 && t0 <= 1.0) {
            return Err(invalid("t0", format!("must lie in (0, 1], got {t0}")));
        }
        self.t0 = t0;
        Ok(self)
    }

    #[inline]
    pub fn f(&self, x: State) -> f64 {
        self.drift.eval(x)
    }

    pub fn drift(&self) -> &Arc<dyn Drift> {
        &self.drift
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c_lyap(&self) -> f64 {
        self.c_lyap
    }

    pub fn p(&self) -> State {
        self.p
    }

    pub fn smooth_radius(&self) -> f64 {
        self.smooth_radius
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// `(∂f/∂y, ∂f/∂z)`: analytic when the drift provides them, central
    /// differences with step [`FD_STEP`] otherwise.
    pub fn partials(&self, x: State) -> (f64, f64) {
        if let Some(d) = self.drift.partials(x) {
            return d;
        }
        finite_difference_partials(self.drift.as_ref(), x)
    }
}

/// Central-difference partials of `drift` at `x`.
pub fn finite_difference_partials(drift: &dyn Drift, x: State) -> (f64, f64) {
    let h = FD_STEP;
    let dy = (drift.eval(State::new(x.y + h, x.z)) - drift.eval(State::new(x.y - h, x.z))) / (2.0 * h);
    let dz = (drift.eval(State::new(x.y, x.z + h)) - drift.eval(State::new(x.y, x.z - h))) / (2.0 * h);
    (dy, dz)
}

/// `V(y, z) = 1 + y²`.
#[inline]
pub fn lyapunov_value(x: State) -> f64 {
    1.0 + x.y * x.y
}

#[inline]
pub(crate) fn advance(drift: &dyn Drift, x: State, increment: f64, h: f64) -> State {
    State {
        y: x.y + h * drift.eval(x) + increment,
        z: (x.z + h * x.y).clamp(-1.0, 1.0),
    }
}

/// One projected Euler step.
///
/// `forcing_increment` is the integral of the forcing over the step: the
/// Brownian increment under white noise, or `h·u(t)` for a direct forcing.
pub fn clamp_step(x: State, model: &DriftModel, forcing_increment: f64, h: f64) -> Result<State> {
    x.check("state")?;
    ensure_finite(forcing_increment, "forcing increment")?;
    if !(h.is_finite() && h > 0.0) {
        return Err(invalid("h", format!("must be positive, got {h}")));
    }
    let next = advance(model.drift.as_ref(), x, forcing_increment, h);
    if !next.is_finite() {
        return Err(Error::NonFinite("drift evaluation"));
    }
    Ok(next)
}

/// Anything that can drive [`integrate`].
pub trait Forcing {
    /// Length of the interval on which the forcing is defined.
    fn horizon(&self) -> f64;

    /// Integral of the forcing over step `k`, i.e. over `[t, t + h]` with `t = k h`.
    fn increment(&self, k: usize, t: f64, h: f64) -> Result<f64>;
}

/// The zero forcing, defined on all of `[0, ∞)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unforced;

impl Forcing for Unforced {
    fn horizon(&self) -> f64 {
        f64::INFINITY
    }
    fn increment(&self, _k: usize, _t: f64, _h: f64) -> Result<f64> {
        Ok(0.0)
    }
}

/// Step size, horizon and seed of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub h: f64,
    pub horizon: f64,
    pub seed: u64,
    pub blowup_cap: f64,
}

impl SolverConfig {
    pub fn new(h: f64, horizon: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(invalid("h", format!("must be positive, got {h}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("horizon", format!("must be positive, got {horizon}")));
        }
        if h > horizon {
            return Err(invalid("h", format!("step {h} exceeds the horizon {horizon}")));
        }
        Ok(Self {
            h,
            horizon,
            seed: 0,
            blowup_cap: DEFAULT_BLOWUP_CAP,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Number of steps covering the horizon.
    pub fn steps(&self) -> Result<usize> {
        grid_steps(self.horizon, self.h)
    }
}

/// Number of steps of size `h` covering `[0, horizon]`; the ratio must be an integer.
pub(crate) fn grid_steps(horizon: f64, h: f64) -> Result<usize> {
    let ratio = horizon / h;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * n.max(1.0) {
        return Err(invalid(
            "h",
            format!("step {h} does not divide the horizon {horizon}"),
        ));
    }
    Ok(n as usize)
}

/// A solution sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn endpoint(&self) -> State {
        *self.states.last().expect("trajectories are never empty")
    }

    pub fn step(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("trajectories are never empty")
    }

    /// Largest `|z| - 1` along the trajectory (zero when the constraint holds).
    pub fn max_constraint_violation(&self) -> f64 {
        self.states
            .iter()
            .map(|s| (s.z.abs() - 1.0).max(0.0))
            .fold(0.0, f64::max)
    }

    /// CSV `t,y,z`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> io::Result<()> {
        export::write_rows(
            out,
            &["t", "y", "z"],
            self.times
                .iter()
                .zip(&self.states)
                .map(|(t, s)| [*t, s.y, s.z]),
        )
    }
}

/// Integrates the inclusion from `x0` over `[0, cfg.horizon]`.
pub fn integrate(
    x0: State,
    model: &DriftModel,
    forcing: &dyn Forcing,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    x0.check("initial state")?;
    let n = cfg.steps()?;
    let h = cfg.h;
    let available = forcing.horizon();
    if available < cfg.horizon * (1.0 - 1e-12) {
        return Err(Error::ForcingTooShort {
            available,
            required: cfg.horizon,
        });
    }
    let drift = model.drift.as_ref();
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(x0);
    let mut x = x0;
    for k in 0..n {
        let t = k as f64 * h;
        let inc = forcing.increment(k, t, h)?;
        x = advance(drift, x, inc, h);
        let t_next = (k + 1) as f64 * h;
        if !x.is_finite() || x.y.abs() > cfg.blowup_cap {
            return Err(Error::BlowUp {
                t: t_next,
                magnitude: x.y.abs(),
                cap: cfg.blowup_cap,
            });
        }
        times.push(t_next);
        states.push(x);
    }
    Ok(Trajectory {
        times,
        states,
        seed: None,
    })
}

/// Sampling grid for [`validate_drift`]: `ny × nz` points on `[-y_max, y_max] × [-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftGrid {
    pub y_max: f64,
    pub ny: usize,
    pub nz: usize,
}

impl Default for DriftGrid {
    fn default() -> Self {
        Self {
            y_max: 10.0,
            ny: 201,
            nz: 41,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if n == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftReport {
    /// Largest value of `y f(y, z) + α y² - C` on the grid.
    pub max_violation: f64,
    pub worst_point: State,
    pub pass: bool,
}

/// Checks the certificate `y f(y, z) ≤ -α y² + C` on a grid.
pub fn validate_drift(model: &DriftModel, grid: &DriftGrid) -> Result<DriftReport> {
    if grid.ny == 0 || grid.nz == 0 {
        return Err(Error::EmptyGrid("drift validation grid"));
    }
    if !(grid.y_max.is_finite() && grid.y_max > 0.0) {
        return Err(invalid("y_max", "must be positive"));
    }
    let mut worst = f64::NEG_INFINITY;
    let mut worst_point = State::default();
    for y in linspace(-grid.y_max, grid.y_max, grid.ny) {
        for z in linspace(-1.0, 1.0, grid.nz) {
            let x = State::new(y, z);
            let excess = y * model.f(x) + model.alpha * y * y - model.c_lyap;
            if !excess.is_finite() {
                return Err(Error::NonFinite("drift certificate"));
            }
            if excess > worst {
                worst = excess;
                worst_point = x;
            }
        }
    }
    Ok(DriftReport {
        max_violation: worst,
        worst_point,
        pass: worst <= DRIFT_TOLERANCE,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DwellReport {
    pub pass: bool,
    pub starts: usize,
    /// Largest distance to `p` reached by any unforced trajectory on `[0, t0]`.
    pub max_distance: f64,
    pub worst_start: State,
}

const DWELL_RINGS: usize = 4;
const DWELL_ANGLES: usize = 16;

/// Checks that unforced trajectories started in `B(p, r0)` stay inside the
/// smooth ball `B(p, smooth_radius)` on `[0, t0]`.
///
/// Starts are `p` itself plus four rings of sixteen points; starts outside `M`
/// are skipped. `cfg.h` sets the step; the horizon is the model's `t0`.
pub fn verify_dwell(model: &DriftModel, r0: f64, cfg: &SolverConfig) -> Result<DwellReport> {
    if !(r0.is_finite() && r0 >= 0.0) {
        return Err(invalid("r0", format!("must be non-negative, got {r0}")));
    }
    let p = model.p;
    let mut starts = vec![p];
    if r0 > 0.0 {
        for ring in 1..=DWELL_RINGS {
            let r = r0 * ring as f64 / DWELL_RINGS as f64;
            for a in 0..DWELL_ANGLES {
                let theta = std::f64::consts::TAU * a as f64 / DWELL_ANGLES as f64;
                let s = State::new(p.y + r * theta.cos(), p.z + r * theta.sin());
                if s.z.abs() <= 1.0 {
                    starts.push(s);
                }
            }
        }
    }
    let h = cfg.h.min(model.t0);
    let sim = SolverConfig {
        h,
        horizon: model.t0,
        seed: cfg.seed,
        blowup_cap: cfg.blowup_cap,
    };
    let mut max_distance = 0.0_f64;
    let mut worst_start = p;
    for &s in &starts {
        let traj = integrate(s, model, &Unforced, &sim)?;
        let d = traj
            .states
            .iter()
            .map(|x| x.distance(&p))
            .fold(0.0, f64::max);
        if d > max_distance {
            max_distance = d;
            worst_start = s;
        }
    }
    Ok(DwellReport {
        pass: max_distance < model.smooth_radius,
        starts: starts.len(),
        max_distance,
        worst_start,
    })
}
