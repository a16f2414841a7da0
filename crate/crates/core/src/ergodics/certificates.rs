use serde::Serialize;

use super::fit::{EventTimes, TailFit};
use super::kernel::Kernel;
use super::measure::{tv_distance, BinConfig, EmpiricalMeasure};
use crate::dynamics::{lyapunov_value, State};
use crate::ensemble::{derive_seed, par_runs, stream_rng};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovPoint {
    pub x0: State,
    pub v0: f64,
    /// Monte Carlo estimate of `E V(x₁)`.
    pub mean: f64,
    pub se: f64,
    /// `q V(x₀) + A` with the predicted constants.
    pub bound: f64,
}

impl LyapunovPoint {
    /// Excess over the bound in standard errors (`+∞` when deterministic and violated).
    pub fn excess_in_se(&self) -> f64 {
        let d = self.mean - self.bound;
        if self.se > 0.0 {
            d / self.se
        } else if d > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub points: Vec<LyapunovPoint>,
    /// Predicted `q = e^{-2αT₀}`.
    pub q: f64,
    /// Predicted `A = (2C + 1)/(2α)`.
    pub a: f64,
    /// Least-squares slope of `E V(x₁)` against `V(x₀)`.
    pub q_hat: f64,
    /// Smallest offset with `E V(x₁) ≤ q̂ V(x₀) + Â` on the grid.
    pub a_hat: f64,
    /// Every point within 3 standard errors of `q V + A`.
    pub pass: bool,
    /// Largest violation of `q V + A`, in standard errors.
    pub worst_excess_se: f64,
    /// `A + 1 - q`: the offset obtained by applying the same moment estimate to `V = 1 + y²`.
    pub shifted_offset: f64,
    /// Every point within 3 standard errors of `q V + A + 1 - q`.
    pub shifted_pass: bool,
    pub n: usize,
}

/// Monte Carlo check of `E_x V(x₁) ≤ q V(x) + A` over a grid of starts.
pub fn lyapunov_drift_check(kernel: &Kernel, grid: &[State], n: usize, seed: u64) -> Result<LyapunovReport> {
    if n < 2 {
        return Err(Error::Precondition(format!(
            "ensemble of {n} runs is too small to attach a standard error"
        )));
    }
    if grid.is_empty() {
        return Err(Error::EmptyGrid("Lyapunov start grid"));
    }
    let model = kernel.model();
    let q = (-2.0 * model.alpha() * model.t0()).exp();
    let a = (2.0 * model.c_lyap() + 1.0) / (2.0 * model.alpha());
    let shifted_offset = a + 1.0 - q;
    let mut points = Vec::with_capacity(grid.len());
    for (i, &x0) in grid.iter().enumerate() {
        x0.check("grid point")?;
        let s = derive_seed(seed, i as u64);
        let vs = par_runs(n, |r| lyapunov_value(kernel.step(x0, &mut stream_rng(s, r))));
        let nf = n as f64;
        let mean = vs.iter().sum::<f64>() / nf;
        let var = vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        let v0 = lyapunov_value(x0);
        points.push(LyapunovPoint {
            x0,
            v0,
            mean,
            se: (var / nf).sqrt(),
            bound: q * v0 + a,
        });
    }
    let within = |offset: f64| {
        points.iter().all(|p| p.mean <= q * p.v0 + offset + 3.0 * p.se)
    };
    let (q_hat, a_hat) = if points.len() >= 2 && points.iter().any(|p| p.v0 != points[0].v0) {
        let xs: Vec<f64> = points.iter().map(|p| p.v0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.mean).collect();
        let fit = super::fit::fit_line(&xs, &ys)?;
        let off = points.iter().map(|p| p.mean - fit.slope * p.v0).fold(f64::NEG_INFINITY, f64::max);
        (fit.slope, off)
    } else {
        (q, points.iter().map(|p| p.mean - q * p.v0).fold(f64::NEG_INFINITY, f64::max))
    };
    Ok(LyapunovReport {
        pass: within(a),
        worst_excess_se: points.iter().map(LyapunovPoint::excess_in_se).fold(f64::NEG_INFINITY, f64::max),
        shifted_pass: within(shifted_offset),
        shifted_offset,
        points,
        q,
        a,
        q_hat,
        a_hat,
        n,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HittingStats {
    pub start: State,
    pub events: EventTimes,
    pub fit: Option<TailFit>,
    /// Fitted geometric rate of `P(τ > k)`; `E e^{κτ}` is finite for `κ` below it.
    pub kappa_hat: Option<f64>,
}

/// First entrance times `τ_δ = min{k ≥ 1 : |x_k - p| < δ}` of `n` chains from `x0`.
#[allow(clippy::too_many_arguments)]
pub fn hitting_time(
    kernel: &Kernel,
    x0: State,
    p: State,
    delta: f64,
    horizon: u64,
    n: usize,
    seed: u64,
) -> Result<HittingStats> {
    x0.check("initial state")?;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(invalid("delta", format!("must be positive, got {delta}")));
    }
    if !(p.z.abs() + delta < 1.0) {
        return Err(Error::Precondition(format!(
            "ball B(p, {delta}) around {p} is not inside the interior |z| < 1"
        )));
    }
    if n == 0 || horizon == 0 {
        return Err(invalid("N", "ensemble and horizon must be positive"));
    }
    let runs = par_runs(n, |r| {
        let mut rng = stream_rng(seed, r);
        let mut x = x0;
        for k in 1..=horizon {
            x = kernel.step(x, &mut rng);
            if x.distance(&p) < delta {
                return Some(k);
            }
        }
        None
    });
    let events = EventTimes::from_runs(&runs, horizon);
    if events.times.is_empty() {
        return Err(Error::NoEvents(format!(
            "none of {n} runs entered B({p}, {delta}) within {horizon} steps"
        )));
    }
    let fit = events.tail_fit().ok();
    Ok(HittingStats {
        start: x0,
        kappa_hat: fit.map(|f| f.rate),
        fit,
        events,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelTvEstimate {
    pub tv: f64,
    /// Split-sample estimate of the value returned for two identical kernels.
    pub floor: f64,
    pub n: usize,
    pub common_random_numbers: bool,
}

/// Histogram estimate of `‖P₁(x, ·) - P₁(x', ·)‖` from `n` one-step samples per start.
///
/// With `common_random_numbers` both starts use the same noise draws.
pub fn estimate_kernel_tv(
    kernel: &Kernel,
    x: State,
    x_prime: State,
    n: usize,
    bins: &BinConfig,
    seed: u64,
    common_random_numbers: bool,
) -> Result<KernelTvEstimate> {
    bins.validate()?;
    x.check("x")?;
    x_prime.check("x'")?;
    if n < 2 {
        return Err(invalid("N", format!("need at least two samples, got {n}")));
    }
    let sx = derive_seed(seed, 1);
    let sy = if common_random_numbers { sx } else { derive_seed(seed, 2) };
    let a = par_runs(n, |r| bins.index(kernel.step(x, &mut stream_rng(sx, r))));
    let b = par_runs(n, |r| bins.index(kernel.step(x_prime, &mut stream_rng(sy, r))));
    let hist = |idx: &[usize]| {
        let mut m = EmpiricalMeasure::new(*bins)?;
        idx.iter().for_each(|&i| m.add_index(i));
        Ok::<_, Error>(m)
    };
    let tv = tv_distance(&hist(&a)?, &hist(&b)?)?;
    let half = n / 2;
    let split = tv_distance(&hist(&a[..half])?, &hist(&a[half..2 * half])?)?;
    Ok(KernelTvEstimate {
        tv,
        floor: split / std::f64::consts::SQRT_2,
        n,
        common_random_numbers,
    })
}
