//! Random forcing: Brownian segments, the integrated trigonometric basis and
//! decomposable laws.
//!
//! The basis `{φ_j}` of `L²((0, T₀))` is ordered constant, cosine, sine:
//!
//! ```text
//! φ₁(t)      = 1/√T₀
//! φ_{2m}(t)  = √(2/T₀) cos(2πmt/T₀)
//! φ_{2m+1}(t)= √(2/T₀) sin(2πmt/T₀)
//! ```
//!
//! and `e_j(t) = ∫₀ᵗ φ_j` are its antiderivatives. A Brownian path on
//! `[0, T₀]` expands as `β = Σ ξ_n e_n` with i.i.d. standard normal `ξ_n`.

use std::f64::consts::TAU;
use std::io;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{grid_steps, Forcing};
use crate::ensemble::stream_rng;
use crate::error::{invalid, Error, Result};
use crate::export;

/// Default truncation level of the basis.
pub const DEFAULT_TRUNCATION: usize = 64;

/// Largest admissible tail `Σ_{j>J} b_j²` of a decomposable law.
pub const TAIL_TOLERANCE: f64 = 1e-8;

/// How [`ForcingPath`] values enter the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForcingKind {
    /// Values of a path `η` with `η(0) = 0`; each step consumes the increment of `η`.
    Path,
    /// Values of the forcing `ζ` itself; each step consumes `h·ζ(t_left)`.
    Direct,
}

/// A forcing sampled on a uniform grid starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingPath {
    pub kind: ForcingKind,
    pub step: f64,
    pub values: Vec<f64>,
}

impl ForcingPath {
    pub fn new(kind: ForcingKind, step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(invalid("step", format!("must be positive, got {step}")));
        }
        if values.is_empty() {
            return Err(Error::EmptyGrid("forcing path"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forcing path values"));
        }
        if kind == ForcingKind::Path && values[0] != 0.0 {
            return Err(Error::Precondition(format!(
                "a path must start at 0, got {}",
                values[0]
            )));
        }
        Ok(Self { kind, step, values })
    }

    pub fn zero(kind: ForcingKind, step: f64, steps: usize) -> Self {
        Self {
            kind,
            step,
            values: vec![0.0; steps + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    pub fn sup_distance(&self, other: &ForcingPath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// CSV `t,value`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> io::Result<()> {
        export::write_rows(
            out,
            &["t", "value"],
            self.values
                .iter()
                .enumerate()
                .map(|(i, v)| [self.time(i), *v]),
        )
    }
}

impl Forcing for ForcingPath {
    fn horizon(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    fn increment(&self, k: usize, _t: f64, h: f64) -> Result<f64> {
        let stride = grid_steps(h, self.step)?;
        if stride == 0 {
            return Err(invalid("h", "solver step is finer than the forcing grid"));
        }
        let i = k * stride;
        let j = i + stride;
        if j >= self.values.len() {
            return Err(Error::ForcingTooShort {
                available: self.horizon(),
                required: j as f64 * self.step,
            });
        }
        Ok(match self.kind {
            ForcingKind::Path => self.values[j] - self.values[i],
            ForcingKind::Direct => h * self.values[i],
        })
    }
}

/// The truncated basis `{φ_j, e_j}_{j ≤ J}` on `[0, T₀]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub t0: f64,
    pub j: usize,
}

impl BasisSpec {
    pub fn new(t0: f64, j: usize) -> Result<Self> {
        if !(t0.is_finite() && t0 > 0.0) {
            return Err(invalid("t0", format!("must be positive, got {t0}")));
        }
        if j < 1 {
            return Err(invalid("J", "truncation level must be at least 1"));
        }
        Ok(Self { t0, j })
    }
}

#[inline]
pub(crate) fn basis_unchecked(j: usize, t: f64, t0: f64) -> (f64, f64) {
    if j == 1 {
        let c = 1.0 / t0.sqrt();
        return (c, c * t);
    }
    let m = (j / 2) as f64;
    let amp = (2.0 / t0).sqrt();
    let w = TAU * m / t0;
    let (s, c) = (w * t).sin_cos();
    if j % 2 == 0 {
        (amp * c, amp * s / w)
    } else {
        (amp * s, amp * (1.0 - c) / w)
    }
}

/// `(φ_j(t), e_j(t))` for `1 ≤ j` and `0 ≤ t ≤ T₀`.
pub fn basis_eval(j: usize, t: f64, t0: f64) -> Result<(f64, f64)> {
    if j < 1 {
        return Err(invalid("j", "basis index starts at 1"));
    }
    if !(t0.is_finite() && t0 > 0.0) {
        return Err(invalid("t0", format!("must be positive, got {t0}")));
    }
    if !(t >= 0.0 && t <= t0 * (1.0 + 1e-12)) {
        return Err(invalid("t", format!("{t} lies outside [0, {t0}]")));
    }
    Ok(basis_unchecked(j, t, t0))
}

/// Brownian path on `[0, t0]` with step `h`, from the stream of `seed`.
pub fn sample_brownian(t0: f64, h: f64, seed: u64) -> Result<ForcingPath> {
    sample_brownian_with(t0, h, &mut stream_rng(seed, 0))
}

pub fn sample_brownian_with<R: Rng + ?Sized>(t0: f64, h: f64, rng: &mut R) -> Result<ForcingPath> {
    if !(h.is_finite() && h > 0.0) {
        return Err(invalid("h", format!("must be positive, got {h}")));
    }
    if !(t0.is_finite() && t0 > 0.0) {
        return Err(invalid("t0", format!("must be positive, got {t0}")));
    }
    let n = grid_steps(t0, h)?;
    let sd = h.sqrt();
    let mut values = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    values.push(0.0);
    for _ in 0..n {
        let dw: f64 = rng.sample(StandardNormal);
        acc += sd * dw;
        values.push(acc);
    }
    Ok(ForcingPath {
        kind: ForcingKind::Path,
        step: h,
        values,
    })
}

/// The projection `P_{F_J}` onto `span{e_1, …, e_J}` on a fixed grid.
///
/// Coefficients come from left-point sums `b_n = Σ φ_n(t_k) Δη_k`, corrected by
/// the discrete Gram matrix `G_nm = Σ φ_n(t_k) Δe_m(t_k)` so that the map is an
/// exact projection on the grid (it fixes every element of `F_J`).
#[derive(Debug, Clone)]
pub struct Projector {
    basis: BasisSpec,
    step: f64,
    /// `φ_n(t_k)`, row `n`, `k = 0..steps`.
    phi: Vec<Vec<f64>>,
    /// `e_n(t_k)`, row `n`, `k = 0..=steps`.
    e: Vec<Vec<f64>>,
    gram: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Projector {
    pub fn new(basis: BasisSpec, step: f64) -> Result<Self> {
        let basis = BasisSpec::new(basis.t0, basis.j)?;
        if !(step.is_finite() && step > 0.0) {
            return Err(invalid("step", format!("must be positive, got {step}")));
        }
        let n = grid_steps(basis.t0, step)?;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
        let mut phi = Vec::with_capacity(basis.j);
        let mut e = Vec::with_capacity(basis.j);
        for j in 1..=basis.j {
            let (p, ee): (Vec<f64>, Vec<f64>) = times
                .iter()
                .map(|&t| basis_unchecked(j, t, basis.t0))
                .unzip();
            phi.push(p[..n].to_vec());
            e.push(ee);
        }
        let gram = DMatrix::from_fn(basis.j, basis.j, |r, c| {
            let row = &phi[r];
            let col = &e[c];
            (0..n).map(|k| row[k] * (col[k + 1] - col[k])).sum::<f64>()
        });
        let lu = gram.lu();
        if !lu.is_invertible() {
            return Err(Error::Diagnostic("discrete Gram matrix is singular".into()));
        }
        Ok(Self {
            basis,
            step,
            phi,
            e,
            gram: lu,
        })
    }

    pub fn basis(&self) -> BasisSpec {
        self.basis
    }

    /// Coefficients `ξ_1..ξ_J` of `path`.
    pub fn coefficients(&self, path: &ForcingPath) -> Result<Vec<f64>> {
        if path.kind != ForcingKind::Path {
            return Err(Error::Precondition("projection needs a path (η(0) = 0)".into()));
        }
        let n = self.e[0].len() - 1;
        if path.values.len() != n + 1 || (path.step - self.step).abs() > 1e-12 * self.step {
            return Err(Error::Precondition(format!(
                "path grid ({} points, step {}) does not match the projector ({} points, step {})",
                path.values.len(),
                path.step,
                n + 1,
                self.step
            )));
        }
        let v = &path.values;
        let rhs = DVector::from_fn(self.basis.j, |r, _| {
            let row = &self.phi[r];
            (0..n).map(|k| row[k] * (v[k + 1] - v[k])).sum::<f64>()
        });
        let xi = self
            .gram
            .solve(&rhs)
            .ok_or_else(|| Error::Diagnostic("Gram solve failed".into()))?;
        Ok(xi.iter().copied().collect())
    }

    /// `Σ_{n ≤ J} ξ_n e_n` on the grid.
    pub fn reconstruct(&self, xi: &[f64]) -> ForcingPath {
        let len = self.e[0].len();
        let mut values = vec![0.0; len];
        for (c, row) in xi.iter().zip(&self.e) {
            for (v, e) in values.iter_mut().zip(row) {
                *v += c * e;
            }
        }
        values[0] = 0.0;
        ForcingPath {
            kind: ForcingKind::Path,
            step: self.step,
            values,
        }
    }

    pub fn project(&self, path: &ForcingPath) -> Result<ForcingPath> {
        Ok(self.reconstruct(&self.coefficients(path)?))
    }
}

/// `P_{F_J}` applied to `path`.
pub fn project_path(path: &ForcingPath, basis: &BasisSpec) -> Result<ForcingPath> {
    if basis.j < 1 {
        return Err(invalid("J", "truncation level must be at least 1"));
    }
    Projector::new(*basis, path.step)?.project(path)
}

/// Weights `b_j` of a decomposable law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Weights {
    /// `b_1, b_2, …` listed; entries past the list are zero.
    Explicit { values: Vec<f64> },
    /// `b_j = first · ratio^{j-1}`.
    Geometric { first: f64, ratio: f64 },
    /// `b_j = scale · j^{-exponent}`.
    Power { scale: f64, exponent: f64 },
}

impl Weights {
    pub fn weight(&self, j: usize) -> f64 {
        match self {
            Weights::Explicit { values } => values.get(j - 1).copied().unwrap_or(0.0),
            Weights::Geometric { first, ratio } => first * ratio.powi(j as i32 - 1),
            Weights::Power { scale, exponent } => scale * (j as f64).powf(-exponent),
        }
    }

    /// `Σ_{j > truncation} b_j²`, or an upper bound for it.
    pub fn tail_sq(&self, truncation: usize) -> f64 {
        match self {
            Weights::Explicit { values } => values.iter().skip(truncation).map(|b| b * b).sum(),
            Weights::Geometric { first, ratio } => {
                let r2 = ratio * ratio;
                if r2 >= 1.0 {
                    f64::INFINITY
                } else {
                    first * first * r2.powi(truncation as i32) / (1.0 - r2)
                }
            }
            Weights::Power { scale, exponent } => {
                let s = 2.0 * exponent;
                if s <= 1.0 {
                    f64::INFINITY
                } else {
                    // Σ_{j>J} j^{-s} ≤ ∫_J^∞ x^{-s} dx
                    scale * scale * (truncation as f64).powf(1.0 - s) / (s - 1.0)
                }
            }
        }
    }
}

/// The common density `ρ` of the coefficients `ξ_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Density {
    Normal { mean: f64, sd: f64 },
    /// Point mass, for deterministic test laws.
    Degenerate { at: f64 },
}

impl Default for Density {
    fn default() -> Self {
        Density::Normal { mean: 0.0, sd: 1.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum DensitySampler {
    Normal(Normal<f64>),
    Degenerate(f64),
}

impl DensitySampler {
    #[inline]
    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DensitySampler::Normal(n) => n.sample(rng),
            DensitySampler::Degenerate(v) => *v,
        }
    }
}

impl Density {
    pub(crate) fn sampler(&self) -> Result<DensitySampler> {
        match *self {
            Density::Normal { mean, sd } => {
                if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
                    return Err(invalid("rho", format!("normal(mean {mean}, sd {sd}) cannot be sampled")));
                }
                Normal::new(mean, sd)
                    .map(DensitySampler::Normal)
                    .map_err(|e| invalid("rho", e.to_string()))
            }
            Density::Degenerate { at } => {
                if !at.is_finite() {
                    return Err(invalid("rho", "degenerate value must be finite"));
                }
                Ok(DensitySampler::Degenerate(at))
            }
        }
    }
}

/// The law of `η = Σ_{j ≤ J} b_j ξ_j φ_j` with i.i.d. `ξ_j ~ ρ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposableLaw {
    pub weights: Weights,
    pub rho: Density,
    pub j: usize,
}

impl DecomposableLaw {
    pub fn new(weights: Weights, rho: Density, j: usize) -> Result<Self> {
        let law = Self { weights, rho, j };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        if self.j < 1 {
            return Err(invalid("J", "truncation level must be at least 1"));
        }
        for i in 1..=self.j {
            let b = self.weights.weight(i);
            if !(b.is_finite() && b != 0.0) {
                return Err(invalid("b", format!("b_{i} = {b} must be finite and non-zero")));
            }
        }
        let tail = self.weights.tail_sq(self.j);
        if !(tail < TAIL_TOLERANCE) {
            return Err(invalid(
                "b",
                format!("tail Σ_{{j>{}}} b_j² = {tail:e} is not below {TAIL_TOLERANCE:e}", self.j),
            ));
        }
        self.rho.sampler()?;
        Ok(())
    }

    pub fn weights_vec(&self) -> Vec<f64> {
        (1..=self.j).map(|i| self.weights.weight(i)).collect()
    }

    pub fn sum_sq(&self) -> f64 {
        self.weights_vec().iter().map(|b| b * b).sum()
    }
}

/// One draw of a decomposable forcing on the grid of step `h` over `[0, T₀]`.
pub fn sample_decomposable(
    law: &DecomposableLaw,
    basis: &BasisSpec,
    h: f64,
    seed: u64,
) -> Result<ForcingPath> {
    sample_decomposable_with(law, basis, h, &mut stream_rng(seed, 0))
}

pub fn sample_decomposable_with<R: Rng + ?Sized>(
    law: &DecomposableLaw,
    basis: &BasisSpec,
    h: f64,
    rng: &mut R,
) -> Result<ForcingPath> {
    law.validate()?;
    let basis = BasisSpec::new(basis.t0, basis.j)?;
    if basis.j != law.j {
        return Err(Error::Precondition(format!(
            "basis truncation {} differs from the law's {}",
            basis.j, law.j
        )));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(invalid("h", format!("must be positive, got {h}")));
    }
    let n = grid_steps(basis.t0, h)?;
    let rho = law.rho.sampler()?;
    let coeffs: Vec<f64> = (1..=law.j)
        .map(|j| law.weights.weight(j) * rho.sample(rng))
        .collect();
    let values = (0..=n)
        .map(|k| {
            let t = k as f64 * h;
            coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c * basis_unchecked(i + 1, t, basis.t0).0)
                .sum()
        })
        .collect();
    Ok(ForcingPath {
        kind: ForcingKind::Direct,
        step: h,
        values,
    })
}

/// Trapezoidal `∫₀^{T} a·b` of two series on a common grid of step `h`.
pub fn trapezoid_inner(a: &[f64], b: &[f64], h: f64) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = (1..n - 1).map(|k| a[k] * b[k]).sum();
    h * (inner + 0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1]))
}
