use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{advance, grid_steps, DriftModel, State};
use crate::error::{invalid, Error, Result};
use crate::noise::{basis_unchecked, DecomposableLaw, DensitySampler};

/// Law of the forcing on one period `[0, T₀]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    None,
    #[default]
    White,
    Decomposable(DecomposableLaw),
}

#[derive(Debug, Clone)]
struct DecomposableTable {
    weights: Vec<f64>,
    /// `φ_j(t_k)`, row-major in `k`.
    phi: Vec<f64>,
    sampler: DensitySampler,
}

/// The one-period transition `x ↦ x₁` of the constrained system, simulated by
/// the projected Euler scheme with `T₀/h` sub-steps.
#[derive(Debug, Clone)]
pub struct Kernel {
    model: DriftModel,
    noise: NoiseSpec,
    h: f64,
    steps: usize,
    table: Option<DecomposableTable>,
}

impl Kernel {
    pub fn new(model: DriftModel, noise: NoiseSpec, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(invalid("h", format!("must be positive, got {h}")));
        }
        let steps = grid_steps(model.t0(), h)?;
        let table = match &noise {
            NoiseSpec::Decomposable(law) => {
                law.validate()?;
                let mut phi = Vec::with_capacity(steps * law.j);
                for k in 0..steps {
                    let t = k as f64 * h;
                    phi.extend((1..=law.j).map(|j| basis_unchecked(j, t, model.t0()).0));
                }
                Some(DecomposableTable {
                    weights: law.weights_vec(),
                    phi,
                    sampler: law.rho.sampler()?,
                })
            }
            _ => None,
        };
        Ok(Self {
            model,
            noise,
            h,
            steps,
            table,
        })
    }

    pub fn model(&self) -> &DriftModel {
        &self.model
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn substeps(&self) -> usize {
        self.steps
    }

    /// One period from `x`.
    pub fn step<R: Rng + ?Sized>(&self, x: State, rng: &mut R) -> State {
        self.run(x, self.steps, rng).1
    }

    /// One period from `x`, also returning the state after `probe` sub-steps.
    pub fn step_with_probe<R: Rng + ?Sized>(&self, x: State, probe: usize, rng: &mut R) -> (State, State) {
        self.run(x, probe, rng)
    }

    fn run<R: Rng + ?Sized>(&self, mut x: State, probe: usize, rng: &mut R) -> (State, State) {
        let drift = self.model.drift().as_ref();
        let h = self.h;
        let mut at_probe = x;
        match (&self.noise, &self.table) {
            (NoiseSpec::None, _) => {
                for k in 0..self.steps {
                    if k == probe {
                        at_probe = x;
                    }
                    x = advance(drift, x, 0.0, h);
                }
            }
            (NoiseSpec::White, _) => {
                let sd = h.sqrt();
                for k in 0..self.steps {
                    if k == probe {
                        at_probe = x;
                    }
                    let dw: f64 = rng.sample(StandardNormal);
                    x = advance(drift, x, sd * dw, h);
                }
            }
            (NoiseSpec::Decomposable(_), Some(t)) => {
                let j = t.weights.len();
                let coeffs: Vec<f64> = t.weights.iter().map(|b| b * t.sampler.sample(rng)).collect();
                for k in 0..self.steps {
                    if k == probe {
                        at_probe = x;
                    }
                    let row = &t.phi[k * j..(k + 1) * j];
                    let u: f64 = row.iter().zip(&coeffs).map(|(p, c)| p * c).sum();
                    x = advance(drift, x, h * u, h);
                }
            }
            (NoiseSpec::Decomposable(_), None) => unreachable!("table built in Kernel::new"),
        }
        if probe >= self.steps {
            at_probe = x;
        }
        (at_probe, x)
    }

    /// Sub-step index closest to the intra-period time `s ∈ [0, T₀]`.
    pub fn probe_index(&self, s: f64) -> Result<usize> {
        if !(s >= 0.0 && s <= self.model.t0()) {
            return Err(Error::Precondition(format!("probe time {s} lies outside [0, T₀]")));
        }
        Ok((s / self.h).round() as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::stream_rng;
    use crate::noise::{Density, Weights};

    #[test]
    fn zero_noise_matches_deterministic_decay() {
        let k = Kernel::new(DriftModel::canonical(), NoiseSpec::None, 1e-4).unwrap();
        let x = k.step(State::new(2.0, 0.0), &mut stream_rng(0, 0));
        assert!((x.y - 2.0 * (-1.0f64).exp()).abs() < 1e-4);
        assert_eq!(x.z, 1.0);
    }

    #[test]
    fn probe_returns_intermediate_state() {
        let k = Kernel::new(DriftModel::canonical(), NoiseSpec::None, 1e-3).unwrap();
        let (mid, end) = k.step_with_probe(State::new(1.0, -1.0), 500, &mut stream_rng(0, 0));
        assert!((mid.y - (-0.5f64).exp()).abs() < 1e-3);
        assert!((end.y - (-1.0f64).exp()).abs() < 1e-3);
        assert_eq!(k.probe_index(0.5).unwrap(), 500);
    }

    #[test]
    fn decomposable_noise_with_degenerate_density_is_deterministic() {
        let law = DecomposableLaw::new(
            Weights::Geometric { first: 1.0, ratio: 0.1 },
            Density::Degenerate { at: 0.0 },
            16,
        )
        .unwrap();
        let k = Kernel::new(DriftModel::canonical(), NoiseSpec::Decomposable(law), 1e-3).unwrap();
        let a = k.step(State::new(0.3, 0.1), &mut stream_rng(1, 0));
        let b = k.step(State::new(0.3, 0.1), &mut stream_rng(2, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn constraint_is_exact_under_white_noise() {
        let k = Kernel::new(DriftModel::canonical(), NoiseSpec::White, 1e-2).unwrap();
        let mut rng = stream_rng(9, 0);
        let mut x = State::new(0.0, 0.0);
        for _ in 0..2000 {
            x = k.step(x, &mut rng);
            assert!(x.z.abs() <= 1.0);
        }
    }
}
