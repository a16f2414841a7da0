use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fit::{EventTimes, TailFit};
use super::kernel::Kernel;
use super::measure::BinConfig;
use crate::dynamics::{lyapunov_value, State};
use crate::ensemble::{par_runs, stream_rng};
use crate::error::{invalid, Error, Result};

/// Parameters of the binned maximal coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingConfig {
    /// Radius of the ball around `p` in which coupling is attempted.
    pub delta_hat: f64,
    /// One-step samples per kernel used to build each coupling.
    pub aux_samples: usize,
    /// Cells on which the two kernels are coupled.
    pub bins: BinConfig,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            delta_hat: 0.25,
            aux_samples: 4096,
            bins: BinConfig {
                ny: 12,
                nz: 6,
                y_max: 3.0,
            },
        }
    }
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_hat.is_finite() && self.delta_hat > 0.0) {
            return Err(invalid("delta_hat", format!("must be positive, got {}", self.delta_hat)));
        }
        if self.aux_samples == 0 {
            return Err(invalid("aux_samples", "must be at least 1"));
        }
        self.bins.validate()
    }
}

/// Exact maximal coupling of the binned one-step laws from `x` and `x'`.
///
/// Both kernels are sampled `aux_samples` times. With probability
/// `Σ min(p_i, q_i)` a common cell is drawn and both chains receive the same
/// representative (one of `x`'s samples in that cell); otherwise each chain
/// draws a cell from its own excess `(p - q)⁺`, `(q - p)⁺` and a representative
/// from its own samples. The failure probability equals the total variation
/// between the two cell histograms.
#[derive(Debug, Clone)]
pub struct MaximalCoupling {
    /// Samples from `x` and `x'`, each sorted by cell, with cell offsets.
    xs: Vec<State>,
    x_start: Vec<usize>,
    ys: Vec<State>,
    y_start: Vec<usize>,
    common: Vec<u64>,
    x_excess: Vec<u64>,
    y_excess: Vec<u64>,
    common_total: u64,
    n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingDraw {
    pub x: State,
    pub x_prime: State,
    pub coupled: bool,
}

fn bucket(bins: &BinConfig, samples: Vec<State>) -> (Vec<State>, Vec<usize>, Vec<u64>) {
    let mut keyed: Vec<(usize, State)> = samples.into_iter().map(|s| (bins.index(s), s)).collect();
    keyed.sort_by_key(|(i, _)| *i);
    let mut counts = vec![0u64; bins.len()];
    for (i, _) in &keyed {
        counts[*i] += 1;
    }
    let mut start = Vec::with_capacity(bins.len() + 1);
    let mut acc = 0;
    start.push(0);
    for c in &counts {
        acc += *c as usize;
        start.push(acc);
    }
    (keyed.into_iter().map(|(_, s)| s).collect(), start, counts)
}

fn pick_cell<R: Rng + ?Sized>(weights: &[u64], total: u64, rng: &mut R) -> usize {
    let mut u = rng.random_range(0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    unreachable!("weights sum to total")
}

impl MaximalCoupling {
    pub fn build<R: Rng + ?Sized>(
        kernel: &Kernel,
        x: State,
        x_prime: State,
        cfg: &CouplingConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.aux_samples;
        let a: Vec<State> = (0..n).map(|_| kernel.step(x, rng)).collect();
        let b: Vec<State> = (0..n).map(|_| kernel.step(x_prime, rng)).collect();
        let (xs, x_start, p) = bucket(&cfg.bins, a);
        let (ys, y_start, q) = bucket(&cfg.bins, b);
        let common: Vec<u64> = p.iter().zip(&q).map(|(a, b)| *a.min(b)).collect();
        let x_excess = p.iter().zip(&common).map(|(a, c)| a - c).collect();
        let y_excess = q.iter().zip(&common).map(|(a, c)| a - c).collect();
        Ok(Self {
            xs,
            x_start,
            ys,
            y_start,
            common_total: common.iter().sum(),
            common,
            x_excess,
            y_excess,
            n: n as u64,
        })
    }

    /// `P{coupling fails}`: the total variation between the two cell histograms.
    pub fn failure_probability(&self) -> f64 {
        1.0 - self.common_total as f64 / self.n as f64
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> CouplingDraw {
        let pick = |pool: &[State], start: &[usize], cell: usize, rng: &mut R| {
            pool[rng.random_range(start[cell]..start[cell + 1])]
        };
        if rng.random_range(0..self.n) < self.common_total {
            let cell = pick_cell(&self.common, self.common_total, rng);
            let s = pick(&self.xs, &self.x_start, cell, rng);
            CouplingDraw {
                x: s,
                x_prime: s,
                coupled: true,
            }
        } else {
            let rest = self.n - self.common_total;
            let cx = pick_cell(&self.x_excess, rest, rng);
            let cy = pick_cell(&self.y_excess, rest, rng);
            CouplingDraw {
                x: pick(&self.xs, &self.x_start, cx, rng),
                x_prime: pick(&self.ys, &self.y_start, cy, rng),
                coupled: false,
            }
        }
    }
}

/// Two copies of the chain driven by the coupling construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoupledPair {
    pub x: State,
    pub x_prime: State,
    pub coupled: bool,
    pub k: u64,
}

impl CoupledPair {
    pub fn new(x: State, x_prime: State) -> Self {
        Self {
            x,
            x_prime,
            coupled: x == x_prime,
            k: 0,
        }
    }
}

/// Outcome of one coupled step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepBranch {
    Shared,
    Maximal,
    Independent,
}

/// Advances a pair by one period.
///
/// Coupled (or equal) pairs share one noise draw. Pairs with both states in
/// the closed ball `B(p, δ̂)` use a [`MaximalCoupling`]; all other pairs move
/// with independent draws.
pub fn coupled_step<R: Rng + ?Sized>(
    pair: CoupledPair,
    kernel: &Kernel,
    p: State,
    cfg: &CouplingConfig,
    rng: &mut R,
) -> Result<(CoupledPair, StepBranch)> {
    cfg.validate()?;
    let k = pair.k + 1;
    if pair.coupled || pair.x == pair.x_prime {
        let x = kernel.step(pair.x, rng);
        return Ok((
            CoupledPair {
                x,
                x_prime: x,
                coupled: true,
                k,
            },
            StepBranch::Shared,
        ));
    }
    if pair.x.distance(&p) <= cfg.delta_hat && pair.x_prime.distance(&p) <= cfg.delta_hat {
        let d = MaximalCoupling::build(kernel, pair.x, pair.x_prime, cfg, rng)?.draw(rng);
        return Ok((
            CoupledPair {
                x: d.x,
                x_prime: d.x_prime,
                coupled: d.coupled,
                k,
            },
            StepBranch::Maximal,
        ));
    }
    let x = kernel.step(pair.x, rng);
    let x_prime = kernel.step(pair.x_prime, rng);
    Ok((
        CoupledPair {
            x,
            x_prime,
            coupled: false,
            k,
        },
        StepBranch::Independent,
    ))
}

/// Coupling times `σ` of an ensemble of coupled chains.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    pub x0: State,
    pub x0_prime: State,
    pub sigma: EventTimes,
    pub fit: Option<TailFit>,
    /// Fitted geometric rate of `P(σ > k)`.
    pub gamma_hat: Option<f64>,
    /// `V(x₀) + V(x₀')`.
    pub v_sum: f64,
    pub attempts: u64,
}

impl CouplingReport {
    /// `E e^{κσ} / (V(x₀) + V(x₀'))` with its standard error.
    pub fn moment_ratio(&self, kappa: f64) -> (f64, f64) {
        let (m, se) = self.sigma.exp_moment(kappa);
        (m / self.v_sum, se / self.v_sum)
    }
}

/// Runs `n` coupled chains for at most `horizon` steps and records `σ`, the
/// first step from which the two copies agree.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled_chains(
    kernel: &Kernel,
    x0: State,
    x0_prime: State,
    p: State,
    cfg: &CouplingConfig,
    horizon: u64,
    n: usize,
    seed: u64,
) -> Result<CouplingReport> {
    cfg.validate()?;
    if n == 0 {
        return Err(invalid("N", "ensemble must contain at least one run"));
    }
    let runs: Vec<Result<(Option<u64>, u64)>> = par_runs(n, |r| {
        let mut rng = stream_rng(seed, r);
        let mut pair = CoupledPair::new(x0, x0_prime);
        if pair.coupled {
            return Ok((Some(0), 0));
        }
        let mut attempts = 0;
        while pair.k < horizon {
            let (next, branch) = coupled_step(pair, kernel, p, cfg, &mut rng)?;
            if branch == StepBranch::Maximal {
                attempts += 1;
            }
            pair = next;
            if pair.coupled {
                return Ok((Some(pair.k), attempts));
            }
        }
        Ok((None, attempts))
    });
    let mut sigma = Vec::with_capacity(n);
    let mut attempts = 0;
    for r in runs {
        let (s, a) = r?;
        sigma.push(s);
        attempts += a;
    }
    let events = EventTimes::from_runs(&sigma, horizon);
    if events.times.is_empty() {
        return Err(Error::NoEvents(format!(
            "no coupling in {n} runs within {horizon} steps"
        )));
    }
    let fit = events.tail_fit().ok();
    Ok(CouplingReport {
        x0,
        x0_prime,
        gamma_hat: fit.map(|f| f.rate),
        fit,
        sigma: events,
        v_sum: lyapunov_value(x0) + lyapunov_value(x0_prime),
        attempts,
    })
}
