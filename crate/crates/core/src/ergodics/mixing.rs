use std::io;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fit::{fit_line, LineFit};
use super::kernel::Kernel;
use super::measure::{tv_distance, BinConfig, EmpiricalMeasure};
use crate::dynamics::{lyapunov_value, State};
use crate::ensemble::{par_runs, stream_rng};
use crate::error::{invalid, Error, Result};
use crate::export;

/// Largest overflow fraction accepted for an invariant-measure estimate.
pub const MAX_OVERFLOW: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvariantConfig {
    pub burn_in: usize,
    pub samples: usize,
    /// Periods between recorded samples.
    pub thinning: usize,
    /// Independent chains sharing the sample budget.
    pub chains: usize,
    pub start: State,
}

impl Default for InvariantConfig {
    fn default() -> Self {
        Self {
            burn_in: 1000,
            samples: 100_000,
            thinning: 1,
            chains: 64,
            start: State::default(),
        }
    }
}

impl InvariantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in < 1 {
            return Err(invalid("burn_in", "must be at least 1"));
        }
        if self.samples == 0 || self.thinning == 0 || self.chains == 0 {
            return Err(invalid("samples", "samples, thinning and chains must be positive"));
        }
        self.start.check("chain start")
    }
}

/// Samples of the chain after burn-in, chain by chain.
pub fn stationary_samples(kernel: &Kernel, cfg: &InvariantConfig, seed: u64) -> Result<Vec<State>> {
    cfg.validate()?;
    let chains = cfg.chains.min(cfg.samples);
    let per = cfg.samples / chains;
    let extra = cfg.samples % chains;
    let parts = par_runs(chains, |c| {
        let mut rng = stream_rng(seed, c);
        let mut x = cfg.start;
        for _ in 0..cfg.burn_in {
            x = kernel.step(x, &mut rng);
        }
        let len = per + usize::from((c as usize) < extra);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            for _ in 0..cfg.thinning {
                x = kernel.step(x, &mut rng);
            }
            out.push(x);
        }
        out
    });
    Ok(parts.concat())
}

/// Histogram `μ̂` of [`stationary_samples`].
pub fn empirical_invariant(
    kernel: &Kernel,
    bins: &BinConfig,
    cfg: &InvariantConfig,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    let m = EmpiricalMeasure::from_states(*bins, stationary_samples(kernel, cfg, seed)?)?;
    if m.overflow_fraction() > MAX_OVERFLOW {
        return Err(Error::Diagnostic(format!(
            "{:.2}% of the invariant samples have |y| > {}; widen y_max",
            100.0 * m.overflow_fraction(),
            bins.y_max
        )));
    }
    Ok(m)
}

/// Initial law `λ` of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialLaw {
    /// Weighted point masses.
    Atoms { atoms: Vec<(State, f64)> },
    /// Run `r` starts from `samples[r mod len]`.
    Samples { samples: Vec<State> },
}

impl InitialLaw {
    pub fn dirac(x: State) -> Self {
        InitialLaw::Atoms {
            atoms: vec![(x, 1.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitialLaw::Atoms { atoms } => {
                if atoms.is_empty() {
                    return Err(invalid("starts", "initial law has no atoms"));
                }
                for (x, w) in atoms {
                    x.check("initial atom")?;
                    if !(w.is_finite() && *w > 0.0) {
                        return Err(invalid("starts", format!("weight {w} must be positive")));
                    }
                }
            }
            InitialLaw::Samples { samples } => {
                if samples.is_empty() {
                    return Err(invalid("starts", "initial sample set is empty"));
                }
                for x in samples {
                    x.check("initial sample")?;
                }
            }
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, run: u64, rng: &mut R) -> State {
        match self {
            InitialLaw::Atoms { atoms } if atoms.len() == 1 => atoms[0].0,
            InitialLaw::Atoms { atoms } => {
                let total: f64 = atoms.iter().map(|(_, w)| w).sum();
                let mut u = rng.random::<f64>() * total;
                for (x, w) in atoms {
                    if u < *w {
                        return *x;
                    }
                    u -= w;
                }
                atoms[atoms.len() - 1].0
            }
            InitialLaw::Samples { samples } => samples[run as usize % samples.len()],
        }
    }

    /// `⟨V, λ⟩`.
    pub fn mean_v(&self) -> f64 {
        match self {
            InitialLaw::Atoms { atoms } => {
                let total: f64 = atoms.iter().map(|(_, w)| w).sum();
                atoms.iter().map(|(x, w)| w * lyapunov_value(*x)).sum::<f64>() / total
            }
            InitialLaw::Samples { samples } => {
                samples.iter().map(|x| lyapunov_value(*x)).sum::<f64>() / samples.len() as f64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixingConfig {
    pub horizon: usize,
    pub n: usize,
    pub bins: BinConfig,
    /// Points enter the fit while `TV > floor_factor × floor`.
    pub floor_factor: f64,
    /// Intra-period time `s` at which `P_{k + s}` is also evaluated.
    pub probe: Option<f64>,
}

impl Default for MixingConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            n: 100_000,
            bins: BinConfig {
                ny: 40,
                nz: 20,
                y_max: 10.0,
            },
            floor_factor: 2.0,
            probe: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RateEstimate {
    Fitted {
        gamma: f64,
        gamma_se: f64,
        /// `exp(intercept) / ⟨V, λ⟩`.
        c_hat: f64,
        first: usize,
        last: usize,
        r_squared: f64,
    },
    /// TV is at the floor from the first step on; assumes `C⟨V, λ⟩ ≥ 1`.
    LowerBound { gamma_min: f64 },
}

impl RateEstimate {
    pub fn gamma(&self) -> f64 {
        match *self {
            RateEstimate::Fitted { gamma, .. } => gamma,
            RateEstimate::LowerBound { gamma_min } => gamma_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvSeries {
    /// Evaluation times in periods.
    pub t: Vec<f64>,
    pub tv: Vec<f64>,
    pub floor: Vec<f64>,
}

impl TvSeries {
    /// CSV `k,tv,floor`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> io::Result<()> {
        export::write_rows(
            out,
            &["k", "tv", "floor"],
            (0..self.t.len()).map(|i| [self.t[i], self.tv[i], self.floor[i]]),
        )
    }

    /// All points within `factor × floor`.
    pub fn at_floor(&self, factor: f64) -> bool {
        self.tv.iter().zip(&self.floor).all(|(t, f)| *t <= factor * f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingReport {
    pub series: TvSeries,
    pub probe: Option<TvSeries>,
    pub rate: RateEstimate,
    pub fit: Option<LineFit>,
    pub v_lambda: f64,
    pub n: usize,
    pub reference_samples: u64,
}

impl MixingReport {
    /// Envelope `Ĉ e^{-γ̂ k} ⟨V, λ⟩`.
    pub fn envelope(&self, k: f64) -> Option<f64> {
        match self.rate {
            RateEstimate::Fitted { gamma, c_hat, .. } => Some(c_hat * (-gamma * k).exp() * self.v_lambda),
            RateEstimate::LowerBound { .. } => None,
        }
    }
}

fn tv_series(
    bins: &BinConfig,
    cells: &[Vec<u32>],
    reference: &EmpiricalMeasure,
    times: impl Iterator<Item = f64>,
) -> Result<TvSeries> {
    let n = cells.len();
    let half = n / 2;
    let scale = 0.5 * (1.0 + n as f64 / reference.total() as f64).sqrt();
    let mut series = TvSeries {
        t: Vec::new(),
        tv: Vec::new(),
        floor: Vec::new(),
    };
    for (k, t) in times.enumerate() {
        let mut all = EmpiricalMeasure::new(*bins)?;
        let mut first = EmpiricalMeasure::new(*bins)?;
        let mut second = EmpiricalMeasure::new(*bins)?;
        for (r, run) in cells.iter().enumerate() {
            let c = run[k] as usize;
            all.add_index(c);
            if r < half {
                first.add_index(c);
            } else if r < 2 * half {
                second.add_index(c);
            }
        }
        series.t.push(t);
        series.tv.push(tv_distance(&all, reference)?);
        series.floor.push(scale * tv_distance(&first, &second)?);
    }
    Ok(series)
}

/// Estimates `‖P*_k λ - μ̂‖` for `k = 1..=horizon` and fits the exponential rate.
///
/// `n` chains start from `λ`; at each `k` their histogram is compared with
/// `reference`. The floor is the split-sample self distance of the ensemble,
/// rescaled to an `n`-versus-`M` comparison. The rate is fitted on the leading
/// run of steps with `TV > floor_factor × floor`.
pub fn estimate_mixing_rate(
    kernel: &Kernel,
    law: &InitialLaw,
    reference: &EmpiricalMeasure,
    cfg: &MixingConfig,
    seed: u64,
) -> Result<MixingReport> {
    law.validate()?;
    cfg.bins.validate()?;
    if reference.config() != cfg.bins {
        return Err(Error::MismatchedBins);
    }
    if cfg.horizon == 0 || cfg.n < 2 {
        return Err(invalid("K", "need a positive horizon and at least two runs"));
    }
    let probe = cfg.probe.map(|s| kernel.probe_index(s)).transpose()?;
    let bins = cfg.bins;
    let runs = par_runs(cfg.n, |r| {
        let mut rng = stream_rng(seed, r);
        let mut x = law.draw(r, &mut rng);
        let mut cells = Vec::with_capacity(cfg.horizon);
        let mut mids = Vec::with_capacity(if probe.is_some() { cfg.horizon } else { 0 });
        for _ in 0..cfg.horizon {
            match probe {
                Some(j) => {
                    let (mid, end) = kernel.step_with_probe(x, j, &mut rng);
                    mids.push(bins.index(mid) as u32);
                    x = end;
                }
                None => x = kernel.step(x, &mut rng),
            }
            cells.push(bins.index(x) as u32);
        }
        (cells, mids)
    });
    let (cells, mids): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let series = tv_series(&bins, &cells, reference, (1..=cfg.horizon).map(|k| k as f64))?;
    let probe_series = match (probe, cfg.probe) {
        (Some(_), Some(s)) => Some(tv_series(
            &bins,
            &mids,
            reference,
            (0..cfg.horizon).map(move |k| k as f64 + s / kernel.model().t0()),
        )?),
        _ => None,
    };

    let v_lambda = law.mean_v();
    let window = series
        .tv
        .iter()
        .zip(&series.floor)
        .take_while(|(t, f)| **t > cfg.floor_factor * **f)
        .count();
    let (rate, fit) = if window >= 2 {
        let xs: Vec<f64> = series.t[..window].to_vec();
        let ys: Vec<f64> = series.tv[..window].iter().map(|v| v.ln()).collect();
        let fit = fit_line(&xs, &ys)?;
        (
            RateEstimate::Fitted {
                gamma: -fit.slope,
                gamma_se: fit.slope_se,
                c_hat: fit.intercept.exp() / v_lambda,
                first: 1,
                last: window,
                r_squared: fit.r_squared,
            },
            Some(fit),
        )
    } else {
        let f1 = (cfg.floor_factor * series.floor[0]).clamp(f64::MIN_POSITIVE, 1.0);
        (RateEstimate::LowerBound { gamma_min: -f1.ln() }, None)
    };
    Ok(MixingReport {
        series,
        probe: probe_series,
        rate,
        fit,
        v_lambda,
        n: cfg.n,
        reference_samples: reference.total(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DriftModel;
    use crate::ergodics::NoiseSpec;

    #[test]
    fn zero_noise_invariant_sits_on_the_rest_line() {
        let k = Kernel::new(DriftModel::canonical(), NoiseSpec::None, 0.05).unwrap();
        let cfg = InvariantConfig {
            burn_in: 50,
            samples: 200,
            chains: 4,
            start: State::new(0.5, 0.2),
            ..Default::default()
        };
        let bins = BinConfig::default();
        let m = empirical_invariant(&k, &bins, &cfg, 0).unwrap();
        let mass: u64 = [99usize, 100]
            .iter()
            .flat_map(|iy| (0..bins.nz).map(move |iz| iy * bins.nz + iz))
            .chain([bins.ny * bins.nz + 99, bins.ny * bins.nz + 100])
            .map(|i| m.counts()[i])
            .sum();
        assert_eq!(mass, 200);
    }

    #[test]
    fn overflow_is_diagnosed() {
        let k = Kernel::new(DriftModel::canonical(), NoiseSpec::None, 0.05).unwrap();
        let cfg = InvariantConfig {
            burn_in: 1,
            samples: 10,
            chains: 1,
            start: State::new(1e3, 0.0),
            ..Default::default()
        };
        assert!(matches!(
            empirical_invariant(&k, &BinConfig::default(), &cfg, 0),
            Err(Error::Diagnostic(_))
        ));
    }

    #[test]
    fn initial_law_weights() {
        let law = InitialLaw::Atoms {
            atoms: vec![(State::new(1.0, 0.0), 1.0), (State::new(3.0, 0.0), 3.0)],
        };
        assert!((law.mean_v() - (0.25 * 2.0 + 0.75 * 10.0)).abs() < 1e-12);
        let mut rng = stream_rng(0, 0);
        let hits = (0..4000).filter(|&r| law.draw(r, &mut rng).y == 3.0).count();
        assert!((hits as f64 / 4000.0 - 0.75).abs() < 0.03);
        assert!(InitialLaw::Samples { samples: vec![] }.validate().is_err());
    }

    #[test]
    fn mixing_series_from_a_point_mass() {
        let k = Kernel::new(DriftModel::canonical(), NoiseSpec::White, 0.05).unwrap();
        let bins = BinConfig::new(20, 10, 10.0).unwrap();
        let inv = InvariantConfig {
            burn_in: 100,
            samples: 20_000,
            ..Default::default()
        };
        let mu = empirical_invariant(&k, &bins, &inv, 1).unwrap();
        let cfg = MixingConfig {
            horizon: 12,
            n: 4000,
            bins,
            probe: Some(0.5),
            ..Default::default()
        };
        let rep = estimate_mixing_rate(&k, &InitialLaw::dirac(State::new(5.0, 0.0)), &mu, &cfg, 2).unwrap();
        assert!(rep.series.tv.iter().all(|t| (0.0..=1.0).contains(t)));
        assert!(rep.series.tv[0] > rep.series.tv[11]);
        assert_eq!(rep.probe.as_ref().unwrap().t[0], 0.5);
        assert!(rep.rate.gamma() > 0.0);
    }
}
