use serde::Serialize;

use crate::error::{Error, Result};

/// Ordinary least squares `y ≈ intercept + slope · x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return Err(Error::Precondition(format!("a line fit needs at least two points, got {n}")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Precondition("line fit abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_se = if n > 2 { (sse / (nf - 2.0) / sxx).sqrt() } else { f64::NAN };
    Ok(LineFit {
        slope,
        intercept,
        slope_se,
        r_squared,
        points: n,
    })
}

/// Geometric-tail fit of `log P(τ > k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit {
    pub line: LineFit,
    /// `-slope`: the fitted exponential rate.
    pub rate: f64,
    pub rate_se: f64,
    pub window: (u64, u64),
}

/// Integer event times from `n` runs, censored at `horizon`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventTimes {
    /// Observed times; censored runs are not listed.
    pub times: Vec<u64>,
    pub censored: usize,
    pub horizon: u64,
}

impl EventTimes {
    pub fn from_runs(runs: &[Option<u64>], horizon: u64) -> Self {
        let times: Vec<u64> = runs.iter().flatten().copied().collect();
        Self {
            censored: runs.len() - times.len(),
            times,
            horizon,
        }
    }

    pub fn runs(&self) -> usize {
        self.times.len() + self.censored
    }

    /// `P(τ > k)` for `k = 0..=horizon`.
    pub fn survival(&self) -> Vec<f64> {
        let n = self.runs().max(1) as f64;
        let mut hist = vec![0u64; self.horizon as usize + 1];
        for &t in &self.times {
            hist[(t as usize).min(self.horizon as usize)] += 1;
        }
        let mut alive = self.runs() as u64;
        hist.iter()
            .map(|&h| {
                alive -= h;
                alive as f64 / n
            })
            .collect()
    }

    /// Least squares on `log P(τ > k)` over `k ≥ 1` while the survival exceeds `10/N`.
    pub fn tail_fit(&self) -> Result<TailFit> {
        if self.times.is_empty() {
            return Err(Error::NoEvents(format!(
                "all {} runs were censored at k = {}",
                self.censored, self.horizon
            )));
        }
        let floor = 10.0 / self.runs() as f64;
        let s = self.survival();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (k, &v) in s.iter().enumerate().skip(1) {
            if v <= floor {
                break;
            }
            xs.push(k as f64);
            ys.push(v.ln());
        }
        if xs.len() < 3 {
            return Err(Error::NoEvents(format!(
                "survival drops below 10/N after {} steps; no tail to fit",
                xs.len()
            )));
        }
        let line = fit_line(&xs, &ys)?;
        Ok(TailFit {
            rate: -line.slope,
            rate_se: line.slope_se,
            window: (1, xs.len() as u64),
            line,
        })
    }

    /// Empirical `E e^{κτ}` and its standard error, censored runs counted at the horizon.
    pub fn exp_moment(&self, kappa: f64) -> (f64, f64) {
        let n = self.runs();
        if n == 0 {
            return (f64::NAN, f64::NAN);
        }
        let vals = self
            .times
            .iter()
            .map(|&t| (kappa * t as f64).exp())
            .chain(std::iter::repeat_n((kappa * self.horizon as f64).exp(), self.censored));
        let (mut s, mut s2) = (0.0, 0.0);
        for v in vals {
            s += v;
            s2 += v * v;
        }
        let nf = n as f64;
        let mean = s / nf;
        let var = (s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
        (mean, (var / nf).sqrt())
    }
}
