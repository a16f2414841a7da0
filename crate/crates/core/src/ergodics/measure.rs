use std::io;

use serde::{Deserialize, Serialize};

use crate::dynamics::State;
use crate::error::{invalid, Error, Result};
use crate::export;

/// Histogram layout: `ny × nz` interior cells on `[-y_max, y_max] × (-1, 1)`,
/// `ny` cells on each boundary line, one overflow cell for `|y| > y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinConfig {
    pub ny: usize,
    pub nz: usize,
    pub y_max: f64,
}

impl Default for BinConfig {
    fn default() -> Self {
        Self {
            ny: 200,
            nz: 100,
            y_max: 10.0,
        }
    }
}

impl BinConfig {
    pub fn new(ny: usize, nz: usize, y_max: f64) -> Result<Self> {
        let cfg = Self { ny, nz, y_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ny == 0 || self.nz == 0 {
            return Err(invalid("bins", format!("{} × {} grid is degenerate", self.ny, self.nz)));
        }
        if !(self.y_max.is_finite() && self.y_max > 0.0) {
            return Err(invalid("y_max", format!("must be positive, got {}", self.y_max)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ny * self.nz + 2 * self.ny + 1
    }

    pub fn overflow_index(&self) -> usize {
        self.len() - 1
    }

    fn y_cell(&self, y: f64) -> usize {
        let u = (y + self.y_max) / (2.0 * self.y_max) * self.ny as f64;
        (u.floor().max(0.0) as usize).min(self.ny - 1)
    }

    /// Cell holding `x`. States on `z = ±1` go to the line cells.
    pub fn index(&self, x: State) -> usize {
        if !(x.y.abs() <= self.y_max) {
            return self.overflow_index();
        }
        let iy = self.y_cell(x.y);
        if x.z >= 1.0 {
            self.ny * self.nz + iy
        } else if x.z <= -1.0 {
            self.ny * self.nz + self.ny + iy
        } else {
            let iz = (((x.z + 1.0) / 2.0 * self.nz as f64).floor() as usize).min(self.nz - 1);
            iy * self.nz + iz
        }
    }

    /// `(y_lo, y_hi, z_lo, z_hi)` of a cell; line cells have `z_lo = z_hi = ±1`,
    /// the overflow cell is reported with infinite `y` bounds and `z` range `[-1, 1]`.
    pub fn bounds(&self, i: usize) -> (f64, f64, f64, f64) {
        let dy = 2.0 * self.y_max / self.ny as f64;
        let y_of = |iy: usize| (-self.y_max + iy as f64 * dy, -self.y_max + (iy + 1) as f64 * dy);
        let interior = self.ny * self.nz;
        if i < interior {
            let (iy, iz) = (i / self.nz, i % self.nz);
            let dz = 2.0 / self.nz as f64;
            let (lo, hi) = y_of(iy);
            (lo, hi, -1.0 + iz as f64 * dz, -1.0 + (iz + 1) as f64 * dz)
        } else if i < interior + self.ny {
            let (lo, hi) = y_of(i - interior);
            (lo, hi, 1.0, 1.0)
        } else if i < interior + 2 * self.ny {
            let (lo, hi) = y_of(i - interior - self.ny);
            (lo, hi, -1.0, -1.0)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY, -1.0, 1.0)
        }
    }

    /// Cell of the image under `(y, z) ↦ (-y, -z)`.
    pub fn reflect_index(&self, i: usize) -> usize {
        let interior = self.ny * self.nz;
        if i < interior {
            let (iy, iz) = (i / self.nz, i % self.nz);
            (self.ny - 1 - iy) * self.nz + (self.nz - 1 - iz)
        } else if i < interior + self.ny {
            interior + self.ny + (self.ny - 1 - (i - interior))
        } else if i < interior + 2 * self.ny {
            interior + (self.ny - 1 - (i - interior - self.ny))
        } else {
            i
        }
    }
}

/// Counts of samples over a [`BinConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    cfg: BinConfig,
    counts: Vec<u64>,
    total: u64,
}

impl EmpiricalMeasure {
    pub fn new(cfg: BinConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            counts: vec![0; cfg.len()],
            total: 0,
        })
    }

    pub fn from_states<I: IntoIterator<Item = State>>(cfg: BinConfig, states: I) -> Result<Self> {
        let mut m = Self::new(cfg)?;
        for x in states {
            m.add(x);
        }
        Ok(m)
    }

    pub fn from_counts(cfg: BinConfig, counts: Vec<u64>) -> Result<Self> {
        cfg.validate()?;
        if counts.len() != cfg.len() {
            return Err(Error::MismatchedBins);
        }
        let total = counts.iter().sum();
        Ok(Self { cfg, counts, total })
    }

    pub fn add(&mut self, x: State) {
        self.add_index(self.cfg.index(x));
    }

    pub fn add_index(&mut self, i: usize) {
        self.counts[i] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &EmpiricalMeasure) -> Result<()> {
        if self.cfg != other.cfg {
            return Err(Error::MismatchedBins);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    pub fn config(&self) -> BinConfig {
        self.cfg
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn interior(&self) -> &[u64] {
        &self.counts[..self.cfg.ny * self.cfg.nz]
    }

    pub fn upper_line(&self) -> &[u64] {
        let s = self.cfg.ny * self.cfg.nz;
        &self.counts[s..s + self.cfg.ny]
    }

    pub fn lower_line(&self) -> &[u64] {
        let s = self.cfg.ny * self.cfg.nz + self.cfg.ny;
        &self.counts[s..s + self.cfg.ny]
    }

    pub fn overflow(&self) -> u64 {
        self.counts[self.cfg.overflow_index()]
    }

    pub fn overflow_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.overflow() as f64 / self.total as f64
        }
    }

    pub fn masses(&self) -> Vec<f64> {
        let n = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn occupied(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Image under `(y, z) ↦ (-y, -z)`.
    pub fn reflected(&self) -> Self {
        let mut counts = vec![0; self.counts.len()];
        for (i, &c) in self.counts.iter().enumerate() {
            counts[self.cfg.reflect_index(i)] += c;
        }
        Self {
            cfg: self.cfg,
            counts,
            total: self.total,
        }
    }

    /// CSV `y_lo,y_hi,z_lo,z_hi,mass`, one row per cell.
    pub fn write_csv<W: io::Write>(&self, out: W) -> io::Result<()> {
        let masses = self.masses();
        export::write_rows(
            out,
            &["y_lo", "y_hi", "z_lo", "z_hi", "mass"],
            masses.iter().enumerate().map(|(i, &m)| {
                let (a, b, c, d) = self.cfg.bounds(i);
                [a, b, c, d, m]
            }),
        )
    }
}

/// `½ Σ |p_i - q_i|` over the cells of two measures with the same layout.
pub fn tv_distance(m1: &EmpiricalMeasure, m2: &EmpiricalMeasure) -> Result<f64> {
    if m1.cfg != m2.cfg {
        return Err(Error::MismatchedBins);
    }
    if m1.total == 0 || m2.total == 0 {
        return Err(Error::Precondition("total variation of an empty measure".into()));
    }
    let (n1, n2) = (m1.total as f64, m2.total as f64);
    let s: f64 = m1
        .counts
        .iter()
        .zip(&m2.counts)
        .map(|(&a, &b)| (a as f64 / n1 - b as f64 / n2).abs())
        .sum();
    Ok((0.5 * s).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> BinConfig {
        BinConfig::new(1, 1, 1.0).unwrap()
    }

    #[test]
    fn tv_examples() {
        let a = EmpiricalMeasure::from_counts(tiny(), vec![2, 2, 0, 0]).unwrap();
        let b = EmpiricalMeasure::from_counts(tiny(), vec![1, 3, 0, 0]).unwrap();
        assert!((tv_distance(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        let c = EmpiricalMeasure::from_counts(tiny(), vec![0, 0, 5, 0]).unwrap();
        assert_eq!(tv_distance(&a, &c).unwrap(), 1.0);
        let other = EmpiricalMeasure::new(BinConfig::new(2, 1, 1.0).unwrap()).unwrap();
        assert!(matches!(tv_distance(&a, &other), Err(Error::MismatchedBins)));
        assert!(BinConfig::new(0, 3, 1.0).is_err());
    }

    #[test]
    fn cells_cover_lines_and_overflow() {
        let cfg = BinConfig::default();
        let interior = cfg.ny * cfg.nz;
        assert_eq!(cfg.index(State::new(0.05, 1.0)), interior + 100);
        assert_eq!(cfg.index(State::new(0.05, -1.0)), interior + 200 + 100);
        assert_eq!(cfg.index(State::new(11.0, 0.0)), cfg.overflow_index());
        assert_eq!(cfg.index(State::new(10.0, 0.0)), 199 * 100 + 50);
        assert_eq!(cfg.bounds(interior + 3).2, 1.0);
        for i in [0, 17, interior + 5, interior + 250, cfg.overflow_index()] {
            assert_eq!(cfg.reflect_index(cfg.reflect_index(i)), i);
        }
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let cfg = BinConfig::new(2, 2, 1.0).unwrap();
        let m = EmpiricalMeasure::from_states(cfg, [State::new(0.5, 1.0), State::new(-0.5, 0.2)]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + cfg.len());
        assert!(text.starts_with("y_lo,y_hi,z_lo,z_hi,mass\n"));
    }

    fn arb_state() -> impl Strategy<Value = State> {
        (-12.0..12.0f64, prop_oneof![Just(1.0), Just(-1.0), -0.999..0.999f64]).prop_map(|(y, z)| State::new(y, z))
    }

    proptest! {
        #[test]
        fn counts_add_up(states in prop::collection::vec(arb_state(), 1..200)) {
            let cfg = BinConfig::new(8, 4, 10.0).unwrap();
            let m = EmpiricalMeasure::from_states(cfg, states.iter().copied()).unwrap();
            let interior: u64 = m.interior().iter().sum();
            let lines: u64 = m.upper_line().iter().sum::<u64>() + m.lower_line().iter().sum::<u64>();
            prop_assert_eq!(interior + lines + m.overflow(), states.len() as u64);
            prop_assert!((m.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn tv_is_a_metric(
            a in prop::collection::vec(arb_state(), 1..100),
            b in prop::collection::vec(arb_state(), 1..100),
            c in prop::collection::vec(arb_state(), 1..100),
        ) {
            let cfg = BinConfig::new(6, 3, 10.0).unwrap();
            let (ma, mb, mc) = (
                EmpiricalMeasure::from_states(cfg, a).unwrap(),
                EmpiricalMeasure::from_states(cfg, b).unwrap(),
                EmpiricalMeasure::from_states(cfg, c).unwrap(),
            );
            let ab = tv_distance(&ma, &mb).unwrap();
            prop_assert_eq!(ab, tv_distance(&mb, &ma).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            let ac = tv_distance(&ma, &mc).unwrap();
            let cb = tv_distance(&mc, &mb).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }
}
