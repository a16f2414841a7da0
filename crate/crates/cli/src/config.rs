//! Experiment configuration: a JSON document with four blocks and a seed.
//!
//! Every field except `model.drift` has a default. Unknown keys are rejected,
//! and [`ExperimentConfig::validate`] checks numeric ranges against the
//! preconditions of the library before anything runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use elastoplast::dynamics::{CubicSat, Drift, DriftModel, Linear, LinearCoupled, State};
use elastoplast::ergodics::{BinConfig, CouplingConfig, InvariantConfig, NoiseSpec};
use elastoplast::noise::{DecomposableLaw, Density, Weights};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A configuration error, located by its key path (e.g. `model.alpha`).
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Range { path: String, message: String },
}

fn range(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Range {
        path: path.to_owned(),
        message: message.into(),
    }
}

/// Named drifts with their default Lyapunov constants `(α, C)`.
pub const DRIFTS: &[&str] = &["linear", "linear-coupled", "cubic-sat"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub drift: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    /// `C` of the certificate `y f ≤ -α y² + C`.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub p: [f64; 2],
    #[serde(default = "default_radius")]
    pub smooth_radius: f64,
    #[serde(default = "one")]
    pub t0: f64,
}

fn default_radius() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    White,
    Decomposable,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub kind: NoiseKind,
    /// Weights `b_j` of a decomposable law.
    #[serde(default = "default_weights")]
    pub b: Weights,
    #[serde(default)]
    pub rho: Density,
    #[serde(default = "default_j")]
    pub j: usize,
}

fn default_weights() -> Weights {
    Weights::Geometric {
        first: 1.0,
        ratio: 0.7,
    }
}

fn default_j() -> usize {
    64
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::White,
            b: default_weights(),
            rho: Density::default(),
            j: default_j(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    /// Defaults to `1e-3 · T₀`.
    #[serde(default)]
    pub h: Option<f64>,
    /// Horizon of `simulate`; defaults to `10 T₀`.
    #[serde(default)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentBlock {
    pub from: [f64; 2],
    pub to: [f64; 2],
    #[serde(rename = "T")]
    pub t: f64,
    /// Step used to verify synthesised controls.
    pub control_h: f64,
    /// `(Y₁, Z₁)` targets of the linearised system.
    pub targets: Vec<[f64; 2]>,
    /// Start grid of the Lyapunov check.
    pub starts: Vec<[f64; 2]>,
    pub x: [f64; 2],
    pub x_prime: [f64; 2],
    pub n: usize,
    pub k: u64,
    pub delta: f64,
    pub delta_hat: f64,
    pub aux_samples: usize,
    pub coupling_bins: BinConfig,
    pub bins: BinConfig,
    pub invariant: InvariantConfig,
    pub floor_factor: f64,
    pub probe: Option<f64>,
    /// Truncation levels compared by `noise-check`.
    pub levels: Vec<usize>,
    pub paths: usize,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        let coupling = CouplingConfig::default();
        let mut starts = Vec::new();
        for y in [-4.0, 0.0, 4.0] {
            for z in [-0.5, 0.0, 0.5] {
                starts.push([y, z]);
            }
        }
        Self {
            from: [0.5, 0.0],
            to: [-1.0, 0.0],
            t: 4.0,
            control_h: 1e-4,
            targets: vec![[1.0, 1.0]],
            starts,
            x: [0.0, 0.0],
            x_prime: [0.1, 0.0],
            n: 10_000,
            k: 500,
            delta: 0.5,
            delta_hat: coupling.delta_hat,
            aux_samples: coupling.aux_samples,
            coupling_bins: coupling.bins,
            bins: BinConfig::default(),
            invariant: InvariantConfig::default(),
            floor_factor: 2.0,
            probe: None,
            levels: vec![4, 16, 64],
            paths: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                drift: "linear".into(),
                params: BTreeMap::new(),
                alpha: None,
                c: None,
                p: [0.0, 0.0],
                smooth_radius: default_radius(),
                t0: 1.0,
            },
            noise: NoiseConfig::default(),
            solver: SolverBlock::default(),
            experiment: ExperimentBlock::default(),
            seed: 0,
        }
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(range(path, format!("must be positive, got {v}")))
    }
}

fn state(path: &str, v: [f64; 2]) -> Result<State, ConfigError> {
    let s = State::new(v[0], v[1]);
    if s.is_admissible() {
        Ok(s)
    } else {
        Err(range(path, format!("({}, {}) is not in ℝ × [-1, 1]", v[0], v[1])))
    }
}

fn bins(path: &str, b: &BinConfig) -> Result<(), ConfigError> {
    b.validate().map_err(|e| range(path, e.to_string()))
}

impl ExperimentConfig {
    /// Fills defaults that depend on other fields.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        let (alpha, c) = self.registry_constants()?;
        self.model.alpha.get_or_insert(alpha);
        self.model.c.get_or_insert(c);
        if self.model.drift == "linear-coupled" {
            self.model.params.entry("c".into()).or_insert(0.5);
        }
        let t0 = self.model.t0;
        self.solver.h.get_or_insert(1e-3 * t0);
        self.solver.horizon.get_or_insert(10.0 * t0);
        self.validate()?;
        Ok(self)
    }

    fn registry_constants(&self) -> Result<(f64, f64), ConfigError> {
        match self.model.drift.as_str() {
            "linear" => Ok((1.0, 0.0)),
            "linear-coupled" => {
                let c = self.model.params.get("c").copied().unwrap_or(0.5);
                // y(-y + cz) ≤ -y²/2 + c²/2
                Ok((0.5, 0.5 * c * c))
            }
            "cubic-sat" => Ok((1.0, 0.25)),
            other => Err(range(
                "model.drift",
                format!("unknown drift `{other}`; registered: {}", DRIFTS.join(", ")),
            )),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.registry_constants()?;
        let allowed: &[&str] = match self.model.drift.as_str() {
            "linear-coupled" => &["c"],
            _ => &[],
        };
        for (k, v) in &self.model.params {
            if !allowed.contains(&k.as_str()) {
                return Err(range(&format!("model.params.{k}"), "unknown parameter for this drift"));
            }
            if !v.is_finite() {
                return Err(range(&format!("model.params.{k}"), "must be finite"));
            }
        }
        if let Some(a) = self.model.alpha {
            positive("model.alpha", a)?;
        }
        if let Some(c) = self.model.c {
            if !(c.is_finite() && c >= 0.0) {
                return Err(range("model.c", format!("must be non-negative, got {c}")));
            }
        }
        let p = state("model.p", self.model.p)?;
        if p.z.abs() >= 1.0 {
            return Err(range("model.p", "the smooth point must satisfy |z| < 1"));
        }
        positive("model.smooth_radius", self.model.smooth_radius)?;
        let t0 = self.model.t0;
        if !(t0.is_finite() && t0 > 0.0 && t0 <= 1.0) {
            return Err(range("model.t0", format!("must lie in (0, 1], got {t0}")));
        }
        if self.noise.j == 0 {
            return Err(range("noise.j", "must be at least 1"));
        }
        if self.noise.kind == NoiseKind::Decomposable {
            self.decomposable_law()?;
        }
        if let Some(h) = self.solver.h {
            positive("solver.h", h)?;
            let ratio = t0 / h;
            if (ratio - ratio.round()).abs() > 1e-9 * ratio {
                return Err(range("solver.h", format!("must divide T₀ = {t0}")));
            }
        }
        if let Some(t) = self.solver.horizon {
            positive("solver.horizon", t)?;
        }
        let e = &self.experiment;
        state("experiment.from", e.from)?;
        state("experiment.to", e.to)?;
        positive("experiment.T", e.t)?;
        positive("experiment.control_h", e.control_h)?;
        for (i, s) in e.starts.iter().enumerate() {
            state(&format!("experiment.starts[{i}]"), *s)?;
        }
        for (i, t) in e.targets.iter().enumerate() {
            if !(t[0].is_finite() && t[1].is_finite()) {
                return Err(range(&format!("experiment.targets[{i}]"), "must be finite"));
            }
        }
        state("experiment.x", e.x)?;
        state("experiment.x_prime", e.x_prime)?;
        if e.n < 2 {
            return Err(range("experiment.n", "ensembles need at least two runs"));
        }
        if e.k == 0 {
            return Err(range("experiment.k", "horizon must be at least 1"));
        }
        positive("experiment.delta", e.delta)?;
        positive("experiment.delta_hat", e.delta_hat)?;
        if e.aux_samples == 0 {
            return Err(range("experiment.aux_samples", "must be at least 1"));
        }
        bins("experiment.coupling_bins", &e.coupling_bins)?;
        bins("experiment.bins", &e.bins)?;
        e.invariant
            .validate()
            .map_err(|err| range("experiment.invariant", err.to_string()))?;
        positive("experiment.floor_factor", e.floor_factor)?;
        if let Some(s) = e.probe {
            if !(s >= 0.0 && s <= t0) {
                return Err(range("experiment.probe", format!("must lie in [0, T₀], got {s}")));
            }
        }
        if e.levels.is_empty() || e.levels.contains(&0) {
            return Err(range("experiment.levels", "needs positive truncation levels"));
        }
        if e.paths == 0 {
            return Err(range("experiment.paths", "must be at least 1"));
        }
        Ok(())
    }

    pub fn drift(&self) -> Arc<dyn Drift> {
        match self.model.drift.as_str() {
            "linear-coupled" => Arc::new(LinearCoupled {
                c: self.model.params.get("c").copied().unwrap_or(0.5),
            }),
            "cubic-sat" => Arc::new(CubicSat),
            _ => Arc::new(Linear),
        }
    }

    pub fn h(&self) -> f64 {
        self.solver.h.unwrap_or(1e-3 * self.model.t0)
    }

    pub fn model(&self) -> elastoplast::Result<DriftModel> {
        let (alpha, c) = self.registry_constants().unwrap_or((1.0, 0.0));
        DriftModel::new(self.drift(), self.model.alpha.unwrap_or(alpha), self.model.c.unwrap_or(c))?
            .with_smooth_point(State::new(self.model.p[0], self.model.p[1]), self.model.smooth_radius)?
            .with_t0(self.model.t0)
    }

    fn decomposable_law(&self) -> Result<DecomposableLaw, ConfigError> {
        DecomposableLaw::new(self.noise.b.clone(), self.noise.rho, self.noise.j)
            .map_err(|e| range("noise.b", e.to_string()))
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec, ConfigError> {
        Ok(match self.noise.kind {
            NoiseKind::White => NoiseSpec::White,
            NoiseKind::None => NoiseSpec::None,
            NoiseKind::Decomposable => NoiseSpec::Decomposable(self.decomposable_law()?),
        })
    }

    pub fn coupling(&self) -> CouplingConfig {
        CouplingConfig {
            delta_hat: self.experiment.delta_hat,
            aux_samples: self.experiment.aux_samples,
            bins: self.experiment.coupling_bins,
        }
    }

    /// Canonical JSON of the resolved config.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// Parses and resolves a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    raw.resolve()
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}
