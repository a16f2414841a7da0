//! Explicit controls.
//!
//! Every planned segment prescribes the velocity `y(t)` in closed form; `z`
//! follows from the constraint (it integrates `y` in the interior and is
//! pinned on `z = ±1` while `y` pushes outward), and the control is
//!
//! ```text
//! u(t) = dy/dt - f(y(t), z(t)).
//! ```
//!
//! Because `y` and `z` are continuous, the glued control is continuous as soon
//! as `dy/dt` matches across junctions. [`synthesize_exact_control`] chooses
//! the segment profiles so that it does.
//!
//! Segments are planned for targets with `y_T < 0`, which are reached through
//! the corner `(0, 1)`. Targets with `y_T > 0` use the reflection
//! `(y, z, u) ↦ (-y, -z, -u)` and pass through `(0, -1)`.

use std::io;
use std::sync::Arc;

use serde::Serialize;

use crate::dynamics::{
    advance, integrate, Drift, DriftModel, Forcing, SolverConfig, State, Trajectory,
};
use crate::error::{ensure_finite, invalid, Error, Result};
use crate::export;
use crate::noise::{ForcingKind, ForcingPath};

/// Number of sample points used to certify sign conditions of a profile.
const SIGN_SAMPLES: usize = 2001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseTag {
    Kickoff,
    RampToPlastic,
    PlasticDrain,
    DescendFromCorner,
    Linear,
}

/// Closed-form velocity on local time `[0, duration]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `Σ c_k t^k`.
    Polynomial(Vec<f64>),
    /// `y_end (t / duration)^beta`, `beta ≥ 1`.
    Power { y_end: f64, beta: f64, duration: f64 },
    /// `y_end (1 - (1 - t / duration)^beta)`, `beta > 1`.
    ReversePower { y_end: f64, beta: f64, duration: f64 },
}

impl Profile {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Profile::Polynomial(c) => c.iter().rev().fold(0.0, |acc, ck| acc * t + ck),
            Profile::Power { y_end, beta, duration } => y_end * (t / duration).powf(*beta),
            Profile::ReversePower { y_end, beta, duration } => {
                y_end * (1.0 - (1.0 - t / duration).powf(*beta))
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Profile::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, ck)| acc * t + k as f64 * ck),
            Profile::Power { y_end, beta, duration } => {
                if t == 0.0 {
                    if *beta > 1.0 {
                        0.0
                    } else {
                        y_end / duration
                    }
                } else {
                    y_end * beta * (t / duration).powf(beta - 1.0) / duration
                }
            }
            Profile::ReversePower { y_end, beta, duration } => {
                y_end * beta * (1.0 - t / duration).powf(beta - 1.0) / duration
            }
        }
    }

    /// `∫₀ᵗ y`.
    pub fn integral(&self, t: f64) -> f64 {
        match self {
            Profile::Polynomial(c) => c
                .iter()
                .enumerate()
                .rev()
                .fold(0.0, |acc, (k, ck)| acc * t + ck / (k + 1) as f64)
                * t,
            Profile::Power { y_end, beta, duration } => {
                y_end * duration * (t / duration).powf(beta + 1.0) / (beta + 1.0)
            }
            Profile::ReversePower { y_end, beta, duration } => {
                y_end * (t - duration * (1.0 - (1.0 - t / duration).powf(beta + 1.0)) / (beta + 1.0))
            }
        }
    }
}

/// A piece of the `z` path starting at local time `start`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ZPiece {
    start: f64,
    /// `Some(±1)` while pinned to a boundary line.
    pinned: Option<f64>,
    z_start: f64,
}

impl ZPiece {
    fn free(start: f64, z_start: f64) -> Self {
        Self { start, pinned: None, z_start }
    }
    fn pinned(start: f64, level: f64) -> Self {
        Self { start, pinned: Some(level), z_start: level }
    }
}

#[derive(Debug, Clone)]
enum Rule {
    Constant(f64),
    Planned {
        profile: Profile,
        z: Vec<ZPiece>,
        /// Planned in reflected coordinates.
        mirrored: bool,
    },
}

/// One closed-form piece of a control.
#[derive(Debug, Clone)]
pub struct ControlSegment {
    pub case_tag: CaseTag,
    pub duration: f64,
    /// Named closed-form parameters (for reports).
    pub params: Vec<(&'static str, f64)>,
    rule: Rule,
    drift: Arc<dyn Drift>,
    start: State,
    end: Option<State>,
}

impl ControlSegment {
    /// A constant control `u ≡ level`. The end state is not known in closed form.
    pub fn constant(
        case_tag: CaseTag,
        level: f64,
        duration: f64,
        model: &DriftModel,
        start: State,
    ) -> Result<Self> {
        ensure_finite(level, "control level")?;
        if !(duration.is_finite() && duration > 0.0) {
            return Err(invalid("duration", format!("must be positive, got {duration}")));
        }
        Ok(Self {
            case_tag,
            duration,
            params: vec![("level", level)],
            rule: Rule::Constant(level),
            drift: model.drift().clone(),
            start,
            end: None,
        })
    }

    fn planned(
        case_tag: CaseTag,
        duration: f64,
        profile: Profile,
        z: Vec<ZPiece>,
        mirrored: bool,
        model: &DriftModel,
        params: Vec<(&'static str, f64)>,
    ) -> Self {
        let mut seg = Self {
            case_tag,
            duration,
            params,
            rule: Rule::Planned { profile, z, mirrored },
            drift: model.drift().clone(),
            start: State::default(),
            end: None,
        };
        seg.start = seg.state_at(0.0).expect("planned");
        seg.end = seg.state_at(duration);
        seg
    }

    fn canonical_state(profile: &Profile, pieces: &[ZPiece], t: f64) -> State {
        let i = pieces.partition_point(|p| p.start <= t).saturating_sub(1);
        let piece = pieces[i];
        let z = match piece.pinned {
            Some(level) => level,
            None => piece.z_start + profile.integral(t) - profile.integral(piece.start),
        };
        State::new(profile.value(t), z.clamp(-1.0, 1.0))
    }

    /// Planned state at local time `t`; `None` for constant segments.
    pub fn state_at(&self, t: f64) -> Option<State> {
        let t = t.clamp(0.0, self.duration);
        match &self.rule {
            Rule::Constant(_) => None,
            Rule::Planned { profile, z, mirrored } => {
                let s = Self::canonical_state(profile, z, t);
                Some(if *mirrored { s.reflected() } else { s })
            }
        }
    }

    /// Control value at local time `t ∈ [0, duration]`.
    pub fn u(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.duration);
        match &self.rule {
            Rule::Constant(level) => *level,
            Rule::Planned { profile, z, mirrored } => {
                let s = Self::canonical_state(profile, z, t);
                let dy = profile.derivative(t);
                let (x, dy) = if *mirrored { (s.reflected(), -dy) } else { (s, dy) };
                dy - self.drift.eval(x)
            }
        }
    }

    pub fn start_state(&self) -> State {
        self.start
    }

    /// End state: closed form for planned segments, simulated for [`kickoff`].
    pub fn end_state(&self) -> Option<State> {
        self.end
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| *k == name).map(|(_, v)| *v)
    }

    /// `dy/dt` at local time `t`, for planned segments.
    pub fn velocity_slope(&self, t: f64) -> Option<f64> {
        match &self.rule {
            Rule::Constant(_) => None,
            Rule::Planned { profile, mirrored, .. } => {
                let d = profile.derivative(t.clamp(0.0, self.duration));
                Some(if *mirrored { -d } else { d })
            }
        }
    }
}

/// A continuous control on `[0, total]` glued from segments.
#[derive(Debug, Clone)]
pub struct ControlSchedule {
    segments: Vec<ControlSegment>,
    starts: Vec<f64>,
    total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentMetadata {
    pub case_tag: CaseTag,
    pub start: f64,
    pub duration: f64,
    pub params: std::collections::BTreeMap<&'static str, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleMetadata {
    pub total: f64,
    pub segments: Vec<SegmentMetadata>,
    pub max_junction_residual: f64,
}

impl ControlSchedule {
    pub fn new(segments: Vec<ControlSegment>) -> Result<Self> {
        let mut starts = Vec::with_capacity(segments.len());
        let mut total = 0.0;
        for s in &segments {
            if !(s.duration.is_finite() && s.duration > 0.0) {
                return Err(invalid("duration", format!("segment duration {} must be positive", s.duration)));
            }
            starts.push(total);
            total += s.duration;
        }
        Ok(Self { segments, starts, total })
    }

    pub fn empty() -> Self {
        Self {
            segments: Vec::new(),
            starts: Vec::new(),
            total: 0.0,
        }
    }

    pub fn segments(&self) -> &[ControlSegment] {
        &self.segments
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    fn locate(&self, t: f64) -> Option<(usize, f64)> {
        if self.segments.is_empty() {
            return None;
        }
        let i = self.starts.partition_point(|s| *s <= t).saturating_sub(1);
        Some((i, t - self.starts[i]))
    }

    /// `u(t)`; zero outside `[0, total]` for an empty schedule.
    pub fn u(&self, t: f64) -> f64 {
        match self.locate(t) {
            Some((i, local)) => self.segments[i].u(local),
            None => 0.0,
        }
    }

    /// Planned state at time `t`, when the covering segment is planned.
    pub fn state_at(&self, t: f64) -> Option<State> {
        self.locate(t)
            .and_then(|(i, local)| self.segments[i].state_at(local))
    }

    /// `|u(end of segment i) - u(start of segment i+1)|` for each junction.
    pub fn junction_residuals(&self) -> Vec<f64> {
        self.segments
            .windows(2)
            .map(|w| (w[0].u(w[0].duration) - w[1].u(0.0)).abs())
            .collect()
    }

    pub fn metadata(&self) -> ScheduleMetadata {
        ScheduleMetadata {
            total: self.total,
            segments: self
                .segments
                .iter()
                .zip(&self.starts)
                .map(|(s, &start)| SegmentMetadata {
                    case_tag: s.case_tag,
                    start,
                    duration: s.duration,
                    params: s.params.iter().copied().collect(),
                })
                .collect(),
            max_junction_residual: self.junction_residuals().into_iter().fold(0.0, f64::max),
        }
    }

    /// CSV `t,u` on the grid `k h`, `k = 0..=total/h`.
    pub fn write_csv<W: io::Write>(&self, out: W, h: f64) -> io::Result<()> {
        let n = (self.total / h).round() as usize;
        export::write_rows(
            out,
            &["t", "u"],
            (0..=n).map(|k| {
                let t = k as f64 * h;
                [t, self.u(t)]
            }),
        )
    }
}

impl Forcing for ControlSchedule {
    fn horizon(&self) -> f64 {
        self.total
    }

    /// `∫ u` over the step, by Simpson's rule.
    fn increment(&self, _k: usize, t: f64, h: f64) -> Result<f64> {
        Ok(h / 6.0 * (self.u(t) + 4.0 * self.u(t + 0.5 * h) + self.u(t + h)))
    }
}

fn orient(x: State, mirrored: bool) -> State {
    if mirrored {
        x.reflected()
    } else {
        x
    }
}

/// `coast` also admits `ε = ε₀`, where the acceleration vanishes.
fn ramp_canonical(c: State, eps: f64, coast: bool, mirrored: bool, model: &DriftModel) -> Result<ControlSegment> {
    if !(c.y > 0.0) {
        return Err(Error::Precondition("ramp needs a velocity pointing at the line".into()));
    }
    if !(c.z < 1.0) {
        return Err(Error::Precondition("ramp starts on the line it should reach".into()));
    }
    let eps0 = (1.0 - c.z) / c.y;
    if !(eps > 0.0 && (eps < eps0 || (coast && eps == eps0))) {
        return Err(Error::Precondition(format!(
            "ε = {eps} must lie in (0, ε₀) with ε₀ = (1 - z₀)/|y₀| = {eps0}"
        )));
    }
    let a = if eps == eps0 {
        0.0
    } else {
        2.0 * (1.0 - c.z - c.y * eps) / (eps * eps)
    };
    Ok(ControlSegment::planned(
        CaseTag::RampToPlastic,
        eps,
        Profile::Polynomial(vec![c.y, a]),
        vec![ZPiece::free(0.0, c.z)],
        mirrored,
        model,
        vec![("a", if mirrored { -a } else { a }), ("epsilon", eps), ("epsilon0", eps0)],
    ))
}

/// Constant-acceleration ramp reaching the boundary line in time `epsilon`.
///
/// For `y₀ > 0` the segment goes to `z = 1` with
/// `a = 2(1 - z₀ - y₀ε)/ε²`, `y(t) = y₀ + at`, `z(t) = z₀ + y₀t + at²/2`
/// and `u(t) = a - f(y(t), z(t))`. For `y₀ < 0` it is the mirror image going
/// to `z = -1`, with `a = 2(1 + z₀ + y₀ε)/ε²` and `y(t) = y₀ - at`.
/// Requires `0 < ε < ε₀ = (1 ∓ z₀)/|y₀|`.
pub fn ramp_to_plastic(x0: State, epsilon: f64, model: &DriftModel) -> Result<ControlSegment> {
    x0.check("initial state")?;
    ensure_finite(epsilon, "epsilon")?;
    if x0.y == 0.0 {
        return Err(Error::Precondition("ramp needs y₀ ≠ 0".into()));
    }
    let mirrored = x0.y < 0.0;
    ramp_canonical(orient(x0, mirrored), epsilon, false, mirrored, model)
}

/// Cubic Hermite velocity on a boundary line, from `y₀` with slope `m0` to
/// `0` with slope `m1`, in canonical orientation (line `z = 1`).
fn transfer_canonical(
    y0: f64,
    duration: f64,
    m0: f64,
    m1: f64,
    mirrored: bool,
    model: &DriftModel,
) -> Result<ControlSegment> {
    if !(y0 >= 0.0) {
        return Err(Error::Precondition("plastic phase needs y₀ ≥ 0 on z = 1".into()));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(invalid("T_tilde", format!("must be positive, got {duration}")));
    }
    // y stays non-negative when m0 ≥ -3 y0 / T and m1 ≤ 0.
    if m0 < -3.0 * y0 / duration || m1 > 0.0 {
        return Err(Error::Precondition(format!(
            "slopes (m0 = {m0}, m1 = {m1}) would leave the plastic phase"
        )));
    }
    let d = duration;
    let coeffs = vec![
        y0,
        m0,
        (-3.0 * y0 - 2.0 * m0 * d - m1 * d) / (d * d),
        (2.0 * y0 + m0 * d + m1 * d) / (d * d * d),
    ];
    let profile = Profile::Polynomial(coeffs);
    for i in 0..=SIGN_SAMPLES {
        let v = profile.value(d * i as f64 / SIGN_SAMPLES as f64);
        if v < -1e-12 * (1.0 + y0) {
            return Err(Error::Diagnostic(format!("plastic transfer profile turned negative ({v})")));
        }
    }
    let sign = if mirrored { -1.0 } else { 1.0 };
    Ok(ControlSegment::planned(
        CaseTag::PlasticDrain,
        duration,
        profile,
        vec![ZPiece::pinned(0.0, 1.0)],
        mirrored,
        model,
        vec![
            ("y0", sign * y0),
            ("T_tilde", duration),
            ("start_slope", sign * m0),
            ("end_slope", sign * m1),
        ],
    ))
}

fn plastic_orientation(x0: State) -> Result<bool> {
    if x0.z == 1.0 && x0.y >= 0.0 {
        Ok(false)
    } else if x0.z == -1.0 && x0.y <= 0.0 {
        Ok(true)
    } else {
        Err(Error::Precondition(format!(
            "{x0} is not in a plastic phase (needs z = 1 with y ≥ 0, or z = -1 with y ≤ 0)"
        )))
    }
}

/// Linear drain along the boundary line to the corner:
/// `y(t) = y₀(1 - t/T̃)`, `z ≡ ±1`, `u(t) = -y₀/T̃ - f(y(t), ±1)`.
pub fn plastic_drain(x0: State, t_tilde: f64, model: &DriftModel) -> Result<ControlSegment> {
    x0.check("initial state")?;
    let mirrored = plastic_orientation(x0)?;
    let c = orient(x0, mirrored);
    if !(t_tilde.is_finite() && t_tilde > 0.0) {
        return Err(invalid("T_tilde", format!("must be positive, got {t_tilde}")));
    }
    let sign = if mirrored { -1.0 } else { 1.0 };
    Ok(ControlSegment::planned(
        CaseTag::PlasticDrain,
        t_tilde,
        Profile::Polynomial(vec![c.y, -c.y / t_tilde]),
        vec![ZPiece::pinned(0.0, 1.0)],
        mirrored,
        model,
        vec![("y0", sign * c.y), ("T_tilde", t_tilde)],
    ))
}

/// Plastic-phase transfer to the corner with prescribed velocity slopes at
/// both ends (a cubic Hermite profile). This is the drain used by
/// [`synthesize_exact_control`] to keep the glued control continuous.
pub fn plastic_transfer(
    x0: State,
    t_tilde: f64,
    start_slope: f64,
    end_slope: f64,
    model: &DriftModel,
) -> Result<ControlSegment> {
    x0.check("initial state")?;
    ensure_finite(start_slope, "start slope")?;
    ensure_finite(end_slope, "end slope")?;
    let mirrored = plastic_orientation(x0)?;
    let sign = if mirrored { -1.0 } else { 1.0 };
    transfer_canonical(
        sign * x0.y,
        t_tilde,
        sign * start_slope,
        sign * end_slope,
        mirrored,
        model,
    )
}

/// Constant control `u ≡ level` for a short time `epsilon`, started where
/// `f(x₀) + level > 0`. The segment is accepted when a fine simulation ends
/// with `y > 0`.
pub fn kickoff(x0: State, level: f64, epsilon: f64, model: &DriftModel) -> Result<ControlSegment> {
    x0.check("initial state")?;
    ensure_finite(level, "level")?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    let push = model.f(x0) + level;
    if !(push > 0.0) {
        return Err(Error::Precondition(format!(
            "kickoff needs f(x₀) + level > 0, got {push}"
        )));
    }
    let steps = 1000;
    let h = epsilon / steps as f64;
    let mut x = x0;
    for _ in 0..steps {
        x = advance(model.drift().as_ref(), x, h * level, h);
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("kickoff simulation"));
    }
    if !(x.y > 0.0) {
        return Err(Error::Precondition(format!(
            "ε = {epsilon} is too large: the kickoff ends at y = {} ≤ 0",
            x.y
        )));
    }
    let mut seg = ControlSegment::constant(CaseTag::Kickoff, level, epsilon, model, x0)?;
    seg.params.push(("epsilon", epsilon));
    seg.end = Some(x);
    Ok(seg)
}

/// Descent profile from the corner, canonical orientation (`y_T < 0`).
///
/// With `I = (1 - z_T)/(|y_T| T̃)` the velocity is `y_T g(t/T̃)` where
/// `g(0) = 0`, `g(1) = 1` and `∫g = I`:
///
/// - `I ≤ 1/2`: `g(s) = s^β`, `β = 1/I - 1`;
/// - `1/2 < I < 1`, monotone: `g(s) = 1 - (1 - s)^β`, `β = I/(1 - I)`;
/// - `I > 1/2` with `overshoot`: `g(s) = (6I - 2)s - (6I - 3)s²`, positive on
///   `(0, 1]`; for `I > 2/3` it exceeds 1, so `|y|` overshoots `|y_T|`.
///
/// The reflected power law steepens without bound as `I → 1`, and no monotone
/// profile exists for `T̃ ≤ (1 - z_T)/|y_T|`; the quadratic stays gentle.
fn descent_profile(
    target: State,
    t_tilde: f64,
    overshoot: bool,
) -> Result<(Profile, Vec<(&'static str, f64)>)> {
    if !(t_tilde.is_finite() && t_tilde > 0.0) {
        return Err(invalid("T_tilde", format!("must be positive, got {t_tilde}")));
    }
    let reach = (1.0 - target.z) / target.y.abs();
    let share = reach / t_tilde;
    let y = target.y;
    let d = t_tilde;
    if share <= 0.5 {
        let beta = 1.0 / share - 1.0;
        Ok((
            Profile::Power { y_end: y, beta, duration: d },
            vec![("beta", beta), ("share", share), ("T_tilde", d)],
        ))
    } else if overshoot {
        let lead = 6.0 * share - 2.0;
        let bend = 6.0 * share - 3.0;
        Ok((
            Profile::Polynomial(vec![0.0, y * lead / d, -y * bend / (d * d)]),
            vec![("lead", lead), ("bend", bend), ("share", share), ("T_tilde", d)],
        ))
    } else if share < 1.0 {
        let beta = share / (1.0 - share);
        Ok((
            Profile::ReversePower { y_end: y, beta, duration: d },
            vec![("beta", beta), ("share", share), ("T_tilde", d)],
        ))
    } else {
        Err(Error::Infeasible {
            reason: format!(
                "a monotone descent needs more than (1 - z_T)/|y_T| = {reach}, got {t_tilde}"
            ),
            minimal_horizon: Some(reach),
        })
    }
}

fn descend_canonical(
    target: State,
    t_tilde: f64,
    overshoot: bool,
    mirrored: bool,
    model: &DriftModel,
) -> Result<ControlSegment> {
    let (profile, params) = descent_profile(target, t_tilde, overshoot)?;
    Ok(ControlSegment::planned(
        CaseTag::DescendFromCorner,
        t_tilde,
        profile,
        vec![ZPiece::free(0.0, 1.0)],
        mirrored,
        model,
        params,
    ))
}

/// Descent from the corner `(0, 1)` to a target with `y_T < 0`, `|z_T| < 1`
/// (or from `(0, -1)` when `y_T > 0`).
///
/// The velocity follows a monotone `φ` with `φ(0) = 0`, `φ(T̃) = y_T` and
/// `∫φ = z_T - 1`, so `z(t) = 1 + ∫₀ᵗ φ` and `u = φ' - f`. When
/// `(1 - z_T)/(|y_T| T̃) ≤ 1/2` the profile is the power law
/// `y_T (t/T̃)^β`, `β = y_T T̃/(z_T - 1) - 1 ≥ 1`; otherwise the reflected
/// power law `y_T (1 - (1 - t/T̃)^β)`. A monotone profile needs
/// `T̃ > (1 - z_T)/|y_T|`; shorter times are reported as infeasible.
pub fn descend_from_corner(target: State, t_tilde: f64, model: &DriftModel) -> Result<ControlSegment> {
    target.check("target")?;
    ensure_finite(t_tilde, "T_tilde")?;
    if target.y == 0.0 || target.z.abs() >= 1.0 {
        return Err(Error::Precondition(format!(
            "target {target} must have y ≠ 0 and |z| < 1"
        )));
    }
    let mirrored = target.y > 0.0;
    descend_canonical(orient(target, mirrored), t_tilde, false, mirrored, model)
}

/// Constant-acceleration move from a state with `y₀ ≤ 0` to the line `z = 1`
/// in time `d`, arriving with `y > 0`. When the move first dips onto `z = -1`
/// the `z` path is pinned there until `y` changes sign.
fn approach_from_rest(c: State, d: f64, mirrored: bool, model: &DriftModel) -> ControlSegment {
    let (y0, z0) = (c.y, c.z);
    let free_acc = 2.0 * (1.0 - z0 - y0 * d) / (d * d);
    let touches_lower = y0 < 0.0 && z0 - y0 * y0 / (2.0 * free_acc) < -1.0;
    let (acc, pieces) = if touches_lower {
        // (acc d + y0)² = 4 acc  with  acc d + y0 > 0
        let w = (1.0 + (1.0 - d * y0).sqrt()) / d;
        let acc = w * w;
        let disc = (y0 * y0 - 2.0 * acc * (z0 + 1.0)).max(0.0);
        let t_hit = ((-y0 - disc.sqrt()) / acc).max(0.0);
        let t_turn = -y0 / acc;
        (
            acc,
            vec![
                ZPiece::free(0.0, z0),
                ZPiece::pinned(t_hit, -1.0),
                ZPiece::free(t_turn, -1.0),
            ],
        )
    } else {
        (free_acc, vec![ZPiece::free(0.0, z0)])
    };
    ControlSegment::planned(
        CaseTag::Kickoff,
        d,
        Profile::Polynomial(vec![y0, acc]),
        pieces,
        mirrored,
        model,
        vec![
            ("a", if mirrored { -acc } else { acc }),
            ("epsilon", d),
            ("touches_opposite_line", if touches_lower { 1.0 } else { 0.0 }),
        ],
    )
}

/// Builds a continuous control steering `x0` to `x_target` in time `horizon`.
///
/// The schedule has up to three segments (canonical orientation, `y_T < 0`):
///
/// 1. reach `z = 1` with `y > 0` in time `ε`: when `y₀ > 0` a
///    constant-acceleration ramp over `ε = min(ε₀, T/4)` (which coasts with
///    `u = -f` if the line is closer than `T/4`), a constant-acceleration
///    kickoff when `y₀ ≤ 0` (`ε = T/4`), nothing when already plastic;
/// 2. drain along `z = 1` to the corner `(0, 1)` in time `T/2 - ε`;
/// 3. descend from the corner to the target in time `T/2`.
///
/// The drain's velocity slopes match the neighbouring segments, so the
/// control is continuous across both junctions. When `T/2` is too short
/// for a monotone descent, the descent overshoots `y_T` and returns, which
/// makes every `T > 0` feasible.
pub fn synthesize_exact_control(
    x0: State,
    x_target: State,
    horizon: f64,
    model: &DriftModel,
) -> Result<ControlSchedule> {
    x0.check("initial state")?;
    x_target.check("target")?;
    if x_target.y == 0.0 {
        return Err(Error::Precondition("targets need y_T ≠ 0".into()));
    }
    if x_target.z.abs() >= 1.0 {
        return Err(Error::Precondition(format!(
            "target {x_target} lies on the plastic boundary"
        )));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(invalid("T", format!("must be positive, got {horizon}")));
    }
    let mirrored = x_target.y > 0.0;
    let c0 = orient(x0, mirrored);
    let ct = orient(x_target, mirrored);

    let mut segments = Vec::with_capacity(3);
    let (eps, y_line, line_slope) = if c0.z == 1.0 && c0.y >= 0.0 {
        (0.0, c0.y, 0.0)
    } else if c0.y > 0.0 {
        // coast onto the line when it is close; a short hard ramp would need a huge control
        let eps0 = (1.0 - c0.z) / c0.y;
        let eps = eps0.min(horizon / 4.0);
        let seg = ramp_canonical(c0, eps, true, mirrored, model)?;
        let a = seg.param("a").expect("ramp records a") * if mirrored { -1.0 } else { 1.0 };
        let y_end = c0.y + a * eps;
        segments.push(seg);
        (eps, y_end, a)
    } else {
        let d = horizon / 4.0;
        let seg = approach_from_rest(c0, d, mirrored, model);
        let a = seg.param("a").expect("approach records a").abs();
        let y_end = c0.y + a * d;
        segments.push(seg);
        (d, y_end, a)
    };

    let descent = horizon / 2.0;
    let drain = horizon - eps - descent;
    let down = descend_canonical(ct, descent, true, mirrored, model)?;
    let m1 = down.velocity_slope(0.0).expect("planned") * if mirrored { -1.0 } else { 1.0 };
    segments.push(transfer_canonical(y_line, drain, line_slope, m1, mirrored, model)?);
    segments.push(down);
    ControlSchedule::new(segments)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlReport {
    pub endpoint: State,
    pub endpoint_error: f64,
    pub max_constraint_violation: f64,
    pub junction_residuals: Vec<f64>,
    pub max_junction_residual: f64,
    pub steps: usize,
}

/// Forward-simulates `schedule` from `x0` with step `cfg.h` and compares the
/// endpoint with `x_target`.
pub fn verify_control(
    x0: State,
    schedule: &ControlSchedule,
    x_target: State,
    model: &DriftModel,
    cfg: &SolverConfig,
) -> Result<(ControlReport, Trajectory)> {
    let residuals = schedule.junction_residuals();
    let max_res = residuals.iter().copied().fold(0.0, f64::max);
    let traj = if schedule.total() == 0.0 {
        x0.check("initial state")?;
        Trajectory {
            times: vec![0.0],
            states: vec![x0],
            seed: None,
        }
    } else {
        let sim = SolverConfig {
            h: cfg.h,
            horizon: schedule.total(),
            seed: cfg.seed,
            blowup_cap: cfg.blowup_cap,
        };
        integrate(x0, model, schedule, &sim)?
    };
    let endpoint = traj.endpoint();
    let report = ControlReport {
        endpoint,
        endpoint_error: endpoint.distance(&x_target),
        max_constraint_violation: traj.max_constraint_violation(),
        junction_residuals: residuals,
        max_junction_residual: max_res,
        steps: traj.states.len() - 1,
    };
    Ok((report, traj))
}

/// Coefficients `∂_y f`, `∂_z f` along a reference trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub step: f64,
}

impl LinearizedSystem {
    /// Constant coefficients on `[0, t0]` with grid step `step`.
    pub fn constant(a: f64, b: f64, t0: f64, step: f64) -> Result<Self> {
        let n = crate::dynamics::grid_steps(t0, step)?;
        Ok(Self {
            a: vec![a; n + 1],
            b: vec![b; n + 1],
            step,
        })
    }

    pub fn t0(&self) -> f64 {
        self.step * (self.a.len() - 1) as f64
    }

    /// `(Y, Z)(T₀)` for `Y' = aY + bZ + V`, `Z' = Y` from `(0, 0)`,
    /// integrated with Heun's method on the coefficient grid.
    pub fn resolve(&self, v: &ForcingPath) -> Result<(f64, f64)> {
        if v.values.len() != self.a.len() || (v.step - self.step).abs() > 1e-12 * self.step {
            return Err(Error::Precondition("control grid differs from the coefficient grid".into()));
        }
        let h = self.step;
        let rhs = |k: usize, y: f64, z: f64| (self.a[k] * y + self.b[k] * z + v.values[k], y);
        let (mut y, mut z) = (0.0, 0.0);
        for k in 0..self.a.len() - 1 {
            let (dy0, dz0) = rhs(k, y, z);
            let (yp, zp) = (y + h * dy0, z + h * dz0);
            let (dy1, dz1) = rhs(k + 1, yp, zp);
            y += 0.5 * h * (dy0 + dy1);
            z += 0.5 * h * (dz0 + dz1);
        }
        Ok((y, z))
    }
}

/// Linearises the drift along `reference`, which must stay inside the smooth
/// ball around `p`.
pub fn linearize(model: &DriftModel, reference: &Trajectory) -> Result<LinearizedSystem> {
    if reference.states.len() < 2 {
        return Err(Error::EmptyGrid("reference trajectory"));
    }
    let p = model.p();
    let mut a = Vec::with_capacity(reference.states.len());
    let mut b = Vec::with_capacity(reference.states.len());
    for (t, s) in reference.times.iter().zip(&reference.states) {
        if s.distance(&p) >= model.smooth_radius() {
            return Err(Error::Precondition(format!(
                "reference leaves the smooth region at t = {t} (state {s})"
            )));
        }
        let (dy, dz) = model.partials(*s);
        a.push(dy);
        b.push(dz);
    }
    Ok(LinearizedSystem {
        a,
        b,
        step: reference.step(),
    })
}

/// Control of the linearised system reaching `(Y₁, Z₁)` at `T₀`.
///
/// `Y = φ` with `φ(t) = c₂t² + c₁t`, where `φ(T₀) = Y₁` and `∫₀^{T₀} φ = Z₁`;
/// the returned direct forcing is `V = φ' - aφ - b∫φ`.
pub fn linear_control(sys: &LinearizedSystem, target: (f64, f64)) -> Result<ForcingPath> {
    let (y1, z1) = target;
    ensure_finite(y1, "target Y")?;
    ensure_finite(z1, "target Z")?;
    let t0 = sys.t0();
    if !(t0 > 0.0) {
        return Err(invalid("T0", format!("must be positive, got {t0}")));
    }
    let c2 = (3.0 * y1 * t0 - 6.0 * z1) / (t0 * t0 * t0);
    let c1 = (6.0 * z1 - 2.0 * t0 * y1) / (t0 * t0);
    let values = (0..sys.a.len())
        .map(|k| {
            let t = k as f64 * sys.step;
            let phi = c2 * t * t + c1 * t;
            let dphi = 2.0 * c2 * t + c1;
            let int = c2 * t * t * t / 3.0 + c1 * t * t / 2.0;
            dphi - sys.a[k] * phi - sys.b[k] * int
        })
        .collect();
    ForcingPath::new(ForcingKind::Direct, sys.step, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{FnDrift, Unforced};
    use approx::assert_abs_diff_eq;

    fn canon() -> DriftModel {
        DriftModel::canonical()
    }

    #[test]
    fn ramp_closed_form() {
        let seg = ramp_to_plastic(State::new(1.0, 0.0), 0.5, &canon()).unwrap();
        assert_abs_diff_eq!(seg.param("a").unwrap(), 4.0, epsilon = 1e-12);
        let end = seg.end_state().unwrap();
        assert_abs_diff_eq!(end.y, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(end.z, 1.0, epsilon = 1e-12);
        // u(t) = a - f = 4 + y(t)
        assert_abs_diff_eq!(seg.u(0.25), 4.0 + 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ramp_limit_coasts() {
        let seg = ramp_to_plastic(State::new(1.0, 0.0), 1.0 - 1e-9, &canon()).unwrap();
        assert!(seg.param("a").unwrap().abs() < 1e-6);
        let end = seg.end_state().unwrap();
        assert_abs_diff_eq!(end.y, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(end.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ramp_rejects_long_epsilon() {
        assert!(matches!(
            ramp_to_plastic(State::new(1.0, 0.0), 1.5, &canon()),
            Err(Error::Precondition(_))
        ));
        assert!(ramp_to_plastic(State::new(0.0, 0.0), 0.1, &canon()).is_err());
    }

    #[test]
    fn mirrored_ramp_reaches_lower_line() {
        // a = 2(1 + z0 + y0 ε)/ε² = 2(1 + 0 - 0.5)/0.25 = 4, y = y0 - a t
        let seg = ramp_to_plastic(State::new(-1.0, 0.0), 0.5, &canon()).unwrap();
        let end = seg.end_state().unwrap();
        assert_abs_diff_eq!(end.y, -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(end.z, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(seg.param("a").unwrap(), -4.0, epsilon = 1e-12);
    }

    #[test]
    fn drain_examples() {
        let seg = plastic_drain(State::new(2.0, 1.0), 1.0, &canon()).unwrap();
        for &t in &[0.0, 0.3, 1.0] {
            // u(t) = -2 + (2 - 2t)
            assert_abs_diff_eq!(seg.u(t), -2.0 + (2.0 - 2.0 * t), epsilon = 1e-12);
        }
        assert_eq!(seg.end_state().unwrap(), State::new(0.0, 1.0));

        let hold = plastic_drain(State::new(0.0, 1.0), 0.7, &canon()).unwrap();
        assert_abs_diff_eq!(hold.u(0.2), 0.0, epsilon = 1e-15);
        assert_eq!(hold.end_state().unwrap(), State::new(0.0, 1.0));

        assert!(plastic_drain(State::new(1.0, 0.5), 1.0, &canon()).is_err());
    }

    #[test]
    fn kickoff_examples() {
        let seg = kickoff(State::new(0.0, 0.0), 1.0, 0.01, &canon()).unwrap();
        let end = seg.end_state().unwrap();
        // y(ε) = 1 - e^{-ε}
        assert_abs_diff_eq!(end.y, 1.0 - (-0.01f64).exp(), epsilon = 1e-5);
        assert!(end.z.abs() < 1.0);

        let seg = kickoff(State::new(0.0, -1.0), 1.0, 0.01, &canon()).unwrap();
        let end = seg.end_state().unwrap();
        assert!(end.y > 0.0 && end.z > -1.0);

        assert!(kickoff(State::new(1.0, 0.0), 1.0, 0.1, &canon()).is_err());
    }

    #[test]
    fn descent_examples() {
        let seg = descend_from_corner(State::new(-1.0, 0.0), 3.0, &canon()).unwrap();
        assert_abs_diff_eq!(seg.param("beta").unwrap(), 2.0, epsilon = 1e-12);
        // φ(t) = -(t/3)²
        assert_abs_diff_eq!(seg.state_at(1.5).unwrap().y, -0.25, epsilon = 1e-12);
        let end = seg.end_state().unwrap();
        assert_abs_diff_eq!(end.y, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(end.z, 0.0, epsilon = 1e-12);

        assert!(matches!(
            descend_from_corner(State::new(-1.0, 0.0), 0.5, &canon()),
            Err(Error::Infeasible { .. })
        ));

        let near = descend_from_corner(State::new(-1.0, 1.0 - 1e-9), 1e-3, &canon()).unwrap();
        assert_abs_diff_eq!(near.end_state().unwrap().z, 1.0 - 1e-9, epsilon = 1e-12);
    }

    #[test]
    fn descent_fallback_family_hits_endpoint_and_integral() {
        for &tt in &[1.05, 1.3, 1.6, 1.99] {
            let seg = descend_from_corner(State::new(-1.0, 0.0), tt, &canon()).unwrap();
            assert_abs_diff_eq!(seg.param("beta").unwrap(), 1.0 / (tt - 1.0), epsilon = 1e-12);
            let end = seg.end_state().unwrap();
            assert_abs_diff_eq!(end.y, -1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(end.z, 0.0, epsilon = 1e-12);
            let mut prev = 0.0;
            for i in 1..=100 {
                let y = seg.state_at(tt * i as f64 / 100.0).unwrap().y;
                assert!(y <= prev);
                prev = y;
            }
        }
    }

    #[test]
    fn mirrored_descent() {
        let seg = descend_from_corner(State::new(1.0, 0.0), 3.0, &canon()).unwrap();
        assert_eq!(seg.start_state(), State::new(0.0, -1.0));
        let end = seg.end_state().unwrap();
        assert_abs_diff_eq!(end.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(end.z, 0.0, epsilon = 1e-12);
    }

    fn check_synthesis(x0: State, xt: State, horizon: f64) -> ControlReport {
        let m = canon();
        let sched = synthesize_exact_control(x0, xt, horizon, &m).unwrap();
        assert_abs_diff_eq!(sched.total(), horizon, epsilon = 1e-12);
        let cfg = SolverConfig::new(1e-4, horizon).unwrap();
        let (report, _) = verify_control(x0, &sched, xt, &m, &cfg).unwrap();
        assert!(report.max_junction_residual <= 1e-9, "{report:?}");
        assert_eq!(report.max_constraint_violation, 0.0);
        report
    }

    #[test]
    fn synthesis_examples() {
        let r = check_synthesis(State::new(0.5, 0.0), State::new(-1.0, 0.0), 4.0);
        assert!(r.endpoint_error <= 1e-3, "{r:?}");

        let r = check_synthesis(State::new(0.0, 1.0), State::new(-1.0, 0.0), 3.0);
        assert!(r.endpoint_error <= 1e-3, "{r:?}");

        let r = check_synthesis(State::new(-1.0, 0.0), State::new(-1.0, 0.0), 4.0);
        assert!(r.endpoint_error <= 1e-3, "{r:?}");
    }

    #[test]
    fn synthesis_mirrored_and_boundary_starts() {
        for (x0, xt) in [
            (State::new(0.5, 0.0), State::new(1.0, 0.2)),
            (State::new(-2.0, -1.0), State::new(-0.5, 0.8)),
            (State::new(3.0, 1.0), State::new(2.0, -0.5)),
            (State::new(-3.0, 0.95), State::new(-3.0, -0.9)),
            (State::new(0.0, -1.0), State::new(-1.0, 0.0)),
            (State::new(0.0, 0.3), State::new(1.0, 0.3)),
        ] {
            let r = check_synthesis(x0, xt, 4.0);
            assert!(r.endpoint_error <= 1e-3, "{x0} -> {xt}: {r:?}");
        }
    }

    #[test]
    fn synthesis_with_lower_line_contact() {
        // starts heading down near z = -1: the kickoff is pinned on z = -1 for a while
        let sched = synthesize_exact_control(State::new(-4.0, -0.9), State::new(-1.0, 0.0), 4.0, &canon()).unwrap();
        assert_eq!(sched.segments()[0].param("touches_opposite_line"), Some(1.0));
        let r = check_synthesis(State::new(-4.0, -0.9), State::new(-1.0, 0.0), 4.0);
        assert!(r.endpoint_error <= 1e-3, "{r:?}");
    }

    #[test]
    fn synthesis_rejects_bad_targets() {
        let m = canon();
        assert!(synthesize_exact_control(State::new(0.0, 0.0), State::new(0.0, 0.5), 4.0, &m).is_err());
        assert!(synthesize_exact_control(State::new(0.0, 0.0), State::new(-1.0, 1.0), 4.0, &m).is_err());
        assert!(synthesize_exact_control(State::new(0.0, 0.0), State::new(-1.0, 0.0), 0.0, &m).is_err());
    }

    #[test]
    fn short_descents_overshoot() {
        // (1 - z_T)/|y_T| = 19 is far longer than the descent time
        let (x0, xt) = (State::new(0.0, 0.0), State::new(-0.1, -0.9));
        let sched = synthesize_exact_control(x0, xt, 4.0, &canon()).unwrap();
        let down = sched.segments().last().unwrap();
        assert!(down.param("lead").is_some());
        let end = down.end_state().unwrap();
        assert_abs_diff_eq!(end.y, -0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(end.z, -0.9, epsilon = 1e-12);
        let r = check_synthesis(x0, xt, 4.0);
        assert!(r.endpoint_error <= 1e-3, "{r:?}");
        assert!(matches!(
            descend_from_corner(xt, 2.0, &canon()),
            Err(Error::Infeasible { minimal_horizon: Some(t), .. }) if (t - 19.0).abs() < 1e-9
        ));
    }

    #[test]
    fn endpoint_error_is_first_order() {
        let m = canon();
        let (x0, xt) = (State::new(0.5, 0.0), State::new(-1.0, 0.0));
        let sched = synthesize_exact_control(x0, xt, 4.0, &m).unwrap();
        let errs: Vec<f64> = [1e-3, 5e-4, 2.5e-4]
            .iter()
            .map(|&h| {
                let cfg = SolverConfig::new(h, 4.0).unwrap();
                verify_control(x0, &sched, xt, &m, &cfg).unwrap().0.endpoint_error
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.5..=2.5).contains(&ratio), "{errs:?}");
        }
    }

    #[test]
    fn verify_trivial_and_defective_schedules() {
        let m = canon();
        let cfg = SolverConfig::new(1e-3, 1.0).unwrap();
        let x = State::new(-1.0, 0.0);
        let (r, _) = verify_control(x, &ControlSchedule::empty(), x, &m, &cfg).unwrap();
        assert_eq!(r.endpoint_error, 0.0);

        let sched = ControlSchedule::new(vec![
            ControlSegment::constant(CaseTag::Kickoff, 0.0, 1.0, &m, x).unwrap(),
            ControlSegment::constant(CaseTag::Kickoff, 1.0, 1.0, &m, x).unwrap(),
        ])
        .unwrap();
        assert_eq!(sched.junction_residuals(), vec![1.0]);
    }

    #[test]
    fn linearization_examples() {
        let cfg = SolverConfig::new(1e-3, 1.0).unwrap();
        let m = canon();
        let reference = integrate(State::new(0.1, 0.0), &m, &Unforced, &cfg).unwrap();
        let sys = linearize(&m, &reference).unwrap();
        assert!(sys.a.iter().all(|&a| a == -1.0));
        assert!(sys.b.iter().all(|&b| b == 0.0));

        let sq = DriftModel::new(
            Arc::new(FnDrift::new("z2", |x: State| -x.y + x.z * x.z)),
            0.5,
            0.5,
        )
        .unwrap();
        let still = Trajectory {
            times: (0..=10).map(|k| k as f64 * 0.1).collect(),
            states: vec![State::new(0.0, 0.2); 11],
            seed: None,
        };
        let sys = linearize(&sq, &still).unwrap();
        for (a, b) in sys.a.iter().zip(&sys.b) {
            assert_abs_diff_eq!(*a, -1.0, epsilon = 1e-6);
            assert_abs_diff_eq!(*b, 0.4, epsilon = 1e-6);
        }

        let far = Trajectory {
            times: vec![0.0, 0.1],
            states: vec![State::new(0.0, 0.0), State::new(2.0, 0.0)],
            seed: None,
        };
        assert!(linearize(&m, &far).is_err());
    }

    #[test]
    fn linear_control_examples() {
        let sys = LinearizedSystem::constant(-1.0, 0.0, 1.0, 1e-5).unwrap();
        let v = linear_control(&sys, (1.0, 1.0)).unwrap();
        for &t in &[0.0, 0.25, 0.5, 1.0] {
            let k = (t / 1e-5f64).round() as usize;
            assert_abs_diff_eq!(v.values[k], -3.0 * t * t - 2.0 * t + 4.0, epsilon = 1e-12);
        }
        let (y, z) = sys.resolve(&v).unwrap();
        assert_abs_diff_eq!(y, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(z, 1.0, epsilon = 1e-6);

        let zero = linear_control(&sys, (0.0, 0.0)).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));

        let v = linear_control(&sys, (1.0, 0.0)).unwrap();
        let (y, z) = sys.resolve(&v).unwrap();
        assert_abs_diff_eq!(y, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(z, 0.0, epsilon = 1e-6);
    }
}
