//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance`; the report is printed even when
//! output is captured.
//! Criterion 2 is known to fail for `V = 1 + y²` (the stated offset is too
//! small by `1 - q`); the suite asserts that it fails for exactly that reason.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use elastoplast::control::{linear_control, linearize, ramp_to_plastic, synthesize_exact_control, verify_control, ControlSchedule};
use elastoplast::dynamics::{integrate, CubicSat, Linear, LinearCoupled, Trajectory, Unforced};
use elastoplast::ensemble::{derive_seed, par_runs, stream_rng, with_threads};
use elastoplast::ergodics::*;
use elastoplast::noise::{sample_brownian_with, BasisSpec, ForcingPath, Projector};
use elastoplast::{DriftModel, SolverConfig, State};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

/// Steps whose states have been checked against `|z| ≤ 1`, and the worst excess.
struct ConstraintTally {
    steps: AtomicU64,
    worst: Mutex<f64>,
}

impl ConstraintTally {
    fn record(&self, traj: &Trajectory) {
        self.steps.fetch_add(traj.states.len() as u64 - 1, Ordering::Relaxed);
        let v = traj.states.iter().map(|s| s.z.abs() - 1.0).fold(f64::NEG_INFINITY, f64::max);
        let mut w = self.worst.lock().unwrap();
        *w = w.max(v);
    }
}

fn kernel(h: f64) -> Kernel {
    Kernel::new(DriftModel::canonical(), NoiseSpec::White, h).unwrap()
}

fn stress_constraint(tally: &ConstraintTally) {
    let drifts: [std::sync::Arc<dyn elastoplast::dynamics::Drift>; 3] = [
        std::sync::Arc::new(Linear),
        std::sync::Arc::new(LinearCoupled { c: 0.5 }),
        std::sync::Arc::new(CubicSat),
    ];
    let models: Vec<DriftModel> = drifts
        .into_iter()
        .map(|d| DriftModel::new(d, 0.5, 1.0).unwrap())
        .collect();
    let cfg = SolverConfig::new(1e-3, 10.0).unwrap();
    let trajs = par_runs(1000, |r| {
        let mut rng = stream_rng(101, r);
        let model = &models[r as usize % 3];
        let scale = [1.0, 3.0, 10.0][(r as usize / 3) % 3];
        let w = sample_brownian_with(10.0, 1e-3, &mut rng).unwrap();
        let w = ForcingPath::new(w.kind, w.step, w.values.iter().map(|v| scale * v).collect()).unwrap();
        let x0 = State::new(rng.random_range(-5.0..5.0), rng.random_range(-1.0..=1.0));
        integrate(x0, model, &w, &cfg).unwrap()
    });
    for t in &trajs {
        tally.record(t);
    }
}

fn c2_lyapunov() -> (Verdict, LyapunovReport) {
    let k = kernel(1e-3);
    let mut grid = Vec::new();
    for y in [-5.0, 0.0, 5.0] {
        for z in [-0.5, 0.0, 0.5] {
            grid.push(State::new(y, z));
        }
    }
    let r = lyapunov_drift_check(&k, &grid, 100_000, 2).unwrap();
    let detail = format!(
        "E V(x1) <= {:.4} V + {:.3}: worst excess {:.1} SE (shifted offset {:.3}: {})",
        r.q,
        r.a,
        r.worst_excess_se,
        r.shifted_offset,
        if r.shifted_pass { "holds" } else { "fails" }
    );
    (Verdict { pass: r.pass, detail }, r)
}

fn c3_controls(tally: &ConstraintTally) -> Verdict {
    let model = DriftModel::canonical();
    let mut rng = stream_rng(3, 0);
    let cfg = SolverConfig::new(1e-4, 4.0).unwrap();
    let mut worst = 0.0_f64;
    let mut violation = 0.0_f64;
    for _ in 0..50 {
        let x0 = State::new(rng.random_range(-3.0..=3.0), rng.random_range(-1.0..=1.0));
        let ya: f64 = rng.random_range(0.1..=3.0);
        let yt = if rng.random::<bool>() { ya } else { -ya };
        let xt = State::new(yt, rng.random_range(-0.9..0.9));
        let sched = synthesize_exact_control(x0, xt, 4.0, &model).unwrap();
        let (rep, traj) = verify_control(x0, &sched, xt, &model, &cfg).unwrap();
        tally.record(&traj);
        worst = worst.max(rep.endpoint_error);
        violation = violation.max(rep.max_constraint_violation);
    }
    Verdict {
        pass: worst <= 1e-3 && violation == 0.0,
        detail: format!("50 pairs, worst endpoint error {worst:.2e}, constraint violation {violation}"),
    }
}

fn c4_case_two(tally: &ConstraintTally) -> Verdict {
    let model = DriftModel::canonical();
    let seg = ramp_to_plastic(State::new(1.0, 0.0), 0.5, &model).unwrap();
    let a = seg.param("a").unwrap();
    let end = seg.end_state().unwrap();
    let sched = ControlSchedule::new(vec![seg]).unwrap();
    let (rep, traj) = verify_control(
        State::new(1.0, 0.0),
        &sched,
        State::new(3.0, 1.0),
        &model,
        &SolverConfig::new(1e-5, 0.5).unwrap(),
    )
    .unwrap();
    tally.record(&traj);
    let closed = (a - 4.0).abs() < 1e-12 && end.distance(&State::new(3.0, 1.0)) < 1e-12;
    Verdict {
        pass: closed && rep.endpoint_error <= 1e-3,
        detail: format!("a = {a}, analytic end {end}, simulated error {:.2e}", rep.endpoint_error),
    }
}

fn c5_linearized() -> Verdict {
    let model = DriftModel::canonical();
    let reference = integrate(model.p(), &model, &Unforced, &SolverConfig::new(1e-5, 1.0).unwrap()).unwrap();
    let sys = linearize(&model, &reference).unwrap();
    let mut worst = 0.0_f64;
    for i in 0..5 {
        for j in 0..5 {
            let target = (-1.0 + 0.5 * i as f64, -1.0 + 0.5 * j as f64);
            let v = linear_control(&sys, target).unwrap();
            let (y, z) = sys.resolve(&v).unwrap();
            worst = worst.max((y - target.0).hypot(z - target.1));
        }
    }
    Verdict {
        pass: worst <= 1e-6,
        detail: format!("25 targets, worst endpoint error {worst:.2e}"),
    }
}

fn c6_brownian() -> Verdict {
    let h = 1e-3;
    let paths: Vec<ForcingPath> = par_runs(100, |r| sample_brownian_with(1.0, h, &mut stream_rng(6, r)).unwrap());
    let mut means = Vec::new();
    for j in [4, 16, 64] {
        let proj = Projector::new(BasisSpec::new(1.0, j).unwrap(), h).unwrap();
        let total: f64 = paths.iter().map(|w| proj.project(w).unwrap().sup_distance(w)).sum();
        means.push(total / paths.len() as f64);
    }
    let monotone = means.windows(2).all(|w| w[1] < w[0]);

    // covariance at t = 0.1, 0.2, …, 1.0
    let n = 100_000;
    let grid: Vec<usize> = (1..=10).map(|i| i * 10).collect();
    let rows: Vec<Vec<f64>> = par_runs(n, |r| {
        let w = sample_brownian_with(1.0, 1e-2, &mut stream_rng(derive_seed(6, 1), r)).unwrap();
        grid.iter().map(|&k| w.values[k]).collect()
    });
    let mut worst = 0.0_f64;
    for a in 0..grid.len() {
        for b in a..grid.len() {
            let cov = rows.iter().map(|r| r[a] * r[b]).sum::<f64>() / n as f64;
            let exact = 0.1 * (a.min(b) + 1) as f64;
            worst = worst.max((cov - exact).abs());
        }
    }
    Verdict {
        pass: monotone && worst <= 0.02,
        detail: format!(
            "mean sup error J=4,16,64: {:.4}, {:.4}, {:.4}; max covariance error {worst:.4}",
            means[0], means[1], means[2]
        ),
    }
}

fn c7_coupling_identity() -> Verdict {
    let k = kernel(1e-2);
    let cfg = CouplingConfig::default();
    let pairs = [
        (State::new(0.0, 0.0), State::new(0.1, 0.0)),
        (State::new(0.2, 0.0), State::new(-0.1, 0.1)),
        (State::new(0.0, 0.2), State::new(0.0, -0.2)),
    ];
    let mut worst = 0.0_f64;
    let mut parts = Vec::new();
    for (i, (x, xp)) in pairs.into_iter().enumerate() {
        assert!(x.distance(&State::default()) < cfg.delta_hat && xp.distance(&State::default()) < cfg.delta_hat);
        let est = estimate_kernel_tv(&k, x, xp, 100_000, &cfg.bins, 7 + i as u64, false).unwrap();
        let failures: usize = par_runs(25, |b| {
            let mut rng = stream_rng(derive_seed(77, i as u64), b);
            let mc = MaximalCoupling::build(&k, x, xp, &cfg, &mut rng).unwrap();
            (0..4000).filter(|_| !mc.draw(&mut rng).coupled).count()
        })
        .iter()
        .sum();
        let freq = failures as f64 / 100_000.0;
        worst = worst.max((freq - est.tv).abs());
        parts.push(format!("{:.4}/{:.4}", freq, est.tv));
    }
    Verdict {
        pass: worst <= 0.03,
        detail: format!("failure/TV {}; worst gap {worst:.4}", parts.join(", ")),
    }
}

const TAIL_H: f64 = 0.05;

fn tail_coupling() -> CouplingConfig {
    CouplingConfig {
        delta_hat: 3.0,
        aux_samples: 1024,
        ..CouplingConfig::default()
    }
}

fn c8_tails() -> (Verdict, f64) {
    let k = kernel(TAIL_H);
    let p = State::default();
    let hit = hitting_time(&k, State::new(5.0, 0.0), p, 0.5, 500, 10_000, 8).unwrap();
    let cpl = run_coupled_chains(&k, State::new(3.0, 0.0), State::new(-3.0, 0.0), p, &tail_coupling(), 500, 10_000, 9).unwrap();
    let ok = |f: &Option<TailFit>| f.map(|f| f.line.r_squared > 0.9 && f.line.slope < 0.0 && f.rate > 0.0).unwrap_or(false);
    let show = |f: &Option<TailFit>| match f {
        Some(f) => format!("rate {:.4} (R² {:.4}, k {}..{})", f.rate, f.line.r_squared, f.window.0, f.window.1),
        None => "no fit".into(),
    };
    let gamma = cpl.gamma_hat.unwrap_or(f64::NAN);
    (
        Verdict {
            pass: ok(&hit.fit) && ok(&cpl.fit),
            detail: format!("tau: {}; sigma: {}", show(&hit.fit), show(&cpl.fit)),
        },
        gamma,
    )
}

fn c9_mixing(gamma_coupling: f64) -> Verdict {
    let k = kernel(TAIL_H);
    let cfg = MixingConfig::default();
    let reference = empirical_invariant(&k, &cfg.bins, &InvariantConfig::default(), 90).unwrap();
    let report = estimate_mixing_rate(&k, &InitialLaw::dirac(State::new(5.0, 0.0)), &reference, &cfg, 91).unwrap();
    let (gamma, r2) = match report.rate {
        RateEstimate::Fitted { gamma, r_squared, .. } => (gamma, r_squared),
        RateEstimate::LowerBound { gamma_min } => (gamma_min, f64::NAN),
    };
    let ratio = gamma / gamma_coupling;
    let restart = stationary_samples(&k, &InvariantConfig::default(), 92).unwrap();
    let stationary = estimate_mixing_rate(&k, &InitialLaw::Samples { samples: restart }, &reference, &cfg, 93).unwrap();
    let at_floor = stationary.series.at_floor(cfg.floor_factor);
    Verdict {
        pass: r2 > 0.9 && (0.5..=2.0).contains(&ratio) && at_floor,
        detail: format!(
            "gamma {gamma:.4} (R² {r2:.4}); coupling {gamma_coupling:.4}, ratio {ratio:.2}; restart from mu at floor: {at_floor}"
        ),
    }
}

/// CSV outputs of reduced versions of the stochastic runs.
fn reproducibility_outputs() -> Vec<(&'static str, Vec<u8>)> {
    let k = kernel(TAIL_H);
    let p = State::default();
    let mut out = Vec::new();
    let mut csv = |name, f: &dyn Fn(&mut Vec<u8>)| {
        let mut buf = Vec::new();
        f(&mut buf);
        out.push((name, buf));
    };
    csv("trajectory", &|b| {
        let w = sample_brownian_with(2.0, 1e-3, &mut stream_rng(10, 0)).unwrap();
        let t = integrate(State::new(1.0, 0.5), &DriftModel::canonical(), &w, &SolverConfig::new(1e-3, 2.0).unwrap()).unwrap();
        t.write_csv(b).unwrap();
    });
    csv("lyapunov", &|b| {
        let r = lyapunov_drift_check(&k, &[State::new(2.0, 0.0), State::new(-1.0, 0.5)], 5000, 10).unwrap();
        for pt in r.points {
            b.extend(format!("{:e},{:e}\n", pt.mean, pt.se).bytes());
        }
    });
    csv("hitting", &|b| {
        let r = hitting_time(&k, State::new(5.0, 0.0), p, 0.5, 200, 2000, 11).unwrap();
        elastoplast::export::write_rows(b, &["s"], r.events.survival().iter().map(|s| [*s])).unwrap();
    });
    csv("coupling", &|b| {
        let r = run_coupled_chains(&k, State::new(3.0, 0.0), State::new(-3.0, 0.0), p, &tail_coupling(), 200, 500, 12).unwrap();
        elastoplast::export::write_rows(b, &["s"], r.sigma.survival().iter().map(|s| [*s])).unwrap();
    });
    csv("invariant+mixing", &|b| {
        let bins = MixingConfig::default().bins;
        let inv = InvariantConfig {
            samples: 20_000,
            burn_in: 50,
            ..InvariantConfig::default()
        };
        let mu = empirical_invariant(&k, &bins, &inv, 13).unwrap();
        mu.write_csv(&mut *b).unwrap();
        let cfg = MixingConfig {
            horizon: 10,
            n: 5000,
            ..MixingConfig::default()
        };
        let r = estimate_mixing_rate(&k, &InitialLaw::dirac(State::new(5.0, 0.0)), &mu, &cfg, 14).unwrap();
        r.series.write_csv(b).unwrap();
    });
    out
}

fn c10_reproducibility() -> Verdict {
    let one = with_threads(Some(1), reproducibility_outputs);
    let eight = with_threads(Some(8), reproducibility_outputs);
    let again = with_threads(Some(8), reproducibility_outputs);
    let differing: Vec<&str> = one
        .iter()
        .zip(&eight)
        .zip(&again)
        .filter(|((a, b), c)| a.1 != b.1 || b.1 != c.1)
        .map(|((a, _), _)| a.0)
        .collect();
    Verdict {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} outputs identical for 1 and 8 threads and on repeat", one.len())
        } else {
            format!("differing outputs: {}", differing.join(", "))
        },
    }
}

#[test]
fn acceptance() {
    let tally = ConstraintTally {
        steps: AtomicU64::new(0),
        worst: Mutex::new(f64::NEG_INFINITY),
    };
    let mut results: Vec<(u8, &str, Verdict, f64)> = Vec::new();
    let mut timed = |id, name, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        results.push((id, name, v, start.elapsed().as_secs_f64()));
    };

    let mut lyapunov = None;
    timed(2, "Lyapunov constants", &mut || {
        let (v, r) = c2_lyapunov();
        lyapunov = Some(r);
        v
    });
    timed(3, "exact controllability", &mut || c3_controls(&tally));
    timed(4, "ramp closed form", &mut || c4_case_two(&tally));
    timed(5, "linearised surjectivity", &mut c5_linearized);
    timed(6, "Brownian decomposition", &mut c6_brownian);
    timed(7, "coupling identity", &mut c7_coupling_identity);
    let mut gamma_coupling = f64::NAN;
    timed(8, "exponential tails", &mut || {
        let (v, g) = c8_tails();
        gamma_coupling = g;
        v
    });
    timed(9, "exponential mixing", &mut || c9_mixing(gamma_coupling));
    timed(10, "reproducibility", &mut c10_reproducibility);
    timed(1, "constraint invariance", &mut || {
        stress_constraint(&tally);
        let steps = tally.steps.load(Ordering::Relaxed);
        let worst = *tally.worst.lock().unwrap();
        Verdict {
            pass: steps >= 10_000_000 && worst <= 0.0,
            detail: format!("{steps} checked steps, max |z| - 1 = {worst}"),
        }
    });

    // written to the raw handle so the report shows without --nocapture
    results.sort_by_key(|r| r.0);
    let mut out = std::io::stdout().lock();
    writeln!(out).unwrap();
    for (id, name, v, secs) in &results {
        writeln!(
            out,
            "criterion {id:>2} {} {name}: {} [{secs:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        )
        .unwrap();
    }
    drop(out);

    for (id, name, v, _) in &results {
        if *id == 2 {
            // the stated offset omits 1 - q; the corrected bound must hold
            let r = lyapunov.as_ref().unwrap();
            assert!(!v.pass, "criterion 2 unexpectedly passed");
            assert!(r.shifted_pass, "criterion 2 fails beyond the known offset defect");
        } else {
            assert!(v.pass, "criterion {id} ({name}) failed: {}", v.detail);
        }
    }
}
