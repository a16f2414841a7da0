//! One function per subcommand. Each writes its CSV files into the run
//! directory and returns a JSON summary for the manifest.

use std::time::Instant;

use elastoplast::control::{linear_control, linearize, synthesize_exact_control, verify_control};
use elastoplast::dynamics::{integrate, validate_drift, verify_dwell, DriftGrid, Forcing, SolverConfig, Trajectory, Unforced};
use elastoplast::ensemble::{derive_seed, par_runs, stream_rng};
use elastoplast::ergodics::{
    empirical_invariant, estimate_kernel_tv, estimate_mixing_rate, hitting_time, lyapunov_drift_check,
    run_coupled_chains, EventTimes, InitialLaw, Kernel, MaximalCoupling, MixingConfig, NoiseSpec,
};
use elastoplast::export::write_rows;
use elastoplast::noise::{sample_brownian_with, sample_decomposable_with, BasisSpec, Projector};
use elastoplast::{DriftModel, Error, State};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::output::{OutputRecord, RunDir};
use crate::{state, CliError, Command, Overrides};

/// Endpoint tolerance used by `validate` for the control round trip.
pub const CONTROL_TOLERANCE: f64 = 1e-3;

pub fn execute(cmd: Command, cfg: &ExperimentConfig, flags: &Overrides) -> Result<OutputRecord, CliError> {
    let hash = cfg.hash();
    let id = flags
        .id
        .clone()
        .unwrap_or_else(|| format!("{}-{}", cmd.name(), &hash[..12]));
    let mut dir = RunDir::create(&flags.out, &id, cfg)?;
    let start = Instant::now();
    let model = cfg.model()?;
    let outcome = match cmd {
        Command::Simulate => simulate(cfg, &model, &mut dir),
        Command::Control => control(cfg, &model, &mut dir),
        Command::Lincontrol => lincontrol(cfg, &model, &mut dir),
        Command::Lyapunov => lyapunov(cfg, model, &mut dir),
        Command::Recur => recur(cfg, model, &mut dir),
        Command::KernelTv => kernel_tv(cfg, model, &mut dir),
        Command::Couple => couple(cfg, model, &mut dir),
        Command::Mix => mix(cfg, model, &mut dir),
        Command::Invariant => invariant(cfg, model, &mut dir),
        Command::NoiseCheck => noise_check(cfg, &mut dir),
        Command::Validate => validate(cfg, &model, &mut dir),
    };
    let (summary, failure) = match outcome {
        Ok(Checked::Ok(s)) => (s, None),
        Ok(Checked::Failed(s, why)) => (s, Some(why)),
        Err(e) => return Err(e),
    };
    let record = OutputRecord {
        id,
        command: cmd.name().into(),
        config_hash: hash,
        version: env!("CARGO_PKG_VERSION").into(),
        wall_clock: start.elapsed().as_secs_f64(),
        files: Vec::new(),
        summary,
    };
    let record = dir.finish(record)?;
    match failure {
        Some(why) => Err(CliError::Failed(why)),
        None => Ok(record),
    }
}

enum Checked {
    Ok(Value),
    Failed(Value, String),
}

type Outcome = Result<Checked, CliError>;

fn kernel(cfg: &ExperimentConfig, model: DriftModel) -> Result<Kernel, CliError> {
    Ok(Kernel::new(model, cfg.noise_spec()?, cfg.h())?)
}

fn simulate(cfg: &ExperimentConfig, model: &DriftModel, dir: &mut RunDir) -> Outcome {
    let t0 = model.t0();
    let h = cfg.h();
    let horizon = cfg.solver.horizon.unwrap_or(10.0 * t0);
    let periods = (horizon / t0).round();
    if (horizon / t0 - periods).abs() > 1e-9 * periods.max(1.0) {
        return Err(CliError::Invalid(Error::Precondition(format!(
            "horizon {horizon} is not a whole number of periods T₀ = {t0}"
        ))));
    }
    let noise = cfg.noise_spec()?;
    let basis = match &noise {
        NoiseSpec::Decomposable(law) => Some(BasisSpec::new(t0, law.j)?),
        _ => None,
    };
    let period = SolverConfig::new(h, t0)?;
    let mut rng = stream_rng(cfg.seed, 0);
    let mut x = state(cfg.experiment.from);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x],
        seed: Some(cfg.seed),
    };
    for p in 0..periods as usize {
        let forcing: Box<dyn Forcing> = match &noise {
            NoiseSpec::None => Box::new(Unforced),
            NoiseSpec::White => Box::new(sample_brownian_with(t0, h, &mut rng)?),
            NoiseSpec::Decomposable(law) => Box::new(sample_decomposable_with(
                law,
                basis.as_ref().expect("basis"),
                h,
                &mut rng,
            )?),
        };
        let piece = integrate(x, model, forcing.as_ref(), &period)?;
        let offset = p as f64 * t0;
        traj.times.extend(piece.times[1..].iter().map(|t| t + offset));
        traj.states.extend_from_slice(&piece.states[1..]);
        x = piece.endpoint();
    }
    dir.write("trajectory.csv", |w| traj.write_csv(w))?;
    Ok(Checked::Ok(json!({
        "endpoint": traj.endpoint(),
        "steps": traj.states.len() - 1,
        "max_constraint_violation": traj.max_constraint_violation(),
    })))
}

fn control(cfg: &ExperimentConfig, model: &DriftModel, dir: &mut RunDir) -> Outcome {
    let e = &cfg.experiment;
    let (x0, xt) = (state(e.from), state(e.to));
    let schedule = synthesize_exact_control(x0, xt, e.t, model)?;
    let sim = SolverConfig::new(e.control_h, e.t)?.with_seed(cfg.seed);
    let (report, traj) = verify_control(x0, &schedule, xt, model, &sim)?;
    dir.write("control.csv", |w| schedule.write_csv(w, e.control_h))?;
    dir.write("trajectory.csv", |w| traj.write_csv(w))?;
    Ok(Checked::Ok(json!({
        "report": report,
        "schedule": schedule.metadata(),
        "within_tolerance": report.endpoint_error <= CONTROL_TOLERANCE,
    })))
}

fn lincontrol(cfg: &ExperimentConfig, model: &DriftModel, dir: &mut RunDir) -> Outcome {
    let sim = SolverConfig::new(cfg.h(), model.t0())?;
    let reference = integrate(model.p(), model, &Unforced, &sim)?;
    let sys = linearize(model, &reference)?;
    let mut rows = Vec::new();
    for (i, target) in cfg.experiment.targets.iter().enumerate() {
        let v = linear_control(&sys, (target[0], target[1]))?;
        let (y, z) = sys.resolve(&v)?;
        let err = (y - target[0]).hypot(z - target[1]);
        dir.write(&format!("forcing_{i}.csv"), |w| v.write_csv(w))?;
        rows.push([target[0], target[1], y, z, err]);
    }
    let worst = rows.iter().map(|r| r[4]).fold(0.0, f64::max);
    dir.write("lincontrol.csv", |w| {
        write_rows(w, &["target_y", "target_z", "reached_y", "reached_z", "error"], &rows)
    })?;
    Ok(Checked::Ok(json!({ "targets": rows.len(), "max_error": worst })))
}

fn lyapunov(cfg: &ExperimentConfig, model: DriftModel, dir: &mut RunDir) -> Outcome {
    let k = kernel(cfg, model)?;
    let grid: Vec<State> = cfg.experiment.starts.iter().map(|s| state(*s)).collect();
    let report = lyapunov_drift_check(&k, &grid, cfg.experiment.n, cfg.seed)?;
    dir.write("lyapunov.csv", |w| {
        write_rows(
            w,
            &["y", "z", "v0", "mean", "se", "bound"],
            report.points.iter().map(|p| [p.x0.y, p.x0.z, p.v0, p.mean, p.se, p.bound]),
        )
    })?;
    Ok(Checked::Ok(serde_json::to_value(&report).map_err(std::io::Error::other)?))
}

fn survival_summary(events: &EventTimes, fit: Option<&elastoplast::ergodics::TailFit>) -> Value {
    json!({
        "runs": events.runs(),
        "events": events.times.len(),
        "censored": events.censored,
        "horizon": events.horizon,
        "fit": fit,
    })
}

fn write_survival(dir: &mut RunDir, name: &str, events: &EventTimes) -> std::io::Result<()> {
    let s = events.survival();
    dir.write(name, |w| {
        write_rows(w, &["k", "survival"], s.iter().enumerate().map(|(k, p)| [k as f64, *p]))
    })
}

fn recur(cfg: &ExperimentConfig, model: DriftModel, dir: &mut RunDir) -> Outcome {
    let p = model.p();
    let k = kernel(cfg, model)?;
    let e = &cfg.experiment;
    let stats = hitting_time(&k, state(e.from), p, e.delta, e.k, e.n, cfg.seed)?;
    write_survival(dir, "survival.csv", &stats.events)?;
    let mut summary = survival_summary(&stats.events, stats.fit.as_ref());
    summary["kappa_hat"] = json!(stats.kappa_hat);
    Ok(Checked::Ok(summary))
}

fn kernel_tv(cfg: &ExperimentConfig, model: DriftModel, dir: &mut RunDir) -> Outcome {
    let k = kernel(cfg, model)?;
    let e = &cfg.experiment;
    let (x, xp) = (state(e.x), state(e.x_prime));
    let est = estimate_kernel_tv(&k, x, xp, e.n, &e.coupling_bins, cfg.seed, false)?;
    let coupling = cfg.coupling();
    let mut rng = stream_rng(derive_seed(cfg.seed, 3), 0);
    let failure = MaximalCoupling::build(&k, x, xp, &coupling, &mut rng)?.failure_probability();
    dir.write("kernel_tv.csv", |w| {
        write_rows(w, &["tv", "floor", "coupling_failure"], [[est.tv, est.floor, failure]])
    })?;
    Ok(Checked::Ok(json!({ "estimate": est, "coupling_failure": failure })))
}

fn couple(cfg: &ExperimentConfig, model: DriftModel, dir: &mut RunDir) -> Outcome {
    let p = model.p();
    let k = kernel(cfg, model)?;
    let e = &cfg.experiment;
    let report = run_coupled_chains(&k, state(e.x), state(e.x_prime), p, &cfg.coupling(), e.k, e.n, cfg.seed)?;
    write_survival(dir, "survival.csv", &report.sigma)?;
    let mut summary = survival_summary(&report.sigma, report.fit.as_ref());
    summary["gamma_hat"] = json!(report.gamma_hat);
    summary["v_sum"] = json!(report.v_sum);
    summary["attempts"] = json!(report.attempts);
    Ok(Checked::Ok(summary))
}

fn mix(cfg: &ExperimentConfig, model: DriftModel, dir: &mut RunDir) -> Outcome {
    let k = kernel(cfg, model)?;
    let e = &cfg.experiment;
    let reference = empirical_invariant(&k, &e.bins, &e.invariant, derive_seed(cfg.seed, 1))?;
    let mcfg = MixingConfig {
        horizon: e.k as usize,
        n: e.n,
        bins: e.bins,
        floor_factor: e.floor_factor,
        probe: e.probe,
    };
    let law = InitialLaw::dirac(state(e.from));
    let report = estimate_mixing_rate(&k, &law, &reference, &mcfg, derive_seed(cfg.seed, 2))?;
    dir.write("tv.csv", |w| report.series.write_csv(w))?;
    if let Some(probe) = &report.probe {
        dir.write("tv_probe.csv", |w| probe.write_csv(w))?;
    }
    Ok(Checked::Ok(json!({
        "rate": report.rate,
        "fit": report.fit,
        "v_lambda": report.v_lambda,
        "n": report.n,
        "reference_samples": report.reference_samples,
    })))
}

fn invariant(cfg: &ExperimentConfig, model: DriftModel, dir: &mut RunDir) -> Outcome {
    let k = kernel(cfg, model)?;
    let e = &cfg.experiment;
    let m = empirical_invariant(&k, &e.bins, &e.invariant, cfg.seed)?;
    dir.write("invariant.csv", |w| m.write_csv(w))?;
    let line = |c: &[u64]| c.iter().sum::<u64>() as f64 / m.total() as f64;
    Ok(Checked::Ok(json!({
        "samples": m.total(),
        "occupied_cells": m.occupied(),
        "upper_line_mass": line(m.upper_line()),
        "lower_line_mass": line(m.lower_line()),
        "overflow_fraction": m.overflow_fraction(),
    })))
}

fn noise_check(cfg: &ExperimentConfig, dir: &mut RunDir) -> Outcome {
    let t0 = cfg.model.t0;
    let h = cfg.h();
    let paths = cfg.experiment.paths;
    let brownian = par_runs(paths, |r| sample_brownian_with(t0, h, &mut stream_rng(cfg.seed, r)));
    let brownian: Vec<_> = brownian.into_iter().collect::<Result<_, _>>()?;
    let mut levels = cfg.experiment.levels.clone();
    levels.sort_unstable();
    levels.dedup();
    let mut rows = Vec::new();
    for &j in &levels {
        let proj = Projector::new(BasisSpec::new(t0, j)?, h)?;
        let errs = par_runs(paths, |r| {
            let w = &brownian[r as usize];
            proj.project(w).map(|p| p.sup_distance(w))
        });
        let errs: Vec<f64> = errs.into_iter().collect::<Result<_, _>>()?;
        let mean = errs.iter().sum::<f64>() / paths as f64;
        let max = errs.iter().copied().fold(0.0, f64::max);
        rows.push([j as f64, mean, max]);
    }
    let monotone = rows.windows(2).all(|w| w[1][1] <= w[0][1]);
    dir.write("noise_check.csv", |w| write_rows(w, &["J", "mean_sup_error", "max_sup_error"], &rows))?;
    Ok(Checked::Ok(json!({ "paths": paths, "levels": levels, "monotone": monotone })))
}

fn validate(cfg: &ExperimentConfig, model: &DriftModel, dir: &mut RunDir) -> Outcome {
    let drift = validate_drift(model, &DriftGrid::default())?;
    let dwell = verify_dwell(model, model.smooth_radius() / 4.0, &SolverConfig::new(cfg.h(), model.t0())?)?;
    let e = &cfg.experiment;
    let (x0, xt) = (state(e.from), state(e.to));
    let schedule = synthesize_exact_control(x0, xt, e.t, model)?;
    let (report, _) = verify_control(x0, &schedule, xt, model, &SolverConfig::new(e.control_h, e.t)?)?;
    let control_pass = report.endpoint_error <= CONTROL_TOLERANCE && report.max_constraint_violation == 0.0;
    let pass = drift.pass && dwell.pass && control_pass;
    dir.write("validate.csv", |w| {
        write_rows(
            w,
            &["drift_max_violation", "dwell_max_distance", "control_endpoint_error"],
            [[drift.max_violation, dwell.max_distance, report.endpoint_error]],
        )
    })?;
    let summary = json!({
        "pass": pass,
        "drift": drift,
        "dwell": dwell,
        "control": { "pass": control_pass, "report": report },
    });
    if pass {
        Ok(Checked::Ok(summary))
    } else {
        let mut failed = Vec::new();
        if !drift.pass {
            failed.push("drift certificate");
        }
        if !dwell.pass {
            failed.push("dwell");
        }
        if !control_pass {
            failed.push("control round trip");
        }
        Ok(Checked::Failed(summary, failed.join(", ")))
    }
}
