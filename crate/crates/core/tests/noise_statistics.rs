//! Monte Carlo checks of the noise samplers against their exact moments.

use elastoplast::ensemble::{par_runs, stream_rng, with_threads};
use elastoplast::noise::{
    basis_eval, sample_brownian_with, sample_decomposable_with, trapezoid_inner, BasisSpec, DecomposableLaw,
    Density, Projector, Weights,
};

const N: usize = 100_000;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64
}

#[test]
fn brownian_endpoint_and_covariance() {
    let h = 0.01;
    let samples: Vec<[f64; 3]> = par_runs(N, |r| {
        let w = sample_brownian_with(1.0, h, &mut stream_rng(21, r)).unwrap();
        [w.values[25], w.values[75], w.values[100]]
    });
    let at = |i: usize| samples.iter().map(|s| s[i]).collect::<Vec<_>>();
    let (w25, w75, w1) = (at(0), at(1), at(2));
    assert!(mean(&w1).abs() < 0.02);
    assert!((cov(&w1, &w1) - 1.0).abs() < 0.02);
    let second_moment = w25.iter().zip(&w75).map(|(a, b)| a * b).sum::<f64>() / N as f64;
    assert!((second_moment - 0.25).abs() < 0.02, "{second_moment}");
}

#[test]
fn expansion_reproduces_the_brownian_covariance() {
    // Σ_j e_j(s) e_j(t) → min(s, t) as J grows
    for (s, t) in [(0.25, 0.75), (0.5, 0.5), (0.1, 0.9), (1.0, 1.0)] {
        let k: f64 = (1..=64)
            .map(|j| basis_eval(j, s, 1.0).unwrap().1 * basis_eval(j, t, 1.0).unwrap().1)
            .sum();
        assert!((k - f64::min(s, t)).abs() < 0.01, "({s}, {t}): {k}");
    }
}

#[test]
fn single_mode_coefficient_has_unit_variance() {
    let law = DecomposableLaw::new(Weights::Explicit { values: vec![1.0] }, Density::default(), 1).unwrap();
    let basis = BasisSpec::new(1.0, 1).unwrap();
    let h = 0.1;
    let phi1: Vec<f64> = (0..=10).map(|k| basis_eval(1, k as f64 * h, 1.0).unwrap().0).collect();
    let coeffs: Vec<f64> = par_runs(N, |r| {
        let eta = sample_decomposable_with(&law, &basis, h, &mut stream_rng(22, r)).unwrap();
        trapezoid_inner(&eta.values, &phi1, h)
    });
    assert!((cov(&coeffs, &coeffs) - 1.0).abs() < 0.02);
}

#[test]
fn parseval_energy() {
    let law = DecomposableLaw::new(
        Weights::Geometric {
            first: 1.0,
            ratio: 0.5,
        },
        Density::default(),
        16,
    )
    .unwrap();
    let basis = BasisSpec::new(1.0, 16).unwrap();
    let h = 0.01;
    let energy: Vec<f64> = par_runs(N, |r| {
        let eta = sample_decomposable_with(&law, &basis, h, &mut stream_rng(23, r)).unwrap();
        trapezoid_inner(&eta.values, &eta.values, h)
    });
    let expected = law.sum_sq();
    assert!((mean(&energy) / expected - 1.0).abs() < 0.02, "{} vs {expected}", mean(&energy));
}

#[test]
fn coefficients_are_uncorrelated_with_the_residual() {
    let h = 1e-3;
    let proj = Projector::new(BasisSpec::new(1.0, 8).unwrap(), h).unwrap();
    let rows: Vec<(Vec<f64>, [f64; 2])> = par_runs(N, |r| {
        let w = sample_brownian_with(1.0, h, &mut stream_rng(24, r)).unwrap();
        let xi = proj.coefficients(&w).unwrap();
        let p = proj.reconstruct(&xi);
        (xi, [w.values[300] - p.values[300], w.values[700] - p.values[700]])
    });
    for n in 0..8 {
        let xi: Vec<f64> = rows.iter().map(|r| r.0[n]).collect();
        for t in 0..2 {
            let res: Vec<f64> = rows.iter().map(|r| r.1[t]).collect();
            let corr = cov(&xi, &res) / (cov(&xi, &xi) * cov(&res, &res)).sqrt();
            assert!(corr.abs() < 0.02, "xi_{} vs residual {t}: {corr}", n + 1);
        }
    }
}

#[test]
fn samplers_ignore_the_thread_count() {
    let law = DecomposableLaw::new(Weights::Geometric { first: 2.0, ratio: 0.3 }, Density::default(), 16).unwrap();
    let basis = BasisSpec::new(1.0, 16).unwrap();
    let draw = || {
        par_runs(64, |r| {
            let mut rng = stream_rng(25, r);
            let w = sample_brownian_with(1.0, 1e-3, &mut rng).unwrap();
            let d = sample_decomposable_with(&law, &basis, 1e-3, &mut rng).unwrap();
            (w.values, d.values)
        })
    };
    let one = with_threads(Some(1), draw);
    let many = with_threads(Some(8), draw);
    assert_eq!(one, many);
}
