use modeq::diffusion::{DiffusionSpec, EnvelopeSchedule};
use modeq::estimators::{
    fit_order, strong_error, sweep, weak_error_vs_minimizer, weak_error_vs_modified_sde,
    weak_error_vs_modified_sde_uncoupled, weak_error_vs_ode, SweepOptions, Target, TestFunction,
};
use modeq::objective::QuadraticProblem;
use modeq::scheme::{NoiseMode, SchemeConfig};
use proptest::prelude::*;

fn exact_second_moment(a: &[f64], sigma: f64, h: f64, n: usize, x0: &[f64]) -> f64 {
    a.iter()
        .zip(x0)
        .map(|(a, x)| {
            let r = (1.0 - h * a).powi(2);
            let fixed = h * h * sigma * sigma / (1.0 - r);
            fixed + r.powi(n as i32) * (x * x - fixed)
        })
        .sum()
}

#[test]
fn estimates_are_unbiased_at_the_oracle() {
    let a = [1.0, 3.0];
    let x0 = [1.0, -1.0];
    let (sigma, h, n) = (0.7, 0.1, 30);
    let p = QuadraticProblem::from_diagonal(&a, vec![0.0; 2]).unwrap();
    let spec = DiffusionSpec::constant(sigma, 2);
    let m2 = exact_second_moment(&a, sigma, h, n, &x0);
    let phi = TestFunction::QuadraticForm { q: None };
    let (mut weak_hits, mut strong_hits) = (0, 0);
    for rep in 0..100 {
        let cfg = SchemeConfig::new(h, n, x0.to_vec(), rep);
        let w = weak_error_vs_minimizer(&p, &spec, &phi, &cfg, 2000).unwrap();
        weak_hits += usize::from((w.signed - m2).abs() <= 4.0 * w.std_error);
        let s = strong_error(&p, &spec, &cfg, 2000).unwrap().rms;
        strong_hits += usize::from((s.estimate - m2.sqrt()).abs() <= 4.0 * s.std_error);
    }
    assert!(weak_hits >= 99, "{weak_hits}/100");
    assert!(strong_hits >= 99, "{strong_hits}/100");
}

#[test]
fn coupling_reduces_variance() {
    let p = QuadraticProblem::from_diagonal(&[1.0, 2.0], vec![0.0; 2]).unwrap();
    let spec = DiffusionSpec::scalar(EnvelopeSchedule::Exponential { c: 1.0, nu: 1.0 }, 2);
    let phi = TestFunction::QuadraticForm { q: None };
    let cfg = SchemeConfig::new(0.1, 10, vec![0.5, 0.5], 3);
    let coupled = weak_error_vs_modified_sde(&p, &spec, &phi, &cfg, 2000, 256).unwrap();
    let independent = weak_error_vs_modified_sde_uncoupled(&p, &spec, &phi, &cfg, 2000, 256).unwrap();
    assert!(coupled.coupled && !independent.coupled);
    let gain = independent.std_error / coupled.std_error;
    assert!(gain >= 5.0, "variance reduction {gain:.2}×");
}

#[test]
fn std_error_scales_as_inverse_root_ensemble() {
    let p = QuadraticProblem::from_diagonal(&[1.0, 2.0], vec![0.0; 2]).unwrap();
    let spec = DiffusionSpec::constant(1.0, 2);
    let cfg = SchemeConfig::new(0.1, 20, vec![1.0, 1.0], 5);
    let scaled: Vec<f64> = [1_000usize, 10_000, 100_000]
        .iter()
        .map(|&m| {
            let r = weak_error_vs_ode(&p, &spec, &TestFunction::ObjectiveResidual, &cfg, m).unwrap();
            r.std_error * (m as f64).sqrt()
        })
        .collect();
    for w in scaled.windows(2) {
        assert!((w[0] / w[1] - 1.0).abs() <= 0.2, "{scaled:?}");
    }
}

#[test]
fn long_horizon_vs_minimizer_is_first_order() {
    let p = QuadraticProblem::from_diagonal(&[1.0, 2.0], vec![0.0; 2]).unwrap();
    let spec = DiffusionSpec::constant(1.0, 2);
    let opts = SweepOptions { x0: vec![1.0, 1.0], seed: 8, substeps: 1, noise_mode: NoiseMode::default() };
    let out = sweep(
        &p,
        &spec,
        &TestFunction::ObjectiveResidual,
        &[0.2, 0.1, 0.05, 0.025],
        20.0,
        10_000,
        Target::VsMinimizer,
        &opts,
    )
    .unwrap();
    assert!(out.used.iter().all(|u| *u));
    let fit = out.fit.unwrap();
    assert!((fit.slope - 1.0).abs() < 0.1, "slope {}", fit.slope);
}

proptest! {
    #[test]
    fn fit_recovers_exact_power_laws(
        slope in -3.0f64..3.0,
        intercept in -5.0f64..5.0,
        hs in prop::collection::btree_set(1u32..10_000, 3..8),
        weighted in any::<bool>(),
    ) {
        let points: Vec<(f64, f64)> = hs
            .iter()
            .map(|&k| {
                let h = k as f64 * 1e-4;
                (h, intercept.exp() * h.powf(slope))
            })
            .collect();
        let weights: Vec<f64> = (0..points.len()).map(|i| 1.0 + i as f64).collect();
        let fit = fit_order(&points, weighted.then_some(weights.as_slice())).unwrap();
        prop_assert!((fit.slope - slope).abs() <= 1e-12);
        prop_assert!((fit.intercept - intercept).abs() <= 1e-11);
        prop_assert!((fit.r_squared - 1.0).abs() <= 1e-12);
    }
}
