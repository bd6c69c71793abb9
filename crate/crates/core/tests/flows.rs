use modeq::diffusion::{DiffusionSpec, EnvelopeSchedule, Shape};
use modeq::flows::{simulate_sde, DriftKind, SdeOptions};
use modeq::objective::{PerturbedQuadraticProblem, QuadraticProblem};
use modeq::stats::MeanEstimate;

fn sq(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum()
}

#[test]
fn reference_is_converged_in_substeps() {
    let p = QuadraticProblem::from_diagonal(&[1.0, 2.0], vec![0.0; 2]).unwrap();
    let spec = DiffusionSpec::scalar(EnvelopeSchedule::Exponential { c: 1.0, nu: 1.0 }, 2);
    let mean = |s: usize| {
        let set = simulate_sde(&p, &spec, &[0.5, 0.5], &SdeOptions::new(DriftKind::Modified, 0.1, 1.0, s, 20_000, 17)).unwrap();
        MeanEstimate::from_samples(&(0..set.paths).map(|m| sq(set.terminal(m))).collect::<Vec<_>>())
    };
    let (a, b) = (mean(256), mean(512));
    let ci = 1.96 * a.std_error.hypot(b.std_error);
    assert!((a.mean - b.mean).abs() < ci, "{} vs {} (CI {ci})", a.mean, b.mean);
}

/// Frozen bound on `sup_t E‖Y^h(t) - x*‖² / (1 + ‖x₀ - x*‖²)`. The ratio
/// at `t = 0` tends to 1 as `‖x₀‖` grows and the fitted runs never exceeded it.
const LARGE_TIME_C: f64 = 1.0;

#[test]
fn moments_are_bounded_uniformly_in_time() {
    let p = PerturbedQuadraticProblem::new(2, 0.5).unwrap();
    let spec = DiffusionSpec::new(EnvelopeSchedule::Constant { c: 1.0 }, Shape::StateScaled { gain: 0.5 }, vec![0.0; 2])
        .unwrap();
    for x0 in [[1.0, 1.0], [0.0, 0.0], [3.0, -2.0], [-5.0, 4.0]] {
        let mut opts = SdeOptions::new(DriftKind::Modified, 0.1, 12.0, 4, 5000, 23);
        opts.checkpoints = (0..=120).step_by(5).collect();
        let set = simulate_sde(&p, &spec, &x0, &opts).unwrap();
        let bound = LARGE_TIME_C * (1.0 + sq(&x0));
        for c in 0..opts.checkpoints.len() {
            let est = MeanEstimate::from_samples(&(0..set.paths).map(|m| sq(set.state(m, c))).collect::<Vec<_>>());
            assert!(est.mean <= bound + 3.0 * est.std_error, "x0 = {x0:?}, step {}: {}", opts.checkpoints[c], est.mean);
        }
    }
}
