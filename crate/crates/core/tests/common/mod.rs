#![allow(dead_code)]

use modeq::objective::{Objective, PerturbedQuadraticProblem, QuadraticProblem};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// A random strongly convex objective with its convexity constant computed
/// independently of the crate: dense quadratics for even `i`, perturbed
/// quadratics for odd `i`.
pub fn random_instance(i: u64) -> (Box<dyn Objective>, f64, Vec<f64>) {
    let mut r = rng(1000 + i);
    let d = r.random_range(1..=5);
    let x0: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
    if i.is_multiple_of(2) {
        let b = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
        let floor = r.random_range(0.1..1.5);
        let a = b.transpose() * &b + DMatrix::identity(d, d) * floor;
        let mu = a.clone().symmetric_eigen().eigenvalues.min();
        let shift: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        (Box::new(QuadraticProblem::new(a, shift).unwrap()), mu, x0)
    } else {
        let eps = r.random_range(0.0..0.95);
        (Box::new(PerturbedQuadraticProblem::new(d, eps).unwrap()), 2.0 - eps, x0)
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Composite Simpson rule on `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}
