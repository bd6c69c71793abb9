//! Slice helpers for the small dense vectors used in the hot loops.

use nalgebra::{DMatrix, DVector};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

pub fn mat_vec(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let n = m.ncols();
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..n {
            acc += m[(i, j)] * x[j];
        }
        *o = acc;
    }
}

pub fn to_dvector(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

/// `V f(Λ) Vᵀ` for a symmetric matrix.
pub fn symmetric_function(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let fl = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    v * fl * v.transpose()
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn symmetric_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}
