//! Strongly convex objectives and the modified objective `F^h`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot, norm, norm_sq};
use crate::rng;

/// A `μ`-convex objective with `L_F`-Lipschitz gradient.
///
/// Vectors are plain slices of length [`Objective::dim`]; output buffers are
/// supplied by the caller so simulation loops stay allocation free.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], out: &mut [f64]);

    /// `∇²F(x) k`.
    fn hess_vec(&self, x: &[f64], k: &[f64], out: &mut [f64]);

    /// `D³F(x)·(a, b)`, the derivative of `x ↦ ∇²F(x) b` in direction `a`.
    /// The default differentiates [`Objective::hess_vec`] numerically.
    fn third_derivative(&self, x: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let scale = 1e-5 * (1.0 + norm(x)) / norm(a).max(f64::MIN_POSITIVE);
        let xp: Vec<f64> = x.iter().zip(a).map(|(xi, ai)| xi + scale * ai).collect();
        let xm: Vec<f64> = x.iter().zip(a).map(|(xi, ai)| xi - scale * ai).collect();
        let mut hp = vec![0.0; d];
        let mut hm = vec![0.0; d];
        self.hess_vec(&xp, b, &mut hp);
        self.hess_vec(&xm, b, &mut hm);
        for i in 0..d {
            out[i] = (hp[i] - hm[i]) / (2.0 * scale);
        }
    }

    fn minimizer(&self) -> &[f64];

    /// Strong convexity constant `μ`.
    fn mu(&self) -> f64;

    /// Gradient Lipschitz constant `L_F`.
    fn lipschitz(&self) -> f64;

    /// The matrix `A` when `F(x) = ½⟨A(x - x*), x - x*⟩` exactly.
    fn quadratic_matrix(&self) -> Option<&DMatrix<f64>> {
        None
    }

    /// Dense Hessian assembled column by column from [`Objective::hess_vec`].
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        let mut col = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            self.hess_vec(x, &e, &mut col);
            for i in 0..d {
                m[(i, j)] = col[i];
            }
            e[j] = 0.0;
        }
        m
    }

    fn gradient_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient(x, &mut g);
        g
    }
}

/// `F(x) = ½⟨A(x - x*), x - x*⟩` with `A` symmetric positive definite.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    matrix: DMatrix<f64>,
    diagonal: Option<Vec<f64>>,
    shift: Vec<f64>,
    mu: f64,
    lip: f64,
}

impl QuadraticProblem {
    pub fn new(matrix: DMatrix<f64>, shift: Vec<f64>) -> Result<Self> {
        let d = matrix.nrows();
        if d == 0 || matrix.ncols() != d {
            return Err(Error::invalid("quadratic matrix must be square and non-empty"));
        }
        if shift.len() != d {
            return Err(Error::invalid(format!("shift has length {}, expected {d}", shift.len())));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * (1.0 + matrix.amax()) {
            return Err(Error::invalid("quadratic matrix is not symmetric"));
        }
        let (mu, lip) = linalg::symmetric_extremes(&matrix);
        if !(mu > 0.0) {
            return Err(Error::invalid(format!("quadratic matrix is not positive definite (λ_min = {mu})")));
        }
        let is_diag = (0..d).all(|i| (0..d).all(|j| i == j || matrix[(i, j)] == 0.0));
        let diagonal = is_diag.then(|| matrix.diagonal().iter().cloned().collect());
        Ok(QuadraticProblem { matrix, diagonal, shift, mu, lip })
    }

    pub fn from_diagonal(diag: &[f64], shift: Vec<f64>) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)), shift)
    }

    /// `A = I` in dimension `d`, minimizer at the origin.
    pub fn identity(d: usize) -> Self {
        Self::from_diagonal(&vec![1.0; d], vec![0.0; d]).expect("identity is SPD")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn diagonal(&self) -> Option<&[f64]> {
        self.diagonal.as_deref()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        match &self.diagonal {
            Some(diag) => {
                for ((o, a), vi) in out.iter_mut().zip(diag).zip(v) {
                    *o = a * vi;
                }
            }
            None => linalg::mat_vec(&self.matrix, v, out),
        }
    }
}

impl Objective for QuadraticProblem {
    fn dim(&self) -> usize {
        self.shift.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let e = linalg::sub(x, &self.shift);
        let mut ae = vec![0.0; e.len()];
        self.apply(&e, &mut ae);
        0.5 * dot(&ae, &e)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match &self.diagonal {
            Some(diag) => {
                for i in 0..diag.len() {
                    out[i] = diag[i] * (x[i] - self.shift[i]);
                }
            }
            None => {
                let e = linalg::sub(x, &self.shift);
                linalg::mat_vec(&self.matrix, &e, out);
            }
        }
    }

    fn hess_vec(&self, _x: &[f64], k: &[f64], out: &mut [f64]) {
        self.apply(k, out);
    }

    fn third_derivative(&self, _x: &[f64], _a: &[f64], _b: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn minimizer(&self) -> &[f64] {
        &self.shift
    }

    fn mu(&self) -> f64 {
        self.mu
    }

    fn lipschitz(&self) -> f64 {
        self.lip
    }

    fn quadratic_matrix(&self) -> Option<&DMatrix<f64>> {
        Some(&self.matrix)
    }

    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

/// `F(x) = ‖x‖² + ε Σᵢ cos(xᵢ)`, minimizer at the origin.
///
/// The Hessian is `diag(2 - ε cos xᵢ)`, so for `0 ≤ ε < 2` the function is
/// `(2 - ε)`-convex with `L_F = 2 + ε`. Strong convexity of the family is
/// only advertised for `ε < 1` ([`PerturbedQuadraticProblem::EPSILON_THRESHOLD`]);
/// larger values are accepted so that the assumption checks can be shown to
/// fail.
#[derive(Debug, Clone)]
pub struct PerturbedQuadraticProblem {
    epsilon: f64,
    origin: Vec<f64>,
}

impl PerturbedQuadraticProblem {
    pub const EPSILON_THRESHOLD: f64 = 1.0;

    pub fn new(dim: usize, epsilon: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be finite and non-negative, got {epsilon}")));
        }
        Ok(PerturbedQuadraticProblem { epsilon, origin: vec![0.0; dim] })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Objective for PerturbedQuadraticProblem {
    fn dim(&self) -> usize {
        self.origin.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|xi| xi * xi + self.epsilon * xi.cos()).sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = 2.0 * xi - self.epsilon * xi.sin();
        }
    }

    fn hess_vec(&self, x: &[f64], k: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = (2.0 - self.epsilon * x[i].cos()) * k[i];
        }
    }

    fn third_derivative(&self, x: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = self.epsilon * x[i].sin() * a[i] * b[i];
        }
    }

    fn minimizer(&self) -> &[f64] {
        &self.origin
    }

    fn mu(&self) -> f64 {
        2.0 - self.epsilon
    }

    fn lipschitz(&self) -> f64 {
        2.0 + self.epsilon
    }
}

/// Tagged problem record used by experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Either `diag` or a full symmetric `matrix`; `shift` defaults to zero.
    Quadratic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        diag: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrix: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shift: Option<Vec<f64>>,
    },
    PerturbedQuadratic { dim: usize, epsilon: f64 },
}

impl ProblemConfig {
    pub fn build(&self) -> Result<Box<dyn Objective>> {
        match self {
            ProblemConfig::Quadratic { diag, matrix, shift } => {
                let m = match (diag, matrix) {
                    (Some(d), None) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
                    (None, Some(rows)) => {
                        let n = rows.len();
                        if rows.iter().any(|r| r.len() != n) {
                            return Err(Error::invalid("quadratic matrix rows must all have length d"));
                        }
                        DMatrix::from_fn(n, n, |i, j| rows[i][j])
                    }
                    _ => return Err(Error::invalid("quadratic problem needs exactly one of `diag` or `matrix`")),
                };
                let shift = shift.clone().unwrap_or_else(|| vec![0.0; m.nrows()]);
                Ok(Box::new(QuadraticProblem::new(m, shift)?))
            }
            ProblemConfig::PerturbedQuadratic { dim, epsilon } => {
                Ok(Box::new(PerturbedQuadraticProblem::new(*dim, *epsilon)?))
            }
        }
    }
}

/// `F^h(x) = F(x) + (h/4)‖∇F(x)‖²`.
pub fn modified_objective(p: &dyn Objective, h: f64, x: &[f64]) -> f64 {
    let g = p.gradient_vec(x);
    p.value(x) + 0.25 * h * norm_sq(&g)
}

/// `∇F^h(x) = (I + (h/2)∇²F(x))∇F(x)`, written into `out`.
/// `scratch` must have length `dim`.
#[inline]
pub fn modified_gradient_into(p: &dyn Objective, h: f64, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
    p.gradient(x, scratch);
    p.hess_vec(x, scratch, out);
    for (o, g) in out.iter_mut().zip(scratch.iter()) {
        *o = g + 0.5 * h * *o;
    }
}

pub fn modified_gradient(p: &dyn Objective, h: f64, x: &[f64]) -> Vec<f64> {
    let d = p.dim();
    let mut out = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    modified_gradient_into(p, h, x, &mut out, &mut scratch);
    out
}

/// Non-gradient drifts that also give second-order weak approximations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlternativeDrift {
    /// `-(I - (h/2)∇²F)⁻¹ ∇F`
    Resolvent,
    /// `-exp((h/2)∇²F) ∇F`
    Exponential,
}

/// Matrix applied to `∇F(x)` by an alternative drift (sign excluded).
pub(crate) fn alternative_drift_matrix(
    hessian: &DMatrix<f64>,
    h: f64,
    variant: AlternativeDrift,
) -> Result<DMatrix<f64>> {
    let d = hessian.nrows();
    match variant {
        AlternativeDrift::Resolvent => {
            let m = DMatrix::identity(d, d) - hessian * (0.5 * h);
            m.lu().try_inverse().ok_or(Error::SingularHessianResolvent)
        }
        AlternativeDrift::Exponential => Ok(linalg::symmetric_function(hessian, |l| (0.5 * h * l).exp())),
    }
}

/// Alternative modified drift `b̄^h(x)`.
///
/// The resolvent variant requires `h·L_F < 2` so that `I - (h/2)∇²F` stays
/// invertible for every `x`.
pub fn alternative_modified_drift(
    p: &dyn Objective,
    h: f64,
    x: &[f64],
    variant: AlternativeDrift,
) -> Result<Vec<f64>> {
    if !(h >= 0.0) {
        return Err(Error::invalid(format!("step size must be non-negative, got {h}")));
    }
    if variant == AlternativeDrift::Resolvent && h * p.lipschitz() >= 2.0 {
        return Err(Error::invalid(format!(
            "resolvent drift needs h·L_F < 2 (h = {h}, L_F = {})",
            p.lipschitz()
        )));
    }
    let g = linalg::to_dvector(&p.gradient_vec(x));
    let hess = p.hessian(x);
    let out = match variant {
        AlternativeDrift::Resolvent => {
            let m = DMatrix::identity(p.dim(), p.dim()) - hess * (0.5 * h);
            m.lu().solve(&g).ok_or(Error::SingularHessianResolvent)?
        }
        AlternativeDrift::Exponential => alternative_drift_matrix(&hess, h, variant)? * g,
    };
    Ok(out.iter().map(|v| -v).collect())
}

/// Outcome of the sampled falsification test for the convexity assumptions.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// Half-width of the sampled box around `x*`.
    pub radius: f64,
    pub samples: usize,
    pub declared_mu: f64,
    pub declared_lip: f64,
    /// `‖∇F(x*)‖`.
    pub optimality_residual: f64,
    pub optimality_ok: bool,
    /// Smallest observed `⟨∇F(x₂)-∇F(x₁), x₂-x₁⟩ / ‖x₂-x₁‖²`.
    pub observed_mu: f64,
    pub mu_ok: bool,
    /// Largest observed `‖∇F(x₂)-∇F(x₁)‖ / ‖x₂-x₁‖`.
    pub observed_lip: f64,
    pub lip_ok: bool,
    /// Worst relative mismatch of the gradient against central differences of the value.
    pub gradient_fd_error: f64,
    /// Worst relative mismatch of `hess_vec` against central differences of the gradient.
    pub hess_vec_fd_error: f64,
    pub derivatives_ok: bool,
    pub modified: Vec<ModifiedConvexity>,
}

/// Sampled `μ`-convexity of `F^h` for one step size.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedConvexity {
    pub h: f64,
    pub observed_mu: f64,
    pub ok: bool,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.optimality_ok
            && self.mu_ok
            && self.lip_ok
            && self.derivatives_ok
            && self.modified.iter().all(|m| m.ok)
    }
}

pub const DEFAULT_CHECK_RADIUS: f64 = 10.0;
const CONVEXITY_SLACK: f64 = 1e-10;
pub const GRADIENT_FD_TOL: f64 = 1e-6;
pub const HESS_VEC_FD_TOL: f64 = 1e-5;

/// Monte Carlo falsification of strong convexity, gradient Lipschitz
/// continuity and `μ`-convexity of `F^h` over `[x* - R, x* + R]^d`.
///
/// Failures are recorded in the report; only bad arguments return `Err`.
pub fn check_assumptions(
    p: &dyn Objective,
    h_grid: &[f64],
    sample_count: usize,
    seed: u64,
    radius: f64,
) -> Result<AssumptionReport> {
    if sample_count < 2 {
        return Err(Error::invalid("check_assumptions needs at least 2 samples"));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("sampling radius must be positive"));
    }
    if let Some(h) = h_grid.iter().find(|h| !(**h >= 0.0)) {
        return Err(Error::invalid(format!("step sizes must be non-negative, got {h}")));
    }
    let d = p.dim();
    let xs = p.minimizer();
    let mu = p.mu();
    let lip = p.lipschitz();

    let g_star = p.gradient_vec(xs);
    let optimality_residual = norm(&g_star);
    let optimality_ok = optimality_residual <= 1e-12 * (1.0 + norm(xs));

    let mut observed_mu = f64::INFINITY;
    let mut observed_lip: f64 = 0.0;
    let mut mu_violation = false;
    let mut lip_violation = false;
    let mut modified_mu = vec![f64::INFINITY; h_grid.len()];
    let mut modified_violation = vec![false; h_grid.len()];
    let mut gradient_fd_error: f64 = 0.0;
    let mut hess_vec_fd_error: f64 = 0.0;

    let mut u = vec![0.0; 3 * d];
    let mut g1 = vec![0.0; d];
    let mut g2 = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    for i in 0..sample_count {
        rng::fill_uniform(seed, i as u64, -radius, radius, &mut u);
        let x1: Vec<f64> = (0..d).map(|j| xs[j] + u[j]).collect();
        let x2: Vec<f64> = (0..d).map(|j| xs[j] + u[d + j]).collect();
        let dx = linalg::sub(&x2, &x1);
        let dx2 = norm_sq(&dx);
        if dx2 == 0.0 {
            continue;
        }
        p.gradient(&x1, &mut g1);
        p.gradient(&x2, &mut g2);
        let dg = linalg::sub(&g2, &g1);
        let inner = dot(&dg, &dx);
        observed_mu = observed_mu.min(inner / dx2);
        if inner < mu * dx2 - CONVEXITY_SLACK {
            mu_violation = true;
        }
        let dg_norm = norm(&dg);
        observed_lip = observed_lip.max(dg_norm / dx2.sqrt());
        if dg_norm > lip * dx2.sqrt() + CONVEXITY_SLACK {
            lip_violation = true;
        }
        for (k, &h) in h_grid.iter().enumerate() {
            modified_gradient_into(p, h, &x1, &mut g1, &mut scratch);
            modified_gradient_into(p, h, &x2, &mut g2, &mut scratch);
            let inner_h = dot(&linalg::sub(&g2, &g1), &dx);
            modified_mu[k] = modified_mu[k].min(inner_h / dx2);
            if inner_h < mu * dx2 - CONVEXITY_SLACK {
                modified_violation[k] = true;
            }
        }

        // Derivative consistency at x1 along a third random direction.
        let dir: Vec<f64> = u[2 * d..].iter().map(|v| v / radius).collect();
        let (ge, he) = derivative_errors(p, &x1, &dir);
        gradient_fd_error = gradient_fd_error.max(ge);
        hess_vec_fd_error = hess_vec_fd_error.max(he);
    }

    let modified = h_grid
        .iter()
        .enumerate()
        .map(|(k, &h)| ModifiedConvexity {
            h,
            observed_mu: modified_mu[k],
            ok: !modified_violation[k] && mu > 0.0,
        })
        .collect();

    Ok(AssumptionReport {
        radius,
        samples: sample_count,
        declared_mu: mu,
        declared_lip: lip,
        optimality_residual,
        optimality_ok,
        observed_mu,
        mu_ok: !mu_violation && mu > 0.0,
        observed_lip,
        lip_ok: !lip_violation && lip >= mu,
        gradient_fd_error,
        hess_vec_fd_error,
        derivatives_ok: gradient_fd_error <= GRADIENT_FD_TOL && hess_vec_fd_error <= HESS_VEC_FD_TOL,
        modified,
    })
}

/// Relative errors of `(∇F, ∇²F·dir)` against central differences at `x`.
pub fn derivative_errors(p: &dyn Objective, x: &[f64], dir: &[f64]) -> (f64, f64) {
    let d = p.dim();
    let g = p.gradient_vec(x);
    let mut g_fd = vec![0.0; d];
    let mut xp = x.to_vec();
    for j in 0..d {
        let step = 1e-5 * (1.0 + x[j].abs());
        xp[j] = x[j] + step;
        let fp = p.value(&xp);
        xp[j] = x[j] - step;
        let fm = p.value(&xp);
        xp[j] = x[j];
        g_fd[j] = (fp - fm) / (2.0 * step);
    }
    let grad_err = linalg::dist(&g, &g_fd) / (1.0 + norm(&g));

    let mut hv = vec![0.0; d];
    p.hess_vec(x, dir, &mut hv);
    let step = 1e-5 * (1.0 + norm(x));
    let xp: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + step * b).collect();
    let xm: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a - step * b).collect();
    let gp = p.gradient_vec(&xp);
    let gm = p.gradient_vec(&xm);
    let hv_fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * step)).collect();
    let hess_err = linalg::dist(&hv, &hv_fd) / (1.0 + norm(&hv));
    (grad_err, hess_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_identity() -> QuadraticProblem {
        QuadraticProblem::identity(1)
    }

    /// Central difference of `F^h`, independent of `modified_gradient`.
    fn fd_modified_gradient(p: &dyn Objective, h: f64, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                let step = 1e-5 * (1.0 + x[j].abs());
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[j] += step;
                xm[j] -= step;
                (modified_objective(p, h, &xp) - modified_objective(p, h, &xm)) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn modified_objective_examples() {
        let p = scalar_identity();
        assert_eq!(modified_objective(&p, 0.0, &[2.0]), 2.0);
        assert_abs_diff_eq!(modified_objective(&p, 0.2, &[2.0]), 2.2, epsilon = 1e-15);
        let q = QuadraticProblem::from_diagonal(&[1.0, 4.0], vec![0.5, -1.0]).unwrap();
        assert_eq!(modified_objective(&q, 0.3, &[0.5, -1.0]), q.value(&[0.5, -1.0]));
    }

    #[test]
    fn modified_gradient_examples() {
        let p = scalar_identity();
        let g = modified_gradient(&p, 0.2, &[2.0]);
        assert_abs_diff_eq!(g[0], 2.2, epsilon = 1e-15);
        let fd = fd_modified_gradient(&p, 0.2, &[2.0]);
        assert!((fd[0] - 2.2).abs() < 1e-6 * 2.2);

        let q = QuadraticProblem::from_diagonal(&[1.0, 4.0], vec![0.0, 0.0]).unwrap();
        let g = modified_gradient(&q, 0.1, &[1.0, 1.0]);
        let fd = fd_modified_gradient(&q, 0.1, &[1.0, 1.0]);
        assert_abs_diff_eq!(g[0], 1.05, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 4.8, epsilon = 1e-12);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()));
        }
        assert_eq!(modified_gradient(&q, 0.1, &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn alternative_drift_examples() {
        let p = scalar_identity();
        let r = alternative_modified_drift(&p, 0.2, &[1.0], AlternativeDrift::Resolvent).unwrap();
        assert_abs_diff_eq!(r[0], -1.0 / 0.9, epsilon = 1e-14);
        let e = alternative_modified_drift(&p, 0.2, &[1.0], AlternativeDrift::Exponential).unwrap();
        // exp(0.1) by its Taylor series
        let series: f64 = (0..20).scan(1.0, |term, k| {
            let out = *term;
            *term *= 0.1 / (k + 1) as f64;
            Some(out)
        }).sum();
        assert_abs_diff_eq!(e[0], -series, epsilon = 1e-14);
        for v in [AlternativeDrift::Resolvent, AlternativeDrift::Exponential] {
            assert_eq!(alternative_modified_drift(&p, 0.2, &[0.0], v).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn resolvent_rejects_large_steps() {
        let q = QuadraticProblem::from_diagonal(&[1.0, 4.0], vec![0.0, 0.0]).unwrap();
        let err = alternative_modified_drift(&q, 0.5, &[1.0, 1.0], AlternativeDrift::Resolvent).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        assert!(alternative_modified_drift(&q, 0.49, &[1.0, 1.0], AlternativeDrift::Resolvent).is_ok());
    }

    #[test]
    fn quadratic_constants_are_extreme_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let q = QuadraticProblem::new(m, vec![1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(q.mu(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.lipschitz(), 3.0, epsilon = 1e-12);
        assert!(q.diagonal().is_none());
    }

    #[test]
    fn quadratic_rejects_bad_matrices() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QuadraticProblem::new(asym, vec![0.0; 2]).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(QuadraticProblem::new(indefinite, vec![0.0; 2]).is_err());
        assert!(QuadraticProblem::from_diagonal(&[1.0], vec![0.0; 2]).is_err());
    }

    #[test]
    fn identity_passes_all_checks() {
        let p = QuadraticProblem::identity(3);
        let r = check_assumptions(&p, &[0.0, 0.1, 0.5], 500, 1, DEFAULT_CHECK_RADIUS).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.observed_mu >= 1.0 - 1e-10);
        for m in &r.modified {
            assert!((m.observed_mu - (1.0 + m.h / 2.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn unperturbed_matches_quadratic() {
        let p = PerturbedQuadraticProblem::new(2, 0.0).unwrap();
        let r = check_assumptions(&p, &[0.1], 200, 4, DEFAULT_CHECK_RADIUS).unwrap();
        assert!(r.passed());
        assert!((r.observed_mu - 2.0).abs() < 1e-10 && (r.observed_lip - 2.0).abs() < 1e-10);
        let q = QuadraticProblem::from_diagonal(&[2.0, 2.0], vec![0.0, 0.0]).unwrap();
        for x in [[0.3, -1.2], [4.0, 2.0]] {
            assert_abs_diff_eq!(p.value(&x), q.value(&x), epsilon = 1e-12);
        }
    }

    #[test]
    fn small_perturbation_passes_large_fails() {
        let ok = PerturbedQuadraticProblem::new(2, 0.5).unwrap();
        let r = check_assumptions(&ok, &[0.05, 0.1], 1000, 9, DEFAULT_CHECK_RADIUS).unwrap();
        assert!(r.passed(), "{r:?}");

        let bad = PerturbedQuadraticProblem::new(2, 100.0).unwrap();
        let r = check_assumptions(&bad, &[0.1], 1000, 9, DEFAULT_CHECK_RADIUS).unwrap();
        assert!(!r.mu_ok);
        assert!(!r.passed());
        assert!(r.observed_mu < 0.0);
    }

    #[test]
    fn check_rejects_single_sample() {
        let p = scalar_identity();
        assert!(check_assumptions(&p, &[0.1], 1, 0, 1.0).is_err());
    }

    #[test]
    fn perturbed_third_derivative_matches_default() {
        let p = PerturbedQuadraticProblem::new(3, 0.7).unwrap();
        let x = [0.4, -1.3, 2.2];
        let a = [1.0, 0.5, -0.25];
        let b = [0.3, 2.0, 1.0];
        let mut exact = [0.0; 3];
        p.third_derivative(&x, &a, &b, &mut exact);
        // trait default on a wrapper without the override
        struct Plain(PerturbedQuadraticProblem);
        impl Objective for Plain {
            fn dim(&self) -> usize { self.0.dim() }
            fn value(&self, x: &[f64]) -> f64 { self.0.value(x) }
            fn gradient(&self, x: &[f64], o: &mut [f64]) { self.0.gradient(x, o) }
            fn hess_vec(&self, x: &[f64], k: &[f64], o: &mut [f64]) { self.0.hess_vec(x, k, o) }
            fn minimizer(&self) -> &[f64] { self.0.minimizer() }
            fn mu(&self) -> f64 { self.0.mu() }
            fn lipschitz(&self) -> f64 { self.0.lipschitz() }
        }
        let mut fd = [0.0; 3];
        Plain(p).third_derivative(&x, &a, &b, &mut fd);
        for i in 0..3 {
            assert!((exact[i] - fd[i]).abs() < 1e-7, "{exact:?} vs {fd:?}");
        }
    }

    #[test]
    fn problem_config_round_trip() {
        let cfg: ProblemConfig =
            serde_json::from_str(r#"{"kind":"quadratic","diag":[1.0,2.0],"shift":[0.5,0.5]}"#).unwrap();
        let p = cfg.build().unwrap();
        assert_eq!(p.minimizer(), &[0.5, 0.5]);
        assert_eq!(p.lipschitz(), 2.0);
        let cfg: ProblemConfig = serde_json::from_str(r#"{"kind":"perturbed_quadratic","dim":3,"epsilon":0.2}"#).unwrap();
        assert_eq!(cfg.build().unwrap().dim(), 3);
        assert!(serde_json::from_str::<ProblemConfig>(r#"{"kind":"quadratic","diag":[1.0],"bogus":1}"#).is_err());
        let both = ProblemConfig::Quadratic { diag: Some(vec![1.0]), matrix: Some(vec![vec![1.0]]), shift: None };
        assert!(both.build().is_err());
    }
}
