//! Gradient flow `dx/dt = -∇F(x)` and its tangent process.

use crate::error::{Error, Result};
use crate::linalg;
use crate::objective::Objective;

/// Terminal state of an ODE integration with solver statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub state: Vec<f64>,
    /// Accepted steps (0 for closed-form evaluations).
    pub steps: usize,
    pub rejected: usize,
    /// Largest local error estimate over accepted steps.
    pub local_error: f64,
}

impl OdeSolution {
    fn exact(state: Vec<f64>) -> Self {
        OdeSolution { state, steps: 0, rejected: 0, local_error: 0.0 }
    }
}

// Dormand–Prince 5(4) tableau; the nodes are not needed for autonomous systems.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const MAX_STEPS: usize = 10_000_000;

/// Adaptive Dormand–Prince integration of an autonomous system
/// `y' = f(y)` on `[0, horizon]` with `atol = rtol = tol`.
pub fn dopri5(mut f: impl FnMut(&[f64], &mut [f64]), y0: &[f64], horizon: f64, tol: f64) -> Result<OdeSolution> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::invalid(format!("horizon must be finite and ≥ 0, got {horizon}")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let n = y0.len();
    let mut y = y0.to_vec();
    if horizon == 0.0 {
        return Ok(OdeSolution::exact(y));
    }
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    f(&y, &mut k[0]);

    let scaled_norm = |v: &[f64], y: &[f64]| {
        (v.iter().zip(y).map(|(a, b)| (a / (tol + tol * b.abs())).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let d0 = scaled_norm(&y, &y);
    let d1 = scaled_norm(&k[0], &y);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(horizon);

    let mut t = 0.0;
    let (mut steps, mut rejected) = (0usize, 0usize);
    let mut local_error: f64 = 0.0;
    while t < horizon {
        if steps + rejected >= MAX_STEPS || h <= 16.0 * f64::EPSILON * t.max(1.0) {
            return Err(Error::ToleranceNotMet { t, step: steps });
        }
        let last = t + h >= horizon;
        if last {
            h = horizon - t;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                stage[i] = y[i] + h * acc;
            }
            f(&stage, &mut k[s]);
            if s == 6 {
                y_new.copy_from_slice(&stage);
            }
        }
        let mut err_sq = 0.0;
        let mut abs_sq = 0.0;
        for i in 0..n {
            let e: f64 = h * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
            let sc = tol + tol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / sc).powi(2);
            abs_sq += e * e;
        }
        let err = (err_sq / n as f64).sqrt();
        if !err.is_finite() || !linalg::all_finite(&y_new) {
            rejected += 1;
            h *= 0.2;
            continue;
        }
        if err <= 1.0 {
            t = if last { horizon } else { t + h };
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            steps += 1;
            local_error = local_error.max((abs_sq / n as f64).sqrt());
        } else {
            rejected += 1;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    Ok(OdeSolution { state: y, steps, rejected, local_error })
}

/// `X⁰(T)` for `dx/dt = -∇F(x)`, `x(0) = x0`.
///
/// Quadratic objectives use the exact map `x* + e^{-AT}(x0 - x*)`.
pub fn gradient_flow(p: &dyn Objective, x0: &[f64], horizon: f64, tol: f64) -> Result<OdeSolution> {
    if x0.len() != p.dim() {
        return Err(Error::invalid(format!("x0 has length {}, expected {}", x0.len(), p.dim())));
    }
    if !(horizon >= 0.0) || !(tol > 0.0) {
        return Err(Error::invalid("gradient_flow needs T ≥ 0 and tol > 0"));
    }
    if let Some(a) = p.quadratic_matrix() {
        let xs = p.minimizer();
        let e = linalg::sub(x0, xs);
        let decay = linear_decay(a, horizon, &e);
        return Ok(OdeSolution::exact(decay.iter().zip(xs).map(|(v, c)| v + c).collect()));
    }
    dopri5(|x, out| {
        p.gradient(x, out);
        for o in out.iter_mut() {
            *o = -*o;
        }
    }, x0, horizon, tol)
}

/// `e^{-Mt} v` for symmetric `M`.
pub(crate) fn linear_decay(m: &nalgebra::DMatrix<f64>, t: f64, v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || m[(i, j)] == 0.0));
    if diagonal {
        return (0..d).map(|i| (-m[(i, i)] * t).exp() * v[i]).collect();
    }
    let e = linalg::symmetric_function(m, |l| (-l * t).exp());
    let mut out = vec![0.0; d];
    linalg::mat_vec(&e, v, &mut out);
    out
}

/// `η⁰(T)` solving `dη/dt = -∇²F(X⁰(t))η`, `η(0) = k`, along the gradient flow
/// from `x0`.
pub fn tangent_ode(p: &dyn Objective, x0: &[f64], k: &[f64], horizon: f64, tol: f64) -> Result<Vec<f64>> {
    let d = p.dim();
    if x0.len() != d || k.len() != d {
        return Err(Error::invalid("x0 and k must have the problem dimension"));
    }
    if !(horizon >= 0.0) || !(tol > 0.0) {
        return Err(Error::invalid("tangent_ode needs T ≥ 0 and tol > 0"));
    }
    if let Some(a) = p.quadratic_matrix() {
        return Ok(linear_decay(a, horizon, k));
    }
    let mut joint = x0.to_vec();
    joint.extend_from_slice(k);
    let sol = dopri5(
        |z, out| {
            let (x, eta) = z.split_at(d);
            let (ox, oe) = out.split_at_mut(d);
            p.gradient(x, ox);
            p.hess_vec(x, eta, oe);
            for o in out.iter_mut() {
                *o = -*o;
            }
        },
        &joint,
        horizon,
        tol,
    )?;
    Ok(sol.state[d..].to_vec())
}
