//! First-variation process of the modified SDE.

use rayon::prelude::*;

use super::ode::linear_decay;
use super::sde::{build_drifts, whole_steps, workspace_len, AnyDrift, Drift, SdeOptions};
use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::objective::Objective;
use crate::rng::{self, Domain};
use crate::stats::MeanEstimate;

/// Monte Carlo moments of `‖η(T)‖^{2p}` for `p = 1, 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentMoments {
    pub second: MeanEstimate,
    pub fourth: MeanEstimate,
    /// True when `η` was propagated exactly because it is deterministic
    /// (constant drift Jacobian and state-independent `σ`).
    pub deterministic: bool,
}

/// Jointly integrates `dY = -G(Y) ds + √h σ dB` and
/// `dη = -DG(Y)η ds + √h Dσ(s, Y)[η] dB`, `η(0) = k`, and returns moments of
/// `‖η(T)‖²` and `‖η(T)‖⁴`.
///
/// When `DG` is constant and `σ` does not depend on the state, `η(T) =
/// e^{-DG·T}k` for every path and is evaluated in closed form.
pub fn tangent_sde(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    x0: &[f64],
    k: &[f64],
    opts: &SdeOptions,
) -> Result<TangentMoments> {
    let d = p.dim();
    if x0.len() != d || k.len() != d || spec.dim() != d {
        return Err(Error::invalid("x0, k and the diffusion must have the problem dimension"));
    }
    if opts.ensemble == 0 || opts.substeps == 0 {
        return Err(Error::invalid("ensemble size and substeps must be positive"));
    }
    let n_steps = whole_steps(opts.horizon, opts.h)?;
    match build_drifts(p, opts.drift, &[opts.h])? {
        AnyDrift::Affine(mut v) => {
            let drift = v.pop().expect("one level");
            if spec.is_state_independent() {
                let jac = drift.constant_jacobian().expect("affine drift");
                let eta = linear_decay(jac, opts.horizon, k);
                let n2 = linalg::norm_sq(&eta);
                let constant = |v: f64| MeanEstimate { mean: v, std_error: 0.0, count: opts.ensemble };
                return Ok(TangentMoments { second: constant(n2), fourth: constant(n2 * n2), deterministic: true });
            }
            simulate(&drift, spec, x0, k, opts, n_steps)
        }
        AnyDrift::General(mut v) => {
            let drift = v.pop().expect("one level");
            simulate(&drift, spec, x0, k, opts, n_steps)
        }
    }
}

fn simulate<D: Drift>(
    drift: &D,
    spec: &DiffusionSpec,
    x0: &[f64],
    k: &[f64],
    opts: &SdeOptions,
    n_steps: usize,
) -> Result<TangentMoments> {
    let d = x0.len();
    let s = opts.substeps;
    let dt = opts.h / s as f64;
    let scale = (opts.h * dt).sqrt();
    let domain = if opts.coupled { Domain::Increments } else { Domain::Independent };
    let results: Vec<Result<f64>> = (0..opts.ensemble)
        .into_par_iter()
        .map(|m| {
            let mut y = x0.to_vec();
            let mut eta = k.to_vec();
            let mut g = vec![0.0; d];
            let mut jeta = vec![0.0; d];
            let mut noise = vec![0.0; d];
            let mut dnoise = vec![0.0; d];
            let mut ws = vec![0.0; workspace_len(d)];
            let mut buf = vec![0.0; s * d];
            for n in 0..n_steps {
                rng::fill_normals(opts.seed, domain, m as u64, n as u64, &mut buf);
                for j in 0..s {
                    let t = (n * s + j) as f64 * dt;
                    let z = &buf[j * d..(j + 1) * d];
                    drift.eval(&y, &mut g, &mut ws);
                    drift.jacobian_apply(&y, &eta, &mut jeta, &mut ws)?;
                    spec.sigma_apply(t, &y, z, &mut noise);
                    spec.sigma_derivative(t, &y, &eta, z, &mut dnoise);
                    for i in 0..d {
                        y[i] = y[i] - dt * g[i] + scale * noise[i];
                        eta[i] = eta[i] - dt * jeta[i] + scale * dnoise[i];
                    }
                }
                if !linalg::all_finite(&y) || !linalg::all_finite(&eta) {
                    return Err(Error::NonFiniteState { path: Some(m as u64), step: n + 1 });
                }
            }
            Ok(linalg::norm_sq(&eta))
        })
        .collect();
    let mut second = Vec::with_capacity(opts.ensemble);
    for r in results {
        second.push(r?);
    }
    let fourth: Vec<f64> = second.iter().map(|v| v * v).collect();
    Ok(TangentMoments {
        second: MeanEstimate::from_samples(&second),
        fourth: MeanEstimate::from_samples(&fourth),
        deterministic: false,
    })
}
