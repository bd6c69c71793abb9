//! Exact block sampling of the coupled fine Euler–Maruyama recursion for
//! diagonal affine drifts and state-independent diagonal noise.
//!
//! With `G(y) = B(y - c)`, `B` diagonal, every component of the fine
//! recursion is `e_{k+1} = φ e_k + c_k Σ z` with `φ = 1 - δ b`. Over one
//! finest block (`S` standard normals per component) the quantities that
//! drive the rest of the path are the plain sum `Z` (the scheme's `γ`) and,
//! per level, the weighted sum `W_l` that the block adds to `e` at the end
//! of the level's step. `(Z, W_1, …, W_L)` is Gaussian with a covariance
//! fixed by the weights, so it is drawn directly from `L + 1` normals. The
//! joint law of all scheme and SDE states equals that of the fine kernel;
//! the realised paths differ from the fine kernel's for the same seed.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::sde::{whole_steps, KernelRun, KernelSpec};
use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::objective::Objective;
use crate::rng::{self, Domain};
use crate::scheme;

struct AggLevel {
    h: f64,
    ratio: usize,
    n_steps: usize,
    /// `φ^S` per component.
    decay: Vec<f64>,
    gamma_scale: f64,
    checkpoints: Vec<usize>,
}

pub(crate) struct AggregatedKernel<'a> {
    levels: Vec<AggLevel>,
    /// Factor `F` with `F Fᵀ = Cov(Z, W_1, …, W_L)`, row-major, per block
    /// and component.
    factors: Vec<f64>,
    center: Vec<f64>,
    spec: &'a DiffusionSpec,
    scheme_objective: Option<&'a dyn Objective>,
    x0: Vec<f64>,
    blocks: usize,
    seed: u64,
    domain: Domain,
}

impl<'a> AggregatedKernel<'a> {
    /// `drift_diags[l]` is the diagonal of `B` for level `l`; `shape_diag`
    /// the constant diagonal of the noise shape.
    pub(crate) fn new(
        p: &'a dyn Objective,
        spec: &'a DiffusionSpec,
        ks: &KernelSpec<'_>,
        drift_diags: Vec<Vec<f64>>,
        center: &[f64],
        shape_diag: &[f64],
    ) -> Result<Self> {
        let d = p.dim();
        if ks.x0.len() != d || spec.dim() != d {
            return Err(Error::invalid(format!("dimension mismatch: problem {d}, x0 {}, diffusion {}", ks.x0.len(), spec.dim())));
        }
        if !linalg::all_finite(ks.x0) {
            return Err(Error::invalid("x0 must be finite"));
        }
        if ks.substeps == 0 || ks.hs.is_empty() {
            return Err(Error::invalid("need at least one step size and one substep"));
        }
        let s = ks.substeps;
        let h_min = ks.hs.iter().cloned().fold(f64::INFINITY, f64::min);
        let blocks = whole_steps(ks.horizon, h_min)?;
        let delta0 = h_min / s as f64;
        let nl = ks.hs.len();
        let mut levels = Vec::with_capacity(nl);
        // Per level and component: fine-step noise coefficient without the
        // envelope, and φ.
        let mut coef = Vec::with_capacity(nl);
        for (l, &h) in ks.hs.iter().enumerate() {
            let ratio_f = (h / h_min).round();
            if ratio_f < 1.0 || (ratio_f * h_min - h).abs() > 1e-9 * h {
                return Err(Error::invalid(format!("step {h} is not an integer multiple of {h_min}")));
            }
            let ratio = ratio_f as usize;
            let n_steps = whole_steps(ks.horizon, h)?;
            if n_steps * ratio != blocks {
                return Err(Error::invalid(format!("T = {} is not a whole number of steps of size {h}", ks.horizon)));
            }
            let dt = h / s as f64;
            let phi: Vec<f64> = drift_diags[l].iter().map(|b| 1.0 - dt * b).collect();
            let scale = (h * delta0).sqrt();
            let checkpoints = match &ks.checkpoints {
                Some(c) => {
                    let c = c.get(l).cloned().unwrap_or_default();
                    if c.windows(2).any(|w| w[0] >= w[1]) || c.iter().any(|&n| n > n_steps) {
                        return Err(Error::invalid("checkpoints must be strictly increasing step indices ≤ N"));
                    }
                    c
                }
                None => vec![n_steps],
            };
            levels.push(AggLevel {
                h,
                ratio,
                n_steps,
                decay: phi.iter().map(|f| f.powi(s as i32)).collect(),
                gamma_scale: 1.0 / ((s * ratio) as f64).sqrt(),
                checkpoints,
            });
            coef.push((dt, scale, phi));
        }

        let k = nl + 1;
        let mut factors = vec![0.0; blocks * d * k * k];
        let mut w = vec![0.0; k * s];
        for b in 0..blocks {
            for i in 0..d {
                w[..s].fill(1.0);
                for (l, lv) in levels.iter().enumerate() {
                    let (dt, scale, phi) = &coef[l];
                    let n = b / lv.ratio;
                    let q = b % lv.ratio;
                    let row = &mut w[(l + 1) * s..(l + 2) * s];
                    for (j, r) in row.iter_mut().enumerate() {
                        let local = (q * s + j) / lv.ratio;
                        let t = (n * s + local) as f64 * dt;
                        *r = phi[i].powi((s - 1 - local) as i32) * scale * spec.envelope.value(t) * shape_diag[i];
                    }
                }
                let cov = DMatrix::from_fn(k, k, |a, c| {
                    (0..s).map(|j| w[a * s + j] * w[c * s + j]).sum::<f64>()
                });
                let f = symmetric_factor(cov);
                let o = (b * d + i) * k * k;
                for a in 0..k {
                    for c in 0..k {
                        factors[o + a * k + c] = f[(a, c)];
                    }
                }
            }
        }
        Ok(AggregatedKernel {
            levels,
            factors,
            center: center.to_vec(),
            spec,
            scheme_objective: ks.with_scheme.then_some(p),
            x0: ks.x0.to_vec(),
            blocks,
            seed: ks.seed,
            domain: ks.domain,
        })
    }

    fn per_state(&self) -> usize {
        (if self.scheme_objective.is_some() { 2 } else { 1 }) * self.x0.len()
    }

    fn simulate_path(&self, path: u64, out: &mut [f64]) -> Result<()> {
        let d = self.x0.len();
        let nl = self.levels.len();
        let k = nl + 1;
        let per_state = self.per_state();
        let mut base = vec![0usize; nl];
        for l in 1..nl {
            base[l] = base[l - 1] + self.levels[l - 1].checkpoints.len() * per_state;
        }
        let mut es: Vec<Vec<f64>> = vec![linalg::sub(&self.x0, &self.center); nl];
        let mut xs: Vec<Vec<f64>> = vec![self.x0.clone(); nl];
        let mut wacc = vec![vec![0.0; d]; nl];
        let mut zacc = vec![vec![0.0; d]; nl];
        let mut next_ck = vec![0usize; nl];
        let mut buf = vec![0.0; d * k];
        let mut v = vec![0.0; k];
        let mut y = vec![0.0; d];
        let mut gamma = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut noise = vec![0.0; d];
        let mut next = vec![0.0; d];

        for (l, lv) in self.levels.iter().enumerate() {
            if lv.checkpoints.first() == Some(&0) {
                let o = base[l];
                out[o..o + d].copy_from_slice(&self.x0);
                if self.scheme_objective.is_some() {
                    out[o + d..o + 2 * d].copy_from_slice(&self.x0);
                }
                next_ck[l] = 1;
            }
        }

        for b in 0..self.blocks {
            rng::fill_normals(self.seed, self.domain, path, b as u64, &mut buf);
            for i in 0..d {
                let f = &self.factors[(b * d + i) * k * k..(b * d + i + 1) * k * k];
                let u = &buf[i * k..(i + 1) * k];
                for a in 0..k {
                    v[a] = (0..k).map(|c| f[a * k + c] * u[c]).sum();
                }
                for l in 0..nl {
                    zacc[l][i] += v[0];
                    wacc[l][i] += v[l + 1];
                }
            }
            for (l, lv) in self.levels.iter().enumerate() {
                if (b + 1) % lv.ratio != 0 {
                    continue;
                }
                let n = (b + 1) / lv.ratio;
                let e = &mut es[l];
                for i in 0..d {
                    e[i] = lv.decay[i] * e[i] + wacc[l][i];
                }
                wacc[l].fill(0.0);
                if !linalg::all_finite(e) {
                    return Err(Error::NonFiniteState { path: Some(path), step: n });
                }
                let record = lv.checkpoints.get(next_ck[l]) == Some(&n);
                if let Some(p) = self.scheme_objective {
                    for i in 0..d {
                        gamma[i] = zacc[l][i] * lv.gamma_scale;
                    }
                    let x = &mut xs[l];
                    scheme::step_into(p, self.spec, x, (n - 1) as f64 * lv.h, lv.h, &gamma, &mut g, &mut noise, &mut next);
                    if !linalg::all_finite(&next) {
                        return Err(Error::NonFiniteState { path: Some(path), step: n });
                    }
                    x.copy_from_slice(&next);
                }
                zacc[l].fill(0.0);
                if record {
                    let o = base[l] + next_ck[l] * per_state;
                    for i in 0..d {
                        y[i] = e[i] + self.center[i];
                    }
                    out[o..o + d].copy_from_slice(&y);
                    if self.scheme_objective.is_some() {
                        out[o + d..o + 2 * d].copy_from_slice(&xs[l]);
                    }
                    next_ck[l] += 1;
                }
            }
        }
        Ok(())
    }
}

/// `F` with `F Fᵀ = m` for symmetric positive semidefinite `m`.
fn symmetric_factor(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.symmetric_eigen();
    let mut q = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        q.column_mut(j).scale_mut(s);
    }
    q
}

impl KernelRun for AggregatedKernel<'_> {
    fn run(&self, paths: usize) -> Result<Vec<f64>> {
        let stride = self.stride();
        let mut data = vec![0.0; paths * stride];
        let failure = data
            .par_chunks_mut(stride.max(1))
            .enumerate()
            .filter_map(|(m, out)| self.simulate_path(m as u64, out).err().map(|e| (m, e)))
            .min_by_key(|(m, _)| *m);
        match failure {
            Some((_, e)) => Err(e),
            None => Ok(data),
        }
    }

    fn stride(&self) -> usize {
        self.levels.iter().map(|l| l.checkpoints.len()).sum::<usize>() * self.per_state()
    }

    fn offset(&self, level: usize, checkpoint: usize) -> usize {
        let before: usize = self.levels[..level].iter().map(|l| l.checkpoints.len()).sum();
        (before + checkpoint) * self.per_state()
    }

    fn level_steps(&self, level: usize) -> usize {
        self.levels[level].n_steps
    }
}
