//! Euler–Maruyama on a fine grid for `dY = -G(Y) ds + √h σ(s, Y) dB`.
//!
//! `G` is `∇F` (first-order SDE), `∇F^h` (modified SDE) or one of the
//! alternative modified drifts. Fine increments come from the same counter
//! keyed blocks as the scheme's Brownian-increment mode, which couples the
//! two pathwise.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::AggregatedKernel;
use crate::diffusion::{DiffusionSpec, Shape};
use crate::error::{Error, Result};
use crate::linalg;
use crate::objective::{self, AlternativeDrift, Objective};
use crate::rng::{self, Domain};
use crate::scheme::{self, SchemeConfig};

/// Drift of the continuous-time reference, written as `-G(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// `G = ∇F`
    #[default]
    Plain,
    /// `G = ∇F^h = (I + (h/2)∇²F)∇F`
    Modified,
    /// `G = (I - (h/2)∇²F)⁻¹∇F`
    Resolvent,
    /// `G = exp((h/2)∇²F)∇F`
    Exponential,
}

/// Evaluation of `G` and its Jacobian.
pub(crate) trait Drift: Send + Sync {
    fn eval(&self, y: &[f64], out: &mut [f64], ws: &mut [f64]);

    /// `DG(y)η`.
    fn jacobian_apply(&self, y: &[f64], eta: &[f64], out: &mut [f64], ws: &mut [f64]) -> Result<()>;

    /// `DG` when it does not depend on `y`.
    fn constant_jacobian(&self) -> Option<&DMatrix<f64>>;
}

/// `G(y) = B(y - c)`: every drift kind on a quadratic objective.
pub(crate) struct AffineDrift {
    b: DMatrix<f64>,
    diag: Option<Vec<f64>>,
    center: Vec<f64>,
}

impl AffineDrift {
    fn new(a: &DMatrix<f64>, center: &[f64], kind: DriftKind, h: f64) -> Result<Self> {
        let d = a.nrows();
        let b = match kind {
            DriftKind::Plain => a.clone(),
            DriftKind::Modified => a + a * a * (0.5 * h),
            DriftKind::Resolvent => objective::alternative_drift_matrix(a, h, AlternativeDrift::Resolvent)? * a,
            DriftKind::Exponential => objective::alternative_drift_matrix(a, h, AlternativeDrift::Exponential)? * a,
        };
        let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || b[(i, j)] == 0.0));
        let diag = diagonal.then(|| (0..d).map(|i| b[(i, i)]).collect());
        Ok(AffineDrift { b, diag, center: center.to_vec() })
    }
}

impl Drift for AffineDrift {
    #[inline(always)]
    fn eval(&self, y: &[f64], out: &mut [f64], ws: &mut [f64]) {
        match &self.diag {
            Some(b) => {
                for i in 0..y.len() {
                    out[i] = b[i] * (y[i] - self.center[i]);
                }
            }
            None => {
                for i in 0..y.len() {
                    ws[i] = y[i] - self.center[i];
                }
                linalg::mat_vec(&self.b, &ws[..y.len()], out);
            }
        }
    }

    fn jacobian_apply(&self, _y: &[f64], eta: &[f64], out: &mut [f64], _ws: &mut [f64]) -> Result<()> {
        linalg::mat_vec(&self.b, eta, out);
        Ok(())
    }

    fn constant_jacobian(&self) -> Option<&DMatrix<f64>> {
        Some(&self.b)
    }
}

/// `G` built from a general objective's derivatives.
pub(crate) struct ObjectiveDrift<'a> {
    p: &'a dyn Objective,
    kind: DriftKind,
    h: f64,
}

impl Drift for ObjectiveDrift<'_> {
    fn eval(&self, y: &[f64], out: &mut [f64], ws: &mut [f64]) {
        let d = y.len();
        match self.kind {
            DriftKind::Plain => self.p.gradient(y, out),
            DriftKind::Modified => objective::modified_gradient_into(self.p, self.h, y, out, &mut ws[..d]),
            DriftKind::Resolvent | DriftKind::Exponential => {
                let variant = if self.kind == DriftKind::Resolvent {
                    AlternativeDrift::Resolvent
                } else {
                    AlternativeDrift::Exponential
                };
                match objective::alternative_modified_drift(self.p, self.h, y, variant) {
                    Ok(v) => {
                        for i in 0..d {
                            out[i] = -v[i];
                        }
                    }
                    // Surfaces as a non-finite state at this step.
                    Err(_) => out.fill(f64::NAN),
                }
            }
        }
    }

    fn jacobian_apply(&self, y: &[f64], eta: &[f64], out: &mut [f64], ws: &mut [f64]) -> Result<()> {
        let d = y.len();
        match self.kind {
            DriftKind::Plain => self.p.hess_vec(y, eta, out),
            DriftKind::Modified => {
                // D(∇F + (h/2)∇²F∇F)η = ∇²Fη + (h/2)(D³F(η, ∇F) + ∇²F∇²Fη)
                let (g, rest) = ws.split_at_mut(d);
                let (hk, rest) = rest.split_at_mut(d);
                let (third, hhk) = rest.split_at_mut(d);
                self.p.gradient(y, g);
                self.p.hess_vec(y, eta, hk);
                self.p.third_derivative(y, eta, g, third);
                self.p.hess_vec(y, hk, &mut hhk[..d]);
                for i in 0..d {
                    out[i] = hk[i] + 0.5 * self.h * (third[i] + hhk[i]);
                }
            }
            _ => {
                return Err(Error::invalid(
                    "tangent processes are only available for the plain and modified drifts",
                ))
            }
        }
        Ok(())
    }

    fn constant_jacobian(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

/// Scratch length needed by [`Drift`] implementations in dimension `d`.
pub(crate) fn workspace_len(d: usize) -> usize {
    4 * d
}

pub(crate) enum AnyDrift<'a> {
    Affine(Vec<AffineDrift>),
    General(Vec<ObjectiveDrift<'a>>),
}

/// One drift per step size; affine whenever the objective is an exact quadratic.
pub(crate) fn build_drifts<'a>(p: &'a dyn Objective, kind: DriftKind, hs: &[f64]) -> Result<AnyDrift<'a>> {
    if kind == DriftKind::Resolvent {
        if let Some(h) = hs.iter().find(|&&h| h * p.lipschitz() >= 2.0) {
            return Err(Error::invalid(format!(
                "resolvent drift needs h·L_F < 2 (h = {h}, L_F = {})",
                p.lipschitz()
            )));
        }
    }
    Ok(match p.quadratic_matrix() {
        Some(a) => AnyDrift::Affine(
            hs.iter().map(|&h| AffineDrift::new(a, p.minimizer(), kind, h)).collect::<Result<_>>()?,
        ),
        None => AnyDrift::General(hs.iter().map(|&h| ObjectiveDrift { p, kind, h }).collect()),
    })
}

/// `N = round(T/h)`, rejecting horizons that are not a whole number of steps.
pub(crate) fn whole_steps(horizon: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) || !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::invalid(format!("need h > 0 and finite T ≥ 0 (h = {h}, T = {horizon})")));
    }
    let n = (horizon / h).round();
    if (n * h - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::invalid(format!("T = {horizon} is not an integer multiple of h = {h}")));
    }
    Ok(n as usize)
}

pub(crate) struct Level<D> {
    pub h: f64,
    /// `h / h_min`.
    ratio: usize,
    /// Fine step `h / S`.
    dt: f64,
    /// `√(h·δ₀)`, applied to sums of `ratio` finest standard normals.
    scale: f64,
    /// `1/√(S·ratio)`, turning the step's normal sum into `γ`.
    gamma_scale: f64,
    pub n_steps: usize,
    /// `ς(k·dt)` for every fine step.
    env: Vec<f64>,
    pub checkpoints: Vec<usize>,
    drift: D,
}

/// Several step sizes `h_l = r_l·h_min` driven by one Brownian path sampled
/// at the finest resolution `δ₀ = h_min / S`. Level `l` integrates with fine
/// step `h_l / S`, aggregating `r_l` finest increments per fine step, and
/// (optionally) runs the scheme with `γ` formed from all increments of its
/// step. With a single level this is plain coupled Euler–Maruyama.
pub(crate) struct CoupledKernel<'a, D> {
    pub levels: Vec<Level<D>>,
    spec: &'a DiffusionSpec,
    scheme_objective: Option<&'a dyn Objective>,
    x0: Vec<f64>,
    substeps: usize,
    blocks: usize,
    seed: u64,
    domain: Domain,
    /// Diagonal of the shape when `σ` does not depend on the state.
    shape_diag: Option<Vec<f64>>,
}

impl<'a, D: Drift> CoupledKernel<'a, D> {
    /// Values kept per path: for each level and checkpoint, `Y` then `X`
    /// (the latter only when the scheme runs).
    pub fn stride(&self) -> usize {
        let per_state = if self.scheme_objective.is_some() { 2 } else { 1 } * self.x0.len();
        self.levels.iter().map(|l| l.checkpoints.len() * per_state).sum()
    }

    /// Offset of `(level, checkpoint)` inside a path's record.
    pub fn offset(&self, level: usize, checkpoint: usize) -> usize {
        let per_state = if self.scheme_objective.is_some() { 2 } else { 1 } * self.x0.len();
        let before: usize = self.levels[..level].iter().map(|l| l.checkpoints.len()).sum();
        (before + checkpoint) * per_state
    }

    pub fn run(&self, paths: usize) -> Result<Vec<f64>> {
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

    fn simulate_path(&self, path: u64, out: &mut [f64]) -> Result<()> {
        let d = self.x0.len();
        let s = self.substeps;
        let nl = self.levels.len();
        let with_scheme = self.scheme_objective.is_some();
        let per_state = if with_scheme { 2 * d } else { d };

        let mut ys: Vec<Vec<f64>> = vec![self.x0.clone(); nl];
        let mut xs: Vec<Vec<f64>> = vec![self.x0.clone(); nl];
        let mut em_acc = vec![vec![0.0; d]; nl];
        let mut sch_acc = vec![vec![0.0; d]; nl];
        let mut em_left: Vec<usize> = self.levels.iter().map(|l| l.ratio).collect();
        let mut em_k = vec![0usize; nl];
        let mut next_ck = vec![0usize; nl];
        let mut next_ck_x = vec![0usize; nl];
        let mut base = vec![0usize; nl];
        for l in 1..nl {
            base[l] = base[l - 1] + self.levels[l - 1].checkpoints.len() * per_state;
        }
        let mut g = vec![0.0; d];
        let mut noise = vec![0.0; d];
        let mut next = vec![0.0; d];
        let mut gamma = vec![0.0; d];
        let mut ws = vec![0.0; workspace_len(d)];
        let mut buf = vec![0.0; s * d];

        for l in 0..nl {
            let lv = &self.levels[l];
            if lv.checkpoints.first() == Some(&0) {
                let o = base[l];
                out[o..o + d].copy_from_slice(&self.x0);
                if with_scheme {
                    out[o + d..o + 2 * d].copy_from_slice(&self.x0);
                }
                next_ck[l] = 1;
                next_ck_x[l] = 1;
            }
        }

        for n0 in 0..self.blocks {
            rng::fill_normals(self.seed, self.domain, path, n0 as u64, &mut buf);
            for j in 0..s {
                let z = &buf[j * d..(j + 1) * d];
                for l in 0..nl {
                    let lv = &self.levels[l];
                    let acc = &mut em_acc[l];
                    for i in 0..d {
                        acc[i] += z[i];
                    }
                    if with_scheme {
                        let sa = &mut sch_acc[l];
                        for i in 0..d {
                            sa[i] += z[i];
                        }
                    }
                    em_left[l] -= 1;
                    if em_left[l] > 0 {
                        continue;
                    }
                    em_left[l] = lv.ratio;
                    let k = em_k[l];
                    let y = &mut ys[l];
                    lv.drift.eval(y, &mut g, &mut ws);
                    let env = lv.env[k];
                    match &self.shape_diag {
                        Some(sd) => {
                            for i in 0..d {
                                noise[i] = sd[i] * acc[i];
                            }
                        }
                        None => self.spec.shape_apply(y, acc, &mut noise),
                    }
                    for i in 0..d {
                        y[i] = y[i] - lv.dt * g[i] + lv.scale * (noise[i] * env);
                    }
                    acc.fill(0.0);
                    em_k[l] = k + 1;
                    if (k + 1).is_multiple_of(s) {
                        let n = (k + 1) / s;
                        if !linalg::all_finite(y) {
                            return Err(Error::NonFiniteState { path: Some(path), step: n });
                        }
                        if lv.checkpoints.get(next_ck[l]) == Some(&n) {
                            let o = base[l] + next_ck[l] * per_state;
                            out[o..o + d].copy_from_slice(y);
                            next_ck[l] += 1;
                        }
                    }
                }
            }
            if let Some(p) = self.scheme_objective {
                for l in 0..nl {
                    let lv = &self.levels[l];
                    if (n0 + 1) % lv.ratio != 0 {
                        continue;
                    }
                    let n = (n0 + 1) / lv.ratio - 1;
                    let sa = &mut sch_acc[l];
                    if s * lv.ratio == 1 {
                        gamma.copy_from_slice(sa);
                    } else {
                        for i in 0..d {
                            gamma[i] = sa[i] * lv.gamma_scale;
                        }
                    }
                    sa.fill(0.0);
                    let x = &mut xs[l];
                    scheme::step_into(p, self.spec, x, n as f64 * lv.h, lv.h, &gamma, &mut g, &mut noise, &mut next);
                    if !linalg::all_finite(&next) {
                        return Err(Error::NonFiniteState { path: Some(path), step: n + 1 });
                    }
                    x.copy_from_slice(&next);
                    if lv.checkpoints.get(next_ck_x[l]) == Some(&(n + 1)) {
                        let o = base[l] + next_ck_x[l] * per_state + d;
                        out[o..o + d].copy_from_slice(x);
                        next_ck_x[l] += 1;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Diagonal of the shape when `σ` does not depend on the state.
fn constant_shape_diag(spec: &DiffusionSpec) -> Option<Vec<f64>> {
    spec.is_state_independent().then(|| match &spec.shape {
        Shape::Diagonal(base) => base.clone(),
        _ => vec![1.0; spec.dim()],
    })
}

/// Parameters of a coupled multi-level run.
pub(crate) struct KernelSpec<'s> {
    pub drift: DriftKind,
    pub hs: &'s [f64],
    pub horizon: f64,
    pub substeps: usize,
    pub x0: &'s [f64],
    pub seed: u64,
    pub domain: Domain,
    pub with_scheme: bool,
    /// Coarse step checkpoints per level; `None` keeps only the terminal state.
    pub checkpoints: Option<Vec<Vec<usize>>>,
    /// Allow exact block sampling when the drift is diagonal affine and the
    /// noise state-independent. Same joint law, different realised paths.
    pub aggregate: bool,
}

/// Dispatches to a monomorphised kernel for the objective's drift family and
/// hands it to `f`.
pub(crate) fn with_kernel<R>(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    ks: &KernelSpec<'_>,
    f: impl FnOnce(&dyn KernelRun) -> Result<R>,
) -> Result<R> {
    match build_drifts(p, ks.drift, ks.hs)? {
        AnyDrift::Affine(drifts) => {
            let diags = drifts.iter().map(|d| d.diag.clone()).collect::<Option<Vec<_>>>();
            match (ks.aggregate, diags, constant_shape_diag(spec)) {
                (true, Some(diags), Some(shape)) => {
                    f(&AggregatedKernel::new(p, spec, ks, diags, &drifts[0].center, &shape)?)
                }
                _ => f(&assemble(p, spec, ks, drifts)?),
            }
        }
        AnyDrift::General(drifts) => f(&assemble(p, spec, ks, drifts)?),
    }
}

/// Object-safe view of a kernel.
pub(crate) trait KernelRun {
    fn run(&self, paths: usize) -> Result<Vec<f64>>;
    fn stride(&self) -> usize;
    fn offset(&self, level: usize, checkpoint: usize) -> usize;
    fn level_steps(&self, level: usize) -> usize;
}

impl<D: Drift> KernelRun for CoupledKernel<'_, D> {
    fn run(&self, paths: usize) -> Result<Vec<f64>> {
        CoupledKernel::run(self, paths)
    }
    fn stride(&self) -> usize {
        CoupledKernel::stride(self)
    }
    fn offset(&self, level: usize, checkpoint: usize) -> usize {
        CoupledKernel::offset(self, level, checkpoint)
    }
    fn level_steps(&self, level: usize) -> usize {
        self.levels[level].n_steps
    }
}

fn assemble<'a, D: Drift>(
    p: &'a dyn Objective,
    spec: &'a DiffusionSpec,
    ks: &KernelSpec<'_>,
    drifts: Vec<D>,
) -> Result<CoupledKernel<'a, D>> {
    let d = p.dim();
    if ks.x0.len() != d || spec.dim() != d {
        return Err(Error::invalid(format!("dimension mismatch: problem {d}, x0 {}, diffusion {}", ks.x0.len(), spec.dim())));
    }
    if !linalg::all_finite(ks.x0) {
        return Err(Error::invalid("x0 must be finite"));
    }
    if ks.substeps == 0 {
        return Err(Error::invalid("fine substeps must be at least 1"));
    }
    if ks.hs.is_empty() {
        return Err(Error::invalid("at least one step size is required"));
    }
    let h_min = ks.hs.iter().cloned().fold(f64::INFINITY, f64::min);
    let blocks = whole_steps(ks.horizon, h_min)?;
    let s = ks.substeps;
    let delta0 = h_min / s as f64;
    let mut levels = Vec::with_capacity(ks.hs.len());
    for (l, (&h, drift)) in ks.hs.iter().zip(drifts).enumerate() {
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
        let env = (0..n_steps * s).map(|k| spec.envelope.value(k as f64 * dt)).collect();
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
        levels.push(Level {
            h,
            ratio,
            dt,
            scale: (h * delta0).sqrt(),
            gamma_scale: 1.0 / ((s * ratio) as f64).sqrt(),
            n_steps,
            env,
            checkpoints,
            drift,
        });
    }
    let shape_diag = constant_shape_diag(spec);
    Ok(CoupledKernel {
        levels,
        spec,
        scheme_objective: ks.with_scheme.then_some(p),
        x0: ks.x0.to_vec(),
        substeps: s,
        blocks,
        seed: ks.seed,
        domain: ks.domain,
        shape_diag,
    })
}

/// Options for [`simulate_sde`].
#[derive(Debug, Clone, PartialEq)]
pub struct SdeOptions {
    pub drift: DriftKind,
    /// Scheme step `h`; also sets the noise amplitude `√h`.
    pub h: f64,
    /// `T`, an integer multiple of `h`.
    pub horizon: f64,
    /// Fine substeps `S` per step of size `h`.
    pub substeps: usize,
    pub ensemble: usize,
    pub seed: u64,
    /// Step indices (multiples of `h`) at which states are kept; defaults
    /// to the terminal step when empty.
    pub checkpoints: Vec<usize>,
    /// Draw the fine increments from the scheme's stream (default) or from
    /// an independent one.
    pub coupled: bool,
}

impl SdeOptions {
    pub fn new(drift: DriftKind, h: f64, horizon: f64, substeps: usize, ensemble: usize, seed: u64) -> Self {
        SdeOptions { drift, h, horizon, substeps, ensemble, seed, checkpoints: Vec::new(), coupled: true }
    }
}

/// States of an SDE ensemble at the requested checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SdePathSet {
    pub dim: usize,
    pub paths: usize,
    pub h: f64,
    pub n_steps: usize,
    pub substeps: usize,
    pub seed: u64,
    pub checkpoints: Vec<usize>,
    /// Path `m` shares its Brownian increments with scheme path `m` run
    /// under [`SdePathSet::coupled_scheme`].
    pub coupled: bool,
    data: Vec<f64>,
}

impl SdePathSet {
    pub fn state(&self, path: usize, checkpoint: usize) -> &[f64] {
        let start = (path * self.checkpoints.len() + checkpoint) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        self.state(path, self.checkpoints.len() - 1)
    }

    /// Scheme configuration whose path `m` is driven by the same Brownian
    /// motion as SDE path `m`.
    pub fn coupled_scheme(&self, x0: Vec<f64>) -> Option<SchemeConfig> {
        self.coupled
            .then(|| SchemeConfig::new(self.h, self.n_steps, x0, self.seed).brownian(self.substeps))
    }
}

/// Euler–Maruyama ensemble of `dY = -G(Y) ds + √h σ(s, Y) dB` on the fine
/// grid of step `h/S`.
pub fn simulate_sde(p: &dyn Objective, spec: &DiffusionSpec, x0: &[f64], opts: &SdeOptions) -> Result<SdePathSet> {
    if opts.ensemble == 0 {
        return Err(Error::invalid("ensemble size must be positive"));
    }
    let n_steps = whole_steps(opts.horizon, opts.h)?;
    let checkpoints = if opts.checkpoints.is_empty() { vec![n_steps] } else { opts.checkpoints.clone() };
    let ks = KernelSpec {
        drift: opts.drift,
        hs: &[opts.h],
        horizon: opts.horizon,
        substeps: opts.substeps,
        x0,
        seed: opts.seed,
        domain: if opts.coupled { Domain::Increments } else { Domain::Independent },
        with_scheme: false,
        checkpoints: Some(vec![checkpoints.clone()]),
        aggregate: false,
    };
    let data = with_kernel(p, spec, &ks, |k| k.run(opts.ensemble))?;
    Ok(SdePathSet {
        dim: x0.len(),
        paths: opts.ensemble,
        h: opts.h,
        n_steps,
        substeps: opts.substeps,
        seed: opts.seed,
        checkpoints,
        coupled: opts.coupled,
        data,
    })
}
