//! The discrete scheme `X_{n+1} = X_n - h∇F(X_n) + hσ(t_n, X_n)γ_{n+1}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::objective::Objective;
use crate::rng::{self, Domain};

/// How each step's Gaussian `γ_{n+1}` is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// One standard normal vector per step.
    #[default]
    GaussianIid,
    /// `γ = h^{-1/2} Σ_j ΔB_{n,j}` over `S` fine Brownian increments, the
    /// same increments that drive the fine SDE integrators in `flows`.
    BrownianIncrements,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub h: f64,
    pub n_steps: usize,
    pub x0: Vec<f64>,
    pub seed: u64,
    pub noise_mode: NoiseMode,
    /// `S ≥ 1`; only used in Brownian-increment mode.
    pub substeps: usize,
    /// Keep the standard normals behind every fine increment in the path record.
    pub retain_increments: bool,
}

impl SchemeConfig {
    pub fn new(h: f64, n_steps: usize, x0: Vec<f64>, seed: u64) -> Self {
        SchemeConfig {
            h,
            n_steps,
            x0,
            seed,
            noise_mode: NoiseMode::GaussianIid,
            substeps: 1,
            retain_increments: false,
        }
    }

    pub fn brownian(mut self, substeps: usize) -> Self {
        self.noise_mode = NoiseMode::BrownianIncrements;
        self.substeps = substeps;
        self
    }

    pub fn retaining(mut self) -> Self {
        self.retain_increments = true;
        self
    }

    /// Number of fine increments drawn per step.
    pub fn draws_per_step(&self) -> usize {
        match self.noise_mode {
            NoiseMode::GaussianIid => 1,
            NoiseMode::BrownianIncrements => self.substeps,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {}", self.h)));
        }
        if self.x0.len() != dim {
            return Err(Error::invalid(format!("x0 has length {}, expected {dim}", self.x0.len())));
        }
        if !linalg::all_finite(&self.x0) {
            return Err(Error::invalid("x0 must be finite"));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("substeps must be at least 1"));
        }
        Ok(())
    }

    /// A warning when `h` exceeds the moment-bound threshold `H₁`.
    pub fn step_size_warning(&self, p: &dyn Objective, spec: &DiffusionSpec) -> Option<String> {
        let h1 = h1_threshold(p.mu(), p.lipschitz(), spec.noise_sup(), f64::INFINITY);
        (self.h >= h1).then(|| {
            format!(
                "h = {} is not below H₁ = {h1:.6}; uniform moment bounds are not guaranteed",
                self.h
            )
        })
    }
}

/// `H₁ = ½ min(1/(2μ), 2μ/(L_F² + 2‖ς‖²_∞), h_max)`, below which
/// `sup_n E‖X_n - x*‖²` is bounded uniformly in `h`.
///
/// Thresholds `H_p` for `p ≥ 2` involve constants that are not explicit and
/// are not computed.
pub fn h1_threshold(mu: f64, lip: f64, sigma_sup: f64, h_max: f64) -> f64 {
    0.5 * (1.0 / (2.0 * mu))
        .min(2.0 * mu / (lip * lip + 2.0 * sigma_sup * sigma_sup))
        .min(h_max)
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    /// `X_0, …, X_N`.
    pub states: Vec<Vec<f64>>,
    /// `t_n = nh`.
    pub times: Vec<f64>,
    /// Standard normals `z_{n,j,i}` with `ΔB_{n,j} = (h/S)^{1/2} z_{n,j}`,
    /// flattened step-major, then substep, then component.
    pub increments: Option<Vec<f64>>,
    pub h: f64,
    pub substeps: usize,
    pub seed: u64,
    pub path: u64,
}

impl PathRecord {
    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("a path has at least one state")
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_into(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    x: &[f64],
    t: f64,
    h: f64,
    gamma: &[f64],
    grad: &mut [f64],
    noise: &mut [f64],
    out: &mut [f64],
) {
    p.gradient(x, grad);
    spec.sigma_apply(t, x, gamma, noise);
    for i in 0..x.len() {
        out[i] = x[i] - h * grad[i] + h * noise[i];
    }
}

/// `x - h∇F(x) + hσ(t_n, x)γ`.
pub fn scheme_step(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    x: &[f64],
    t_n: f64,
    h: f64,
    gamma: &[f64],
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    let d = x.len();
    let (mut g, mut s, mut out) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    step_into(p, spec, x, t_n, h, gamma, &mut g, &mut s, &mut out);
    if linalg::all_finite(&out) {
        Ok(out)
    } else {
        Err(Error::NonFiniteState { path: None, step: 1 })
    }
}

/// Per-path scheme driver with reusable buffers.
pub(crate) struct SchemeWalker<'a> {
    p: &'a dyn Objective,
    spec: &'a DiffusionSpec,
    cfg: &'a SchemeConfig,
    path: u64,
    draws: Vec<f64>,
    gamma: Vec<f64>,
    grad: Vec<f64>,
    noise: Vec<f64>,
    next: Vec<f64>,
    pub x: Vec<f64>,
    pub n: usize,
}

impl<'a> SchemeWalker<'a> {
    pub fn new(p: &'a dyn Objective, spec: &'a DiffusionSpec, cfg: &'a SchemeConfig, path: u64) -> Self {
        let d = cfg.x0.len();
        SchemeWalker {
            p,
            spec,
            cfg,
            path,
            draws: vec![0.0; d * cfg.draws_per_step()],
            gamma: vec![0.0; d],
            grad: vec![0.0; d],
            noise: vec![0.0; d],
            next: vec![0.0; d],
            x: cfg.x0.clone(),
            n: 0,
        }
    }

    /// Standard normals used by the step about to be taken.
    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    pub fn advance(&mut self) -> Result<()> {
        let d = self.x.len();
        let s = self.cfg.draws_per_step();
        rng::fill_normals(self.cfg.seed, Domain::Increments, self.path, self.n as u64, &mut self.draws);
        if s == 1 {
            self.gamma.copy_from_slice(&self.draws);
        } else {
            self.gamma.fill(0.0);
            for j in 0..s {
                for i in 0..d {
                    self.gamma[i] += self.draws[j * d + i];
                }
            }
            let scale = 1.0 / (s as f64).sqrt();
            for g in self.gamma.iter_mut() {
                *g *= scale;
            }
        }
        let t = self.n as f64 * self.cfg.h;
        step_into(
            self.p,
            self.spec,
            &self.x,
            t,
            self.cfg.h,
            &self.gamma,
            &mut self.grad,
            &mut self.noise,
            &mut self.next,
        );
        self.n += 1;
        if !linalg::all_finite(&self.next) {
            return Err(Error::NonFiniteState { path: Some(self.path), step: self.n });
        }
        std::mem::swap(&mut self.x, &mut self.next);
        Ok(())
    }
}

/// Runs path 0 of the configured scheme.
pub fn run_scheme(p: &dyn Objective, spec: &DiffusionSpec, cfg: &SchemeConfig) -> Result<PathRecord> {
    run_scheme_path(p, spec, cfg, 0)
}

/// Runs path `path` of the configured scheme; distinct path indices give
/// independent trajectories.
pub fn run_scheme_path(p: &dyn Objective, spec: &DiffusionSpec, cfg: &SchemeConfig, path: u64) -> Result<PathRecord> {
    cfg.validate(p.dim())?;
    let retain = cfg.retain_increments || cfg.draws_per_step() > 1;
    let mut walker = SchemeWalker::new(p, spec, cfg, path);
    let mut states = Vec::with_capacity(cfg.n_steps + 1);
    let mut increments = retain.then(|| Vec::with_capacity(cfg.n_steps * walker.draws.len()));
    states.push(cfg.x0.clone());
    for _ in 0..cfg.n_steps {
        walker.advance()?;
        if let Some(inc) = increments.as_mut() {
            inc.extend_from_slice(walker.draws());
        }
        states.push(walker.x.clone());
    }
    let times = (0..=cfg.n_steps).map(|n| n as f64 * cfg.h).collect();
    Ok(PathRecord {
        states,
        times,
        increments,
        h: cfg.h,
        substeps: cfg.draws_per_step(),
        seed: cfg.seed,
        path,
    })
}

/// States of `m` independent paths at the requested step indices,
/// flattened as `[path][checkpoint][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStates {
    pub checkpoints: Vec<usize>,
    pub dim: usize,
    pub paths: usize,
    pub data: Vec<f64>,
}

impl EnsembleStates {
    pub fn state(&self, path: usize, checkpoint: usize) -> &[f64] {
        let k = self.checkpoints.len();
        let start = (path * k + checkpoint) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Applies `f` to every path's state at one checkpoint, in path order.
    pub fn map_checkpoint(&self, checkpoint: usize, f: impl Fn(&[f64]) -> f64 + Sync) -> Vec<f64> {
        (0..self.paths).into_par_iter().map(|m| f(self.state(m, checkpoint))).collect()
    }
}

/// Runs paths `0..m` in parallel and records the states at `checkpoints`
/// (sorted step indices ≤ N). Output is independent of the worker count.
pub fn run_ensemble(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    cfg: &SchemeConfig,
    m: usize,
    checkpoints: &[usize],
) -> Result<EnsembleStates> {
    cfg.validate(p.dim())?;
    if m == 0 {
        return Err(Error::invalid("ensemble size must be positive"));
    }
    if checkpoints.windows(2).any(|w| w[0] > w[1]) || checkpoints.iter().any(|&c| c > cfg.n_steps) {
        return Err(Error::invalid("checkpoints must be sorted step indices not exceeding N"));
    }
    let d = p.dim();
    let per_path: Vec<Result<Vec<f64>>> = (0..m)
        .into_par_iter()
        .map(|path| {
            let mut walker = SchemeWalker::new(p, spec, cfg, path as u64);
            let mut out = Vec::with_capacity(checkpoints.len() * d);
            for &c in checkpoints {
                while walker.n < c {
                    walker.advance()?;
                }
                out.extend_from_slice(&walker.x);
            }
            Ok(out)
        })
        .collect();
    let mut data = Vec::with_capacity(m * checkpoints.len() * d);
    for r in per_path {
        data.extend(r?);
    }
    Ok(EnsembleStates { checkpoints: checkpoints.to_vec(), dim: d, paths: m, data })
}

/// The interpolated process
/// `X̃(t) = X_n - ∇F(X_n)(t - t_n) + √h σ(t_n, X_n)(B(t) - B(t_n))`.
///
/// `B` is rebuilt from the stored fine increments; inside a fine interval
/// the Brownian bridge is sampled from a dedicated stream keyed by the
/// path, so repeated calls return the same value.
pub fn interpolate_tilde(p: &dyn Objective, spec: &DiffusionSpec, path: &PathRecord, t: f64) -> Result<Vec<f64>> {
    let inc = path.increments.as_ref().ok_or(Error::IncrementsNotRetained)?;
    let n_steps = path.n_steps();
    let h = path.h;
    let horizon = n_steps as f64 * h;
    if !(t >= 0.0 && t <= horizon * (1.0 + 1e-14)) {
        return Err(Error::invalid(format!("t = {t} outside [0, {horizon}]")));
    }
    let mut n = ((t / h).floor() as usize).min(n_steps);
    if n == n_steps {
        if t <= n as f64 * h || n == 0 {
            return Ok(path.states[n].clone());
        }
        n -= 1;
    }
    let t_n = n as f64 * h;
    let tau = (t - t_n).max(0.0);
    let x = &path.states[n];
    let d = x.len();
    let s = path.substeps;
    let delta = h / s as f64;
    let block = &inc[n * s * d..(n + 1) * s * d];

    let j = ((tau / delta).floor() as usize).min(s - 1);
    let theta = ((tau - j as f64 * delta) / delta).clamp(0.0, 1.0);
    let mut db = vec![0.0; d];
    for jj in 0..j {
        for i in 0..d {
            db[i] += block[jj * d + i];
        }
    }
    let mut xi = vec![0.0; d];
    if theta > 0.0 {
        rng::fill_normals(path.seed, Domain::Bridge, path.path, (n * s + j) as u64, &mut xi);
    }
    let bridge_sd = (theta * (1.0 - theta)).sqrt();
    let sqrt_delta = delta.sqrt();
    for i in 0..d {
        db[i] = sqrt_delta * (db[i] + theta * block[j * d + i] + bridge_sd * xi[i]);
    }

    let g = p.gradient_vec(x);
    let mut noise = vec![0.0; d];
    spec.sigma_apply(t_n, x, &db, &mut noise);
    let sh = h.sqrt();
    Ok((0..d).map(|i| x[i] - g[i] * tau + sh * noise[i]).collect())
}

/// Exact `m_n = E‖X_n - x*‖²`, `n = 0..=N`, for `F = ½⟨A(x-x*), x-x*⟩` with
/// `A = diag(a_diag)` and `σ ≡ σ₀ I`. `x0` is the initial displacement
/// `X_0 - x*`.
pub fn quadratic_second_moment_recursion(a_diag: &[f64], sigma0: f64, h: f64, n_steps: usize, x0: &[f64]) -> Vec<f64> {
    let mut comp: Vec<f64> = x0.iter().map(|v| v * v).collect();
    let noise = h * h * sigma0 * sigma0;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(comp.iter().sum());
    for _ in 0..n_steps {
        for (m, a) in comp.iter_mut().zip(a_diag) {
            let r = 1.0 - h * a;
            *m = r * r * *m + noise;
        }
        out.push(comp.iter().sum());
    }
    out
}
