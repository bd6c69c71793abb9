//! Monte Carlo weak/strong error estimates and convergence-order fits.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diffusion::{self, DiffusionSpec};
use crate::error::{Error, Result};
use crate::flows::sde::{whole_steps, with_kernel, KernelSpec};
use crate::flows::{gradient_flow, simulate_sde, DriftKind, SdeOptions};
use crate::linalg;
use crate::objective::Objective;
use crate::rng::{self, Domain};
use crate::scheme::{run_ensemble, NoiseMode, SchemeConfig};
use crate::stats::MeanEstimate;

/// Test functions `φ`, all centred so that `φ(x*) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawTestFunction")]
pub enum TestFunction {
    /// `F(x) - F(x*)`
    ObjectiveResidual,
    /// `⟨Q(x - x*), x - x*⟩` with `Q = diag(q)`, or `Q = I` when `q` is absent.
    QuadraticForm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<Vec<f64>>,
    },
    /// `Σᵢ sin(xᵢ - x*ᵢ)`
    SmoothBounded,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTestFunction {
    kind: String,
    #[serde(default)]
    q: Option<Vec<f64>>,
}

impl TryFrom<RawTestFunction> for TestFunction {
    type Error = String;

    fn try_from(raw: RawTestFunction) -> std::result::Result<Self, String> {
        let phi = match raw.kind.as_str() {
            "objective_residual" => TestFunction::ObjectiveResidual,
            "quadratic_form" => return Ok(TestFunction::QuadraticForm { q: raw.q }),
            "smooth_bounded" => TestFunction::SmoothBounded,
            other => return Err(format!("unknown test function '{other}'")),
        };
        match raw.q {
            Some(_) => Err(format!("'q' only applies to quadratic_form, not {}", raw.kind)),
            None => Ok(phi),
        }
    }
}

impl TestFunction {
    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::ObjectiveResidual => "objective_residual",
            TestFunction::QuadraticForm { .. } => "quadratic_form",
            TestFunction::SmoothBounded => "smooth_bounded",
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if let TestFunction::QuadraticForm { q: Some(q) } = self {
            if q.len() != dim {
                return Err(Error::invalid(format!("quadratic form has length {}, expected {dim}", q.len())));
            }
        }
        Ok(())
    }

    pub fn eval(&self, p: &dyn Objective, x: &[f64]) -> f64 {
        let xs = p.minimizer();
        match self {
            TestFunction::ObjectiveResidual => p.value(x) - p.value(xs),
            TestFunction::QuadraticForm { q } => match q {
                Some(q) => (0..x.len()).map(|i| q[i] * (x[i] - xs[i]) * (x[i] - xs[i])).sum(),
                None => linalg::dist_sq(x, xs),
            },
            TestFunction::SmoothBounded => x.iter().zip(xs).map(|(a, b)| (a - b).sin()).sum(),
        }
    }
}

/// What the scheme is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `|E φ(X_N) - φ(x*)|`
    VsMinimizer,
    /// `|E φ(X_N) - φ(X⁰(Nh))|`
    VsOde,
    /// `|E[φ(X_N) - φ(Y^h(Nh))]|`
    VsModifiedSde,
    /// `|E[φ(X_N) - φ(X^h(Nh))]|`
    VsPlainSde,
    /// `(E‖X_N - x*‖²)^{1/2}`
    StrongRms,
    /// `E‖X_N - x*‖`
    StrongMean,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::VsMinimizer => "vs_minimizer",
            Target::VsOde => "vs_ode",
            Target::VsModifiedSde => "vs_modified_sde",
            Target::VsPlainSde => "vs_plain_sde",
            Target::StrongRms => "strong_rms",
            Target::StrongMean => "strong_mean",
        }
    }

    fn sde_drift(self) -> Option<DriftKind> {
        match self {
            Target::VsModifiedSde => Some(DriftKind::Modified),
            Target::VsPlainSde => Some(DriftKind::Plain),
            _ => None,
        }
    }
}

/// One Monte Carlo error estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub target: Target,
    pub phi: String,
    /// Absolute error (or the strong norm for strong targets).
    pub estimate: f64,
    /// Signed difference behind `estimate`.
    pub signed: f64,
    pub std_error: f64,
    pub ensemble: usize,
    pub h: f64,
    pub n_steps: usize,
    /// `N·h`.
    pub horizon: f64,
    pub coupled: bool,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "target,phi,h,N,T,M,estimate,std_error,coupled,seed";

impl ErrorReport {
    pub fn half_width(&self) -> f64 {
        1.96 * self.std_error
    }

    /// Row matching [`CSV_HEADER`]; floats carry 17 significant digits.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.16e},{},{:.16e},{},{:.16e},{:.16e},{},{}",
            self.target.name(),
            self.phi,
            self.h,
            self.n_steps,
            self.horizon,
            self.ensemble,
            self.estimate,
            self.std_error,
            self.coupled,
            self.seed
        )
    }
}

const MIN_ENSEMBLE: usize = 100;
const MIN_REFERENCE_SUBSTEPS: usize = 256;
const ODE_TOL: f64 = 1e-10;

fn check_ensemble(m: usize) -> Result<()> {
    if m < MIN_ENSEMBLE {
        return Err(Error::invalid(format!("ensemble size must be at least {MIN_ENSEMBLE}, got {m}")));
    }
    Ok(())
}

fn report(target: Target, phi: &str, est: MeanEstimate, reference: f64, cfg: &SchemeConfig, coupled: bool) -> ErrorReport {
    let signed = est.mean - reference;
    ErrorReport {
        target,
        phi: phi.to_string(),
        estimate: signed.abs(),
        signed,
        std_error: est.std_error,
        ensemble: est.count,
        h: cfg.h,
        n_steps: cfg.n_steps,
        horizon: cfg.n_steps as f64 * cfg.h,
        coupled,
        seed: cfg.seed,
    }
}

fn terminal_values(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    cfg: &SchemeConfig,
    m: usize,
    f: impl Fn(&[f64]) -> f64 + Sync,
) -> Result<Vec<f64>> {
    let ens = run_ensemble(p, spec, cfg, m, &[cfg.n_steps])?;
    Ok(ens.map_checkpoint(0, f))
}

/// `|E φ(X_N) - φ(x*)|`.
pub fn weak_error_vs_minimizer(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    phi: &TestFunction,
    cfg: &SchemeConfig,
    m: usize,
) -> Result<ErrorReport> {
    check_ensemble(m)?;
    phi.validate(p.dim())?;
    let vals = terminal_values(p, spec, cfg, m, |x| phi.eval(p, x))?;
    let reference = phi.eval(p, p.minimizer());
    Ok(report(Target::VsMinimizer, phi.name(), MeanEstimate::from_samples(&vals), reference, cfg, false))
}

/// `|E φ(X_N) - φ(X⁰(Nh))|` with the gradient flow solved to `1e-10`.
pub fn weak_error_vs_ode(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    phi: &TestFunction,
    cfg: &SchemeConfig,
    m: usize,
) -> Result<ErrorReport> {
    check_ensemble(m)?;
    phi.validate(p.dim())?;
    cfg.validate(p.dim())?;
    let flow = gradient_flow(p, &cfg.x0, cfg.n_steps as f64 * cfg.h, ODE_TOL)?;
    let reference = phi.eval(p, &flow.state);
    let vals = terminal_values(p, spec, cfg, m, |x| phi.eval(p, x))?;
    Ok(report(Target::VsOde, phi.name(), MeanEstimate::from_samples(&vals), reference, cfg, false))
}

/// `|E[φ(X_N) - φ(Y(Nh))]|` with `Y` the fine Euler–Maruyama solution of the
/// modified SDE driven by the scheme's own Brownian increments. The
/// pathwise differences are averaged.
pub fn weak_error_vs_modified_sde(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    phi: &TestFunction,
    cfg: &SchemeConfig,
    m: usize,
    substeps: usize,
) -> Result<ErrorReport> {
    weak_error_vs_sde(p, spec, phi, cfg, m, substeps, Target::VsModifiedSde)
}

/// As [`weak_error_vs_modified_sde`] with the first-order SDE as reference.
pub fn weak_error_vs_plain_sde(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    phi: &TestFunction,
    cfg: &SchemeConfig,
    m: usize,
    substeps: usize,
) -> Result<ErrorReport> {
    weak_error_vs_sde(p, spec, phi, cfg, m, substeps, Target::VsPlainSde)
}

fn weak_error_vs_sde(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    phi: &TestFunction,
    cfg: &SchemeConfig,
    m: usize,
    substeps: usize,
    target: Target,
) -> Result<ErrorReport> {
    let mut reports = coupled_sde_errors(p, spec, phi, &[cfg.h], cfg.n_steps as f64 * cfg.h, &cfg.x0, cfg.seed, m, substeps, target)?;
    Ok(reports.pop().expect("one level"))
}

/// Coupled scheme-vs-SDE errors for several step sizes sharing one
/// Brownian path per sample (all `h` must be integer multiples of the
/// smallest and divide `T`).
#[allow(clippy::too_many_arguments)]
fn coupled_sde_errors(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    phi: &TestFunction,
    hs: &[f64],
    horizon: f64,
    x0: &[f64],
    seed: u64,
    m: usize,
    substeps: usize,
    target: Target,
) -> Result<Vec<ErrorReport>> {
    check_ensemble(m)?;
    phi.validate(p.dim())?;
    if substeps < MIN_REFERENCE_SUBSTEPS {
        return Err(Error::invalid(format!(
            "reference SDE needs at least {MIN_REFERENCE_SUBSTEPS} fine substeps, got {substeps}"
        )));
    }
    let drift = target.sde_drift().expect("SDE target");
    let ks = KernelSpec {
        drift,
        hs,
        horizon,
        substeps,
        x0,
        seed,
        domain: Domain::Increments,
        with_scheme: true,
        checkpoints: None,
        aggregate: true,
    };
    let d = p.dim();
    with_kernel(p, spec, &ks, |k| {
        let data = k.run(m)?;
        let stride = k.stride();
        let mut out = Vec::with_capacity(hs.len());
        for (l, &h) in hs.iter().enumerate() {
            let o = k.offset(l, 0);
            let diffs: Vec<f64> = data
                .chunks(stride)
                .map(|rec| phi.eval(p, &rec[o + d..o + 2 * d]) - phi.eval(p, &rec[o..o + d]))
                .collect();
            let est = MeanEstimate::from_samples(&diffs);
            let n_steps = k.level_steps(l);
            out.push(ErrorReport {
                target,
                phi: phi.name().to_string(),
                estimate: est.mean.abs(),
                signed: est.mean,
                std_error: est.std_error,
                ensemble: m,
                h,
                n_steps,
                horizon: n_steps as f64 * h,
                coupled: true,
                seed,
            });
        }
        Ok(out)
    })
}

/// The vs-modified-SDE estimator with independent scheme and SDE ensembles.
/// Unbiased like the coupled version but without its variance reduction.
pub fn weak_error_vs_modified_sde_uncoupled(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    phi: &TestFunction,
    cfg: &SchemeConfig,
    m: usize,
    substeps: usize,
) -> Result<ErrorReport> {
    check_ensemble(m)?;
    phi.validate(p.dim())?;
    let horizon = cfg.n_steps as f64 * cfg.h;
    let x = terminal_values(p, spec, cfg, m, |x| phi.eval(p, x))?;
    let ks = KernelSpec {
        drift: DriftKind::Modified,
        hs: &[cfg.h],
        horizon,
        substeps,
        x0: &cfg.x0,
        seed: cfg.seed,
        domain: Domain::Independent,
        with_scheme: false,
        checkpoints: None,
        aggregate: true,
    };
    let y: Vec<f64> = with_kernel(p, spec, &ks, |k| k.run(m))?.chunks(p.dim()).map(|s| phi.eval(p, s)).collect();
    let ex = MeanEstimate::from_samples(&x);
    let ey = MeanEstimate::from_samples(&y);
    let signed = ex.mean - ey.mean;
    Ok(ErrorReport {
        target: Target::VsModifiedSde,
        phi: phi.name().to_string(),
        estimate: signed.abs(),
        signed,
        std_error: ex.std_error.hypot(ey.std_error),
        ensemble: m,
        h: cfg.h,
        n_steps: cfg.n_steps,
        horizon,
        coupled: false,
        seed: cfg.seed,
    })
}

/// Strong error against the minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongReport {
    /// `(E‖X_N - x*‖²)^{1/2}`, standard error by the delta method.
    pub rms: ErrorReport,
    /// `E‖X_N - x*‖`.
    pub mean: ErrorReport,
}

pub fn strong_error(p: &dyn Objective, spec: &DiffusionSpec, cfg: &SchemeConfig, m: usize) -> Result<StrongReport> {
    check_ensemble(m)?;
    let xs = p.minimizer();
    let ens = run_ensemble(p, spec, cfg, m, &[cfg.n_steps])?;
    let sq = MeanEstimate::from_samples(&ens.map_checkpoint(0, |x| linalg::dist_sq(x, xs)));
    let abs = MeanEstimate::from_samples(&ens.map_checkpoint(0, |x| linalg::dist(x, xs)));
    let rms = sq.mean.sqrt();
    let rms_se = if rms > 0.0 { sq.std_error / (2.0 * rms) } else { 0.0 };
    let phi = "distance";
    let mut r = report(Target::StrongRms, phi, MeanEstimate { mean: rms, std_error: rms_se, count: m }, 0.0, cfg, false);
    r.estimate = rms;
    Ok(StrongReport { rms: r, mean: report(Target::StrongMean, phi, abs, 0.0, cfg, false) })
}

/// `E[F(X_N) - F(x*)]` together with the check
/// `E[F - F*] ≥ (μ/2)E‖X_N - x*‖² - 4·se` on the same paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub residual: ErrorReport,
    pub mean_sq_distance: MeanEstimate,
    /// Pathwise `F - F* - (μ/2)‖X - x*‖²`, nonnegative for `μ`-convex `F`.
    pub convexity_gap: MeanEstimate,
    pub lower_bound_ok: bool,
}

pub fn residual_error(p: &dyn Objective, spec: &DiffusionSpec, cfg: &SchemeConfig, m: usize) -> Result<ResidualReport> {
    check_ensemble(m)?;
    let xs = p.minimizer();
    let f_star = p.value(xs);
    let mu = p.mu();
    let ens = run_ensemble(p, spec, cfg, m, &[cfg.n_steps])?;
    let res = MeanEstimate::from_samples(&ens.map_checkpoint(0, |x| p.value(x) - f_star));
    let dist = MeanEstimate::from_samples(&ens.map_checkpoint(0, |x| linalg::dist_sq(x, xs)));
    let gap = MeanEstimate::from_samples(&ens.map_checkpoint(0, |x| p.value(x) - f_star - 0.5 * mu * linalg::dist_sq(x, xs)));
    Ok(ResidualReport {
        residual: report(Target::VsMinimizer, TestFunction::ObjectiveResidual.name(), res, 0.0, cfg, false),
        mean_sq_distance: dist,
        lower_bound_ok: gap.mean >= -4.0 * gap.std_error - 1e-15,
        convexity_gap: gap,
    })
}

/// Least-squares fit of `log(error) = slope·log(h) + intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

/// Weighted least squares in log–log coordinates.
pub fn fit_order(points: &[(f64, f64)], weights: Option<&[f64]>) -> Result<OrderFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(&(h, e)) = points.iter().find(|(h, e)| !(*h > 0.0) || !(*e > 0.0) || !h.is_finite() || !e.is_finite()) {
        return Err(Error::DegenerateFit(format!("step sizes and errors must be positive (h = {h}, error = {e})")));
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() != points.len() => {
            return Err(Error::invalid("weights must match the number of points"))
        }
        Some(w) if w.iter().any(|v| !(*v > 0.0)) => return Err(Error::invalid("weights must be positive")),
        Some(w) => w.to_vec(),
        None => vec![1.0; points.len()],
    };
    let xs: Vec<f64> = points.iter().map(|(h, _)| h.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let sw: f64 = w.iter().sum();
    let xbar = xs.iter().zip(&w).map(|(x, w)| w * x).sum::<f64>() / sw;
    let ybar = ys.iter().zip(&w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(&w).map(|(x, w)| w * (x - xbar).powi(2)).sum();
    if sxx <= 1e-24 * sw {
        return Err(Error::DegenerateFit("all step sizes are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).zip(&w).map(|((x, y), w)| w * (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = xs.iter().zip(&ys).zip(&w).map(|((x, y), w)| w * (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().zip(&w).map(|(y, w)| w * (y - ybar).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(OrderFit { slope, intercept, r_squared, points: points.to_vec() })
}

/// Shared settings of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub x0: Vec<f64>,
    pub seed: u64,
    /// Fine substeps of the SDE reference.
    pub substeps: usize,
    pub noise_mode: NoiseMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub reports: Vec<ErrorReport>,
    /// Which reports passed the `error ≥ 10·std_error` window.
    pub used: Vec<bool>,
    pub fit: Result<OrderFit>,
}

/// Runs one estimator per step size with `N = round(T/h)` and fits the
/// order on the points whose error exceeds ten standard errors.
///
/// Non-SDE targets use an independent substream per step size. SDE targets
/// on a nested grid (every `h` an integer multiple of the smallest, all
/// dividing `T`) share one Brownian path per sample across all step sizes;
/// otherwise each step size gets its own substream.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    phi: &TestFunction,
    h_grid: &[f64],
    horizon: f64,
    m: usize,
    target: Target,
    opts: &SweepOptions,
) -> Result<SweepOutcome> {
    if h_grid.is_empty() {
        return Err(Error::DegenerateFit("empty step-size grid".into()));
    }
    if let Some(h) = h_grid.iter().find(|h| !(**h > 0.0)) {
        return Err(Error::invalid(format!("step sizes must be positive, got {h}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::invalid("sweep horizon must be positive"));
    }
    let config = |i: usize, h: f64| {
        let n = (horizon / h).round().max(1.0) as usize;
        let mut cfg = SchemeConfig::new(h, n, opts.x0.clone(), rng::substream_seed(opts.seed, i as u64));
        cfg.noise_mode = opts.noise_mode;
        cfg.substeps = opts.substeps.max(1);
        cfg
    };
    let reports = match target.sde_drift() {
        Some(_) if nested(h_grid, horizon) => {
            coupled_sde_errors(p, spec, phi, h_grid, horizon, &opts.x0, opts.seed, m, opts.substeps, target)?
        }
        _ => h_grid
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let cfg = config(i, h);
                match target {
                    Target::VsMinimizer => weak_error_vs_minimizer(p, spec, phi, &cfg, m),
                    Target::VsOde => weak_error_vs_ode(p, spec, phi, &cfg, m),
                    Target::VsModifiedSde => weak_error_vs_modified_sde(p, spec, phi, &cfg, m, opts.substeps),
                    Target::VsPlainSde => weak_error_vs_plain_sde(p, spec, phi, &cfg, m, opts.substeps),
                    Target::StrongRms => strong_error(p, spec, &cfg, m).map(|r| r.rms),
                    Target::StrongMean => strong_error(p, spec, &cfg, m).map(|r| r.mean),
                }
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let used: Vec<bool> = reports.iter().map(|r| r.estimate >= 10.0 * r.std_error).collect();
    let points: Vec<(f64, f64)> =
        reports.iter().zip(&used).filter(|(_, u)| **u).map(|(r, _)| (r.h, r.estimate)).collect();
    let fit = fit_order(&points, None);
    Ok(SweepOutcome { reports, used, fit })
}

fn nested(h_grid: &[f64], horizon: f64) -> bool {
    let h_min = h_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let is_multiple = |a: f64, b: f64| {
        let r = (a / b).round();
        r >= 1.0 && (r * b - a).abs() <= 1e-9 * a
    };
    h_grid.iter().all(|&h| is_multiple(h, h_min) && whole_steps(horizon, h).is_ok())
}

/// One `(T, h)` cell of [`sde_contraction`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionRow {
    pub horizon: f64,
    pub h: f64,
    /// `E‖Y^h(T) - x*‖²`.
    pub mean_sq: MeanEstimate,
    /// `e^{-2μT}(‖x₀-x*‖² + h ρ(T)(1 + ‖x₀-x*‖²))`.
    pub bound_shape: f64,
}

impl ContractionRow {
    pub fn ratio(&self) -> f64 {
        self.mean_sq.mean / self.bound_shape
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub rows: Vec<ContractionRow>,
    /// Largest ratio over the cells with `T ≤ fit_until`.
    pub c_fit: f64,
    /// Every cell satisfies `mean ≤ C·shape + 4·se`.
    pub pass: bool,
}

/// Falsification test of the modified-SDE moment decay
/// `E‖Y^h(T) - x*‖² ≤ C e^{-2μT}(‖x₀-x*‖² + h ρ(T)(1 + ‖x₀-x*‖²))`: `C` is
/// fitted on the horizons up to `fit_until` and must then hold on the whole
/// `(T, h)` grid.
#[allow(clippy::too_many_arguments)]
pub fn sde_contraction(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    x0: &[f64],
    horizons: &[f64],
    hs: &[f64],
    fit_until: f64,
    m: usize,
    substeps: usize,
    seed: u64,
) -> Result<ContractionReport> {
    if horizons.is_empty() || hs.is_empty() {
        return Err(Error::invalid("contraction grid needs at least one horizon and one step size"));
    }
    if !horizons.iter().any(|&t| t <= fit_until) {
        return Err(Error::invalid("no horizon lies in the fitting window"));
    }
    let mut ts = horizons.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let xs = p.minimizer();
    let e0 = linalg::dist_sq(x0, xs);
    let mu = p.mu();
    let mut rows = Vec::with_capacity(ts.len() * hs.len());
    for (i, &h) in hs.iter().enumerate() {
        let checkpoints = ts.iter().map(|&t| whole_steps(t, h)).collect::<Result<Vec<_>>>()?;
        let mut opts = SdeOptions::new(DriftKind::Modified, h, *ts.last().expect("non-empty"), substeps, m, rng::substream_seed(seed, i as u64));
        opts.checkpoints = checkpoints;
        let set = simulate_sde(p, spec, x0, &opts)?;
        for (c, &t) in ts.iter().enumerate() {
            let sq: Vec<f64> = (0..m).map(|path| linalg::dist_sq(set.state(path, c), xs)).collect();
            let bound_shape = (-2.0 * mu * t).exp() * e0
                + h * diffusion::rho_decay_factor(&spec.envelope, mu, t) * (1.0 + e0);
            rows.push(ContractionRow { horizon: t, h, mean_sq: MeanEstimate::from_samples(&sq), bound_shape });
        }
    }
    let c_fit = rows.iter().filter(|r| r.horizon <= fit_until).map(ContractionRow::ratio).fold(0.0, f64::max);
    let pass = rows.iter().all(|r| r.mean_sq.mean <= c_fit * r.bound_shape + 4.0 * r.mean_sq.std_error);
    Ok(ContractionReport { rows, c_fit, pass })
}

/// CSV document with a header and one row per report.
pub fn reports_csv(reports: &[ErrorReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// `Q` as a dense matrix, for callers needing the quadratic form explicitly.
pub fn quadratic_form_matrix(phi: &TestFunction, dim: usize) -> Option<DMatrix<f64>> {
    match phi {
        TestFunction::QuadraticForm { q: Some(q) } => {
            Some(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(q)))
        }
        TestFunction::QuadraticForm { q: None } => Some(DMatrix::identity(dim, dim)),
        _ => None,
    }
}
