//! Subcommand bodies. Each returns the CSV document plus an optional
//! failure to report after the CSV has been written.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use modeq::complexity::{self, ComplexityPlan, Decay, Regime};
use modeq::diffusion::{self, DiffusionSpec, EnvelopeSchedule, Shape};
use modeq::estimators::{self, SweepOptions};
use modeq::flows::{gradient_flow, tangent_ode, tangent_sde, DriftKind, SdeOptions};
use modeq::objective::{check_assumptions, Objective, GRADIENT_FD_TOL, HESS_VEC_FD_TOL};
use modeq::scheme::{quadratic_second_moment_recursion, run_ensemble, run_scheme, SchemeConfig};
use modeq::stats::MeanEstimate;
use modeq::{linalg, quadrature, rng};

use crate::config::{CheckSection, ExperimentConfig, PlanSection};

pub struct Outcome {
    pub csv: String,
    /// Reported (with its exit code) after the CSV is emitted.
    pub failure: Option<anyhow::Error>,
}

impl From<String> for Outcome {
    fn from(csv: String) -> Self {
        Outcome { csv, failure: None }
    }
}

fn setup(cfg: &ExperimentConfig) -> Result<(Box<dyn Objective>, DiffusionSpec)> {
    let p = cfg.problem.build()?;
    let spec = cfg.diffusion.build(p.minimizer())?;
    if spec.dim() != p.dim() {
        bail!("diffusion has dimension {}, problem has {}", spec.dim(), p.dim());
    }
    cfg.phi.validate(p.dim())?;
    Ok((p, spec))
}

fn scheme_config(cfg: &ExperimentConfig, dim: usize, h: f64, n: usize) -> Result<SchemeConfig> {
    let s = &cfg.scheme;
    let mut sc = SchemeConfig::new(h, n, s.x0(dim)?, s.seed);
    sc.noise_mode = s.noise_mode;
    sc.substeps = s.substeps;
    sc.validate(dim)?;
    Ok(sc)
}

fn f64s(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(",")
}

/// `σ ≡ σ₀ I` with diagonal `A`: the exact second-moment recursion applies.
fn recursion_oracle(p: &dyn Objective, spec: &DiffusionSpec, sc: &SchemeConfig) -> Option<f64> {
    let a = p.quadratic_matrix()?;
    let d = a.nrows();
    if (0..d).any(|i| (0..d).any(|j| i != j && a[(i, j)] != 0.0)) {
        return None;
    }
    let (EnvelopeSchedule::Constant { c }, Shape::ScalarIdentity) = (spec.envelope, &spec.shape) else {
        return None;
    };
    let diag: Vec<f64> = (0..d).map(|i| a[(i, i)]).collect();
    let disp = linalg::sub(&sc.x0, p.minimizer());
    quadratic_second_moment_recursion(&diag, c, sc.h, sc.n_steps, &disp).last().copied()
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (p, spec) = setup(cfg)?;
    let d = p.dim();
    let h = cfg.scheme.step()?;
    let n = cfg.scheme.steps(h)?;
    let sc = scheme_config(cfg, d, h, n)?;
    if let Some(w) = sc.step_size_warning(p.as_ref(), &spec) {
        eprintln!("warning: {w}");
    }
    let m = cfg.scheme.ensemble;
    if m == 0 {
        bail!("scheme.M must be at least 1");
    }
    let mut csv = String::new();
    if m == 1 {
        let rec = run_scheme(p.as_ref(), &spec, &sc)?;
        let cols: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        let _ = writeln!(csv, "n,t,{}", cols.join(","));
        for (k, (x, t)) in rec.states.iter().zip(&rec.times).enumerate() {
            let _ = writeln!(csv, "{k},{t:.16e},{}", f64s(x));
        }
        return Ok(csv.into());
    }
    let ens = run_ensemble(p.as_ref(), &spec, &sc, m, &[n])?;
    let xs = p.minimizer();
    let f_star = p.value(xs);
    let sq = MeanEstimate::from_samples(&ens.map_checkpoint(0, |x| linalg::dist_sq(x, xs)));
    let res = MeanEstimate::from_samples(&ens.map_checkpoint(0, |x| p.value(x) - f_star));
    let phi = MeanEstimate::from_samples(&ens.map_checkpoint(0, |x| cfg.phi.eval(p.as_ref(), x)));
    let rms = sq.mean.sqrt();
    let rms_se = if rms > 0.0 { sq.std_error / (2.0 * rms) } else { 0.0 };
    let _ = writeln!(csv, "statistic,value,std_error");
    let mut row = |name: &str, v: f64, se: f64| {
        let _ = writeln!(csv, "{name},{v:.16e},{se:.16e}");
    };
    for i in 0..d {
        let e = MeanEstimate::from_samples(&ens.map_checkpoint(0, |x| x[i]));
        row(&format!("mean_x{}", i + 1), e.mean, e.std_error);
    }
    row("mean_sq_distance", sq.mean, sq.std_error);
    row("strong_rms", rms, rms_se);
    row("objective_residual", res.mean, res.std_error);
    row(&format!("phi_{}", cfg.phi.name()), phi.mean, phi.std_error);
    eprintln!("N = {n}, h = {h}, M = {m}");
    eprintln!("E‖X_N - x*‖² = {:.8} ± {:.2e}", sq.mean, sq.std_error);
    eprintln!("(E‖X_N - x*‖²)^½ = {rms:.8} ± {rms_se:.2e}");
    if let Some(oracle) = recursion_oracle(p.as_ref(), &spec, &sc) {
        row("oracle_mean_sq_distance", oracle, 0.0);
        let z = if sq.std_error > 0.0 { (sq.mean - oracle) / sq.std_error } else { 0.0 };
        eprintln!("recursion oracle {oracle:.8}, deviation {z:+.2} std errors");
    }
    Ok(csv.into())
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (p, spec) = setup(cfg)?;
    let section = cfg.sweep.as_ref().context("config has no `sweep` section")?;
    let s = &cfg.scheme;
    let grid = s.h_grid.as_ref().context("sweep needs scheme.h_grid")?;
    let horizon = s.horizon.context("sweep needs scheme.T")?;
    let opts = SweepOptions { x0: s.x0(p.dim())?, seed: s.seed, substeps: s.substeps, noise_mode: s.noise_mode };
    let out = estimators::sweep(p.as_ref(), &spec, &cfg.phi, grid, horizon, s.ensemble, section.target, &opts)?;
    let mut csv = estimators::reports_csv(&out.reports);
    let used = out.used.iter().filter(|u| **u).count();
    let _ = writeln!(csv, "# points_used = {used}/{}", out.reports.len());
    match out.fit {
        Ok(fit) => {
            let _ = writeln!(csv, "# slope = {:.16e}", fit.slope);
            let _ = writeln!(csv, "# intercept = {:.16e}", fit.intercept);
            let _ = writeln!(csv, "# r_squared = {:.16e}", fit.r_squared);
            eprintln!("order fit: slope {:.4}, R² {:.4} on {used} points", fit.slope, fit.r_squared);
            Ok(csv.into())
        }
        Err(e) => Ok(Outcome { csv, failure: Some(e.into()) }),
    }
}

fn regime(name: &str, nu: Option<f64>, alpha: Option<f64>) -> Result<Regime> {
    Ok(name.parse::<Regime>()?.with_decay_parameter(nu, alpha)?)
}

pub fn plan(section: &PlanSection) -> Result<Outcome> {
    if section.regimes.is_empty() || section.epsilons.is_empty() {
        bail!("plan needs at least one regime and one ε");
    }
    let regimes: Vec<Regime> =
        section.regimes.iter().map(|r| regime(r, section.nu, section.alpha)).collect::<Result<_>>()?;
    let mut csv = String::new();
    if section.compare {
        let mut decays: Vec<Decay> = Vec::new();
        for r in &regimes {
            let d = if r.order == complexity::Order::First { Decay::Bounded } else { r.decay };
            if !decays.contains(&d) {
                decays.push(d);
            }
        }
        let _ = writeln!(
            csv,
            "epsilon,decay,N_1w,N_1s,N_2w,N_2s,first_strong_over_weak_sq,second_strong_over_weak_sq,second_over_sqrt_first,verdict"
        );
        for decay in decays {
            let label = match decay {
                Decay::Bounded => "bounded".to_string(),
                Decay::Exponential { nu } => format!("exponential(nu={nu})"),
                Decay::Polynomial { alpha } => format!("polynomial(alpha={alpha})"),
            };
            for row in complexity::compare_regimes(&section.epsilons, section.mu, decay)? {
                let n = |i: usize| row.plans.get(i).map(|p| p.n_star.to_string()).unwrap_or_default();
                let opt = |v: Option<f64>| v.map(|v| format!("{v:.16e}")).unwrap_or_default();
                let _ = writeln!(
                    csv,
                    "{:.16e},{label},{},{},{},{},{:.16e},{},{},{}",
                    row.epsilon,
                    n(0),
                    n(1),
                    n(2),
                    n(3),
                    row.first_strong_over_weak_sq,
                    opt(row.second_strong_over_weak_sq),
                    opt(row.second_over_sqrt_first),
                    row.verdict.label()
                );
                eprintln!("ε = {}: {label}: {}", row.epsilon, row.verdict.label());
            }
        }
        return Ok(csv.into());
    }
    let _ = writeln!(csv, "{}", complexity::PLAN_CSV_HEADER);
    for r in regimes {
        for &eps in &section.epsilons {
            let pl = complexity::plan(r, eps, section.mu)?;
            let _ = writeln!(csv, "{}", pl.csv_row());
        }
    }
    Ok(csv.into())
}

pub fn validate_plan(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (p, spec) = setup(cfg)?;
    let v = cfg.validate.as_ref().context("config has no `validate` section")?;
    let r = regime(&v.regime, v.nu, v.alpha)?;
    let mu = v.mu.unwrap_or_else(|| p.mu());
    let x0 = cfg.scheme.x0(p.dim())?;
    let mut csv = String::new();
    let _ = writeln!(csv, "{}", complexity::VALIDATION_CSV_HEADER);
    let mut all = true;
    for &eps in &v.epsilons {
        let pl: ComplexityPlan = complexity::plan(r, eps, mu)?;
        let val = complexity::validate_plan(p.as_ref(), &spec, &cfg.phi, &pl, &x0, cfg.scheme.ensemble, cfg.scheme.seed)?;
        all &= val.pass;
        let _ = writeln!(csv, "{}", val.csv_row());
    }
    eprintln!("scaling {}", if all { "consistent with the plan" } else { "NOT consistent with the plan" });
    Ok(csv.into())
}

struct CheckTable {
    csv: String,
    failed: usize,
}

impl CheckTable {
    fn new() -> Self {
        CheckTable { csv: "check,value,threshold,pass\n".to_string(), failed: 0 }
    }

    fn row(&mut self, name: &str, value: f64, threshold: f64, pass: bool) {
        let _ = writeln!(self.csv, "{name},{value:.16e},{threshold:.16e},{pass}");
        if !pass {
            self.failed += 1;
        }
    }
}

/// Assumption, diffusion and decay checks. Failures are reported in the
/// table; the command itself succeeds.
pub fn check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (p, spec) = setup(cfg)?;
    let default = CheckSection::default();
    let c = cfg.check.as_ref().unwrap_or(&default);
    let p = p.as_ref();
    let d = p.dim();
    let xs = p.minimizer();
    let mu = p.mu();
    let mut t = CheckTable::new();

    let a = check_assumptions(p, &c.h_grid, c.samples, cfg.scheme.seed, c.radius)?;
    t.row("optimality_residual", a.optimality_residual, 1e-12 * (1.0 + linalg::norm(xs)), a.optimality_ok);
    t.row("mu_convexity", a.observed_mu, a.declared_mu, a.mu_ok);
    t.row("gradient_lipschitz", a.observed_lip, a.declared_lip, a.lip_ok);
    t.row("gradient_fd_error", a.gradient_fd_error, GRADIENT_FD_TOL, a.gradient_fd_error <= GRADIENT_FD_TOL);
    t.row("hess_vec_fd_error", a.hess_vec_fd_error, HESS_VEC_FD_TOL, a.hess_vec_fd_error <= HESS_VEC_FD_TOL);
    for m in &a.modified {
        t.row(&format!("modified_mu_convexity[h={}]", m.h), m.observed_mu, a.declared_mu, m.ok);
    }

    // Diffusion: envelope monotone and bounded, σσᵀ positive semidefinite, ρ consistent.
    let env = spec.envelope;
    let t_max = c.horizons.iter().cloned().fold(1.0, f64::max);
    let grid: Vec<f64> = (0..=200).map(|i| t_max * i as f64 / 200.0).collect();
    let monotone = grid.windows(2).all(|w| env.value(w[1]) <= env.value(w[0])) && env.value(0.0) <= env.sup();
    t.row("envelope_nonincreasing", env.value(t_max), env.sup(), monotone);
    let mut pts = vec![0.0; 64 * d];
    rng::fill_uniform(cfg.scheme.seed, 1, -c.radius, c.radius, &mut pts);
    let mut min_eig = f64::INFINITY;
    for x in pts.chunks(d) {
        let x: Vec<f64> = x.iter().zip(xs).map(|(u, s)| u + s).collect();
        for &tt in &[0.0, t_max] {
            let (lo, _) = linalg::symmetric_extremes(&spec.a_matrix(tt, &x));
            min_eig = min_eig.min(lo);
        }
    }
    let psd_tol = 1e-12 * (1.0 + spec.noise_sup().powi(2) * (1.0 + c.radius).powi(2));
    t.row("diffusion_psd", min_eig, -psd_tol, min_eig >= -psd_tol);
    for &horizon in &c.horizons {
        let closed = diffusion::rho(&env, mu, horizon);
        let quad = quadrature::integrate(|s| (2.0 * mu * s).exp() * env.value(s).powi(2), 0.0, horizon, 1e-12, 16);
        let rel = if closed == 0.0 { quad.abs() } else { (closed - quad).abs() / closed.abs() };
        t.row(&format!("rho_quadrature[T={horizon}]"), rel, 1e-8, rel <= 1e-8);
    }

    // Flow and tangent decay.
    let x0 = match &cfg.scheme.x0 {
        Some(_) => cfg.scheme.x0(d)?,
        None => xs.iter().map(|v| v + 1.0).collect(),
    };
    let k = match &c.k {
        Some(k) if k.len() != d => bail!("check.k has length {}, expected {d}", k.len()),
        Some(k) => k.clone(),
        None => (0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
    };
    let e0 = linalg::dist(&x0, xs);
    let kn = linalg::norm(&k);
    // Itô term of the tangent SDE for state-dependent noise.
    let kappa = if spec.is_state_independent() { 0.0 } else { spec.noise_sup() };
    for &horizon in &c.horizons {
        let flow = gradient_flow(p, &x0, horizon, c.tol)?;
        let bound = (-mu * horizon).exp() * e0 + 1e-8;
        let v = linalg::dist(&flow.state, xs);
        t.row(&format!("flow_contraction[T={horizon}]"), v, bound, v <= bound);
        let eta = tangent_ode(p, &x0, &k, horizon, c.tol)?;
        let bound = (-mu * horizon).exp() * kn + 10.0 * c.tol;
        let v = linalg::norm(&eta);
        t.row(&format!("tangent_ode_decay[T={horizon}]"), v, bound, v <= bound);
        let opts = SdeOptions::new(DriftKind::Modified, c.tangent_h, horizon, c.tangent_substeps, c.tangent_ensemble, cfg.scheme.seed);
        match tangent_sde(p, &spec, &x0, &k, &opts) {
            Ok(m) => {
                let rate = 2.0 * mu - c.tangent_h * kappa * kappa;
                let bound = (-rate * horizon).exp() * kn * kn + 4.0 * m.second.std_error;
                t.row(&format!("tangent_sde_decay[T={horizon}]"), m.second.mean, bound, m.second.mean <= bound * (1.0 + 1e-12));
            }
            Err(modeq::Error::InvalidInput(msg)) => eprintln!("tangent_sde_decay[T={horizon}] skipped: {msg}"),
            Err(e) => return Err(e.into()),
        }
    }

    if let Some(cs) = &c.contraction {
        let r = estimators::sde_contraction(
            p, &spec, &x0, &cs.horizons, &cs.h_grid, cs.fit_until, cs.ensemble, cs.substeps, cfg.scheme.seed,
        )?;
        for row in &r.rows {
            let bound = r.c_fit * row.bound_shape + 4.0 * row.mean_sq.std_error;
            t.row(
                &format!("sde_contraction[T={};h={}]", row.horizon, row.h),
                row.mean_sq.mean,
                bound,
                row.mean_sq.mean <= bound,
            );
        }
        eprintln!("fitted contraction constant C = {:.4}", r.c_fit);
    }
    eprintln!("{} check(s) failed", t.failed);
    Ok(t.csv.into())
}
