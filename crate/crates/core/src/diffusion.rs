//! Diffusion coefficients `σ(t, x) = ς(t)·shape(x)` and the rate integral `ρ(T)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature;

/// Scalar envelope `ς(t)`: nonincreasing and bounded by `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvelopeSchedule {
    /// `ς(s) = c`
    Constant { c: f64 },
    /// `ς(s) = c·e^{-νs}`
    Exponential { c: f64, nu: f64 },
    /// `ς(s) = c / (1 + s^α)`
    Polynomial { c: f64, alpha: f64 },
}

const RHO_REL_TOL: f64 = 1e-10;

impl EnvelopeSchedule {
    pub fn validate(&self) -> Result<()> {
        let c = self.sup();
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::invalid(format!("envelope scale c must be finite and ≥ 0, got {c}")));
        }
        match *self {
            EnvelopeSchedule::Exponential { nu, .. } if !(nu > 0.0 && nu.is_finite()) => {
                Err(Error::invalid(format!("exponential envelope needs ν > 0, got {nu}")))
            }
            EnvelopeSchedule::Polynomial { alpha, .. } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(Error::invalid(format!("polynomial envelope needs α > 0, got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            EnvelopeSchedule::Constant { c } => c,
            EnvelopeSchedule::Exponential { c, nu } => c * (-nu * t).exp(),
            EnvelopeSchedule::Polynomial { c, alpha } => c / (1.0 + t.powf(alpha)),
        }
    }

    /// `‖ς‖_∞ = ς(0) = c`.
    pub fn sup(&self) -> f64 {
        match *self {
            EnvelopeSchedule::Constant { c }
            | EnvelopeSchedule::Exponential { c, .. }
            | EnvelopeSchedule::Polynomial { c, .. } => c,
        }
    }

    /// `sup_s |ς'(s)|`; infinite for polynomial envelopes with `α < 1`.
    pub fn derivative_bound(&self) -> f64 {
        match *self {
            EnvelopeSchedule::Constant { .. } => 0.0,
            EnvelopeSchedule::Exponential { c, nu } => c * nu,
            EnvelopeSchedule::Polynomial { c, alpha } => {
                if c == 0.0 {
                    0.0
                } else if alpha < 1.0 {
                    f64::INFINITY
                } else if alpha == 1.0 {
                    c
                } else {
                    // |ς'| = cα s^{α-1}/(1+s^α)² peaks where s^α = (α-1)/(α+1).
                    let sa = (alpha - 1.0) / (alpha + 1.0);
                    let s = sa.powf(1.0 / alpha);
                    c * alpha * s.powf(alpha - 1.0) / (1.0 + sa).powi(2)
                }
            }
        }
    }
}

/// `ρ(T) = ∫₀ᵀ e^{2μs} ς(s)² ds`.
///
/// Closed forms for constant and exponential envelopes; adaptive quadrature
/// for polynomial ones.
pub fn rho(envelope: &EnvelopeSchedule, mu: f64, horizon: f64) -> f64 {
    if horizon <= 0.0 {
        return 0.0;
    }
    match *envelope {
        EnvelopeSchedule::Constant { c } => c * c * (2.0 * mu * horizon).exp_m1() / (2.0 * mu),
        EnvelopeSchedule::Exponential { c, nu } => {
            let k = 2.0 * (mu - nu);
            if k == 0.0 {
                c * c * horizon
            } else {
                c * c * (k * horizon).exp_m1() / k
            }
        }
        EnvelopeSchedule::Polynomial { .. } => {
            (2.0 * mu * horizon).exp() * polynomial_decayed(envelope, mu, horizon)
        }
    }
}

/// `e^{-2μT} ρ(T)`, evaluated without forming `e^{2μT}`.
pub fn rho_decay_factor(envelope: &EnvelopeSchedule, mu: f64, horizon: f64) -> f64 {
    if horizon <= 0.0 {
        return 0.0;
    }
    match *envelope {
        EnvelopeSchedule::Constant { c } => -c * c * (-2.0 * mu * horizon).exp_m1() / (2.0 * mu),
        EnvelopeSchedule::Exponential { c, nu } => {
            let k = 2.0 * (mu - nu);
            if k == 0.0 {
                c * c * horizon * (-2.0 * mu * horizon).exp()
            } else if k > 0.0 {
                -c * c * (-2.0 * nu * horizon).exp() * (-k * horizon).exp_m1() / k
            } else {
                c * c * (-2.0 * mu * horizon).exp() * (k * horizon).exp_m1() / k
            }
        }
        EnvelopeSchedule::Polynomial { .. } => polynomial_decayed(envelope, mu, horizon),
    }
}

/// `∫₀ᵀ e^{-2μu} ς(T-u)² du`, the decayed integral after `u = T - s`.
fn polynomial_decayed(envelope: &EnvelopeSchedule, mu: f64, horizon: f64) -> f64 {
    let panels = ((2.0 * mu * horizon).ceil() as usize + 1).min(4096);
    quadrature::integrate(
        |u| {
            let v = envelope.value(horizon - u);
            (-2.0 * mu * u).exp() * v * v
        },
        0.0,
        horizon,
        RHO_REL_TOL,
        panels,
    )
}

/// Spatial structure of `σ`.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// `σ = ς(t)·I`
    ScalarIdentity,
    /// `σ = ς(t)·diag(base)`
    Diagonal(Vec<f64>),
    /// `σ = ς(t)·(1 + λ r/(1+r))·I` with `r = ‖x - x*‖`.
    StateScaled { gain: f64 },
}

/// `σ(t, x)` together with the point `x*` used by state-dependent shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSpec {
    pub envelope: EnvelopeSchedule,
    pub shape: Shape,
    center: Vec<f64>,
}

impl DiffusionSpec {
    pub fn new(envelope: EnvelopeSchedule, shape: Shape, center: Vec<f64>) -> Result<Self> {
        envelope.validate()?;
        match &shape {
            Shape::Diagonal(base) if base.len() != center.len() => {
                return Err(Error::invalid(format!(
                    "diagonal base has length {}, expected {}",
                    base.len(),
                    center.len()
                )))
            }
            Shape::Diagonal(base) if base.iter().any(|b| !b.is_finite()) => {
                return Err(Error::invalid("diagonal base must be finite"))
            }
            Shape::StateScaled { gain } if !(*gain >= 0.0 && gain.is_finite()) => {
                return Err(Error::invalid(format!("state gain must be finite and ≥ 0, got {gain}")))
            }
            _ => {}
        }
        Ok(DiffusionSpec { envelope, shape, center })
    }

    /// `σ = ς(t)·I` in dimension `d`.
    pub fn scalar(envelope: EnvelopeSchedule, d: usize) -> Self {
        Self::new(envelope, Shape::ScalarIdentity, vec![0.0; d]).expect("valid envelope")
    }

    /// `σ ≡ c·I`.
    pub fn constant(c: f64, d: usize) -> Self {
        Self::scalar(EnvelopeSchedule::Constant { c }, d)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// True when `σ(t, x)` does not depend on `x`.
    pub fn is_state_independent(&self) -> bool {
        match self.shape {
            Shape::StateScaled { gain } => gain == 0.0,
            _ => true,
        }
    }

    /// True when `ς ≡ 0`.
    pub fn is_zero(&self) -> bool {
        self.envelope.sup() == 0.0
            || matches!(&self.shape, Shape::Diagonal(b) if b.iter().all(|v| *v == 0.0))
    }

    #[inline]
    fn state_factor(&self, x: &[f64]) -> f64 {
        match self.shape {
            Shape::StateScaled { gain } => {
                let r = linalg::dist(x, &self.center);
                1.0 + gain * r / (1.0 + r)
            }
            _ => 1.0,
        }
    }

    /// `shape(x)·g`, i.e. `σ(t, x) g / ς(t)`.
    #[inline]
    pub fn shape_apply(&self, x: &[f64], g: &[f64], out: &mut [f64]) {
        match &self.shape {
            Shape::ScalarIdentity => out.copy_from_slice(g),
            Shape::Diagonal(base) => {
                for i in 0..g.len() {
                    out[i] = base[i] * g[i];
                }
            }
            Shape::StateScaled { .. } => {
                let s = self.state_factor(x);
                for i in 0..g.len() {
                    out[i] = s * g[i];
                }
            }
        }
    }

    /// `σ(t, x)·g` without materialising the matrix.
    #[inline]
    pub fn sigma_apply(&self, t: f64, x: &[f64], g: &[f64], out: &mut [f64]) {
        let env = self.envelope.value(t);
        self.shape_apply(x, g, out);
        for o in out.iter_mut() {
            *o *= env;
        }
    }

    pub fn sigma_matrix(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let env = self.envelope.value(t);
        match &self.shape {
            Shape::Diagonal(base) => DMatrix::from_fn(d, d, |i, j| if i == j { env * base[i] } else { 0.0 }),
            _ => DMatrix::identity(d, d) * (env * self.state_factor(x)),
        }
    }

    /// `a(t, x) = σ(t, x) σ(t, x)*`.
    pub fn a_matrix(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let s = self.sigma_matrix(t, x);
        &s * s.transpose()
    }

    /// `Dσ(t, x)[η]·g`, the derivative of `x ↦ σ(t, x) g` in direction `η`.
    ///
    /// The state-scaled shape is not differentiable at `x*`; the derivative
    /// is taken as zero there.
    pub fn sigma_derivative(&self, t: f64, x: &[f64], eta: &[f64], g: &[f64], out: &mut [f64]) {
        match self.shape {
            Shape::StateScaled { gain } if gain != 0.0 => {
                let diff = linalg::sub(x, &self.center);
                let r = linalg::norm(&diff);
                if r == 0.0 {
                    out.fill(0.0);
                    return;
                }
                let slope = self.envelope.value(t) * gain * linalg::dot(&diff, eta) / (r * (1.0 + r).powi(2));
                for i in 0..g.len() {
                    out[i] = slope * g[i];
                }
            }
            _ => out.fill(0.0),
        }
    }

    /// `C_spec` with `‖σ(t,x)‖ ≤ C_spec ς(t)(1 + ‖x - x*‖)` and
    /// `‖σ(t,x₂) - σ(t,x₁)‖ ≤ C_spec ς(t)‖x₂ - x₁‖`.
    pub fn c_spec(&self) -> f64 {
        match &self.shape {
            Shape::ScalarIdentity => 1.0,
            Shape::Diagonal(base) => base.iter().fold(0.0, |m, b| m.max(b.abs())),
            Shape::StateScaled { gain } => 1.0 + gain,
        }
    }

    /// Time-Lipschitz constant `L_σ` with
    /// `‖σ(t₂,x) - σ(t₁,x)‖ ≤ L_σ|t₂ - t₁|(1 + ‖x - x*‖)`.
    pub fn time_lipschitz(&self) -> f64 {
        let bound = self.envelope.derivative_bound();
        if bound == 0.0 {
            0.0
        } else {
            bound * self.c_spec()
        }
    }

    /// Sup-norm `‖ς‖_∞` scaled by the shape constant.
    pub fn noise_sup(&self) -> f64 {
        self.envelope.sup() * self.c_spec()
    }
}

/// Shape names used by the configuration record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    ScalarIdentity,
    Diagonal,
    StateScaled,
}

/// `{"envelope": {...}, "shape": "diagonal", "base": [...]}` and variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub envelope: EnvelopeSchedule,
    pub shape: ShapeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_gain: Option<f64>,
}

impl DiffusionConfig {
    /// Builds the spec around the problem minimizer `center`.
    pub fn build(&self, center: &[f64]) -> Result<DiffusionSpec> {
        let shape = match self.shape {
            ShapeKind::ScalarIdentity => Shape::ScalarIdentity,
            ShapeKind::Diagonal => Shape::Diagonal(
                self.base.clone().ok_or_else(|| Error::invalid("diagonal shape requires `base`"))?,
            ),
            ShapeKind::StateScaled => Shape::StateScaled {
                gain: self.state_gain.ok_or_else(|| Error::invalid("state_scaled shape requires `state_gain`"))?,
            },
        };
        if self.base.is_some() && self.shape != ShapeKind::Diagonal {
            return Err(Error::invalid("`base` only applies to the diagonal shape"));
        }
        if self.state_gain.is_some() && self.shape != ShapeKind::StateScaled {
            return Err(Error::invalid("`state_gain` only applies to the state_scaled shape"));
        }
        DiffusionSpec::new(self.envelope, shape, center.to_vec())
    }
}
