//! Cost rules `ε → (h, N)` and their comparison across regimes.
//!
//! Every `≈` is taken with constant 1. The horizon carries the only explicit
//! rate: `Nh = ln(1/ε)/μ` for weak targets and `2ln(1/ε)/μ` for strong ones
//! (so that `e^{-μNh/2} = ε`). `N` is the ceiling of `Nh/h` and the returned
//! step is `Nh/N`, so `T = N·h` holds by construction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::estimators::{strong_error, weak_error_vs_minimizer, ErrorReport, TestFunction};
use crate::objective::Objective;
use crate::scheme::SchemeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Weak,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    First,
    Second,
}

/// Large-time behaviour of the noise envelope `ς`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Decay {
    Bounded,
    /// `ς(s) ≤ c e^{-νs}`
    Exponential { nu: f64 },
    /// `ς(s) ≤ c (1 + s^α)^{-1}`
    Polynomial { alpha: f64 },
}

impl Decay {
    fn validate(self) -> Result<()> {
        match self {
            Decay::Exponential { nu } if !(nu > 0.0 && nu.is_finite()) => {
                Err(Error::InvalidRegime(format!("decay rate ν must be positive, got {nu}")))
            }
            Decay::Polynomial { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(Error::InvalidRegime(format!("decay exponent α must be positive, got {alpha}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub error: ErrorKind,
    pub order: Order,
    pub decay: Decay,
}

impl Regime {
    pub fn new(error: ErrorKind, order: Order, decay: Decay) -> Self {
        Regime { error, order, decay }
    }

    /// The cost formula this regime selects.
    pub fn formula(&self) -> Result<FormulaTag> {
        self.decay.validate()?;
        use ErrorKind::*;
        match (self.order, self.decay) {
            (Order::First, Decay::Polynomial { .. }) => Err(Error::InvalidRegime(
                "no first-order cost rule is defined for polynomially decaying noise".into(),
            )),
            (Order::First, _) => Ok(match self.error {
                Weak => FormulaTag::N1w,
                Strong => FormulaTag::N1s,
            }),
            (Order::Second, Decay::Bounded) => Err(Error::InvalidRegime(
                "second-order cost rules need decaying noise (exponential or polynomial)".into(),
            )),
            (Order::Second, Decay::Exponential { .. }) => Ok(match self.error {
                Weak => FormulaTag::N2we,
                Strong => FormulaTag::N2se,
            }),
            (Order::Second, Decay::Polynomial { .. }) => Ok(match self.error {
                Weak => FormulaTag::N2wp,
                Strong => FormulaTag::N2sp,
            }),
        }
    }
}

/// Parses `first-weak`, `first-strong`, `second-weak-exp`,
/// `second-strong-exp`, `second-weak-poly`, `second-strong-poly`. Decay
/// parameters are left unset; fill them in with
/// [`Regime::with_decay_parameter`].
impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use ErrorKind::*;
        let (error, order, decay) = match s {
            "first-weak" => (Weak, Order::First, Decay::Bounded),
            "first-strong" => (Strong, Order::First, Decay::Bounded),
            "second-weak-exp" => (Weak, Order::Second, Decay::Exponential { nu: f64::NAN }),
            "second-strong-exp" => (Strong, Order::Second, Decay::Exponential { nu: f64::NAN }),
            "second-weak-poly" => (Weak, Order::Second, Decay::Polynomial { alpha: f64::NAN }),
            "second-strong-poly" => (Strong, Order::Second, Decay::Polynomial { alpha: f64::NAN }),
            other => return Err(Error::InvalidRegime(format!("unknown regime '{other}'"))),
        };
        Ok(Regime { error, order, decay })
    }
}

impl Regime {
    /// Fills the decay parameter left unset by [`FromStr`].
    pub fn with_decay_parameter(mut self, nu: Option<f64>, alpha: Option<f64>) -> Result<Self> {
        self.decay = match self.decay {
            Decay::Exponential { .. } => Decay::Exponential {
                nu: nu.ok_or_else(|| Error::InvalidRegime("exponential decay needs ν".into()))?,
            },
            Decay::Polynomial { .. } => Decay::Polynomial {
                alpha: alpha.ok_or_else(|| Error::InvalidRegime("polynomial decay needs α".into()))?,
            },
            Decay::Bounded => Decay::Bounded,
        };
        self.decay.validate()?;
        Ok(self)
    }
}

/// The six cost rules, named after the cost symbols `N_{order,kind[,decay]}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormulaTag {
    N1w,
    N1s,
    N2we,
    N2se,
    N2wp,
    N2sp,
}

impl FormulaTag {
    pub fn name(self) -> &'static str {
        match self {
            FormulaTag::N1w => "N_1w",
            FormulaTag::N1s => "N_1s",
            FormulaTag::N2we => "N_2we",
            FormulaTag::N2se => "N_2se",
            FormulaTag::N2wp => "N_2wp",
            FormulaTag::N2sp => "N_2sp",
        }
    }

    /// `e` in the growth rate `N ~ ε^{-e}` (times `ln(1/ε)` when
    /// [`FormulaTag::has_log`]).
    pub fn exponent(self, alpha: f64) -> f64 {
        match self {
            FormulaTag::N1w | FormulaTag::N2se => 1.0,
            FormulaTag::N1s => 2.0,
            FormulaTag::N2we => 0.5,
            FormulaTag::N2wp => 0.5 + 0.75 / alpha,
            FormulaTag::N2sp => 1.0 + 1.5 / alpha,
        }
    }

    pub fn has_log(self) -> bool {
        !matches!(self, FormulaTag::N2wp | FormulaTag::N2sp)
    }

    /// `ε^{-e}` without the logarithmic factor.
    pub fn power_part(self, epsilon: f64, alpha: f64) -> f64 {
        epsilon.powf(-self.exponent(alpha))
    }
}

impl fmt::Display for FormulaTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityPlan {
    pub regime: Regime,
    pub epsilon: f64,
    pub mu: f64,
    /// `Nh / n_star`, at most the nominal step.
    pub h_star: f64,
    pub n_star: usize,
    /// Required horizon `Nh`.
    pub horizon: f64,
    /// `Nh/h` before rounding.
    pub n_unrounded: f64,
    /// Equal to `n_star`.
    pub predicted_cost: f64,
    pub formula_tag: FormulaTag,
}

impl ComplexityPlan {
    pub fn scheme_config(&self, x0: Vec<f64>, seed: u64) -> SchemeConfig {
        SchemeConfig::new(self.h_star, self.n_star, x0, seed)
    }
}

/// `(h, N)` for tolerance `ε` in the given regime.
pub fn plan(regime: Regime, epsilon: f64, mu: f64) -> Result<ComplexityPlan> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("ε must lie in (0, 1), got {epsilon}")));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!("μ must be positive, got {mu}")));
    }
    let tag = regime.formula()?;
    let log = (1.0 / epsilon).ln();
    // Exponential decay slower than μ limits the rate to ν.
    let rate = match regime.decay {
        Decay::Exponential { nu } if regime.order == Order::Second => mu.min(nu),
        _ => mu,
    };
    let strong_factor = if regime.error == ErrorKind::Strong { 2.0 } else { 1.0 };
    let (h, horizon) = match tag {
        FormulaTag::N1w => (epsilon, log / rate),
        FormulaTag::N1s => (epsilon * epsilon, strong_factor * log / rate),
        FormulaTag::N2we => (epsilon.sqrt(), log / rate),
        FormulaTag::N2se => (epsilon, strong_factor * log / rate),
        FormulaTag::N2wp | FormulaTag::N2sp => {
            let Decay::Polynomial { alpha } = regime.decay else { unreachable!() };
            // h / (1 + (Nh)^{2α}) = ε² (weak, h = √ε) or ε⁴ (strong, h = ε).
            let (h, target) = if tag == FormulaTag::N2wp {
                (epsilon.sqrt(), epsilon * epsilon)
            } else {
                (epsilon, epsilon.powi(4))
            };
            (h, (h / target - 1.0).powf(0.5 / alpha))
        }
    };
    let n_unrounded = horizon / h;
    let n_star = (n_unrounded.ceil() as usize).max(1);
    Ok(ComplexityPlan {
        regime,
        epsilon,
        mu,
        h_star: horizon / n_star as f64,
        n_star,
        horizon,
        n_unrounded,
        predicted_cost: n_star as f64,
        formula_tag: tag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// The second-order rule grows strictly slower than `N_1w`.
    Reduction,
    NoReduction,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Reduction => "reduction",
            Verdict::NoReduction => "no reduction",
        }
    }
}

/// All applicable plans at one tolerance plus the structural identities,
/// evaluated on the `ε`-power parts of the cost rules.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub epsilon: f64,
    pub plans: Vec<ComplexityPlan>,
    /// `ε^{-2} / (ε^{-1})²` from `N_1s` and `N_1w`.
    pub first_strong_over_weak_sq: f64,
    /// The same ratio for the second-order pair, when the decay allows one.
    pub second_strong_over_weak_sq: Option<f64>,
    /// `N_2we / √N_1w`, for exponential decay.
    pub second_over_sqrt_first: Option<f64>,
    pub verdict: Verdict,
}

/// Whether the second-order weak rule beats `N_1w` asymptotically.
pub fn verdict(decay: Decay) -> Verdict {
    let e = match decay {
        Decay::Bounded => return Verdict::NoReduction,
        Decay::Exponential { .. } => FormulaTag::N2we.exponent(0.0),
        Decay::Polynomial { alpha } => FormulaTag::N2wp.exponent(alpha),
    };
    if e < FormulaTag::N1w.exponent(0.0) {
        Verdict::Reduction
    } else {
        Verdict::NoReduction
    }
}

pub fn compare_regimes(epsilon_grid: &[f64], mu: f64, decay: Decay) -> Result<Vec<ComparisonRow>> {
    if epsilon_grid.is_empty() {
        return Err(Error::invalid("ε grid must not be empty"));
    }
    decay.validate()?;
    let alpha = match decay {
        Decay::Polynomial { alpha } => alpha,
        _ => f64::NAN,
    };
    let ratio = |strong: FormulaTag, weak: FormulaTag, eps: f64| {
        strong.power_part(eps, alpha) / weak.power_part(eps, alpha).powi(2)
    };
    epsilon_grid
        .iter()
        .map(|&eps| {
            let mut plans = Vec::new();
            for error in [ErrorKind::Weak, ErrorKind::Strong] {
                plans.push(plan(Regime::new(error, Order::First, Decay::Bounded), eps, mu)?);
            }
            if decay != Decay::Bounded {
                for error in [ErrorKind::Weak, ErrorKind::Strong] {
                    plans.push(plan(Regime::new(error, Order::Second, decay), eps, mu)?);
                }
            }
            let (second, sqrt_first) = match decay {
                Decay::Bounded => (None, None),
                Decay::Exponential { .. } => (
                    Some(ratio(FormulaTag::N2se, FormulaTag::N2we, eps)),
                    Some(FormulaTag::N2we.power_part(eps, alpha) / FormulaTag::N1w.power_part(eps, alpha).sqrt()),
                ),
                Decay::Polynomial { .. } => (Some(ratio(FormulaTag::N2sp, FormulaTag::N2wp, eps)), None),
            };
            Ok(ComparisonRow {
                epsilon: eps,
                plans,
                first_strong_over_weak_sq: ratio(FormulaTag::N1s, FormulaTag::N1w, eps),
                second_strong_over_weak_sq: second,
                second_over_sqrt_first: sqrt_first,
                verdict: verdict(decay),
            })
        })
        .collect()
}

pub const PLAN_CSV_HEADER: &str = "epsilon,regime,h_star,n_star,formula_tag,predicted_cost";

fn regime_label(r: &Regime) -> String {
    let order = match r.order {
        Order::First => "first",
        Order::Second => "second",
    };
    let kind = match r.error {
        ErrorKind::Weak => "weak",
        ErrorKind::Strong => "strong",
    };
    match r.decay {
        Decay::Bounded => format!("{order}-{kind}"),
        Decay::Exponential { .. } if r.order == Order::First => format!("{order}-{kind}"),
        Decay::Exponential { .. } => format!("{order}-{kind}-exp"),
        Decay::Polynomial { .. } => format!("{order}-{kind}-poly"),
    }
}

impl ComplexityPlan {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{},{:.16e},{},{},{:.16e}",
            self.epsilon,
            regime_label(&self.regime),
            self.h_star,
            self.n_star,
            self.formula_tag,
            self.predicted_cost
        )
    }
}

/// Widening of the pilot constant allowed before the scaling is rejected.
/// Tight enough that an `O(√ε)` error (ratio `1/√2` per halving) fails while
/// an `O(ε)` error with slowly varying corrections passes.
pub const VALIDATION_SLACK: f64 = 1.25;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanValidation {
    pub plan: ComplexityPlan,
    pub measured: ErrorReport,
    pub pilot: ErrorReport,
    /// `pilot error / ε_pilot`.
    pub pilot_c: f64,
    pub pass: bool,
}

pub const VALIDATION_CSV_HEADER: &str =
    "epsilon,regime,h_star,n_star,formula_tag,predicted_cost,measured_error,std_error,pilot_C,pass";

impl PlanValidation {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{}",
            self.plan.csv_row(),
            self.measured.estimate,
            self.measured.std_error,
            self.pilot_c,
            self.pass
        )
    }
}

/// Runs the matching estimator at the plan and at a pilot plan for
/// `ε_pilot = 2ε` (or `(1 + ε)/2` when `2ε ≥ 1`), fits `C` from the pilot
/// and checks `error ≤ VALIDATION_SLACK·C·ε` up to four combined standard
/// errors. Weak regimes use `|E φ(X_N) - φ(x*)|`, strong
/// ones the RMS distance to `x*`.
pub fn validate_plan(
    p: &dyn Objective,
    spec: &DiffusionSpec,
    phi: &TestFunction,
    plan_at: &ComplexityPlan,
    x0: &[f64],
    m: usize,
    seed: u64,
) -> Result<PlanValidation> {
    let eps = plan_at.epsilon;
    let pilot_eps = if 2.0 * eps < 1.0 { 2.0 * eps } else { 0.5 * (1.0 + eps) };
    let pilot_plan = plan(plan_at.regime, pilot_eps, plan_at.mu)?;
    let run = |pl: &ComplexityPlan| {
        let cfg = pl.scheme_config(x0.to_vec(), seed);
        match pl.regime.error {
            ErrorKind::Weak => weak_error_vs_minimizer(p, spec, phi, &cfg, m),
            ErrorKind::Strong => strong_error(p, spec, &cfg, m).map(|s| s.rms),
        }
    };
    let pilot = run(&pilot_plan)?;
    let measured = run(plan_at)?;
    let pilot_c = pilot.estimate / pilot_eps;
    let bound = VALIDATION_SLACK * pilot_c * eps;
    let se = measured.std_error.hypot(VALIDATION_SLACK * pilot.std_error * eps / pilot_eps);
    let pass = measured.estimate <= bound + 4.0 * se;
    Ok(PlanValidation { plan: plan_at.clone(), measured, pilot, pilot_c, pass })
}
