//! Experiment configuration: one JSON document plus `--set key=value` overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use modeq::diffusion::{DiffusionConfig, EnvelopeSchedule, ShapeKind};
use modeq::estimators::{TestFunction, Target};
use modeq::objective::ProblemConfig;
use modeq::scheme::NoiseMode;
use serde::Deserialize;
use serde_json::Value;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    /// Defaults to no noise.
    #[serde(default = "no_noise")]
    pub diffusion: DiffusionConfig,
    #[serde(default = "default_phi")]
    pub phi: TestFunction,
    #[serde(default)]
    pub scheme: SchemeSection,
    pub sweep: Option<SweepSection>,
    pub check: Option<CheckSection>,
    pub validate: Option<ValidateSection>,
}

fn no_noise() -> DiffusionConfig {
    DiffusionConfig {
        envelope: EnvelopeSchedule::Constant { c: 0.0 },
        shape: ShapeKind::ScalarIdentity,
        base: None,
        state_gain: None,
    }
}

fn default_phi() -> TestFunction {
    TestFunction::ObjectiveResidual
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub h: Option<f64>,
    pub h_grid: Option<Vec<f64>>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    #[serde(rename = "N")]
    pub n_steps: Option<usize>,
    #[serde(rename = "M", default = "one")]
    pub ensemble: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "S", default = "one")]
    pub substeps: usize,
    /// Defaults to the origin.
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub noise_mode: NoiseMode,
}

fn one() -> usize {
    1
}

impl Default for SchemeSection {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("all fields have defaults")
    }
}

impl SchemeSection {
    pub fn x0(&self, dim: usize) -> Result<Vec<f64>> {
        match &self.x0 {
            Some(x) if x.len() != dim => bail!("scheme.x0 has length {}, expected {dim}", x.len()),
            Some(x) => Ok(x.clone()),
            None => Ok(vec![0.0; dim]),
        }
    }

    /// `N` given directly, or `round(T/h)`.
    pub fn steps(&self, h: f64) -> Result<usize> {
        match (self.n_steps, self.horizon) {
            (Some(n), None) => Ok(n),
            (None, Some(t)) if t >= 0.0 => Ok((t / h).round() as usize),
            (Some(_), Some(_)) => bail!("give either scheme.N or scheme.T, not both"),
            _ => bail!("scheme needs N or a non-negative T"),
        }
    }

    pub fn step(&self) -> Result<f64> {
        self.h.context("scheme.h is required")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub target: Target,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Step sizes for the `F^h` convexity check.
    #[serde(default)]
    pub h_grid: Vec<f64>,
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Horizons for the flow and tangent decay checks.
    #[serde(default = "default_horizons")]
    pub horizons: Vec<f64>,
    /// Tangent direction; defaults to the first unit vector.
    pub k: Option<Vec<f64>>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Step, substeps and ensemble of the tangent SDE check.
    #[serde(default = "default_tangent_h")]
    pub tangent_h: f64,
    #[serde(default = "default_tangent_substeps")]
    pub tangent_substeps: usize,
    #[serde(default = "default_tangent_ensemble")]
    pub tangent_ensemble: usize,
    pub contraction: Option<ContractionSection>,
}

impl Default for CheckSection {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("all fields have defaults")
    }
}

fn default_samples() -> usize {
    2000
}
fn default_radius() -> f64 {
    modeq::objective::DEFAULT_CHECK_RADIUS
}
fn default_horizons() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}
fn default_tol() -> f64 {
    1e-10
}
fn default_tangent_h() -> f64 {
    0.1
}
fn default_tangent_substeps() -> usize {
    16
}
fn default_tangent_ensemble() -> usize {
    2000
}

/// Modified-SDE moment decay over a `(T, h)` grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionSection {
    pub horizons: Vec<f64>,
    pub h_grid: Vec<f64>,
    /// `C` is fitted on horizons up to this value.
    pub fit_until: f64,
    #[serde(rename = "M")]
    pub ensemble: usize,
    #[serde(rename = "S")]
    pub substeps: usize,
}

/// Plan documents carry no problem: `{"plan": {...}}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub plan: PlanSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub regimes: Vec<String>,
    pub epsilons: Vec<f64>,
    #[serde(default = "unit_mu")]
    pub mu: f64,
    pub nu: Option<f64>,
    pub alpha: Option<f64>,
    #[serde(default)]
    pub compare: bool,
}

fn unit_mu() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    pub regime: String,
    pub epsilons: Vec<f64>,
    /// Defaults to the problem's `μ`.
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub alpha: Option<f64>,
}

/// Reads a JSON document and applies `key.path=value` overrides. Values
/// parse as JSON when possible and fall back to strings.
pub fn load_value(path: Option<&Path>, overrides: &[String]) -> Result<Value> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Value::Object(Default::default()),
    };
    for o in overrides {
        let (key, raw) = o.split_once('=').with_context(|| format!("override '{o}' is not KEY=VALUE"))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut doc, key, value)?;
    }
    Ok(doc)
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key '{key}' has an empty component");
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let obj = node.as_object_mut().with_context(|| format!("override '{key}' descends into a non-object"))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node.as_object_mut().with_context(|| format!("override '{key}' descends into a non-object"))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn parse(doc: Value) -> Result<ExperimentConfig> {
    serde_json::from_value(doc).context("invalid experiment config")
}
