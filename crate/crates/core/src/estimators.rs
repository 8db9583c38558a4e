//! Covariate-free treatment effect estimators: difference in means,
//! winsorized difference in means, and Huber regression on the assignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linear_models::{default_delta, huber_fit, DeltaMode, DesignMatrix, HuberOptions, LinearError};
use crate::stats;
use crate::tail_model::TailError;

pub use crate::stats::clopper_pearson_ci;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("variance undefined: {0}")]
    VarianceUndefined(String),
    #[error("method `{0}` requires covariates but the dataset has none")]
    MissingCovariates(String),
    #[error("cross-fit plan error: {0}")]
    Plan(String),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Tail(#[from] TailError),
}

/// Pre-experiment covariates, row-major `n x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl Covariates {
    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let k = self.k();
        self.values.iter().skip(j).step_by(k).copied().collect()
    }
}

/// One experiment: responses, 0/1 assignment and optional covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    response: Vec<f64>,
    assignment: Vec<u8>,
    covariates: Option<Covariates>,
}

impl Dataset {
    pub fn new(response: Vec<f64>, assignment: Vec<u8>, covariates: Option<Covariates>) -> Result<Self, EstimateError> {
        let n = response.len();
        if assignment.len() != n {
            return Err(EstimateError::InvalidData(format!(
                "assignment has {} rows, response has {n}",
                assignment.len()
            )));
        }
        if let Some(bad) = assignment.iter().find(|&&t| t > 1) {
            return Err(EstimateError::InvalidData(format!("assignment value {bad} not in {{0, 1}}")));
        }
        if response.iter().any(|y| !y.is_finite()) {
            return Err(EstimateError::InvalidData("response contains non-finite values".into()));
        }
        let treated = assignment.iter().filter(|&&t| t == 1).count();
        if treated == 0 || treated == n {
            return Err(EstimateError::InvalidData("both arms must be non-empty".into()));
        }
        if let Some(cov) = &covariates {
            if cov.values.len() != n * cov.k() {
                return Err(EstimateError::InvalidData(format!(
                    "covariate grid has {} values, expected {n} x {}",
                    cov.values.len(),
                    cov.k()
                )));
            }
            if cov.values.iter().any(|v| !v.is_finite()) {
                return Err(EstimateError::InvalidData("covariates contain non-finite values".into()));
            }
        }
        Ok(Self { response, assignment, covariates })
    }

    /// Dataset built from two arm samples, treatment rows first.
    pub fn from_arms(treatment: &[f64], control: &[f64]) -> Result<Self, EstimateError> {
        let mut response = treatment.to_vec();
        response.extend_from_slice(control);
        let mut assignment = vec![1u8; treatment.len()];
        assignment.resize(treatment.len() + control.len(), 0);
        Self::new(response, assignment, None)
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn assignment(&self) -> &[u8] {
        &self.assignment
    }

    pub fn covariates(&self) -> Option<&Covariates> {
        self.covariates.as_ref()
    }

    pub fn treatment_column(&self) -> Vec<f64> {
        self.assignment.iter().map(|&t| t as f64).collect()
    }

    /// Responses split into `(treatment, control)`.
    pub fn arms(&self) -> (Vec<f64>, Vec<f64>) {
        let mut t = Vec::new();
        let mut c = Vec::new();
        for (&y, &a) in self.response.iter().zip(&self.assignment) {
            if a == 1 {
                t.push(y);
            } else {
                c.push(y);
            }
        }
        (t, c)
    }

    /// Same assignment and covariates with a different response vector.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Self, EstimateError> {
        Self::new(response, self.assignment.clone(), self.covariates.clone())
    }

    pub fn with_covariates(&self, covariates: Option<Covariates>) -> Result<Self, EstimateError> {
        Self::new(self.response.clone(), self.assignment.clone(), covariates)
    }

    pub(crate) fn require_covariates(&self, method: &str) -> Result<&Covariates, EstimateError> {
        self.covariates.as_ref().ok_or_else(|| EstimateError::MissingCovariates(method.to_string()))
    }
}

/// Point estimate with its standard error and two-sided normal test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub method: String,
    pub effect_abs: f64,
    /// `effect_abs` divided by the method's control-arm reference level.
    pub lift: f64,
    pub std_err: f64,
    pub z_stat: f64,
    pub p_value: f64,
    pub details: BTreeMap<String, f64>,
}

impl EstimateResult {
    pub fn new(method: &str, effect_abs: f64, std_err: f64, reference: f64) -> Self {
        let (z_stat, p_value) = stats::z_test(effect_abs, std_err);
        let mut details = BTreeMap::new();
        details.insert("reference".to_string(), reference);
        Self { method: method.to_string(), effect_abs, lift: effect_abs / reference, std_err, z_stat, p_value, details }
    }

    pub fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }
}

/// Welch two-sample comparison of arm means; lift relative to the control mean.
pub(crate) fn welch(method: &str, treatment: &[f64], control: &[f64]) -> Result<EstimateResult, EstimateError> {
    if treatment.len() < 2 || control.len() < 2 {
        return Err(EstimateError::VarianceUndefined(format!(
            "arms have {} and {} observations, need at least 2 each",
            treatment.len(),
            control.len()
        )));
    }
    let (mt, mc) = (stats::mean(treatment), stats::mean(control));
    let se = (stats::sample_variance(treatment) / treatment.len() as f64
        + stats::sample_variance(control) / control.len() as f64)
        .sqrt();
    Ok(EstimateResult::new(method, mt - mc, se, mc))
}

/// Difference in arm means with a Welch standard error.
pub fn naive_estimate(data: &Dataset) -> Result<EstimateResult, EstimateError> {
    let (t, c) = data.arms();
    welch("naive", &t, &c)
}

/// Right-tail capping: `min(y, threshold)` elementwise.
pub fn winsorize(values: &[f64], threshold: f64) -> Vec<f64> {
    values.iter().map(|&y| y.min(threshold)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WinsorMode {
    /// Each arm capped at its own percentile.
    Separate,
    /// One percentile of the pooled response applied to both arms.
    #[default]
    UnifiedUnion,
    /// Mean of the two per-arm percentiles applied to both arms.
    UnifiedAverage,
}

impl WinsorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Separate => "separate",
            Self::UnifiedUnion => "union",
            Self::UnifiedAverage => "average",
        }
    }
}

impl std::str::FromStr for WinsorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "separate" => Ok(Self::Separate),
            "union" | "unified_union" | "unified" => Ok(Self::UnifiedUnion),
            "average" | "unified_average" => Ok(Self::UnifiedAverage),
            other => Err(format!("unknown winsorization mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinsorPolicy {
    pub mode: WinsorMode,
    pub percentile: f64,
}

impl WinsorPolicy {
    pub fn new(mode: WinsorMode, percentile: f64) -> Result<Self, EstimateError> {
        if !(percentile > 0.0 && percentile <= 1.0) {
            return Err(EstimateError::InvalidData(format!("winsorization percentile {percentile} outside (0, 1]")));
        }
        Ok(Self { mode, percentile })
    }
}

/// Capping thresholds `(treatment, control)` under a policy.
pub fn resolve_thresholds(data: &Dataset, policy: &WinsorPolicy) -> (f64, f64) {
    let (t, c) = data.arms();
    resolve_arm_thresholds(&t, &c, policy)
}

fn resolve_arm_thresholds(t: &[f64], c: &[f64], policy: &WinsorPolicy) -> (f64, f64) {
    let q = policy.percentile;
    match policy.mode {
        WinsorMode::Separate => (stats::percentile(t, q), stats::percentile(c, q)),
        WinsorMode::UnifiedUnion => {
            let mut pooled = Vec::with_capacity(t.len() + c.len());
            pooled.extend_from_slice(t);
            pooled.extend_from_slice(c);
            let a = stats::percentile_in_place(&mut pooled, q);
            (a, a)
        }
        WinsorMode::UnifiedAverage => {
            let a = 0.5 * (stats::percentile(t, q) + stats::percentile(c, q));
            (a, a)
        }
    }
}

/// Difference in means after capping each arm at its resolved threshold.
pub fn winsorized_estimate(data: &Dataset, policy: &WinsorPolicy) -> Result<EstimateResult, EstimateError> {
    let (t, c) = data.arms();
    let (a_t, a_c) = resolve_arm_thresholds(&t, &c, policy);
    let res = welch("winsorized", &winsorize(&t, a_t), &winsorize(&c, a_c))?;
    Ok(res
        .with_detail("threshold_treatment", a_t)
        .with_detail("threshold_control", a_c)
        .with_detail("percentile", policy.percentile))
}

/// Huber regression of the response on `(intercept, treatment)`; the effect
/// is the treatment coefficient and lift is relative to the intercept.
pub fn huber_ate(data: &Dataset, delta_mode: DeltaMode) -> Result<EstimateResult, EstimateError> {
    let delta = default_delta(data.response(), delta_mode)?;
    let t = data.treatment_column();
    let design = DesignMatrix::with_intercept(&[("treatment", &t)])?;
    let fit = huber_fit(&design, data.response(), &HuberOptions::new(delta))?;
    let res = EstimateResult::new("huber", fit.coefficients[1], fit.std_err(1), fit.coefficients[0]);
    Ok(res
        .with_detail("delta", delta)
        .with_detail("iterations", fit.iterations as f64)
        .with_detail("converged", f64::from(u8::from(fit.converged))))
}

/// Separate Huber location estimates per arm compared by a two-sample z.
///
/// Each arm gets its own tuning constant. This design does not control the
/// false positive rate on heavy-tailed data; it is kept for comparison with
/// [`huber_ate`].
pub fn huber_per_arm(data: &Dataset, delta_mode: DeltaMode) -> Result<EstimateResult, EstimateError> {
    let (t, c) = data.arms();
    let (loc_t, se_t, d_t) = huber_location(&t, delta_mode)?;
    let (loc_c, se_c, d_c) = huber_location(&c, delta_mode)?;
    let se = (se_t * se_t + se_c * se_c).sqrt();
    Ok(EstimateResult::new("huber_per_arm", loc_t - loc_c, se, loc_c)
        .with_detail("delta_treatment", d_t)
        .with_detail("delta_control", d_c))
}

fn huber_location(y: &[f64], delta_mode: DeltaMode) -> Result<(f64, f64, f64), EstimateError> {
    let delta = default_delta(y, delta_mode)?;
    let design = DesignMatrix::intercept_only(y.len())?;
    let fit = huber_fit(&design, y, &HuberOptions::new(delta))?;
    Ok((fit.coefficients[0], fit.std_err(0), delta))
}
