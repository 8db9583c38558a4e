use serde::{Deserialize, Serialize};

use super::LinearError;
use crate::stats;

/// Huber tuning constant for 95% asymptotic efficiency under normal errors.
pub const HUBER_TUNING: f64 = 1.345;
/// MAD-to-sigma factor under normality.
const MAD_TO_SD: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// 1.345 × sample standard deviation.
    #[default]
    RawSd,
    /// 1.345 × 1.4826 × median absolute deviation.
    RobustScale,
}

impl std::str::FromStr for DeltaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw_sd" => Ok(Self::RawSd),
            "robust_scale" => Ok(Self::RobustScale),
            other => Err(format!("unknown delta mode `{other}` (raw_sd | robust_scale)")),
        }
    }
}

impl DeltaMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::RawSd => "raw_sd",
            Self::RobustScale => "robust_scale",
        }
    }
}

/// Default Huber tuning constant computed from the pooled response.
pub fn default_delta(response: &[f64], mode: DeltaMode) -> Result<f64, LinearError> {
    let first = response.first().copied();
    if response.iter().any(|y| !y.is_finite()) {
        return Err(LinearError::NonFinite("response"));
    }
    if first.is_none_or(|f| response.iter().all(|&y| y == f)) {
        return Err(LinearError::DegenerateScale("response needs at least two distinct values".into()));
    }
    let delta = match mode {
        DeltaMode::RawSd => HUBER_TUNING * stats::sample_sd(response),
        DeltaMode::RobustScale => HUBER_TUNING * MAD_TO_SD * stats::mad(response),
    };
    if delta > 0.0 && delta.is_finite() {
        Ok(delta)
    } else {
        Err(LinearError::DegenerateScale(format!("{} scale of the response is zero", mode.as_str())))
    }
}
