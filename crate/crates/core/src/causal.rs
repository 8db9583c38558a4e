//! Covariate-assisted estimators: regression adjustment (post-stratification),
//! inverse propensity weighting, augmented IPW (doubly robust) and
//! double/debiased learning on cross-fitted residuals.
//!
//! Every method normalizes its lift by the control-arm level of its own
//! outcome model: the mean fitted value over control rows with the treatment
//! switched off (or the weighted control mean for propensity weighting).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::estimators::{Dataset, EstimateError, EstimateResult};
use crate::linear_models::{
    default_delta, huber_fit, logistic_fit, logistic_predict, ols_fit, DeltaMode, DesignMatrix, HuberOptions,
    LinearFit, LogisticOptions,
};
use crate::stats;

/// Default clipping of fitted propensities to `[clip, 1 - clip]`.
pub const DEFAULT_CLIP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Squared,
    Huber,
}

impl Loss {
    fn fit(&self, design: &DesignMatrix, response: &[f64]) -> Result<(LinearFit, f64), EstimateError> {
        match self {
            Loss::Squared => Ok((ols_fit(design, response)?, f64::NAN)),
            Loss::Huber => {
                let delta = default_delta(response, DeltaMode::RawSd)?;
                Ok((huber_fit(design, response, &HuberOptions::new(delta))?, delta))
            }
        }
    }
}

/// Drops covariate columns that are constant over the rows (collinear with
/// the intercept). Returns the kept column indices.
fn informative_columns(data: &Dataset) -> Vec<usize> {
    let Some(cov) = data.covariates() else {
        return Vec::new();
    };
    let k = cov.k();
    (0..k)
        .filter(|&j| {
            let first = cov.values[j];
            cov.values.iter().skip(j).step_by(k).any(|&v| v != first)
        })
        .collect()
}

/// `(intercept[, treatment], informative covariates)` for the given rows.
fn design_for(
    data: &Dataset,
    method: &str,
    include_treatment: bool,
    rows: Option<&[usize]>,
) -> Result<DesignMatrix, EstimateError> {
    let cov = data.require_covariates(method)?;
    let keep = informative_columns(data);
    let k = cov.k();
    let width = 1 + usize::from(include_treatment) + keep.len();
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..data.len()).collect();
            &all
        }
    };
    let mut values = Vec::with_capacity(rows.len() * width);
    for &i in rows {
        values.push(1.0);
        if include_treatment {
            values.push(f64::from(data.assignment()[i]));
        }
        values.extend(keep.iter().map(|&j| cov.values[i * k + j]));
    }
    let mut labels = vec!["intercept".to_string()];
    if include_treatment {
        labels.push("treatment".into());
    }
    labels.extend(keep.iter().map(|&j| cov.names[j].clone()));
    Ok(DesignMatrix::from_row_major(rows.len(), width, values, labels)?)
}

fn dropped_columns(data: &Dataset) -> f64 {
    data.covariates().map_or(0, |c| c.k() - informative_columns(data).len()) as f64
}

fn control_mean_of(values: &[f64], assignment: &[u8]) -> f64 {
    let (sum, count) =
        values.iter().zip(assignment).filter(|(_, &a)| a == 0).fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    sum / count as f64
}

/// Regression of the response on `(intercept, treatment, covariates)`.
///
/// Covariate columns that are constant are dropped before fitting; any other
/// rank deficiency is an error.
pub fn post_stratification(data: &Dataset, loss: Loss) -> Result<EstimateResult, EstimateError> {
    let name = match loss {
        Loss::Squared => "post_strat",
        Loss::Huber => "post_strat_huber",
    };
    let mut design = design_for(data, name, true, None)?;
    let (fit, delta) = loss.fit(&design, data.response())?;
    design.set_column(1, 0.0);
    let reference = control_mean_of(&fit.predict(&design), data.assignment());
    let mut res = EstimateResult::new(name, fit.coefficients[1], fit.std_err(1), reference)
        .with_detail("dropped_covariates", dropped_columns(data))
        .with_detail("iterations", fit.iterations as f64);
    if loss == Loss::Huber {
        res = res.with_detail("delta", delta);
    }
    Ok(res)
}

fn check_clip(clip: f64) -> Result<(), EstimateError> {
    if (0.0..0.5).contains(&clip) {
        Ok(())
    } else {
        Err(EstimateError::InvalidData(format!("propensity clip {clip} outside [0, 0.5)")))
    }
}

/// Logistic propensity `g(X)` on `(intercept, covariates)`, clamped to
/// `[clip, 1 - clip]`.
pub fn fit_propensity(data: &Dataset, clip: f64) -> Result<Vec<f64>, EstimateError> {
    check_clip(clip)?;
    let design = design_for(data, "propensity", false, None)?;
    let fit = logistic_fit(&design, &data.treatment_column(), &LogisticOptions::default())?;
    Ok(logistic_predict(&fit, &design).into_iter().map(|g| g.clamp(clip, 1.0 - clip)).collect())
}

/// Inverse propensity weight `T/g + (1 - T)/(1 - g)`.
pub fn ipw_weight(treated: bool, g: f64) -> f64 {
    if treated {
        1.0 / g
    } else {
        1.0 / (1.0 - g)
    }
}

/// Propensity-weighted difference in arm means with fitted propensities.
pub fn psm_estimate(data: &Dataset, clip: f64) -> Result<EstimateResult, EstimateError> {
    data.require_covariates("psm")?;
    let g = fit_propensity(data, clip)?;
    psm_with_propensity(data, &g)
}

/// Propensity-weighted difference in arm means for given propensities.
pub fn psm_with_propensity(data: &Dataset, g: &[f64]) -> Result<EstimateResult, EstimateError> {
    if g.len() != data.len() {
        return Err(EstimateError::InvalidData("propensity length mismatch".into()));
    }
    let mut arms = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    let (mut w_min, mut w_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for ((&y, &t), &gi) in data.response().iter().zip(data.assignment()).zip(g) {
        let w = ipw_weight(t == 1, gi);
        w_min = w_min.min(w);
        w_max = w_max.max(w);
        arms[t as usize].0.push(y);
        arms[t as usize].1.push(w);
    }
    let (m_c, v_c) = weighted_mean_var(&arms[0].0, &arms[0].1)?;
    let (m_t, v_t) = weighted_mean_var(&arms[1].0, &arms[1].1)?;
    Ok(EstimateResult::new("psm", m_t - m_c, (v_t + v_c).sqrt(), m_c)
        .with_detail("weight_min", w_min)
        .with_detail("weight_max", w_max))
}

/// Normalized weighted mean and the variance of that mean,
/// `Σ w²(y - m)² / (Σ w)²`.
fn weighted_mean_var(y: &[f64], w: &[f64]) -> Result<(f64, f64), EstimateError> {
    if y.len() < 2 {
        return Err(EstimateError::VarianceUndefined("arm with fewer than 2 rows".into()));
    }
    let sw: f64 = w.iter().sum();
    let m = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let v = y.iter().zip(w).map(|(y, w)| (w * (y - m)).powi(2)).sum::<f64>() / (sw * sw);
    Ok((m, v))
}

/// Augmented inverse propensity weighting with a joint linear outcome model
/// and a logistic propensity model.
pub fn doubly_robust(data: &Dataset, clip: f64) -> Result<EstimateResult, EstimateError> {
    let (tau1, tau0) = outcome_predictions(data)?;
    let g = fit_propensity(data, clip)?;
    aipw(data, &tau1, &tau0, &g)
}

/// `τ(1, X)` and `τ(0, X)` from one OLS fit on `(intercept, T, X)` with the
/// treatment column toggled.
pub fn outcome_predictions(data: &Dataset) -> Result<(Vec<f64>, Vec<f64>), EstimateError> {
    let mut design = design_for(data, "dr", true, None)?;
    let fit = ols_fit(&design, data.response())?;
    design.set_column(1, 1.0);
    let tau1 = fit.predict(&design);
    design.set_column(1, 0.0);
    let tau0 = fit.predict(&design);
    Ok((tau1, tau0))
}

/// AIPW combination for given outcome predictions `τ(1, X)`, `τ(0, X)` and
/// propensities `g(X)`:
///
/// `mean[τ1 - τ0] + mean[T (Y - τ1)/g - (1 - T)(Y - τ0)/(1 - g)]`,
///
/// with standard error `sd(ψ_i) / sqrt(n)` over the per-row contributions.
pub fn aipw(data: &Dataset, tau1: &[f64], tau0: &[f64], g: &[f64]) -> Result<EstimateResult, EstimateError> {
    let n = data.len();
    if tau1.len() != n || tau0.len() != n || g.len() != n {
        return Err(EstimateError::InvalidData("outcome/propensity length mismatch".into()));
    }
    let psi: Vec<f64> = (0..n)
        .map(|i| {
            let y = data.response()[i];
            let base = tau1[i] - tau0[i];
            if data.assignment()[i] == 1 {
                base + (y - tau1[i]) / g[i]
            } else {
                base - (y - tau0[i]) / (1.0 - g[i])
            }
        })
        .collect();
    let effect = stats::mean(&psi);
    let se = stats::sample_sd(&psi) / (n as f64).sqrt();
    let reference = control_mean_of(tau0, data.assignment());
    Ok(EstimateResult::new("dr", effect, se, reference))
}

/// Stratified K-fold partition of the rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossFitPlan {
    pub k_folds: usize,
    pub fold_assignment: Vec<usize>,
    pub seed: u64,
}

impl CrossFitPlan {
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        self.fold_assignment.iter().enumerate().filter_map(|(i, &f)| (f == fold).then_some(i)).collect()
    }

    fn complement_rows(&self, fold: usize) -> Vec<usize> {
        self.fold_assignment.iter().enumerate().filter_map(|(i, &f)| (f != fold).then_some(i)).collect()
    }

    /// Checks the plan against a dataset: matching length, every fold
    /// non-empty with both arms present.
    pub fn validate(&self, data: &Dataset) -> Result<(), EstimateError> {
        if self.k_folds < 2 {
            return Err(EstimateError::Plan(format!("k_folds = {} < 2", self.k_folds)));
        }
        if self.fold_assignment.len() != data.len() {
            return Err(EstimateError::Plan(format!(
                "plan covers {} rows, dataset has {}",
                self.fold_assignment.len(),
                data.len()
            )));
        }
        let mut counts = vec![[0usize; 2]; self.k_folds];
        for (&f, &t) in self.fold_assignment.iter().zip(data.assignment()) {
            if f >= self.k_folds {
                return Err(EstimateError::Plan(format!("fold index {f} >= k_folds")));
            }
            counts[f][t as usize] += 1;
        }
        if let Some(f) = counts.iter().position(|c| c[0] == 0 || c[1] == 0) {
            return Err(EstimateError::Plan(format!("fold {f} does not contain both arms")));
        }
        Ok(())
    }
}

/// Random partition stratified by arm: each arm is shuffled and dealt
/// round-robin, the control arm continuing where the treatment arm stopped,
/// so fold sizes differ by at most one.
pub fn make_crossfit_plan(
    n: usize,
    assignment: &[u8],
    k_folds: usize,
    seed: u64,
) -> Result<CrossFitPlan, EstimateError> {
    if k_folds < 2 {
        return Err(EstimateError::Plan(format!("k_folds = {k_folds} < 2")));
    }
    if assignment.len() != n {
        return Err(EstimateError::Plan(format!("assignment has {} rows, n = {n}", assignment.len())));
    }
    if n < 2 * k_folds {
        return Err(EstimateError::Plan(format!("n = {n} is below 2 x k_folds = {}", 2 * k_folds)));
    }
    let mut treated: Vec<usize> = (0..n).filter(|&i| assignment[i] == 1).collect();
    let mut control: Vec<usize> = (0..n).filter(|&i| assignment[i] == 0).collect();
    if treated.len() < k_folds || control.len() < k_folds {
        return Err(EstimateError::Plan(format!(
            "arm sizes ({}, {}) too small to stratify into {k_folds} folds",
            treated.len(),
            control.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    treated.shuffle(&mut rng);
    control.shuffle(&mut rng);
    let mut fold_assignment = vec![0usize; n];
    for (pos, &i) in treated.iter().chain(control.iter()).enumerate() {
        fold_assignment[i] = pos % k_folds;
    }
    Ok(CrossFitPlan { k_folds, fold_assignment, seed })
}

/// Cross-fitted residuals of the outcome and assignment models.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPair {
    pub eps_y: Vec<f64>,
    pub eps_t: Vec<f64>,
    /// Cross-fitted outcome predictions `f(X_i)`.
    pub outcome_pred: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DmlAggregation {
    /// One final regression on residuals pooled over all folds.
    #[default]
    Pooled,
    /// One final regression per fold, slopes averaged.
    PerFoldAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmlOptions {
    pub final_loss: Loss,
    pub clip: f64,
    pub aggregation: DmlAggregation,
    /// Replace the fitted propensity with this constant.
    pub fixed_propensity: Option<f64>,
}

impl Default for DmlOptions {
    fn default() -> Self {
        Self {
            final_loss: Loss::Squared,
            clip: DEFAULT_CLIP,
            aggregation: DmlAggregation::Pooled,
            fixed_propensity: None,
        }
    }
}

/// Per-fold summaries recorded while cross-fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSummary {
    pub rows: usize,
    pub outcome_rmse: f64,
    pub propensity_mean: f64,
}

/// Trains the outcome model (least squares of Y on covariates) and the
/// propensity model on the complement of each fold and predicts on the fold.
/// Residuals are written to the rows' own slots, so the result does not
/// depend on fold order.
pub fn dml_residuals(
    data: &Dataset,
    plan: &CrossFitPlan,
    clip: f64,
    fixed_propensity: Option<f64>,
) -> Result<(ResidualPair, Vec<FoldSummary>), EstimateError> {
    check_clip(clip)?;
    plan.validate(data)?;
    data.require_covariates("dml")?;
    let n = data.len();
    let t = data.treatment_column();
    let mut eps_y = vec![0.0; n];
    let mut eps_t = vec![0.0; n];
    let mut outcome_pred = vec![0.0; n];
    let mut summaries = Vec::with_capacity(plan.k_folds);

    for fold in 0..plan.k_folds {
        let train = plan.complement_rows(fold);
        let test = plan.fold_rows(fold);
        let train_x = design_for(data, "dml", false, Some(&train))?;
        let test_x = design_for(data, "dml", false, Some(&test))?;

        let train_y: Vec<f64> = train.iter().map(|&i| data.response()[i]).collect();
        let outcome = ols_fit(&train_x, &train_y)?;
        let f_test = outcome.predict(&test_x);

        let g_test = match fixed_propensity {
            Some(g) => vec![g; test.len()],
            None => {
                let train_t: Vec<f64> = train.iter().map(|&i| t[i]).collect();
                let prop = logistic_fit(&train_x, &train_t, &LogisticOptions::default())?;
                logistic_predict(&prop, &test_x)
            }
        };

        let mut sq = 0.0;
        let mut g_sum = 0.0;
        for (pos, &i) in test.iter().enumerate() {
            let g = g_test[pos].clamp(clip, 1.0 - clip);
            outcome_pred[i] = f_test[pos];
            eps_y[i] = data.response()[i] - f_test[pos];
            eps_t[i] = t[i] - g;
            sq += eps_y[i] * eps_y[i];
            g_sum += g;
        }
        summaries.push(FoldSummary {
            rows: test.len(),
            outcome_rmse: (sq / test.len() as f64).sqrt(),
            propensity_mean: g_sum / test.len() as f64,
        });
    }
    Ok((ResidualPair { eps_y, eps_t, outcome_pred }, summaries))
}

/// Double/debiased estimate: no-intercept regression of outcome residuals on
/// assignment residuals, with squared or Huber loss in the final stage.
pub fn dml_estimate(data: &Dataset, plan: &CrossFitPlan, opts: &DmlOptions) -> Result<EstimateResult, EstimateError> {
    let name = match opts.final_loss {
        Loss::Squared => "dml",
        Loss::Huber => "dml_huber",
    };
    let (res, folds) = dml_residuals(data, plan, opts.clip, opts.fixed_propensity)?;

    let (effect, se, delta) = match opts.aggregation {
        DmlAggregation::Pooled => final_stage(&res.eps_y, &res.eps_t, opts.final_loss)?,
        DmlAggregation::PerFoldAverage => {
            let mut slope_sum = 0.0;
            let mut var_sum = 0.0;
            for fold in 0..plan.k_folds {
                let rows = plan.fold_rows(fold);
                let ey: Vec<f64> = rows.iter().map(|&i| res.eps_y[i]).collect();
                let et: Vec<f64> = rows.iter().map(|&i| res.eps_t[i]).collect();
                let (b, s, _) = final_stage(&ey, &et, opts.final_loss)?;
                slope_sum += b;
                var_sum += s * s;
            }
            let k = plan.k_folds as f64;
            (slope_sum / k, var_sum.sqrt() / k, f64::NAN)
        }
    };

    let reference = control_mean_of(&res.outcome_pred, data.assignment());
    let mut out = EstimateResult::new(name, effect, se, reference)
        .with_detail("k_folds", plan.k_folds as f64)
        .with_detail("eps_t_mean", stats::mean(&res.eps_t));
    if !delta.is_nan() {
        out = out.with_detail("delta", delta);
    }
    for (j, f) in folds.iter().enumerate() {
        out = out
            .with_detail(&format!("fold{j}_outcome_rmse"), f.outcome_rmse)
            .with_detail(&format!("fold{j}_propensity_mean"), f.propensity_mean);
    }
    Ok(out)
}

fn final_stage(eps_y: &[f64], eps_t: &[f64], loss: Loss) -> Result<(f64, f64, f64), EstimateError> {
    let design = DesignMatrix::from_columns(&[("eps_t", eps_t)])?;
    let (fit, delta) = loss.fit(&design, eps_y)?;
    Ok((fit.coefficients[0], fit.std_err(0), delta))
}
