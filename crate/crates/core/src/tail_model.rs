//! Three-piece response distribution: a point mass at zero, a truncated
//! exponential torso on `(0, C)` and a type I Pareto tail on `[C, ∞)`.
//!
//! The density is
//!
//! ```text
//! P(Y) = p_nonconv                                  Y = 0
//!        p_torso * λ/(1 - e^{-λC}) * e^{-λY}        Y in (0, C)
//!        p_tail  * α C^α / Y^{α+1}                  Y in [C, ∞)
//! ```

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower end of the rate bracket used by every root search on `lambda`.
pub const LAMBDA_MIN: f64 = 1e-12;
/// Upper end of the rate bracket used by every root search on `lambda`.
pub const LAMBDA_MAX: f64 = 1e6;

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TailError {
    #[error("invalid mixture parameters: {0}")]
    InvalidParams(String),
    #[error("cannot fit mixture: {0}")]
    Fit(String),
    #[error("root bracket [{lo:e}, {hi:e}] does not contain a solution for target {target}")]
    Bracket { lo: f64, hi: f64, target: f64 },
    #[error("mixture mean is infinite for alpha = {0} (requires alpha > 1)")]
    InfiniteMean(f64),
    #[error("target mean {target} is unattainable by varying lambda; attainable interval is ({lo}, {hi})")]
    Unattainable { target: f64, lo: f64, hi: f64 },
    #[error("quantile level {0} outside (0, 1)")]
    Domain(f64),
}

/// Parameters of the zero-inflated exponential/Pareto mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub p_nonconv: f64,
    pub p_torso: f64,
    pub p_tail: f64,
    pub lambda: f64,
    pub cutoff_c: f64,
    pub alpha: f64,
}

impl MixtureParams {
    pub fn new(
        p_nonconv: f64,
        p_torso: f64,
        p_tail: f64,
        lambda: f64,
        cutoff_c: f64,
        alpha: f64,
    ) -> Result<Self, TailError> {
        let params = Self { p_nonconv, p_torso, p_tail, lambda, cutoff_c, alpha };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), TailError> {
        for (name, p) in [("p_nonconv", self.p_nonconv), ("p_torso", self.p_torso), ("p_tail", self.p_tail)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TailError::InvalidParams(format!("{name} = {p} outside [0, 1]")));
            }
        }
        let sum = self.p_nonconv + self.p_torso + self.p_tail;
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(TailError::InvalidParams(format!("segment probabilities sum to {sum}, expected 1")));
        }
        for (name, v) in [("lambda", self.lambda), ("cutoff_c", self.cutoff_c), ("alpha", self.alpha)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TailError::InvalidParams(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TailError> {
        let params: Self =
            serde_json::from_str(text).map_err(|e| TailError::InvalidParams(format!("bad JSON: {e}")))?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    /// Mean of the truncated exponential torso, `1/λ - C/(e^{λC} - 1)`.
    pub fn torso_mean(&self) -> f64 {
        truncated_exp_mean(self.lambda, self.cutoff_c)
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, y: f64) -> f64 {
        if y < 0.0 {
            return 0.0;
        }
        if y < self.cutoff_c {
            let within =
                if y == 0.0 { 0.0 } else { (-self.lambda * y).exp_m1() / (-self.lambda * self.cutoff_c).exp_m1() };
            return self.p_nonconv + self.p_torso * within;
        }
        self.p_nonconv + self.p_torso + self.p_tail * (1.0 - (self.cutoff_c / y).powf(self.alpha))
    }

    /// Density with respect to Lebesgue measure on `(0, ∞)`; the atom at zero
    /// is excluded.
    pub fn density(&self, y: f64) -> f64 {
        if y <= 0.0 {
            0.0
        } else if y < self.cutoff_c {
            let norm = -self.lambda / (-self.lambda * self.cutoff_c).exp_m1();
            self.p_torso * norm * (-self.lambda * y).exp()
        } else {
            self.p_tail * self.alpha * self.cutoff_c.powf(self.alpha) / y.powf(self.alpha + 1.0)
        }
    }

    fn torso_inverse(&self, u: f64) -> f64 {
        // -ln(1 - u (1 - e^{-λC})) / λ
        let mass = -(-self.lambda * self.cutoff_c).exp_m1();
        -(-u * mass).ln_1p() / self.lambda
    }

    fn tail_inverse(&self, survival: f64) -> f64 {
        self.cutoff_c * survival.powf(-1.0 / self.alpha)
    }
}

/// `1/λ - C/(e^{λC} - 1)`, evaluated without cancellation for small `λC`.
pub fn truncated_exp_mean(lambda: f64, cutoff_c: f64) -> f64 {
    let x = lambda * cutoff_c;
    if x < 1e-4 {
        // C * (1/2 - x/12 + x^3/720)
        cutoff_c * (0.5 - x / 12.0 + x * x * x / 720.0)
    } else {
        1.0 / lambda - cutoff_c / x.exp_m1()
    }
}

/// Solves `truncated_exp_mean(λ, C) = target` for λ by bisection in log space.
///
/// The torso mean decreases monotonically from `C/2` (λ → 0) to `0` (λ → ∞).
pub fn solve_torso_rate(target: f64, cutoff_c: f64, rel_tol: f64) -> Result<f64, TailError> {
    let (mut lo, mut hi) = (LAMBDA_MIN, LAMBDA_MAX);
    let f = |lam: f64| truncated_exp_mean(lam, cutoff_c) - target;
    let (f_lo, f_hi) = (f(lo), f(hi));
    if !(f_lo >= 0.0 && f_hi <= 0.0) || !target.is_finite() {
        return Err(TailError::Bracket { lo, hi, target });
    }
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 <= rel_tol {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Result of [`fit_mixture`]: the parameters plus the segment bookkeeping
/// the fit was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub params: MixtureParams,
    pub n_zero: usize,
    pub n_torso: usize,
    pub n_tail: usize,
}

/// Maximum-likelihood fit of the mixture for a user-chosen cutoff.
///
/// Segment probabilities are empirical fractions, `alpha` is the Hill
/// estimate over observations at or above the cutoff, and `lambda` solves the
/// truncated-exponential score equation for the torso sample mean.
pub fn fit_mixture(sample: &[f64], cutoff_c: f64) -> Result<MixtureFit, TailError> {
    if sample.is_empty() {
        return Err(TailError::Fit("sample is empty".into()));
    }
    if !(cutoff_c.is_finite() && cutoff_c > 0.0) {
        return Err(TailError::Fit(format!("cutoff_c = {cutoff_c} must be positive")));
    }
    if let Some(bad) = sample.iter().find(|y| !(y.is_finite() && **y >= 0.0)) {
        return Err(TailError::Fit(format!("sample contains invalid value {bad}")));
    }

    let mut n_zero = 0usize;
    let mut torso_sum = 0.0;
    let mut n_torso = 0usize;
    let mut log_excess = 0.0;
    let mut n_tail = 0usize;
    for &y in sample {
        if y == 0.0 {
            n_zero += 1;
        } else if y < cutoff_c {
            n_torso += 1;
            torso_sum += y;
        } else {
            n_tail += 1;
            log_excess += (y / cutoff_c).ln();
        }
    }
    if n_torso < 2 {
        return Err(TailError::Fit(format!(
            "torso segment (0, {cutoff_c}) has {n_torso} observations, need at least 2"
        )));
    }
    if n_tail < 2 {
        return Err(TailError::Fit(format!(
            "tail segment [{cutoff_c}, inf) has {n_tail} observations, need at least 2"
        )));
    }
    if log_excess <= 0.0 {
        return Err(TailError::Fit("tail observations all equal the cutoff".into()));
    }

    let n = sample.len() as f64;
    let p_nonconv = n_zero as f64 / n;
    let p_tail = n_tail as f64 / n;
    let p_torso = 1.0 - p_nonconv - p_tail;
    let alpha = hill_estimate(n_tail, log_excess);
    let lambda = solve_torso_rate(torso_sum / n_torso as f64, cutoff_c, 1e-10)?;

    let params = MixtureParams::new(p_nonconv, p_torso, p_tail, lambda, cutoff_c, alpha)?;
    Ok(MixtureFit { params, n_zero, n_torso, n_tail })
}

/// Hill estimator `k / Σ ln(y_i / C)` over the `k` exceedances.
pub fn hill_estimate(k: usize, sum_log_excess: f64) -> f64 {
    k as f64 / sum_log_excess
}

/// Mixture mean; finite only for `alpha > 1`.
pub fn mixture_mean(params: &MixtureParams) -> Result<f64, TailError> {
    if params.alpha <= 1.0 {
        return Err(TailError::InfiniteMean(params.alpha));
    }
    let tail = params.alpha * params.cutoff_c / (params.alpha - 1.0);
    Ok(params.p_torso * params.torso_mean() + params.p_tail * tail)
}

/// Draws `n` i.i.d. values. Identical `(params, n, seed)` give identical output.
pub fn sample_mixture(params: &MixtureParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(params, n, &mut rng)
}

pub(crate) fn sample_with<R: Rng>(params: &MixtureParams, n: usize, rng: &mut R) -> Vec<f64> {
    let torso_edge = params.p_nonconv + params.p_torso;
    (0..n)
        .map(|_| {
            let pick: f64 = rng.random();
            // (0, 1] so the Pareto inverse stays finite
            let u = 1.0 - rng.random::<f64>();
            if pick < params.p_nonconv {
                0.0
            } else if pick < torso_edge {
                params.torso_inverse(u)
            } else {
                params.tail_inverse(u)
            }
        })
        .collect()
}

/// Returns a copy of `params` whose torso rate is re-solved so the mixture
/// mean is `(1 + target_lift)` times the original.
pub fn inject_lift(params: &MixtureParams, target_lift: f64) -> Result<MixtureParams, TailError> {
    if target_lift == 0.0 {
        return Ok(*params);
    }
    let base = mixture_mean(params)?;
    let target = (1.0 + target_lift) * base;
    let tail_part = params.p_tail * params.alpha * params.cutoff_c / (params.alpha - 1.0);
    let lo = tail_part + params.p_torso * truncated_exp_mean(LAMBDA_MAX, params.cutoff_c);
    let hi = tail_part + params.p_torso * truncated_exp_mean(LAMBDA_MIN, params.cutoff_c);
    if params.p_torso == 0.0 || !(target > lo && target < hi) {
        return Err(TailError::Unattainable { target, lo, hi });
    }
    let torso_target = (target - tail_part) / params.p_torso;
    let lambda = solve_torso_rate(torso_target, params.cutoff_c, 1e-15)?;
    Ok(MixtureParams { lambda, ..*params })
}

/// Piecewise inverse CDF.
pub fn mixture_quantile(params: &MixtureParams, q: f64) -> Result<f64, TailError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(TailError::Domain(q));
    }
    if q <= params.p_nonconv {
        return Ok(0.0);
    }
    let torso_edge = params.p_nonconv + params.p_torso;
    if q <= torso_edge {
        let u = ((q - params.p_nonconv) / params.p_torso).min(1.0);
        return Ok(params.torso_inverse(u));
    }
    let survival = ((1.0 - q) / params.p_tail).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(params.tail_inverse(survival))
}

/// Largest absolute gap between empirical and model quantiles of one segment,
/// over the levels 1%, 2%, ..., 99% of that segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentQq {
    pub max_abs_gap: f64,
    pub at_level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QqSummary {
    pub torso: SegmentQq,
    pub tail: SegmentQq,
}

pub fn qq_summary(sample: &[f64], params: &MixtureParams) -> QqSummary {
    let mut torso: Vec<f64> = sample.iter().copied().filter(|&y| y > 0.0 && y < params.cutoff_c).collect();
    let mut tail: Vec<f64> = sample.iter().copied().filter(|&y| y >= params.cutoff_c).collect();
    torso.sort_by(f64::total_cmp);
    tail.sort_by(f64::total_cmp);

    let torso_qq = segment_gap(&torso, |u| params.torso_inverse(u));
    let tail_qq = segment_gap(&tail, |u| params.tail_inverse(1.0 - u));
    QqSummary { torso: torso_qq, tail: tail_qq }
}

fn segment_gap(sorted: &[f64], model: impl Fn(f64) -> f64) -> SegmentQq {
    let mut best = SegmentQq { max_abs_gap: 0.0, at_level: f64::NAN };
    if sorted.is_empty() {
        return best;
    }
    for i in 1..100 {
        let level = i as f64 / 100.0;
        let gap = (crate::stats::quantile_sorted(sorted, level) - model(level)).abs();
        if gap > best.max_abs_gap || best.at_level.is_nan() {
            best = SegmentQq { max_abs_gap: gap, at_level: level };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn heavy() -> MixtureParams {
        MixtureParams::new(0.6, 0.38, 0.02, 1.0 / 40.0, 200.0, 1.5).unwrap()
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(MixtureParams::new(0.5, 0.5, 0.1, 1.0, 1.0, 2.0).is_err());
        assert!(MixtureParams::new(-0.1, 1.0, 0.1, 1.0, 1.0, 2.0).is_err());
        assert!(MixtureParams::new(0.0, 1.0, 0.0, 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn hill_by_hand() {
        let c = 2.0;
        let e = std::f64::consts::E;
        let sample = [0.0, 0.0, 1.0, e * c, e * c, e * c];
        let fit = fit_mixture(&sample, c);
        // only one torso point: deficient segment
        assert!(matches!(fit, Err(TailError::Fit(ref m)) if m.contains("torso")));

        let sample = [0.0, 0.0, 0.5, 0.7, e * c, e * c, e * c];
        let fit = fit_mixture(&sample, c).unwrap();
        assert_relative_eq!(fit.params.alpha, 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.params.p_nonconv, 2.0 / 7.0);
        assert_relative_eq!(fit.params.p_tail, 3.0 / 7.0);
    }

    #[test]
    fn tail_deficiency_named() {
        let err = fit_mixture(&[0.0, 1.0, 1.2, 5.0], 2.0).unwrap_err();
        assert!(err.to_string().contains("tail"));
        assert!(fit_mixture(&[], 2.0).is_err());
    }

    #[test]
    fn small_rate_series_matches_direct_formula() {
        let c = 3.0;
        for lam in [1e-3f64, 2e-4, 1.1e-4] {
            let direct = 1.0 / lam - c / (lam * c).exp_m1();
            assert_relative_eq!(truncated_exp_mean(lam, c), direct, max_relative = 1e-9);
        }
    }

    #[test]
    fn torso_rate_bracket_failure_reports_endpoints() {
        // mean at or above C/2 is impossible for a decreasing density
        let err = solve_torso_rate(1.2, 2.0, 1e-10).unwrap_err();
        match err {
            TailError::Bracket { lo, hi, .. } => {
                assert_eq!(lo, LAMBDA_MIN);
                assert_eq!(hi, LAMBDA_MAX);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mean_trivial_cases() {
        let p = MixtureParams::new(0.0, 0.0, 1.0, 1.0, 100.0, 2.0).unwrap();
        assert_relative_eq!(mixture_mean(&p).unwrap(), 200.0);
        let p = MixtureParams::new(0.0, 1.0, 0.0, 1.0, 1e9, 2.0).unwrap();
        assert!((mixture_mean(&p).unwrap() - 1.0).abs() < 1e-6);
        let p = MixtureParams::new(0.0, 0.5, 0.5, 1.0, 10.0, 1.0).unwrap();
        assert_eq!(mixture_mean(&p), Err(TailError::InfiniteMean(1.0)));
    }

    #[test]
    fn sampling_is_deterministic_and_degenerate_case() {
        let p = heavy();
        assert_eq!(sample_mixture(&p, 5, 42), sample_mixture(&p, 5, 42));
        assert_ne!(sample_mixture(&p, 5, 42), sample_mixture(&p, 5, 43));
        let zeros = MixtureParams::new(1.0, 0.0, 0.0, 1.0, 1.0, 2.0).unwrap();
        assert!(sample_mixture(&zeros, 100, 1).iter().all(|&y| y == 0.0));
    }

    #[test]
    fn tail_fraction_concentrates() {
        let p = heavy();
        let n = 1_000_000;
        let ys = sample_mixture(&p, n, 7);
        let frac = ys.iter().filter(|&&y| y >= p.cutoff_c).count() as f64 / n as f64;
        let band = 3.0 * (p.p_tail * (1.0 - p.p_tail) / n as f64).sqrt();
        assert!((frac - p.p_tail).abs() < band, "{frac}");
    }

    #[test]
    fn lift_injection() {
        let p = heavy();
        assert_eq!(inject_lift(&p, 0.0).unwrap(), p);
        let lifted = inject_lift(&p, 0.015).unwrap();
        let ratio = mixture_mean(&lifted).unwrap() / mixture_mean(&p).unwrap();
        assert_relative_eq!(ratio, 1.015, max_relative = 1e-9);
        assert_eq!(lifted.alpha, p.alpha);
        assert_eq!(lifted.p_tail, p.p_tail);
        assert!(lifted.lambda < p.lambda);
        assert!(matches!(inject_lift(&p, 10.0), Err(TailError::Unattainable { .. })));
    }

    #[test]
    fn quantile_edges() {
        let p = heavy();
        assert_eq!(mixture_quantile(&p, 0.3).unwrap(), 0.0);
        assert_eq!(mixture_quantile(&p, p.p_nonconv).unwrap(), 0.0);
        assert_relative_eq!(mixture_quantile(&p, 1.0 - p.p_tail).unwrap(), p.cutoff_c, max_relative = 1e-12);
        assert!(mixture_quantile(&p, 0.0).is_err());
        assert!(mixture_quantile(&p, 1.0).is_err());
        assert!(mixture_quantile(&p, f64::NAN).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = heavy();
        let back = MixtureParams::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        let v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        for key in ["p_nonconv", "p_torso", "p_tail", "lambda", "cutoff_c", "alpha"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn qq_summary_is_small_for_model_samples() {
        let p = heavy();
        let ys = sample_mixture(&p, 200_000, 3);
        let qq = qq_summary(&ys, &p);
        assert!(qq.torso.max_abs_gap < 0.05 * p.cutoff_c, "{qq:?}");
        assert!(qq.tail.max_abs_gap.is_finite());
    }
}
