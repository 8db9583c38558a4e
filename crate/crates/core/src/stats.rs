//! Small statistical helpers shared by the estimators and the harness.

use libm::erfc;
use statrs::function::beta::beta_reg;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (divisor `n - 1`). `NaN` for fewer than two values.
///
/// Computed on values shifted by the first element, so a constant slice
/// gives exactly zero.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let shift = xs[0];
    let m = xs.iter().map(|x| x - shift).sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - shift - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Type-7 quantile (linear interpolation between order statistics) of an
/// already sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty slice");
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Type-7 quantile of unsorted data, computed by selection in `O(n)`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut buf = values.to_vec();
    percentile_in_place(&mut buf, q)
}

/// Same as [`percentile`] but reorders `buf`.
pub fn percentile_in_place(buf: &mut [f64], q: f64) -> f64 {
    let n = buf.len();
    assert!(n > 0, "percentile of empty slice");
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, lo_val, upper) = buf.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_val = *lo_val;
    if frac == 0.0 || upper.is_empty() {
        return lo_val;
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + frac * (hi_val - lo_val)
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

/// Median absolute deviation from the median (unscaled).
pub fn mad(values: &[f64]) -> f64 {
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    median(&dev)
}

/// Two-sided normal p-value `2 (1 - Φ(|z|))`.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// z statistic and two-sided p-value for an effect and its standard error.
pub fn z_test(effect: f64, std_err: f64) -> (f64, f64) {
    let z = if std_err > 0.0 {
        effect / std_err
    } else if effect == 0.0 {
        0.0
    } else {
        effect.signum() * f64::INFINITY
    };
    (z, two_sided_p(z))
}

/// Exact Clopper-Pearson interval from Beta quantiles.
pub fn clopper_pearson_ci(successes: u64, trials: u64, confidence: f64) -> (f64, f64) {
    assert!(trials >= 1 && successes <= trials, "need 0 <= successes <= trials, trials >= 1");
    assert!(confidence > 0.0 && confidence < 1.0, "confidence must be in (0, 1)");
    let tail = (1.0 - confidence) / 2.0;
    let x = successes as f64;
    let n = trials as f64;
    let low = if successes == 0 { 0.0 } else { beta_quantile(tail, x, n - x + 1.0) };
    let high = if successes == trials { 1.0 } else { beta_quantile(1.0 - tail, x + 1.0, n - x) };
    (low, high)
}

/// Inverse of the regularized incomplete beta function by bisection.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Exact one-sided binomial test p-value `P(X >= successes)` under `p0`.
pub fn binomial_upper_tail(successes: u64, trials: u64, p0: f64) -> f64 {
    if successes == 0 {
        return 1.0;
    }
    // P(X >= k) = I_{p0}(k, n - k + 1)
    beta_reg(successes as f64, (trials - successes) as f64 + 1.0, p0)
}

/// SplitMix64 finalizer; used to derive independent stream seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of a parent seed.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    mix64(parent ^ mix64(stream.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Formats like C's `%.6g`.
pub fn fmt_sig6(x: f64) -> String {
    fmt_sig(x, 6)
}

pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct summation of binomial probabilities, independent of the Beta route.
    fn binom_cdf(k: u64, n: u64, p: f64) -> f64 {
        let mut log_c = 0.0f64;
        let mut total = 0.0;
        for i in 0..=k {
            if i > 0 {
                log_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
            }
            total += (log_c + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln()).exp();
        }
        total
    }

    #[test]
    fn clopper_pearson_matches_binomial_sums() {
        for (x, n) in [(79u64, 500u64), (46, 500), (93, 500), (3, 20)] {
            let (lo, hi) = clopper_pearson_ci(x, n, 0.95);
            // P(X >= x | lo) = 0.025 and P(X <= x | hi) = 0.025
            assert!((1.0 - binom_cdf(x - 1, n, lo) - 0.025).abs() < 1e-9);
            assert!((binom_cdf(x, n, hi) - 0.025).abs() < 1e-9);
        }
        assert_eq!(clopper_pearson_ci(0, 10, 0.95).0, 0.0);
        assert_eq!(clopper_pearson_ci(10, 10, 0.95).1, 1.0);
    }

    #[test]
    fn quantile_type7() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert!((quantile_sorted(&xs, 0.5) - 2.5).abs() < 1e-15);
        let shuffled = [4.0, 1.0, 3.0, 2.0];
        for q in [0.0, 0.1, 0.33, 0.5, 0.9, 1.0] {
            assert_eq!(percentile(&shuffled, q), quantile_sorted(&xs, q));
        }
    }

    #[test]
    fn p_values() {
        assert_eq!(two_sided_p(0.0), 1.0);
        assert!((two_sided_p(1.959963984540054) - 0.05).abs() < 1e-12);
        assert!((two_sided_p(-1.0) - 2.0 * (1.0 - normal_cdf(1.0))).abs() < 1e-12);
    }

    #[test]
    fn upper_tail_by_summation() {
        let p = binomial_upper_tail(63, 500, 0.1);
        assert!((p - (1.0 - binom_cdf(62, 500, 0.1))).abs() < 1e-10);
    }

    #[test]
    fn sig_formatting() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(0.5), "0.5");
        assert_eq!(fmt_sig6(123456789.0), "1.23457e+08");
        assert_eq!(fmt_sig6(0.000012345678), "1.23457e-05");
        assert_eq!(fmt_sig6(-2.5), "-2.5");
        assert_eq!(fmt_sig6(100000.0), "100000");
        assert_eq!(fmt_sig6(0.0001), "0.0001");
    }
}
