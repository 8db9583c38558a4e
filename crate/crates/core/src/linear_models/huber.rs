use super::qr::weighted_lstsq;
use super::{check_response, relative_change, DesignMatrix, LinearError, LinearFit};

/// Huber loss: `ε²/2` for `|ε| <= δ`, `δ(|ε| - δ/2)` beyond.
pub fn huber_loss(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber_loss`]: `clamp(ε, -δ, δ)`.
pub fn huber_psi(residual: f64, delta: f64) -> f64 {
    residual.clamp(-delta, delta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberOptions {
    pub delta: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl HuberOptions {
    pub fn new(delta: f64) -> Self {
        Self { delta, max_iter: 100, tol: 1e-8 }
    }
}

/// IRLS weight `min(1, δ/|r|)`.
fn irls_weight(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

fn objective(design: &DesignMatrix, response: &[f64], beta: &[f64], delta: f64) -> f64 {
    design.mul_vec(beta).iter().zip(response).map(|(f, y)| huber_loss(y - f, delta)).sum()
}

/// Huber M-regression by iteratively reweighted least squares, started from
/// the OLS solution.
///
/// Non-convergence within `max_iter` is reported through `converged = false`.
/// The covariance is the M-estimator sandwich
/// `(X'Ψ'X)^{-1} X' diag(ψ²) X (X'Ψ'X)^{-1} · n/(n-p)`.
pub fn huber_fit(design: &DesignMatrix, response: &[f64], opts: &HuberOptions) -> Result<LinearFit, LinearError> {
    check_response(design, response)?;
    let delta = opts.delta;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(LinearError::Domain(format!("huber delta must be positive, got {delta}")));
    }
    let n = design.rows();
    let p = design.cols();
    let col_rms = design.column_rms();

    let mut beta = weighted_lstsq(design, None, response)?.coef;
    let mut trace = vec![objective(design, response, &beta, delta)];
    let mut converged = false;
    let mut iterations = 0;
    let mut sqrt_w = vec![1.0; n];
    while iterations < opts.max_iter {
        iterations += 1;
        let fitted = design.mul_vec(&beta);
        for ((w, y), f) in sqrt_w.iter_mut().zip(response).zip(&fitted) {
            *w = irls_weight(y - f, delta).sqrt();
        }
        let next = weighted_lstsq(design, Some(&sqrt_w), response)?.coef;
        let change = relative_change(&beta, &next, &col_rms, f64::MIN_POSITIVE);
        beta = next;
        trace.push(objective(design, response, &beta, delta));
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    if converged {
        if let Some(exact) = active_set_solution(design, response, &beta, delta) {
            *trace.last_mut().expect("trace starts non-empty") = objective(design, response, &exact, delta);
            beta = exact;
        }
    }

    let residuals = residuals_of(design, response, &beta);
    let covariance = sandwich(design, &residuals, delta)?;
    let dof = (n - p).max(1) as f64;
    let psi_ss: f64 = residuals.iter().map(|r| huber_psi(*r, delta).powi(2)).sum();

    Ok(LinearFit {
        coefficients: beta,
        covariance,
        scale: (psi_ss / dof).sqrt(),
        iterations,
        converged,
        objective_trace: trace,
        column_labels: design.labels().to_vec(),
    })
}

fn residuals_of(design: &DesignMatrix, response: &[f64], beta: &[f64]) -> Vec<f64> {
    design.mul_vec(beta).iter().zip(response).map(|(f, y)| y - f).collect()
}

/// Side of the Huber kink for each residual: 0 inside `[-δ, δ]`, ±1 beyond.
fn kink_side(r: f64, delta: f64) -> i8 {
    if r > delta {
        1
    } else if r < -delta {
        -1
    } else {
        0
    }
}

/// Exact minimizer for the inlier/outlier split at `beta`:
/// `β = (X_I'X_I)^{-1} (X_I'y_I + δ Σ_out s_i x_i)`.
///
/// Returned only if the split it produces is the one it was built from, in
/// which case the stationarity conditions hold exactly.
fn active_set_solution(design: &DesignMatrix, response: &[f64], beta: &[f64], delta: f64) -> Option<Vec<f64>> {
    let p = design.cols();
    let sides: Vec<i8> = residuals_of(design, response, beta).iter().map(|&r| kink_side(r, delta)).collect();
    let inlier: Vec<f64> = sides.iter().map(|&s| if s == 0 { 1.0 } else { 0.0 }).collect();
    let sol = weighted_lstsq(design, Some(&inlier), response).ok()?;
    let mut pull = vec![0.0; p];
    for (i, &s) in sides.iter().enumerate().filter(|(_, &s)| s != 0) {
        for (acc, x) in pull.iter_mut().zip(design.row(i)) {
            *acc += delta * f64::from(s) * x;
        }
    }
    let exact: Vec<f64> =
        (0..p).map(|a| sol.coef[a] + (0..p).map(|b| sol.gram_inv[a * p + b] * pull[b]).sum::<f64>()).collect();
    let same = residuals_of(design, response, &exact).iter().zip(&sides).all(|(&r, &s)| kink_side(r, delta) == s);
    same.then_some(exact)
}

fn sandwich(design: &DesignMatrix, residuals: &[f64], delta: f64) -> Result<Vec<f64>, LinearError> {
    let n = design.rows();
    let p = design.cols();
    // bread from ψ' = 1{|r| <= δ}; fall back to the IRLS weights if too few
    // observations sit in the quadratic region to identify the design
    let inlier: Vec<f64> = residuals.iter().map(|r| if r.abs() <= delta { 1.0 } else { 0.0 }).collect();
    let zeros = vec![0.0; n];
    let bread = match weighted_lstsq(design, Some(&inlier), &zeros) {
        Ok(sol) => sol.gram_inv,
        Err(_) => {
            let w: Vec<f64> = residuals.iter().map(|r| irls_weight(*r, delta).sqrt()).collect();
            weighted_lstsq(design, Some(&w), &zeros)?.gram_inv
        }
    };

    let mut meat = vec![0.0; p * p];
    for (i, r) in residuals.iter().enumerate() {
        let psi2 = huber_psi(*r, delta).powi(2);
        if psi2 == 0.0 {
            continue;
        }
        let row = design.row(i);
        for a in 0..p {
            for b in a..p {
                meat[a * p + b] += psi2 * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            meat[a * p + b] = meat[b * p + a];
        }
    }

    let correction = if n > p { n as f64 / (n - p) as f64 } else { 1.0 };
    let bm = matmul(&bread, &meat, p);
    let mut cov = matmul(&bm, &bread, p);
    for a in 0..p {
        for b in 0..p {
            cov[a * p + b] *= correction;
        }
    }
    // symmetrize round-off
    for a in 0..p {
        for b in (a + 1)..p {
            let s = 0.5 * (cov[a * p + b] + cov[b * p + a]);
            cov[a * p + b] = s;
            cov[b * p + a] = s;
        }
    }
    Ok(cov)
}

fn matmul(a: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * p];
    for i in 0..p {
        for k in 0..p {
            let aik = a[i * p + k];
            for j in 0..p {
                out[i * p + j] += aik * b[k * p + j];
            }
        }
    }
    out
}
