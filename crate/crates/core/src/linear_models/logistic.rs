use super::qr::weighted_lstsq;
use super::{check_response, relative_change, DesignMatrix, LinearError, LinearFit};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self { max_iter: 50, tol: 1e-8 }
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Fitted probabilities through the logistic link.
pub fn logistic_predict(fit: &LinearFit, design: &DesignMatrix) -> Vec<f64> {
    fit.predict(design).into_iter().map(sigmoid).collect()
}

fn neg_log_likelihood(eta: &[f64], labels: &[f64]) -> f64 {
    eta.iter()
        .zip(labels)
        .map(|(e, y)| {
            // log(1 + e^η) - y η, computed stably
            let softplus = if *e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            softplus - y * e
        })
        .sum()
}

/// Bernoulli maximum likelihood by Newton-Raphson (each step a weighted
/// least-squares solve). Covariance is the inverse observed information.
///
/// Separation is reported when the linear predictor classifies every row
/// strictly correctly (the likelihood then has no finite maximizer), or when
/// the iteration fails to converge while the coefficient norm keeps growing.
pub fn logistic_fit(design: &DesignMatrix, labels: &[f64], opts: &LogisticOptions) -> Result<LinearFit, LinearError> {
    check_response(design, labels)?;
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(LinearError::Domain("labels must be 0 or 1".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    if positives == 0 || positives == labels.len() {
        return Err(LinearError::Domain("labels contain a single class".into()));
    }

    let n = design.rows();
    let p = design.cols();
    let col_rms = design.column_rms();
    let mut beta = vec![0.0; p];
    let mut eta = vec![0.0; n];
    let mut trace = vec![neg_log_likelihood(&eta, labels)];
    let mut sqrt_w = vec![0.0; n];
    let mut working = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    let mut norms = Vec::new();

    while iterations < opts.max_iter {
        iterations += 1;
        for i in 0..n {
            let mu = sigmoid(eta[i]);
            let w = (mu * (1.0 - mu)).max(1e-300);
            sqrt_w[i] = w.sqrt();
            working[i] = eta[i] + (labels[i] - mu) / w;
        }
        let next = weighted_lstsq(design, Some(&sqrt_w), &working)?.coef;
        let change = relative_change(&beta, &next, &col_rms, 1.0);
        beta = next;
        eta = design.mul_vec(&beta);
        trace.push(neg_log_likelihood(&eta, labels));
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        norms.push(norm);

        let separated = eta.iter().zip(labels).all(|(e, y)| if *y == 1.0 { *e > 0.0 } else { *e < 0.0 });
        if separated {
            return Err(LinearError::Separation { iteration: iterations, norm });
        }
        if !norm.is_finite() {
            return Err(LinearError::Separation { iteration: iterations, norm });
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        let k = norms.len();
        if k >= 3 && norms[k - 1] > norms[k - 2] && norms[k - 2] > norms[k - 3] {
            return Err(LinearError::Separation { iteration: iterations, norm: norms[k - 1] });
        }
    }

    // observed information at the final estimate
    for i in 0..n {
        let mu = sigmoid(eta[i]);
        sqrt_w[i] = (mu * (1.0 - mu)).sqrt();
    }
    let info_inv = weighted_lstsq(design, Some(&sqrt_w), &vec![0.0; n])?.gram_inv;

    Ok(LinearFit {
        coefficients: beta,
        covariance: info_inv,
        scale: 1.0,
        iterations,
        converged,
        objective_trace: trace,
        column_labels: design.labels().to_vec(),
    })
}
