//! Regression solvers shared by every estimator: ordinary least squares,
//! Huber M-regression by IRLS, and logistic regression by Newton-Raphson.
//!
//! All solvers work through a column-pivoted Householder QR of the
//! (weighted, column-equilibrated) design, so rank problems surface as a
//! [`LinearError::Singular`] naming the offending column.

mod design;
mod huber;
mod logistic;
mod ols;
mod qr;
mod scale;

pub use design::DesignMatrix;
pub use huber::{huber_fit, huber_loss, huber_psi, HuberOptions};
pub use logistic::{logistic_fit, logistic_predict, LogisticOptions};
pub use ols::ols_fit;
pub use scale::{default_delta, DeltaMode, HUBER_TUNING};

use thiserror::Error;

/// Relative tolerance on the decay of `|R_kk|` used for the rank check.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearError {
    #[error("design is rank deficient: column `{column}` is linearly dependent on earlier columns")]
    Singular { column: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("perfect separation detected at iteration {iteration} (coefficient norm {norm:.3e})")]
    Separation { iteration: usize, norm: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate scale: {0}")]
    DegenerateScale(String),
}

/// Coefficients and covariance from any of the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    /// Row-major `p x p` covariance of the coefficients.
    pub covariance: Vec<f64>,
    /// Residual scale: `sqrt(RSS / (n - p))` for least squares,
    /// `sqrt(Σ ψ(r)^2 / (n - p))` for Huber, 1 for logistic.
    pub scale: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each iteration (Huber loss sum, or negative
    /// log-likelihood for logistic). Single entry for OLS.
    pub objective_trace: Vec<f64>,
    pub column_labels: Vec<String>,
}

impl LinearFit {
    pub fn n_coef(&self) -> usize {
        self.coefficients.len()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.n_coef() + j]
    }

    pub fn std_err(&self, i: usize) -> f64 {
        self.cov(i, i).max(0.0).sqrt()
    }

    /// Index of the coefficient with the given label.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.column_labels.iter().position(|l| l == label)
    }

    /// Linear predictor `X β` for every row of `design`.
    pub fn predict(&self, design: &DesignMatrix) -> Vec<f64> {
        design.mul_vec(&self.coefficients)
    }
}

fn check_response(design: &DesignMatrix, response: &[f64]) -> Result<(), LinearError> {
    if response.len() != design.rows() {
        return Err(LinearError::Shape(format!("response has {} rows, design has {}", response.len(), design.rows())));
    }
    if response.iter().any(|y| !y.is_finite()) {
        return Err(LinearError::NonFinite("response"));
    }
    Ok(())
}

/// Largest coefficient change measured in linear-predictor units, relative to
/// the largest coefficient contribution (floored by `unit`).
fn relative_change(old: &[f64], new: &[f64], col_rms: &[f64], unit: f64) -> f64 {
    let size = new.iter().zip(col_rms).map(|(b, s)| (b * s).abs()).fold(unit, f64::max);
    old.iter().zip(new).zip(col_rms).map(|((a, b), s)| ((a - b) * s).abs()).fold(0.0, f64::max) / size
}
