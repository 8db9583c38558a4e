use super::qr::weighted_lstsq;
use super::{check_response, DesignMatrix, LinearError, LinearFit};

/// Ordinary least squares with covariance `σ̂² (X'X)^{-1}`, `σ̂² = RSS / (n - p)`.
pub fn ols_fit(design: &DesignMatrix, response: &[f64]) -> Result<LinearFit, LinearError> {
    check_response(design, response)?;
    let sol = weighted_lstsq(design, None, response)?;
    let fitted = design.mul_vec(&sol.coef);
    let rss: f64 = response.iter().zip(&fitted).map(|(y, f)| (y - f) * (y - f)).sum();
    let dof = design.rows() - design.cols();
    let sigma2 = if dof > 0 { rss / dof as f64 } else { 0.0 };
    Ok(LinearFit {
        coefficients: sol.coef,
        covariance: sol.gram_inv.iter().map(|g| g * sigma2).collect(),
        scale: sigma2.sqrt(),
        iterations: 1,
        converged: true,
        objective_trace: vec![0.5 * rss],
        column_labels: design.labels().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interpolating_fit() {
        let d =
            DesignMatrix::from_row_major(2, 2, vec![1.0, 0.0, 1.0, 1.0], vec!["intercept".into(), "t".into()]).unwrap();
        let fit = ols_fit(&d, &[1.0, 3.0]).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-14);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn constant_response() {
        let x = [0.1, 2.0, -3.0, 4.0, 5.5];
        let d = DesignMatrix::with_intercept(&[("x", &x)]).unwrap();
        let fit = ols_fit(&d, &[7.0; 5]).unwrap();
        assert!((fit.coefficients[0] - 7.0).abs() < 1e-12);
        assert!(fit.coefficients[1].abs() < 1e-12);
    }

    /// Gaussian elimination on the normal equations; independent of the QR route.
    fn normal_equation_solve(d: &DesignMatrix, y: &[f64]) -> Vec<f64> {
        let p = d.cols();
        let mut m = vec![vec![0.0; p + 1]; p];
        for i in 0..d.rows() {
            let row = d.row(i);
            for a in 0..p {
                for b in 0..p {
                    m[a][b] += row[a] * row[b];
                }
                m[a][p] += row[a] * y[i];
            }
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
            m.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for k in c..=p {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
        (0..p).map(|c| m[c][p] / m[c][c]).collect()
    }

    #[test]
    fn matches_normal_equations_on_random_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x1: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let x2: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 10.0).collect();
        let y: Vec<f64> = (0..50).map(|i| 1.5 - 2.0 * x1[i] + 0.3 * x2[i] + rng.random::<f64>() - 0.5).collect();
        let d = DesignMatrix::with_intercept(&[("x1", &x1), ("x2", &x2)]).unwrap();
        let fit = ols_fit(&d, &y).unwrap();
        let oracle = normal_equation_solve(&d, &y);
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        // covariance symmetric
        for i in 0..3 {
            for j in 0..3 {
                assert!((fit.cov(i, j) - fit.cov(j, i)).abs() < 1e-14);
            }
            assert!(fit.cov(i, i) > 0.0);
        }
    }

    #[test]
    fn singular_design_names_column() {
        let x = [1.0, 1.0, 1.0, 1.0];
        let d = DesignMatrix::with_intercept(&[("dup", &x)]).unwrap();
        let err = ols_fit(&d, &[1.0, 2.0, 3.0, 4.0]).unwrap_err();
        assert!(matches!(err, LinearError::Singular { .. }));
        assert!(err.to_string().contains("intercept") || err.to_string().contains("dup"));
    }
}
