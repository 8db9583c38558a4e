//! Column-pivoted Householder QR for tall, thin least-squares problems.

use super::{DesignMatrix, LinearError, RANK_TOL};

pub(crate) struct LsqSolution {
    pub coef: Vec<f64>,
    /// Row-major `(X' W X)^{-1}`.
    pub gram_inv: Vec<f64>,
}

/// Minimizes `Σ w_i (y_i - x_i β)^2` where `sqrt_w[i]^2 = w_i`.
///
/// Columns are equilibrated to unit norm before pivoting so the rank
/// tolerance is independent of column units.
pub(crate) fn weighted_lstsq(
    design: &DesignMatrix,
    sqrt_w: Option<&[f64]>,
    response: &[f64],
) -> Result<LsqSolution, LinearError> {
    let n = design.rows();
    let p = design.cols();
    let weight = |i: usize| sqrt_w.map_or(1.0, |w| w[i]);

    // column-major copy of the weighted design
    let mut a: Vec<Vec<f64>> = (0..p).map(|j| (0..n).map(|i| weight(i) * design.get(i, j)).collect()).collect();
    let mut b: Vec<f64> = (0..n).map(|i| weight(i) * response[i]).collect();

    let mut col_scale = vec![0.0; p];
    for j in 0..p {
        let norm = a[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(LinearError::Singular { column: design.labels()[j].clone() });
        }
        col_scale[j] = norm;
        a[j].iter_mut().for_each(|v| *v /= norm);
    }

    let mut perm: Vec<usize> = (0..p).collect();
    let mut diag = vec![0.0; p];
    let mut r00 = 0.0;
    for k in 0..p {
        // pivot on the largest remaining sub-column norm
        let (best, best_norm2) = (k..p)
            .map(|j| (j, a[j][k..].iter().map(|v| v * v).sum::<f64>()))
            .fold((k, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        a.swap(k, best);
        perm.swap(k, best);

        let norm = best_norm2.sqrt();
        if k == 0 {
            r00 = norm;
        }
        if norm <= RANK_TOL * r00 {
            return Err(LinearError::Singular { column: design.labels()[perm[k]].clone() });
        }

        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored in place; v' v = 2 norm (norm + |x_k|)
        a[k][k] -= alpha;
        let vtv = 2.0 * norm * (norm + (a[k][k] + alpha).abs());
        let (head, tail) = a.split_at_mut(k + 1);
        let v = &head[k][k..];
        for col in tail.iter_mut() {
            reflect(v, vtv, &mut col[k..]);
        }
        reflect(v, vtv, &mut b[k..]);

        diag[k] = alpha;
    }

    // strict upper part of R lives above the diagonal of the reflected columns
    let mut r = vec![0.0; p * p];
    for i in 0..p {
        r[i * p + i] = diag[i];
        for j in (i + 1)..p {
            r[i * p + j] = a[j][i];
        }
    }

    // back substitution R z = (Q'b)[..p]
    let mut z = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = ((i + 1)..p).map(|j| r[i * p + j] * z[j]).sum();
        z[i] = (b[i] - s) / r[i * p + i];
    }

    // R^{-1} (upper triangular)
    let mut rinv = vec![0.0; p * p];
    for c in 0..p {
        for i in (0..=c).rev() {
            let rhs = if i == c { 1.0 } else { 0.0 };
            let s: f64 = ((i + 1)..=c).map(|j| r[i * p + j] * rinv[j * p + c]).sum();
            rinv[i * p + c] = (rhs - s) / r[i * p + i];
        }
    }

    let mut coef = vec![0.0; p];
    for k in 0..p {
        coef[perm[k]] = z[k] / col_scale[perm[k]];
    }
    // (A'A)^{-1} = P R^{-1} R^{-T} P', then undo equilibration
    let mut gram_inv = vec![0.0; p * p];
    for a_i in 0..p {
        for a_j in 0..p {
            let s: f64 = (a_i.max(a_j)..p).map(|m| rinv[a_i * p + m] * rinv[a_j * p + m]).sum();
            let (oi, oj) = (perm[a_i], perm[a_j]);
            gram_inv[oi * p + oj] = s / (col_scale[oi] * col_scale[oj]);
        }
    }
    Ok(LsqSolution { coef, gram_inv })
}

fn reflect(v: &[f64], vtv: f64, x: &mut [f64]) {
    let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    let f = 2.0 * dot / vtv;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= f * vi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_dependent_column() {
        let x1 = [1.0, 2.0, 3.0, 4.0];
        let x2 = [2.0, 4.0, 6.0, 8.0];
        let d = DesignMatrix::with_intercept(&[("x1", &x1), ("x2", &x2)]).unwrap();
        let err = weighted_lstsq(&d, None, &[1.0, 2.0, 3.0, 5.0]).err().unwrap();
        match err {
            LinearError::Singular { column } => assert!(column == "x1" || column == "x2"),
            other => panic!("{other:?}"),
        }
        let zero = [0.0; 4];
        let d = DesignMatrix::with_intercept(&[("z", &zero)]).unwrap();
        let err = weighted_lstsq(&d, None, &[1.0, 2.0, 3.0, 5.0]).err().unwrap();
        assert_eq!(err, LinearError::Singular { column: "z".into() });
    }

    #[test]
    fn gram_inverse_is_inverse() {
        let x = [0.3, -1.2, 2.5, 0.7, 1.1];
        let d = DesignMatrix::with_intercept(&[("x", &x)]).unwrap();
        let sol = weighted_lstsq(&d, None, &[1.0; 5]).unwrap();
        // X'X = [[5, Σx], [Σx, Σx²]]
        let sx: f64 = x.iter().sum();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let g = [5.0, sx, sx, sxx];
        for i in 0..2 {
            for j in 0..2 {
                let v: f64 = (0..2).map(|k| g[i * 2 + k] * sol.gram_inv[k * 2 + j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
