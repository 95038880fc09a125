//! Dense symmetric positive-definite helpers for small (d <= ~16) matrices.
//! Matrices are row-major `Vec<f64>` of length `d * d`.

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`, or `None` when `A`
/// is not numerically positive definite.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), d * d);
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Determinant from a Cholesky factor.
pub fn chol_det(l: &[f64], d: usize) -> f64 {
    (0..d).map(|i| l[i * d + i]).product::<f64>().powi(2)
}

/// Solves `L y = b` in place.
pub fn forward_solve(l: &[f64], d: usize, b: &mut [f64]) {
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * b[k];
        }
        b[i] = s / l[i * d + i];
    }
}

/// Solves `Lᵀ x = y` in place.
pub fn backward_solve(l: &[f64], d: usize, y: &mut [f64]) {
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[k * d + i] * y[k];
        }
        y[i] = s / l[i * d + i];
    }
}

/// `A⁻¹` from the Cholesky factor of `A`.
pub fn chol_inverse(l: &[f64], d: usize) -> Vec<f64> {
    let mut inv = vec![0.0; d * d];
    let mut col = vec![0.0; d];
    for j in 0..d {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        forward_solve(l, d, &mut col);
        backward_solve(l, d, &mut col);
        for i in 0..d {
            inv[i * d + j] = col[i];
        }
    }
    // Symmetrize rounding noise.
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (inv[i * d + j] + inv[j * d + i]);
            inv[i * d + j] = m;
            inv[j * d + i] = m;
        }
    }
    inv
}

/// Squared Mahalanobis norm `vᵀ A⁻¹ v` via the Cholesky factor of `A`.
pub fn chol_quad_form(l: &[f64], d: usize, v: &[f64]) -> f64 {
    let mut y = v.to_vec();
    forward_solve(l, d, &mut y);
    y.iter().map(|x| x * x).sum()
}

/// Mean and maximum-likelihood (1/n) covariance of the selected rows.
pub fn mean_cov(rows: &[Vec<f64>], idx: &[usize], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = idx.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in idx {
        for (m, v) in mean.iter_mut().zip(&rows[i]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    let mut c = vec![0.0; d];
    for &i in idx {
        for (ck, (v, m)) in c.iter_mut().zip(rows[i].iter().zip(&mean)) {
            *ck = v - m;
        }
        for a in 0..d {
            for b in 0..=a {
                cov[a * d + b] += c[a] * c[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[a * d + b] / n;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    (mean, cov)
}

pub fn trace(a: &[f64], d: usize) -> f64 {
    (0..d).map(|i| a[i * d + i]).sum()
}
