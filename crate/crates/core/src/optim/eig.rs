use serde::Serialize;

use super::{Matrix, OptimError};

/// Largest matrix order accepted by [`sym_eigs`].
pub const MAX_EIG_ORDER: usize = 64;

const MAX_SWEEPS: usize = 100;

/// Spectrum of a symmetric matrix.
#[derive(Debug, Clone, Serialize)]
pub struct SymEig {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the unit eigenvector of `eigenvalues[k]`.
    #[serde(skip)]
    pub eigenvectors: Matrix,
    /// Largest `‖Sv − λv‖` over all pairs.
    pub residual: f64,
    /// Off-diagonal Frobenius norm at termination.
    pub off_norm: f64,
}

impl SymEig {
    pub fn max(&self) -> f64 {
        *self.eigenvalues.last().unwrap_or(&f64::NEG_INFINITY)
    }

    pub fn min(&self) -> f64 {
        *self.eigenvalues.first().unwrap_or(&f64::INFINITY)
    }
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Full spectrum of a symmetric matrix by cyclic Jacobi rotations.
///
/// The input is symmetrized first. Sweeps stop one sweep after the
/// off-diagonal Frobenius norm falls below `1e-12·max(1, ‖S‖_F)`.
pub fn sym_eigs(s: &Matrix) -> Result<SymEig, OptimError> {
    if !s.is_square() {
        return Err(OptimError::Dimension(format!(
            "eigenvalues need a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    let n = s.rows();
    if n > MAX_EIG_ORDER {
        return Err(OptimError::TooLarge { n, cap: MAX_EIG_ORDER });
    }
    if !s.is_finite() {
        return Err(OptimError::NonFinite);
    }
    let sym = s.symmetrized();
    let mut a = sym.clone();
    let mut v = Matrix::identity(n);
    let tol = 1e-12 * sym.frobenius().max(1.0);

    let mut off = off_diagonal_norm(&a);
    let mut sweeps = 0;
    let mut polish = 1;
    while (off > tol || polish > 0) && sweeps < MAX_SWEEPS {
        if off <= tol {
            polish -= 1;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn);
            }
        }
        off = off_diagonal_norm(&a);
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| a[(k, k)]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |i, k| v[(i, order[k])]);

    let mut residual: f64 = 0.0;
    for (k, lam) in eigenvalues.iter().enumerate() {
        let col: Vec<f64> = (0..n).map(|i| eigenvectors[(i, k)]).collect();
        let sv = sym.matvec(&col);
        let r = sv
            .iter()
            .zip(&col)
            .map(|(a, b)| (a - lam * b).powi(2))
            .sum::<f64>()
            .sqrt();
        residual = residual.max(r);
    }

    Ok(SymEig {
        eigenvalues,
        eigenvectors,
        residual,
        off_norm: off,
    })
}

/// Applies the rotation in the (p, q) plane: `A ← JᵀAJ`, `V ← VJ`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Rounding slack for eigenvalue sign tests on `s`.
pub fn eig_tolerance(s: &Matrix) -> f64 {
    64.0 * f64::EPSILON * s.frobenius().max(1.0)
}

/// Largest eigenvalue of the symmetric part of `s`.
pub fn lambda_max(s: &Matrix) -> Result<f64, OptimError> {
    Ok(sym_eigs(s)?.max())
}

/// `λ_max(S) ≤ −margin`, up to a rounding slack of `64·ε·max(1, ‖S‖_F)`.
pub fn is_negdef(s: &Matrix, margin: f64) -> Result<bool, OptimError> {
    Ok(lambda_max(s)? <= -margin + eig_tolerance(s))
}
