//! Numerical kernel: dense matrices, symmetric eigenvalues, and the
//! strict-feasibility linear program behind every positive-orthant weight.

mod eig;
mod matrix;
pub mod simplex;

use serde::Serialize;
use thiserror::Error;

pub use eig::{eig_tolerance, is_negdef, lambda_max, sym_eigs, SymEig, MAX_EIG_ORDER};
pub use matrix::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("matrix of order {n} exceeds the eigensolver cap of {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("entry ({row},{col}) = {value} is negative; Metzler matrices need nonnegative off-diagonals")]
    NotMetzler { row: usize, col: usize, value: f64 },
}

/// Square matrix with nonnegative off-diagonal entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MetzlerMatrix(Matrix);

impl MetzlerMatrix {
    pub fn new(m: Matrix) -> Result<Self, OptimError> {
        if !m.is_square() {
            return Err(OptimError::Dimension(format!(
                "Metzler matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if !m.is_finite() {
            return Err(OptimError::NonFinite);
        }
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                if i != j && m[(i, j)] < 0.0 {
                    return Err(OptimError::NotMetzler {
                        row: i + 1,
                        col: j + 1,
                        value: m[(i, j)],
                    });
                }
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, OptimError> {
        let m = Matrix::from_rows(rows)
            .ok_or_else(|| OptimError::Dimension("ragged matrix rows".into()))?;
        Self::new(m)
    }

    pub fn order(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn transpose(&self) -> MetzlerMatrix {
        MetzlerMatrix(self.0.transpose())
    }

    pub fn scale(&self, c: f64) -> Result<MetzlerMatrix, OptimError> {
        MetzlerMatrix::new(self.0.scale(c))
    }
}

impl std::ops::Index<(usize, usize)> for MetzlerMatrix {
    type Output = f64;
    fn index(&self, ij: (usize, usize)) -> &f64 {
        &self.0[ij]
    }
}

/// Default box cap on LP weights.
pub const WEIGHT_CAP: f64 = 1e6;

/// Margins at or below this (after scaling `A` to unit max entry) count as
/// infeasible.
pub const LP_TOL: f64 = 1e-9;

/// Positive weights with `Aᵀp ≤ −margin·1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositiveWeights {
    /// Normalized so that `min_i p_i = 1`.
    pub p: Vec<f64>,
    /// `min_i −(Aᵀp)_i` for the returned `p`.
    pub margin: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LpOutcome {
    Feasible(PositiveWeights),
    /// The optimal margin `μ` (for `A` scaled to unit max entry) is not positive.
    Infeasible { best_margin: f64 },
}

impl LpOutcome {
    pub fn weights(&self) -> Option<&PositiveWeights> {
        match self {
            LpOutcome::Feasible(w) => Some(w),
            LpOutcome::Infeasible { .. } => None,
        }
    }
}

/// Solves `max μ  s.t.  Aᵀp ≤ −μ·1,  1 ≤ p ≤ cap` and reports feasibility of
/// a linear copositive Lyapunov function `Σ p_i |x_i|` for `ẋ = Ax`.
///
/// `A` is scaled to unit max entry before solving. The returned `p` is
/// rescaled so its smallest entry is 1, and the margin is recomputed on the
/// unscaled matrix; the outcome is `Feasible` only if that recomputed margin
/// is strictly positive.
pub fn strict_positive_lp(a: &Matrix) -> Result<LpOutcome, OptimError> {
    strict_positive_lp_capped(a, WEIGHT_CAP)
}

pub fn strict_positive_lp_capped(a: &Matrix, cap: f64) -> Result<LpOutcome, OptimError> {
    if !a.is_square() || a.rows() == 0 {
        return Err(OptimError::Dimension("LP needs a nonempty square matrix".into()));
    }
    if !a.is_finite() {
        return Err(OptimError::NonFinite);
    }
    let n = a.rows();
    let scale = a.max_abs();
    if scale == 0.0 {
        return Ok(LpOutcome::Infeasible { best_margin: 0.0 });
    }
    let a_s = a.scale(1.0 / scale);

    // shift p = 1 + p', μ = μ' − shift so the slack basis is feasible at p' = 0, μ' = 0
    let col_sums = a_s.tr_matvec(&vec![1.0; n]);
    let shift = col_sums.iter().fold(0.0_f64, |m, v| m.max(*v)) + 1.0;
    let mut constraints = Matrix::zeros(n, n + 1);
    for i in 0..n {
        for k in 0..n {
            constraints[(i, k)] = a_s[(k, i)];
        }
        constraints[(i, n)] = 1.0;
    }
    let rhs: Vec<f64> = col_sums.iter().map(|s| (shift - s).max(0.0)).collect();
    let mut upper = vec![cap - 1.0; n];
    upper.push(f64::INFINITY);
    let mut objective = vec![0.0; n];
    objective.push(1.0);

    let sol = simplex::solve(&simplex::BoundedLp {
        objective,
        constraints,
        rhs,
        upper,
    })?;
    let mu = sol.x[n] - shift;
    if mu <= LP_TOL {
        return Ok(LpOutcome::Infeasible { best_margin: mu });
    }
    let mut p: Vec<f64> = sol.x[..n].iter().map(|v| 1.0 + v.max(0.0)).collect();
    let pmin = p.iter().copied().fold(f64::INFINITY, f64::min);
    for v in &mut p {
        *v /= pmin;
    }
    let atp = a.tr_matvec(&p);
    let margin = atp.iter().map(|v| -v).fold(f64::INFINITY, f64::min);
    if margin <= 0.0 {
        return Ok(LpOutcome::Infeasible { best_margin: mu });
    }
    Ok(LpOutcome::Feasible(PositiveWeights {
        p,
        margin,
        iterations: sol.iterations,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn lp_minus_identity() {
        let w = strict_positive_lp(&Matrix::identity(3).scale(-1.0)).unwrap();
        let w = w.weights().unwrap();
        assert_eq!(w.p, vec![1.0; 3]);
        assert!((w.margin - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lp_symmetric_coupled() {
        let a = m(&[&[-2.0, 1.0], &[1.0, -2.0]]);
        let out = strict_positive_lp(&a).unwrap();
        let w = out.weights().unwrap();
        let atp = a.tr_matvec(&w.p);
        assert!(w.p.iter().all(|v| *v >= 1.0));
        assert!(atp.iter().all(|v| *v < 0.0));
        assert!((w.p[0] - 1.0).abs() < 1e-9 && (w.p[1] - 1.0).abs() < 1e-9);
        assert!((atp[0] + 1.0).abs() < 1e-9 && (atp[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn lp_non_hurwitz_infeasible() {
        // eigenvalues (−3 ± √13)/2, one positive
        let a = m(&[&[0.0, 1.0], &[1.0, -3.0]]);
        assert!(matches!(
            strict_positive_lp(&a).unwrap(),
            LpOutcome::Infeasible { .. }
        ));
    }

    #[test]
    fn lp_zero_matrix_infeasible() {
        assert!(matches!(
            strict_positive_lp(&Matrix::zeros(2, 2)).unwrap(),
            LpOutcome::Infeasible { best_margin } if best_margin == 0.0
        ));
    }

    #[test]
    fn lp_asymmetric_weights() {
        // column sums of A are not all negative, so p = 1 fails but some p works
        let a = m(&[&[-1.0, 0.0], &[3.0, -4.0]]);
        assert!(a.tr_matvec(&[1.0, 1.0])[0] > 0.0);
        let out = strict_positive_lp(&a).unwrap();
        let w = out.weights().unwrap();
        assert!(a.tr_matvec(&w.p).iter().all(|v| *v < 0.0));
    }

    #[test]
    fn metzler_validation() {
        assert!(MetzlerMatrix::from_rows(&[vec![-1.0, 0.5], vec![0.5, -1.0]]).is_ok());
        assert!(matches!(
            MetzlerMatrix::from_rows(&[vec![-1.0, -0.5], vec![0.5, -1.0]]),
            Err(OptimError::NotMetzler { row: 1, col: 2, .. })
        ));
        assert!(MetzlerMatrix::from_rows(&[vec![-1.0, 0.5]]).is_err());
    }
}
