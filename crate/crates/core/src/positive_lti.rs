//! Separable Lyapunov certificates for Hurwitz Metzler matrices.
//!
//! For `ẋ = Ax` with `A` Metzler and Hurwitz there are positive `p`, `v` with
//! `Aᵀp < 0` and `Av < 0`. With max weights `q_i = 1/v_i` they give the
//! sum-separable `Σ p_i|x_i|`, the max-separable `max_i q_i|x_i|` and the
//! diagonal quadratic `Σ p_i q_i x_i²` Lyapunov functions. The last one holds
//! because `M = AᵀD + DA` is symmetric Metzler with `Mv = Aᵀp + D(Av) < 0`.

use serde::Serialize;
use thiserror::Error;

use crate::optim::{
    is_negdef, lambda_max, strict_positive_lp, LpOutcome, Matrix, MetzlerMatrix, OptimError,
};

const BISECTION_STEPS: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PositiveError {
    #[error("matrix is not Hurwitz: no strictly positive weights exist (best LP margin {best_margin:.3e})")]
    NotHurwitz { best_margin: f64 },
    #[error("diagonal weights d = p∘q fail AᵀD + DA ≤ 0 numerically (λ_max = {lambda_max:.3e})")]
    DiagonalCheckFailed { lambda_max: f64 },
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositiveCertificate {
    /// Sum weights, `Aᵀp < 0`.
    pub p: Vec<f64>,
    /// Max weights: `max_i q_i|x_i|` decreases, i.e. `A·(1/q) < 0`.
    pub q: Vec<f64>,
    /// Right decay vector `v` with `Av < 0`; `q` is `1/v` rescaled.
    pub v: Vec<f64>,
    /// Diagonal quadratic weights, `d = p∘q`.
    pub d: Vec<f64>,
    /// Largest `λ` found with `AᵀD + DA + 2λD ⪯ 0`.
    pub decay: f64,
    /// `min_i −(Aᵀp)_i`.
    pub p_margin: f64,
    /// `min_i −(Av)_i`.
    pub v_margin: f64,
}

pub fn certify_positive_lti(a: &MetzlerMatrix) -> Result<PositiveCertificate, PositiveError> {
    let m = a.matrix();
    let p = match strict_positive_lp(m)? {
        LpOutcome::Feasible(w) => w,
        LpOutcome::Infeasible { best_margin } => {
            return Err(PositiveError::NotHurwitz { best_margin })
        }
    };
    let v = match strict_positive_lp(&m.transpose())? {
        LpOutcome::Feasible(w) => w,
        LpOutcome::Infeasible { best_margin } => {
            return Err(PositiveError::NotHurwitz { best_margin })
        }
    };
    let q = max_weights(&v.p);
    let d: Vec<f64> = p.p.iter().zip(&q).map(|(a, b)| a * b).collect();
    let decay = max_diagonal_decay(m, &d)?;
    Ok(PositiveCertificate {
        p: p.p,
        q,
        v: v.p,
        d,
        decay,
        p_margin: p.margin,
        v_margin: v.margin,
    })
}

/// `q_i = max(v)/v_i`, so `min_i q_i = 1`.
pub fn max_weights(v: &[f64]) -> Vec<f64> {
    let vmax = v.iter().copied().fold(0.0_f64, f64::max);
    v.iter().map(|x| vmax / x).collect()
}

/// `AᵀD + DA + 2λD`.
pub fn diagonal_lmi(a: &Matrix, d: &[f64], lambda: f64) -> Matrix {
    let mut s = a.diag_lyapunov(d);
    for (i, di) in d.iter().enumerate() {
        s[(i, i)] += 2.0 * lambda * di;
    }
    s
}

/// Bisection for the largest `λ ∈ [0, max_i |A_ii|]` with
/// `AᵀD + DA + 2λD ⪯ 0`.
pub fn max_diagonal_decay(a: &Matrix, d: &[f64]) -> Result<f64, PositiveError> {
    if !is_negdef(&diagonal_lmi(a, d, 0.0), 0.0)? {
        return Err(PositiveError::DiagonalCheckFailed {
            lambda_max: lambda_max(&diagonal_lmi(a, d, 0.0))?,
        });
    }
    let mut lo = 0.0;
    let mut hi = a.diag().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if is_negdef(&diagonal_lmi(a, d, hi), 0.0)? {
        return Ok(hi);
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if is_negdef(&diagonal_lmi(a, d, mid), 0.0)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Checks `AᵀD + DA + 2λD ⪯ 0` for `D = diag(d)`.
pub fn verify_diagonal_metric(a: &Matrix, d: &[f64], lambda: f64) -> Result<bool, OptimError> {
    if !a.is_square() || a.rows() != d.len() {
        return Err(OptimError::Dimension(format!(
            "weights of length {} do not match a {}x{} matrix",
            d.len(),
            a.rows(),
            a.cols()
        )));
    }
    is_negdef(&diagonal_lmi(a, d, lambda), 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightDecayReport {
    /// `min_i −(Aᵀp)_i`; positive means `Σ p_i|x_i|` decreases.
    pub sum_margin: f64,
    /// `min_i −(A·(1/q))_i`; positive means `max_i q_i|x_i|` decreases.
    pub max_margin: f64,
}

impl WeightDecayReport {
    pub fn valid(&self) -> bool {
        self.sum_margin > 0.0 && self.max_margin > 0.0
    }
}

pub fn verify_weight_decay(a: &MetzlerMatrix, p: &[f64], q: &[f64]) -> WeightDecayReport {
    let m = a.matrix();
    let min_neg = |v: Vec<f64>| v.iter().map(|x| -x).fold(f64::INFINITY, f64::min);
    WeightDecayReport {
        sum_margin: min_neg(m.tr_matvec(p)),
        max_margin: min_neg(m.matvec(&q.iter().map(|x| 1.0 / x).collect::<Vec<_>>())),
    }
}
