//! Small-gain composition of local differential storages.
//!
//! If each node has a storage `V_i` with `V̇_i ≤ Σ_j α_ij V_j`, the gains form a
//! Metzler matrix `H`. When `ż = Hz` is exponentially stable, `Σ p_i V_i`
//! (with `Hᵀp < 0`) and `max_i q_i V_i` (with `H·(1/q) < 0`) are contraction
//! metrics for the interconnection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ModelError, NetworkModel};
use crate::optim::{strict_positive_lp, LpOutcome, Matrix, MetzlerMatrix, OptimError};
use crate::positive_lti::max_weights;

/// Default number of sampled Jacobians in [`audit_gains`].
pub const DEFAULT_AUDIT_SAMPLES: usize = 10_000;
/// Default relative safety factor on sampled gains.
pub const DEFAULT_INFLATION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum GainError {
    #[error("gain matrix must be square with a negative diagonal and nonnegative off-diagonals: {0}")]
    Invalid(String),
    #[error("gain α_{node}{node} = {value:.6} is not negative")]
    DiagonalNotNegative { node: usize, value: f64 },
    #[error("gain matrix is not Hurwitz: ż = Hz is unstable (best LP margin {best_margin:.3e})")]
    Unstable { best_margin: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

impl GainError {
    pub fn reason(&self) -> &'static str {
        match self {
            GainError::Invalid(_) => "invalid_gain_matrix",
            GainError::DiagonalNotNegative { .. } => "diagonal_not_negative",
            GainError::Unstable { .. } => "unstable",
            GainError::Model(_) => "model_error",
            GainError::Optim(_) => "numerical_failure",
        }
    }
}

/// Metzler gain matrix with strictly negative diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct GainMatrix(MetzlerMatrix);

impl GainMatrix {
    pub fn new(alpha: Matrix) -> Result<Self, GainError> {
        let m = MetzlerMatrix::new(alpha).map_err(|e| GainError::Invalid(e.to_string()))?;
        for i in 0..m.order() {
            if !(m[(i, i)] < 0.0) {
                return Err(GainError::DiagonalNotNegative {
                    node: i + 1,
                    value: m[(i, i)],
                });
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GainError> {
        let m = Matrix::from_rows(rows).ok_or_else(|| GainError::Invalid("ragged rows".into()))?;
        Self::new(m)
    }

    pub fn alpha(&self) -> &MetzlerMatrix {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.order()
    }

    /// `N_i = { j ≠ i : α_ij ≠ 0 }`, 1-based.
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        (0..self.order())
            .map(|i| {
                (0..self.order())
                    .filter(|&j| j != i && self.0[(i, j)] != 0.0)
                    .map(|j| j + 1)
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositeWeights {
    /// Sum weights, `Hᵀp < 0`.
    pub p: Vec<f64>,
    /// Max weights for `max_i q_i V_i`, `q = max(v)/v`.
    pub q: Vec<f64>,
    /// `Hv < 0`.
    pub v: Vec<f64>,
    /// `min_i −(Hᵀp)_i`.
    pub p_margin: f64,
    /// `min_i −(Hv)_i`.
    pub v_margin: f64,
    /// `min(p_margin / max p, v_margin / max v)`.
    pub decay: f64,
}

impl CompositeWeights {
    /// Re-evaluates `Hᵀp < 0` and `Hv < 0` in floating point.
    pub fn holds_for(&self, h: &GainMatrix) -> bool {
        let a = h.alpha().matrix();
        a.tr_matvec(&self.p).iter().all(|x| *x < 0.0) && a.matvec(&self.v).iter().all(|x| *x < 0.0)
    }
}

pub fn compose(h: &GainMatrix) -> Result<CompositeWeights, GainError> {
    let a = h.alpha().matrix();
    let solve = |m: &Matrix| -> Result<_, GainError> {
        match strict_positive_lp(m)? {
            LpOutcome::Feasible(w) => Ok(w),
            LpOutcome::Infeasible { best_margin } => Err(GainError::Unstable { best_margin }),
        }
    };
    let p = solve(a)?;
    let v = solve(&a.transpose())?;
    let vmax = |w: &[f64]| w.iter().copied().fold(0.0_f64, f64::max);
    let decay = (p.margin / vmax(&p.p)).min(v.margin / vmax(&v.p));
    Ok(CompositeWeights {
        q: max_weights(&v.p),
        decay,
        p_margin: p.margin,
        v_margin: v.margin,
        p: p.p,
        v: v.p,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GainAudit {
    pub gains: GainMatrix,
    /// Sampled sup before inflation.
    pub raw: Matrix,
    pub samples: usize,
    pub inflation: f64,
    pub storage_weights: Vec<f64>,
}

/// Estimates gains for storages `V_i = w_i δ_i²` from sampled Jacobians:
/// `α_ii = sup 2J_ii` and `α_ij = sup 2|J_ij|·√(w_j/w_i)`.
///
/// Sampled sups are then made more conservative by the relative `inflation`
/// (diagonal entries move toward zero, off-diagonal entries grow).
pub fn audit_gains(
    m: &NetworkModel,
    w: &[f64],
    samples: usize,
    seed: u64,
    inflation: f64,
) -> Result<GainAudit, GainError> {
    let n = m.n();
    if w.len() != n || w.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(GainError::Invalid(format!(
            "need {n} positive finite storage weights"
        )));
    }
    if !(inflation >= 0.0 && inflation.is_finite()) {
        return Err(GainError::Invalid("inflation must be nonnegative".into()));
    }
    let mut raw = Matrix::from_fn(n, n, |i, j| if i == j { f64::NEG_INFINITY } else { 0.0 });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples.max(1) {
        let (x, t) = m.sample_point(&mut rng);
        let j = m.jacobian_at(&x, t)?.matrix;
        for r in 0..n {
            for c in 0..n {
                let v = if r == c {
                    2.0 * j[(r, c)]
                } else {
                    2.0 * j[(r, c)].abs() * (w[c] / w[r]).sqrt()
                };
                raw[(r, c)] = raw[(r, c)].max(v);
            }
        }
    }
    for i in 0..n {
        if !(raw[(i, i)] < 0.0) {
            return Err(GainError::DiagonalNotNegative {
                node: i + 1,
                value: raw[(i, i)],
            });
        }
    }
    let inflated = Matrix::from_fn(n, n, |r, c| {
        let v = raw[(r, c)];
        if r == c {
            v + inflation * v.abs()
        } else {
            v * (1.0 + inflation)
        }
    });
    Ok(GainAudit {
        gains: GainMatrix::new(inflated)?,
        raw,
        samples: samples.max(1),
        inflation,
        storage_weights: w.to_vec(),
    })
}
