//! Diagonal metrics robust to norm-bounded nonlinear coupling.
//!
//! For `ẋ_i = g_i(x_i, t) + Σ_j K_ij x_j + h_i(x, t)` with
//! `(∂h/∂x)ᵀ(∂h/∂x) ⪯ ψ²HᵀH`, a diagonal `D` and multiplier `θ > 0` with
//!
//! ```text
//! [ ĀᵀD + DĀ + 2λD + θψ²HᵀH    D  ]
//! [           D              −θI  ]  ≺ 0
//! ```
//!
//! certify `(Ā + Δ)ᵀD + D(Ā + Δ) + 2λD ⪯ 0` for every admissible `Δ = ∂h/∂x`,
//! since `ΔᵀD + DΔ ⪯ θΔᵀΔ + D²/θ`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::model::NetworkModel;
use crate::optim::{eig_tolerance, lambda_max, Matrix, MetzlerMatrix, OptimError, MAX_EIG_ORDER};
use crate::positive_lti::{certify_positive_lti, diagonal_lmi, verify_diagonal_metric};
use crate::separable_metric::MetricError;

const THETA_RANGE: (f64, f64) = (1e-6, 1e6);
const GOLDEN_STEPS: usize = 80;
const REFINE_STEPS: usize = 200;

#[derive(Debug, Error)]
pub enum SProcError {
    #[error("invalid uncertainty description: {0}")]
    Invalid(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Structure matrix `H ≥ 0` and gain bound `ψ ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertainCoupling {
    h: Matrix,
    psi: f64,
}

impl UncertainCoupling {
    pub fn new(h: Matrix, psi: f64) -> Result<Self, SProcError> {
        if !h.is_square() {
            return Err(SProcError::Invalid("H must be square".into()));
        }
        if !h.is_finite() {
            return Err(SProcError::Invalid("H has non-finite entries".into()));
        }
        for i in 0..h.rows() {
            for j in 0..h.cols() {
                if h[(i, j)] < 0.0 {
                    return Err(SProcError::Invalid(format!(
                        "H({},{}) = {} is negative",
                        i + 1,
                        j + 1,
                        h[(i, j)]
                    )));
                }
            }
        }
        if !(psi >= 0.0 && psi.is_finite()) {
            return Err(SProcError::Invalid(format!("ψ = {psi} must be finite and nonnegative")));
        }
        Ok(Self { h, psi })
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn with_psi(&self, psi: f64) -> Result<Self, SProcError> {
        Self::new(self.h.clone(), psi)
    }

    /// `ψ²HᵀH`.
    pub fn bound(&self) -> Matrix {
        self.h.transpose().matmul(&self.h).scale(self.psi * self.psi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SProcCertificate {
    /// Diagonal of `M`, normalized to max 1.
    pub d: Vec<f64>,
    pub theta: f64,
    pub rate: f64,
    /// `−λ_max` of the assembled block (or of `ĀᵀD + DĀ + 2λD` when `ψ = 0`).
    pub lmi_margin: f64,
    pub comparison: MetzlerMatrix,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Infeasibility {
    /// `Ā_ii + λ + ψ‖H e_i‖₂ ≥ 0`: the `(i,i)` entry of the Schur complement
    /// is nonnegative for every `d_i, θ`.
    DiagonalBound { node: usize, value: f64 },
    /// `Ā + λI` is not Hurwitz, so even `ψ = 0` fails.
    ShiftedNotHurwitz { best_margin: f64 },
    /// Search budget spent without a negative definite block.
    BudgetExhausted { best_lambda_max: f64, d: Vec<f64>, theta: f64 },
}

impl Infeasibility {
    pub fn is_certified(&self) -> bool {
        !matches!(self, Infeasibility::BudgetExhausted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SProcOutcome {
    Certified(SProcCertificate),
    Infeasible(Infeasibility),
}

/// The `2n × 2n` block matrix of the robust LMI.
pub fn lmi_block(a: &Matrix, u: &UncertainCoupling, d: &[f64], theta: f64, rate: f64) -> Matrix {
    let n = a.rows();
    let top = diagonal_lmi(a, d, rate).add(&u.bound().scale(theta));
    Matrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => top[(i, j)],
        (true, false) => if j - n == i { d[i] } else { 0.0 },
        (false, true) => if i - n == j { d[j] } else { 0.0 },
        (false, false) => if i == j { -theta } else { 0.0 },
    })
}

/// Certificate for the model's comparison matrix on its domain box.
pub fn certify_uncertain(
    m: &NetworkModel,
    u: &UncertainCoupling,
    rate: f64,
) -> Result<SProcOutcome, SProcError> {
    let a = m.sup_jacobian_bound().map_err(MetricError::from)?;
    certify_uncertain_matrix(&a, u, rate)
}

pub fn certify_uncertain_matrix(
    a: &MetzlerMatrix,
    u: &UncertainCoupling,
    rate: f64,
) -> Result<SProcOutcome, SProcError> {
    let n = a.order();
    if u.h().rows() != n {
        return Err(SProcError::Invalid(format!(
            "H is {}x{} but the network has {n} nodes",
            u.h().rows(),
            u.h().cols()
        )));
    }
    if 2 * n > MAX_EIG_ORDER {
        return Err(OptimError::TooLarge { n: 2 * n, cap: MAX_EIG_ORDER }.into());
    }
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(SProcError::Invalid(format!("rate {rate} must be finite and nonnegative")));
    }
    let am = a.matrix();

    if u.psi() == 0.0 {
        return zero_uncertainty(a, rate);
    }

    for i in 0..n {
        let col = (0..n).map(|r| u.h()[(r, i)].powi(2)).sum::<f64>().sqrt();
        let value = am[(i, i)] + rate + u.psi() * col;
        if value >= 0.0 {
            return Ok(SProcOutcome::Infeasible(Infeasibility::DiagonalBound {
                node: i + 1,
                value,
            }));
        }
    }

    let shifted = MetzlerMatrix::new(am.add(&Matrix::identity(n).scale(rate)))?;
    let mut d = match certify_positive_lti(&shifted) {
        Ok(c) => normalize(c.d),
        Err(crate::positive_lti::PositiveError::NotHurwitz { best_margin }) => {
            return Ok(SProcOutcome::Infeasible(Infeasibility::ShiftedNotHurwitz {
                best_margin,
            }))
        }
        Err(e) => return Err(MetricError::Positive(e).into()),
    };

    let eval = |d: &[f64], theta: f64| -> Result<f64, OptimError> {
        lambda_max(&lmi_block(am, u, d, theta, rate))
    };
    let (mut theta, mut best) = golden_theta(&eval, &d)?;

    let mut step = 0.5;
    let mut improved_in_sweep = false;
    for k in 0..REFINE_STEPS {
        let i = k % n;
        for factor in [1.0 + step, 1.0 / (1.0 + step)] {
            let mut trial = d.clone();
            trial[i] *= factor;
            let f = eval(&trial, theta)?;
            if f < best {
                best = f;
                d = trial;
                improved_in_sweep = true;
                break;
            }
        }
        if i == n - 1 {
            if !improved_in_sweep {
                step *= 0.5;
            }
            improved_in_sweep = false;
        }
    }
    // the LMI is homogeneous in (d, θ), so rescaling d only rescales θ
    let dmax = d.iter().copied().fold(0.0_f64, f64::max);
    d = normalize(d);
    let (theta2, best2) = golden_theta(&eval, &d)?;
    if best2 <= best {
        theta = theta2;
        best = best2;
    } else {
        theta /= dmax;
        best = eval(&d, theta)?;
    }

    let block = lmi_block(am, u, &d, theta, rate);
    if best < -eig_tolerance(&block) {
        Ok(SProcOutcome::Certified(SProcCertificate {
            d,
            theta,
            rate,
            lmi_margin: -best,
            comparison: a.clone(),
            psi: u.psi(),
        }))
    } else {
        Ok(SProcOutcome::Infeasible(Infeasibility::BudgetExhausted {
            best_lambda_max: best,
            d,
            theta,
        }))
    }
}

fn zero_uncertainty(a: &MetzlerMatrix, rate: f64) -> Result<SProcOutcome, SProcError> {
    let am = a.matrix();
    let n = a.order();
    let mut candidates = Vec::new();
    if let Ok(c) = certify_positive_lti(a) {
        candidates.push(normalize(c.d));
    }
    let shifted = MetzlerMatrix::new(am.add(&Matrix::identity(n).scale(rate)))?;
    if let Ok(c) = certify_positive_lti(&shifted) {
        candidates.push(normalize(c.d));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for d in candidates {
        let lm = lambda_max(&diagonal_lmi(am, &d, rate))?;
        if verify_diagonal_metric(am, &d, rate)? {
            return Ok(SProcOutcome::Certified(SProcCertificate {
                d,
                theta: 1.0,
                rate,
                lmi_margin: -lm,
                comparison: a.clone(),
                psi: 0.0,
            }));
        }
        if best.as_ref().is_none_or(|(b, _)| lm < *b) {
            best = Some((lm, d));
        }
    }
    Ok(SProcOutcome::Infeasible(match best {
        None => Infeasibility::ShiftedNotHurwitz {
            best_margin: f64::NEG_INFINITY,
        },
        Some((best_lambda_max, d)) => Infeasibility::BudgetExhausted {
            best_lambda_max,
            d,
            theta: 1.0,
        },
    }))
}

fn normalize(d: Vec<f64>) -> Vec<f64> {
    let m = d.iter().copied().fold(0.0_f64, f64::max);
    d.into_iter().map(|x| x / m).collect()
}

/// Golden-section search over `log θ`; `λ_max` is convex in `θ`, hence
/// unimodal in `log θ`.
fn golden_theta<F>(eval: &F, d: &[f64]) -> Result<(f64, f64), OptimError>
where
    F: Fn(&[f64], f64) -> Result<f64, OptimError>,
{
    let ratio = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (THETA_RANGE.0.ln(), THETA_RANGE.1.ln());
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = eval(d, x1.exp())?;
    let mut f2 = eval(d, x2.exp())?;
    for _ in 0..GOLDEN_STEPS {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = eval(d, x1.exp())?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = eval(d, x2.exp())?;
        }
    }
    Ok(if f1 <= f2 { (x1.exp(), f1) } else { (x2.exp(), f2) })
}

/// `Δ = ψ·U·diag(s)·H`, so `ΔᵀΔ = ψ²Hᵀdiag(s)²H ⪯ ψ²HᵀH` for orthogonal `U`
/// and `s ∈ [0,1]ⁿ`.
pub fn adversarial_from(u: &UncertainCoupling, orth: &Matrix, s: &[f64]) -> Matrix {
    let sh = Matrix::from_fn(u.h().rows(), u.h().cols(), |i, j| s[i] * u.h()[(i, j)]);
    orth.matmul(&sh).scale(u.psi())
}

/// Random admissible constant Jacobian of the uncertain coupling.
pub fn sample_adversarial_h<R: Rng + ?Sized>(
    u: &UncertainCoupling,
    rng: &mut R,
) -> Result<Matrix, OptimError> {
    let n = u.h().rows();
    let orth = random_orthogonal(n, rng);
    let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let delta = adversarial_from(u, &orth, &s);
    let gap = delta.transpose().matmul(&delta).sub(&u.bound());
    let top = lambda_max(&gap.symmetrized())?;
    let scale = u.psi().powi(2) * u.h().frobenius().powi(2);
    if top > 1e-12 * scale.max(1.0) {
        return Err(OptimError::NumericalFailure(format!(
            "sampled Δ violates the bound by {top:.3e}"
        )));
    }
    Ok(delta)
}

/// Haar-distributed orthogonal matrix via Gram–Schmidt on a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    loop {
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut ok = true;
        for k in 0..n {
            for j in 0..k {
                let dot: f64 = (0..n).map(|i| cols[k][i] * cols[j][i]).sum();
                for i in 0..n {
                    cols[k][i] -= dot * cols[j][i];
                }
            }
            let norm = cols[k].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols[k].iter_mut().for_each(|v| *v /= norm);
        }
        if ok {
            return Matrix::from_fn(n, n, |i, j| cols[j][i]);
        }
    }
}
