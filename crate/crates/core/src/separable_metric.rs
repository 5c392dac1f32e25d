//! Separable contraction metrics for monotone networks.
//!
//! The Jacobian of `ẋ_i = g_i(x_i, t) + Σ_j K_ij(t) x_j` differs from the
//! comparison matrix `Ā = Ḡ + K̄` only on the diagonal, and only by nonpositive
//! amounts. Any diagonal metric `D` with `ĀᵀD + DĀ + 2λD ⪯ 0` therefore gives
//! `JᵀD + DJ + 2λD ⪯ 0` for every Jacobian on the box.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::Interval;
use crate::model::{ModelError, MonotoneViolation, NetworkModel};
use crate::optim::{lambda_max, Matrix, MetzlerMatrix, OptimError};
use crate::positive_lti::{
    certify_positive_lti, diagonal_lmi, verify_diagonal_metric, verify_weight_decay,
    PositiveCertificate, PositiveError,
};
use crate::simulator::{integrate, IntegratorOptions, SimError};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("network is not monotone: {} negative off-diagonal coupling entr{}", violations.len(), if violations.len() == 1 { "y" } else { "ies" })]
    NotMonotone { violations: Vec<MonotoneViolation> },
    #[error("node '{node}' has no finite upper bound of ∂g/∂x on its box (interval {bound})")]
    NoFiniteSup { node: String, bound: Interval },
    #[error("comparison matrix is not Hurwitz (best LP margin {best_margin:.3e})")]
    ComparisonNotHurwitz {
        best_margin: f64,
        comparison: MetzlerMatrix,
    },
    #[error("trajectory tube leaves the domain of node {node} at t = {t}")]
    TubeUnbounded { node: usize, t: f64 },
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Positive(PositiveError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

impl MetricError {
    /// Short machine-readable name of the obstruction.
    pub fn reason(&self) -> &'static str {
        match self {
            MetricError::NotMonotone { .. } => "not_monotone",
            MetricError::NoFiniteSup { .. } => "no_finite_sup",
            MetricError::ComparisonNotHurwitz { .. } => "comparison_not_hurwitz",
            MetricError::TubeUnbounded { .. } => "tube_unbounded",
            MetricError::Model(_) => "model_error",
            MetricError::Positive(_) => "numerical_failure",
            MetricError::Sim(_) => "simulation_failed",
            MetricError::Optim(_) => "numerical_failure",
        }
    }
}

impl From<ModelError> for MetricError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NotMonotone { violations } => MetricError::NotMonotone { violations },
            ModelError::NoFiniteSup { node, bound } => MetricError::NoFiniteSup { node, bound },
            other => MetricError::Model(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// `V = Σ m_i δ_i²`.
    DiagonalQuadratic,
    /// `V = Σ p_i |δ_i|`.
    SumL1,
    /// `V = max_i q_i |δ_i|`.
    MaxLinf,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::DiagonalQuadratic => "diagonal_quadratic",
            MetricKind::SumL1 => "sum_l1",
            MetricKind::MaxLinf => "max_linf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    GlobalBox,
    TrajectoryTube,
}

/// What the certificate was computed from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub comparison: MetzlerMatrix,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub p_margin: f64,
    pub v_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparableCertificate {
    pub kind: MetricKind,
    pub weights: Vec<f64>,
    pub rate: f64,
    pub scope: Scope,
    pub want_rate: Option<f64>,
    /// `Some(rate ≥ want_rate)` when a target rate was given.
    pub want_satisfied: Option<bool>,
    pub provenance: Provenance,
}

impl SeparableCertificate {
    pub fn comparison(&self) -> &MetzlerMatrix {
        &self.provenance.comparison
    }

    /// Rechecks the certificate against its stored comparison matrix.
    pub fn verify(&self) -> Result<bool, OptimError> {
        if self.weights.iter().any(|w| !(*w > 0.0)) || !(self.rate > 0.0) {
            return Ok(false);
        }
        let a = self.comparison().matrix();
        Ok(match self.kind {
            MetricKind::DiagonalQuadratic => verify_diagonal_metric(a, &self.weights, self.rate)?,
            MetricKind::SumL1 => {
                let ones = vec![1.0; self.weights.len()];
                verify_weight_decay(self.comparison(), &self.weights, &ones).sum_margin > 0.0
            }
            MetricKind::MaxLinf => {
                let ones = vec![1.0; self.weights.len()];
                verify_weight_decay(self.comparison(), &ones, &self.weights).max_margin > 0.0
            }
        })
    }
}

/// `min_j −(Āᵀp)_j / p_j`: decay rate of `Σ p_i|δ_i|`.
pub fn sum_rate(a: &Matrix, p: &[f64]) -> f64 {
    a.tr_matvec(p)
        .iter()
        .zip(p)
        .map(|(v, w)| -v / w)
        .fold(f64::INFINITY, f64::min)
}

/// `min_i −(Ā·(1/q))_i · q_i`: decay rate of `max_i q_i|δ_i|`.
pub fn max_rate(a: &Matrix, q: &[f64]) -> f64 {
    let v: Vec<f64> = q.iter().map(|x| 1.0 / x).collect();
    a.matvec(&v)
        .iter()
        .zip(&v)
        .map(|(av, vi)| -av / vi)
        .fold(f64::INFINITY, f64::min)
}

fn certify_comparison(
    a: MetzlerMatrix,
    kind: MetricKind,
    scope: Scope,
    want_rate: Option<f64>,
) -> Result<SeparableCertificate, MetricError> {
    let cert: PositiveCertificate = match certify_positive_lti(&a) {
        Ok(c) => c,
        Err(PositiveError::NotHurwitz { best_margin }) => {
            return Err(MetricError::ComparisonNotHurwitz {
                best_margin,
                comparison: a,
            })
        }
        Err(PositiveError::Optim(e)) => return Err(e.into()),
        Err(e) => return Err(MetricError::Positive(e)),
    };
    let (weights, rate) = match kind {
        MetricKind::DiagonalQuadratic => (cert.d.clone(), cert.decay),
        MetricKind::SumL1 => (cert.p.clone(), sum_rate(a.matrix(), &cert.p)),
        MetricKind::MaxLinf => (cert.q.clone(), max_rate(a.matrix(), &cert.q)),
    };
    if !(rate > 0.0) {
        return Err(MetricError::ComparisonNotHurwitz {
            best_margin: rate,
            comparison: a,
        });
    }
    Ok(SeparableCertificate {
        kind,
        weights,
        rate,
        scope,
        want_rate,
        want_satisfied: want_rate.map(|w| rate >= w),
        provenance: Provenance {
            comparison: a,
            p: cert.p,
            q: cert.q,
            p_margin: cert.p_margin,
            v_margin: cert.v_margin,
        },
    })
}

/// Diagonal quadratic certificate on the model's domain box.
pub fn certify_network(
    m: &NetworkModel,
    want_rate: Option<f64>,
) -> Result<SeparableCertificate, MetricError> {
    certify_network_kind(m, MetricKind::DiagonalQuadratic, want_rate)
}

pub fn certify_network_kind(
    m: &NetworkModel,
    kind: MetricKind,
    want_rate: Option<f64>,
) -> Result<SeparableCertificate, MetricError> {
    let a = m.sup_jacobian_bound()?;
    certify_comparison(a, kind, Scope::GlobalBox, want_rate)
}

#[derive(Debug, Clone, Serialize)]
pub struct LmiAudit {
    pub samples: usize,
    /// Largest `λ_max(JᵀD + DJ + 2λD)` with `D` scaled to max weight 1.
    pub max_eig: f64,
    pub worst_x: Vec<f64>,
    pub worst_t: f64,
    pub rate: f64,
}

/// Samples `(x, t)` uniformly in the box and horizon and evaluates the
/// contraction LMI of a diagonal quadratic certificate at each Jacobian.
pub fn pointwise_lmi_audit(
    m: &NetworkModel,
    cert: &SeparableCertificate,
    samples: usize,
    seed: u64,
) -> Result<LmiAudit, MetricError> {
    audit_with_rate(m, &cert.weights, cert.rate, samples, seed)
}

/// Same as [`pointwise_lmi_audit`] with an explicit rate.
pub fn audit_with_rate(
    m: &NetworkModel,
    weights: &[f64],
    rate: f64,
    samples: usize,
    seed: u64,
) -> Result<LmiAudit, MetricError> {
    if weights.len() != m.n() {
        return Err(OptimError::Dimension("weight vector does not match the model".into()).into());
    }
    let wmax = weights.iter().copied().fold(0.0_f64, f64::max);
    let d: Vec<f64> = weights.iter().map(|w| w / wmax).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = LmiAudit {
        samples,
        max_eig: f64::NEG_INFINITY,
        worst_x: Vec::new(),
        worst_t: f64::NAN,
        rate,
    };
    for _ in 0..samples {
        let (x, t) = m.sample_point(&mut rng);
        let j = m.jacobian_at(&x, t)?;
        let e = lambda_max(&diagonal_lmi(&j.matrix, &d, rate))?;
        if e > report.max_eig {
            report.max_eig = e;
            report.worst_x = x;
            report.worst_t = t;
        }
    }
    Ok(report)
}

/// Certificate valid in a tube of radius `tube_radius` around the solution
/// from `x0`.
///
/// Each integration step contributes the box hull of its two endpoint states
/// widened by the radius, over its time interval; the comparison matrices of
/// those boxes are combined by elementwise max.
pub fn local_metric_along_trajectory(
    m: &NetworkModel,
    x0: &[f64],
    tube_radius: f64,
    opts: &IntegratorOptions,
) -> Result<SeparableCertificate, MetricError> {
    if !(tube_radius >= 0.0 && tube_radius.is_finite()) {
        return Err(MetricError::Model(ModelError::Dimension(format!(
            "tube radius {tube_radius} must be finite and nonnegative"
        ))));
    }
    let traj = integrate(m, x0, opts)?;
    let domains = m.domains();
    let mut dominating: Option<Matrix> = None;
    for k in 0..traj.times.len() - 1 {
        let (a, b) = (&traj.states[k], &traj.states[k + 1]);
        let mut boxes = Vec::with_capacity(m.n());
        for i in 0..m.n() {
            let lo = a[i].min(b[i]) - tube_radius;
            let hi = a[i].max(b[i]) + tube_radius;
            let bx = Interval::new(lo, hi).expect("finite states");
            if !bx.is_subset_of(&domains[i]) {
                return Err(MetricError::TubeUnbounded {
                    node: i + 1,
                    t: traj.times[k],
                });
            }
            boxes.push(bx);
        }
        let t = Interval::new(traj.times[k], traj.times[k + 1]).expect("increasing grid");
        let c = m.comparison_matrix(&boxes, t)?.into_inner();
        dominating = Some(match dominating {
            None => c,
            Some(d) => d.max_elementwise(&c),
        });
    }
    let a = MetzlerMatrix::new(dominating.expect("at least one step"))?;
    certify_comparison(a, MetricKind::DiagonalQuadratic, Scope::TrajectoryTube, None)
}
