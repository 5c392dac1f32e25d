//! Fixed-step RK4 integration and simulation-based property checks.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Env, Expr, ExprError, Interval};
use crate::model::{uniform, ModelError, NetworkModel};
use crate::optim::{Matrix, MetzlerMatrix};
use crate::positive_lti::{certify_positive_lti, verify_diagonal_metric, PositiveError};
use crate::separable_metric::{MetricKind, SeparableCertificate};

pub const DEFAULT_STEP: f64 = 1e-3;
const AUDIT_EVERY: usize = 100;
const AUDIT_TOL: f64 = 1e-6;
/// Fits of the decay exponent start at this fraction of the horizon.
pub const FIT_WINDOW_START: f64 = 0.1;
/// Weighted distances below this fraction of the initial one are excluded
/// from the decay fit (floating-point floor).
pub const FIT_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("feedback failed at t = {t}: {message}")]
    Feedback { t: f64, message: String },
    #[error("invalid integrator settings: {0}")]
    Settings(String),
    #[error("factored system entry ({row},{col}): {source}")]
    Entry {
        row: usize,
        col: usize,
        #[source]
        source: ExprError,
    },
    #[error("N({row},{col}) = {value:.3e} < 0 at t = {t} for sample {sample}; the factored system is not positive there")]
    PositivityViolation {
        sample: usize,
        t: f64,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("dominating matrix of sample {sample} is not certified: {source}")]
    Domination {
        sample: usize,
        #[source]
        source: PositiveError,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorOptions {
    pub step: f64,
    pub t0: f64,
    pub tf: f64,
}

impl IntegratorOptions {
    pub fn for_model(m: &NetworkModel) -> Self {
        let (t0, tf) = m.horizon();
        Self {
            step: DEFAULT_STEP,
            t0,
            tf,
        }
    }

    pub fn with_step(self, step: f64) -> Self {
        Self { step, ..self }
    }

    pub fn with_horizon(self, t0: f64, tf: f64) -> Self {
        Self { t0, tf, ..self }
    }

    fn steps(&self) -> Result<(usize, f64), SimError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(SimError::Settings(format!("step {} must be positive", self.step)));
        }
        if !(self.tf > self.t0) {
            return Err(SimError::Settings(format!(
                "horizon [{}, {}] is empty",
                self.t0, self.tf
            )));
        }
        let n = ((self.tf - self.t0) / self.step - 1e-9).ceil().max(1.0) as usize;
        Ok((n, (self.tf - self.t0) / n as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimWarning {
    /// First time the state left the domain box.
    DomainExit { t: f64, node: usize },
    /// Step-halving estimate above tolerance.
    LocalError { t: f64, estimate: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub step: f64,
    pub method: &'static str,
    pub warnings: Vec<SimWarning>,
    /// Largest step-halving estimate seen.
    pub max_local_error: f64,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one sample")
    }

    pub fn left_domain(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| matches!(w, SimWarning::DomainExit { .. }))
    }

    /// CSV with header `t,x1..xn` plus optional extra named columns.
    pub fn write_csv<W: Write>(
        &self,
        out: &mut W,
        extra: &[(&str, &[Vec<f64>])],
    ) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x{i}")));
        for (name, cols) in extra {
            let width = cols.first().map_or(0, Vec::len);
            if width == 1 {
                header.push(name.to_string());
            } else {
                header.extend((1..=width).map(|i| format!("{name}{i}")));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(f64::to_string));
            for (_, cols) in extra {
                row.extend(cols[k].iter().map(f64::to_string));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn rk4_step<F>(rhs: &mut F, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>, SimError>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, SimError>,
{
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + s * y).collect()
    };
    let k1 = rhs(t, x)?;
    let k2 = rhs(t + 0.5 * h, &axpy(x, 0.5 * h, &k1))?;
    let k3 = rhs(t + 0.5 * h, &axpy(x, 0.5 * h, &k2))?;
    let k4 = rhs(t + h, &axpy(x, h, &k3))?;
    Ok((0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Classical RK4 on an arbitrary right-hand side, with a step-halving audit
/// every 100 steps.
pub fn integrate_fn<F>(
    mut rhs: F,
    x0: &[f64],
    opts: &IntegratorOptions,
    mut domain_check: impl FnMut(&[f64]) -> Option<usize>,
) -> Result<Trajectory, SimError>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, SimError>,
{
    let (n_steps, h) = opts.steps()?;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut warnings = Vec::new();
    let mut exited = false;
    let mut max_local_error: f64 = 0.0;

    let mut x = x0.to_vec();
    if let Some(node) = domain_check(&x) {
        warnings.push(SimWarning::DomainExit { t: opts.t0, node });
        exited = true;
    }
    times.push(opts.t0);
    states.push(x.clone());
    for k in 0..n_steps {
        let t = opts.t0 + k as f64 * h;
        let next = rk4_step(&mut rhs, t, &x, h)?;
        if k % AUDIT_EVERY == 0 {
            let half = rk4_step(&mut rhs, t, &x, 0.5 * h)?;
            let two_half = rk4_step(&mut rhs, t + 0.5 * h, &half, 0.5 * h)?;
            let est = next
                .iter()
                .zip(&two_half)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            max_local_error = max_local_error.max(est);
            if est > AUDIT_TOL {
                warnings.push(SimWarning::LocalError { t, estimate: est });
            }
        }
        let t_next = opts.t0 + (k + 1) as f64 * h;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { t: t_next });
        }
        if !exited {
            if let Some(node) = domain_check(&next) {
                warnings.push(SimWarning::DomainExit { t: t_next, node });
                exited = true;
            }
        }
        x = next;
        times.push(t_next);
        states.push(x.clone());
    }
    Ok(Trajectory {
        times,
        states,
        step: h,
        method: "RK4",
        warnings,
        max_local_error,
    })
}

fn domain_exit(m: &NetworkModel) -> impl FnMut(&[f64]) -> Option<usize> + '_ {
    move |x: &[f64]| {
        x.iter()
            .zip(m.nodes())
            .position(|(v, n)| !n.domain.contains(*v))
    }
}

/// Integrates the open-loop model (`u = 0`).
pub fn integrate(
    m: &NetworkModel,
    x0: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory, SimError> {
    integrate_fn(
        |t, x| Ok(m.drift(x, t)?),
        x0,
        opts,
        domain_exit(m),
    )
}

/// Integrates `ẋ = f(x, t) + B u(x, t)` under a state feedback.
pub fn integrate_with_feedback<U>(
    m: &NetworkModel,
    x0: &[f64],
    mut feedback: U,
    opts: &IntegratorOptions,
) -> Result<Trajectory, SimError>
where
    U: FnMut(&[f64], f64) -> Result<Vec<f64>, String>,
{
    integrate_fn(
        |t, x| {
            let u = feedback(x, t).map_err(|message| SimError::Feedback { t, message })?;
            Ok(m.vector_field(x, t, Some(&u))?)
        },
        x0,
        opts,
        domain_exit(m),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderReport {
    pub pairs: usize,
    /// `max_{pair, t, i} (x^a_i(t) − x^b_i(t))` for `x^a(0) ≤ x^b(0)`; ≤ 0 means ordered.
    pub max_violation: f64,
    pub worst_pair: Option<usize>,
}

/// Integrates random ordered pairs `x^a(0) ≤ x^b(0)` inside the box and
/// reports the largest loss of order.
pub fn check_order_preservation(
    m: &NetworkModel,
    pairs: usize,
    seed: u64,
    opts: &IntegratorOptions,
) -> Result<OrderReport, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_pair = None;
    for k in 0..pairs {
        let (xa, _) = m.sample_point(&mut rng);
        let xb: Vec<f64> = xa
            .iter()
            .zip(m.nodes())
            .map(|(a, n)| uniform(&mut rng, *a, n.domain.hi))
            .collect();
        let ta = integrate(m, &xa, opts)?;
        let tb = integrate(m, &xb, opts)?;
        let v = ta
            .states
            .iter()
            .zip(&tb.states)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y))
            .fold(f64::NEG_INFINITY, f64::max);
        if v > worst {
            worst = v;
            worst_pair = Some(k);
        }
    }
    Ok(OrderReport {
        pairs,
        max_violation: if pairs == 0 { 0.0 } else { worst },
        worst_pair,
    })
}

/// Distance between two states in the certificate's metric.
pub fn weighted_distance(cert: &SeparableCertificate, a: &[f64], b: &[f64]) -> f64 {
    let w = &cert.weights;
    let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
    match cert.kind {
        MetricKind::DiagonalQuadratic => diffs
            .zip(w)
            .map(|(d, m)| m * d * d)
            .sum::<f64>()
            .sqrt(),
        MetricKind::SumL1 => diffs.zip(w).map(|(d, p)| p * d).sum(),
        MetricKind::MaxLinf => diffs.zip(w).map(|(d, q)| q * d).fold(0.0, f64::max),
    }
}

/// Least-squares slope of `ln d` against `t`, negated.
fn fitted_rate(times: &[f64], dist: &[f64], t_start: f64) -> Option<f64> {
    let d0 = dist[0];
    let floor = (FIT_FLOOR * d0).max(1e-280);
    let usable: Vec<(f64, f64)> = times
        .iter()
        .zip(dist)
        .take_while(|(_, d)| **d > floor)
        .map(|(t, d)| (*t, d.ln()))
        .collect();
    let window: Vec<(f64, f64)> = usable.iter().copied().filter(|(t, _)| *t >= t_start).collect();
    let pts = if window.len() >= 10 { window } else { usable };
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub certified_rate: f64,
    /// Smallest fitted decay exponent over the measured pairs.
    pub worst_rate: f64,
    pub rates: Vec<f64>,
    pub skipped: usize,
    pub window: (f64, f64),
    pub pass: bool,
}

/// Fits the decay exponent of the certificate's distance along random
/// trajectory pairs over the window `[t0 + 0.1·T, tf]`.
pub fn measure_contraction(
    m: &NetworkModel,
    cert: &SeparableCertificate,
    pairs: usize,
    seed: u64,
    opts: &IntegratorOptions,
) -> Result<ContractionReport, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = (0..pairs)
        .map(|_| (m.sample_point(&mut rng).0, m.sample_point(&mut rng).0))
        .collect::<Vec<_>>();
    measure_contraction_from(m, cert, &starts, opts)
}

pub fn measure_contraction_from(
    m: &NetworkModel,
    cert: &SeparableCertificate,
    starts: &[(Vec<f64>, Vec<f64>)],
    opts: &IntegratorOptions,
) -> Result<ContractionReport, SimError> {
    let t_start = opts.t0 + FIT_WINDOW_START * (opts.tf - opts.t0);
    let mut rates = Vec::new();
    let mut skipped = 0;
    for (xa, xb) in starts {
        if weighted_distance(cert, xa, xb) < 1e-12 {
            skipped += 1;
            continue;
        }
        let ta = integrate(m, xa, opts)?;
        let tb = integrate(m, xb, opts)?;
        let dist: Vec<f64> = ta
            .states
            .iter()
            .zip(&tb.states)
            .map(|(a, b)| weighted_distance(cert, a, b))
            .collect();
        match fitted_rate(&ta.times, &dist, t_start) {
            Some(r) => rates.push(r),
            None => skipped += 1,
        }
    }
    let worst_rate = rates.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ContractionReport {
        certified_rate: cert.rate,
        worst_rate,
        pass: !rates.is_empty() && worst_rate >= 0.95 * cert.rate,
        rates,
        skipped,
        window: (t_start, opts.tf),
    })
}

/// `ẋ = N(x, t) x` with `N` given entrywise over the full state.
#[derive(Debug, Clone)]
pub struct FactoredSystem {
    entries: Vec<Vec<Expr>>,
    domain: Vec<Interval>,
    horizon: (f64, f64),
}

impl FactoredSystem {
    pub fn new(
        entries: Vec<Vec<Expr>>,
        domain: Vec<Interval>,
        horizon: (f64, f64),
    ) -> Result<Self, SimError> {
        let n = entries.len();
        if n == 0 || entries.iter().any(|r| r.len() != n) || domain.len() != n {
            return Err(SimError::Settings(
                "factored system needs a square N and one domain interval per state".into(),
            ));
        }
        for (i, row) in entries.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                if e.max_state_index().is_some_and(|k| k >= n) {
                    return Err(SimError::Entry {
                        row: i + 1,
                        col: j + 1,
                        source: ExprError::StateIndex {
                            index: e.max_state_index().unwrap_or(0) + 1,
                            dim: n,
                        },
                    });
                }
            }
        }
        if !(horizon.0 < horizon.1) {
            return Err(SimError::Settings("horizon must satisfy t0 < tf".into()));
        }
        Ok(Self {
            entries,
            domain,
            horizon,
        })
    }

    pub fn parse(
        entries: &[Vec<String>],
        domain: Vec<Interval>,
        horizon: (f64, f64),
    ) -> Result<Self, SimError> {
        let mut parsed = Vec::with_capacity(entries.len());
        for (i, row) in entries.iter().enumerate() {
            let mut r = Vec::with_capacity(row.len());
            for (j, s) in row.iter().enumerate() {
                r.push(Expr::parse(s).map_err(|source| SimError::Entry {
                    row: i + 1,
                    col: j + 1,
                    source,
                })?);
            }
            parsed.push(r);
        }
        Self::new(parsed, domain, horizon)
    }

    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn domain(&self) -> &[Interval] {
        &self.domain
    }

    pub fn horizon(&self) -> (f64, f64) {
        self.horizon
    }

    pub fn matrix_at(&self, x: &[f64], t: f64) -> Result<Matrix, SimError> {
        let env = Env { x: 0.0, t, state: x };
        let mut m = Matrix::zeros(self.n(), self.n());
        for (i, row) in self.entries.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                m[(i, j)] = e.eval_env(&env).map_err(|source| SimError::Entry {
                    row: i + 1,
                    col: j + 1,
                    source,
                })?;
            }
        }
        Ok(m)
    }

    fn rhs(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, SimError> {
        Ok(self.matrix_at(x, t)?.matvec(x))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VirtualSample {
    pub x0: Vec<f64>,
    pub dominating: MetzlerMatrix,
    /// Constant diagonal weights `m_i` for this solution.
    pub weights: Vec<f64>,
    pub rate: f64,
    /// Whether `verify_diagonal_metric(dominating, weights, rate)` holds.
    pub verified: bool,
    /// `max_t |y(t) − x(t)|` for the virtual run seeded with `y(0) = x(0)`.
    pub reproduction_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VirtualReport {
    pub sample_count: usize,
    pub samples: Vec<VirtualSample>,
    pub max_reproduction_error: f64,
    pub all_verified: bool,
}

/// Cubic Hermite interpolation of a trajectory from states and slopes.
struct HermiteTrack<'a> {
    traj: &'a Trajectory,
    slopes: Vec<Vec<f64>>,
}

impl HermiteTrack<'_> {
    fn at(&self, t: f64) -> Vec<f64> {
        let times = &self.traj.times;
        let k = times.partition_point(|s| *s <= t).clamp(1, times.len() - 1) - 1;
        let (t0, t1) = (times[k], times[k + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        if s == 0.0 {
            return self.traj.states[k].clone();
        }
        if s == 1.0 {
            return self.traj.states[k + 1].clone();
        }
        let (h00, h10) = (2.0 * s.powi(3) - 3.0 * s * s + 1.0, s.powi(3) - 2.0 * s * s + s);
        let (h01, h11) = (-2.0 * s.powi(3) + 3.0 * s * s, s.powi(3) - s * s);
        let (x0, x1) = (&self.traj.states[k], &self.traj.states[k + 1]);
        let (d0, d1) = (&self.slopes[k], &self.slopes[k + 1]);
        (0..x0.len())
            .map(|i| h00 * x0[i] + h10 * h * d0[i] + h01 * x1[i] + h11 * h * d1[i])
            .collect()
    }
}

/// Certifies `ẋ = N(x, t) x` through the virtual system `ẏ = N(x(t), t) y`
/// along sampled solutions.
///
/// For each sampled `x(0)` in the domain box the solution is integrated, the
/// Metzler property of `N(x(t), t)` is checked on the grid, and the elementwise
/// maximum over the grid is certified with constant diagonal weights. The
/// virtual system is then run separately with `x(t)` as an exogenous signal
/// and `y(0) = x(0)`; it must reproduce `x`.
pub fn virtual_system_certify(
    fs: &FactoredSystem,
    x0_samples: usize,
    seed: u64,
    opts: &IntegratorOptions,
) -> Result<VirtualReport, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = fs.n();
    let mut samples = Vec::with_capacity(x0_samples);
    for s in 0..x0_samples {
        let x0: Vec<f64> = fs
            .domain
            .iter()
            .map(|d| uniform(&mut rng, d.lo, d.hi))
            .collect();
        let traj = integrate_fn(|t, x| fs.rhs(t, x), &x0, opts, |_| None)?;

        let mut dominating: Option<Matrix> = None;
        let mut slopes = Vec::with_capacity(traj.times.len());
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let nm = fs.matrix_at(x, *t)?;
            for i in 0..n {
                for j in 0..n {
                    if i != j && nm[(i, j)] < 0.0 {
                        return Err(SimError::PositivityViolation {
                            sample: s,
                            t: *t,
                            row: i + 1,
                            col: j + 1,
                            value: nm[(i, j)],
                        });
                    }
                }
            }
            slopes.push(nm.matvec(x));
            dominating = Some(match dominating {
                None => nm,
                Some(d) => d.max_elementwise(&nm),
            });
        }
        let dominating = MetzlerMatrix::new(dominating.expect("nonempty grid"))
            .map_err(|e| SimError::Settings(e.to_string()))?;
        let cert = certify_positive_lti(&dominating)
            .map_err(|source| SimError::Domination { sample: s, source })?;
        let verified = verify_diagonal_metric(dominating.matrix(), &cert.d, cert.decay)
            .map_err(|e| SimError::Settings(e.to_string()))?;

        let track = HermiteTrack {
            traj: &traj,
            slopes,
        };
        let yrun = integrate_fn(
            |t, y| Ok(fs.matrix_at(&track.at(t), t)?.matvec(y)),
            &x0,
            opts,
            |_| None,
        )?;
        let reproduction_error = yrun
            .states
            .iter()
            .zip(&traj.states)
            .flat_map(|(y, x)| y.iter().zip(x).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);

        samples.push(VirtualSample {
            x0,
            dominating,
            weights: cert.d,
            rate: cert.decay,
            verified,
            reproduction_error,
        });
    }
    Ok(VirtualReport {
        sample_count: x0_samples,
        max_reproduction_error: samples
            .iter()
            .map(|s| s.reproduction_error)
            .fold(0.0, f64::max),
        all_verified: samples.iter().all(|s| s.verified),
        samples,
    })
}
