//! Decentralized tracking control in metric-induced coordinates.
//!
//! For scalar nodes with metric weights `θ_i(x_i)²`, the change of coordinates
//! `z_i = ∫_0^{x_i} θ_i` makes the metric Euclidean, so geodesics are straight
//! segments and `V = |z − z*|²` is a control Lyapunov function for tracking.

use serde::Serialize;
use thiserror::Error;

use crate::model::{ModelError, NetworkModel};
use crate::separable_metric::{MetricKind, SeparableCertificate};
use crate::simulator::{integrate_with_feedback, IntegratorOptions, SimError, Trajectory};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("coordinate change needs a diagonal quadratic certificate, got {0}")]
    UnsupportedKind(&'static str),
    #[error("invalid θ table for node {node}: {reason}")]
    BadTable { node: usize, reason: String },
    #[error("model has no input matrix")]
    NoInput,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("uncontrollable direction: b = 0 while a + 2λV = {excess:.3e} > 0")]
    UncontrollableDirection { excess: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Natural cubic spline with analytic antiderivative, extended by constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
    /// `∫_{x_0}^{x_k} θ`.
    cumulative: Vec<f64>,
    /// `∫_{x_0}^{0} θ`, the origin offset.
    origin: f64,
}

impl ThetaSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, String> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err("need at least two knots and one value per knot".into());
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err("knots and values must be finite".into());
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err("knots must be strictly increasing".into());
        }
        let m = natural_second_derivatives(&xs, &ys);
        let mut s = Self {
            xs,
            ys,
            m,
            cumulative: Vec::new(),
            origin: 0.0,
        };
        let mut c = vec![0.0; n];
        for k in 0..n - 1 {
            c[k + 1] = c[k] + s.segment_integral(k, 1.0);
        }
        s.cumulative = c;
        s.origin = s.integral_from_start(0.0);
        for k in 0..n - 1 {
            for j in 0..=8 {
                let x = s.xs[k] + (s.xs[k + 1] - s.xs[k]) * j as f64 / 8.0;
                let v = s.eval(x);
                if !(v > 0.0) {
                    return Err(format!("θ({x}) = {v} is not positive"));
                }
            }
        }
        Ok(s)
    }

    fn segment(&self, x: f64) -> usize {
        self.xs.partition_point(|k| *k <= x).clamp(1, self.xs.len() - 1) - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let k = self.segment(x);
        let h = self.xs[k + 1] - self.xs[k];
        let b = (x - self.xs[k]) / h;
        let a = 1.0 - b;
        a * self.ys[k]
            + b * self.ys[k + 1]
            + ((a * a * a - a) * self.m[k] + (b * b * b - b) * self.m[k + 1]) * h * h / 6.0
    }

    /// `∫_{x_k}^{x_k + b·h} S` for the cubic on segment `k`.
    fn segment_integral(&self, k: usize, b: f64) -> f64 {
        let h = self.xs[k + 1] - self.xs[k];
        let a = 1.0 - b;
        let ia = -a.powi(4) / 4.0 + a * a / 2.0 - 0.25;
        let ib = b.powi(4) / 4.0 - b * b / 2.0;
        h * (self.ys[k] * (b - b * b / 2.0)
            + self.ys[k + 1] * b * b / 2.0
            + h * h / 6.0 * (self.m[k] * ia + self.m[k + 1] * ib))
    }

    fn integral_from_start(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return (x - self.xs[0]) * self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.cumulative[n - 1] + (x - self.xs[n - 1]) * self.ys[n - 1];
        }
        let k = self.segment(x);
        let b = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
        self.cumulative[k] + self.segment_integral(k, b)
    }

    /// `∫_0^x θ`.
    pub fn integral(&self, x: f64) -> f64 {
        self.integral_from_start(x) - self.origin
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }
}

fn natural_second_derivatives(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for i in 1..n - 1 {
        let h0 = xs[i] - xs[i - 1];
        let h1 = xs[i + 1] - xs[i];
        diag[i - 1] = 2.0 * (h0 + h1);
        upper[i - 1] = h1;
        rhs[i - 1] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
    }
    for i in 1..k {
        let lower = xs[i + 1] - xs[i];
        let f = lower / diag[i - 1];
        diag[i] -= f * upper[i - 1];
        rhs[i] -= f * rhs[i - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for i in (0..k - 1).rev() {
        m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NodeTheta {
    Constant(f64),
    Tabulated(ThetaSpline),
}

impl NodeTheta {
    pub fn theta(&self, x: f64) -> f64 {
        match self {
            NodeTheta::Constant(c) => *c,
            NodeTheta::Tabulated(s) => s.eval(x),
        }
    }

    pub fn z(&self, x: f64) -> f64 {
        match self {
            NodeTheta::Constant(c) => c * x,
            NodeTheta::Tabulated(s) => s.integral(x),
        }
    }

    pub fn x_of_z(&self, z: f64) -> f64 {
        match self {
            NodeTheta::Constant(c) => z / c,
            NodeTheta::Tabulated(_) => {
                let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
                while self.z(lo) > z {
                    lo *= 2.0;
                }
                while self.z(hi) < z {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if self.z(mid) < z {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateChange {
    pub thetas: Vec<NodeTheta>,
    /// Decay rate `λ` demanded of the CLF.
    pub rate: f64,
}

impl CoordinateChange {
    pub fn n(&self) -> usize {
        self.thetas.len()
    }

    pub fn with_rate(&self, rate: f64) -> Self {
        Self {
            thetas: self.thetas.clone(),
            rate,
        }
    }

    pub fn z_of_x(&self, x: &[f64]) -> Vec<f64> {
        self.thetas.iter().zip(x).map(|(t, v)| t.z(*v)).collect()
    }

    pub fn x_of_z(&self, z: &[f64]) -> Vec<f64> {
        self.thetas.iter().zip(z).map(|(t, v)| t.x_of_z(*v)).collect()
    }

    pub fn theta(&self, x: &[f64]) -> Vec<f64> {
        self.thetas.iter().zip(x).map(|(t, v)| t.theta(*v)).collect()
    }

    /// `V = |z(x) − z(x*)|²`.
    pub fn distance_sq(&self, x: &[f64], xstar: &[f64]) -> f64 {
        self.z_of_x(x)
            .iter()
            .zip(self.z_of_x(xstar))
            .map(|(a, b)| (a - b).powi(2))
            .sum()
    }
}

/// `θ_i = √m_i` from a diagonal quadratic certificate.
pub fn build_coordinates(cert: &SeparableCertificate) -> Result<CoordinateChange, ControllerError> {
    if cert.kind != MetricKind::DiagonalQuadratic {
        return Err(ControllerError::UnsupportedKind(cert.kind.name()));
    }
    Ok(CoordinateChange {
        thetas: cert.weights.iter().map(|m| NodeTheta::Constant(m.sqrt())).collect(),
        rate: cert.rate,
    })
}

/// User-supplied `θ_i` tables, one `(knots, values)` pair per node.
pub fn tabulated_coordinates(
    tables: Vec<(Vec<f64>, Vec<f64>)>,
    rate: f64,
) -> Result<CoordinateChange, ControllerError> {
    let thetas = tables
        .into_iter()
        .enumerate()
        .map(|(i, (xs, ys))| {
            ThetaSpline::new(xs, ys)
                .map(NodeTheta::Tabulated)
                .map_err(|reason| ControllerError::BadTable { node: i + 1, reason })
        })
        .collect::<Result<_, _>>()?;
    Ok(CoordinateChange { thetas, rate })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClfEvaluation {
    /// `|z − z*|²`.
    pub v: f64,
    /// `V̇` at `u = u*`.
    pub a: f64,
    /// `∂V̇/∂u`.
    pub b: Vec<f64>,
    /// `2λV`.
    pub required_decay: f64,
    pub ustar: Vec<f64>,
    /// Either state lies outside its domain box.
    pub outside_domain: bool,
}

/// CLF data for tracking a solution `x*` of `ẋ* = f(x*, t) + Bu*`.
///
/// With `e = z − z*` and `ż_i = θ_i(x_i) ẋ_i`,
/// `V̇ = 2eᵀ[Θ(x)(f(x) + Bu) − Θ(x*)(f(x*) + Bu*)] = a + b(u − u*)`.
pub fn clf_eval(
    m: &NetworkModel,
    cc: &CoordinateChange,
    x: &[f64],
    xstar: &[f64],
    ustar: &[f64],
    t: f64,
) -> Result<ClfEvaluation, ControllerError> {
    let b_mat = m.input_matrix().ok_or(ControllerError::NoInput)?;
    let n = m.n();
    if cc.n() != n || x.len() != n || xstar.len() != n {
        return Err(ControllerError::Dimension(format!(
            "model has {n} nodes; coordinates {}, x {}, x* {}",
            cc.n(),
            x.len(),
            xstar.len()
        )));
    }
    if ustar.len() != b_mat.cols() {
        return Err(ControllerError::Dimension(format!(
            "u* has {} entries, B has {} columns",
            ustar.len(),
            b_mat.cols()
        )));
    }
    let e: Vec<f64> = cc
        .z_of_x(x)
        .iter()
        .zip(cc.z_of_x(xstar))
        .map(|(a, b)| a - b)
        .collect();
    let th = cc.theta(x);
    let th_star = cc.theta(xstar);
    let fx = m.vector_field(x, t, Some(ustar))?;
    let fs = m.vector_field(xstar, t, Some(ustar))?;
    let a = 2.0 * (0..n).map(|i| e[i] * (th[i] * fx[i] - th_star[i] * fs[i])).sum::<f64>();
    let b = (0..b_mat.cols())
        .map(|j| 2.0 * (0..n).map(|i| e[i] * th[i] * b_mat[(i, j)]).sum::<f64>())
        .collect();
    let v: f64 = e.iter().map(|v| v * v).sum();
    Ok(ClfEvaluation {
        v,
        a,
        b,
        required_decay: 2.0 * cc.rate * v,
        ustar: ustar.to_vec(),
        outside_domain: !m.in_domain(x) || !m.in_domain(xstar),
    })
}

/// Smallest `|u − u*|` with `a + b(u − u*) ≤ −2λV`.
pub fn min_norm_feedback(e: &ClfEvaluation) -> Result<Vec<f64>, ControllerError> {
    let excess = e.a + e.required_decay;
    if excess <= 0.0 {
        return Ok(e.ustar.clone());
    }
    let bb: f64 = e.b.iter().map(|v| v * v).sum();
    if bb == 0.0 {
        return Err(ControllerError::UncontrollableDirection { excess });
    }
    let s = excess / bb;
    Ok(e.ustar.iter().zip(&e.b).map(|(u, b)| u - s * b).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeLocality {
    pub node: usize,
    /// 1-based state indices read by the node's terms of `a` and `b`.
    pub reads: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalityReport {
    pub nodes: Vec<NodeLocality>,
    /// Every input column actuates a single node.
    pub per_node_actuation: bool,
    /// No node reads all states while the network has more than two nodes.
    pub is_local: bool,
}

/// Sparsity of the CLF terms: node `i`'s share of `a` reads `x_i`, the
/// coupled states `{j : K_ij ≠ 0}` and the target, and its share of `b`
/// reads `x_i` only. The min-norm step combines these shares through the two
/// scalar sums `a` and `|b|²`.
pub fn locality_report(m: &NetworkModel, _cc: &CoordinateChange) -> LocalityReport {
    let n = m.n();
    let pieces = m.coupling().all();
    let nodes: Vec<NodeLocality> = (0..n)
        .map(|i| {
            let reads = (0..n)
                .filter(|&j| j == i || pieces.iter().any(|k| k[(i, j)] != 0.0))
                .map(|j| j + 1)
                .collect();
            NodeLocality { node: i + 1, reads }
        })
        .collect();
    let per_node_actuation = m.input_matrix().is_some_and(|b| {
        (0..b.cols()).all(|j| (0..b.rows()).filter(|&i| b[(i, j)] != 0.0).count() <= 1)
    });
    let is_local = n <= 2 || nodes.iter().all(|l| l.reads.len() < n);
    LocalityReport {
        nodes,
        per_node_actuation,
        is_local,
    }
}

/// Target solution: samples of `x*` and `u*`, linearly interpolated and held
/// constant outside the table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Target {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

impl Target {
    pub fn constant(x: Vec<f64>, u: Vec<f64>) -> Self {
        Self {
            times: vec![0.0],
            states: vec![x],
            inputs: vec![u],
        }
    }

    pub fn new(
        times: Vec<f64>,
        states: Vec<Vec<f64>>,
        inputs: Vec<Vec<f64>>,
    ) -> Result<Self, ControllerError> {
        if times.is_empty() || states.len() != times.len() || inputs.len() != times.len() {
            return Err(ControllerError::Dimension(
                "target needs one state and one input per time".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ControllerError::Dimension("target times must increase".into()));
        }
        let (nx, nu) = (states[0].len(), inputs[0].len());
        if states.iter().any(|s| s.len() != nx) || inputs.iter().any(|u| u.len() != nu) {
            return Err(ControllerError::Dimension("ragged target rows".into()));
        }
        Ok(Self {
            times,
            states,
            inputs,
        })
    }

    pub fn at(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return (self.states[0].clone(), self.inputs[0].clone());
        }
        if t >= self.times[n - 1] {
            return (self.states[n - 1].clone(), self.inputs[n - 1].clone());
        }
        let k = self.times.partition_point(|s| *s <= t) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        let lerp = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
        };
        (
            lerp(&self.states[k], &self.states[k + 1]),
            lerp(&self.inputs[k], &self.inputs[k + 1]),
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosedLoop {
    pub trajectory: Trajectory,
    pub v: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    /// `max_t V(t) / (V(0)e^{−2λt})`.
    pub worst_bound_ratio: f64,
}

/// Simulates the min-norm feedback tracking `target` from `x0`.
pub fn simulate_closed_loop(
    m: &NetworkModel,
    cc: &CoordinateChange,
    target: &Target,
    x0: &[f64],
    opts: &IntegratorOptions,
) -> Result<ClosedLoop, ControllerError> {
    let feedback = |x: &[f64], t: f64| -> Result<Vec<f64>, String> {
        let (xs, us) = target.at(t);
        let e = clf_eval(m, cc, x, &xs, &us, t).map_err(|e| e.to_string())?;
        min_norm_feedback(&e).map_err(|e| e.to_string())
    };
    if m.input_matrix().is_none() {
        return Err(ControllerError::NoInput);
    }
    let trajectory = integrate_with_feedback(m, x0, feedback, opts)?;
    let mut v = Vec::with_capacity(trajectory.times.len());
    let mut inputs = Vec::with_capacity(trajectory.times.len());
    for (t, x) in trajectory.times.iter().zip(&trajectory.states) {
        let (xs, us) = target.at(*t);
        let e = clf_eval(m, cc, x, &xs, &us, *t)?;
        inputs.push(min_norm_feedback(&e)?);
        v.push(e.v);
    }
    let v0 = v[0];
    let worst_bound_ratio = if v0 == 0.0 {
        if v.iter().all(|x| *x == 0.0) { 0.0 } else { f64::INFINITY }
    } else {
        trajectory
            .times
            .iter()
            .zip(&v)
            .map(|(t, vt)| vt / (v0 * (-2.0 * cc.rate * (t - opts.t0)).exp()))
            .fold(0.0, f64::max)
    };
    Ok(ClosedLoop {
        trajectory,
        v,
        inputs,
        worst_bound_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Coupling, NodeSpec};
    use crate::optim::Matrix;

    fn scalar_with_input() -> NetworkModel {
        NetworkModel::new(
            vec![NodeSpec::parse("a", "-x", -5.0, 5.0).unwrap()],
            Coupling::Constant(Matrix::zeros(1, 1)),
            Some(Matrix::identity(1)),
            (0.0, 5.0),
        )
        .unwrap()
    }

    fn constant(ws: &[f64], rate: f64) -> CoordinateChange {
        CoordinateChange {
            thetas: ws.iter().map(|w| NodeTheta::Constant(w.sqrt())).collect(),
            rate,
        }
    }

    #[test]
    fn constant_coordinates() {
        let cc = constant(&[1.0, 1.0], 1.0);
        assert_eq!(cc.z_of_x(&[0.3, -2.0]), vec![0.3, -2.0]);
        let cc = constant(&[4.0, 4.0], 1.0);
        assert_eq!(cc.z_of_x(&[0.5, -1.0]), vec![1.0, -2.0]);
        assert_eq!(cc.distance_sq(&[1.0, 0.0], &[0.0, 0.0]), 4.0);
        assert_eq!(cc.x_of_z(&[1.0, -2.0]), vec![0.5, -1.0]);
    }

    #[test]
    fn tabulated_arctan() {
        let xs: Vec<f64> = (0..=2000).map(|k| -10.0 + k as f64 * 0.01).collect();
        let ys = xs.iter().map(|x| 1.0 / (1.0 + x * x)).collect();
        let cc = tabulated_coordinates(vec![(xs, ys)], 1.0).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..=400 {
            let x = -10.0 + k as f64 * 0.05;
            let z = cc.z_of_x(&[x])[0];
            worst = worst.max((z - x.atan()).abs());
            assert!((cc.x_of_z(&[z])[0] - x).abs() < 1e-9);
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn spline_rejects_bad_tables() {
        assert!(ThetaSpline::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        assert!(ThetaSpline::new(vec![1.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(ThetaSpline::new(vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn clf_examples() {
        let m = scalar_with_input();
        let cc = constant(&[1.0], 1.0);
        let e = clf_eval(&m, &cc, &[1.0], &[0.0], &[0.0], 0.0).unwrap();
        assert_eq!((e.v, e.a, e.required_decay), (1.0, -2.0, 2.0));
        assert_eq!(min_norm_feedback(&e).unwrap(), vec![0.0]);

        let e = clf_eval(&m, &cc.with_rate(2.0), &[1.0], &[0.0], &[0.0], 0.0).unwrap();
        assert_eq!(e.b, vec![2.0]);
        assert_eq!(min_norm_feedback(&e).unwrap(), vec![-1.0]);

        let e = clf_eval(&m, &cc, &[0.7], &[0.7], &[0.7], 0.0).unwrap();
        assert_eq!((e.v, e.required_decay), (0.0, 0.0));
        assert_eq!(min_norm_feedback(&e).unwrap(), vec![0.7]);
    }

    #[test]
    fn uncontrollable() {
        let e = ClfEvaluation {
            v: 1.0,
            a: 1.0,
            b: vec![0.0],
            required_decay: 0.0,
            ustar: vec![0.0],
            outside_domain: false,
        };
        assert!(matches!(
            min_norm_feedback(&e),
            Err(ControllerError::UncontrollableDirection { .. })
        ));
    }

    #[test]
    fn locality_examples() {
        let chain = Matrix::from_fn(4, 4, |i, j| if i.abs_diff(j) == 1 { 0.3 } else { 0.0 });
        let nodes = || {
            (0..4)
                .map(|i| NodeSpec::parse(format!("n{i}"), "-x", -1.0, 1.0).unwrap())
                .collect::<Vec<_>>()
        };
        let m = NetworkModel::new(nodes(), Coupling::Constant(chain), Some(Matrix::identity(4)), (0.0, 1.0))
            .unwrap();
        let cc = constant(&[1.0; 4], 1.0);
        let r = locality_report(&m, &cc);
        assert_eq!(r.nodes[1].reads, vec![1, 2, 3]);
        assert_eq!(r.nodes[0].reads, vec![1, 2]);
        assert!(r.per_node_actuation && r.is_local);

        let m = m.with_coupling(Coupling::Constant(Matrix::zeros(4, 4))).unwrap();
        assert!(locality_report(&m, &cc).nodes.iter().all(|l| l.reads == vec![l.node]));

        let dense = Matrix::from_fn(4, 4, |i, j| if i != j { 0.1 } else { 0.0 });
        let m = m.with_coupling(Coupling::Constant(dense)).unwrap();
        let r = locality_report(&m, &cc);
        assert!(r.nodes.iter().all(|l| l.reads == vec![1, 2, 3, 4]));
        assert!(!r.is_local);
    }

    #[test]
    fn closed_loop_decay() {
        let m = scalar_with_input();
        let cc = constant(&[1.0], 3.0);
        let opts = IntegratorOptions::for_model(&m).with_step(0.01);
        let cl = simulate_closed_loop(&m, &cc, &Target::constant(vec![1.0], vec![1.0]), &[-2.0], &opts)
            .unwrap();
        assert!(cl.worst_bound_ratio <= 1.01, "{}", cl.worst_bound_ratio);
        assert!(cl.v.last().unwrap() < &1e-10);
    }
}
