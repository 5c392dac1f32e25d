//! Networks of scalar nodes with linear coupling,
//! `ẋ_i = g_i(x_i, t) + Σ_j K_ij(t) x_j (+ (Bu)_i)`.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Expr, ExprError, Interval, Var};
use crate::optim::{Matrix, MetzlerMatrix};

/// Grid size used when a time-varying quantity has to be sampled over the
/// horizon.
pub const DEFAULT_TIME_GRID: usize = 1001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("node `{node}`: {source}")]
    Expr {
        node: String,
        #[source]
        source: ExprError,
    },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("node `{node}`: invalid domain: {reason}")]
    Domain { node: String, reason: String },
    #[error("node `{node}`: dynamics may only use `x` and `t`")]
    ForeignVariable { node: String },
    #[error("no finite Ḡ: ∂g/∂x of node `{node}` is unbounded above on its box ({bound})")]
    NoFiniteSup { node: String, bound: Interval },
    #[error("model is not monotone: {} negative off-diagonal coupling entries", violations.len())]
    NotMonotone { violations: Vec<MonotoneViolation> },
    #[error("invalid coupling table: {0}")]
    CouplingTable(String),
}

#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub name: String,
    pub g: Expr,
    /// Cached `∂g/∂x`.
    pub dg: Expr,
    pub domain: Interval,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, g: Expr, domain: Interval) -> Result<Self, ModelError> {
        let name = name.into();
        if g.max_state_index().is_some() {
            return Err(ModelError::ForeignVariable { node: name });
        }
        if !domain.lo.is_finite() || !domain.hi.is_finite() {
            return Err(ModelError::Domain {
                node: name,
                reason: "bounds must be finite".into(),
            });
        }
        let dg = g.diff_x();
        Ok(Self {
            name,
            g,
            dg,
            domain,
        })
    }

    pub fn parse(name: impl Into<String>, source: &str, lo: f64, hi: f64) -> Result<Self, ModelError> {
        let name = name.into();
        let g = Expr::parse(source).map_err(|source| ModelError::Expr {
            node: name.clone(),
            source,
        })?;
        let domain = Interval::new(lo, hi).ok_or_else(|| ModelError::Domain {
            node: name.clone(),
            reason: format!("lo = {lo} exceeds hi = {hi}"),
        })?;
        Self::new(name, g, domain)
    }
}

/// One piece of a piecewise-constant coupling table, active from `t` until
/// the next piece starts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingPiece {
    pub t: f64,
    pub k: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    Constant(Matrix),
    Table(Vec<CouplingPiece>),
}

impl Coupling {
    fn pieces(&self) -> Vec<(f64, f64, &Matrix)> {
        match self {
            Coupling::Constant(k) => vec![(f64::NEG_INFINITY, f64::INFINITY, k)],
            Coupling::Table(t) => t
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let start = if i == 0 { f64::NEG_INFINITY } else { p.t };
                    let end = t.get(i + 1).map_or(f64::INFINITY, |n| n.t);
                    (start, end, &p.k)
                })
                .collect(),
        }
    }

    pub fn at(&self, t: f64) -> &Matrix {
        match self {
            Coupling::Constant(k) => k,
            Coupling::Table(pieces) => {
                let idx = pieces.partition_point(|p| p.t <= t);
                &pieces[idx.saturating_sub(1)].k
            }
        }
    }

    /// Matrices of every piece active somewhere in `[a, b]`.
    pub fn active_in(&self, a: f64, b: f64) -> Vec<&Matrix> {
        self.pieces()
            .into_iter()
            .filter(|(s, e, _)| *s <= b && *e > a)
            .map(|(_, _, k)| k)
            .collect()
    }

    pub fn all(&self) -> Vec<&Matrix> {
        self.pieces().into_iter().map(|(_, _, k)| k).collect()
    }

    /// Elementwise max over pieces active in `[a, b]`.
    pub fn max_over(&self, a: f64, b: f64) -> Matrix {
        let active = self.active_in(a, b);
        let mut out = active[0].clone();
        for k in &active[1..] {
            out = out.max_elementwise(k);
        }
        out
    }

    pub fn map(&self, f: impl Fn(&Matrix) -> Matrix) -> Coupling {
        match self {
            Coupling::Constant(k) => Coupling::Constant(f(k)),
            Coupling::Table(t) => Coupling::Table(
                t.iter()
                    .map(|p| CouplingPiece { t: p.t, k: f(&p.k) })
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    nodes: Vec<NodeSpec>,
    coupling: Coupling,
    input_matrix: Option<Matrix>,
    horizon: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneViolation {
    /// 1-based row.
    pub row: usize,
    /// 1-based column.
    pub col: usize,
    pub value: f64,
    /// Start time of the offending table piece, if time-varying.
    pub time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub is_monotone: bool,
    pub violations: Vec<MonotoneViolation>,
}

/// `∂f/∂x` at a point.
#[derive(Debug, Clone, Serialize)]
pub struct JacobianSample {
    pub x: Vec<f64>,
    pub t: f64,
    pub matrix: Matrix,
}

impl NetworkModel {
    pub fn new(
        nodes: Vec<NodeSpec>,
        coupling: Coupling,
        input_matrix: Option<Matrix>,
        horizon: (f64, f64),
    ) -> Result<Self, ModelError> {
        let n = nodes.len();
        if n == 0 {
            return Err(ModelError::Dimension("a model needs at least one node".into()));
        }
        let check_k = |k: &Matrix| {
            if k.rows() != n || k.cols() != n {
                Err(ModelError::Dimension(format!(
                    "coupling must be {n}x{n}, got {}x{}",
                    k.rows(),
                    k.cols()
                )))
            } else if !k.is_finite() {
                Err(ModelError::Dimension("coupling has non-finite entries".into()))
            } else {
                Ok(())
            }
        };
        match &coupling {
            Coupling::Constant(k) => check_k(k)?,
            Coupling::Table(pieces) => {
                if pieces.is_empty() {
                    return Err(ModelError::CouplingTable("table has no pieces".into()));
                }
                for w in pieces.windows(2) {
                    if w[1].t <= w[0].t {
                        return Err(ModelError::CouplingTable(
                            "piece times must be strictly increasing".into(),
                        ));
                    }
                }
                for p in pieces {
                    check_k(&p.k)?;
                }
            }
        }
        if let Some(b) = &input_matrix {
            if b.rows() != n || b.cols() == 0 {
                return Err(ModelError::Dimension(format!(
                    "input matrix must have {n} rows and at least one column, got {}x{}",
                    b.rows(),
                    b.cols()
                )));
            }
        }
        let (t0, tf) = horizon;
        if !(t0.is_finite() && tf.is_finite() && t0 < tf) {
            return Err(ModelError::Dimension(format!(
                "horizon [{t0}, {tf}] must be finite with t0 < tf"
            )));
        }
        Ok(Self {
            nodes,
            coupling,
            input_matrix,
            horizon,
        })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    pub fn input_matrix(&self) -> Option<&Matrix> {
        self.input_matrix.as_ref()
    }

    pub fn horizon(&self) -> (f64, f64) {
        self.horizon
    }

    pub fn domains(&self) -> Vec<Interval> {
        self.nodes.iter().map(|n| n.domain).collect()
    }

    pub fn is_time_invariant(&self) -> bool {
        matches!(self.coupling, Coupling::Constant(_))
            && self.nodes.iter().all(|n| !n.g.depends_on(Var::T))
    }

    pub fn with_horizon(&self, horizon: (f64, f64)) -> Result<Self, ModelError> {
        Self::new(
            self.nodes.clone(),
            self.coupling.clone(),
            self.input_matrix.clone(),
            horizon,
        )
    }

    pub fn with_coupling(&self, coupling: Coupling) -> Result<Self, ModelError> {
        Self::new(
            self.nodes.clone(),
            coupling,
            self.input_matrix.clone(),
            self.horizon,
        )
    }

    pub fn with_input_matrix(&self, b: Option<Matrix>) -> Result<Self, ModelError> {
        Self::new(self.nodes.clone(), self.coupling.clone(), b, self.horizon)
    }

    pub fn with_domains(&self, domains: &[Interval]) -> Result<Self, ModelError> {
        if domains.len() != self.n() {
            return Err(ModelError::Dimension("one domain per node required".into()));
        }
        let nodes = self
            .nodes
            .iter()
            .zip(domains)
            .map(|(n, d)| NodeSpec {
                domain: *d,
                ..n.clone()
            })
            .collect();
        Self::new(nodes, self.coupling.clone(), self.input_matrix.clone(), self.horizon)
    }

    /// Multiplies every off-diagonal coupling entry by `s`.
    pub fn scale_off_diagonal(&self, s: f64) -> Result<Self, ModelError> {
        let c = self.coupling.map(|k| {
            Matrix::from_fn(k.rows(), k.cols(), |i, j| if i == j { k[(i, j)] } else { s * k[(i, j)] })
        });
        self.with_coupling(c)
    }

    fn node_err(&self, i: usize) -> impl Fn(ExprError) -> ModelError + '_ {
        move |source| ModelError::Expr {
            node: self.nodes[i].name.clone(),
            source,
        }
    }

    /// Drift `f(x, t)` without input.
    pub fn drift(&self, x: &[f64], t: f64) -> Result<Vec<f64>, ModelError> {
        self.check_dim(x)?;
        let mut out = self.coupling.at(t).matvec(x);
        for (i, node) in self.nodes.iter().enumerate() {
            out[i] += node.g.eval(x[i], t).map_err(self.node_err(i))?;
        }
        Ok(out)
    }

    /// `f(x, t) + B u`.
    pub fn vector_field(&self, x: &[f64], t: f64, u: Option<&[f64]>) -> Result<Vec<f64>, ModelError> {
        let mut out = self.drift(x, t)?;
        if let Some(u) = u {
            let b = self.input_matrix.as_ref().ok_or_else(|| {
                ModelError::Dimension("an input was given but the model has no input matrix".into())
            })?;
            if u.len() != b.cols() {
                return Err(ModelError::Dimension(format!(
                    "input has {} components, input matrix has {} columns",
                    u.len(),
                    b.cols()
                )));
            }
            for (o, bu) in out.iter_mut().zip(b.matvec(u)) {
                *o += bu;
            }
        }
        Ok(out)
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.n() {
            return Err(ModelError::Dimension(format!(
                "state has {} components, model has {} nodes",
                x.len(),
                self.n()
            )));
        }
        Ok(())
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.nodes).all(|(v, n)| n.domain.contains(*v))
    }

    pub fn check_monotone(&self) -> MonotoneReport {
        let mut violations = Vec::new();
        let timed = matches!(self.coupling, Coupling::Table(_));
        for (start, _, k) in self.coupling.pieces() {
            for i in 0..self.n() {
                for j in 0..self.n() {
                    if i != j && k[(i, j)] < 0.0 {
                        violations.push(MonotoneViolation {
                            row: i + 1,
                            col: j + 1,
                            value: k[(i, j)],
                            time: timed.then(|| if start.is_finite() { start } else { self.first_piece_time() }),
                        });
                    }
                }
            }
        }
        MonotoneReport {
            is_monotone: violations.is_empty(),
            violations,
        }
    }

    fn first_piece_time(&self) -> f64 {
        match &self.coupling {
            Coupling::Table(t) => t[0].t,
            Coupling::Constant(_) => self.horizon.0,
        }
    }

    pub fn jacobian_at(&self, x: &[f64], t: f64) -> Result<JacobianSample, ModelError> {
        self.check_dim(x)?;
        let mut m = self.coupling.at(t).clone();
        for (i, node) in self.nodes.iter().enumerate() {
            m[(i, i)] += node.dg.eval(x[i], t).map_err(self.node_err(i))?;
        }
        Ok(JacobianSample {
            x: x.to_vec(),
            t,
            matrix: m,
        })
    }

    /// Comparison matrix `Ḡ + K̄` over the whole domain box and horizon.
    ///
    /// `Ḡ_i` is the interval upper bound of `∂g_i/∂x_i` on the node box and
    /// `K̄` is the elementwise max of every coupling piece active on the
    /// horizon, so the result dominates every Jacobian on the box.
    pub fn sup_jacobian_bound(&self) -> Result<MetzlerMatrix, ModelError> {
        let (t0, tf) = self.horizon;
        let t = Interval::new(t0, tf).expect("validated horizon");
        self.comparison_matrix(&self.domains(), t)
    }

    /// `Ḡ + K̄` over the given per-node boxes and time interval.
    pub fn comparison_matrix(
        &self,
        boxes: &[Interval],
        t: Interval,
    ) -> Result<MetzlerMatrix, ModelError> {
        if boxes.len() != self.n() {
            return Err(ModelError::Dimension("one box per node required".into()));
        }
        let report = self.check_monotone();
        if !report.is_monotone {
            return Err(ModelError::NotMonotone {
                violations: report.violations,
            });
        }
        let mut a = self.coupling.max_over(t.lo, t.hi);
        for (i, (node, b)) in self.nodes.iter().zip(boxes).enumerate() {
            // a domain failure of the interval evaluation (pole or log of a
            // nonpositive range in the box) means no finite bound exists
            let bound = match node.dg.eval_interval(*b, t) {
                Ok(v) => v,
                Err(ExprError::Domain { .. }) => Interval {
                    lo: f64::NEG_INFINITY,
                    hi: f64::INFINITY,
                },
                Err(e) => return Err(self.node_err(i)(e)),
            };
            if !bound.hi.is_finite() {
                return Err(ModelError::NoFiniteSup {
                    node: node.name.clone(),
                    bound,
                });
            }
            a[(i, i)] += bound.hi;
        }
        MetzlerMatrix::new(a).map_err(|e| ModelError::Dimension(e.to_string()))
    }

    /// Uniform random state in the domain box and time in the horizon.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let x = self
            .nodes
            .iter()
            .map(|n| uniform(rng, n.domain.lo, n.domain.hi))
            .collect();
        let t = uniform(rng, self.horizon.0, self.horizon.1);
        (x, t)
    }
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        lo + (hi - lo) * rng.random::<f64>()
    } else {
        lo
    }
}
