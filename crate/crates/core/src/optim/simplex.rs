//! Bounded-variable primal simplex with Bland's anti-cycling rule.
//!
//! Solves `max cᵀx  s.t.  A x ≤ b,  0 ≤ x ≤ u` with `b ≥ 0`, so the all-slack
//! basis with every structural variable at its lower bound is a feasible start
//! and no phase one is needed. Upper bounds may be infinite.

use super::{Matrix, OptimError};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
pub struct BoundedLp {
    pub objective: Vec<f64>,
    pub constraints: Matrix,
    pub rhs: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
}

pub fn solve(lp: &BoundedLp) -> Result<LpSolution, OptimError> {
    let m = lp.constraints.rows();
    let n = lp.constraints.cols();
    if lp.objective.len() != n || lp.upper.len() != n || lp.rhs.len() != m {
        return Err(OptimError::Dimension("inconsistent LP dimensions".into()));
    }
    if lp.rhs.iter().any(|b| *b < 0.0 || !b.is_finite()) {
        return Err(OptimError::Dimension(
            "LP right-hand side must be finite and nonnegative".into(),
        ));
    }
    if lp.upper.iter().any(|u| u.is_nan() || *u < 0.0) {
        return Err(OptimError::Dimension("LP upper bounds must be nonnegative".into()));
    }
    let total = n + m;
    let mut upper = lp.upper.clone();
    upper.extend(std::iter::repeat_n(f64::INFINITY, m));

    // tableau = B⁻¹ [A I]
    let mut tab = Matrix::zeros(m, total);
    for i in 0..m {
        for j in 0..n {
            tab[(i, j)] = lp.constraints[(i, j)];
        }
        tab[(i, n + i)] = 1.0;
    }
    let mut basis: Vec<usize> = (n..total).collect();
    let mut status = vec![Status::AtLower; total];
    for s in &basis {
        status[*s] = Status::Basic;
    }
    let mut x = vec![0.0; total];
    x[n..].copy_from_slice(&lp.rhs);
    // reduced costs c_j − c_Bᵀ B⁻¹ a_j; slacks have zero cost
    let mut cost = lp.objective.clone();
    cost.extend(std::iter::repeat_n(0.0, m));
    let mut reduced = cost.clone();

    let max_iter = 200 * (total + 10);
    for iter in 0..max_iter {
        let entering = (0..total).find(|&j| match status[j] {
            Status::AtLower => reduced[j] > COST_TOL && upper[j] > 0.0,
            Status::AtUpper => reduced[j] < -COST_TOL,
            Status::Basic => false,
        });
        let Some(j) = entering else {
            let obj = (0..n).map(|k| lp.objective[k] * x[k]).sum();
            return Ok(LpSolution {
                x: x[..n].to_vec(),
                objective: obj,
                iterations: iter,
            });
        };
        let dir = if status[j] == Status::AtLower { 1.0 } else { -1.0 };

        // ratio test; ties broken toward the smallest variable index
        let mut step = upper[j];
        let mut leave: Option<(usize, Status)> = None;
        for r in 0..m {
            let alpha = tab[(r, j)] * dir;
            let bv = basis[r];
            let (limit, to) = if alpha > PIVOT_TOL {
                ((x[bv] / alpha).max(0.0), Status::AtLower)
            } else if alpha < -PIVOT_TOL && upper[bv].is_finite() {
                (((upper[bv] - x[bv]) / -alpha).max(0.0), Status::AtUpper)
            } else {
                continue;
            };
            let better = match leave {
                _ if limit < step => true,
                Some((lr, _)) if limit == step => bv < basis[lr],
                None if limit == step => bv < j,
                _ => false,
            };
            if better {
                step = limit;
                leave = Some((r, to));
            }
        }
        if step.is_infinite() {
            return Err(OptimError::Unbounded);
        }

        x[j] += dir * step;
        for r in 0..m {
            x[basis[r]] -= tab[(r, j)] * dir * step;
        }

        match leave {
            None => {
                status[j] = if status[j] == Status::AtLower {
                    x[j] = upper[j];
                    Status::AtUpper
                } else {
                    x[j] = 0.0;
                    Status::AtLower
                };
            }
            Some((r, to)) => {
                let lv = basis[r];
                x[lv] = if to == Status::AtLower { 0.0 } else { upper[lv] };
                status[lv] = to;
                status[j] = Status::Basic;
                basis[r] = j;
                pivot(&mut tab, &mut reduced, r, j);
            }
        }
    }
    Err(OptimError::NumericalFailure(format!(
        "simplex iteration limit ({max_iter}) reached"
    )))
}

fn pivot(tab: &mut Matrix, reduced: &mut [f64], r: usize, j: usize) {
    let cols = tab.cols();
    let piv = tab[(r, j)];
    for k in 0..cols {
        tab[(r, k)] /= piv;
    }
    tab[(r, j)] = 1.0;
    for i in 0..tab.rows() {
        if i == r {
            continue;
        }
        let f = tab[(i, j)];
        if f == 0.0 {
            continue;
        }
        for k in 0..cols {
            tab[(i, k)] -= f * tab[(r, k)];
        }
        tab[(i, j)] = 0.0;
    }
    let f = reduced[j];
    if f != 0.0 {
        for k in 0..cols {
            reduced[k] -= f * tab[(r, k)];
        }
        reduced[j] = 0.0;
    }
}
