#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sepmetric::model::{Coupling, CouplingPiece, NetworkModel, NodeSpec};
use sepmetric::optim::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// Largest real part of the spectrum.
pub fn abscissa(m: &Matrix) -> f64 {
    to_na(m)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue of the symmetric part.
pub fn sym_max(m: &Matrix) -> f64 {
    let a = to_na(m);
    let s = (&a + a.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.max()
}

/// Random Metzler matrix with spectral abscissa of the given sign and
/// magnitude in `[0.01, 1]`.
pub fn random_metzler<R: Rng>(rng: &mut R, n: usize, hurwitz: bool) -> Matrix {
    let density = rng.random_range(0.2..=1.0);
    let mut m = Matrix::from_fn(n, n, |_, _| 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                m[(i, j)] = -rng.random_range(0.0..2.0);
            } else if rng.random::<f64>() < density {
                m[(i, j)] = rng.random_range(0.0..1.5);
            }
        }
    }
    let alpha = abscissa(&m);
    let delta = rng.random_range(0.01..1.0);
    let shift = if hurwitz { alpha + delta } else { alpha - delta };
    for i in 0..n {
        m[(i, i)] -= shift;
    }
    m
}

pub fn model(
    nodes: &[(&str, f64, f64)],
    k: Matrix,
    input: Option<Matrix>,
    horizon: (f64, f64),
) -> NetworkModel {
    let specs = nodes
        .iter()
        .enumerate()
        .map(|(i, (g, lo, hi))| NodeSpec::parse(format!("n{}", i + 1), g, *lo, *hi).unwrap())
        .collect();
    NetworkModel::new(specs, Coupling::Constant(k), input, horizon).unwrap()
}

fn uniform_nodes(g: &str, n: usize, r: f64) -> Vec<(&str, f64, f64)> {
    vec![(g, -r, r); n]
}

fn chain(n: usize, fwd: f64, back: f64) -> Matrix {
    Matrix::from_fn(n, n, |i, j| {
        if j == i + 1 {
            fwd
        } else if i == j + 1 {
            back
        } else {
            0.0
        }
    })
}

fn ring(n: usize, fwd: f64, back: f64) -> Matrix {
    Matrix::from_fn(n, n, |i, j| {
        if j == (i + 1) % n {
            fwd
        } else if i == (j + 1) % n {
            back
        } else {
            0.0
        }
    })
}

fn complete(n: usize, c: f64) -> Matrix {
    Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { c })
}

/// Hand-built monotone networks: 2 to 20 scalar nodes with polynomial and
/// tanh dynamics. Every box is forward invariant and `sup ∂g/∂x` over the box
/// equals the sup over the real line.
pub fn corpus() -> Vec<(&'static str, NetworkModel)> {
    let h = (0.0, 5.0);
    let mut out: Vec<(&'static str, NetworkModel)> = Vec::new();
    let mut add = |name, m| out.push((name, m));

    add("cubic_pair", model(&uniform_nodes("-x - x^3", 2, 2.0), complete(2, 0.5), None, h));
    add("cubic_chain_5", model(&uniform_nodes("-x - x^3", 5, 2.0), chain(5, 0.4, 0.4), None, h));
    add(
        "tanh_ring_6",
        model(&uniform_nodes("-1.5*x + 0.5*tanh(x)", 6, 2.0), ring(6, 0.4, 0.0), None, h),
    );
    {
        let mut nodes = vec![("-3*x - x^3", -2.0, 2.0)];
        nodes.extend(vec![("-x - 0.5*x^3", -2.0, 2.0); 7]);
        let k = Matrix::from_fn(8, 8, |i, j| match (i, j) {
            (0, j) if j > 0 => 0.3,
            (i, 0) if i > 0 => 0.2,
            _ => 0.0,
        });
        add("star_8", model(&nodes, k, None, h));
    }
    add("dense_4", model(&uniform_nodes("-4*x - x^3", 4, 2.0), complete(4, 0.5), None, h));
    add(
        "quadratic_term_3",
        model(&uniform_nodes("-2*x - x^3 - 0.2*x^2", 3, 2.0), chain(3, 0.5, 0.5), None, h),
    );
    add(
        "tanh_chain_10",
        model(&uniform_nodes("-x + 0.3*tanh(x)", 10, 2.0), chain(10, 0.3, 0.3), None, h),
    );
    {
        let k = Matrix::from_fn(9, 9, |i, j| {
            let (ri, ci, rj, cj) = (i / 3, i % 3, j / 3, j % 3);
            if ri.abs_diff(rj) + ci.abs_diff(cj) == 1 { 0.3 } else { 0.0 }
        });
        add("grid_9", model(&uniform_nodes("-2*x - x^3", 9, 2.0), k, None, h));
    }
    add("ring_12", model(&uniform_nodes("-x - x^3", 12, 2.0), ring(12, 0.8, 0.0), None, h));
    add(
        "chain_20",
        model(&uniform_nodes("-1.2*x - 0.2*x^3", 20, 2.0), chain(20, 0.5, 0.5), None, h),
    );
    {
        let mut r = rng(2024);
        let k = Matrix::from_fn(15, 15, |i, j| {
            if i != j && r.random::<f64>() < 0.2 { r.random_range(0.0..0.3) } else { 0.0 }
        });
        add("sparse_15", model(&uniform_nodes("-2.5*x - x^3", 15, 2.0), k, None, h));
    }
    {
        let k = Matrix::from_fn(6, 6, |i, j| if (i < 3) != (j < 3) { 0.25 } else { 0.0 });
        add("bipartite_6", model(&uniform_nodes("-x - x^3", 6, 2.0), k, None, h));
    }
    {
        let nodes: Vec<(&str, f64, f64)> = (0..7)
            .map(|i| if i % 2 == 0 { ("-2*x + tanh(x)", -3.0, 3.0) } else { ("-1.5*x - x^3", -3.0, 3.0) })
            .collect();
        add("tanh_cubic_mix_7", model(&nodes, ring(7, 0.3, 0.2), None, h));
    }
    {
        let specs = (0..4)
            .map(|i| NodeSpec::parse(format!("n{}", i + 1), "-2*x - x^3", -2.0, 2.0).unwrap())
            .collect();
        let table = Coupling::Table(vec![
            CouplingPiece { t: 0.0, k: chain(4, 0.6, 0.1) },
            CouplingPiece { t: 2.0, k: chain(4, 0.1, 0.6) },
            CouplingPiece { t: 4.0, k: ring(4, 0.4, 0.4) },
        ]);
        add("switching_4", NetworkModel::new(specs, table, None, h).unwrap());
    }
    add(
        "forced_3",
        model(&uniform_nodes("-2*x - x^3 + 0.3*sin(t)", 3, 2.0), complete(3, 0.4), None, h),
    );
    add(
        "asym_chain_5",
        model(&uniform_nodes("-1.5*x - x^3", 5, 2.0), chain(5, 1.0, 0.1), None, h),
    );
    add("quintic_pair", model(&uniform_nodes("-x - x^5", 2, 1.5), complete(2, 0.3), None, h));
    {
        let k = Matrix::from_fn(7, 7, |i, j| {
            if (j >= 1 && (j - 1) / 2 == i) || (i >= 1 && (i - 1) / 2 == j) { 0.35 } else { 0.0 }
        });
        add("tree_7", model(&uniform_nodes("-1.5*x - x^3", 7, 2.0), k, None, h));
    }
    add(
        "wide_box_3",
        model(&uniform_nodes("-x - 0.1*x^3", 3, 5.0), chain(3, 0.3, 0.3), None, h),
    );
    add(
        "uneven_boxes_4",
        model(
            &[("-x - x^3", -2.0, 2.0), ("-2*x - x^3", -3.0, 3.0), ("-x - 2*x^3", -2.0, 2.5), ("-3*x", -3.0, 3.0)],
            ring(4, 0.3, 0.2),
            None,
            h,
        ),
    );
    add("tight_pair", model(&uniform_nodes("-x - x^3", 2, 2.0), complete(2, 0.9), None, h));
    add(
        "tanh_complete_5",
        model(&uniform_nodes("-3*x + tanh(x)", 5, 2.0), complete(5, 0.4), None, h),
    );
    add(
        "tanh_ring_16",
        model(&uniform_nodes("-2*x + 0.5*tanh(x)", 16, 2.0), ring(16, 0.5, 0.5), None, h),
    );
    add(
        "biased_2",
        model(&uniform_nodes("-x - x^3 + 0.5", 2, 2.0), complete(2, 0.3), None, h),
    );
    out
}

/// Time-invariant corpus members with `B = diag(b)`, `b_i ∈ [1, 2]`.
pub fn actuated_corpus(seed: u64) -> Vec<(&'static str, NetworkModel)> {
    let mut r = rng(seed);
    corpus()
        .into_iter()
        .filter(|(_, m)| m.is_time_invariant())
        .map(|(name, m)| {
            let b = Matrix::from_diag(&(0..m.n()).map(|_| r.random_range(1.0..2.0)).collect::<Vec<_>>());
            (name, m.with_input_matrix(Some(b)).unwrap())
        })
        .collect()
}

/// Copy of the model with `K_ij` forced to `value`.
pub fn with_entry(m: &NetworkModel, i: usize, j: usize, value: f64) -> NetworkModel {
    m.with_coupling(m.coupling().map(|k| {
        let mut k = k.clone();
        k[(i, j)] = value;
        k
    }))
    .unwrap()
}

/// Random linear network `ẋ_i = −a_i x_i + Σ K_ij x_j`.
pub fn random_linear<R: Rng>(rng: &mut R, n: usize) -> NetworkModel {
    let a: Vec<String> = (0..n).map(|_| format!("-{}*x", rng.random_range(0.2..2.0))).collect();
    let density = rng.random_range(0.2..=1.0);
    let k = Matrix::from_fn(n, n, |i, j| {
        if i != j && rng.random::<f64>() < density { rng.random_range(0.0..1.0) } else { 0.0 }
    });
    let nodes: Vec<(&str, f64, f64)> = a.iter().map(|g| (g.as_str(), -1.0, 1.0)).collect();
    model(&nodes, k, None, (0.0, 1.0))
}

/// Random monotone network with cubic or tanh nodes.
pub fn random_nonlinear<R: Rng>(rng: &mut R, n: usize) -> NetworkModel {
    let gs: Vec<String> = (0..n)
        .map(|_| {
            let a = rng.random_range(0.5..3.0);
            if rng.random::<bool>() {
                format!("-{a}*x - {}*x^3", rng.random_range(0.0..1.0))
            } else {
                format!("-{a}*x + {}*tanh(x)", rng.random_range(0.0..0.5))
            }
        })
        .collect();
    let nodes: Vec<(&str, f64, f64)> = gs
        .iter()
        .map(|g| {
            let r = rng.random_range(0.5..3.0);
            (g.as_str(), -r, r)
        })
        .collect();
    let density = rng.random_range(0.2..=1.0);
    let k = Matrix::from_fn(n, n, |i, j| {
        if i != j && rng.random::<f64>() < density { rng.random_range(0.0..0.8) } else { 0.0 }
    });
    model(&nodes, k, None, (0.0, 5.0))
}
