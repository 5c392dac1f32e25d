//! Text formats: TOML model files, plain matrix files, factored-system
//! files and CSV tables.
//!
//! A model file:
//!
//! ```toml
//! horizon = [0.0, 10.0]
//!
//! [[nodes]]
//! name = "a"
//! dynamics = "-x - x^3"
//! domain = [-2.0, 2.0]
//!
//! [[nodes]]
//! name = "b"
//! dynamics = "-x - x^3"
//! domain = [-2.0, 2.0]
//!
//! [coupling]
//! entries = [[1, 2, 0.5], [2, 1, 0.5]]   # 1-based (row, col, value)
//!
//! [input_matrix]
//! cols = 2
//! entries = [[1, 1, 1.0], [2, 2, 1.0]]
//!
//! [uncertainty]
//! psi = 0.2
//! h = [[1, 2, 1.0]]
//! ```
//!
//! A time-varying coupling replaces `entries` by pieces
//! `[[coupling.table]]` with keys `t` and `entries`; piece `k` applies on
//! `[t_k, t_{k+1})`.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::expr::Interval;
use crate::model::{Coupling, CouplingPiece, ModelError, NetworkModel, NodeSpec};
use crate::optim::Matrix;
use crate::simulator::{FactoredSystem, SimError};
use crate::sprocedure::{SProcError, UncertainCoupling};

#[derive(Debug, Error)]
pub enum FileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Toml(String),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Uncertainty(#[from] SProcError),
    #[error(transparent)]
    Factored(#[from] SimError),
}

pub fn read_file(path: &Path) -> Result<String, FileError> {
    std::fs::read_to_string(path).map_err(|source| FileError::Io {
        path: path.display().to_string(),
        source,
    })
}

type Triplet = (usize, usize, f64);

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    horizon: [f64; 2],
    nodes: Vec<NodeEntry>,
    coupling: Option<CouplingEntry>,
    input_matrix: Option<InputEntry>,
    uncertainty: Option<UncertaintyEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    name: String,
    dynamics: String,
    domain: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingEntry {
    entries: Option<Vec<Triplet>>,
    table: Option<Vec<PieceEntry>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PieceEntry {
    t: f64,
    entries: Vec<Triplet>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputEntry {
    cols: usize,
    entries: Vec<Triplet>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UncertaintyEntry {
    psi: f64,
    h: Vec<Triplet>,
}

/// A parsed model file.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: NetworkModel,
    pub uncertainty: Option<UncertainCoupling>,
}

fn from_triplets(rows: usize, cols: usize, entries: &[Triplet], what: &str) -> Result<Matrix, FileError> {
    let mut m = Matrix::zeros(rows, cols);
    let mut seen = std::collections::BTreeSet::new();
    for &(i, j, v) in entries {
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(FileError::Invalid(format!(
                "{what}: entry ({i}, {j}) is outside a {rows}x{cols} matrix (indices are 1-based)"
            )));
        }
        if !seen.insert((i, j)) {
            return Err(FileError::Invalid(format!("{what}: entry ({i}, {j}) given twice")));
        }
        m[(i - 1, j - 1)] = v;
    }
    Ok(m)
}

pub fn parse_model(text: &str) -> Result<LoadedModel, FileError> {
    let f: ModelFile = toml::from_str(text).map_err(|e| FileError::Toml(e.to_string()))?;
    let n = f.nodes.len();
    let nodes = f
        .nodes
        .iter()
        .map(|e| NodeSpec::parse(e.name.clone(), &e.dynamics, e.domain[0], e.domain[1]))
        .collect::<Result<Vec<_>, _>>()?;
    let coupling = match &f.coupling {
        None => Coupling::Constant(Matrix::zeros(n, n)),
        Some(CouplingEntry {
            entries: Some(e),
            table: None,
        }) => Coupling::Constant(from_triplets(n, n, e, "coupling")?),
        Some(CouplingEntry {
            entries: None,
            table: Some(pieces),
        }) => Coupling::Table(
            pieces
                .iter()
                .map(|p| {
                    Ok(CouplingPiece {
                        t: p.t,
                        k: from_triplets(n, n, &p.entries, "coupling table")?,
                    })
                })
                .collect::<Result<_, FileError>>()?,
        ),
        Some(_) => {
            return Err(FileError::Invalid(
                "coupling: give exactly one of `entries` or `table`".into(),
            ))
        }
    };
    let input = f
        .input_matrix
        .as_ref()
        .map(|b| from_triplets(n, b.cols, &b.entries, "input_matrix"))
        .transpose()?;
    let model = NetworkModel::new(nodes, coupling, input, (f.horizon[0], f.horizon[1]))?;
    let uncertainty = f
        .uncertainty
        .as_ref()
        .map(|u| -> Result<_, FileError> {
            Ok(UncertainCoupling::new(from_triplets(n, n, &u.h, "uncertainty.h")?, u.psi)?)
        })
        .transpose()?;
    Ok(LoadedModel { model, uncertainty })
}

pub fn load_model(path: &Path) -> Result<LoadedModel, FileError> {
    parse_model(&read_file(path)?)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(k, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((k + 1, l))
    })
}

fn parse_numbers(line: usize, s: &str) -> Result<Vec<f64>, FileError> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|_| FileError::Line {
                line,
                message: format!("`{t}` is not a number"),
            })
        })
        .collect()
}

/// Whitespace- or comma-separated rows; `#` starts a comment.
pub fn parse_matrix(text: &str) -> Result<Matrix, FileError> {
    let mut rows = Vec::new();
    let mut width = None;
    for (line, l) in data_lines(text) {
        let row = parse_numbers(line, l)?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(FileError::Line {
                    line,
                    message: format!("expected {w} entries, found {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(FileError::Invalid("matrix file has no rows".into()));
    }
    Matrix::from_rows(&rows).ok_or_else(|| FileError::Invalid("ragged matrix".into()))
}

pub fn load_matrix(path: &Path) -> Result<Matrix, FileError> {
    parse_matrix(&read_file(path)?)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactoredFile {
    horizon: [f64; 2],
    domain: Vec<[f64; 2]>,
    n: Vec<Vec<String>>,
}

/// ```toml
/// horizon = [0.0, 5.0]
/// domain = [[-2.0, 2.0], [-2.0, 2.0]]
/// n = [["-1", "x1^2/(1 + x1^2)"], ["0.1", "-1"]]
/// ```
pub fn parse_factored(text: &str) -> Result<FactoredSystem, FileError> {
    let f: FactoredFile = toml::from_str(text).map_err(|e| FileError::Toml(e.to_string()))?;
    let domain = f
        .domain
        .iter()
        .enumerate()
        .map(|(i, d)| {
            Interval::new(d[0], d[1])
                .filter(|iv| iv.lo.is_finite() && iv.hi.is_finite())
                .ok_or_else(|| FileError::Invalid(format!("domain {} is not a finite interval", i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FactoredSystem::parse(&f.n, domain, (f.horizon[0], f.horizon[1]))?)
}

pub fn load_factored(path: &Path) -> Result<FactoredSystem, FileError> {
    parse_factored(&read_file(path)?)
}

/// CSV with a header row; returns the header names and numeric rows.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), FileError> {
    let mut lines = data_lines(text);
    let (_, header) = lines
        .next()
        .ok_or_else(|| FileError::Invalid("CSV file is empty".into()))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (line, l) in lines {
        let row = parse_numbers(line, l)?;
        if row.len() != names.len() {
            return Err(FileError::Line {
                line,
                message: format!("expected {} columns, found {}", names.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok((names, rows))
}

/// Target table with columns `t, x1..xn, u1..um`.
pub fn parse_target(
    text: &str,
    n: usize,
    m: usize,
) -> Result<crate::controller::Target, FileError> {
    let (names, rows) = parse_csv(text)?;
    let mut expected = vec!["t".to_string()];
    expected.extend((1..=n).map(|i| format!("x{i}")));
    expected.extend((1..=m).map(|i| format!("u{i}")));
    if names != expected {
        return Err(FileError::Invalid(format!(
            "target header must be `{}`",
            expected.join(",")
        )));
    }
    crate::controller::Target::new(
        rows.iter().map(|r| r[0]).collect(),
        rows.iter().map(|r| r[1..=n].to_vec()).collect(),
        rows.iter().map(|r| r[n + 1..].to_vec()).collect(),
    )
    .map_err(|e| FileError::Invalid(e.to_string()))
}

/// θ table with columns `x, theta1..thetan` sharing one knot grid.
pub fn parse_theta_table(text: &str, n: usize) -> Result<Vec<(Vec<f64>, Vec<f64>)>, FileError> {
    let (names, rows) = parse_csv(text)?;
    let mut expected = vec!["x".to_string()];
    expected.extend((1..=n).map(|i| format!("theta{i}")));
    if names != expected {
        return Err(FileError::Invalid(format!(
            "θ table header must be `{}`",
            expected.join(",")
        )));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    Ok((1..=n)
        .map(|i| (xs.clone(), rows.iter().map(|r| r[i]).collect()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAIR: &str = r#"
horizon = [0, 10]

[[nodes]]
name = "a"
dynamics = "-x - x^3"
domain = [-2, 2]

[[nodes]]
name = "b"
dynamics = "-x - x^3"
domain = [-2, 2]

[coupling]
entries = [[1, 2, 0.5], [2, 1, 0.5]]

[input_matrix]
cols = 2
entries = [[1, 1, 1.0], [2, 2, 1.0]]
"#;

    #[test]
    fn parses_model() {
        let l = parse_model(PAIR).unwrap();
        assert_eq!(l.model.n(), 2);
        assert_eq!(l.model.coupling().at(0.0)[(0, 1)], 0.5);
        assert_eq!(l.model.input_matrix().unwrap().cols(), 2);
        assert!(l.uncertainty.is_none());
    }

    #[test]
    fn rejects_unknown_keys_with_location() {
        let text = PAIR.replace("name = \"b\"", "name = \"b\"\ncolor = 3");
        let e = parse_model(&text).unwrap_err().to_string();
        assert!(e.contains("line") && e.contains("color"), "{e}");
    }

    #[test]
    fn rejects_bad_triplets() {
        let text = PAIR.replace("[2, 1, 0.5]]", "[3, 1, 0.5]]");
        assert!(parse_model(&text).is_err());
        let text = PAIR.replace("[2, 1, 0.5]]", "[1, 2, 0.5]]");
        assert!(parse_model(&text).unwrap_err().to_string().contains("twice"));
    }

    #[test]
    fn time_table_and_uncertainty() {
        let text = r#"
horizon = [0, 4]
[[nodes]]
name = "a"
dynamics = "-2*x"
domain = [-1, 1]
[[nodes]]
name = "b"
dynamics = "-2*x"
domain = [-1, 1]
[[coupling.table]]
t = 0
entries = [[1, 2, 0.1]]
[[coupling.table]]
t = 2
entries = [[2, 1, 0.3]]
[uncertainty]
psi = 0.5
h = [[1, 1, 1.0], [2, 2, 1.0]]
"#;
        let l = parse_model(text).unwrap();
        assert_eq!(l.model.coupling().at(3.0)[(1, 0)], 0.3);
        assert_eq!(l.uncertainty.unwrap().psi(), 0.5);
    }

    #[test]
    fn matrix_files() {
        let m = parse_matrix("# comment\n-2 1\n1, -2  # trailing\n\n").unwrap();
        assert_eq!(m.to_rows(), vec![vec![-2.0, 1.0], vec![1.0, -2.0]]);
        match parse_matrix("1 2\n3 x\n").unwrap_err() {
            FileError::Line { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        assert!(parse_matrix("1 2\n3\n").is_err());
    }

    #[test]
    fn factored_file() {
        let f = parse_factored(
            "horizon = [0, 5]\ndomain = [[-2, 2], [-2, 2]]\nn = [[\"-1\", \"x1^2/(1+x1^2)\"], [\"0.1\", \"-1\"]]\n",
        )
        .unwrap();
        assert_eq!(f.n(), 2);
        assert!(parse_factored("horizon = [0, 5]\ndomain = [[-2, 2]]\nn = [[\"x2\"]]\n").is_err());
    }

    #[test]
    fn target_and_theta_tables() {
        let t = parse_target("t,x1,x2,u1\n0,1,2,0\n1,1,2,0.5\n", 2, 1).unwrap();
        assert_eq!(t.at(0.5).1, vec![0.25]);
        assert!(parse_target("t,x1,u1\n0,1,0\n", 2, 1).is_err());
        let th = parse_theta_table("x,theta1\n-1,1\n1,2\n", 1).unwrap();
        assert_eq!(th[0].1, vec![1.0, 2.0]);
    }
}
