//! Scalar expressions for node dynamics.
//!
//! Grammar (lowest to highest precedence, binary operators left-associative):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' '-'? integer)?
//! atom   := number | ident | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | tanh | exp | log
//! ident  := x | t | x1 | x2 | ...
//! ```
//!
//! `x` is the node's own scalar state, `t` is time and `xK` (1-based) names the
//! K-th component of the full network state, which only factored systems use.
//! Exponents are integer literals, so every expression stays C¹ wherever it is
//! defined and interval powers are exact up to rounding.

mod interval;
mod parse;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use interval::Interval;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("domain error in `{subexpr}`")]
    Domain { subexpr: String },
    #[error("state variable x{index} is out of range for a state of dimension {dim}")]
    StateIndex { index: usize, dim: usize },
}

/// Independent variable of an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    /// The node's own state.
    X,
    /// Time.
    T,
    /// Component of the full network state (0-based, printed 1-based).
    State(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tanh,
    Exp,
    Log,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Exp => "exp",
            Func::Log => "log",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            "log" => Func::Log,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Neg(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, i32),
    Call(Func, Expr),
}

/// Immutable, cheaply clonable expression tree.
#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

/// Values bound to the variables during evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a, T> {
    pub x: T,
    pub t: T,
    pub state: &'a [T],
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, ExprError> {
        parse::parse(source)
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    fn wrap(node: Node) -> Expr {
        Expr(Arc::new(node))
    }

    pub fn constant(v: f64) -> Expr {
        Expr::wrap(Node::Const(v))
    }

    pub fn var(v: Var) -> Expr {
        Expr::wrap(Node::Var(v))
    }

    pub fn x() -> Expr {
        Expr::var(Var::X)
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    // Constructors below fold constants and drop 0/1 identities. They never
    // fold to a non-finite constant.

    pub fn neg(e: Expr) -> Expr {
        match *e.0 {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(ref inner) => inner.clone(),
            _ => Expr::wrap(Node::Neg(e)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            (_, Some(y)) if y < 0.0 => Expr::wrap(Node::Sub(a, Expr::constant(-y))),
            _ => match *b.0 {
                Node::Neg(ref inner) => Expr::wrap(Node::Sub(a, inner.clone())),
                _ => Expr::wrap(Node::Add(a, b)),
            },
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x - y),
            (Some(x), _) if x == 0.0 => Expr::neg(b),
            (_, Some(y)) if y == 0.0 => a,
            _ => match *b.0 {
                Node::Neg(ref inner) => Expr::wrap(Node::Add(a, inner.clone())),
                _ => Expr::wrap(Node::Sub(a, b)),
            },
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::constant(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            (Some(x), _) if x == -1.0 => Expr::neg(b),
            (_, Some(y)) if y == -1.0 => Expr::neg(a),
            // keep constants on the left
            (None, Some(_)) => Expr::wrap(Node::Mul(b, a)),
            _ => Expr::wrap(Node::Mul(a, b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 && (x / y).is_finite() => Expr::constant(x / y),
            (Some(x), _) if x == 0.0 => Expr::constant(0.0),
            (_, Some(y)) if y == 1.0 => a,
            _ => Expr::wrap(Node::Div(a, b)),
        }
    }

    pub fn pow(base: Expr, n: i32) -> Expr {
        match (base.as_const(), n) {
            (_, 0) => Expr::constant(1.0),
            (_, 1) => base,
            (Some(c), _) if c.powi(n).is_finite() && c != 0.0 => Expr::constant(c.powi(n)),
            _ => Expr::wrap(Node::Pow(base, n)),
        }
    }

    pub fn call(f: Func, arg: Expr) -> Expr {
        Expr::wrap(Node::Call(f, arg))
    }

    /// True when the expression mentions `v`.
    pub fn depends_on(&self, v: Var) -> bool {
        match self.node() {
            Node::Const(_) => false,
            Node::Var(w) => *w == v,
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => a.depends_on(v),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.depends_on(v) || b.depends_on(v)
            }
        }
    }

    /// Largest 0-based state index referenced, if any.
    pub fn max_state_index(&self) -> Option<usize> {
        match self.node() {
            Node::Const(_) => None,
            Node::Var(Var::State(i)) => Some(*i),
            Node::Var(_) => None,
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => a.max_state_index(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                match (a.max_state_index(), b.max_state_index()) {
                    (Some(i), Some(j)) => Some(i.max(j)),
                    (i, j) => i.or(j),
                }
            }
        }
    }

    /// Symbolic partial derivative with respect to the node state `x`.
    pub fn diff_x(&self) -> Expr {
        self.diff(Var::X)
    }

    pub fn diff(&self, v: Var) -> Expr {
        match self.node() {
            Node::Const(_) => Expr::constant(0.0),
            Node::Var(w) => Expr::constant(if *w == v { 1.0 } else { 0.0 }),
            Node::Neg(a) => Expr::neg(a.diff(v)),
            Node::Add(a, b) => Expr::add(a.diff(v), b.diff(v)),
            Node::Sub(a, b) => Expr::sub(a.diff(v), b.diff(v)),
            Node::Mul(a, b) => Expr::add(
                Expr::mul(a.diff(v), b.clone()),
                Expr::mul(a.clone(), b.diff(v)),
            ),
            Node::Div(a, b) => {
                let db = b.diff(v);
                if db.as_const() == Some(0.0) {
                    Expr::div(a.diff(v), b.clone())
                } else {
                    Expr::div(
                        Expr::sub(
                            Expr::mul(a.diff(v), b.clone()),
                            Expr::mul(a.clone(), db),
                        ),
                        Expr::pow(b.clone(), 2),
                    )
                }
            }
            Node::Pow(a, n) => Expr::mul(
                Expr::mul(Expr::constant(*n as f64), Expr::pow(a.clone(), n - 1)),
                a.diff(v),
            ),
            Node::Call(f, a) => {
                let outer = match f {
                    Func::Sin => Expr::call(Func::Cos, a.clone()),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, a.clone())),
                    Func::Tanh => Expr::sub(
                        Expr::constant(1.0),
                        Expr::pow(Expr::call(Func::Tanh, a.clone()), 2),
                    ),
                    Func::Exp => Expr::call(Func::Exp, a.clone()),
                    Func::Log => Expr::div(Expr::constant(1.0), a.clone()),
                };
                Expr::mul(outer, a.diff(v))
            }
        }
    }

    /// Pointwise evaluation at a scalar node state and time.
    pub fn eval(&self, x: f64, t: f64) -> Result<f64, ExprError> {
        self.eval_env(&Env { x, t, state: &[] })
    }

    pub fn eval_env(&self, env: &Env<'_, f64>) -> Result<f64, ExprError> {
        let v = match self.node() {
            Node::Const(c) => *c,
            Node::Var(Var::X) => env.x,
            Node::Var(Var::T) => env.t,
            Node::Var(Var::State(i)) => *env.state.get(*i).ok_or(ExprError::StateIndex {
                index: i + 1,
                dim: env.state.len(),
            })?,
            Node::Neg(a) => -a.eval_env(env)?,
            Node::Add(a, b) => a.eval_env(env)? + b.eval_env(env)?,
            Node::Sub(a, b) => a.eval_env(env)? - b.eval_env(env)?,
            Node::Mul(a, b) => a.eval_env(env)? * b.eval_env(env)?,
            Node::Div(a, b) => {
                let den = b.eval_env(env)?;
                if den == 0.0 {
                    return Err(self.domain_error());
                }
                a.eval_env(env)? / den
            }
            Node::Pow(a, n) => {
                let base = a.eval_env(env)?;
                if *n < 0 && base == 0.0 {
                    return Err(self.domain_error());
                }
                base.powi(*n)
            }
            Node::Call(f, a) => {
                let arg = a.eval_env(env)?;
                match f {
                    Func::Sin => arg.sin(),
                    Func::Cos => arg.cos(),
                    Func::Tanh => arg.tanh(),
                    Func::Exp => arg.exp(),
                    Func::Log => {
                        if arg <= 0.0 {
                            return Err(self.domain_error());
                        }
                        arg.ln()
                    }
                }
            }
        };
        Ok(v)
    }

    /// Interval enclosure of the range over the box `x × t`.
    pub fn eval_interval(&self, x: Interval, t: Interval) -> Result<Interval, ExprError> {
        self.eval_interval_env(&Env { x, t, state: &[] })
    }

    pub fn eval_interval_env(&self, env: &Env<'_, Interval>) -> Result<Interval, ExprError> {
        let r = match self.node() {
            Node::Const(c) => Interval::point(*c),
            Node::Var(Var::X) => env.x,
            Node::Var(Var::T) => env.t,
            Node::Var(Var::State(i)) => *env.state.get(*i).ok_or(ExprError::StateIndex {
                index: i + 1,
                dim: env.state.len(),
            })?,
            Node::Neg(a) => a.eval_interval_env(env)?.neg(),
            Node::Add(a, b) => a.eval_interval_env(env)?.add(b.eval_interval_env(env)?),
            Node::Sub(a, b) => a.eval_interval_env(env)?.sub(b.eval_interval_env(env)?),
            Node::Mul(a, b) => {
                // x*x style squares are handled by Pow; plain products use the 4-corner rule
                a.eval_interval_env(env)?.mul(b.eval_interval_env(env)?)
            }
            Node::Div(a, b) => a
                .eval_interval_env(env)?
                .div(b.eval_interval_env(env)?)
                .ok_or_else(|| self.domain_error())?,
            Node::Pow(a, n) => a
                .eval_interval_env(env)?
                .powi(*n)
                .ok_or_else(|| self.domain_error())?,
            Node::Call(f, a) => {
                let arg = a.eval_interval_env(env)?;
                match f {
                    Func::Sin => arg.sin(),
                    Func::Cos => arg.cos(),
                    Func::Tanh => arg.tanh(),
                    Func::Exp => arg.exp(),
                    Func::Log => arg.ln().ok_or_else(|| self.domain_error())?,
                }
            }
        };
        Ok(r)
    }

    fn domain_error(&self) -> ExprError {
        ExprError::Domain {
            subexpr: self.to_string(),
        }
    }

    fn precedence(&self) -> u8 {
        match self.node() {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(_) => 3,
            Node::Const(c) if c.is_sign_negative() => 3,
            Node::Pow(..) => 4,
            Node::Const(_) | Node::Var(_) | Node::Call(..) => 5,
        }
    }
}

fn fmt_const(c: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let a = c.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        write!(f, "{c}")
    } else {
        write!(f, "{c:e}")
    }
}

fn fmt_child(child: &Expr, parens: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let binary = |f: &mut fmt::Formatter<'_>, a: &Expr, op: &str, b: &Expr| {
            let p = self.precedence();
            fmt_child(a, a.precedence() < p, f)?;
            write!(f, "{op}")?;
            fmt_child(b, b.precedence() <= p, f)
        };
        match self.node() {
            Node::Const(c) => fmt_const(*c, f),
            Node::Var(Var::X) => write!(f, "x"),
            Node::Var(Var::T) => write!(f, "t"),
            Node::Var(Var::State(i)) => write!(f, "x{}", i + 1),
            Node::Neg(a) => {
                write!(f, "-")?;
                fmt_child(a, a.precedence() <= 3, f)
            }
            Node::Add(a, b) => binary(f, a, " + ", b),
            Node::Sub(a, b) => binary(f, a, " - ", b),
            Node::Mul(a, b) => binary(f, a, "*", b),
            Node::Div(a, b) => binary(f, a, "/", b),
            Node::Pow(a, n) => {
                fmt_child(a, a.precedence() < 5, f)?;
                write!(f, "^{n}")
            }
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        Expr::parse(s).unwrap()
    }

    #[test]
    fn parses_cubic_drift() {
        let e = p("-x - x^3");
        match e.node() {
            Node::Sub(a, b) => {
                assert!(matches!(a.node(), Node::Neg(v) if *v.node() == Node::Var(Var::X)));
                assert!(matches!(b.node(), Node::Pow(v, 3) if *v.node() == Node::Var(Var::X)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parses_function_times_constant() {
        let e = p("tanh(x)*2");
        match e.node() {
            Node::Mul(a, b) => {
                assert!(matches!(a.node(), Node::Call(Func::Tanh, _)));
                assert_eq!(b.as_const(), Some(2.0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_offset() {
        match Expr::parse("x ++ 2") {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier() {
        assert!(matches!(
            Expr::parse("y + 1"),
            Err(ExprError::UnknownIdentifier { offset: 0, .. })
        ));
        assert!(matches!(
            Expr::parse("abs(x)"),
            Err(ExprError::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(p("-x - x^3").diff_x().to_string(), "-1 - 3*x^2");
        let d = p("tanh(x)").diff_x();
        assert_eq!(d.to_string(), "1 - tanh(x)^2");
        let d = p("sin(x)*x").diff_x();
        assert_eq!(d.to_string(), "cos(x)*x + sin(x)");
    }

    #[test]
    fn eval_examples() {
        assert_eq!(p("-x - x^3").eval(1.0, 0.0).unwrap(), -2.0);
        assert_eq!(p("tanh(x)").eval(0.0, 0.0).unwrap(), 0.0);
        assert!(matches!(
            p("1/x").eval(0.0, 0.0),
            Err(ExprError::Domain { subexpr }) if subexpr == "1/x"
        ));
        assert!(p("log(x - 1)").eval(0.5, 0.0).is_err());
    }

    #[test]
    fn interval_examples() {
        let box_ = Interval::new(-2.0, 2.0).unwrap();
        let r = p("-1 - 3*x^2")
            .eval_interval(box_, Interval::point(0.0))
            .unwrap();
        assert!(r.lo <= -13.0 && r.lo > -13.0 - 1e-12);
        assert!(r.hi >= -1.0 && r.hi < -1.0 + 1e-12);

        let ab = Interval::new(-0.3, 1.7).unwrap();
        assert_eq!(p("x").eval_interval(ab, Interval::point(0.0)).unwrap(), ab);

        let r = p("tanh(x)")
            .eval_interval(Interval::new(-10.0, 10.0).unwrap(), Interval::point(0.0))
            .unwrap();
        assert!(r.is_subset_of(&Interval::new(-1.0, 1.0).unwrap()));
    }

    #[test]
    fn interval_domain_error_at_singularity() {
        let e = p("1/x");
        assert!(e
            .eval_interval(Interval::new(-1.0, 1.0).unwrap(), Interval::point(0.0))
            .is_err());
    }

    #[test]
    fn printing_round_trips() {
        for s in [
            "-x - x^3",
            "(-x)^2",
            "-(x^2)",
            "x - (x - 1)",
            "x/(x/2)",
            "2*-x",
            "exp(-t)*sin(3*x) + 1e-7",
            "x^-2 + 0.1",
            "x1^2/(1 + x1^2)",
            "--x",
        ] {
            let e = p(s);
            let again = p(&e.to_string());
            assert_eq!(e, again, "{s} printed as {e}");
        }
    }

    #[test]
    fn time_and_state_variables() {
        let e = p("x2*t + x1");
        let v = e
            .eval_env(&Env {
                x: 0.0,
                t: 2.0,
                state: &[1.0, 3.0],
            })
            .unwrap();
        assert_eq!(v, 7.0);
        assert_eq!(e.max_state_index(), Some(1));
        assert!(matches!(
            e.eval(1.0, 1.0),
            Err(ExprError::StateIndex { index: 2, dim: 0 })
        ));
        assert!(p("x + t").depends_on(Var::T));
        assert!(!p("x^2").depends_on(Var::T));
    }
}
