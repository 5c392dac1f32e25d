use super::{Expr, ExprError, Func, Node, Var};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Int(i64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(source: &'a str) -> Result<Vec<(Tok, usize)>, ExprError> {
        let mut lx = Lexer {
            src: source.as_bytes(),
            pos: 0,
        };
        let mut out = Vec::new();
        loop {
            while lx.pos < lx.src.len() && lx.src[lx.pos].is_ascii_whitespace() {
                lx.pos += 1;
            }
            let start = lx.pos;
            let Some(&c) = lx.src.get(lx.pos) else {
                out.push((Tok::End, start));
                return Ok(out);
            };
            let tok = match c {
                b'+' => Tok::Plus,
                b'-' => Tok::Minus,
                b'*' => Tok::Star,
                b'/' => Tok::Slash,
                b'^' => Tok::Caret,
                b'(' => Tok::LParen,
                b')' => Tok::RParen,
                b'0'..=b'9' | b'.' => {
                    out.push((lx.number()?, start));
                    continue;
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    while lx
                        .src
                        .get(lx.pos)
                        .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
                    {
                        lx.pos += 1;
                    }
                    let name = String::from_utf8_lossy(&lx.src[start..lx.pos]).into_owned();
                    out.push((Tok::Ident(name), start));
                    continue;
                }
                _ => {
                    return Err(ExprError::Syntax {
                        offset: start,
                        message: format!("unexpected character `{}`", c as char),
                    })
                }
            };
            lx.pos += 1;
            out.push((tok, start));
        }
    }

    fn number(&mut self) -> Result<Tok, ExprError> {
        let start = self.pos;
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while lx.src.get(lx.pos).is_some_and(u8::is_ascii_digit) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut int_like = digits(self) > 0;
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
            int_like = false;
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            } else {
                int_like = false;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
        let bad = || ExprError::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        };
        if int_like {
            if let Ok(i) = text.parse::<i64>() {
                return Ok(Tok::Int(i));
            }
        }
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Tok::Num)
            .ok_or_else(bad)
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    i: usize,
}

pub(super) fn parse(source: &str) -> Result<Expr, ExprError> {
    let mut p = Parser {
        toks: Lexer::tokens(source)?,
        i: 0,
    };
    let e = p.expr()?;
    match p.peek() {
        Tok::End => Ok(e),
        other => Err(ExprError::Syntax {
            offset: p.offset(),
            message: format!("unexpected {}", describe(other)),
        }),
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Int(v) => format!("number {v}"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::End => "end of input".into(),
    }
}

fn raw(node: Node) -> Expr {
    Expr::wrap(node)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn offset(&self) -> usize {
        self.toks[self.i].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn starts_operand(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Num(_) | Tok::Int(_) | Tok::Ident(_) | Tok::LParen | Tok::Minus
        )
    }

    /// Operand after a binary operator; a missing operand is reported at the
    /// operator's offset.
    fn operand<F>(&mut self, op_offset: usize, op: &str, f: F) -> Result<Expr, ExprError>
    where
        F: FnOnce(&mut Self) -> Result<Expr, ExprError>,
    {
        if !self.starts_operand() {
            return Err(ExprError::Syntax {
                offset: op_offset,
                message: format!("operator `{op}` is missing its right operand"),
            });
        }
        f(self)
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    let (_, at) = self.bump();
                    let rhs = self.operand(at, "+", Self::term)?;
                    lhs = raw(Node::Add(lhs, rhs));
                }
                Tok::Minus => {
                    let (_, at) = self.bump();
                    let rhs = self.operand(at, "-", Self::term)?;
                    lhs = raw(Node::Sub(lhs, rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    let (_, at) = self.bump();
                    let rhs = self.operand(at, "*", Self::unary)?;
                    lhs = raw(Node::Mul(lhs, rhs));
                }
                Tok::Slash => {
                    let (_, at) = self.bump();
                    let rhs = self.operand(at, "/", Self::unary)?;
                    lhs = raw(Node::Div(lhs, rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Minus {
            let (_, at) = self.bump();
            let inner = self.operand(at, "-", Self::unary)?;
            return Ok(raw(Node::Neg(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        let (_, at) = self.bump();
        let negative = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match self.bump() {
            (Tok::Int(n), off) => {
                let n = if negative { -n } else { n };
                let n = i32::try_from(n).map_err(|_| ExprError::Syntax {
                    offset: off,
                    message: "exponent out of range".into(),
                })?;
                Ok(raw(Node::Pow(base, n)))
            }
            (_, _) => Err(ExprError::Syntax {
                offset: at,
                message: "`^` must be followed by an integer literal".into(),
            }),
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let offset = self.offset();
        match self.bump() {
            (Tok::Num(v), _) => Ok(raw(Node::Const(v))),
            (Tok::Int(v), _) => Ok(raw(Node::Const(v as f64))),
            (Tok::LParen, _) => {
                let e = self.expr()?;
                self.expect_rparen(offset)?;
                Ok(e)
            }
            (Tok::Ident(name), _) => self.ident(name, offset),
            (tok, _) => Err(ExprError::Syntax {
                offset,
                message: format!("expected an operand, found {}", describe(&tok)),
            }),
        }
    }

    fn expect_rparen(&mut self, open: usize) -> Result<(), ExprError> {
        if *self.peek() == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            Err(ExprError::Syntax {
                offset: self.offset(),
                message: format!("expected `)` to close `(` at offset {open}"),
            })
        }
    }

    fn ident(&mut self, name: String, offset: usize) -> Result<Expr, ExprError> {
        if let Some(func) = Func::from_name(&name) {
            if *self.peek() != Tok::LParen {
                return Err(ExprError::Syntax {
                    offset: self.offset(),
                    message: format!("expected `(` after `{name}`"),
                });
            }
            let open = self.offset();
            self.bump();
            let arg = self.expr()?;
            self.expect_rparen(open)?;
            return Ok(raw(Node::Call(func, arg)));
        }
        let var = match name.as_str() {
            "x" => Var::X,
            "t" => Var::T,
            s => match s.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                Some(k) if k >= 1 && !s[1..].starts_with('0') => Var::State(k - 1),
                _ => return Err(ExprError::UnknownIdentifier { name, offset }),
            },
        };
        Ok(raw(Node::Var(var)))
    }
}
