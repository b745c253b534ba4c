//! Small arithmetic expression language used for model functions and
//! initial data in configuration files.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?          right associative
//! atom  := number | var | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Variables are `x`, `y`, `z`, `t` and `s`; functions are `sin`, `cos`,
//! `exp`, `log`, `sqrt`, `abs`, `min` and `max`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
    Z,
    T,
    S,
}

impl Var {
    fn from_name(name: &str) -> Option<Var> {
        match name {
            "x" => Some(Var::X),
            "y" => Some(Var::Y),
            "z" => Some(Var::Z),
            "t" => Some(Var::T),
            "s" => Some(Var::S),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::Z => "z",
            Var::T => "t",
            Var::S => "s",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin {
        op: BinOp,
        lhs: Box<Node>,
        rhs: Box<Node>,
        pos: usize,
    },
    Call {
        func: Func,
        args: Vec<Node>,
        pos: usize,
    },
}

/// Values bound to the expression variables during evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bindings {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t: f64,
    pub s: f64,
}

impl Bindings {
    pub fn point(p: [f64; 3], t: f64) -> Self {
        Bindings {
            x: p[0],
            y: p[1],
            z: p[2],
            t,
            s: 0.0,
        }
    }

    pub fn scalar(s: f64) -> Self {
        Bindings {
            s,
            ..Default::default()
        }
    }

    fn get(&self, v: Var) -> f64 {
        match v {
            Var::X => self.x,
            Var::Y => self.y,
            Var::Z => self.z,
            Var::T => self.t,
            Var::S => self.s,
        }
    }
}

/// A parsed expression. Keeps its source text for display and re-emission.
#[derive(Debug, Clone)]
pub struct Expr {
    source: String,
    root: Node,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr> {
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            len: source.len(),
        };
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(Error::Expression {
                column: tok.pos + 1,
                reason: format!("unexpected token {:?}", tok.kind),
            });
        }
        Ok(Expr {
            source: source.trim().to_string(),
            root,
        })
    }

    /// Constant expression holding `value`, rendered so that it re-parses exactly.
    pub fn constant(value: f64) -> Expr {
        let source = if value < 0.0 {
            format!("({value:?})")
        } else {
            format!("{value:?}")
        };
        Expr {
            root: Node::Num(value),
            source,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, b: &Bindings) -> Result<f64> {
        eval_node(&self.root, b)
    }

    pub fn eval_point(&self, p: [f64; 3], t: f64) -> Result<f64> {
        self.eval(&Bindings::point(p, t))
    }

    pub fn eval_scalar(&self, s: f64) -> Result<f64> {
        self.eval(&Bindings::scalar(s))
    }

    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        collect_vars(&self.root, &mut out);
        out
    }

    /// Errors if the expression references a variable outside `allowed`.
    pub fn require_vars(&self, allowed: &[Var]) -> Result<()> {
        match self.variables().into_iter().find(|v| !allowed.contains(v)) {
            Some(v) => Err(Error::Expression {
                column: self.source.find(v.name()).map_or(0, |c| c + 1),
                reason: format!("variable `{}` is not available here", v.name()),
            }),
            None => Ok(()),
        }
    }

    pub fn is_zero_constant(&self) -> bool {
        matches!(self.root, Node::Num(v) if v == 0.0)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Expr> {
        Expr::parse(s)
    }
}

fn collect_vars(node: &Node, out: &mut Vec<Var>) {
    match node {
        Node::Num(_) => {}
        Node::Var(v) => {
            if !out.contains(v) {
                out.push(*v)
            }
        }
        Node::Neg(inner) => collect_vars(inner, out),
        Node::Bin { lhs, rhs, .. } => {
            collect_vars(lhs, out);
            collect_vars(rhs, out);
        }
        Node::Call { args, .. } => args.iter().for_each(|a| collect_vars(a, out)),
    }
}

fn eval_error(pos: usize, reason: impl Into<String>) -> Error {
    Error::Expression {
        column: pos + 1,
        reason: reason.into(),
    }
}

fn eval_node(node: &Node, b: &Bindings) -> Result<f64> {
    match node {
        Node::Num(v) => Ok(*v),
        Node::Var(v) => Ok(b.get(*v)),
        Node::Neg(inner) => Ok(-eval_node(inner, b)?),
        Node::Bin { op, lhs, rhs, pos } => {
            let l = eval_node(lhs, b)?;
            let r = eval_node(rhs, b)?;
            let v = match op {
                BinOp::Add => l + r,
                BinOp::Sub => l - r,
                BinOp::Mul => l * r,
                BinOp::Div => {
                    if r == 0.0 {
                        return Err(eval_error(*pos, "division by zero"));
                    }
                    l / r
                }
                BinOp::Pow => l.powf(r),
            };
            if v.is_finite() {
                Ok(v)
            } else {
                Err(eval_error(*pos, format!("non-finite result from {l} {op:?} {r}")))
            }
        }
        Node::Call { func, args, pos } => {
            let a = eval_node(&args[0], b)?;
            let v = match func {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Log => {
                    if a <= 0.0 {
                        return Err(eval_error(*pos, format!("log of non-positive value {a}")));
                    }
                    a.ln()
                }
                Func::Sqrt => {
                    if a < 0.0 {
                        return Err(eval_error(*pos, format!("sqrt of negative value {a}")));
                    }
                    a.sqrt()
                }
                Func::Abs => a.abs(),
                Func::Min => a.min(eval_node(&args[1], b)?),
                Func::Max => a.max(eval_node(&args[1], b)?),
            };
            if v.is_finite() {
                Ok(v)
            } else {
                Err(eval_error(*pos, format!("non-finite result from {func:?}({a})")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i] as char;
        if ch.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if ch.is_ascii_digit() || ch == '.' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let value: f64 = text
                .parse()
                .map_err(|_| eval_error(start, format!("malformed number `{text}`")))?;
            out.push(Token {
                kind: TokKind::Num(value),
                pos: start,
            });
            continue;
        }
        if ch.is_ascii_alphabetic() || ch == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
            {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(src[start..i].to_string()),
                pos: start,
            });
            continue;
        }
        let kind = match ch {
            '+' | '-' | '*' | '/' | '^' => TokKind::Op(ch),
            '(' => TokKind::LParen,
            ')' => TokKind::RParen,
            ',' => TokKind::Comma,
            _ => return Err(eval_error(start, format!("unexpected character `{ch}`"))),
        };
        out.push(Token { kind, pos: start });
        i += ch.len_utf8();
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.tokens.get(self.pos);
        self.pos += 1;
        t
    }

    fn end_pos(&self) -> usize {
        self.len
    }

    fn expect(&mut self, kind: TokKind, what: &str) -> Result<()> {
        match self.next() {
            Some(t) if t.kind == kind => Ok(()),
            Some(t) => Err(eval_error(t.pos, format!("expected {what}"))),
            None => Err(eval_error(self.end_pos(), format!("expected {what}, found end of input"))),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(tok) = self.peek() {
            let op = match tok.kind {
                TokKind::Op('+') => BinOp::Add,
                TokKind::Op('-') => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                pos: tok.pos,
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(tok) = self.peek() {
            let op = match tok.kind {
                TokKind::Op('*') => BinOp::Mul,
                TokKind::Op('/') => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                pos: tok.pos,
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if let Some(tok) = self.peek() {
            if tok.kind == TokKind::Op('-') {
                self.pos += 1;
                return Ok(Node::Neg(Box::new(self.unary()?)));
            }
            if tok.kind == TokKind::Op('+') {
                self.pos += 1;
                return self.unary();
            }
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(tok) = self.peek() {
            if tok.kind == TokKind::Op('^') {
                self.pos += 1;
                let exponent = self.unary()?;
                return Ok(Node::Bin {
                    op: BinOp::Pow,
                    lhs: Box::new(base),
                    rhs: Box::new(exponent),
                    pos: tok.pos,
                });
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let end = self.end_pos();
        let tok = self
            .next()
            .ok_or_else(|| eval_error(end, "unexpected end of input"))?;
        match &tok.kind {
            TokKind::Num(v) => Ok(Node::Num(*v)),
            TokKind::LParen => {
                let inner = self.expr()?;
                self.expect(TokKind::RParen, "`)`")?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                if let Some(func) = Func::from_name(name) {
                    self.expect(TokKind::LParen, &format!("`(` after `{name}`"))?;
                    let mut args = vec![self.expr()?];
                    while matches!(self.peek(), Some(t) if t.kind == TokKind::Comma) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(TokKind::RParen, "`)`")?;
                    if args.len() != func.arity() {
                        return Err(eval_error(
                            tok.pos,
                            format!("`{name}` takes {} argument(s), got {}", func.arity(), args.len()),
                        ));
                    }
                    Ok(Node::Call {
                        func,
                        args,
                        pos: tok.pos,
                    })
                } else if let Some(v) = Var::from_name(name) {
                    Ok(Node::Var(v))
                } else {
                    Err(eval_error(tok.pos, format!("undefined variable `{name}`")))
                }
            }
            other => Err(eval_error(tok.pos, format!("unexpected token {other:?}"))),
        }
    }
}
