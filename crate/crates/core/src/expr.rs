//! Scalar expressions in the plane variables `x`, `y`.
//!
//! Conformal factors, potentials, and conductivities enter through small
//! closed-form expressions, so the surface format accepts a string in the
//! grammar
//!
//! ```text
//! expr   := term  (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?            (right associative)
//! atom   := number | 'x' | 'y' | fn '(' expr ')' | '(' expr ')'
//! fn     := exp | sin | cos | sqrt | abs
//! ```
//!
//! Evaluation is available on plain floats and on order-2 jets (value,
//! gradient, Hessian), so geodesic right-hand sides and curvature come out
//! exact rather than finite-differenced.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("unexpected character {0:?} at byte {1}")]
    BadChar(char, usize),
    #[error("unexpected token {0:?}")]
    BadToken(String),
    #[error("unexpected end of expression")]
    Eof,
    #[error("unknown function {0:?}")]
    UnknownFn(String),
    #[error("trailing input after expression: {0:?}")]
    Trailing(String),
}

/// Order-2 jet at a point of the plane: value, gradient, and Hessian.
///
/// Arithmetic propagates derivatives exactly, which is what the geodesic
/// integrator (needs ∇λ) and the Jacobi equation (needs Δλ) consume.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2 {
    pub v: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dxy: f64,
    pub dyy: f64,
}

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        Jet2 { v, dx: 0.0, dy: 0.0, dxx: 0.0, dxy: 0.0, dyy: 0.0 }
    }

    pub fn var_x(x: f64) -> Self {
        Jet2 { v: x, dx: 1.0, dy: 0.0, dxx: 0.0, dxy: 0.0, dyy: 0.0 }
    }

    pub fn var_y(y: f64) -> Self {
        Jet2 { v: y, dx: 0.0, dy: 1.0, dxx: 0.0, dxy: 0.0, dyy: 0.0 }
    }

    pub fn laplacian(&self) -> f64 {
        self.dxx + self.dyy
    }

    fn add(a: Jet2, b: Jet2) -> Jet2 {
        Jet2 {
            v: a.v + b.v,
            dx: a.dx + b.dx,
            dy: a.dy + b.dy,
            dxx: a.dxx + b.dxx,
            dxy: a.dxy + b.dxy,
            dyy: a.dyy + b.dyy,
        }
    }

    fn neg(a: Jet2) -> Jet2 {
        Jet2 { v: -a.v, dx: -a.dx, dy: -a.dy, dxx: -a.dxx, dxy: -a.dxy, dyy: -a.dyy }
    }

    fn mul(a: Jet2, b: Jet2) -> Jet2 {
        Jet2 {
            v: a.v * b.v,
            dx: a.dx * b.v + a.v * b.dx,
            dy: a.dy * b.v + a.v * b.dy,
            dxx: a.dxx * b.v + 2.0 * a.dx * b.dx + a.v * b.dxx,
            dxy: a.dxy * b.v + a.dx * b.dy + a.dy * b.dx + a.v * b.dxy,
            dyy: a.dyy * b.v + 2.0 * a.dy * b.dy + a.v * b.dyy,
        }
    }

    /// Composition with a scalar function given by value and two derivatives.
    fn chain(a: Jet2, f: f64, df: f64, d2f: f64) -> Jet2 {
        Jet2 {
            v: f,
            dx: df * a.dx,
            dy: df * a.dy,
            dxx: d2f * a.dx * a.dx + df * a.dxx,
            dxy: d2f * a.dx * a.dy + df * a.dxy,
            dyy: d2f * a.dy * a.dy + df * a.dyy,
        }
    }

    fn recip(a: Jet2) -> Jet2 {
        let inv = 1.0 / a.v;
        Jet2::chain(a, inv, -inv * inv, 2.0 * inv * inv * inv)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    X,
    Y,
    S,
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Exp(Box<Node>),
    Sin(Box<Node>),
    Cos(Box<Node>),
    Sqrt(Box<Node>),
    Abs(Box<Node>),
}

/// Parsed expression over (x, y).
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

impl Expr {
    /// Planar expression over (x, y); the axial variable s is rejected.
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let e = Self::parse_cylinder(src)?;
        if contains_s(&e.root) {
            return Err(ExprError::BadToken("s (planar expression expected)".into()));
        }
        Ok(e)
    }

    /// Cylinder expression over (x, y, s), s being the axial coordinate.
    pub fn parse_cylinder(src: &str) -> Result<Expr, ExprError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(ExprError::Trailing(format!("{:?}", p.tokens[p.pos])));
        }
        Ok(Expr { root, source: src.to_string() })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        eval_f64(&self.root, x, y, 0.0)
    }

    /// Evaluates on the cylinder; planar expressions ignore s.
    pub fn eval_cylinder(&self, x: f64, y: f64, s: f64) -> f64 {
        eval_f64(&self.root, x, y, s)
    }

    pub fn eval_jet(&self, x: f64, y: f64) -> Jet2 {
        eval_jet(&self.root, x, y)
    }
}

fn contains_s(n: &Node) -> bool {
    match n {
        Node::S => true,
        Node::Num(_) | Node::X | Node::Y => false,
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            contains_s(a) || contains_s(b)
        }
        Node::Neg(a) | Node::Exp(a) | Node::Sin(a) | Node::Cos(a) | Node::Sqrt(a) | Node::Abs(a) => {
            contains_s(a)
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let src = String::deserialize(d)?;
        Expr::parse(&src).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<Tok>, ExprError> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                out.push(Tok::Minus);
                i += 1;
            }
            '*' => {
                out.push(Tok::Star);
                i += 1;
            }
            '/' => {
                out.push(Tok::Slash);
                i += 1;
            }
            '^' => {
                out.push(Tok::Caret);
                i += 1;
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // exponent suffix like 1e-3
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| ExprError::BadToken(text.to_string()))?;
                out.push(Tok::Num(v));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                out.push(Tok::Ident(src[start..i].to_string()));
            }
            other => return Err(ExprError::BadChar(other, i)),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<Tok, ExprError> {
        let t = self.tokens.get(self.pos).cloned().ok_or(ExprError::Eof)?;
        self.pos += 1;
        Ok(t)
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.next()? {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                match self.next()? {
                    Tok::RParen => Ok(inner),
                    t => Err(ExprError::BadToken(format!("{t:?}"))),
                }
            }
            Tok::Ident(name) => match name.as_str() {
                "x" => Ok(Node::X),
                "y" => Ok(Node::Y),
                "s" => Ok(Node::S),
                "exp" | "sin" | "cos" | "sqrt" | "abs" => {
                    match self.next()? {
                        Tok::LParen => {}
                        t => return Err(ExprError::BadToken(format!("{t:?}"))),
                    }
                    let arg = Box::new(self.expr()?);
                    match self.next()? {
                        Tok::RParen => {}
                        t => return Err(ExprError::BadToken(format!("{t:?}"))),
                    }
                    Ok(match name.as_str() {
                        "exp" => Node::Exp(arg),
                        "sin" => Node::Sin(arg),
                        "cos" => Node::Cos(arg),
                        "sqrt" => Node::Sqrt(arg),
                        _ => Node::Abs(arg),
                    })
                }
                other => Err(ExprError::UnknownFn(other.to_string())),
            },
            t => Err(ExprError::BadToken(format!("{t:?}"))),
        }
    }
}

fn eval_f64(n: &Node, x: f64, y: f64, s: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::X => x,
        Node::Y => y,
        Node::S => s,
        Node::Add(a, b) => eval_f64(a, x, y, s) + eval_f64(b, x, y, s),
        Node::Sub(a, b) => eval_f64(a, x, y, s) - eval_f64(b, x, y, s),
        Node::Mul(a, b) => eval_f64(a, x, y, s) * eval_f64(b, x, y, s),
        Node::Div(a, b) => eval_f64(a, x, y, s) / eval_f64(b, x, y, s),
        Node::Neg(a) => -eval_f64(a, x, y, s),
        Node::Pow(a, b) => eval_f64(a, x, y, s).powf(eval_f64(b, x, y, s)),
        Node::Exp(a) => eval_f64(a, x, y, s).exp(),
        Node::Sin(a) => eval_f64(a, x, y, s).sin(),
        Node::Cos(a) => eval_f64(a, x, y, s).cos(),
        Node::Sqrt(a) => eval_f64(a, x, y, s).sqrt(),
        Node::Abs(a) => eval_f64(a, x, y, s).abs(),
    }
}

fn eval_jet(n: &Node, x: f64, y: f64) -> Jet2 {
    match n {
        Node::Num(v) => Jet2::constant(*v),
        Node::X => Jet2::var_x(x),
        Node::Y => Jet2::var_y(y),
        Node::S => panic!("planar jets are undefined for cylinder expressions"),
        Node::Add(a, b) => Jet2::add(eval_jet(a, x, y), eval_jet(b, x, y)),
        Node::Sub(a, b) => Jet2::add(eval_jet(a, x, y), Jet2::neg(eval_jet(b, x, y))),
        Node::Mul(a, b) => Jet2::mul(eval_jet(a, x, y), eval_jet(b, x, y)),
        Node::Div(a, b) => Jet2::mul(eval_jet(a, x, y), Jet2::recip(eval_jet(b, x, y))),
        Node::Neg(a) => Jet2::neg(eval_jet(a, x, y)),
        Node::Pow(a, b) => {
            let base = eval_jet(a, x, y);
            let expo = eval_jet(b, x, y);
            let is_const_exp = expo.dx == 0.0
                && expo.dy == 0.0
                && expo.dxx == 0.0
                && expo.dxy == 0.0
                && expo.dyy == 0.0;
            if is_const_exp {
                let p = expo.v;
                let f = base.v.powf(p);
                let df = p * base.v.powf(p - 1.0);
                let d2f = p * (p - 1.0) * base.v.powf(p - 2.0);
                Jet2::chain(base, f, df, d2f)
            } else {
                // a^b = exp(b ln a), requires a > 0
                let ln = Jet2::chain(base, base.v.ln(), 1.0 / base.v, -1.0 / (base.v * base.v));
                let prod = Jet2::mul(expo, ln);
                let e = prod.v.exp();
                Jet2::chain(prod, e, e, e)
            }
        }
        Node::Exp(a) => {
            let j = eval_jet(a, x, y);
            let e = j.v.exp();
            Jet2::chain(j, e, e, e)
        }
        Node::Sin(a) => {
            let j = eval_jet(a, x, y);
            Jet2::chain(j, j.v.sin(), j.v.cos(), -j.v.sin())
        }
        Node::Cos(a) => {
            let j = eval_jet(a, x, y);
            Jet2::chain(j, j.v.cos(), -j.v.sin(), -j.v.cos())
        }
        Node::Sqrt(a) => {
            let j = eval_jet(a, x, y);
            let r = j.v.sqrt();
            Jet2::chain(j, r, 0.5 / r, -0.25 / (r * j.v))
        }
        Node::Abs(a) => {
            let j = eval_jet(a, x, y);
            let s = if j.v >= 0.0 { 1.0 } else { -1.0 };
            Jet2::chain(j, j.v.abs(), s, 0.0)
        }
    }
}
