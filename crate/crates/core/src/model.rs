//! Model-function expressions: parsing, evaluation and radial analysis.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | atom
//! atom  := number | param | '(' expr ')'
//!        | abs(zarg) | abs2(zarg) | re(zk) | im(zk)
//!        | log(expr) | ln(expr) | max(expr, ...) | min(expr, ...)
//! zarg  := ('z' | 'z1' | 'z2') [('-' | '+') center]
//! center:= complex | '(' complex (',' complex)* ')'
//! complex := ['-'] number ['i'] (('+' | '-') number ['i'])*
//! ```
//!
//! `abs(z)` is the full Hermitian norm, `abs(zk)` the modulus of one
//! coordinate. `abs(z - a)` with a single complex `a` shifts the first
//! coordinate; `abs(z - (a, b))` shifts both. Any other identifier is a
//! parameter that must be bound before evaluation.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::grid::Domain;
use crate::radial::{self, Jet, RadialProfile};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Param(String),
    Re(usize),
    Im(usize),
    /// `|z - c|` (coord `None`) or `|z_k - c_k|`.
    Abs { coord: Option<usize>, center: [f64; 4] },
    Abs2 { coord: Option<usize>, center: [f64; 4] },
    Log(Box<Node>),
    Max(Vec<Node>),
    Min(Vec<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Neg(Box<Node>),
}

/// A parsed model function.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    root: Node,
}

/// Parse a model expression.
pub fn parse_model(text: &str) -> Result<Model> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0, len: text.len() };
    let root = p.expr()?;
    if let Some(t) = p.peek() {
        return Err(Error::Parse { offset: t.offset, message: format!("unexpected `{}`", t.kind) });
    }
    Ok(Model { root })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Imag(f64),
    Ident(String),
    Sym(char),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "{v}"),
            Tok::Imag(v) => write!(f, "{v}i"),
            Tok::Ident(s) => write!(f, "{s}"),
            Tok::Sym(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    offset: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
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
            let v: f64 = text[start..i].parse().map_err(|_| Error::Parse {
                offset: start,
                message: format!("malformed number `{}`", &text[start..i]),
            })?;
            let imag = i < bytes.len()
                && bytes[i] == b'i'
                && !(i + 1 < bytes.len() && (bytes[i + 1].is_ascii_alphanumeric() || bytes[i + 1] == b'_'));
            if imag {
                i += 1;
                out.push(Token { kind: Tok::Imag(v), offset: start });
            } else {
                out.push(Token { kind: Tok::Num(v), offset: start });
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { kind: Tok::Ident(text[start..i].to_string()), offset: start });
        } else if "+-*/(),".contains(c) {
            out.push(Token { kind: Tok::Sym(c), offset: start });
            i += 1;
        } else {
            return Err(Error::Parse { offset: start, message: format!("unexpected character `{c}`") });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek().map(|t| t.offset).unwrap_or(self.len)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse { offset: self.offset(), message: message.into() })
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Token { kind: Tok::Sym(s), .. }) if *s == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<()> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_sym('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_sym('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_sym('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_sym('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat_sym('-') {
            return Ok(match self.unary()? {
                Node::Const(v) => Node::Const(-v),
                other => Node::Neg(Box::new(other)),
            });
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Node> {
        let Some(tok) = self.peek().cloned() else {
            return self.err("expected an expression");
        };
        match tok.kind {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            Tok::Imag(_) => self.err("imaginary constants are only allowed as centers"),
            Tok::Sym('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_sym(')')?;
                Ok(e)
            }
            Tok::Sym(c) => self.err(format!("unexpected `{c}`")),
            Tok::Ident(name) => {
                self.pos += 1;
                let call = self.eat_sym('(');
                if !call {
                    if zvar(&name).is_some() {
                        self.pos -= 1;
                        return self.err(format!("`{name}` must appear inside abs, abs2, re or im"));
                    }
                    if name == "i" {
                        self.pos -= 1;
                        return self.err("`i` is reserved");
                    }
                    return Ok(Node::Param(name));
                }
                let node = match name.as_str() {
                    "abs" | "abs2" => {
                        let (coord, center) = self.zarg()?;
                        if name == "abs" {
                            Node::Abs { coord, center }
                        } else {
                            Node::Abs2 { coord, center }
                        }
                    }
                    "re" | "im" => {
                        let Some(Token { kind: Tok::Ident(z), .. }) = self.peek().cloned() else {
                            return self.err("expected z1 or z2");
                        };
                        let k = match zvar(&z) {
                            Some(Some(k)) => k,
                            Some(None) => 0,
                            None => return self.err("expected z1 or z2"),
                        };
                        self.pos += 1;
                        if name == "re" { Node::Re(k) } else { Node::Im(k) }
                    }
                    "log" | "ln" => Node::Log(Box::new(self.expr()?)),
                    "max" | "min" => {
                        let mut args = vec![self.expr()?];
                        while self.eat_sym(',') {
                            args.push(self.expr()?);
                        }
                        if name == "max" { Node::Max(args) } else { Node::Min(args) }
                    }
                    _ => {
                        self.pos -= 2;
                        return self.err(format!("unknown function `{name}`"));
                    }
                };
                self.expect_sym(')')?;
                Ok(node)
            }
        }
    }

    fn zarg(&mut self) -> Result<(Option<usize>, [f64; 4])> {
        let Some(Token { kind: Tok::Ident(z), .. }) = self.peek().cloned() else {
            return self.err("expected z, z1 or z2");
        };
        let Some(coord) = zvar(&z) else {
            return self.err("expected z, z1 or z2");
        };
        self.pos += 1;
        let mut center = [0.0; 4];
        let sign = if self.eat_sym('-') {
            1.0
        } else if self.eat_sym('+') {
            -1.0
        } else {
            return Ok((coord, center));
        };
        let parts = if self.eat_sym('(') {
            let mut parts = vec![self.complex()?];
            while self.eat_sym(',') {
                parts.push(self.complex()?);
            }
            self.expect_sym(')')?;
            parts
        } else {
            vec![self.complex()?]
        };
        let base = coord.unwrap_or(0);
        if base + parts.len() > 2 || (coord.is_some() && parts.len() > 1) {
            return self.err("too many center coordinates");
        }
        for (k, p) in parts.iter().enumerate() {
            center[2 * (base + k)] = sign * p[0];
            center[2 * (base + k) + 1] = sign * p[1];
        }
        Ok((coord, center))
    }

    fn complex(&mut self) -> Result<[f64; 2]> {
        let mut out = [0.0; 2];
        let mut sign = if self.eat_sym('-') { -1.0 } else { 1.0 };
        loop {
            match self.peek().map(|t| t.kind.clone()) {
                Some(Tok::Num(v)) => out[0] += sign * v,
                Some(Tok::Imag(v)) => out[1] += sign * v,
                _ => return self.err("expected a number"),
            }
            self.pos += 1;
            // continue only when the next number is part of the literal
            let next_is_num = matches!(
                self.tokens.get(self.pos + 1).map(|t| &t.kind),
                Some(Tok::Num(_)) | Some(Tok::Imag(_))
            );
            let after_num = !matches!(
                self.tokens.get(self.pos + 2).map(|t| &t.kind),
                Some(Tok::Sym('*')) | Some(Tok::Sym('/'))
            );
            if next_is_num && after_num && self.eat_sym('+') {
                sign = 1.0;
            } else if next_is_num && after_num && self.eat_sym('-') {
                sign = -1.0;
            } else {
                return Ok(out);
            }
        }
    }
}

/// `Some(None)` for `z`, `Some(Some(k))` for `z{k+1}`.
fn zvar(name: &str) -> Option<Option<usize>> {
    match name {
        "z" => Some(None),
        "z1" => Some(Some(0)),
        "z2" => Some(Some(1)),
        _ => None,
    }
}

fn modulus(coord: Option<usize>, center: &[f64; 4], x: &[f64; 4]) -> f64 {
    match coord {
        None => (0..4).map(|i| (x[i] - center[i]).powi(2)).sum::<f64>().sqrt(),
        Some(k) => ((x[2 * k] - center[2 * k]).powi(2) + (x[2 * k + 1] - center[2 * k + 1]).powi(2)).sqrt(),
    }
}

fn eval_node(node: &Node, x: &[f64; 4]) -> f64 {
    match node {
        Node::Const(v) => *v,
        Node::Param(_) => f64::NAN,
        Node::Re(k) => x[2 * k],
        Node::Im(k) => x[2 * k + 1],
        Node::Abs { coord, center } => modulus(*coord, center, x),
        Node::Abs2 { coord, center } => modulus(*coord, center, x).powi(2),
        Node::Log(a) => {
            let v = eval_node(a, x);
            if v < 0.0 { f64::NAN } else { v.ln() }
        }
        Node::Max(args) => args.iter().map(|a| eval_node(a, x)).fold(f64::NEG_INFINITY, nan_max),
        Node::Min(args) => args.iter().map(|a| eval_node(a, x)).fold(f64::INFINITY, nan_min),
        Node::Add(a, b) => eval_node(a, x) + eval_node(b, x),
        Node::Sub(a, b) => eval_node(a, x) - eval_node(b, x),
        Node::Mul(a, b) => {
            let (p, q) = (eval_node(a, x), eval_node(b, x));
            // 0 * (-inf) at a pole stays at the finite factor's value
            if p == 0.0 || q == 0.0 { 0.0 } else { p * q }
        }
        Node::Div(a, b) => eval_node(a, x) / eval_node(b, x),
        Node::Neg(a) => -eval_node(a, x),
    }
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) }
}

fn nan_min(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() { f64::NAN } else { a.min(b) }
}

impl Model {
    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn constant(v: f64) -> Model {
        Model { root: Node::Const(v) }
    }

    pub fn from_node(root: Node) -> Model {
        Model { root }
    }

    /// Value at a point given by real coordinates `(x1, y1, x2, y2)`.
    /// Returns NaN on a domain error and `-inf` at log poles.
    pub fn eval(&self, x: &[f64; 4]) -> f64 {
        eval_node(&self.root, x)
    }

    /// Names of unbound parameters, sorted.
    pub fn free_params(&self) -> Vec<String> {
        fn walk(n: &Node, out: &mut Vec<String>) {
            match n {
                Node::Param(p) => out.push(p.clone()),
                Node::Log(a) | Node::Neg(a) => walk(a, out),
                Node::Max(v) | Node::Min(v) => v.iter().for_each(|a| walk(a, out)),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                    walk(a, out);
                    walk(b, out)
                }
                _ => {}
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out.sort();
        out.dedup();
        out
    }

    /// Substitute parameter values.
    pub fn bind(&self, params: &BTreeMap<String, f64>) -> Model {
        fn sub(n: &Node, p: &BTreeMap<String, f64>) -> Node {
            let b = |a: &Node| Box::new(sub(a, p));
            match n {
                Node::Param(name) => p.get(name).map(|v| Node::Const(*v)).unwrap_or_else(|| n.clone()),
                Node::Log(a) => Node::Log(b(a)),
                Node::Neg(a) => Node::Neg(b(a)),
                Node::Max(v) => Node::Max(v.iter().map(|a| sub(a, p)).collect()),
                Node::Min(v) => Node::Min(v.iter().map(|a| sub(a, p)).collect()),
                Node::Add(x, y) => Node::Add(b(x), b(y)),
                Node::Sub(x, y) => Node::Sub(b(x), b(y)),
                Node::Mul(x, y) => Node::Mul(b(x), b(y)),
                Node::Div(x, y) => Node::Div(b(x), b(y)),
                other => other.clone(),
            }
        }
        Model { root: sub(&self.root, params) }
    }

    /// Bind a single parameter.
    pub fn with_param(&self, name: &str, value: f64) -> Model {
        let mut p = BTreeMap::new();
        p.insert(name.to_string(), value);
        self.bind(&p)
    }

    /// Error unless every parameter is bound.
    pub fn require_bound(&self) -> Result<()> {
        match self.free_params().into_iter().next() {
            Some(p) => Err(Error::UnboundParameter(p)),
            None => Ok(()),
        }
    }

    /// Highest complex coordinate referenced (1 or 2).
    pub fn dim_used(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Re(k) | Node::Im(k) => k + 1,
                Node::Abs { coord, center } | Node::Abs2 { coord, center } => {
                    let c = if center[2] != 0.0 || center[3] != 0.0 { 2 } else { 1 };
                    c.max(coord.map(|k| k + 1).unwrap_or(1))
                }
                Node::Log(a) | Node::Neg(a) => walk(a),
                Node::Max(v) | Node::Min(v) => v.iter().map(walk).max().unwrap_or(1),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => walk(a).max(walk(b)),
                _ => 1,
            }
        }
        walk(&self.root)
    }

    pub fn add(&self, other: &Model) -> Model {
        Model { root: Node::Add(Box::new(self.root.clone()), Box::new(other.root.clone())) }
    }
    pub fn sub(&self, other: &Model) -> Model {
        Model { root: Node::Sub(Box::new(self.root.clone()), Box::new(other.root.clone())) }
    }
    pub fn scale(&self, c: f64) -> Model {
        Model { root: Node::Mul(Box::new(Node::Const(c)), Box::new(self.root.clone())) }
    }
    pub fn max_of(models: &[Model]) -> Model {
        Model { root: Node::Max(models.iter().map(|m| m.root.clone()).collect()) }
    }

    /// Center about which the model is rotation invariant in C^n, if it
    /// depends on `z` only through one full-norm modulus.
    pub fn radial_center(&self, n: usize) -> Option<[f64; 4]> {
        self.radial_center_or(n, [0.0; 4])
    }

    /// As [`Model::radial_center`], with `fallback` for models free of `z`.
    pub fn radial_center_or(&self, n: usize, fallback: [f64; 4]) -> Option<[f64; 4]> {
        fn walk(node: &Node, n: usize, c: &mut Option<[f64; 4]>) -> bool {
            match node {
                Node::Const(_) => true,
                Node::Param(_) | Node::Re(_) | Node::Im(_) => false,
                Node::Abs { coord, center } | Node::Abs2 { coord, center } => {
                    let full = coord.is_none() || (n == 1 && *coord == Some(0));
                    if !full || (n == 1 && (center[2] != 0.0 || center[3] != 0.0)) {
                        return false;
                    }
                    match c {
                        Some(prev) => prev == center,
                        None => {
                            *c = Some(*center);
                            true
                        }
                    }
                }
                Node::Log(a) | Node::Neg(a) => walk(a, n, c),
                Node::Max(v) | Node::Min(v) => v.iter().all(|a| walk(a, n, c)),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                    walk(a, n, c) && walk(b, n, c)
                }
            }
        }
        let mut c = None;
        if walk(&self.root, n, &mut c) {
            Some(c.unwrap_or(fallback))
        } else {
            None
        }
    }

    /// Radial view of the model in C^n, if it is rotation invariant.
    pub fn radial(&self, n: usize) -> Option<RadialModel> {
        self.radial_or(n, [0.0; 4])
    }

    /// Radial view, about `fallback` when the model does not depend on `z`.
    pub fn radial_or(&self, n: usize, fallback: [f64; 4]) -> Option<RadialModel> {
        let center = self.radial_center_or(n, fallback)?;
        self.free_params().is_empty().then(|| RadialModel { model: self.clone(), center })
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, f)
    }
}

fn write_center(coord: Option<usize>, c: &[f64; 4], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let cx = |k: usize| {
        let im = c[2 * k + 1];
        if im < 0.0 { format!("{}-{}i", c[2 * k], -im) } else { format!("{}+{}i", c[2 * k], im) }
    };
    match coord {
        Some(k) if c[2 * k] != 0.0 || c[2 * k + 1] != 0.0 => write!(f, " - ({})", cx(k)),
        None if c.iter().any(|v| *v != 0.0) => write!(f, " - ({}, {})", cx(0), cx(1)),
        _ => Ok(()),
    }
}

fn write_node(n: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let zname = |coord: &Option<usize>| match coord {
        None => "z".to_string(),
        Some(k) => format!("z{}", k + 1),
    };
    let list = |name: &str, v: &[Node], f: &mut fmt::Formatter<'_>| -> fmt::Result {
        write!(f, "{name}(")?;
        for (i, a) in v.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write_node(a, f)?;
        }
        write!(f, ")")
    };
    match n {
        Node::Const(v) if *v < 0.0 => write!(f, "({v})"),
        Node::Const(v) => write!(f, "{v}"),
        Node::Param(p) => write!(f, "{p}"),
        Node::Re(k) => write!(f, "re(z{})", k + 1),
        Node::Im(k) => write!(f, "im(z{})", k + 1),
        Node::Abs { coord, center } => {
            write!(f, "abs({}", zname(coord))?;
            write_center(*coord, center, f)?;
            write!(f, ")")
        }
        Node::Abs2 { coord, center } => {
            write!(f, "abs2({}", zname(coord))?;
            write_center(*coord, center, f)?;
            write!(f, ")")
        }
        Node::Log(a) => {
            write!(f, "log(")?;
            write_node(a, f)?;
            write!(f, ")")
        }
        Node::Max(v) => list("max", v, f),
        Node::Min(v) => list("min", v, f),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            let op = match n {
                Node::Add(..) => '+',
                Node::Sub(..) => '-',
                Node::Mul(..) => '*',
                _ => '/',
            };
            write!(f, "(")?;
            write_node(a, f)?;
            write!(f, " {op} ")?;
            write_node(b, f)?;
            write!(f, ")")
        }
        Node::Neg(a) => {
            write!(f, "(-")?;
            write_node(a, f)?;
            write!(f, ")")
        }
    }
}

/// A rotation-invariant model viewed as a profile in `s = ln |z - c|`.
#[derive(Debug, Clone)]
pub struct RadialModel {
    model: Model,
    center: [f64; 4],
}

fn jet_node(node: &Node, s: f64, right: bool, sig: &mut Vec<u16>) -> Jet {
    match node {
        Node::Const(v) => Jet::constant(*v),
        Node::Abs { .. } => {
            let r = s.exp();
            Jet { v: r, d: r, dd: r }
        }
        Node::Abs2 { .. } => {
            let r2 = (2.0 * s).exp();
            Jet { v: r2, d: 2.0 * r2, dd: 4.0 * r2 }
        }
        Node::Log(a) => {
            // ln|z - c| is exactly s; keep it exact at tiny radii
            if let Node::Abs { .. } = **a {
                return Jet { v: s, d: 1.0, dd: 0.0 };
            }
            if let Node::Abs2 { .. } = **a {
                return Jet { v: 2.0 * s, d: 2.0, dd: 0.0 };
            }
            jet_node(a, s, right, sig).ln()
        }
        Node::Max(v) | Node::Min(v) => {
            let is_max = matches!(node, Node::Max(_));
            let mut best: Option<(usize, Jet)> = None;
            for (k, a) in v.iter().enumerate() {
                let j = jet_node(a, s, right, sig);
                let key = |x: &Jet| match (is_max, right) {
                    (true, true) => (x.v, x.d, x.dd),
                    (true, false) => (x.v, -x.d, x.dd),
                    (false, true) => (-x.v, -x.d, -x.dd),
                    (false, false) => (-x.v, x.d, -x.dd),
                };
                let better = match best {
                    None => true,
                    Some((_, b)) => key(&j) > key(&b),
                };
                if better {
                    best = Some((k, j));
                }
            }
            let (k, j) = best.unwrap_or((0, Jet::constant(f64::NAN)));
            sig.push(k as u16);
            j
        }
        Node::Add(a, b) => jet_node(a, s, right, sig).add(jet_node(b, s, right, sig)),
        Node::Sub(a, b) => jet_node(a, s, right, sig).sub(jet_node(b, s, right, sig)),
        Node::Mul(a, b) => jet_node(a, s, right, sig).mul(jet_node(b, s, right, sig)),
        Node::Div(a, b) => jet_node(a, s, right, sig).div(jet_node(b, s, right, sig)),
        Node::Neg(a) => jet_node(a, s, right, sig).neg(),
        Node::Param(_) | Node::Re(_) | Node::Im(_) => Jet::constant(f64::NAN),
    }
}

impl RadialModel {
    pub fn model(&self) -> &Model {
        &self.model
    }

    fn signature(&self, s: f64) -> Vec<u16> {
        let mut sig = Vec::new();
        jet_node(&self.model.root, s, true, &mut sig);
        sig
    }

    /// Radii (relative to the center) spanned by a domain.
    pub fn radius_range(&self, domain: &Domain) -> (f64, f64) {
        let dc = domain.center_real();
        let d = (0..4).map(|i| (dc[i] - self.center[i]).powi(2)).sum::<f64>().sqrt();
        let lo = if domain.contains(&self.center) { 0.0 } else { (d - domain.radius).max(0.0) };
        let reach = match domain.kind {
            crate::grid::DomainKind::Ball => domain.radius,
            crate::grid::DomainKind::Polydisc => domain.radius * (domain.dim_complex as f64).sqrt(),
        };
        (lo, d + reach)
    }
}

impl RadialProfile for RadialModel {
    fn center(&self) -> [f64; 4] {
        self.center
    }

    fn jet(&self, s: f64, right: bool) -> Jet {
        let mut sig = Vec::new();
        jet_node(&self.model.root, s, right, &mut sig)
    }

    fn kinks(&self, lo: f64, hi: f64) -> Vec<f64> {
        let nodes = radial::s_nodes(lo, hi, radial::SCAN_NODES, &[]);
        let mut out = Vec::new();
        let mut prev = self.signature(nodes[0]);
        let mut prev_s = nodes[0];
        for &t in &nodes[1..] {
            let sig = self.signature(t);
            if sig != prev {
                let (mut a, mut b) = (prev_s, t);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if m <= a || m >= b {
                        break;
                    }
                    if self.signature(m) == prev {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                let k = 0.5 * (a + b);
                // one-sided slopes from either end of the bracket
                let jl = self.jet(a, false).d;
                let jr = self.jet(b, true).d;
                if (jr - jl).abs() > 1e-10 * (1.0 + jl.abs()) {
                    out.push(k);
                }
                prev = sig;
            }
            prev_s = t;
        }
        out
    }
}
