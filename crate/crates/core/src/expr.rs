//! Scalar expressions over phase coordinates, time and parameters.
//!
//! Expressions are parsed once, differentiated symbolically, and then
//! compiled against a fixed slot layout so that the hot loops of the
//! integrators never touch strings or hash maps.
//!
//! Grammar (whitespace insignificant, offsets are 0-based bytes):
//!
//! ```text
//! expr     := term (("+" | "-") term)*
//! term     := unary (("*" | "/") unary)*
//! unary    := ("-" | "+") unary | power
//! power    := primary ("^" exponent)?
//! exponent := "-"? power                      (must fold to a constant)
//! primary  := number | "pi" | name | func "(" expr ")" | "(" expr ")"
//! func     := sin | cos | tan | exp | ln | sqrt | sinh | cosh | tanh
//!           | sech | arctan | flat | flat<k>
//! ```
//!
//! `flat<k>(z)` is `exp(-1/z) * z^-k` for `z > 0` and `0` otherwise, the
//! building block of C-infinity bump functions. It is closed under
//! differentiation: `d/dz flat<k> = flat<k+2> - k * flat<k+1>`.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("undeclared identifier `{name}` at byte {offset}")]
    Undeclared { name: String, offset: usize },
    #[error("declared name `{0}` is duplicated or reserved")]
    BadDeclaration(String),
    #[error("no binding for `{0}`")]
    MissingBinding(String),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
    Sech,
    Arctan,
    /// `exp(-1/z) * z^-k` on `z > 0`, zero elsewhere.
    Flat(u32),
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "sech" => Func::Sech,
            "arctan" => Func::Arctan,
            "flat" => Func::Flat(0),
            _ => {
                let digits = name.strip_prefix("flat")?;
                if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                Func::Flat(digits.parse().ok()?)
            }
        })
    }

    fn name(self) -> String {
        match self {
            Func::Sin => "sin".into(),
            Func::Cos => "cos".into(),
            Func::Tan => "tan".into(),
            Func::Exp => "exp".into(),
            Func::Ln => "ln".into(),
            Func::Sqrt => "sqrt".into(),
            Func::Sinh => "sinh".into(),
            Func::Cosh => "cosh".into(),
            Func::Tanh => "tanh".into(),
            Func::Sech => "sech".into(),
            Func::Arctan => "arctan".into(),
            Func::Flat(0) => "flat".into(),
            Func::Flat(k) => format!("flat{k}"),
        }
    }

    fn apply(self, x: f64) -> Result<f64, ExprError> {
        let v = match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Exp => x.exp(),
            Func::Ln => {
                if x <= 0.0 {
                    return Err(ExprError::Domain(format!("ln of nonpositive value {x}")));
                }
                x.ln()
            }
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(ExprError::Domain(format!("sqrt of negative value {x}")));
                }
                x.sqrt()
            }
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
            Func::Tanh => x.tanh(),
            Func::Sech => 1.0 / x.cosh(),
            Func::Arctan => x.atan(),
            Func::Flat(k) => {
                if x > 0.0 {
                    let e = (-1.0 / x).exp();
                    if e == 0.0 {
                        0.0
                    } else {
                        e * x.powi(-(k as i32))
                    }
                } else {
                    0.0
                }
            }
        };
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(String),
    Neg(Box<Node>),
    Call(Func, Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Pow(Box<Node>, f64),
}

/// An immutable scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
}

const RESERVED: &[&str] = &["pi"];

/// Parse `source`, accepting only identifiers listed in `declared`.
pub fn parse(source: &str, declared: &[&str]) -> Result<Expression, ExprError> {
    for (i, name) in declared.iter().enumerate() {
        let bad_ident = name.is_empty()
            || !name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if bad_ident
            || RESERVED.contains(name)
            || Func::from_name(name).is_some()
            || declared[..i].contains(name)
        {
            return Err(ExprError::BadDeclaration((*name).to_string()));
        }
    }
    let tokens = lex(source)?;
    let mut parser = Parser { tokens, pos: 0, declared, end: source.len() };
    let root = parser.expr()?;
    if let Some(tok) = parser.peek() {
        return Err(ExprError::Syntax {
            offset: tok.offset,
            message: format!("unexpected {}", tok.kind.describe()),
        });
    }
    Ok(Expression { root })
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(v) => format!("number {v}"),
            TokKind::Ident(s) => format!("identifier `{s}`"),
            TokKind::Op(c) => format!("`{c}`"),
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Token { kind: TokKind::Num(value), offset: start });
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { kind: TokKind::Ident(src[start..i].to_string()), offset: start });
        } else {
            let kind = match c {
                b'+' | b'-' | b'*' | b'/' | b'^' => TokKind::Op(c as char),
                b'(' => TokKind::LParen,
                b')' => TokKind::RParen,
                _ => {
                    let ch = src[start..].chars().next().unwrap_or('?');
                    return Err(ExprError::Syntax {
                        offset: start,
                        message: format!("unexpected character `{ch}`"),
                    });
                }
            };
            i += 1;
            out.push(Token { kind, offset: start });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    declared: &'a [&'a str],
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn eat_op(&mut self, op: char) -> bool {
        if matches!(self.peek(), Some(Token { kind: TokKind::Op(c), .. }) if *c == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            Some(Token { kind: TokKind::RParen, .. }) => {
                self.pos += 1;
                Ok(())
            }
            Some(tok) => Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("expected `)`, found {}", tok.kind.describe()),
            }),
            None => Err(ExprError::Syntax {
                offset: self.end,
                message: "expected `)`, found end of input".into(),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat_op('+') {
                BinOp::Add
            } else if self.eat_op('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat_op('*') {
                BinOp::Mul
            } else if self.eat_op('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat_op('-') {
            Ok(Node::Neg(Box::new(self.unary()?)))
        } else if self.eat_op('+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if !self.eat_op('^') {
            return Ok(base);
        }
        let at = self.offset();
        let negative = self.eat_op('-');
        let exponent = self.power()?;
        let exponent = if negative { Node::Neg(Box::new(exponent)) } else { exponent };
        match fold_constant(&exponent) {
            Some(k) if k.is_finite() => Ok(Node::Pow(Box::new(base), k)),
            _ => Err(ExprError::Syntax {
                offset: at,
                message: "exponent must be a finite constant".into(),
            }),
        }
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(ExprError::Syntax {
                offset: self.end,
                message: "unexpected end of input".into(),
            });
        };
        self.pos += 1;
        match tok.kind {
            TokKind::Num(v) => Ok(Node::Const(v)),
            TokKind::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                let is_call = matches!(self.peek(), Some(Token { kind: TokKind::LParen, .. }));
                if let Some(func) = Func::from_name(&name) {
                    if !is_call {
                        return Err(ExprError::Syntax {
                            offset: self.offset(),
                            message: format!("expected `(` after `{name}`"),
                        });
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                if is_call {
                    return Err(ExprError::Syntax {
                        offset: tok.offset,
                        message: format!("unknown function `{name}`"),
                    });
                }
                if name == "pi" {
                    return Ok(Node::Const(std::f64::consts::PI));
                }
                if !self.declared.contains(&name.as_str()) {
                    return Err(ExprError::Undeclared { name, offset: tok.offset });
                }
                Ok(Node::Var(name))
            }
            other => Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }
}

fn fold_constant(node: &Node) -> Option<f64> {
    let lookup = |_: &str| None;
    eval_node(node, &lookup).ok()
}

fn eval_node(node: &Node, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ExprError> {
    match node {
        Node::Const(c) => Ok(*c),
        Node::Var(name) => lookup(name).ok_or_else(|| ExprError::MissingBinding(name.clone())),
        Node::Neg(a) => Ok(-eval_node(a, lookup)?),
        Node::Call(f, a) => f.apply(eval_node(a, lookup)?),
        Node::Binary(op, a, b) => binary(*op, eval_node(a, lookup)?, eval_node(b, lookup)?),
        Node::Pow(a, k) => power(eval_node(a, lookup)?, *k),
    }
}

#[inline]
fn binary(op: BinOp, a: f64, b: f64) -> Result<f64, ExprError> {
    Ok(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(ExprError::Domain("division by zero".into()));
            }
            a / b
        }
    })
}

#[inline]
fn power(base: f64, k: f64) -> Result<f64, ExprError> {
    if k.fract() == 0.0 && k.abs() <= i32::MAX as f64 {
        if base == 0.0 && k < 0.0 {
            return Err(ExprError::Domain("zero raised to a negative power".into()));
        }
        return Ok(base.powi(k as i32));
    }
    if base < 0.0 {
        return Err(ExprError::Domain(format!("negative base {base} with fractional exponent {k}")));
    }
    if base == 0.0 && k < 0.0 {
        return Err(ExprError::Domain("zero raised to a negative power".into()));
    }
    Ok(base.powf(k))
}

fn finite(v: f64) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::Domain(format!("non-finite result {v}")))
    }
}

// Constant-folding constructors used by the differentiator.

fn c(v: f64) -> Node {
    Node::Const(v)
}

fn is_const(n: &Node, v: f64) -> bool {
    matches!(n, Node::Const(x) if *x == v)
}

fn neg(a: Node) -> Node {
    match a {
        Node::Const(v) => c(-v),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

fn add(a: Node, b: Node) -> Node {
    match (&a, &b) {
        (Node::Const(x), Node::Const(y)) => c(x + y),
        _ if is_const(&a, 0.0) => b,
        _ if is_const(&b, 0.0) => a,
        _ => Node::Binary(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Node, b: Node) -> Node {
    match (&a, &b) {
        (Node::Const(x), Node::Const(y)) => c(x - y),
        _ if is_const(&b, 0.0) => a,
        _ if is_const(&a, 0.0) => neg(b),
        _ => Node::Binary(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Node, b: Node) -> Node {
    if let (Node::Const(k), Node::Binary(BinOp::Mul, l, r)) = (&a, &b) {
        if let Node::Const(j) = l.as_ref() {
            return mul(c(k * j), r.as_ref().clone());
        }
    }
    match (&a, &b) {
        (Node::Const(x), Node::Const(y)) => c(x * y),
        _ if is_const(&a, 0.0) || is_const(&b, 0.0) => c(0.0),
        _ if is_const(&a, 1.0) => b,
        _ if is_const(&b, 1.0) => a,
        _ if is_const(&a, -1.0) => neg(b),
        _ if is_const(&b, -1.0) => neg(a),
        _ => Node::Binary(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Node, b: Node) -> Node {
    if let (Node::Binary(BinOp::Mul, l, r), Node::Const(k)) = (&a, &b) {
        if let Node::Const(j) = l.as_ref() {
            if *k != 0.0 {
                return mul(c(j / k), r.as_ref().clone());
            }
        }
    }
    match (&a, &b) {
        (Node::Const(x), Node::Const(y)) if *y != 0.0 => c(x / y),
        _ if is_const(&a, 0.0) => c(0.0),
        _ if is_const(&b, 1.0) => a,
        _ => Node::Binary(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

fn pow(a: Node, k: f64) -> Node {
    if k == 0.0 {
        return c(1.0);
    }
    if k == 1.0 {
        return a;
    }
    match a {
        Node::Const(x) if x > 0.0 || k.fract() == 0.0 && x != 0.0 => c(x.powf(k)),
        other => Node::Pow(Box::new(other), k),
    }
}

fn call(f: Func, a: Node) -> Node {
    Node::Call(f, Box::new(a))
}

fn derive(node: &Node, var: &str) -> Node {
    match node {
        Node::Const(_) => c(0.0),
        Node::Var(name) => c(if name == var { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(derive(a, var)),
        Node::Binary(op, a, b) => {
            let da = derive(a, var);
            let db = derive(b, var);
            let (a, b) = (a.as_ref().clone(), b.as_ref().clone());
            match op {
                BinOp::Add => add(da, db),
                BinOp::Sub => sub(da, db),
                BinOp::Mul => add(mul(da, b), mul(a, db)),
                BinOp::Div => {
                    if is_const(&db, 0.0) {
                        div(da, b)
                    } else {
                        sub(div(da, b.clone()), div(mul(a, db), pow(b, 2.0)))
                    }
                }
            }
        }
        Node::Pow(a, k) => {
            let da = derive(a, var);
            if is_const(&da, 0.0) {
                return c(0.0);
            }
            mul(mul(c(*k), pow(a.as_ref().clone(), k - 1.0)), da)
        }
        Node::Call(f, a) => {
            let da = derive(a, var);
            if is_const(&da, 0.0) {
                return c(0.0);
            }
            let u = a.as_ref().clone();
            let outer = match f {
                Func::Sin => call(Func::Cos, u),
                Func::Cos => neg(call(Func::Sin, u)),
                Func::Tan => div(c(1.0), pow(call(Func::Cos, u), 2.0)),
                Func::Exp => call(Func::Exp, u),
                Func::Ln => div(c(1.0), u),
                Func::Sqrt => div(c(0.5), call(Func::Sqrt, u)),
                Func::Sinh => call(Func::Cosh, u),
                Func::Cosh => call(Func::Sinh, u),
                Func::Tanh => pow(call(Func::Sech, u), 2.0),
                Func::Sech => neg(mul(call(Func::Sech, u.clone()), call(Func::Tanh, u))),
                Func::Arctan => div(c(1.0), add(c(1.0), pow(u, 2.0))),
                Func::Flat(k) => {
                    let lead = call(Func::Flat(k + 2), u.clone());
                    if *k == 0 {
                        lead
                    } else {
                        sub(lead, mul(c(*k as f64), call(Func::Flat(k + 1), u)))
                    }
                }
            };
            mul(outer, da)
        }
    }
}

fn substitute(node: &Node, values: &dyn Fn(&str) -> Option<f64>) -> Node {
    match node {
        Node::Const(v) => c(*v),
        Node::Var(name) => match values(name) {
            Some(v) => c(v),
            None => Node::Var(name.clone()),
        },
        Node::Neg(a) => neg(substitute(a, values)),
        Node::Call(f, a) => {
            let inner = substitute(a, values);
            match inner {
                Node::Const(x) => match f.apply(x) {
                    Ok(v) if v.is_finite() => c(v),
                    _ => call(*f, c(x)),
                },
                other => call(*f, other),
            }
        }
        Node::Binary(op, a, b) => {
            let (a, b) = (substitute(a, values), substitute(b, values));
            match op {
                BinOp::Add => add(a, b),
                BinOp::Sub => sub(a, b),
                BinOp::Mul => mul(a, b),
                BinOp::Div => div(a, b),
            }
        }
        Node::Pow(a, k) => pow(substitute(a, values), *k),
    }
}

fn collect_vars(node: &Node, out: &mut Vec<String>) {
    match node {
        Node::Const(_) => {}
        Node::Var(name) => {
            if !out.contains(name) {
                out.push(name.clone());
            }
        }
        Node::Neg(a) | Node::Call(_, a) | Node::Pow(a, _) => collect_vars(a, out),
        Node::Binary(_, a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
    }
}

impl Expression {
    pub fn constant(v: f64) -> Expression {
        Expression { root: c(v) }
    }

    pub fn variable(name: &str) -> Expression {
        Expression { root: Node::Var(name.to_string()) }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Exact symbolic derivative with light constant folding.
    pub fn differentiate(&self, var: &str) -> Expression {
        Expression { root: derive(&self.root, var) }
    }

    pub fn evaluate(&self, bindings: &HashMap<String, f64>) -> Result<f64, ExprError> {
        let lookup = |name: &str| bindings.get(name).copied();
        finite(eval_node(&self.root, &lookup)?)
    }

    pub fn evaluate_with(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ExprError> {
        finite(eval_node(&self.root, lookup)?)
    }

    /// Replace the named variables by constants and re-fold.
    pub fn substitute(&self, values: &dyn Fn(&str) -> Option<f64>) -> Expression {
        Expression { root: substitute(&self.root, values) }
    }

    /// Free names in first-occurrence order.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        collect_vars(&self.root, &mut out);
        out
    }

    pub fn depends_on(&self, name: &str) -> bool {
        self.variables().iter().any(|v| v == name)
    }

    pub fn is_zero(&self) -> bool {
        is_const(&self.root, 0.0)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn add(&self, other: &Expression) -> Expression {
        Expression { root: add(self.root.clone(), other.root.clone()) }
    }

    pub fn sub(&self, other: &Expression) -> Expression {
        Expression { root: sub(self.root.clone(), other.root.clone()) }
    }

    pub fn mul(&self, other: &Expression) -> Expression {
        Expression { root: mul(self.root.clone(), other.root.clone()) }
    }

    pub fn scale(&self, k: f64) -> Expression {
        Expression { root: mul(c(k), self.root.clone()) }
    }

    /// Bind every free name to a slot index. Names absent from `slots` are
    /// an error, never a default.
    pub fn compile(&self, slots: &[&str]) -> Result<Compiled, ExprError> {
        Ok(Compiled { root: compile_node(&self.root, slots)? })
    }
}

fn compile_node(node: &Node, slots: &[&str]) -> Result<CNode, ExprError> {
    Ok(match node {
        Node::Const(v) => CNode::Const(*v),
        Node::Var(name) => CNode::Slot(
            slots
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| ExprError::MissingBinding(name.clone()))?,
        ),
        Node::Neg(a) => CNode::Neg(Box::new(compile_node(a, slots)?)),
        Node::Call(f, a) => CNode::Call(*f, Box::new(compile_node(a, slots)?)),
        Node::Binary(op, a, b) => CNode::Binary(
            *op,
            Box::new(compile_node(a, slots)?),
            Box::new(compile_node(b, slots)?),
        ),
        Node::Pow(a, k) => {
            let base = compile_node(a, slots)?;
            if *k == 2.0 {
                CNode::Square(Box::new(base))
            } else {
                CNode::Pow(Box::new(base), *k)
            }
        }
    })
}

#[derive(Debug, Clone)]
enum CNode {
    Const(f64),
    Slot(usize),
    Neg(Box<CNode>),
    Call(Func, Box<CNode>),
    Binary(BinOp, Box<CNode>, Box<CNode>),
    Square(Box<CNode>),
    Pow(Box<CNode>, f64),
}

/// Expression bound to a slot layout; evaluation reads `slots[i]`.
#[derive(Debug, Clone)]
pub struct Compiled {
    root: CNode,
}

impl Compiled {
    pub fn eval(&self, slots: &[f64]) -> Result<f64, ExprError> {
        finite(eval_c(&self.root, slots)?)
    }

    /// Evaluate with the slot layout split in two contiguous pieces
    /// (typically phase-space state followed by time).
    pub fn eval_split(&self, head: &[f64], tail: &[f64]) -> Result<f64, ExprError> {
        finite(eval_split(&self.root, head, tail)?)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.root, CNode::Const(v) if v == 0.0)
    }
}

fn eval_c(node: &CNode, s: &[f64]) -> Result<f64, ExprError> {
    match node {
        CNode::Const(v) => Ok(*v),
        CNode::Slot(i) => Ok(s[*i]),
        CNode::Neg(a) => Ok(-eval_c(a, s)?),
        CNode::Call(f, a) => f.apply(eval_c(a, s)?),
        CNode::Binary(op, a, b) => binary(*op, eval_c(a, s)?, eval_c(b, s)?),
        CNode::Square(a) => {
            let v = eval_c(a, s)?;
            Ok(v * v)
        }
        CNode::Pow(a, k) => power(eval_c(a, s)?, *k),
    }
}

fn eval_split(node: &CNode, h: &[f64], t: &[f64]) -> Result<f64, ExprError> {
    match node {
        CNode::Const(v) => Ok(*v),
        CNode::Slot(i) => Ok(if *i < h.len() { h[*i] } else { t[*i - h.len()] }),
        CNode::Neg(a) => Ok(-eval_split(a, h, t)?),
        CNode::Call(f, a) => f.apply(eval_split(a, h, t)?),
        CNode::Binary(op, a, b) => binary(*op, eval_split(a, h, t)?, eval_split(b, h, t)?),
        CNode::Square(a) => {
            let v = eval_split(a, h, t)?;
            Ok(v * v)
        }
        CNode::Pow(a, k) => power(eval_split(a, h, t)?, *k),
    }
}

fn is_atomic(node: &Node) -> bool {
    match node {
        Node::Const(v) => *v >= 0.0 && !(v.is_sign_negative()),
        Node::Var(_) | Node::Call(..) => true,
        _ => false,
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v.is_sign_negative() {
        write!(f, "(-{:?})", -v)
    } else {
        write!(f, "{v:?}")
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, node: &Node) -> fmt::Result {
    let wrapped = |f: &mut fmt::Formatter<'_>, n: &Node| -> fmt::Result {
        if is_atomic(n) {
            write_node(f, n)
        } else {
            write!(f, "(")?;
            write_node(f, n)?;
            write!(f, ")")
        }
    };
    match node {
        Node::Const(v) => write_const(f, *v),
        Node::Var(name) => write!(f, "{name}"),
        Node::Neg(a) => {
            write!(f, "-")?;
            wrapped(f, a)
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(f, a)?;
            write!(f, ")")
        }
        Node::Binary(op, a, b) => {
            wrapped(f, a)?;
            write!(f, " {} ", op.symbol())?;
            wrapped(f, b)
        }
        Node::Pow(a, k) => {
            wrapped(f, a)?;
            write!(f, "^")?;
            write_const(f, *k)
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.root)
    }
}
