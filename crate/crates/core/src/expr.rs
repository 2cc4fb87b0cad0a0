//! Scalar field expressions over `(x, y)` on the unit torus.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | base ('^' int)?
//! base   := number | 'x' | 'y' | 'pi' | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Built-ins: `sin cos exp log abs sqrt` (one argument), `min max` (two),
//! `persq(x, y, cx, cy)` (periodic squared distance, desugared to
//! `wrap(x-cx)^2 + wrap(y-cy)^2`), `wrap(t)` (`t − round(t)`), `smoothstep(t)`
//! (C∞ step from 0 at `t ≤ 0` to 1 at `t ≥ 1`) and `branch(l, r, gt, lt, eq)`
//! (picks `gt`, `lt` or `eq` by comparing `l` with `r`).
//!
//! Derivatives of `abs`, `min` and `max` at their kinks are right-sided:
//! they take the branch that is active just after the tie. Such derivatives
//! are expressed with `branch` nodes.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::math;

/// Elementwise unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Wrap,
    /// `k`-th derivative of the smooth step.
    SmoothStep(u8),
}

/// Highest supported derivative order of `smoothstep`.
pub const SMOOTHSTEP_MAX_ORDER: u8 = 8;

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Wrap => "wrap",
            Func::SmoothStep(_) => "smoothstep",
        }
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => math::sin(v),
            Func::Cos => math::cos(v),
            Func::Exp => math::exp(v),
            Func::Log => {
                if v > 0.0 {
                    math::ln(v)
                } else {
                    f64::NAN
                }
            }
            Func::Sqrt => {
                if v >= 0.0 {
                    math::sqrt(v)
                } else {
                    f64::NAN
                }
            }
            Func::Abs => math::abs(v),
            Func::Wrap => math::wrap(v),
            Func::SmoothStep(k) => smoothstep_derivative(v, k as usize),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Pi,
    X,
    Y,
    Neg(Arc<Node>),
    Add(Arc<Node>, Arc<Node>),
    Sub(Arc<Node>, Arc<Node>),
    Mul(Arc<Node>, Arc<Node>),
    Div(Arc<Node>, Arc<Node>),
    Pow(Arc<Node>, i32),
    Func(Func, Arc<Node>),
    Min(Arc<Node>, Arc<Node>),
    Max(Arc<Node>, Arc<Node>),
    /// `[l, r, gt, lt, eq]`
    Branch(Box<[Arc<Node>; 5]>),
}

/// Coordinate direction for differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
}

/// An immutable, cheaply clonable expression tree.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldExpr(Arc<Node>);

fn c(v: f64) -> Arc<Node> {
    Arc::new(Node::Const(v))
}

fn as_const(n: &Node) -> Option<f64> {
    match n {
        Node::Const(v) => Some(*v),
        _ => None,
    }
}

fn is_zero(n: &Node) -> bool {
    as_const(n) == Some(0.0)
}

fn is_one(n: &Node) -> bool {
    as_const(n) == Some(1.0)
}

fn add(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    if let (Some(x), Some(y)) = (as_const(&a), as_const(&b)) {
        return c(x + y);
    }
    if is_zero(&a) {
        return b;
    }
    if is_zero(&b) {
        return a;
    }
    if let Node::Neg(inner) = &*b {
        return sub(a, inner.clone());
    }
    Arc::new(Node::Add(a, b))
}

fn sub(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    if let (Some(x), Some(y)) = (as_const(&a), as_const(&b)) {
        return c(x - y);
    }
    if is_zero(&b) {
        return a;
    }
    if is_zero(&a) {
        return neg(b);
    }
    if let Node::Neg(inner) = &*b {
        return add(a, inner.clone());
    }
    Arc::new(Node::Sub(a, b))
}

fn neg(a: Arc<Node>) -> Arc<Node> {
    match &*a {
        Node::Const(v) => c(-v),
        Node::Neg(inner) => inner.clone(),
        _ => Arc::new(Node::Neg(a)),
    }
}

fn mul(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    if let (Some(x), Some(y)) = (as_const(&a), as_const(&b)) {
        return c(x * y);
    }
    if is_zero(&a) || is_zero(&b) {
        return c(0.0);
    }
    if is_one(&a) {
        return b;
    }
    if is_one(&b) {
        return a;
    }
    if as_const(&a) == Some(-1.0) {
        return neg(b);
    }
    if as_const(&b) == Some(-1.0) {
        return neg(a);
    }
    match (&*a, &*b) {
        (Node::Neg(x), Node::Neg(y)) => mul(x.clone(), y.clone()),
        (Node::Neg(x), _) => neg(mul(x.clone(), b)),
        (_, Node::Neg(y)) => neg(mul(a, y.clone())),
        // Keep constant factors in front: `e*2` becomes `2*e`.
        (_, Node::Const(_)) => Arc::new(Node::Mul(b, a)),
        _ => Arc::new(Node::Mul(a, b)),
    }
}

fn div(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    if let (Some(x), Some(y)) = (as_const(&a), as_const(&b)) {
        if y != 0.0 {
            return c(x / y);
        }
    }
    if is_zero(&a) {
        return c(0.0);
    }
    if is_one(&b) {
        return a;
    }
    Arc::new(Node::Div(a, b))
}

fn pow(a: Arc<Node>, n: i32) -> Arc<Node> {
    if n == 0 {
        return c(1.0);
    }
    if n == 1 {
        return a;
    }
    if let Some(v) = as_const(&a) {
        return c(math::powi(v, n));
    }
    Arc::new(Node::Pow(a, n))
}

fn func(f: Func, a: Arc<Node>) -> Arc<Node> {
    if let Some(v) = as_const(&a) {
        let r = f.apply(v);
        if r.is_finite() {
            return c(r);
        }
    }
    Arc::new(Node::Func(f, a))
}

fn min(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    if a == b {
        return a;
    }
    Arc::new(Node::Min(a, b))
}

fn max(a: Arc<Node>, b: Arc<Node>) -> Arc<Node> {
    if a == b {
        return a;
    }
    Arc::new(Node::Max(a, b))
}

fn branch(l: Arc<Node>, r: Arc<Node>, gt: Arc<Node>, lt: Arc<Node>, eq: Arc<Node>) -> Arc<Node> {
    if gt == lt && lt == eq {
        return gt;
    }
    Arc::new(Node::Branch(Box::new([l, r, gt, lt, eq])))
}

fn persq(x: Arc<Node>, y: Arc<Node>, cx: Arc<Node>, cy: Arc<Node>) -> Arc<Node> {
    add(
        pow(func(Func::Wrap, sub(x, cx)), 2),
        pow(func(Func::Wrap, sub(y, cy)), 2),
    )
}

fn eval_node(n: &Node, x: f64, y: f64) -> f64 {
    match n {
        Node::Const(v) => *v,
        Node::Pi => math::PI,
        Node::X => x,
        Node::Y => y,
        Node::Neg(a) => -eval_node(a, x, y),
        Node::Add(a, b) => eval_node(a, x, y) + eval_node(b, x, y),
        Node::Sub(a, b) => eval_node(a, x, y) - eval_node(b, x, y),
        Node::Mul(a, b) => eval_node(a, x, y) * eval_node(b, x, y),
        Node::Div(a, b) => eval_node(a, x, y) / eval_node(b, x, y),
        Node::Pow(a, k) => math::powi(eval_node(a, x, y), *k),
        Node::Func(f, a) => f.apply(eval_node(a, x, y)),
        Node::Min(a, b) => math::min(eval_node(a, x, y), eval_node(b, x, y)),
        Node::Max(a, b) => math::max(eval_node(a, x, y), eval_node(b, x, y)),
        Node::Branch(k) => {
            let l = eval_node(&k[0], x, y);
            let r = eval_node(&k[1], x, y);
            if l > r {
                eval_node(&k[2], x, y)
            } else if l < r {
                eval_node(&k[3], x, y)
            } else {
                eval_node(&k[4], x, y)
            }
        }
    }
}

fn diff_node(n: &Arc<Node>, v: Var) -> Arc<Node> {
    match &**n {
        Node::Const(_) | Node::Pi => c(0.0),
        Node::X => c(if v == Var::X { 1.0 } else { 0.0 }),
        Node::Y => c(if v == Var::Y { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(diff_node(a, v)),
        Node::Add(a, b) => add(diff_node(a, v), diff_node(b, v)),
        Node::Sub(a, b) => sub(diff_node(a, v), diff_node(b, v)),
        Node::Mul(a, b) => add(mul(diff_node(a, v), b.clone()), mul(a.clone(), diff_node(b, v))),
        Node::Div(a, b) => {
            let da = diff_node(a, v);
            let db = diff_node(b, v);
            sub(div(da, b.clone()), div(mul(a.clone(), db), pow(b.clone(), 2)))
        }
        Node::Pow(a, k) => mul(mul(c(*k as f64), pow(a.clone(), k - 1)), diff_node(a, v)),
        Node::Func(f, a) => {
            let da = diff_node(a, v);
            if is_zero(&da) {
                return c(0.0);
            }
            let outer = match f {
                Func::Sin => func(Func::Cos, a.clone()),
                Func::Cos => neg(func(Func::Sin, a.clone())),
                Func::Exp => n.clone(),
                Func::Log => return div(da, a.clone()),
                Func::Sqrt => return div(da, mul(c(2.0), n.clone())),
                Func::Abs => return branch(a.clone(), c(0.0), da.clone(), neg(da.clone()), func(Func::Abs, da)),
                Func::Wrap => return da,
                Func::SmoothStep(k) => func(Func::SmoothStep(k + 1), a.clone()),
            };
            // Constant inner derivatives go in front: `2*pi*cos(2*pi*x)`.
            mul(da, outer)
        }
        Node::Min(a, b) => {
            let (da, db) = (diff_node(a, v), diff_node(b, v));
            branch(a.clone(), b.clone(), db.clone(), da.clone(), min(da, db))
        }
        Node::Max(a, b) => {
            let (da, db) = (diff_node(a, v), diff_node(b, v));
            branch(a.clone(), b.clone(), da.clone(), db.clone(), max(da, db))
        }
        Node::Branch(k) => branch(
            k[0].clone(),
            k[1].clone(),
            diff_node(&k[2], v),
            diff_node(&k[3], v),
            diff_node(&k[4], v),
        ),
    }
}

fn has_kink(n: &Node) -> bool {
    match n {
        Node::Const(_) | Node::Pi | Node::X | Node::Y => false,
        Node::Min(..) | Node::Max(..) | Node::Branch(..) | Node::Func(Func::Abs, _) => true,
        Node::Neg(a) | Node::Pow(a, _) | Node::Func(_, a) => has_kink(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => has_kink(a) || has_kink(b),
    }
}

fn max_smoothstep_order(n: &Node) -> u8 {
    match n {
        Node::Const(_) | Node::Pi | Node::X | Node::Y => 0,
        Node::Func(Func::SmoothStep(k), a) => (*k).max(max_smoothstep_order(a)),
        Node::Neg(a) | Node::Pow(a, _) | Node::Func(_, a) => max_smoothstep_order(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Min(a, b) | Node::Max(a, b) => {
            max_smoothstep_order(a).max(max_smoothstep_order(b))
        }
        Node::Branch(k) => k.iter().map(|e| max_smoothstep_order(e)).max().unwrap_or(0),
    }
}

fn count_nodes(n: &Node) -> usize {
    1 + match n {
        Node::Const(_) | Node::Pi | Node::X | Node::Y => 0,
        Node::Neg(a) | Node::Pow(a, _) | Node::Func(_, a) => count_nodes(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Min(a, b) | Node::Max(a, b) => {
            count_nodes(a) + count_nodes(b)
        }
        Node::Branch(k) => k.iter().map(|e| count_nodes(e)).sum(),
    }
}

impl FieldExpr {
    pub fn parse(source: &str) -> Result<Self> {
        Parser::new(source).parse()
    }

    pub fn constant(v: f64) -> Self {
        FieldExpr(c(v))
    }

    pub fn x() -> Self {
        FieldExpr(Arc::new(Node::X))
    }

    pub fn y() -> Self {
        FieldExpr(Arc::new(Node::Y))
    }

    pub fn pi() -> Self {
        FieldExpr(Arc::new(Node::Pi))
    }

    /// Periodic squared distance to `(cx, cy)`.
    pub fn persq(cx: f64, cy: f64) -> Self {
        FieldExpr(persq(Arc::new(Node::X), Arc::new(Node::Y), c(cx), c(cy)))
    }

    pub fn sin(&self) -> Self {
        FieldExpr(func(Func::Sin, self.0.clone()))
    }

    pub fn cos(&self) -> Self {
        FieldExpr(func(Func::Cos, self.0.clone()))
    }

    pub fn exp(&self) -> Self {
        FieldExpr(func(Func::Exp, self.0.clone()))
    }

    pub fn ln(&self) -> Self {
        FieldExpr(func(Func::Log, self.0.clone()))
    }

    pub fn sqrt(&self) -> Self {
        FieldExpr(func(Func::Sqrt, self.0.clone()))
    }

    pub fn abs(&self) -> Self {
        FieldExpr(func(Func::Abs, self.0.clone()))
    }

    pub fn wrap(&self) -> Self {
        FieldExpr(func(Func::Wrap, self.0.clone()))
    }

    pub fn smoothstep(&self) -> Self {
        FieldExpr(func(Func::SmoothStep(0), self.0.clone()))
    }

    pub fn powi(&self, n: i32) -> Self {
        FieldExpr(pow(self.0.clone(), n))
    }

    pub fn min(&self, other: &Self) -> Self {
        FieldExpr(min(self.0.clone(), other.0.clone()))
    }

    pub fn max(&self, other: &Self) -> Self {
        FieldExpr(max(self.0.clone(), other.0.clone()))
    }

    /// Value at `(x, y)`; NaN or infinite outside the expression's domain.
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        eval_node(&self.0, x, y)
    }

    /// Like [`eval`](Self::eval) but reports non-finite results as errors.
    pub fn try_eval(&self, x: f64, y: f64) -> Result<f64> {
        let v = self.eval(x, y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain {
                expr: self.to_string(),
                x,
                y,
            })
        }
    }

    pub fn diff(&self, v: Var) -> Self {
        FieldExpr(diff_node(&self.0, v))
    }

    pub fn dx(&self) -> Self {
        self.diff(Var::X)
    }

    pub fn dy(&self) -> Self {
        self.diff(Var::Y)
    }

    /// Whether `abs`, `min`, `max` or `branch` occurs anywhere.
    pub fn has_kinks(&self) -> bool {
        has_kink(&self.0)
    }

    pub fn as_constant(&self) -> Option<f64> {
        as_const(&self.0)
    }

    pub fn is_zero(&self) -> bool {
        is_zero(&self.0)
    }

    pub fn node_count(&self) -> usize {
        count_nodes(&self.0)
    }

    /// Second derivatives would need `smoothstep` beyond the supported order.
    pub fn check_differentiable(&self, extra_orders: u8) -> Result<()> {
        if max_smoothstep_order(&self.0) + extra_orders > SMOOTHSTEP_MAX_ORDER {
            return Err(Error::Unsupported(format!(
                "smoothstep derivatives beyond order {SMOOTHSTEP_MAX_ORDER}"
            )));
        }
        Ok(())
    }

    /// Compare values and first derivatives across both seams at `samples`
    /// points per seam. Returns the largest mismatch on success.
    pub fn check_periodic(&self, tol: f64) -> Result<f64> {
        self.seam_mismatch(tol, true)
    }

    /// Like [`check_periodic`](Self::check_periodic) but compares values
    /// only, for fields that are merely continuous.
    pub fn check_periodic_values(&self, tol: f64) -> Result<f64> {
        self.seam_mismatch(tol, false)
    }

    fn seam_mismatch(&self, tol: f64, derivatives: bool) -> Result<f64> {
        let mut fields = alloc::vec![self.clone()];
        if derivatives {
            fields.push(self.dx());
            fields.push(self.dy());
        }
        let samples = 64;
        let mut worst: f64 = 0.0;
        for k in 0..samples {
            // Offset avoids sampling exactly on a kink through a grid line.
            let s = (k as f64 + 0.37) / samples as f64;
            for f in &fields {
                let a = (f.eval(0.0, s) - f.eval(1.0, s)).abs();
                let b = (f.eval(s, 0.0) - f.eval(s, 1.0)).abs();
                let m = if a.is_nan() || b.is_nan() {
                    f64::INFINITY
                } else {
                    a.max(b)
                };
                worst = worst.max(m);
            }
        }
        if worst > tol {
            return Err(Error::Periodicity {
                what: self.to_string(),
                mismatch: worst,
            });
        }
        Ok(worst)
    }
}

impl From<f64> for FieldExpr {
    fn from(v: f64) -> Self {
        FieldExpr::constant(v)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $f:ident) => {
        impl core::ops::$trait for FieldExpr {
            type Output = FieldExpr;
            fn $method(self, rhs: FieldExpr) -> FieldExpr {
                FieldExpr($f(self.0, rhs.0))
            }
        }
        impl core::ops::$trait<&FieldExpr> for &FieldExpr {
            type Output = FieldExpr;
            fn $method(self, rhs: &FieldExpr) -> FieldExpr {
                FieldExpr($f(self.0.clone(), rhs.0.clone()))
            }
        }
        impl core::ops::$trait<f64> for FieldExpr {
            type Output = FieldExpr;
            fn $method(self, rhs: f64) -> FieldExpr {
                FieldExpr($f(self.0, c(rhs)))
            }
        }
        impl core::ops::$trait<FieldExpr> for f64 {
            type Output = FieldExpr;
            fn $method(self, rhs: FieldExpr) -> FieldExpr {
                FieldExpr($f(c(self), rhs.0))
            }
        }
    };
}

binop!(Add, add, add);
binop!(Sub, sub, sub);
binop!(Mul, mul, mul);
binop!(Div, div, div);

impl core::ops::Neg for FieldExpr {
    type Output = FieldExpr;
    fn neg(self) -> FieldExpr {
        FieldExpr(neg(self.0))
    }
}

// ---------------------------------------------------------------------------
// Display

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn prec(n: &Node) -> u8 {
    match n {
        Node::Add(..) | Node::Sub(..) => PREC_ADD,
        Node::Mul(..) | Node::Div(..) => PREC_MUL,
        Node::Neg(_) => PREC_NEG,
        Node::Const(v) if *v < 0.0 => PREC_NEG,
        Node::Pow(..) => PREC_POW,
        _ => PREC_ATOM,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, n: &Node, min_prec: u8, leading: bool) -> fmt::Result {
    let p = prec(n);
    let paren = p < min_prec || (p == PREC_NEG && !leading);
    if paren {
        write!(f, "(")?;
        write_node(f, n)?;
        write!(f, ")")
    } else {
        write_node(f, n)
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, n: &Node) -> fmt::Result {
    match n {
        Node::Const(v) => write!(f, "{v}"),
        Node::Pi => write!(f, "pi"),
        Node::X => write!(f, "x"),
        Node::Y => write!(f, "y"),
        Node::Neg(a) => {
            write!(f, "-")?;
            write_child(f, a, PREC_POW, false)
        }
        Node::Add(a, b) => {
            write_child(f, a, PREC_ADD, true)?;
            write!(f, " + ")?;
            write_child(f, b, PREC_ADD, false)
        }
        Node::Sub(a, b) => {
            write_child(f, a, PREC_ADD, true)?;
            write!(f, " - ")?;
            write_child(f, b, PREC_MUL, false)
        }
        Node::Mul(a, b) => {
            write_child(f, a, PREC_MUL, true)?;
            write!(f, "*")?;
            write_child(f, b, PREC_MUL, false)
        }
        Node::Div(a, b) => {
            write_child(f, a, PREC_MUL, true)?;
            write!(f, "/")?;
            write_child(f, b, PREC_POW, false)
        }
        Node::Pow(a, k) => {
            write_child(f, a, PREC_ATOM, false)?;
            write!(f, "^{k}")
        }
        Node::Func(Func::SmoothStep(k), a) if *k > 0 => {
            // Derivatives of smoothstep have no surface syntax of their own.
            write!(f, "smoothstep{k}(")?;
            write_node(f, a)?;
            write!(f, ")")
        }
        Node::Func(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(f, a)?;
            write!(f, ")")
        }
        Node::Min(a, b) | Node::Max(a, b) => {
            write!(f, "{}(", if matches!(n, Node::Min(..)) { "min" } else { "max" })?;
            write_node(f, a)?;
            write!(f, ", ")?;
            write_node(f, b)?;
            write!(f, ")")
        }
        Node::Branch(k) => {
            write!(f, "branch(")?;
            for (i, e) in k.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write_node(f, e)?;
            }
            write!(f, ")")
        }
    }
}

impl fmt::Display for FieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.0)
    }
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    tok: Tok,
    tok_start: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            pos: 0,
            tok: Tok::End,
            tok_start: 0,
        }
    }

    fn err<T>(&self, position: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            position,
            message: message.into(),
        })
    }

    fn advance(&mut self) -> Result<()> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && (bytes[self.pos] as char).is_ascii_whitespace() {
            self.pos += 1;
        }
        self.tok_start = self.pos;
        if self.pos >= bytes.len() {
            self.tok = Tok::End;
            return Ok(());
        }
        let ch = bytes[self.pos] as char;
        if ch.is_ascii_digit() || ch == '.' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
                self.pos += 1;
            }
            if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
                let mut p = self.pos + 1;
                if p < bytes.len() && (bytes[p] == b'+' || bytes[p] == b'-') {
                    p += 1;
                }
                if p < bytes.len() && bytes[p].is_ascii_digit() {
                    while p < bytes.len() && bytes[p].is_ascii_digit() {
                        p += 1;
                    }
                    self.pos = p;
                }
            }
            let text = &self.src[start..self.pos];
            match text.parse::<f64>() {
                Ok(v) => self.tok = Tok::Num(v),
                Err(_) => return self.err(start, format!("malformed number `{text}`")),
            }
        } else if ch.is_ascii_alphabetic() || ch == '_' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_') {
                self.pos += 1;
            }
            self.tok = Tok::Ident(self.src[start..self.pos].to_string());
        } else if "+-*/^(),".contains(ch) {
            self.pos += 1;
            self.tok = Tok::Op(ch);
        } else {
            let ch = self.src[self.pos..].chars().next().unwrap_or('?');
            return self.err(self.pos, format!("unexpected character `{ch}`"));
        }
        Ok(())
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.tok == Tok::Op(op) {
            self.advance()
        } else {
            self.err(self.tok_start, format!("expected `{op}`"))
        }
    }

    fn parse(mut self) -> Result<FieldExpr> {
        self.advance()?;
        let e = self.expr()?;
        if self.tok != Tok::End {
            return self.err(self.tok_start, "unexpected trailing input");
        }
        Ok(FieldExpr(e))
    }

    fn expr(&mut self) -> Result<Arc<Node>> {
        let mut lhs = self.term()?;
        loop {
            match self.tok {
                Tok::Op('+') => {
                    self.advance()?;
                    lhs = add(lhs, self.term()?);
                }
                Tok::Op('-') => {
                    self.advance()?;
                    lhs = sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Arc<Node>> {
        let mut lhs = self.factor()?;
        loop {
            match self.tok {
                Tok::Op('*') => {
                    self.advance()?;
                    let rhs = self.factor()?;
                    lhs = Arc::new(Node::Mul(lhs, rhs));
                }
                Tok::Op('/') => {
                    self.advance()?;
                    let rhs = self.factor()?;
                    lhs = Arc::new(Node::Div(lhs, rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Arc<Node>> {
        if self.tok == Tok::Op('-') {
            self.advance()?;
            return Ok(neg(self.factor()?));
        }
        let b = self.base()?;
        if self.tok == Tok::Op('^') {
            self.advance()?;
            let start = self.tok_start;
            let negative = if self.tok == Tok::Op('-') {
                self.advance()?;
                true
            } else {
                false
            };
            let k = match self.tok {
                Tok::Num(v) if v == math::floor(v) && v <= 64.0 => v as i32,
                _ => return self.err(start, "exponent must be an integer literal"),
            };
            self.advance()?;
            return Ok(Arc::new(Node::Pow(b, if negative { -k } else { k })));
        }
        Ok(b)
    }

    fn base(&mut self) -> Result<Arc<Node>> {
        let start = self.tok_start;
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(c(v))
            }
            Tok::Op('(') => {
                self.advance()?;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.advance()?;
                match name.as_str() {
                    "x" => return Ok(Arc::new(Node::X)),
                    "y" => return Ok(Arc::new(Node::Y)),
                    "pi" => return Ok(Arc::new(Node::Pi)),
                    _ => {}
                }
                let arity = match name.as_str() {
                    "sin" | "cos" | "exp" | "log" | "abs" | "sqrt" | "wrap" | "smoothstep" => 1,
                    "min" | "max" => 2,
                    "persq" => 4,
                    "branch" => 5,
                    _ => return self.err(start, format!("unknown identifier `{name}`")),
                };
                if self.tok != Tok::Op('(') {
                    return self.err(self.tok_start, format!("expected `(` after `{name}`"));
                }
                self.advance()?;
                let mut args = vec![self.expr()?];
                while self.tok == Tok::Op(',') {
                    self.advance()?;
                    args.push(self.expr()?);
                }
                self.expect(')')?;
                if args.len() != arity {
                    return self.err(start, format!("`{name}` takes {arity} argument(s), got {}", args.len()));
                }
                let mut it = args.into_iter();
                let mut next = || it.next().unwrap();
                Ok(match name.as_str() {
                    "sin" => Arc::new(Node::Func(Func::Sin, next())),
                    "cos" => Arc::new(Node::Func(Func::Cos, next())),
                    "exp" => Arc::new(Node::Func(Func::Exp, next())),
                    "log" => Arc::new(Node::Func(Func::Log, next())),
                    "abs" => Arc::new(Node::Func(Func::Abs, next())),
                    "sqrt" => Arc::new(Node::Func(Func::Sqrt, next())),
                    "wrap" => Arc::new(Node::Func(Func::Wrap, next())),
                    "smoothstep" => Arc::new(Node::Func(Func::SmoothStep(0), next())),
                    "min" => {
                        let a = next();
                        Arc::new(Node::Min(a, next()))
                    }
                    "max" => {
                        let a = next();
                        Arc::new(Node::Max(a, next()))
                    }
                    "persq" => {
                        let (a, b, cx, cy) = (next(), next(), next(), next());
                        persq(a, b, cx, cy)
                    }
                    _ => {
                        let (l, r, gt, lt, eq) = (next(), next(), next(), next(), next());
                        Arc::new(Node::Branch(Box::new([l, r, gt, lt, eq])))
                    }
                })
            }
            Tok::End => self.err(start, "unexpected end of input"),
            Tok::Op(ch) => self.err(start, format!("unexpected `{ch}`")),
        }
    }
}

// ---------------------------------------------------------------------------
// Smooth step

/// `k`-th derivative of `σ(t) = f(t)/(f(t) + f(1−t))`, `f(t) = e^{−1/t}` for
/// `t > 0` and 0 otherwise. Computed with truncated Taylor series so every
/// order is exact up to rounding.
pub fn smoothstep_derivative(t: f64, k: usize) -> f64 {
    // Below this distance from the ends e^{−1/t} underflows and every
    // derivative is zero to double precision.
    const EDGE: f64 = 1.5e-3;
    if t.is_nan() {
        return f64::NAN;
    }
    if t <= EDGE {
        return 0.0;
    }
    if t >= 1.0 - EDGE {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    const M: usize = SMOOTHSTEP_MAX_ORDER as usize + 1;
    let k = k.min(M - 1);
    // Series in s of e^{−1/(t+s)} and e^{−1/(1−t−s)}.
    let exp_of_recip = |base: f64, sign: f64| -> [f64; M] {
        // −1/(base + sign·s) = Σ a_n s^n with a_n = −(−sign)^n / base^{n+1}.
        let mut a = [0.0; M];
        let mut p = 1.0 / base;
        for (n, an) in a.iter_mut().enumerate() {
            let sgn = if n % 2 == 1 && sign > 0.0 { -1.0 } else { 1.0 };
            *an = -sgn * p;
            p /= base;
        }
        let mut b = [0.0; M];
        b[0] = math::exp(a[0]);
        for n in 1..M {
            let mut s = 0.0;
            for j in 1..=n {
                s += j as f64 * a[j] * b[n - j];
            }
            b[n] = s / n as f64;
        }
        b
    };
    let f = exp_of_recip(t, 1.0);
    let g = exp_of_recip(1.0 - t, -1.0);
    let mut d = [0.0; M];
    for n in 0..M {
        d[n] = f[n] + g[n];
    }
    let mut q = [0.0; M];
    for n in 0..=k {
        let mut s = f[n];
        for j in 1..=n {
            s -= d[j] * q[n - j];
        }
        q[n] = s / d[0];
    }
    let mut fact = 1.0;
    for j in 2..=k {
        fact *= j as f64;
    }
    q[k] * fact
}

// ---------------------------------------------------------------------------
// Compiled evaluation

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Instr {
    Const(u64),
    X,
    Y,
    Neg(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Pow(u32, i32),
    Func(Func, u32),
    Min(u32, u32),
    Max(u32, u32),
    Branch(u32, u32, u32, u32, u32),
}

/// Several expressions compiled into one straight-line program with common
/// subexpressions merged. Evaluation is allocation-free given a scratch
/// buffer, which makes it the workhorse for sampling and metric jets.
#[derive(Debug, Clone)]
pub struct Program {
    instrs: Vec<Instr>,
    outputs: Vec<u32>,
}

struct Compiler {
    instrs: Vec<Instr>,
    dedup: BTreeMap<Instr, u32>,
    by_ptr: BTreeMap<usize, u32>,
}

impl Compiler {
    fn push(&mut self, i: Instr) -> u32 {
        if let Some(&r) = self.dedup.get(&i) {
            return r;
        }
        let r = self.instrs.len() as u32;
        self.instrs.push(i);
        self.dedup.insert(i, r);
        r
    }

    fn compile(&mut self, n: &Arc<Node>) -> u32 {
        let key = Arc::as_ptr(n) as usize;
        if let Some(&r) = self.by_ptr.get(&key) {
            return r;
        }
        let instr = match &**n {
            Node::Const(v) => Instr::Const(v.to_bits()),
            Node::Pi => Instr::Const(math::PI.to_bits()),
            Node::X => Instr::X,
            Node::Y => Instr::Y,
            Node::Neg(a) => Instr::Neg(self.compile(a)),
            Node::Add(a, b) => Instr::Add(self.compile(a), self.compile(b)),
            Node::Sub(a, b) => Instr::Sub(self.compile(a), self.compile(b)),
            Node::Mul(a, b) => Instr::Mul(self.compile(a), self.compile(b)),
            Node::Div(a, b) => Instr::Div(self.compile(a), self.compile(b)),
            Node::Pow(a, k) => Instr::Pow(self.compile(a), *k),
            Node::Func(f, a) => Instr::Func(*f, self.compile(a)),
            Node::Min(a, b) => Instr::Min(self.compile(a), self.compile(b)),
            Node::Max(a, b) => Instr::Max(self.compile(a), self.compile(b)),
            Node::Branch(k) => Instr::Branch(
                self.compile(&k[0]),
                self.compile(&k[1]),
                self.compile(&k[2]),
                self.compile(&k[3]),
                self.compile(&k[4]),
            ),
        };
        let r = self.push(instr);
        // The tree is kept alive by the caller for the whole compilation, so
        // pointer keys cannot be reused.
        self.by_ptr.insert(key, r);
        r
    }
}

impl Program {
    pub fn new(exprs: &[&FieldExpr]) -> Self {
        let mut comp = Compiler {
            instrs: Vec::new(),
            dedup: BTreeMap::new(),
            by_ptr: BTreeMap::new(),
        };
        let outputs = exprs.iter().map(|e| comp.compile(&e.0)).collect();
        Program {
            instrs: comp.instrs,
            outputs,
        }
    }

    pub fn outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn scratch(&self) -> Vec<f64> {
        vec![0.0; self.instrs.len()]
    }

    /// Evaluate every output at `(x, y)`. `scratch` must come from
    /// [`scratch`](Self::scratch); `out` must hold [`outputs`](Self::outputs) values.
    pub fn eval_into(&self, x: f64, y: f64, scratch: &mut [f64], out: &mut [f64]) {
        for (idx, ins) in self.instrs.iter().enumerate() {
            let r = |i: u32| scratch[i as usize];
            let v = match *ins {
                Instr::Const(bits) => f64::from_bits(bits),
                Instr::X => x,
                Instr::Y => y,
                Instr::Neg(a) => -r(a),
                Instr::Add(a, b) => r(a) + r(b),
                Instr::Sub(a, b) => r(a) - r(b),
                Instr::Mul(a, b) => r(a) * r(b),
                Instr::Div(a, b) => r(a) / r(b),
                Instr::Pow(a, k) => math::powi(r(a), k),
                Instr::Func(f, a) => f.apply(r(a)),
                Instr::Min(a, b) => math::min(r(a), r(b)),
                Instr::Max(a, b) => math::max(r(a), r(b)),
                Instr::Branch(l, rr, gt, lt, eq) => {
                    let (lv, rv) = (r(l), r(rr));
                    if lv > rv {
                        r(gt)
                    } else if lv < rv {
                        r(lt)
                    } else {
                        r(eq)
                    }
                }
            };
            scratch[idx] = v;
        }
        for (o, &reg) in out.iter_mut().zip(&self.outputs) {
            *o = scratch[reg as usize];
        }
    }
}

/// A vector field `(X¹, X²)` given by two scalar expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldExpr {
    pub x: FieldExpr,
    pub y: FieldExpr,
}

impl VectorFieldExpr {
    pub fn new(x: FieldExpr, y: FieldExpr) -> Self {
        VectorFieldExpr { x, y }
    }

    pub fn parse(x: &str, y: &str) -> Result<Self> {
        Ok(VectorFieldExpr {
            x: FieldExpr::parse(x)?,
            y: FieldExpr::parse(y)?,
        })
    }

    pub fn constant(v: [f64; 2]) -> Self {
        VectorFieldExpr::new(FieldExpr::constant(v[0]), FieldExpr::constant(v[1]))
    }

    pub fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        [self.x.eval(x, y), self.y.eval(x, y)]
    }

    pub fn check_periodic(&self, tol: f64) -> Result<()> {
        self.x.check_periodic(tol)?;
        self.y.check_periodic(tol)?;
        Ok(())
    }
}
