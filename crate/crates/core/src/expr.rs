//! Jet-space expressions.
//!
//! An [`Expr`] is an immutable tree over the independent variable `t`,
//! real constants and jet variables `x_j^(k)`, where every derivative is an
//! independent algebraic coordinate. The two derivative operators are the
//! formal total derivative `D = ∂/∂t + Σ x^(k+1) ∂/∂x^(k)` and the plain
//! partial derivative in one jet coordinate.
//!
//! Construction only folds constants and drops identities (`0 + e`, `1 * e`,
//! `e^0`, `e^1`, `0 * e`). Nothing is factored or cancelled: `x - x` stays a
//! two-term sum, so symbolic cancellation is visible to the rank checks
//! downstream instead of being hidden here.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops;
use std::sync::Arc;

use thiserror::Error;

/// Smallest denominator magnitude accepted by [`Expr::evaluate`].
pub const MIN_DENOMINATOR: f64 = 1e-300;

/// A derivative `x_var^(order)` treated as a coordinate of jet space.
///
/// `var` is zero-based; display code maps it to the owning system's names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JetVar {
    pub var: usize,
    pub order: u32,
}

impl JetVar {
    pub fn new(var: usize, order: u32) -> Self {
        Self { var, order }
    }

    /// The next derivative of the same variable.
    pub fn prime(self) -> Self {
        Self { var: self.var, order: self.order + 1 }
    }
}

/// Elementary functions admitted in equations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tanh,
    Exp,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Exp => "exp",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "tanh" => Some(Func::Tanh),
            "exp" => Some(Func::Exp),
            _ => None,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tanh => x.tanh(),
            Func::Exp => x.exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Time,
    Jet(JetVar),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Pow(Expr, u32),
    Neg(Expr),
    Quotient(Expr, Expr),
    Apply(Func, Expr),
}

/// Shared, immutable expression tree.
#[derive(Clone, Debug)]
pub struct Expr(Arc<Node>);

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || *self.0 == *other.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("quotient with a literal zero denominator")]
    ZeroDenominator,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no value assigned to jet variable {0:?}")]
    Unassigned(JetVar),
    #[error("division by zero (|denominator| = {0:e})")]
    DivisionByZero(f64),
}

/// A point of jet space: a time value plus coordinates for jet variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Point {
    pub t: f64,
    pub values: BTreeMap<JetVar, f64>,
}

impl Point {
    pub fn new(t: f64) -> Self {
        Self { t, values: BTreeMap::new() }
    }

    pub fn with(mut self, v: JetVar, value: f64) -> Self {
        self.values.insert(v, value);
        self
    }

    pub fn get(&self, v: JetVar) -> Option<f64> {
        self.values.get(&v).copied()
    }

    pub fn set(&mut self, v: JetVar, value: f64) {
        self.values.insert(v, value);
    }
}

impl Expr {
    fn from_node(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(c: f64) -> Self {
        Self::from_node(Node::Const(c))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn time() -> Self {
        Self::from_node(Node::Time)
    }

    pub fn jet(var: usize, order: u32) -> Self {
        Self::from_node(Node::Jet(JetVar::new(var, order)))
    }

    pub fn var(v: JetVar) -> Self {
        Self::from_node(Node::Jet(v))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    /// Sum with flattening, constant folding and zero elimination. A folded
    /// constant is kept as the last term.
    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Self {
        let mut flat = Vec::new();
        let mut constant = 0.0;
        let mut saw_constant = false;
        for term in terms {
            match term.node() {
                Node::Const(c) => {
                    constant += c;
                    saw_constant = true;
                }
                Node::Sum(inner) => {
                    for t in inner {
                        if let Node::Const(c) = t.node() {
                            constant += c;
                            saw_constant = true;
                        } else {
                            flat.push(t.clone());
                        }
                    }
                }
                _ => flat.push(term),
            }
        }
        if saw_constant && constant != 0.0 {
            flat.push(Expr::constant(constant));
        }
        match flat.len() {
            0 => Expr::zero(),
            1 => flat.pop().unwrap(),
            _ => Self::from_node(Node::Sum(flat)),
        }
    }

    /// Product with flattening, constant folding, and elimination of unit
    /// and zero factors. A folded constant is kept as the first factor.
    pub fn product(factors: impl IntoIterator<Item = Expr>) -> Self {
        let mut flat = Vec::new();
        let mut constant = 1.0;
        for factor in factors {
            match factor.node() {
                Node::Const(c) => constant *= c,
                Node::Product(inner) => {
                    for f in inner {
                        if let Node::Const(c) = f.node() {
                            constant *= c;
                        } else {
                            flat.push(f.clone());
                        }
                    }
                }
                _ => flat.push(factor),
            }
        }
        if constant == 0.0 {
            return Expr::zero();
        }
        if flat.is_empty() {
            return Expr::constant(constant);
        }
        if constant != 1.0 {
            flat.insert(0, Expr::constant(constant));
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Self::from_node(Node::Product(flat))
        }
    }

    pub fn pow(base: Expr, exponent: u32) -> Self {
        if exponent == 0 {
            return Expr::one();
        }
        if exponent == 1 {
            return base;
        }
        if let Some(c) = base.as_const() {
            return Expr::constant(c.powi(exponent as i32));
        }
        Self::from_node(Node::Pow(base, exponent))
    }

    pub fn negate(e: Expr) -> Self {
        match e.node() {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(inner) => inner.clone(),
            Node::Product(factors) if factors[0].as_const().is_some() => {
                let c = factors[0].as_const().unwrap();
                Expr::product(std::iter::once(Expr::constant(-c)).chain(factors[1..].iter().cloned()))
            }
            _ => Self::from_node(Node::Neg(e)),
        }
    }

    pub fn difference(a: Expr, b: Expr) -> Self {
        Expr::sum([a, Expr::negate(b)])
    }

    pub fn quotient(num: Expr, den: Expr) -> Result<Self, ExprError> {
        if den.is_zero() {
            return Err(ExprError::ZeroDenominator);
        }
        if num.is_zero() {
            return Ok(Expr::zero());
        }
        if den.is_one() {
            return Ok(num);
        }
        if let (Some(a), Some(b)) = (num.as_const(), den.as_const()) {
            return Ok(Expr::constant(a / b));
        }
        Ok(Self::from_node(Node::Quotient(num, den)))
    }

    pub fn apply(f: Func, arg: Expr) -> Self {
        if let Some(c) = arg.as_const() {
            return Expr::constant(f.apply(c));
        }
        Self::from_node(Node::Apply(f, arg))
    }

    pub fn sin(arg: Expr) -> Self {
        Self::apply(Func::Sin, arg)
    }

    pub fn cos(arg: Expr) -> Self {
        Self::apply(Func::Cos, arg)
    }

    pub fn tanh(arg: Expr) -> Self {
        Self::apply(Func::Tanh, arg)
    }

    pub fn exp(arg: Expr) -> Self {
        Self::apply(Func::Exp, arg)
    }

    fn children(&self) -> Vec<&Expr> {
        match self.node() {
            Node::Const(_) | Node::Time | Node::Jet(_) => Vec::new(),
            Node::Sum(v) | Node::Product(v) => v.iter().collect(),
            Node::Pow(b, _) => vec![b],
            Node::Neg(e) | Node::Apply(_, e) => vec![e],
            Node::Quotient(a, b) => vec![a, b],
        }
    }

    /// Rebuilds the tree bottom-up, replacing leaves through `leaf`.
    fn rebuild(&self, leaf: &dyn Fn(&Node) -> Option<Expr>) -> Expr {
        if let Some(r) = leaf(self.node()) {
            return r;
        }
        match self.node() {
            Node::Const(_) | Node::Time | Node::Jet(_) => self.clone(),
            Node::Sum(v) => Expr::sum(v.iter().map(|e| e.rebuild(leaf))),
            Node::Product(v) => Expr::product(v.iter().map(|e| e.rebuild(leaf))),
            Node::Pow(b, k) => Expr::pow(b.rebuild(leaf), *k),
            Node::Neg(e) => Expr::negate(e.rebuild(leaf)),
            Node::Quotient(a, b) => {
                let den = b.rebuild(leaf);
                // A substitution that makes the denominator vanish identically
                // is kept as an explicit 0-denominator-free form: evaluation
                // reports the division error instead.
                match Expr::quotient(a.rebuild(leaf), den.clone()) {
                    Ok(q) => q,
                    Err(_) => Self::from_node(Node::Quotient(a.rebuild(leaf), den)),
                }
            }
            Node::Apply(f, e) => Expr::apply(*f, e.rebuild(leaf)),
        }
    }

    /// Replaces jet variables for which `map` returns a value.
    pub fn substitute(&self, map: &dyn Fn(JetVar) -> Option<Expr>) -> Expr {
        self.rebuild(&|node| match node {
            Node::Jet(v) => map(*v),
            _ => None,
        })
    }

    /// Replaces the independent variable by a constant.
    pub fn at_time(&self, t: f64) -> Expr {
        self.rebuild(&|node| match node {
            Node::Time => Some(Expr::constant(t)),
            _ => None,
        })
    }

    /// Chain rule with caller-supplied derivatives of the leaves.
    fn derive(&self, leaf: &dyn Fn(&Node) -> Expr) -> Expr {
        match self.node() {
            Node::Const(_) | Node::Time | Node::Jet(_) => leaf(self.node()),
            Node::Sum(v) => Expr::sum(v.iter().map(|e| e.derive(leaf))),
            Node::Product(v) => {
                let mut terms = Vec::with_capacity(v.len());
                for (i, fi) in v.iter().enumerate() {
                    let dfi = fi.derive(leaf);
                    if dfi.is_zero() {
                        continue;
                    }
                    let mut factors: Vec<Expr> = Vec::with_capacity(v.len());
                    for (j, fj) in v.iter().enumerate() {
                        if i != j {
                            factors.push(fj.clone());
                        }
                    }
                    factors.push(dfi);
                    terms.push(Expr::product(factors));
                }
                Expr::sum(terms)
            }
            Node::Pow(b, k) => {
                let db = b.derive(leaf);
                if db.is_zero() {
                    return Expr::zero();
                }
                Expr::product([Expr::constant(*k as f64), Expr::pow(b.clone(), k - 1), db])
            }
            Node::Neg(e) => Expr::negate(e.derive(leaf)),
            Node::Quotient(a, b) => {
                let da = a.derive(leaf);
                let db = b.derive(leaf);
                if db.is_zero() {
                    if da.is_zero() {
                        return Expr::zero();
                    }
                    return Expr::quotient(da, b.clone()).expect("nonzero denominator");
                }
                let num = Expr::difference(
                    Expr::product([da, b.clone()]),
                    Expr::product([a.clone(), db]),
                );
                Expr::quotient(num, Expr::pow(b.clone(), 2)).expect("nonzero denominator")
            }
            Node::Apply(f, e) => {
                let de = e.derive(leaf);
                if de.is_zero() {
                    return Expr::zero();
                }
                let outer = match f {
                    Func::Sin => Expr::cos(e.clone()),
                    Func::Cos => Expr::negate(Expr::sin(e.clone())),
                    Func::Tanh => Expr::difference(Expr::one(), Expr::pow(Expr::tanh(e.clone()), 2)),
                    Func::Exp => Expr::exp(e.clone()),
                };
                Expr::product([outer, de])
            }
        }
    }

    /// Formal total derivative with respect to `t`.
    pub fn total_derivative(&self) -> Expr {
        self.derive(&|node| match node {
            Node::Time => Expr::one(),
            Node::Jet(v) => Expr::var(v.prime()),
            _ => Expr::zero(),
        })
    }

    /// `D^k self`.
    pub fn total_derivative_n(&self, k: u32) -> Expr {
        let mut e = self.clone();
        for _ in 0..k {
            e = e.total_derivative();
        }
        e
    }

    /// Partial derivative in the jet coordinate `v`.
    pub fn partial_derivative(&self, v: JetVar) -> Expr {
        if !self.contains(v) {
            return Expr::zero();
        }
        self.derive(&|node| match node {
            Node::Jet(w) if *w == v => Expr::one(),
            _ => Expr::zero(),
        })
    }

    /// Evaluates with values provided by `lookup`.
    pub fn eval_with(&self, t: f64, lookup: &dyn Fn(JetVar) -> Option<f64>) -> Result<f64, EvalError> {
        Ok(match self.node() {
            Node::Const(c) => *c,
            Node::Time => t,
            Node::Jet(v) => lookup(*v).ok_or(EvalError::Unassigned(*v))?,
            Node::Sum(v) => {
                let mut acc = 0.0;
                for e in v {
                    acc += e.eval_with(t, lookup)?;
                }
                acc
            }
            Node::Product(v) => {
                let mut acc = 1.0;
                for e in v {
                    acc *= e.eval_with(t, lookup)?;
                }
                acc
            }
            Node::Pow(b, k) => b.eval_with(t, lookup)?.powi(*k as i32),
            Node::Neg(e) => -e.eval_with(t, lookup)?,
            Node::Quotient(a, b) => {
                let den = b.eval_with(t, lookup)?;
                if den.abs() < MIN_DENOMINATOR {
                    return Err(EvalError::DivisionByZero(den));
                }
                a.eval_with(t, lookup)? / den
            }
            Node::Apply(f, e) => f.apply(e.eval_with(t, lookup)?),
        })
    }

    pub fn evaluate(&self, p: &Point) -> Result<f64, EvalError> {
        self.eval_with(p.t, &|v| p.values.get(&v).copied())
    }

    fn visit_jets(&self, f: &mut dyn FnMut(JetVar)) {
        match self.node() {
            Node::Jet(v) => f(*v),
            _ => {
                for c in self.children() {
                    c.visit_jets(f);
                }
            }
        }
    }

    pub fn jet_vars(&self) -> BTreeSet<JetVar> {
        let mut out = BTreeSet::new();
        self.visit_jets(&mut |v| {
            out.insert(v);
        });
        out
    }

    pub fn contains(&self, v: JetVar) -> bool {
        match self.node() {
            Node::Jet(w) => *w == v,
            _ => self.children().into_iter().any(|c| c.contains(v)),
        }
    }

    pub fn has_jets(&self) -> bool {
        match self.node() {
            Node::Jet(_) => true,
            _ => self.children().into_iter().any(|c| c.has_jets()),
        }
    }

    /// Highest derivative order of variable `var`, `None` standing for −∞.
    pub fn highest_order(&self, var: usize) -> Option<u32> {
        let mut best: Option<u32> = None;
        self.visit_jets(&mut |v| {
            if v.var == var {
                best = Some(best.map_or(v.order, |b| b.max(v.order)));
            }
        });
        best
    }

    /// True when jet variables only occur under sums, products, integer
    /// powers, negation and quotient numerators.
    pub fn is_polynomial_in_jets(&self) -> bool {
        match self.node() {
            Node::Const(_) | Node::Time | Node::Jet(_) => true,
            Node::Sum(v) | Node::Product(v) => v.iter().all(|e| e.is_polynomial_in_jets()),
            Node::Pow(b, _) => b.is_polynomial_in_jets(),
            Node::Neg(e) => e.is_polynomial_in_jets(),
            Node::Quotient(a, b) => !b.has_jets() && a.is_polynomial_in_jets(),
            Node::Apply(_, e) => !e.has_jets(),
        }
    }

    /// Human-readable rendering: primes up to order three, `x^(k)` above.
    pub fn display<'a>(&'a self, names: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, names, dsl: false }
    }

    /// Rendering that the model parser reads back to an identical tree.
    pub fn to_dsl<'a>(&'a self, names: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, names, dsl: true }
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $body:expr) => {
        impl ops::$trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self, rhs)
            }
        }
        impl ops::$trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self.clone(), rhs.clone())
            }
        }
        impl ops::$trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(self, Expr::constant(rhs))
            }
        }
        impl ops::$trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                let f: fn(Expr, Expr) -> Expr = $body;
                f(Expr::constant(self), rhs)
            }
        }
    };
}

binop!(Add, add, |a, b| Expr::sum([a, b]));
binop!(Sub, sub, Expr::difference);
binop!(Mul, mul, |a, b| Expr::product([a, b]));
// Panics on a literal zero denominator; use `Expr::quotient` to handle it.
binop!(Div, div, |a, b| Expr::quotient(a, b).expect("literal zero denominator"));

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::negate(self)
    }
}

impl ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::negate(self.clone())
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    names: &'a [String],
    dsl: bool,
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum Prec {
    Sum,
    Product,
    Unary,
    Atom,
}

impl ExprDisplay<'_> {
    fn name(&self, var: usize) -> String {
        self.names.get(var).cloned().unwrap_or_else(|| format!("x{}", var + 1))
    }

    fn jet(&self, v: JetVar) -> String {
        let name = self.name(v.var);
        match v.order {
            0..=3 => format!("{name}{}", "'".repeat(v.order as usize)),
            k if self.dsl => format!("diff({name}, t, {k})"),
            k => format!("{name}^({k})"),
        }
    }

    fn prec(e: &Expr) -> Prec {
        match e.node() {
            Node::Const(c) if *c < 0.0 => Prec::Unary,
            Node::Const(_) | Node::Time | Node::Jet(_) | Node::Apply(..) | Node::Pow(..) => Prec::Atom,
            Node::Sum(_) => Prec::Sum,
            Node::Product(_) | Node::Quotient(..) => Prec::Product,
            Node::Neg(_) => Prec::Unary,
        }
    }

    fn write_wrapped(&self, f: &mut fmt::Formatter<'_>, e: &Expr, min: Prec) -> fmt::Result {
        if Self::prec(e) < min {
            write!(f, "(")?;
            self.write(f, e)?;
            write!(f, ")")
        } else {
            self.write(f, e)
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
        match e.node() {
            Node::Const(c) => write!(f, "{c:?}"),
            Node::Time => write!(f, "t"),
            Node::Jet(v) => write!(f, "{}", self.jet(*v)),
            Node::Sum(terms) => {
                for (i, term) in terms.iter().enumerate() {
                    match (i, term.node()) {
                        (0, _) => self.write(f, term)?,
                        (_, Node::Neg(inner)) => {
                            write!(f, " - ")?;
                            self.write_wrapped(f, inner, Prec::Product)?;
                        }
                        (_, Node::Const(c)) if *c < 0.0 => write!(f, " - {:?}", -c)?,
                        (_, Node::Product(factors))
                            if factors[0].as_const().is_some_and(|c| c < 0.0 && c != -1.0) =>
                        {
                            write!(f, " - ")?;
                            self.write(f, &Expr::negate(term.clone()))?;
                        }
                        _ => {
                            write!(f, " + ")?;
                            self.write(f, term)?;
                        }
                    }
                }
                Ok(())
            }
            Node::Product(factors) => {
                for (i, factor) in factors.iter().enumerate() {
                    if i > 0 {
                        write!(f, " * ")?;
                    }
                    let first_const = i == 0 && factor.as_const().is_some();
                    if matches!(factor.node(), Node::Quotient(..)) || (!first_const && Self::prec(factor) < Prec::Atom) {
                        write!(f, "(")?;
                        self.write(f, factor)?;
                        write!(f, ")")?;
                    } else {
                        self.write(f, factor)?;
                    }
                }
                Ok(())
            }
            Node::Pow(b, k) => {
                if matches!(b.node(), Node::Pow(..)) {
                    write!(f, "(")?;
                    self.write(f, b)?;
                    write!(f, ")")?;
                } else {
                    self.write_wrapped(f, b, Prec::Atom)?;
                }
                write!(f, "^{k}")
            }
            Node::Neg(inner) => {
                write!(f, "-")?;
                self.write_wrapped(f, inner, Prec::Atom)
            }
            Node::Quotient(a, b) => {
                if matches!(a.node(), Node::Quotient(..)) {
                    write!(f, "(")?;
                    self.write(f, a)?;
                    write!(f, ")")?;
                } else {
                    self.write_wrapped(f, a, Prec::Unary)?;
                }
                write!(f, " / ")?;
                self.write_wrapped(f, b, Prec::Atom)
            }
            Node::Apply(func, arg) => {
                write!(f, "{}(", func.name())?;
                self.write(f, arg)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, self.expr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::jet(0, 0)
    }
    fn y() -> Expr {
        Expr::jet(1, 0)
    }
    fn names() -> Vec<String> {
        vec!["x".into(), "y".into()]
    }
    fn jet(var: usize, order: u32) -> Expr {
        Expr::jet(var, order)
    }

    /// 2y·x'' − x·y'' + 2x·x'² − x' + sin t
    fn example_first() -> Expr {
        2.0 * y() * jet(0, 2) - x() * jet(1, 2) + 2.0 * x() * Expr::pow(jet(0, 1), 2) - jet(0, 1)
            + Expr::sin(Expr::time())
    }

    fn pt(t: f64, vals: &[(usize, u32, f64)]) -> Point {
        let mut p = Point::new(t);
        for &(v, k, val) in vals {
            p.set(JetVar::new(v, k), val);
        }
        p
    }

    #[test]
    fn total_derivative_of_square() {
        let d = Expr::pow(x(), 2).total_derivative();
        let p = pt(0.0, &[(0, 0, 1.5), (0, 1, -0.25)]);
        assert_eq!(d.evaluate(&p).unwrap(), 2.0 * 1.5 * -0.25);
        assert_eq!(d.highest_order(0), Some(1));
    }

    #[test]
    fn total_derivative_of_constraint() {
        let f = y() - Expr::pow(x(), 2);
        let d = f.total_derivative();
        // y' − 2 x x'
        let expected = jet(1, 1) - 2.0 * x() * jet(0, 1);
        for &(a, b, c, e) in &[(1.0, 2.0, 3.0, 4.0), (-0.3, 0.7, 1.1, -2.0)] {
            let p = pt(0.0, &[(0, 0, a), (1, 0, b), (0, 1, c), (1, 1, e)]);
            assert!((d.evaluate(&p).unwrap() - expected.evaluate(&p).unwrap()).abs() < 1e-14);
        }
        assert_eq!(d.display(&names()).to_string(), "y' - 2.0 * x * x'");
    }

    #[test]
    fn total_derivative_of_sin_t() {
        let d = Expr::sin(Expr::time()).total_derivative();
        assert_eq!(d, Expr::cos(Expr::time()));
    }

    #[test]
    fn partial_derivatives_of_example() {
        let f = example_first();
        let names = names();
        assert_eq!(f.partial_derivative(JetVar::new(0, 2)).display(&names).to_string(), "2.0 * y");
        assert_eq!(f.partial_derivative(JetVar::new(1, 2)).display(&names).to_string(), "-x");
        assert!(Expr::sin(Expr::time()).partial_derivative(JetVar::new(0, 0)).is_zero());
    }

    #[test]
    fn evaluation_examples() {
        let e = x() * jet(0, 1) + Expr::time();
        assert_eq!(e.evaluate(&pt(1.0, &[(0, 0, 2.0), (0, 1, 3.0)])).unwrap(), 7.0);
        let c = y() - Expr::pow(x(), 2);
        assert_eq!(c.evaluate(&pt(0.0, &[(0, 0, 2.0), (1, 0, 4.0)])).unwrap(), 0.0);
    }

    #[test]
    fn beam_witness_residual() {
        // y1² − y2² at the listed witness coordinates; the expected value
        // was computed independently in exact decimal arithmetic:
        // (−0.43092053722)² − (−0.43092060160)² = −5.54853325172316e−8.
        let e = Expr::pow(x(), 2) - Expr::pow(y(), 2);
        let v = e.evaluate(&pt(0.0, &[(0, 0, -0.43092053722), (1, 0, -0.43092060160)])).unwrap();
        assert!((v - (-5.54853325172316e-8)).abs() < 1e-16, "{v:e}");
        assert!((v.abs() - 5.5e-8).abs() < 0.1e-8);
    }

    #[test]
    fn evaluation_errors() {
        let e = x() + y();
        assert_eq!(e.evaluate(&pt(0.0, &[(0, 0, 1.0)])), Err(EvalError::Unassigned(JetVar::new(1, 0))));
        let q = Expr::quotient(Expr::one(), x()).unwrap();
        assert!(matches!(q.evaluate(&pt(0.0, &[(0, 0, 0.0)])), Err(EvalError::DivisionByZero(_))));
        assert_eq!(Expr::quotient(x(), Expr::zero()), Err(ExprError::ZeroDenominator));
    }

    #[test]
    fn highest_order_examples() {
        let f = example_first();
        assert_eq!(f.highest_order(0), Some(2));
        assert_eq!((y() - Expr::pow(x(), 2)).highest_order(1), Some(0));
        assert_eq!(Expr::sin(Expr::time()).highest_order(0), None);
    }

    #[test]
    fn polynomial_classification() {
        assert!((2.0 * y() * jet(0, 2) + Expr::sin(Expr::time())).is_polynomial_in_jets());
        let x3 = Expr::jet(2, 0);
        let pend = Expr::pow(x(), 2) + Expr::pow(y(), 2) * Expr::pow(Expr::sin(x3), 2) - 1.0;
        assert!(!pend.is_polynomial_in_jets());
        assert!((Expr::pow(x(), 2) - Expr::pow(y(), 2)).is_polynomial_in_jets());
        // Jet in a numerator is fine, in a denominator is not.
        assert!(Expr::quotient(x(), Expr::constant(3.0)).unwrap().is_polynomial_in_jets());
        assert!(!Expr::quotient(Expr::one(), x()).unwrap().is_polynomial_in_jets());
    }

    #[test]
    fn no_cancellation() {
        let e = x() - x();
        assert!(!e.is_zero());
        assert_eq!(e.highest_order(0), Some(0));
        assert_eq!(e.evaluate(&pt(0.0, &[(0, 0, 3.0)])).unwrap(), 0.0);
    }

    #[test]
    fn identities_are_folded() {
        assert_eq!(x() + 0.0, x());
        assert_eq!(1.0 * x(), x());
        assert_eq!(Expr::pow(x(), 0), Expr::one());
        assert_eq!(Expr::pow(x(), 1), x());
        assert!((0.0 * x()).is_zero());
        assert_eq!(Expr::constant(2.0) * 3.0, Expr::constant(6.0));
    }

    #[test]
    fn display_orders() {
        let names = names();
        assert_eq!(jet(0, 3).display(&names).to_string(), "x'''");
        assert_eq!(jet(0, 4).display(&names).to_string(), "x^(4)");
        assert_eq!(jet(0, 4).to_dsl(&names).to_string(), "diff(x, t, 4)");
    }
}
