//! Immutable expression trees.
//!
//! An [`Expr`] is a cheaply clonable handle to a shared [`Node`]. Trees are
//! built by the parser or by the constructor helpers below and never mutated
//! afterwards, so they can be shared freely between worker threads.
//!
//! Constants are exact rationals. Decimal and scientific literals such as
//! `0.5` or `1e-3` are stored exactly (`1/2`, `1/1000`), which keeps
//! derivatives and coefficient matching free of rounding drift.

mod diff;
mod eval;
mod parse;
mod print;
mod simplify;

use std::collections::BTreeSet;
use std::fmt;
use std::ops;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

pub use eval::{Bindings, EvalError, Program, SymbolTable};
pub use parse::{parse, ParseError, ParseErrorKind};

/// Spatial and temporal variable names recognised by the parser. Every other
/// identifier that is not a function name is a parameter.
pub const VARIABLES: [&str; 7] = ["t", "u", "v", "w", "x", "y", "z"];

pub type Rational = BigRational;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Expr(Arc<Node>);

/// Node kinds. Sums and products are n-ary; `Pow` carries an integer
/// exponent only.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Const(Rational),
    Var(String),
    Param(String),
    Neg(Expr),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Quotient(Expr, Expr),
    Pow(Expr, i64),
    Exp(Expr),
    Ln(Expr),
    Sin(Expr),
    Cos(Expr),
}

impl Expr {
    pub fn new(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(q: Rational) -> Self {
        Expr::new(Node::Const(q))
    }

    pub fn int(n: i64) -> Self {
        Expr::constant(Rational::from_integer(BigInt::from(n)))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Expr::constant(Rational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn zero() -> Self {
        Expr::int(0)
    }

    pub fn one() -> Self {
        Expr::int(1)
    }

    /// Exact binary value of a finite double.
    ///
    /// Panics on NaN or infinity.
    pub fn from_f64(value: f64) -> Self {
        let q = Rational::from_float(value).expect("finite constant");
        Expr::constant(q)
    }

    /// A named symbol: one of [`VARIABLES`] becomes a variable, anything
    /// else a parameter.
    pub fn symbol(name: &str) -> Self {
        if VARIABLES.contains(&name) {
            Expr::var(name)
        } else {
            Expr::param(name)
        }
    }

    pub fn var(name: &str) -> Self {
        Expr::new(Node::Var(name.to_string()))
    }

    pub fn param(name: &str) -> Self {
        Expr::new(Node::Param(name.to_string()))
    }

    pub fn sum(terms: Vec<Expr>) -> Self {
        match terms.len() {
            0 => Expr::zero(),
            1 => terms.into_iter().next().unwrap(),
            _ => Expr::new(Node::Sum(terms)),
        }
    }

    pub fn product(factors: Vec<Expr>) -> Self {
        match factors.len() {
            0 => Expr::one(),
            1 => factors.into_iter().next().unwrap(),
            _ => Expr::new(Node::Product(factors)),
        }
    }

    pub fn quotient(num: Expr, den: Expr) -> Self {
        Expr::new(Node::Quotient(num, den))
    }

    pub fn pow(&self, n: i64) -> Self {
        Expr::new(Node::Pow(self.clone(), n))
    }

    pub fn exp(&self) -> Self {
        Expr::new(Node::Exp(self.clone()))
    }

    pub fn ln(&self) -> Self {
        Expr::new(Node::Ln(self.clone()))
    }

    pub fn sin(&self) -> Self {
        Expr::new(Node::Sin(self.clone()))
    }

    pub fn cos(&self) -> Self {
        Expr::new(Node::Cos(self.clone()))
    }

    pub fn as_const(&self) -> Option<&Rational> {
        match self.node() {
            Node::Const(q) => Some(q),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const().is_some_and(Zero::is_zero)
    }

    pub fn is_one(&self) -> bool {
        self.as_const().is_some_and(One::is_one)
    }

    /// Value of a constant node as a double.
    pub fn const_f64(&self) -> Option<f64> {
        self.as_const().and_then(|q| q.to_f64())
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self.node() {
            Node::Const(_) | Node::Var(_) | Node::Param(_) => vec![],
            Node::Neg(a) | Node::Pow(a, _) | Node::Exp(a) | Node::Ln(a) | Node::Sin(a) | Node::Cos(a) => {
                vec![a]
            }
            Node::Sum(xs) | Node::Product(xs) => xs.iter().collect(),
            Node::Quotient(a, b) => vec![a, b],
        }
    }

    /// Names of all variables and parameters occurring in the tree.
    pub fn free_symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<String>) {
        match self.node() {
            Node::Var(s) | Node::Param(s) => {
                out.insert(s.clone());
            }
            _ => self.children().into_iter().for_each(|c| c.collect_symbols(out)),
        }
    }

    pub fn contains_symbol(&self, name: &str) -> bool {
        match self.node() {
            Node::Var(s) | Node::Param(s) => s == name,
            _ => self.children().into_iter().any(|c| c.contains_symbol(name)),
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        1 + self.children().into_iter().map(Expr::size).sum::<usize>()
    }

    /// Summands of the top-level sum, or the expression itself.
    pub fn summands(&self) -> Vec<Expr> {
        match self.node() {
            Node::Sum(xs) => xs.clone(),
            _ => vec![self.clone()],
        }
    }

    /// Replaces every occurrence of `name` by `replacement` and simplifies.
    pub fn substitute(&self, name: &str, replacement: &Expr) -> Expr {
        self.replace(name, replacement).simplify()
    }

    /// Simultaneous substitution of several symbols, then simplification.
    pub fn substitute_all(&self, map: &[(&str, Expr)]) -> Expr {
        self.replace_many(map).simplify()
    }

    fn replace(&self, name: &str, replacement: &Expr) -> Expr {
        self.replace_many(&[(name, replacement.clone())])
    }

    fn replace_many(&self, map: &[(&str, Expr)]) -> Expr {
        let rec = |e: &Expr| e.replace_many(map);
        match self.node() {
            Node::Var(s) | Node::Param(s) => {
                map.iter().find(|(n, _)| n == s).map(|(_, r)| r.clone()).unwrap_or_else(|| self.clone())
            }
            Node::Const(_) => self.clone(),
            Node::Neg(a) => Expr::new(Node::Neg(rec(a))),
            Node::Sum(xs) => Expr::new(Node::Sum(xs.iter().map(rec).collect())),
            Node::Product(xs) => Expr::new(Node::Product(xs.iter().map(rec).collect())),
            Node::Quotient(a, b) => Expr::quotient(rec(a), rec(b)),
            Node::Pow(a, n) => rec(a).pow(*n),
            Node::Exp(a) => rec(a).exp(),
            Node::Ln(a) => rec(a).ln(),
            Node::Sin(a) => rec(a).sin(),
            Node::Cos(a) => rec(a).cos(),
        }
    }

    /// Evaluates by tree walk. See [`Program`] for the compiled form.
    pub fn evaluate(&self, bindings: &Bindings) -> Result<f64, EvalError> {
        eval::evaluate(self, bindings)
    }
}

pub(crate) fn rational_is_integer(q: &Rational) -> Option<i64> {
    if q.is_integer() {
        q.to_integer().to_i64()
    } else {
        None
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::new(Node::Sum(vec![self, rhs]))
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::new(Node::Sum(vec![self, Expr::new(Node::Neg(rhs))]))
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::new(Node::Product(vec![self, rhs]))
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::quotient(self, rhs)
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::new(Node::Neg(self))
    }
}

impl<'a> ops::Add for &'a Expr {
    type Output = Expr;
    fn add(self, rhs: &'a Expr) -> Expr {
        self.clone() + rhs.clone()
    }
}

impl<'a> ops::Sub for &'a Expr {
    type Output = Expr;
    fn sub(self, rhs: &'a Expr) -> Expr {
        self.clone() - rhs.clone()
    }
}

impl<'a> ops::Mul for &'a Expr {
    type Output = Expr;
    fn mul(self, rhs: &'a Expr) -> Expr {
        self.clone() * rhs.clone()
    }
}

impl<'a> ops::Div for &'a Expr {
    type Output = Expr;
    fn div(self, rhs: &'a Expr) -> Expr {
        self.clone() / rhs.clone()
    }
}

impl ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -self.clone()
    }
}
