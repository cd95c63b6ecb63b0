//! Numeric evaluation: a reference tree walk and a compiled stack program.

use std::collections::BTreeMap;

use num_traits::ToPrimitive;
use thiserror::Error;

use super::{Expr, Node};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound symbol '{0}'")]
    Unbound(String),
    #[error("logarithm of non-positive value {0}")]
    LnDomain(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result")]
    NonFinite,
}

/// Values for variables and parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bindings {
    values: BTreeMap<String, f64>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn extend(&mut self, other: &Bindings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), *v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl<'a> FromIterator<(&'a str, f64)> for Bindings {
    fn from_iter<I: IntoIterator<Item = (&'a str, f64)>>(iter: I) -> Self {
        let mut b = Bindings::new();
        for (k, v) in iter {
            b.set(k, v);
        }
        b
    }
}

fn check(x: f64) -> Result<f64, EvalError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(EvalError::NonFinite)
    }
}

pub(super) fn evaluate(e: &Expr, b: &Bindings) -> Result<f64, EvalError> {
    let v = walk(e, b)?;
    check(v)
}

fn walk(e: &Expr, b: &Bindings) -> Result<f64, EvalError> {
    Ok(match e.node() {
        Node::Const(q) => q.to_f64().ok_or(EvalError::NonFinite)?,
        Node::Var(s) | Node::Param(s) => b.get(s).ok_or_else(|| EvalError::Unbound(s.clone()))?,
        Node::Neg(a) => -walk(a, b)?,
        Node::Sum(xs) => {
            let mut acc = 0.0;
            for x in xs {
                acc += walk(x, b)?;
            }
            acc
        }
        Node::Product(xs) => {
            let mut acc = 1.0;
            for x in xs {
                acc *= walk(x, b)?;
            }
            acc
        }
        Node::Quotient(n, d) => {
            let num = walk(n, b)?;
            let den = walk(d, b)?;
            if den == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            num / den
        }
        Node::Pow(a, n) => powi(walk(a, b)?, *n)?,
        Node::Exp(a) => walk(a, b)?.exp(),
        Node::Ln(a) => ln(walk(a, b)?)?,
        Node::Sin(a) => walk(a, b)?.sin(),
        Node::Cos(a) => walk(a, b)?.cos(),
    })
}

fn powi(x: f64, n: i64) -> Result<f64, EvalError> {
    if x == 0.0 && n < 0 {
        return Err(EvalError::DivisionByZero);
    }
    match i32::try_from(n) {
        Ok(k) => Ok(x.powi(k)),
        Err(_) => Ok(x.powf(n as f64)),
    }
}

fn ln(x: f64) -> Result<f64, EvalError> {
    if x <= 0.0 {
        Err(EvalError::LnDomain(x))
    } else {
        Ok(x.ln())
    }
}

/// Ordered symbol names; position `i` is slot `i` of an evaluation frame.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    names: Vec<String>,
}

impl SymbolTable {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Self {
        let mut t = SymbolTable::default();
        for n in names {
            t.insert(n.as_ref());
        }
        t
    }

    /// Slot of `name`, adding it if absent.
    pub fn insert(&mut self, name: &str) -> usize {
        match self.slot(name) {
            Some(i) => i,
            None => {
                self.names.push(name.to_string());
                self.names.len() - 1
            }
        }
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Frame of slot values taken from `bindings`; symbols without a
    /// binding are reported.
    pub fn frame(&self, bindings: &Bindings) -> Result<Vec<f64>, EvalError> {
        self.names.iter().map(|n| bindings.get(n).ok_or_else(|| EvalError::Unbound(n.clone()))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Const(f64),
    Load(usize),
    Neg,
    Add(usize),
    Mul(usize),
    Div,
    Powi(i64),
    Exp,
    Ln,
    Sin,
    Cos,
}

/// An expression compiled to postfix form over a [`SymbolTable`].
///
/// Evaluation follows the tree walk operation for operation, so both give
/// bit-identical results.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    depth: usize,
}

impl Program {
    /// Compiles `e`; every free symbol must have a slot in `table`.
    pub fn compile(e: &Expr, table: &SymbolTable) -> Result<Program, EvalError> {
        let mut ops = Vec::new();
        emit(e, table, &mut ops)?;
        let mut depth = 0usize;
        let mut max = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Load(_) => depth += 1,
                Op::Add(n) | Op::Mul(n) => depth = depth + 1 - n,
                Op::Div => depth -= 1,
                _ => {}
            }
            max = max.max(depth);
        }
        Ok(Program { ops, depth: max })
    }

    /// Evaluates against slot values.
    pub fn eval(&self, frame: &[f64]) -> Result<f64, EvalError> {
        let mut stack: Vec<f64> = Vec::with_capacity(self.depth);
        for op in &self.ops {
            match *op {
                Op::Const(c) => stack.push(c),
                Op::Load(i) => stack.push(frame[i]),
                Op::Neg => {
                    let x = stack.last_mut().unwrap();
                    *x = -*x;
                }
                Op::Add(n) => {
                    let start = stack.len() - n;
                    let mut acc = 0.0;
                    for x in &stack[start..] {
                        acc += x;
                    }
                    stack.truncate(start);
                    stack.push(acc);
                }
                Op::Mul(n) => {
                    let start = stack.len() - n;
                    let mut acc = 1.0;
                    for x in &stack[start..] {
                        acc *= x;
                    }
                    stack.truncate(start);
                    stack.push(acc);
                }
                Op::Div => {
                    let den = stack.pop().unwrap();
                    let num = stack.pop().unwrap();
                    if den == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    stack.push(num / den);
                }
                Op::Powi(n) => {
                    let x = stack.pop().unwrap();
                    stack.push(powi(x, n)?);
                }
                Op::Exp => {
                    let x = stack.last_mut().unwrap();
                    *x = x.exp();
                }
                Op::Ln => {
                    let x = stack.pop().unwrap();
                    stack.push(ln(x)?);
                }
                Op::Sin => {
                    let x = stack.last_mut().unwrap();
                    *x = x.sin();
                }
                Op::Cos => {
                    let x = stack.last_mut().unwrap();
                    *x = x.cos();
                }
            }
        }
        check(stack.pop().unwrap_or(0.0))
    }
}

fn emit(e: &Expr, table: &SymbolTable, ops: &mut Vec<Op>) -> Result<(), EvalError> {
    match e.node() {
        Node::Const(q) => ops.push(Op::Const(q.to_f64().ok_or(EvalError::NonFinite)?)),
        Node::Var(s) | Node::Param(s) => {
            let slot = table.slot(s).ok_or_else(|| EvalError::Unbound(s.clone()))?;
            ops.push(Op::Load(slot));
        }
        Node::Neg(a) => {
            emit(a, table, ops)?;
            ops.push(Op::Neg);
        }
        Node::Sum(xs) => {
            // The tree walk starts its sum at 0.0; matching that keeps the
            // two evaluators bit-identical (-0.0 + 0.0 == 0.0).
            ops.push(Op::Const(0.0));
            for x in xs {
                emit(x, table, ops)?;
            }
            ops.push(Op::Add(xs.len() + 1));
        }
        Node::Product(xs) => {
            for x in xs {
                emit(x, table, ops)?;
            }
            ops.push(Op::Mul(xs.len()));
        }
        Node::Quotient(a, b) => {
            emit(a, table, ops)?;
            emit(b, table, ops)?;
            ops.push(Op::Div);
        }
        Node::Pow(a, n) => {
            emit(a, table, ops)?;
            ops.push(Op::Powi(*n));
        }
        Node::Exp(a) => {
            emit(a, table, ops)?;
            ops.push(Op::Exp);
        }
        Node::Ln(a) => {
            emit(a, table, ops)?;
            ops.push(Op::Ln);
        }
        Node::Sin(a) => {
            emit(a, table, ops)?;
            ops.push(Op::Sin);
        }
        Node::Cos(a) => {
            emit(a, table, ops)?;
            ops.push(Op::Cos);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn eval(text: &str, b: &Bindings) -> Result<f64, EvalError> {
        parse(text).unwrap().evaluate(b)
    }

    #[test]
    fn arithmetic() {
        let b = Bindings::new().with("v", 2.0).with("w", 3.0);
        assert_eq!(eval("0.5*(v^2+w^2)", &b).unwrap(), 6.5);
        let b = Bindings::new().with("u", 1.0).with("alpha", 1.0).with("w", 3.0);
        assert_eq!(eval("u^2-2*alpha*w", &b).unwrap(), -5.0);
        let b = Bindings::new().with("alpha", 1.0).with("t", 0.0);
        assert_eq!(eval("exp(-2*alpha*t)", &b).unwrap(), 1.0);
    }

    #[test]
    fn domain_errors() {
        let b = Bindings::new().with("u", 0.0);
        assert_eq!(eval("ln(u)", &b), Err(EvalError::LnDomain(0.0)));
        assert_eq!(eval("1/u", &b), Err(EvalError::DivisionByZero));
        assert_eq!(eval("u^-2", &b), Err(EvalError::DivisionByZero));
        assert_eq!(eval("v", &b), Err(EvalError::Unbound("v".into())));
        assert_eq!(eval("exp(1000)", &b), Err(EvalError::NonFinite));
    }

    #[test]
    fn program_matches_tree_walk() {
        let table = SymbolTable::new(&["t", "u", "v", "w", "alpha"]);
        let b: Bindings = [("t", 0.3), ("u", -1.25), ("v", 0.7), ("w", 1.9), ("alpha", 1.5)].into_iter().collect();
        let frame = table.frame(&b).unwrap();
        for text in ["exp(-2*alpha*t)*v*w - u/(v+w)", "sin(u)^3 - cos(v*w)/ln(w)", "-(u+v)^-2 + 0.1"] {
            let e = parse(text).unwrap();
            for e in [e.clone(), e.simplify()] {
                let p = Program::compile(&e, &table).unwrap();
                assert_eq!(p.eval(&frame).unwrap().to_bits(), e.evaluate(&b).unwrap().to_bits(), "{text}");
            }
        }
    }

    #[test]
    fn compile_requires_slots() {
        let e = parse("u + beta").unwrap();
        let table = SymbolTable::new(&["u"]);
        assert_eq!(Program::compile(&e, &table), Err(EvalError::Unbound("beta".into())));
    }
}
