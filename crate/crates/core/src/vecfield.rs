//! Vector calculus in a fixed three-dimensional frame.
//!
//! Spatial operators differentiate with respect to the three frame
//! variables only. The time variable, when present, is a passive symbol.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Bindings, EvalError, Expr};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("frame mismatch: {0} vs {1}")]
pub struct FrameMismatch(pub Box<Frame>, pub Box<Frame>);

/// Ordered spatial variables plus an optional time variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub spatial: [String; 3],
    pub time: Option<String>,
}

impl Frame {
    pub fn new(spatial: [&str; 3], time: Option<&str>) -> Self {
        Frame { spatial: spatial.map(str::to_string), time: time.map(str::to_string) }
    }

    pub fn uvw() -> Self {
        Frame::new(["u", "v", "w"], Some("t"))
    }

    pub fn xyz() -> Self {
        Frame::new(["x", "y", "z"], Some("t"))
    }

    /// `xyz` when any of x, y, z occurs, otherwise `uvw`.
    pub fn infer<'a>(exprs: impl IntoIterator<Item = &'a Expr>) -> Self {
        let mut xyz = false;
        for e in exprs {
            let syms = e.free_symbols();
            xyz |= ["x", "y", "z"].iter().any(|s| syms.contains(*s));
        }
        if xyz {
            Frame::xyz()
        } else {
            Frame::uvw()
        }
    }

    pub fn coordinate(&self, i: usize) -> Expr {
        Expr::var(&self.spatial[i])
    }

    pub fn is_spatial(&self, name: &str) -> bool {
        self.spatial.iter().any(|s| s == name)
    }

    /// Spatial names followed by the time name.
    pub fn symbols(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.spatial.iter().map(String::as_str).collect();
        if let Some(t) = &self.time {
            v.push(t);
        }
        v
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.spatial.join(","))?;
        if let Some(t) = &self.time {
            write!(f, "[{t}]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScalarField {
    pub expr: Expr,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorField3 {
    pub components: [Expr; 3],
    pub frame: Frame,
}

fn same_frame(a: &Frame, b: &Frame) -> Result<(), FrameMismatch> {
    if a == b {
        Ok(())
    } else {
        Err(FrameMismatch(Box::new(a.clone()), Box::new(b.clone())))
    }
}

impl ScalarField {
    pub fn new(expr: Expr, frame: Frame) -> Self {
        ScalarField { expr, frame }
    }

    pub fn constant(c: Expr, frame: Frame) -> Self {
        ScalarField::new(c, frame)
    }

    /// Parameters: free symbols outside the frame.
    pub fn parameters(&self) -> Vec<String> {
        self.expr
            .free_symbols()
            .into_iter()
            .filter(|s| !self.frame.is_spatial(s) && self.frame.time.as_deref() != Some(s.as_str()))
            .collect()
    }

    pub fn partial(&self, i: usize) -> Expr {
        self.expr.differentiate(&self.frame.spatial[i])
    }

    /// Explicit time derivative, zero in a frame without time.
    pub fn time_partial(&self) -> Expr {
        match &self.frame.time {
            Some(t) => self.expr.differentiate(t),
            None => Expr::zero(),
        }
    }

    pub fn gradient(&self) -> VectorField3 {
        VectorField3 { components: [0, 1, 2].map(|i| self.partial(i)), frame: self.frame.clone() }
    }

    pub fn evaluate(&self, b: &Bindings) -> Result<f64, EvalError> {
        self.expr.evaluate(b)
    }

    pub fn mul(&self, other: &ScalarField) -> Result<ScalarField, FrameMismatch> {
        same_frame(&self.frame, &other.frame)?;
        Ok(ScalarField::new((&self.expr * &other.expr).simplify(), self.frame.clone()))
    }

    pub fn scale(&self, c: &Expr) -> ScalarField {
        ScalarField::new((c * &self.expr).simplify(), self.frame.clone())
    }

    /// Central differences in each spatial variable at `point`.
    pub fn fd_gradient(&self, point: &Bindings, h: f64) -> Result<[f64; 3], EvalError> {
        assert!(h > 0.0, "finite-difference step must be positive");
        let mut out = [0.0; 3];
        for (i, name) in self.frame.spatial.iter().enumerate() {
            let x = point.get(name).ok_or_else(|| EvalError::Unbound(name.clone()))?;
            let mut plus = point.clone();
            plus.set(name, x + h);
            let mut minus = point.clone();
            minus.set(name, x - h);
            out[i] = (self.expr.evaluate(&plus)? - self.expr.evaluate(&minus)?) / (2.0 * h);
        }
        Ok(out)
    }
}

/// Shorthand for a scalar field in the (u, v, w) frame.
pub fn scalar(expr: Expr) -> ScalarField {
    ScalarField::new(expr, Frame::uvw())
}

impl VectorField3 {
    pub fn new(components: [Expr; 3], frame: Frame) -> Self {
        VectorField3 { components, frame }
    }

    pub fn zero(frame: Frame) -> Self {
        VectorField3::new([Expr::zero(), Expr::zero(), Expr::zero()], frame)
    }

    /// The position field, e.g. (u, v, w).
    pub fn identity(frame: Frame) -> Self {
        VectorField3::new([0, 1, 2].map(|i| frame.coordinate(i)), frame)
    }

    pub fn component(&self, i: usize) -> ScalarField {
        ScalarField::new(self.components[i].clone(), self.frame.clone())
    }

    pub fn simplify(&self) -> Self {
        VectorField3::new(self.components.clone().map(|c| c.simplify()), self.frame.clone())
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Expr::is_zero)
    }

    pub fn evaluate(&self, b: &Bindings) -> Result<[f64; 3], EvalError> {
        Ok([self.components[0].evaluate(b)?, self.components[1].evaluate(b)?, self.components[2].evaluate(b)?])
    }

    fn partial(&self, comp: usize, var: usize) -> Expr {
        self.components[comp].differentiate(&self.frame.spatial[var])
    }

    pub fn curl(&self) -> VectorField3 {
        let d = |c, v| self.partial(c, v);
        VectorField3::new(
            [(d(2, 1) - d(1, 2)).simplify(), (d(0, 2) - d(2, 0)).simplify(), (d(1, 0) - d(0, 1)).simplify()],
            self.frame.clone(),
        )
    }

    pub fn divergence(&self) -> ScalarField {
        let e = Expr::sum((0..3).map(|i| self.partial(i, i)).collect()).simplify();
        ScalarField::new(e, self.frame.clone())
    }

    pub fn add(&self, other: &VectorField3) -> Result<VectorField3, FrameMismatch> {
        same_frame(&self.frame, &other.frame)?;
        let c = [0, 1, 2].map(|i| (&self.components[i] + &other.components[i]).simplify());
        Ok(VectorField3::new(c, self.frame.clone()))
    }

    pub fn sub(&self, other: &VectorField3) -> Result<VectorField3, FrameMismatch> {
        self.add(&other.scale(&Expr::int(-1)))
    }

    pub fn scale(&self, c: &Expr) -> VectorField3 {
        VectorField3::new(self.components.clone().map(|x| (c * &x).simplify()), self.frame.clone())
    }

    pub fn neg(&self) -> VectorField3 {
        self.scale(&Expr::int(-1))
    }

    /// Unsimplified summands of the dot product.
    pub fn dot_terms(&self, other: &VectorField3) -> Result<Vec<Expr>, FrameMismatch> {
        same_frame(&self.frame, &other.frame)?;
        Ok((0..3).map(|i| &self.components[i] * &other.components[i]).collect())
    }

    pub fn dot(&self, other: &VectorField3) -> Result<ScalarField, FrameMismatch> {
        let terms = self.dot_terms(other)?;
        Ok(ScalarField::new(Expr::sum(terms).simplify(), self.frame.clone()))
    }

    /// The two products `(a_j b_k, -a_k b_j)` making up component `i` of
    /// the cross product.
    pub fn cross_terms(&self, other: &VectorField3, i: usize) -> [Expr; 2] {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        [&self.components[j] * &other.components[k], -(&self.components[k] * &other.components[j])]
    }

    pub fn cross(&self, other: &VectorField3) -> Result<VectorField3, FrameMismatch> {
        same_frame(&self.frame, &other.frame)?;
        let c = [0, 1, 2].map(|i| Expr::sum(self.cross_terms(other, i).to_vec()).simplify());
        Ok(VectorField3::new(c, self.frame.clone()))
    }
}

/// `a · (b × c)`.
pub fn triple(a: &VectorField3, b: &VectorField3, c: &VectorField3) -> Result<ScalarField, FrameMismatch> {
    a.dot(&b.cross(c)?)
}

impl fmt::Display for VectorField3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}; {}; {}", self.components[0], self.components[1], self.components[2])
    }
}
