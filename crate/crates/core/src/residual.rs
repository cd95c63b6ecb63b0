//! Residuals kept as lists of summands so they can be reported relative to
//! the size of their largest term.
//!
//! A residual `r = Σ tᵢ` evaluated at a point yields the raw value `r` and
//! the scale `max |tᵢ|`; its relative size is `|r| / (1 + scale)`. Exponential
//! weights make raw magnitudes vary by many orders across the sampling box,
//! which the relative form absorbs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::expr::{Bindings, EvalError, Expr, Program, SymbolTable};

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    terms: Vec<Expr>,
}

impl Residual {
    /// Simplifies each term and splits it into its summands. The terms are
    /// never added symbolically, so cancellation happens numerically.
    pub fn from_terms(terms: impl IntoIterator<Item = Expr>) -> Self {
        let mut out = Vec::new();
        for t in terms {
            out.extend(t.simplify().summands().into_iter().filter(|s| !s.is_zero()));
        }
        Residual { terms: out }
    }

    pub fn single(e: Expr) -> Self {
        Residual::from_terms([e])
    }

    /// `lhs - rhs`, each split into summands.
    pub fn difference(lhs: &Expr, rhs: &Expr) -> Self {
        Residual::from_terms([lhs.clone(), -rhs])
    }

    pub fn terms(&self) -> &[Expr] {
        &self.terms
    }

    /// The residual as one simplified expression.
    pub fn expr(&self) -> Expr {
        Expr::sum(self.terms.clone()).simplify()
    }

    pub fn is_symbolically_zero(&self) -> bool {
        self.terms.is_empty() || self.expr().is_zero()
    }

    pub fn evaluate(&self, b: &Bindings) -> Result<ResidualValue, EvalError> {
        let mut value = 0.0;
        let mut scale: f64 = 0.0;
        for t in &self.terms {
            let x = t.evaluate(b)?;
            value += x;
            scale = scale.max(x.abs());
        }
        Ok(ResidualValue { value, scale })
    }

    pub fn compile(&self, table: &SymbolTable) -> Result<CompiledResidual, EvalError> {
        let programs = self.terms.iter().map(|t| Program::compile(t, table)).collect::<Result<_, _>>()?;
        Ok(CompiledResidual { programs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualValue {
    pub value: f64,
    pub scale: f64,
}

impl ResidualValue {
    pub fn relative(&self) -> f64 {
        self.value.abs() / (1.0 + self.scale)
    }
}

#[derive(Debug, Clone)]
pub struct CompiledResidual {
    programs: Vec<Program>,
}

impl CompiledResidual {
    pub fn eval(&self, frame: &[f64]) -> Result<ResidualValue, EvalError> {
        let mut value = 0.0;
        let mut scale: f64 = 0.0;
        for p in &self.programs {
            let x = p.eval(frame)?;
            value += x;
            scale = scale.max(x.abs());
        }
        Ok(ResidualValue { value, scale })
    }
}

/// Max, relative max and RMS over a set of residual samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ResidualStats {
    pub n: usize,
    pub max_abs: f64,
    pub max_rel: f64,
    pub rms: f64,
}

impl ResidualStats {
    /// Aggregates in slice order, so results do not depend on how the
    /// values were produced.
    pub fn from_values(values: &[ResidualValue]) -> Self {
        let mut s = ResidualStats { n: values.len(), ..Default::default() };
        let mut sq = 0.0;
        for v in values {
            s.max_abs = s.max_abs.max(v.value.abs());
            s.max_rel = s.max_rel.max(v.relative());
            sq += v.value * v.value;
        }
        if !values.is_empty() {
            s.rms = (sq / values.len() as f64).sqrt();
        }
        s
    }

    /// Combines statistics of disjoint sample sets.
    pub fn merge(&self, other: &ResidualStats) -> ResidualStats {
        let n = self.n + other.n;
        let sq = self.rms * self.rms * self.n as f64 + other.rms * other.rms * other.n as f64;
        ResidualStats {
            n,
            max_abs: self.max_abs.max(other.max_abs),
            max_rel: self.max_rel.max(other.max_rel),
            rms: if n == 0 { 0.0 } else { (sq / n as f64).sqrt() },
        }
    }
}

/// Evaluates several residuals at each point (in parallel across points)
/// and returns the per-residual values in point order.
pub fn sample_residuals(
    residuals: &[Residual],
    table: &SymbolTable,
    frames: &[Vec<f64>],
) -> Result<Vec<Vec<ResidualValue>>, EvalError> {
    let compiled: Vec<CompiledResidual> = residuals.iter().map(|r| r.compile(table)).collect::<Result<_, _>>()?;
    let per_point: Vec<Vec<ResidualValue>> = frames
        .par_iter()
        .map(|f| compiled.iter().map(|c| c.eval(f)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    let mut out = vec![Vec::with_capacity(frames.len()); residuals.len()];
    for row in per_point {
        for (i, v) in row.into_iter().enumerate() {
            out[i].push(v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn relative_to_largest_term() {
        let r = Residual::from_terms([parse("u^2").unwrap(), parse("-u^2").unwrap(), parse("1e-3").unwrap()]);
        let v = r.evaluate(&Bindings::new().with("u", 10.0)).unwrap();
        assert!((v.value - 1e-3).abs() < 1e-12);
        assert_eq!(v.scale, 100.0);
        assert!((v.relative() - 1e-3 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn stats_aggregate() {
        let vals = [ResidualValue { value: 3.0, scale: 2.0 }, ResidualValue { value: -4.0, scale: 0.0 }];
        let s = ResidualStats::from_values(&vals);
        assert_eq!(s.n, 2);
        assert_eq!(s.max_abs, 4.0);
        assert_eq!(s.max_rel, 4.0);
        assert!((s.rms - (12.5f64).sqrt()).abs() < 1e-15);
        let m = s.merge(&ResidualStats::from_values(&vals[..1]));
        assert_eq!(m.n, 3);
    }

    #[test]
    fn compiled_matches_tree() {
        let r = Residual::difference(&parse("exp(t)*u").unwrap(), &parse("u*v").unwrap());
        let table = SymbolTable::new(&["u", "v", "t"]);
        let b = Bindings::new().with("u", 0.5).with("v", 2.0).with("t", 1.0);
        let c = r.compile(&table).unwrap();
        assert_eq!(c.eval(&table.frame(&b).unwrap()).unwrap(), r.evaluate(&b).unwrap());
    }
}
