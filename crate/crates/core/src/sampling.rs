//! Seeded sampling of evaluation points.
//!
//! All randomness in the crate comes from ChaCha8 seeded with
//! `seed_from_u64`, drawing doubles with `rand`'s standard uniform
//! conversion. The stream is specified by the algorithm, not the platform,
//! so a given seed produces the same points everywhere.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Bindings, EvalError, Expr};

pub const DEFAULT_SEED: u64 = 42;

pub type Rng64 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Closed interval per sampled symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    ranges: BTreeMap<String, (f64, f64)>,
}

impl Domain {
    pub fn new() -> Self {
        Domain { ranges: BTreeMap::new() }
    }

    pub fn with(mut self, name: &str, lo: f64, hi: f64) -> Self {
        self.ranges.insert(name.to_string(), (lo, hi));
        self
    }

    /// `[-2, 2]` for each spatial symbol and `[t_lo, t_hi]` for time.
    pub fn cube(spatial: &[&str], time: Option<&str>, t_lo: f64, t_hi: f64) -> Self {
        let mut d = Domain::new();
        for s in spatial {
            d = d.with(s, -2.0, 2.0);
        }
        if let Some(t) = time {
            d = d.with(t, t_lo, t_hi);
        }
        d
    }

    /// u, v, w in [-2, 2] and t in [0, 2].
    pub fn default_uvw() -> Self {
        Domain::cube(&["u", "v", "w"], Some("t"), 0.0, 2.0)
    }

    pub fn ranges(&self) -> impl Iterator<Item = (&str, (f64, f64))> {
        self.ranges.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.ranges.contains_key(name)
    }

    /// Draws one point; symbols are visited in name order.
    pub fn sample(&self, rng: &mut Rng64) -> Bindings {
        let mut b = Bindings::new();
        for (name, (lo, hi)) in &self.ranges {
            let r: f64 = rng.gen();
            b.set(name, lo + (hi - lo) * r);
        }
        b
    }

    /// Draws `n` points, each merged over `fixed`.
    pub fn sample_points(&self, fixed: &Bindings, n: usize, seed: u64) -> Vec<Bindings> {
        let mut rng = rng(seed);
        (0..n)
            .map(|_| {
                let mut b = fixed.clone();
                b.extend(&self.sample(&mut rng));
                b
            })
            .collect()
    }
}

impl Default for Domain {
    fn default() -> Self {
        Domain::default_uvw()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("need at least one sample point")]
    NoSamples,
    #[error("symbol '{0}' has neither a range nor a fixed value")]
    Unbound(String),
    #[error("resample budget exhausted after {attempts} attempts: {last}")]
    BudgetExhausted { attempts: usize, last: EvalError },
}

/// Outcome of a probabilistic equality test.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericComparison {
    pub equal: bool,
    /// Largest `|e1 - e2| / (1 + |e1|)` seen.
    pub max_deviation: f64,
    pub max_abs_deviation: f64,
    pub worst_point: Bindings,
    pub samples: usize,
}

/// Tests `e1 == e2` at `n` seeded points of `domain`.
///
/// Equal iff `|e1 - e2| <= tol * (1 + |e1|)` everywhere. Points where either
/// side fails to evaluate are redrawn, up to `10 * n` extra draws.
pub fn equal_numeric(
    e1: &Expr,
    e2: &Expr,
    domain: &Domain,
    fixed: &Bindings,
    n: usize,
    tol: f64,
    seed: u64,
) -> Result<NumericComparison, SampleError> {
    if n == 0 {
        return Err(SampleError::NoSamples);
    }
    for s in e1.free_symbols().union(&e2.free_symbols()) {
        if !domain.contains(s) && fixed.get(s).is_none() {
            return Err(SampleError::Unbound(s.clone()));
        }
    }
    let mut rng = rng(seed);
    let budget = 10 * n;
    let mut failures = 0usize;
    let mut accepted = 0usize;
    let mut out = NumericComparison {
        equal: true,
        max_deviation: 0.0,
        max_abs_deviation: 0.0,
        worst_point: Bindings::new(),
        samples: 0,
    };
    while accepted < n {
        let mut point = fixed.clone();
        point.extend(&domain.sample(&mut rng));
        let pair = e1.evaluate(&point).and_then(|a| e2.evaluate(&point).map(|b| (a, b)));
        let (a, b) = match pair {
            Ok(v) => v,
            Err(e) => {
                failures += 1;
                if failures > budget {
                    return Err(SampleError::BudgetExhausted { attempts: failures, last: e });
                }
                continue;
            }
        };
        accepted += 1;
        let abs = (a - b).abs();
        let rel = abs / (1.0 + a.abs());
        out.max_abs_deviation = out.max_abs_deviation.max(abs);
        if rel > out.max_deviation || out.worst_point.is_empty() {
            out.max_deviation = out.max_deviation.max(rel);
            out.worst_point = point;
        }
        if abs > tol * (1.0 + a.abs()) {
            out.equal = false;
        }
    }
    out.samples = accepted;
    Ok(out)
}

/// A polynomial of total degree at most `degree` in the three `vars`,
/// with integer coefficients in `-bound..=bound`; each monomial is present
/// with probability one half.
pub fn random_polynomial(rng: &mut Rng64, vars: [&str; 3], degree: u32, bound: i64) -> Expr {
    let mut terms = Vec::new();
    for a in 0..=degree {
        for b in 0..=degree - a {
            for c in 0..=degree - a - b {
                if !rng.gen_bool(0.5) {
                    continue;
                }
                let k = rng.gen_range(-bound..=bound);
                if k == 0 {
                    continue;
                }
                let mut f = vec![Expr::int(k)];
                for (v, e) in vars.iter().zip([a, b, c]) {
                    if e > 0 {
                        f.push(Expr::var(v).pow(e as i64));
                    }
                }
                terms.push(Expr::product(f));
            }
        }
    }
    Expr::sum(terms).simplify()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn same_seed_same_points() {
        let d = Domain::default_uvw();
        let a = d.sample_points(&Bindings::new(), 5, 7);
        let b = d.sample_points(&Bindings::new(), 5, 7);
        assert_eq!(a, b);
        for p in &a {
            let t = p.get("t").unwrap();
            assert!((0.0..=2.0).contains(&t));
            assert!(p.get("u").unwrap().abs() <= 2.0);
        }
        assert_ne!(a, d.sample_points(&Bindings::new(), 5, 8));
    }

    #[test]
    fn cancellation_is_equal_to_zero() {
        let c = equal_numeric(
            &parse("u*v - v*u").unwrap(),
            &parse("0").unwrap(),
            &Domain::default_uvw(),
            &Bindings::new(),
            50,
            1e-12,
            DEFAULT_SEED,
        )
        .unwrap();
        assert!(c.equal);
        assert_eq!(c.max_deviation, 0.0);
    }

    #[test]
    fn reflexive() {
        let e = parse("exp(-t)*sin(u) + v^3/w").unwrap();
        let c = equal_numeric(&e, &e, &Domain::default_uvw(), &Bindings::new(), 100, 0.0, 1).unwrap();
        assert!(c.equal);
    }

    #[test]
    fn detects_difference() {
        let c = equal_numeric(
            &parse("u^2").unwrap(),
            &parse("u^2 + 1e-3*v").unwrap(),
            &Domain::default_uvw(),
            &Bindings::new(),
            20,
            1e-9,
            3,
        )
        .unwrap();
        assert!(!c.equal);
        assert!(c.max_deviation > 1e-6);
    }

    #[test]
    fn resamples_domain_errors() {
        // ln(u) fails on half the cube; resampling still collects n points.
        let e = parse("ln(u)").unwrap();
        let c = equal_numeric(&e, &e, &Domain::default_uvw(), &Bindings::new(), 30, 1e-12, 5).unwrap();
        assert!(c.equal);
        assert_eq!(c.samples, 30);

        let bad = parse("ln(-u^2 - 1)").unwrap();
        let err = equal_numeric(&bad, &bad, &Domain::default_uvw(), &Bindings::new(), 3, 1e-12, 5).unwrap_err();
        assert!(matches!(err, SampleError::BudgetExhausted { attempts: 31, .. }));
    }

    #[test]
    fn random_polynomials_respect_degree() {
        let mut r = rng(9);
        for _ in 0..50 {
            let p = random_polynomial(&mut r, ["u", "v", "w"], 2, 3);
            for s in p.summands() {
                let d: i64 = ["u", "v", "w"]
                    .iter()
                    .map(|v| {
                        let mut k = 0;
                        let mut e = s.clone();
                        while e.contains_symbol(v) {
                            e = e.differentiate(v);
                            k += 1;
                        }
                        k
                    })
                    .sum();
                assert!(d <= 2, "{p}");
            }
        }
    }

    #[test]
    fn unbound_symbols_rejected() {
        let err = equal_numeric(
            &parse("alpha*u").unwrap(),
            &parse("u").unwrap(),
            &Domain::default_uvw(),
            &Bindings::new(),
            3,
            1e-12,
            5,
        )
        .unwrap_err();
        assert_eq!(err, SampleError::Unbound("alpha".into()));
    }
}
