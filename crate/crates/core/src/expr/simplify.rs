//! Terminating rewrite to a canonical sum-of-products form.
//!
//! The output obeys these invariants, which make the rewrite idempotent:
//!
//! * no `Neg` or `Quotient` nodes; `a/b` becomes `a*b^-1`;
//! * a product holds at most one constant, placed first and never equal to
//!   one, followed by distinct bases sorted by the derived ordering, each
//!   raised to a non-zero integer power;
//! * all `exp` factors of a product are merged into one;
//! * sums are flat, have distinct monomials with non-zero rational
//!   coefficients, and any constant term comes last;
//! * products are distributed over sums unless the expansion would exceed
//!   [`EXPANSION_LIMIT`] terms, in which case the sum stays a factor.

use std::collections::BTreeMap;

use num_traits::{One, Zero};

use super::{Expr, Node, Rational};

/// Largest number of terms a single distribution step may produce.
pub const EXPANSION_LIMIT: usize = 1024;

const MAX_EXPANDED_POWER: i64 = 16;

impl Expr {
    pub fn simplify(&self) -> Expr {
        simplify(self)
    }
}

fn simplify(e: &Expr) -> Expr {
    match e.node() {
        Node::Const(_) | Node::Var(_) | Node::Param(_) => e.clone(),
        Node::Neg(a) => mul_all(vec![Expr::int(-1), simplify(a)]),
        Node::Sum(xs) => add_all(xs.iter().map(simplify).collect()),
        Node::Product(xs) => mul_all(xs.iter().map(simplify).collect()),
        Node::Quotient(a, b) => mul_all(vec![simplify(a), pow(simplify(b), -1)]),
        Node::Pow(a, n) => pow(simplify(a), *n),
        Node::Exp(a) => exp(simplify(a)),
        Node::Ln(a) => {
            let a = simplify(a);
            match a.node() {
                Node::Const(q) if q.is_one() => Expr::zero(),
                Node::Exp(inner) => inner.clone(),
                _ => a.ln(),
            }
        }
        Node::Sin(a) => {
            let a = simplify(a);
            if a.is_zero() {
                Expr::zero()
            } else {
                a.sin()
            }
        }
        Node::Cos(a) => {
            let a = simplify(a);
            if a.is_zero() {
                Expr::one()
            } else {
                a.cos()
            }
        }
    }
}

fn exp(arg: Expr) -> Expr {
    if arg.is_zero() {
        Expr::one()
    } else {
        arg.exp()
    }
}

fn rational_pow(q: &Rational, n: i64) -> Rational {
    let magnitude = num_traits::pow(q.clone(), n.unsigned_abs() as usize);
    if n < 0 {
        magnitude.recip()
    } else {
        magnitude
    }
}

/// `base^n` for a canonical base.
fn pow(base: Expr, n: i64) -> Expr {
    if n == 0 {
        return Expr::one();
    }
    if n == 1 {
        return base;
    }
    match base.node() {
        Node::Const(q) => {
            if q.is_zero() && n < 0 {
                // Left unevaluated so that evaluation reports the division.
                Expr::new(Node::Pow(base.clone(), n))
            } else {
                Expr::constant(rational_pow(q, n))
            }
        }
        Node::Pow(b, m) => match m.checked_mul(n) {
            Some(k) => pow(b.clone(), k),
            None => Expr::new(Node::Pow(base.clone(), n)),
        },
        Node::Product(fs) => mul_all(fs.iter().map(|f| pow(f.clone(), n)).collect()),
        Node::Exp(a) => exp(mul_all(vec![Expr::int(n), a.clone()])),
        Node::Sum(_) if (2..=MAX_EXPANDED_POWER).contains(&n) => {
            mul_all(std::iter::repeat_n(base.clone(), n as usize).collect())
        }
        _ => Expr::new(Node::Pow(base.clone(), n)),
    }
}

fn split_power(f: &Expr) -> (Expr, i64) {
    match f.node() {
        Node::Pow(b, k) => (b.clone(), *k),
        _ => (f.clone(), 1),
    }
}

fn build_power(base: Expr, k: i64) -> Expr {
    if k == 1 {
        base
    } else {
        Expr::new(Node::Pow(base, k))
    }
}

/// Product of canonical factors.
fn mul_all(factors: Vec<Expr>) -> Expr {
    let mut flat = Vec::with_capacity(factors.len());
    for f in factors {
        match f.node() {
            Node::Product(inner) => flat.extend(inner.iter().cloned()),
            _ => flat.push(f),
        }
    }

    let mut coef = Rational::one();
    let mut exp_args = Vec::new();
    let mut powers: BTreeMap<Expr, i64> = BTreeMap::new();
    for f in flat {
        match f.node() {
            Node::Const(q) => coef *= q,
            Node::Exp(a) => exp_args.push(a.clone()),
            _ => {
                let (b, k) = split_power(&f);
                let slot = powers.entry(b).or_insert(0);
                *slot = slot.saturating_add(k);
            }
        }
    }
    if coef.is_zero() {
        return Expr::zero();
    }
    if !exp_args.is_empty() {
        let merged = exp(add_all(exp_args));
        match merged.node() {
            Node::Const(q) => coef *= q,
            _ => *powers.entry(merged).or_insert(0) += 1,
        }
    }
    powers.retain(|_, k| *k != 0);

    let expansion: usize = powers
        .iter()
        .filter(|(b, k)| **k > 0 && matches!(b.node(), Node::Sum(_)))
        .try_fold(1usize, |acc, (b, k)| {
            let Node::Sum(ts) = b.node() else { unreachable!() };
            (0..*k).try_fold(acc, |a, _| a.checked_mul(ts.len()))
        })
        .unwrap_or(usize::MAX);
    let has_sum = powers.iter().any(|(b, k)| *k > 0 && matches!(b.node(), Node::Sum(_)));
    if has_sum && expansion <= EXPANSION_LIMIT {
        return distribute(coef, powers);
    }

    let mut out = Vec::with_capacity(powers.len() + 1);
    if !coef.is_one() {
        out.push(Expr::constant(coef.clone()));
    }
    out.extend(powers.into_iter().map(|(b, k)| build_power(b, k)));
    if out.is_empty() {
        return Expr::constant(coef);
    }
    Expr::product(out)
}

fn distribute(coef: Rational, powers: BTreeMap<Expr, i64>) -> Expr {
    let mut plain = vec![Expr::constant(coef)];
    let mut sums = Vec::new();
    for (b, k) in powers {
        match b.node() {
            Node::Sum(ts) if k > 0 => {
                for _ in 0..k {
                    sums.push(ts.clone());
                }
            }
            _ => plain.push(build_power(b, k)),
        }
    }
    let mut partial = vec![mul_all(plain)];
    for terms in sums {
        let mut next = Vec::with_capacity(partial.len() * terms.len());
        for p in &partial {
            for t in &terms {
                next.push(mul_all(vec![p.clone(), t.clone()]));
            }
        }
        partial = next;
    }
    add_all(partial)
}

fn split_coefficient(term: &Expr) -> (Rational, Expr) {
    match term.node() {
        Node::Const(q) => (q.clone(), Expr::one()),
        Node::Product(fs) => match fs[0].node() {
            Node::Const(q) => (q.clone(), Expr::product(fs[1..].to_vec())),
            _ => (Rational::one(), term.clone()),
        },
        _ => (Rational::one(), term.clone()),
    }
}

/// Sum of canonical terms with like terms collected.
fn add_all(terms: Vec<Expr>) -> Expr {
    let mut collected: BTreeMap<Expr, Rational> = BTreeMap::new();
    let mut push = |t: &Expr| {
        let (c, key) = split_coefficient(t);
        *collected.entry(key).or_insert_with(Rational::zero) += c;
    };
    for t in &terms {
        match t.node() {
            Node::Sum(inner) => inner.iter().for_each(&mut push),
            _ => push(t),
        }
    }
    let one = Expr::one();
    let constant = collected.remove(&one).filter(|c| !c.is_zero());
    let mut out: Vec<Expr> = collected
        .into_iter()
        .filter(|(_, c)| !c.is_zero())
        .map(|(key, c)| {
            if c.is_one() {
                key
            } else {
                match key.node() {
                    Node::Product(fs) => {
                        let mut v = Vec::with_capacity(fs.len() + 1);
                        v.push(Expr::constant(c));
                        v.extend(fs.iter().cloned());
                        Expr::new(Node::Product(v))
                    }
                    _ => Expr::new(Node::Product(vec![Expr::constant(c), key])),
                }
            }
        })
        .collect();
    if let Some(c) = constant {
        out.push(Expr::constant(c));
    }
    match out.len() {
        0 => Expr::zero(),
        1 => out.pop().unwrap(),
        _ => Expr::new(Node::Sum(out)),
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn s(text: &str) -> Expr {
        parse(text).unwrap().simplify()
    }

    #[test]
    fn cancellation() {
        assert!(s("u*v - v*u").is_zero());
        assert!(s("u - u").is_zero());
        assert!(s("(u+v)^2 - u^2 - 2*u*v - v^2").is_zero());
    }

    #[test]
    fn exponent_merge() {
        assert_eq!(s("exp(-t)*exp(t)*w"), Expr::var("w"));
        assert_eq!(s("exp(t)^2"), s("exp(2*t)"));
    }

    #[test]
    fn transformed_divergence_vanishes() {
        // d/du(alpha*v) + d/dv(-u*w) + d/dw(u*v), spelled out.
        let div = parse("alpha*v").unwrap().differentiate("u")
            + parse("-u*w").unwrap().differentiate("v")
            + parse("u*v").unwrap().differentiate("w");
        assert!(div.simplify().is_zero());
    }

    #[test]
    fn identities() {
        assert_eq!(s("0*u + 1*v"), Expr::var("v"));
        assert_eq!(s("u^0"), Expr::one());
        assert_eq!(s("u/u"), Expr::one());
        assert_eq!(s("(u^2)^3"), s("u^6"));
        assert_eq!(s("ln(exp(u))"), Expr::var("u"));
        assert_eq!(s("ln(1) + sin(0) + cos(0)"), Expr::one());
        assert_eq!(s("0.5 + 0.25"), Expr::ratio(3, 4));
        assert_eq!(s("2^-2"), Expr::ratio(1, 4));
    }

    #[test]
    fn division_by_zero_is_kept() {
        let e = s("1/0");
        assert!(matches!(e.node(), Node::Pow(_, -1)));
    }

    #[test]
    fn idempotent_on_examples() {
        for text in
            ["exp(2*alpha*t)*(x^2-2*alpha*z)", "(u+v)^3*(u-w)/(v+w)", "sin(u+u)*cos(v)^2 - 3*ln(w)", "-(u*v) - -(v*u)"]
        {
            let once = s(text);
            assert_eq!(once.simplify(), once, "{text}");
        }
    }
}
