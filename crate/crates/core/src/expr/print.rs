//! Text rendering that round-trips through the parser.
//!
//! Output is faithful to the tree: parsing a printed expression yields the
//! same structure. Negative or non-terminating constants only arise from
//! simplification; they are printed in parentheses, e.g. `(-2)` or `(1/3)`.

use std::fmt::{self, Write};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, Zero};

use super::{Expr, Node, Rational};

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        write_expr(self, &mut out);
        f.write_str(&out)
    }
}

/// Exact decimal digits of a non-negative rational with a terminating
/// expansion, or `None`.
fn terminating_decimal(q: &Rational) -> Option<String> {
    debug_assert!(!q.is_negative());
    let mut den = q.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let (mut twos, mut fives) = (0usize, 0usize);
    while den.is_even() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if den != BigInt::from(1) {
        return None;
    }
    let k = twos.max(fives);
    let scaled = q.numer() * num_traits::pow(BigInt::from(10), k) / q.denom();
    let mut digits = scaled.to_string();
    if k == 0 {
        return Some(digits);
    }
    if digits.len() <= k {
        digits = format!("{}{}", "0".repeat(k + 1 - digits.len()), digits);
    }
    let split = digits.len() - k;
    let (int_part, frac_part) = digits.split_at(split);
    let frac_part = frac_part.trim_end_matches('0');
    Some(if frac_part.is_empty() { int_part.to_string() } else { format!("{int_part}.{frac_part}") })
}

fn write_const(q: &Rational, out: &mut String) {
    if !q.is_negative() {
        if let Some(d) = terminating_decimal(q) {
            out.push_str(&d);
            return;
        }
    }
    let abs = q.abs();
    let body = match terminating_decimal(&abs) {
        Some(d) => d,
        None => format!("{}/{}", abs.numer(), abs.denom()),
    };
    let sign = if q.is_negative() { "-" } else { "" };
    let _ = write!(out, "({sign}{body})");
}

fn is_atomic(e: &Expr) -> bool {
    match e.node() {
        Node::Var(_) | Node::Param(_) | Node::Exp(_) | Node::Ln(_) | Node::Sin(_) | Node::Cos(_) => true,
        Node::Const(q) => !q.is_negative(),
        _ => false,
    }
}

fn write_paren(e: &Expr, out: &mut String) {
    out.push('(');
    write_expr(e, out);
    out.push(')');
}

fn write_sum_term(e: &Expr, out: &mut String) {
    if matches!(e.node(), Node::Sum(_)) {
        write_paren(e, out);
    } else {
        write_expr(e, out);
    }
}

/// Splits a negative leading coefficient off a simplified term so sums
/// render as `a - 2*b` rather than `a + (-2)*b`.
fn negated_form(e: &Expr) -> Option<Expr> {
    match e.node() {
        Node::Const(q) if q.is_negative() => Some(Expr::constant(-q)),
        Node::Product(fs) => match fs.first().map(|f| f.node()) {
            Some(Node::Const(q)) if q.is_negative() => {
                let c = -q;
                let mut rest: Vec<Expr> = fs[1..].to_vec();
                if c != Rational::from_integer(BigInt::from(1)) {
                    rest.insert(0, Expr::constant(c));
                }
                Some(Expr::product(rest))
            }
            _ => None,
        },
        _ => None,
    }
}

fn write_expr(e: &Expr, out: &mut String) {
    match e.node() {
        Node::Const(q) => write_const(q, out),
        Node::Var(s) | Node::Param(s) => out.push_str(s),
        Node::Neg(a) => {
            out.push('-');
            match a.node() {
                Node::Sum(_) | Node::Product(_) | Node::Quotient(_, _) => write_paren(a, out),
                _ => write_expr(a, out),
            }
        }
        Node::Sum(ts) => {
            for (i, t) in ts.iter().enumerate() {
                if i == 0 {
                    write_sum_term(t, out);
                    continue;
                }
                if let Node::Neg(a) = t.node() {
                    out.push_str(" - ");
                    write_sum_term(a, out);
                } else if let Some(pos) = negated_form(t) {
                    out.push_str(" - ");
                    write_sum_term(&pos, out);
                } else {
                    out.push_str(" + ");
                    write_sum_term(t, out);
                }
            }
        }
        Node::Product(fs) => {
            let mut start = 0;
            if let Some(Node::Const(q)) = fs.first().map(|f| f.node()) {
                if *q == Rational::from_integer(BigInt::from(-1)) && fs.len() > 1 {
                    // `-x*y` parses as (-x)*y, which simplifies back to this.
                    out.push('-');
                    start = 1;
                } else if q.is_negative() {
                    out.push('-');
                    write_const(&-q, out);
                    out.push('*');
                    start = 1;
                }
            }
            for (i, f) in fs.iter().enumerate().skip(start) {
                if i > start {
                    out.push('*');
                }
                match f.node() {
                    Node::Sum(_) | Node::Product(_) => write_paren(f, out),
                    Node::Quotient(_, _) if i > start => write_paren(f, out),
                    _ => write_expr(f, out),
                }
            }
        }
        Node::Quotient(a, b) => {
            match a.node() {
                Node::Sum(_) => write_paren(a, out),
                _ => write_expr(a, out),
            }
            out.push('/');
            match b.node() {
                Node::Sum(_) | Node::Product(_) | Node::Quotient(_, _) => write_paren(b, out),
                _ => write_expr(b, out),
            }
        }
        Node::Pow(b, n) => {
            if is_atomic(b) {
                write_expr(b, out);
            } else {
                write_paren(b, out);
            }
            let _ = write!(out, "^{n}");
        }
        Node::Exp(a) => write_call("exp", a, out),
        Node::Ln(a) => write_call("ln", a, out),
        Node::Sin(a) => write_call("sin", a, out),
        Node::Cos(a) => write_call("cos", a, out),
    }
}

fn write_call(name: &str, arg: &Expr, out: &mut String) {
    out.push_str(name);
    write_paren(arg, out);
}
