use super::{Expr, Node};

impl Expr {
    /// Exact partial derivative with respect to the variable or parameter
    /// `symbol`, simplified.
    pub fn differentiate(&self, symbol: &str) -> Expr {
        derive(self, symbol).simplify()
    }
}

fn derive(e: &Expr, s: &str) -> Expr {
    if !e.contains_symbol(s) {
        return Expr::zero();
    }
    match e.node() {
        Node::Const(_) => Expr::zero(),
        Node::Var(name) | Node::Param(name) => {
            if name == s {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Node::Neg(a) => -derive(a, s),
        Node::Sum(xs) => Expr::sum(xs.iter().filter(|x| x.contains_symbol(s)).map(|x| derive(x, s)).collect()),
        Node::Product(xs) => {
            let mut terms = Vec::new();
            for (i, x) in xs.iter().enumerate() {
                if !x.contains_symbol(s) {
                    continue;
                }
                let mut factors = xs.clone();
                factors[i] = derive(x, s);
                terms.push(Expr::product(factors));
            }
            Expr::sum(terms)
        }
        Node::Quotient(a, b) => {
            // (a'b - ab') / b^2
            let num = derive(a, s) * b.clone() - a.clone() * derive(b, s);
            Expr::quotient(num, b.pow(2))
        }
        Node::Pow(b, n) => Expr::product(vec![Expr::int(*n), b.pow(n - 1), derive(b, s)]),
        Node::Exp(a) => e.clone() * derive(a, s),
        Node::Ln(a) => Expr::quotient(derive(a, s), a.clone()),
        Node::Sin(a) => a.cos() * derive(a, s),
        Node::Cos(a) => -(a.sin() * derive(a, s)),
    }
}
