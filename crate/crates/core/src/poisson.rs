//! Poisson and Nambu brackets in three dimensions.
//!
//! A Poisson vector `J` defines `{F, H} = ∇F · (J × ∇H)`, so Hamilton's
//! equations read `ẋ = J × ∇H`. The Nambu bracket with last multiplier `M`
//! is `{F, H₁, H₂} = (1/M) ∇F · (∇H₁ × ∇H₂)`.
//!
//! Every identity comes in two forms: a simplified [`ScalarField`] or
//! [`VectorField3`], and a [`Residual`] of unsimplified summands for
//! numeric sampling.

use thiserror::Error;

use crate::expr::{Bindings, EvalError, Expr};
use crate::residual::{Residual, ResidualValue};
use crate::vecfield::{FrameMismatch, ScalarField, VectorField3};

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonVector {
    pub name: String,
    pub j: VectorField3,
}

impl PoissonVector {
    pub fn new(name: &str, j: VectorField3) -> Self {
        PoissonVector { name: name.to_string(), j }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NambuError {
    #[error("multiplier is identically zero")]
    ZeroMultiplier,
}

/// Jacobi's last multiplier `M`; the frame is that of `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct NambuStructure {
    multiplier: ScalarField,
    inverse: Expr,
}

impl NambuStructure {
    pub fn new(multiplier: ScalarField) -> Result<Self, NambuError> {
        let m = multiplier.expr.simplify();
        if m.is_zero() {
            return Err(NambuError::ZeroMultiplier);
        }
        let inverse = m.pow(-1).simplify();
        Ok(NambuStructure { multiplier: ScalarField::new(m, multiplier.frame), inverse })
    }

    pub fn unit(frame: crate::vecfield::Frame) -> Self {
        NambuStructure::new(ScalarField::new(Expr::one(), frame)).expect("1 is nonzero")
    }

    pub fn multiplier(&self) -> &ScalarField {
        &self.multiplier
    }

    /// `1/M`.
    pub fn inverse(&self) -> &Expr {
        &self.inverse
    }
}

/// Which argument of the Nambu bracket is held fixed to obtain a binary
/// Poisson bracket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NambuSlot {
    /// `{F, H} = {F, K, H}`, giving `J = ∇K / M`.
    Second,
    /// `{F, H} = {F, H, K}`, giving `J = -∇K / M`.
    Third,
}

/// The Poisson vector of the bracket obtained by freezing `fixed` in `slot`.
pub fn induced_poisson_vector(s: &NambuStructure, fixed: &ScalarField, slot: NambuSlot) -> VectorField3 {
    let g = fixed.gradient();
    match slot {
        NambuSlot::Second => g.scale(s.inverse()),
        NambuSlot::Third => g.scale(&-s.inverse()),
    }
}

fn triple_terms(a: &VectorField3, b: &VectorField3, c: &VectorField3) -> Vec<Expr> {
    let mut terms = Vec::with_capacity(6);
    for i in 0..3 {
        for t in b.cross_terms(c, i) {
            terms.push(&a.components[i] * &t);
        }
    }
    terms
}

fn check(a: &crate::vecfield::Frame, b: &crate::vecfield::Frame) -> Result<(), FrameMismatch> {
    if a == b {
        Ok(())
    } else {
        Err(FrameMismatch(Box::new(a.clone()), Box::new(b.clone())))
    }
}

/// Summands of `∇F · (J × ∇H)`.
pub fn bracket_terms(f: &ScalarField, h: &ScalarField, j: &VectorField3) -> Result<Vec<Expr>, FrameMismatch> {
    check(&f.frame, &h.frame)?;
    check(&f.frame, &j.frame)?;
    Ok(triple_terms(&f.gradient(), j, &h.gradient()))
}

/// `{F, H} = ∇F · (J × ∇H)`.
pub fn poisson_bracket(f: &ScalarField, h: &ScalarField, j: &PoissonVector) -> Result<ScalarField, FrameMismatch> {
    let terms = bracket_terms(f, h, &j.j)?;
    Ok(ScalarField::new(Expr::sum(terms).simplify(), f.frame.clone()))
}

/// `J × ∇H`.
pub fn hamiltonian_field(j: &PoissonVector, h: &ScalarField) -> Result<VectorField3, FrameMismatch> {
    j.j.cross(&h.gradient())
}

fn curl_dot_terms(a: &VectorField3, b: &VectorField3) -> Result<Vec<Expr>, FrameMismatch> {
    a.dot_terms(&b.curl())
}

/// `J · (∇ × J)` as summands.
pub fn jacobi_terms(j: &VectorField3) -> Residual {
    Residual::from_terms(curl_dot_terms(j, j).expect("same field"))
}

/// `J · (∇ × J)`, zero exactly when `J` is a Poisson vector.
pub fn jacobi_residual(j: &VectorField3) -> ScalarField {
    ScalarField::new(jacobi_terms(j).expr(), j.frame.clone())
}

/// Components of `J × ∇C` as summands.
pub fn casimir_terms(j: &VectorField3, c: &ScalarField) -> Result<[Residual; 3], FrameMismatch> {
    check(&j.frame, &c.frame)?;
    let g = c.gradient();
    Ok([0, 1, 2].map(|i| Residual::from_terms(j.cross_terms(&g, i))))
}

/// `J × ∇C`, zero exactly when `C` is a Casimir of `J`.
pub fn casimir_residual(j: &PoissonVector, c: &ScalarField) -> Result<VectorField3, FrameMismatch> {
    let r = casimir_terms(&j.j, c)?;
    Ok(VectorField3::new(r.map(|r| r.expr()), j.j.frame.clone()))
}

pub fn compatibility_terms(j1: &VectorField3, j2: &VectorField3) -> Result<Residual, FrameMismatch> {
    let mut terms = curl_dot_terms(j1, j2)?;
    terms.extend(curl_dot_terms(j2, j1)?);
    Ok(Residual::from_terms(terms))
}

/// `J₁ · (∇ × J₂) + J₂ · (∇ × J₁)`.
pub fn compatibility_residual(j1: &VectorField3, j2: &VectorField3) -> Result<ScalarField, FrameMismatch> {
    Ok(ScalarField::new(compatibility_terms(j1, j2)?.expr(), j1.frame.clone()))
}

/// `J₁ + c J₂`.
pub fn pencil(j1: &VectorField3, j2: &VectorField3, c: f64) -> Result<VectorField3, FrameMismatch> {
    j1.add(&j2.scale(&Expr::from_f64(c)))
}

/// Summands of `(1/M) ∇F · (∇H₁ × ∇H₂)`.
pub fn nambu_terms(
    f: &ScalarField,
    h1: &ScalarField,
    h2: &ScalarField,
    s: &NambuStructure,
) -> Result<Vec<Expr>, FrameMismatch> {
    for g in [h1, h2] {
        check(&f.frame, &g.frame)?;
    }
    check(&f.frame, &s.multiplier.frame)?;
    let inv = s.inverse();
    Ok(triple_terms(&f.gradient(), &h1.gradient(), &h2.gradient()).into_iter().map(|t| inv * &t).collect())
}

/// `{F, H₁, H₂} = (1/M) ∇F · (∇H₁ × ∇H₂)`.
pub fn nambu_bracket(
    f: &ScalarField,
    h1: &ScalarField,
    h2: &ScalarField,
    s: &NambuStructure,
) -> Result<ScalarField, FrameMismatch> {
    let terms = nambu_terms(f, h1, h2, s)?;
    Ok(ScalarField::new(Expr::sum(terms).simplify(), f.frame.clone()))
}

/// The field `ẋⁱ = {xⁱ, H₁, H₂}`, i.e. `(1/M) ∇H₁ × ∇H₂`.
pub fn nambu_field(h1: &ScalarField, h2: &ScalarField, s: &NambuStructure) -> Result<VectorField3, FrameMismatch> {
    Ok(h1.gradient().cross(&h2.gradient())?.scale(s.inverse()))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IdentityError {
    #[error(transparent)]
    Frame(#[from] FrameMismatch),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Both sides of the fundamental identity
/// `{F₁, F₂, {H₁, H₂, H₃}} = Σₖ {H₁, .., {F₁, F₂, Hₖ}, .., H₃}`
/// as a residual of the four bracket expressions.
pub fn fundamental_identity_terms(
    f1: &ScalarField,
    f2: &ScalarField,
    h: [&ScalarField; 3],
    s: &NambuStructure,
) -> Result<Residual, FrameMismatch> {
    let br = |a: &ScalarField, b: &ScalarField, c: &ScalarField| nambu_bracket(a, b, c, s);
    let lhs = br(f1, f2, &br(h[0], h[1], h[2])?)?;
    let inner: Vec<ScalarField> = h.iter().map(|hk| br(f1, f2, hk)).collect::<Result<_, _>>()?;
    let rhs = [br(&inner[0], h[1], h[2])?, br(h[0], &inner[1], h[2])?, br(h[0], h[1], &inner[2])?];
    let mut terms = vec![lhs.expr];
    terms.extend(rhs.into_iter().map(|r| -r.expr));
    Ok(Residual::from_terms(terms))
}

/// Value of the fundamental identity residual at `p`.
pub fn fundamental_identity_residual(
    f1: &ScalarField,
    f2: &ScalarField,
    h1: &ScalarField,
    h2: &ScalarField,
    h3: &ScalarField,
    s: &NambuStructure,
    p: &Bindings,
) -> Result<ResidualValue, IdentityError> {
    Ok(fundamental_identity_terms(f1, f2, [h1, h2, h3], s)?.evaluate(p)?)
}

/// `{F, G} + {G, F}`.
pub fn antisymmetry_terms(f: &ScalarField, g: &ScalarField, j: &VectorField3) -> Result<Residual, FrameMismatch> {
    let mut terms = bracket_terms(f, g, j)?;
    terms.extend(bracket_terms(g, f, j)?);
    Ok(Residual::from_terms(terms))
}

/// `{FG, H} - F{G, H} - G{F, H}`.
pub fn leibniz_terms(
    f: &ScalarField,
    g: &ScalarField,
    h: &ScalarField,
    j: &VectorField3,
) -> Result<Residual, FrameMismatch> {
    let fg = f.mul(g)?;
    let mut terms = bracket_terms(&fg, h, j)?;
    for (a, b) in [(f, g), (g, f)] {
        terms.extend(bracket_terms(b, h, j)?.into_iter().map(|t| -(&a.expr * &t)));
    }
    Ok(Residual::from_terms(terms))
}

/// Cyclic sum `{{F, G}, K} + {{G, K}, F} + {{K, F}, G}`.
pub fn bracket_jacobi_terms(
    f: &ScalarField,
    g: &ScalarField,
    k: &ScalarField,
    j: &VectorField3,
) -> Result<Residual, FrameMismatch> {
    let pv = PoissonVector::new("J", j.clone());
    let mut terms = Vec::new();
    for (a, b, c) in [(f, g, k), (g, k, f), (k, f, g)] {
        let inner = poisson_bracket(a, b, &pv)?;
        terms.extend(bracket_terms(&inner, c, j)?);
    }
    Ok(Residual::from_terms(terms))
}

/// `{F₁, F₂, FH} - {F₁, F₂, F} H - F {F₁, F₂, H}`.
pub fn nambu_leibniz_terms(
    f1: &ScalarField,
    f2: &ScalarField,
    f: &ScalarField,
    h: &ScalarField,
    s: &NambuStructure,
) -> Result<Residual, FrameMismatch> {
    let fh = f.mul(h)?;
    let mut terms = nambu_terms(f1, f2, &fh, s)?;
    for (a, b) in [(h, f), (f, h)] {
        terms.extend(nambu_terms(f1, f2, b, s)?.into_iter().map(|t| -(&a.expr * &t)));
    }
    Ok(Residual::from_terms(terms))
}

/// Summands of `∇ · (M X)`.
pub fn multiplier_terms(m: &ScalarField, x: &VectorField3) -> Result<Residual, FrameMismatch> {
    check(&m.frame, &x.frame)?;
    let terms = (0..3).map(|i| (&m.expr * &x.components[i]).differentiate(&x.frame.spatial[i]));
    Ok(Residual::from_terms(terms))
}

/// `∇ · (M X)`, zero exactly when `M` is a last multiplier of `X`.
pub fn multiplier_residual(m: &ScalarField, x: &VectorField3) -> Result<ScalarField, FrameMismatch> {
    Ok(ScalarField::new(multiplier_terms(m, x)?.expr(), x.frame.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::vecfield::{scalar, Frame};

    fn vf(s: &str) -> VectorField3 {
        let c: Vec<Expr> = s.split(';').map(|p| parse(p).unwrap()).collect();
        VectorField3::new([c[0].clone(), c[1].clone(), c[2].clone()], Frame::uvw())
    }

    fn sf(s: &str) -> ScalarField {
        scalar(parse(s).unwrap())
    }

    fn pv(s: &str) -> PoissonVector {
        PoissonVector::new("J", vf(s))
    }

    #[test]
    fn bracket_examples() {
        let b = poisson_bracket(&sf("u"), &sf("v"), &pv("0;0;1")).unwrap();
        assert_eq!(b.expr, Expr::int(-1));
        let h = sf("u^2*v - w");
        assert!(poisson_bracket(&h, &h, &pv("v;w*u;1")).unwrap().expr.is_zero());
        let h1 = sf("0.5*(v^2+w^2)");
        let h2 = sf("0.5*u^2 - w");
        let j1 = PoissonVector::new("J1", h1.gradient());
        assert!(poisson_bracket(&h1, &h2, &j1).unwrap().expr.is_zero());
    }

    #[test]
    fn hamiltonian_field_examples() {
        let x = hamiltonian_field(&pv("0;v;w"), &sf("u^2/2 - alpha*w")).unwrap();
        assert_eq!(x, vf("-alpha*v; u*w; -u*v").simplify());
        assert!(hamiltonian_field(&pv("u;v*w;exp(t)"), &sf("3*beta")).unwrap().is_zero());
    }

    #[test]
    fn jacobi_examples() {
        assert!(jacobi_residual(&sf("u^2*v + exp(w)").gradient()).expr.is_zero());
        assert_eq!(jacobi_residual(&vf("v;w;u")).expr, parse("-(u+v+w)").unwrap().simplify());
        let j1 = sf("0.5*(v^2+w^2)").gradient();
        let j2 = sf("0.5*u^2 - w").gradient().neg();
        assert!(jacobi_residual(&pencil(&j1, &j2, 3.7).unwrap()).expr.is_zero());
    }

    #[test]
    fn casimir_examples() {
        let h = sf("u*v + w^2");
        assert!(casimir_residual(&PoissonVector::new("J", h.gradient()), &h).unwrap().is_zero());
        assert!(casimir_residual(&pv("0;0;1"), &sf("w")).unwrap().is_zero());
        assert_eq!(casimir_residual(&pv("0;0;1"), &sf("u")).unwrap(), vf("0;1;0").simplify());
    }

    #[test]
    fn compatibility_examples() {
        let j1 = sf("u*v*w").gradient();
        let j2 = sf("exp(u)*v").gradient().neg();
        assert!(compatibility_residual(&j1, &j2).unwrap().expr.is_zero());
        let j = vf("v;w;u");
        assert_eq!(compatibility_residual(&j, &j).unwrap().expr, parse("-2*(u+v+w)").unwrap().simplify());
        assert!(compatibility_residual(&j, &VectorField3::zero(Frame::uvw())).unwrap().expr.is_zero());
    }

    #[test]
    fn pencil_examples() {
        let j1 = vf("v;w*u;1");
        assert_eq!(pencil(&j1, &vf("u;u;u"), 0.0).unwrap(), j1.simplify());
        assert!(pencil(&j1, &j1.neg(), 1.0).unwrap().is_zero());
    }

    #[test]
    fn nambu_examples() {
        let s = NambuStructure::unit(Frame::uvw());
        let h1 = sf("0.5*(v^2+w^2)");
        let h2 = sf("0.5*u^2 - alpha*w");
        let b = nambu_bracket(&sf("u"), &h1, &h2, &s).unwrap();
        let p = Bindings::new().with("u", 1.0).with("v", 2.0).with("w", 3.0).with("alpha", 1.0);
        assert_eq!(b.evaluate(&p).unwrap(), -2.0);
        assert!(nambu_bracket(&h1, &h1, &h2, &s).unwrap().expr.is_zero());
        assert!(nambu_bracket(&h2, &h1, &h2, &s).unwrap().expr.is_zero());
        let prod = h1.mul(&h2).unwrap();
        assert!(nambu_bracket(&prod, &h1, &h2, &s).unwrap().expr.is_zero());
    }

    #[test]
    fn fundamental_identity_trivial_cases() {
        let s = NambuStructure::unit(Frame::uvw());
        let (u, v, w) = (sf("u"), sf("v"), sf("w"));
        let p = Bindings::new().with("u", 0.3).with("v", -1.0).with("w", 2.0);
        let r = fundamental_identity_residual(&u, &v, &w, &u, &v, &s, &p).unwrap();
        assert_eq!(r.value, 0.0);
        let c = sf("3");
        let q = sf("u*v + w^2");
        let r = fundamental_identity_residual(&q, &c, &u, &q, &w, &s, &p).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn induced_vectors() {
        let s = NambuStructure::new(sf("exp(-t)")).unwrap();
        let k = sf("u*w");
        let f = sf("v^2");
        let h = sf("u + v*w");
        let second = induced_poisson_vector(&s, &k, NambuSlot::Second);
        let third = induced_poisson_vector(&s, &k, NambuSlot::Third);
        let a = poisson_bracket(&f, &h, &PoissonVector::new("J", second)).unwrap();
        let b = poisson_bracket(&f, &h, &PoissonVector::new("J", third)).unwrap();
        assert_eq!(a.expr, nambu_bracket(&f, &k, &h, &s).unwrap().expr);
        assert_eq!(b.expr, nambu_bracket(&f, &h, &k, &s).unwrap().expr);
    }

    #[test]
    fn multiplier_examples() {
        let one = sf("1");
        assert!(multiplier_residual(&one, &vf("alpha*v; -u*w; u*v")).unwrap().expr.is_zero());
        let lu = VectorField3::new(
            [parse("alpha*(y-x)").unwrap(), parse("-x*z + gamma*y").unwrap(), parse("x*y - beta*z").unwrap()],
            Frame::xyz(),
        );
        let m = ScalarField::new(Expr::one(), Frame::xyz());
        assert_eq!(multiplier_residual(&m, &lu).unwrap().expr, parse("-alpha + gamma - beta").unwrap().simplify());
        assert_eq!(NambuStructure::new(sf("u - u")).unwrap_err(), NambuError::ZeroMultiplier);
    }

    #[test]
    fn frames_must_agree() {
        let f = ScalarField::new(parse("x").unwrap(), Frame::xyz());
        assert!(poisson_bracket(&f, &sf("u"), &pv("0;0;1")).is_err());
    }
}
