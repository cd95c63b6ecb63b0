//! Structure verification by residual sampling.
//!
//! Every identity is assembled symbolically as a [`Residual`] of summands
//! and evaluated at seeded points of a sampling box. A check passes when its
//! largest relative residual `|Σ tᵢ| / (1 + max |tᵢ|)` is within tolerance.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::catalog::{Printed, SystemDef};
use crate::expr::{Bindings, EvalError, Expr, Program, SymbolTable};
use crate::poisson::{
    casimir_terms, compatibility_terms, fundamental_identity_terms, jacobi_terms, multiplier_terms, nambu_terms,
    pencil, NambuStructure,
};
use crate::residual::{CompiledResidual, Residual, ResidualStats, ResidualValue};
use crate::sampling::{equal_numeric, random_polynomial, rng, Domain, SampleError, DEFAULT_SEED};
use crate::vecfield::{FrameMismatch, ScalarField, VectorField3};

/// Pencil coefficients `c` for which `J₁ + c J₂` is checked.
pub const PENCIL_COEFFICIENTS: [f64; 6] = [-10.0, -1.0, -0.3, 0.3, 1.0, 10.0];

/// Points with `|M|` below this are redrawn.
pub const MULTIPLIER_FLOOR: f64 = 1e-9;

/// Tolerance for printed-versus-derived comparisons.
pub const PRINTED_TOL: f64 = 1e-9;

/// Random quintuples drawn by [`verify_fundamental_identity`].
pub const IDENTITY_INSTANCES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    /// Sampling box; `None` uses the system's default domain.
    pub domain: Option<Domain>,
    pub n: usize,
    pub seed: u64,
    /// Tolerance for identities that hold symbolically.
    pub tol: f64,
    /// Tolerance for the nested fundamental identity.
    pub identity_tol: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { domain: None, n: 1000, seed: DEFAULT_SEED, tol: 1e-12, identity_tol: 1e-8 }
    }
}

impl SampleConfig {
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = Some(domain);
        self
    }

    fn domain_for(&self, def: &SystemDef) -> Domain {
        self.domain.clone().unwrap_or_else(|| def.default_domain())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("system '{0}' has unset parameters")]
    NotInstantiated(String),
    #[error(transparent)]
    Frame(#[from] FrameMismatch),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub n: usize,
    pub max_abs: f64,
    pub max_rel: f64,
    pub rms: f64,
    pub tol: f64,
    pub pass: bool,
}

impl CheckRecord {
    fn new(name: &str, n: usize, stats: ResidualStats, tol: f64) -> Self {
        CheckRecord {
            name: name.to_string(),
            n,
            max_abs: stats.max_abs,
            max_rel: stats.max_rel,
            rms: stats.rms,
            tol,
            pass: stats.max_rel <= tol,
        }
    }
}

/// A printed formula compared against its derived counterpart.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrepancy {
    pub formula: String,
    #[serde(rename = "match")]
    pub matches: bool,
    pub max_dev: f64,
    /// Worst point, in frame order (spatial symbols, then time).
    pub at: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub schema: u32,
    pub system: String,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
    pub domain: BTreeMap<String, [f64; 2]>,
    pub orientation: Option<i8>,
    pub checks: Vec<CheckRecord>,
    pub discrepancies: Vec<Discrepancy>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    /// True when every check ran passes. Discrepancies are informational.
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Pretty JSON with keys in sorted order, plus a `timestamp` when given.
    pub fn to_json(&self, timestamp: Option<&str>) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let (Some(ts), Some(map)) = (timestamp, v.as_object_mut()) {
            map.insert("timestamp".into(), ts.into());
        }
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}

/// Which sign makes each component of `X - σ (1/M) ∇H₁ × ∇H₂` vanish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentFit {
    pub plus: bool,
    pub minus: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    pub sigma: i8,
    /// `R(+1)` and `R(-1)`: the worst relative deviation under each sign.
    pub r_plus: f64,
    pub r_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrientationError {
    #[error("orientation needs both Hamiltonians")]
    MissingHamiltonians,
    #[error("no single sign fits (R(+1) = {r_plus:.3e}, R(-1) = {r_minus:.3e}): {}", Diagnosis(components))]
    NoFit { r_plus: f64, r_minus: f64, components: [ComponentFit; 3] },
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

struct Diagnosis<'a>(&'a [ComponentFit; 3]);

impl fmt::Display for Diagnosis<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            let need = match (c.plus, c.minus) {
                (true, true) => "either sign",
                (true, false) => "+1",
                (false, true) => "-1",
                (false, false) => "neither sign",
            };
            write!(f, "component {} needs {need}", i + 1)?;
        }
        Ok(())
    }
}

/// Evaluates `residuals` at `n` accepted points. A candidate point is
/// rejected when `|guard| < MULTIPLIER_FLOOR` or any term fails to evaluate
/// to a finite number; at most `10 n` rejections are tolerated. Candidates
/// are drawn sequentially and evaluated in parallel, so the accepted set
/// depends only on the seed.
fn sample(
    residuals: &[Residual],
    domain: &Domain,
    fixed: &Bindings,
    guard: &Expr,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<ResidualValue>>, VerifyError> {
    if n == 0 {
        return Err(VerifyError::NoSamples);
    }
    let mut names: Vec<String> = domain.ranges().map(|(k, _)| k.to_string()).collect();
    names.extend(fixed.iter().map(|(k, _)| k.to_string()));
    names.sort();
    names.dedup();
    let table = SymbolTable::new(&names);
    let compiled: Vec<CompiledResidual> = residuals.iter().map(|r| r.compile(&table)).collect::<Result<_, _>>()?;
    let guard = Program::compile(guard, &table)?;

    let mut r = rng(seed);
    let mut rows: Vec<Vec<ResidualValue>> = Vec::with_capacity(n);
    let mut rejected = 0usize;
    let mut last = EvalError::NonFinite;
    while rows.len() < n {
        let frames: Vec<Vec<f64>> = (rows.len()..n)
            .map(|_| {
                let mut p = fixed.clone();
                p.extend(&domain.sample(&mut r));
                table.frame(&p)
            })
            .collect::<Result<_, _>>()?;
        let batch: Vec<Result<Vec<ResidualValue>, EvalError>> = frames
            .par_iter()
            .map(|f| {
                let m = guard.eval(f)?;
                if !(m.abs() >= MULTIPLIER_FLOOR) {
                    return Err(EvalError::NonFinite);
                }
                compiled
                    .iter()
                    .map(|c| {
                        let v = c.eval(f)?;
                        if v.value.is_finite() && v.scale.is_finite() {
                            Ok(v)
                        } else {
                            Err(EvalError::NonFinite)
                        }
                    })
                    .collect()
            })
            .collect();
        for row in batch {
            match row {
                Ok(v) => rows.push(v),
                Err(e) => {
                    rejected += 1;
                    last = e;
                }
            }
        }
        if rejected > 10 * n {
            return Err(SampleError::BudgetExhausted { attempts: rejected, last }.into());
        }
    }
    let mut out = vec![Vec::with_capacity(n); residuals.len()];
    for row in rows {
        for (i, v) in row.into_iter().enumerate() {
            out[i].push(v);
        }
    }
    Ok(out)
}

fn hamiltonians(def: &SystemDef) -> Option<(&ScalarField, &ScalarField)> {
    Some((def.h1.as_ref()?, def.h2.as_ref()?))
}

/// Components of `X - σ (1/M) ∇H₁ × ∇H₂`.
fn nambu_form_residuals(def: &SystemDef, h1: &ScalarField, h2: &ScalarField, sigma: i8) -> Vec<Residual> {
    let inv = def.multiplier.expr.pow(-1);
    let (g1, g2) = (h1.gradient(), h2.gradient());
    let s = Expr::int(-sigma as i64);
    (0..3)
        .map(|i| {
            let mut terms = vec![def.field.components[i].clone()];
            terms.extend(g1.cross_terms(&g2, i).iter().map(|t| &s * &(&inv * t)));
            Residual::from_terms(terms)
        })
        .collect()
}

/// Finds `σ ∈ {+1, -1}` with `X = σ (1/M) ∇H₁ × ∇H₂` on the sampling box.
pub fn determine_orientation(def: &SystemDef, s: &SampleConfig) -> Result<Orientation, OrientationError> {
    let (h1, h2) = hamiltonians(def).ok_or(OrientationError::MissingHamiltonians)?;
    if !def.is_instantiated() {
        return Err(VerifyError::NotInstantiated(def.name.clone()).into());
    }
    let mut residuals = nambu_form_residuals(def, h1, h2, 1);
    residuals.extend(nambu_form_residuals(def, h1, h2, -1));
    let values = sample(&residuals, &s.domain_for(def), &def.bindings(), &def.multiplier.expr, s.n, s.seed)?;
    let rel: Vec<f64> = values.iter().map(|v| ResidualStats::from_values(v).max_rel).collect();
    let r_plus = rel[..3].iter().copied().fold(0.0, f64::max);
    let r_minus = rel[3..].iter().copied().fold(0.0, f64::max);
    let (sigma, best) = if r_minus <= r_plus { (-1, r_minus) } else { (1, r_plus) };
    if best <= s.tol {
        return Ok(Orientation { sigma, r_plus, r_minus });
    }
    let components = [0, 1, 2].map(|i| ComponentFit { plus: rel[i] <= s.tol, minus: rel[i + 3] <= s.tol });
    Err(OrientationError::NoFit { r_plus, r_minus, components })
}

struct Group {
    name: &'static str,
    residuals: Vec<Residual>,
}

fn structure_groups(def: &SystemDef, sigma: i8, notes: &mut Vec<String>) -> Result<Vec<Group>, FrameMismatch> {
    let x = &def.field;
    let js: Vec<(VectorField3, &ScalarField)> = [(def.j1(), def.h1.as_ref()), (def.j2(), def.h2.as_ref())]
        .into_iter()
        .filter_map(|(j, h)| Some((j?, h?)))
        .collect();
    let both = hamiltonians(def);
    let mut groups = Vec::new();
    let mut push = |name: &'static str, residuals: Vec<Residual>, groups: &mut Vec<Group>| {
        if residuals.is_empty() {
            notes.push(format!("{name}: skipped, system has no Hamiltonians"));
        } else {
            groups.push(Group { name, residuals });
        }
    };

    push("jacobi", js.iter().map(|(j, _)| jacobi_terms(j)).collect(), &mut groups);

    let pair = if js.len() == 2 { Some((&js[0].0, &js[1].0)) } else { None };
    let compat = match pair {
        Some((j1, j2)) => vec![compatibility_terms(j1, j2)?],
        None => vec![],
    };
    push("compatibility", compat, &mut groups);

    let mut pencils = Vec::new();
    if let Some((j1, j2)) = pair {
        for c in PENCIL_COEFFICIENTS {
            pencils.push(jacobi_terms(&pencil(j1, j2, c)?));
        }
    }
    push("pencil", pencils, &mut groups);

    let mut casimir = Vec::new();
    for (j, h) in &js {
        casimir.extend(casimir_terms(j, h)?);
    }
    push("casimir", casimir, &mut groups);

    groups.push(Group { name: "multiplier", residuals: vec![multiplier_terms(&def.multiplier, x)?] });

    let mut biham = Vec::new();
    let mut nambu = Vec::new();
    if let (Some((h1, h2)), Some((j1, j2))) = (both, pair) {
        let s = Expr::int(-sigma as i64);
        for (j, h) in [(j1, h2), (j2, h1)] {
            let g = h.gradient();
            for i in 0..3 {
                let mut terms = vec![x.components[i].clone()];
                terms.extend(j.cross_terms(&g, i).iter().map(|t| &s * t));
                biham.push(Residual::from_terms(terms));
            }
        }
        let structure = NambuStructure::new(def.multiplier.clone()).expect("multiplier is nonzero");
        for i in 0..3 {
            let coord = ScalarField::new(x.frame.coordinate(i), x.frame.clone());
            let mut terms = vec![x.components[i].clone()];
            terms.extend(nambu_terms(&coord, h1, h2, &structure)?.iter().map(|t| &s * t));
            nambu.push(Residual::from_terms(terms));
        }
    }
    push("bi-hamiltonian", biham, &mut groups);
    push("nambu", nambu, &mut groups);

    let mut orth = Vec::new();
    for h in [&def.h1, &def.h2].into_iter().flatten() {
        orth.push(Residual::from_terms(h.gradient().dot_terms(x)?));
    }
    push("orthogonality", orth, &mut groups);
    Ok(groups)
}

/// Runs the structure checks (Jacobi, compatibility, pencil, Casimir,
/// multiplier, bi-Hamiltonian, Nambu form, orthogonality) and compares the
/// printed formulas.
pub fn verify_structure(def: &SystemDef, s: &SampleConfig) -> Result<VerificationReport, VerifyError> {
    if !def.is_instantiated() {
        return Err(VerifyError::NotInstantiated(def.name.clone()));
    }
    let domain = s.domain_for(def);
    let mut notes = Vec::new();

    let (orientation, sigma) = match determine_orientation(def, s) {
        Ok(o) => {
            if let Some(d) = def.orientation {
                if d != o.sigma {
                    notes.push(format!("orientation: declared {d:+} but sampling gives {:+}", o.sigma));
                }
            }
            (Some(o.sigma), o.sigma)
        }
        Err(OrientationError::MissingHamiltonians) => {
            notes.push("orientation: undetermined without both Hamiltonians".into());
            (None, def.orientation.unwrap_or(-1))
        }
        Err(e @ OrientationError::NoFit { r_plus, r_minus, .. }) => {
            notes.push(format!("orientation: {e}"));
            (None, if r_plus < r_minus { 1 } else { -1 })
        }
        Err(OrientationError::Verify(e)) => return Err(e),
    };

    let groups = structure_groups(def, sigma, &mut notes)?;
    let all: Vec<Residual> = groups.iter().flat_map(|g| g.residuals.iter().cloned()).collect();
    let values = sample(&all, &domain, &def.bindings(), &def.multiplier.expr, s.n, s.seed)?;
    let mut checks = Vec::with_capacity(groups.len());
    let mut k = 0;
    for g in &groups {
        let vals: Vec<ResidualValue> = values[k..k + g.residuals.len()].iter().flatten().copied().collect();
        k += g.residuals.len();
        checks.push(CheckRecord::new(g.name, s.n, ResidualStats::from_values(&vals), s.tol));
    }

    Ok(VerificationReport {
        schema: 1,
        system: def.name.clone(),
        params: def.values.clone(),
        seed: s.seed,
        domain: domain.ranges().map(|(k, (lo, hi))| (k.to_string(), [lo, hi])).collect(),
        orientation,
        checks,
        discrepancies: compare_printed(def, s)?,
        notes,
    })
}

/// Compares each printed formula with its derived counterpart, and a
/// printed Poisson vector with the gradient of the printed Hamiltonian.
pub fn compare_printed(def: &SystemDef, s: &SampleConfig) -> Result<Vec<Discrepancy>, VerifyError> {
    let domain = s.domain_for(def);
    let fixed = def.bindings();
    let order: Vec<String> = def.frame.symbols().into_iter().map(String::from).collect();
    let compare = |formula: String, derived: &Expr, printed: &Expr| -> Result<Discrepancy, VerifyError> {
        let c = equal_numeric(derived, printed, &domain, &fixed, s.n, PRINTED_TOL, s.seed)?;
        let at = order.iter().map(|k| c.worst_point.get(k).unwrap_or(f64::NAN)).collect();
        Ok(Discrepancy { formula, matches: c.equal, max_dev: c.max_deviation, at })
    };

    let vector = |key: &str| -> Option<[Expr; 3]> {
        match key {
            "field" => Some(def.field.components.clone()),
            "j1" => def.j1().map(|j| j.simplify().components),
            "j2" => def.j2().map(|j| j.simplify().components),
            _ => None,
        }
    };
    let scalar = |key: &str| -> Option<Expr> {
        match key {
            "h1" => def.h1.as_ref().map(|h| h.expr.clone()),
            "h2" => def.h2.as_ref().map(|h| h.expr.clone()),
            _ => None,
        }
    };

    let mut out = Vec::new();
    for (key, printed) in &def.printed {
        match printed {
            Printed::Scalar(p) => {
                if let Some(d) = scalar(key) {
                    out.push(compare(key.clone(), &d, p)?);
                }
            }
            Printed::Vector(p) => {
                if let Some(d) = vector(key) {
                    for i in 0..3 {
                        out.push(compare(format!("{key}[{}]", i + 1), &d[i], &p[i])?);
                    }
                }
            }
        }
    }

    let inv = def.multiplier.expr.pow(-1);
    for (j, h, sign) in [("j1", "h1", 1), ("j2", "h2", -1)] {
        let (Some(Printed::Vector(pj)), Some(Printed::Scalar(ph))) = (def.printed.get(j), def.printed.get(h)) else {
            continue;
        };
        let g = ScalarField::new(ph.clone(), def.frame.clone()).gradient().scale(&(&Expr::int(sign) * &inv));
        for i in 0..3 {
            let d = g.components[i].simplify();
            out.push(compare(format!("{j}[{}] against gradient of printed {h}", i + 1), &d, &pj[i])?);
        }
    }
    Ok(out)
}

/// Samples the fundamental identity on random degree-2 polynomial
/// quintuples, `s.n` points each.
pub fn verify_fundamental_identity(st: &NambuStructure, s: &SampleConfig) -> Result<CheckRecord, VerifyError> {
    let frame = &st.multiplier().frame;
    let vars = [frame.spatial[0].as_str(), frame.spatial[1].as_str(), frame.spatial[2].as_str()];
    let domain = s.domain.clone().unwrap_or_else(|| Domain::cube(&vars, frame.time.as_deref(), 0.0, 2.0));
    let mut r = rng(s.seed);
    let mut stats = ResidualStats::default();
    for k in 0..IDENTITY_INSTANCES {
        let p: Vec<ScalarField> =
            (0..5).map(|_| ScalarField::new(random_polynomial(&mut r, vars, 2, 3), frame.clone())).collect();
        let res = fundamental_identity_terms(&p[0], &p[1], [&p[2], &p[3], &p[4]], st)?;
        let values = sample(&[res], &domain, &Bindings::new(), &st.multiplier().expr, s.n, s.seed + 1 + k as u64)?;
        stats = stats.merge(&ResidualStats::from_values(&values[0]));
    }
    Ok(CheckRecord::new("fundamental-identity", stats.n, stats, s.identity_tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::instantiate;

    fn defaults(name: &str) -> SystemDef {
        instantiate(name, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn lu_orientation_is_negative() {
        let o = determine_orientation(&defaults("lu-transformed"), &SampleConfig::default().with_n(100)).unwrap();
        assert_eq!(o.sigma, -1);
        assert!(o.r_minus < 1e-12);
        assert!(o.r_plus > 0.1);
    }

    #[test]
    fn printed_lu_field_has_no_orientation() {
        let mut def = defaults("lu-transformed");
        let Some(Printed::Vector(p)) = def.printed.get("field").cloned() else { panic!() };
        def.field = VectorField3::new(p, def.frame.clone());
        match determine_orientation(&def, &SampleConfig::default().with_n(100)) {
            Err(OrientationError::NoFit { components, .. }) => {
                assert!(!components[0].plus && components[0].minus);
                assert!(!components[1].plus && components[1].minus);
                assert!(components[2].plus && !components[2].minus);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn guard_rejects_small_multiplier() {
        let d = Domain::new().with("u", -1.0, 1.0);
        let r = Residual::single(crate::expr::parse("1/u").unwrap());
        let v = sample(&[r], &d, &Bindings::new(), &crate::expr::parse("u").unwrap(), 50, 1).unwrap();
        assert_eq!(v[0].len(), 50);
        let zero = sample(&[], &d, &Bindings::new(), &Expr::zero(), 5, 1);
        assert!(matches!(zero, Err(VerifyError::Sample(SampleError::BudgetExhausted { .. }))));
    }

    #[test]
    fn report_json_has_schema_and_optional_timestamp() {
        let rep = verify_structure(&defaults("qi"), &SampleConfig::default().with_n(20)).unwrap();
        let a = rep.to_json(None);
        assert!(a.contains("\"schema\": 1"));
        assert!(!a.contains("timestamp"));
        assert!(rep.to_json(Some("now")).contains("\"timestamp\": \"now\""));
    }
}
