//! System definitions: built-in catalog, parameter constraints, changes of
//! variables and the plain-text system file format.
//!
//! A system file is a list of `key = value` lines. `#` starts a comment.
//! The line `params` opens a section with one parameter per line:
//!
//! ```text
//! params
//!   alpha != 0 default 1
//!   beta = 2*alpha
//!   gamma default 2
//! ```
//!
//! Recognised keys are `name`, `description`, `frame`, `time`, `field`,
//! `multiplier`, `h1`, `h2`, `orientation` and the prefixed groups
//! `printed.<formula>` and `transform.{frame,original,forward,inverse,rescale}`.
//! Vector values separate their components with `;`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::expr::{parse, Bindings, EvalError, Expr, ParseError, VARIABLES};
use crate::sampling::{self, Domain};
use crate::vecfield::{Frame, ScalarField, VectorField3};

const BUILTIN_SOURCES: [&str; 7] = [
    include_str!("../systems/lu-original.sys"),
    include_str!("../systems/lu-transformed.sys"),
    include_str!("../systems/modified-lu.sys"),
    include_str!("../systems/t-system.sys"),
    include_str!("../systems/chen.sys"),
    include_str!("../systems/chen-variant.sys"),
    include_str!("../systems/qi.sys"),
];

/// Relative tolerance for "exact" parameter constraints given as floats.
const CONSTRAINT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    Equals(Expr),
    NotEquals(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub constraint: Option<Constraint>,
    pub default: Option<f64>,
}

impl ParamSpec {
    /// Human-readable constraint, e.g. `beta = 2*alpha`.
    pub fn describe(&self) -> Option<String> {
        match &self.constraint {
            Some(Constraint::Equals(e)) => Some(format!("{} = {}", self.name, e)),
            Some(Constraint::NotEquals(e)) => Some(format!("{} != {}", self.name, e)),
            None => None,
        }
    }
}

/// A formula as printed in the source literature, kept for comparison.
#[derive(Debug, Clone, PartialEq)]
pub enum Printed {
    Scalar(Expr),
    Vector([Expr; 3]),
}

/// Map from original coordinates to the catalog coordinates, with an
/// optional new time `t̄(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeOfVariables {
    /// The untransformed field in the original frame.
    pub original: VectorField3,
    /// Catalog coordinates in terms of the original ones and time.
    pub forward: [Expr; 3],
    /// Original coordinates in terms of catalog ones and time.
    pub inverse: [Expr; 3],
    pub rescale: Option<Expr>,
}

impl ChangeOfVariables {
    /// `dt̄/dt`, or 1 without rescaling.
    pub fn rescale_rate(&self, time: &str) -> Expr {
        match &self.rescale {
            Some(tbar) => tbar.differentiate(time),
            None => Expr::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemDef {
    pub name: String,
    pub description: String,
    pub frame: Frame,
    pub params: Vec<ParamSpec>,
    /// Parameter values, filled by [`SystemDef::instantiate`].
    pub values: BTreeMap<String, f64>,
    pub field: VectorField3,
    pub multiplier: ScalarField,
    pub h1: Option<ScalarField>,
    pub h2: Option<ScalarField>,
    /// `σ` with `X = σ (1/M) ∇H₁ × ∇H₂`; `None` until determined.
    pub orientation: Option<i8>,
    pub transform: Option<ChangeOfVariables>,
    pub printed: BTreeMap<String, Printed>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CatalogError {
    #[error("unknown system '{0}'")]
    UnknownSystem(String),
    #[error("system has no parameter '{0}'")]
    UnknownParameter(String),
    #[error("parameter '{0}' has no value and no default")]
    MissingParameter(String),
    #[error("{constraint} violated: {name} = {value}")]
    ConstraintViolation { name: String, constraint: String, value: f64 },
    #[error("could not evaluate constraint on '{0}': {1}")]
    Constraint(String, EvalError),
    #[error("system has no transform metadata")]
    MissingTransform,
    #[error("transform check failed to evaluate: {0}")]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {kind}")]
pub struct LoadError {
    pub line: usize,
    pub kind: LoadErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadErrorKind {
    #[error("expected 'key = value'")]
    Syntax,
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("duplicate key '{0}'")]
    Duplicate(String),
    #[error("missing key '{0}'")]
    Missing(&'static str),
    #[error("expression: {0}")]
    Parse(ParseError),
    #[error("bad number '{0}'")]
    Number(String),
    #[error("frame needs three distinct state variables, got '{0}'")]
    Frame(String),
    #[error("vector needs three components, got {0}")]
    Components(usize),
    #[error("symbol '{0}' is not in the frame")]
    ForeignVariable(String),
    #[error("undeclared parameter '{0}'")]
    UndeclaredParameter(String),
    #[error("multiplier is identically zero")]
    ZeroMultiplier,
    #[error("orientation must be +1, -1 or auto")]
    Orientation,
    #[error("transform needs frame, original, forward and inverse")]
    IncompleteTransform,
}

/// One-line summary for listings.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSummary {
    pub name: String,
    pub description: String,
    pub frame: Frame,
    pub constraints: Vec<String>,
    pub defaults: BTreeMap<String, f64>,
    pub hamiltonian: bool,
}

pub fn builtins() -> Vec<SystemDef> {
    BUILTIN_SOURCES.iter().map(|s| load_system(s).expect("built-in system file is valid")).collect()
}

pub fn builtin(name: &str) -> Result<SystemDef, CatalogError> {
    builtins().into_iter().find(|d| d.name == name).ok_or_else(|| CatalogError::UnknownSystem(name.to_string()))
}

pub fn list_systems() -> Vec<SystemSummary> {
    builtins().iter().map(SystemDef::summary).collect()
}

/// Looks up a built-in and binds its parameters.
pub fn instantiate(name: &str, params: &BTreeMap<String, f64>) -> Result<SystemDef, CatalogError> {
    builtin(name)?.instantiate(params)
}

impl SystemDef {
    pub fn summary(&self) -> SystemSummary {
        SystemSummary {
            name: self.name.clone(),
            description: self.description.clone(),
            frame: self.frame.clone(),
            constraints: self.params.iter().filter_map(ParamSpec::describe).collect(),
            defaults: self.params.iter().filter_map(|p| p.default.map(|d| (p.name.clone(), d))).collect(),
            hamiltonian: self.h1.is_some() && self.h2.is_some(),
        }
    }

    /// Binds parameters: supplied values first, then defaults for free
    /// parameters, then dependent ones from their constraints. Every
    /// constraint is checked at the end.
    pub fn instantiate(&self, supplied: &BTreeMap<String, f64>) -> Result<SystemDef, CatalogError> {
        for k in supplied.keys() {
            if !self.params.iter().any(|p| &p.name == k) {
                return Err(CatalogError::UnknownParameter(k.clone()));
            }
        }
        let mut values: BTreeMap<String, f64> = supplied.clone();
        for p in &self.params {
            if !values.contains_key(&p.name) && !matches!(p.constraint, Some(Constraint::Equals(_))) {
                if let Some(d) = p.default {
                    values.insert(p.name.clone(), d);
                }
            }
        }
        loop {
            let mut progressed = false;
            for p in &self.params {
                if values.contains_key(&p.name) {
                    continue;
                }
                if let Some(Constraint::Equals(e)) = &p.constraint {
                    let b = to_bindings(&values);
                    if e.free_symbols().iter().all(|s| b.get(s).is_some()) {
                        let v = e.evaluate(&b).map_err(|err| CatalogError::Constraint(p.name.clone(), err))?;
                        values.insert(p.name.clone(), v);
                        progressed = true;
                    }
                }
            }
            if !progressed {
                break;
            }
        }
        for p in &self.params {
            if !values.contains_key(&p.name) {
                return Err(CatalogError::MissingParameter(p.name.clone()));
            }
        }
        let b = to_bindings(&values);
        for p in &self.params {
            let value = values[&p.name];
            let (target, equal) = match &p.constraint {
                Some(Constraint::Equals(e)) => (e, true),
                Some(Constraint::NotEquals(e)) => (e, false),
                None => continue,
            };
            let want = target.evaluate(&b).map_err(|err| CatalogError::Constraint(p.name.clone(), err))?;
            let close = (value - want).abs() <= CONSTRAINT_TOL * want.abs().max(1.0);
            if close != equal {
                return Err(CatalogError::ConstraintViolation {
                    name: p.name.clone(),
                    constraint: p.describe().unwrap_or_default(),
                    value,
                });
            }
        }
        Ok(SystemDef { values, ..self.clone() })
    }

    pub fn is_instantiated(&self) -> bool {
        self.params.iter().all(|p| self.values.contains_key(&p.name))
    }

    pub fn bindings(&self) -> Bindings {
        to_bindings(&self.values)
    }

    /// `J₁ = ∇H₁ / M`.
    pub fn j1(&self) -> Option<VectorField3> {
        let inv = self.multiplier.expr.pow(-1);
        self.h1.as_ref().map(|h| h.gradient().scale(&inv))
    }

    /// `J₂ = -∇H₂ / M`.
    pub fn j2(&self) -> Option<VectorField3> {
        let inv = -self.multiplier.expr.pow(-1);
        self.h2.as_ref().map(|h| h.gradient().scale(&inv))
    }

    /// The default sampling box: state in `[-2, 2]`, time in `[0, 2]`.
    pub fn default_domain(&self) -> Domain {
        let s: Vec<&str> = self.frame.spatial.iter().map(String::as_str).collect();
        Domain::cube(&s, self.frame.time.as_deref(), 0.0, 2.0)
    }

    /// A copy with one sign of one summand of `field[component]` flipped.
    /// Returns `None` when the component has fewer than `term + 1` summands.
    pub fn with_flipped_sign(&self, component: usize, term: usize) -> Option<SystemDef> {
        let mut terms = self.field.components[component].simplify().summands();
        if term >= terms.len() {
            return None;
        }
        terms[term] = -&terms[term];
        let mut out = self.clone();
        out.field.components[component] = Expr::sum(terms).simplify();
        Some(out)
    }
}

fn to_bindings(values: &BTreeMap<String, f64>) -> Bindings {
    values.iter().map(|(k, v)| (k.as_str(), *v)).collect()
}

/// Per-component comparison of a transformed field against the chain rule.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformReport {
    pub samples: usize,
    /// Worst `|chain - X| / (1 + scale)` per component.
    pub component_deviation: [f64; 3],
    pub max_deviation: f64,
    pub worst_point: Bindings,
    /// Same comparison against the printed field, when one is stored.
    pub printed_deviation: Option<[f64; 3]>,
    /// Worst deviation of `forward(inverse(p))` from `p`.
    pub roundtrip_deviation: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Pushes the original field through the change of variables at `n`
/// seeded points and compares with the catalog field.
///
/// At each point `(u, v, w, t)` the original state is `inverse(u, v, w, t)`
/// and `duᵢ/dt = Σⱼ ∂uᵢ/∂xⱼ ẋⱼ + ∂uᵢ/∂t`, divided by `dt̄/dt` when the time
/// is rescaled. Deviations are relative to one plus the largest chain-rule
/// term.
pub fn transform_check(def: &SystemDef, n: usize, tol: f64, seed: u64) -> Result<TransformReport, CatalogError> {
    let tr = def.transform.as_ref().ok_or(CatalogError::MissingTransform)?;
    let time = def.frame.time.clone().unwrap_or_else(|| "t".into());
    let of = &tr.original.frame;
    let jac: Vec<[Expr; 3]> = tr.forward.iter().map(|f| [0, 1, 2].map(|j| f.differentiate(&of.spatial[j]))).collect();
    let dt: Vec<Expr> = tr.forward.iter().map(|f| f.differentiate(&time)).collect();
    let rate = tr.rescale_rate(&time);
    let printed = match def.printed.get("field") {
        Some(Printed::Vector(c)) => Some(c.clone()),
        _ => None,
    };

    let points = def.default_domain().sample_points(&def.bindings(), n, seed);
    let mut report = TransformReport {
        samples: n,
        component_deviation: [0.0; 3],
        max_deviation: 0.0,
        worst_point: Bindings::new(),
        printed_deviation: printed.as_ref().map(|_| [0.0; 3]),
        roundtrip_deviation: 0.0,
        tol,
        pass: true,
    };
    for p in points {
        let mut q = p.clone();
        for j in 0..3 {
            q.set(&of.spatial[j], tr.inverse[j].evaluate(&p)?);
        }
        let xdot = tr.original.evaluate(&q)?;
        let r = rate.evaluate(&q)?;
        let x = def.field.evaluate(&p)?;
        for i in 0..3 {
            let back = tr.forward[i].evaluate(&q)?;
            let state = p.get(&def.frame.spatial[i]).unwrap_or(0.0);
            report.roundtrip_deviation = report.roundtrip_deviation.max((back - state).abs() / (1.0 + state.abs()));

            let mut terms = [0.0; 4];
            for j in 0..3 {
                terms[j] = jac[i][j].evaluate(&q)? * xdot[j] / r;
            }
            terms[3] = dt[i].evaluate(&q)? / r;
            let chain: f64 = terms.iter().sum();
            let scale = terms.iter().fold(chain.abs(), |m, t| m.max(t.abs()));
            let dev = (chain - x[i]).abs() / (1.0 + scale.max(x[i].abs()));
            if dev > report.component_deviation[i] {
                report.component_deviation[i] = dev;
                if dev > report.max_deviation {
                    report.max_deviation = dev;
                    report.worst_point = p.clone();
                }
            }
            if let (Some(pc), Some(pd)) = (&printed, report.printed_deviation.as_mut()) {
                let y = pc[i].evaluate(&p)?;
                pd[i] = pd[i].max((chain - y).abs() / (1.0 + scale.max(y.abs())));
            }
        }
    }
    report.pass = report.max_deviation <= tol && report.roundtrip_deviation <= tol;
    Ok(report)
}

/// Seed used by [`transform_check`] when none is given.
pub const TRANSFORM_SEED: u64 = sampling::DEFAULT_SEED;

// ---- system file format ----

const TOP_KEYS: [&str; 9] = ["name", "description", "frame", "time", "field", "multiplier", "h1", "h2", "orientation"];
const TRANSFORM_KEYS: [&str; 5] = ["frame", "original", "forward", "inverse", "rescale"];

fn err(line: usize, kind: LoadErrorKind) -> LoadError {
    LoadError { line, kind }
}

fn expr_at(text: &str, line: usize) -> Result<Expr, LoadError> {
    parse(text.trim()).map_err(|e| err(line, LoadErrorKind::Parse(e)))
}

fn vector_at(text: &str, line: usize) -> Result<[Expr; 3], LoadError> {
    let parts: Vec<&str> = text.split(';').collect();
    if parts.len() != 3 {
        return Err(err(line, LoadErrorKind::Components(parts.len())));
    }
    Ok([expr_at(parts[0], line)?, expr_at(parts[1], line)?, expr_at(parts[2], line)?])
}

fn frame_at(text: &str, time: Option<&str>, line: usize) -> Result<Frame, LoadError> {
    let names: Vec<&str> = text.split_whitespace().collect();
    let bad = || err(line, LoadErrorKind::Frame(text.trim().to_string()));
    if names.len() != 3 {
        return Err(bad());
    }
    for (i, n) in names.iter().enumerate() {
        if !VARIABLES.contains(n) || Some(*n) == time || names[..i].contains(n) {
            return Err(bad());
        }
    }
    Ok(Frame::new([names[0], names[1], names[2]], time))
}

fn param_line(text: &str, line: usize) -> Result<ParamSpec, LoadError> {
    let (body, default) = match text.split_once(" default ") {
        Some((b, d)) => {
            let d = d.trim();
            (b.trim(), Some(d.parse::<f64>().map_err(|_| err(line, LoadErrorKind::Number(d.into())))?))
        }
        None => match text.strip_suffix(" default") {
            Some(_) => return Err(err(line, LoadErrorKind::Syntax)),
            None => (text.trim(), None),
        },
    };
    let (name, constraint) = if let Some((n, e)) = body.split_once("!=") {
        (n.trim(), Some(Constraint::NotEquals(expr_at(e, line)?)))
    } else if let Some((n, e)) = body.split_once('=') {
        (n.trim(), Some(Constraint::Equals(expr_at(e, line)?)))
    } else {
        (body, None)
    };
    let valid = !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && name.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && !VARIABLES.contains(&name);
    if !valid {
        return Err(err(line, LoadErrorKind::Syntax));
    }
    Ok(ParamSpec { name: name.to_string(), constraint, default })
}

fn is_top_key(key: &str) -> bool {
    TOP_KEYS.contains(&key) || key.starts_with("printed.") || key.starts_with("transform.")
}

/// Parses a system file. The result is not instantiated and its
/// orientation is whatever the file states (`auto` leaves it unset).
pub fn load_system(document: &str) -> Result<SystemDef, LoadError> {
    let mut entries: BTreeMap<String, (String, usize)> = BTreeMap::new();
    let mut params: Vec<(ParamSpec, usize)> = Vec::new();
    let mut in_params = false;
    for (idx, raw) in document.lines().enumerate() {
        let line = idx + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        if text == "params" {
            in_params = true;
            continue;
        }
        let key = text.split_once('=').map(|(k, _)| k.trim());
        match key {
            Some(k) if is_top_key(k) => {
                in_params = false;
                if let Some(sub) = k.strip_prefix("transform.") {
                    if !TRANSFORM_KEYS.contains(&sub) {
                        return Err(err(line, LoadErrorKind::UnknownKey(k.into())));
                    }
                }
                let value = text.split_once('=').map(|(_, v)| v.trim()).unwrap_or("");
                if entries.insert(k.to_string(), (value.to_string(), line)).is_some() {
                    return Err(err(line, LoadErrorKind::Duplicate(k.into())));
                }
            }
            _ if in_params => {
                let p = param_line(text, line)?;
                if params.iter().any(|(q, _)| q.name == p.name) {
                    return Err(err(line, LoadErrorKind::Duplicate(p.name)));
                }
                params.push((p, line));
            }
            Some(k) => return Err(err(line, LoadErrorKind::UnknownKey(k.into()))),
            None => return Err(err(line, LoadErrorKind::Syntax)),
        }
    }

    let last = document.lines().count();
    let get = |k: &str| entries.get(k).map(|(v, l)| (v.as_str(), *l));
    let (name, _) = get("name").ok_or_else(|| err(last, LoadErrorKind::Missing("name")))?;
    let description = get("description").map(|(d, _)| d.to_string()).unwrap_or_default();
    let time = match get("time") {
        Some(("none", _)) => None,
        Some((t, l)) => {
            if !VARIABLES.contains(&t) {
                return Err(err(l, LoadErrorKind::Frame(t.into())));
            }
            Some(t)
        }
        None => Some("t"),
    };
    let frame = match get("frame") {
        Some((f, l)) => frame_at(f, time, l)?,
        None => Frame::new(["u", "v", "w"], time),
    };
    let (field_text, field_line) = get("field").ok_or_else(|| err(last, LoadErrorKind::Missing("field")))?;
    let field = VectorField3::new(vector_at(field_text, field_line)?, frame.clone());
    let declared: Vec<&str> = params.iter().map(|(p, _)| p.name.as_str()).collect();

    let check_symbols = |e: &Expr, frame: &Frame, line: usize| -> Result<(), LoadError> {
        for s in e.free_symbols() {
            if VARIABLES.contains(&s.as_str()) {
                if !frame.is_spatial(&s) && frame.time.as_deref() != Some(s.as_str()) {
                    return Err(err(line, LoadErrorKind::ForeignVariable(s)));
                }
            } else if !declared.contains(&s.as_str()) {
                return Err(err(line, LoadErrorKind::UndeclaredParameter(s)));
            }
        }
        Ok(())
    };
    for c in &field.components {
        check_symbols(c, &frame, field_line)?;
    }
    for (p, line) in &params {
        if let Some(Constraint::Equals(e) | Constraint::NotEquals(e)) = &p.constraint {
            check_symbols(e, &Frame::new(["u", "v", "w"], None), *line)?;
            if e.free_symbols().iter().any(|s| VARIABLES.contains(&s.as_str())) {
                return Err(err(*line, LoadErrorKind::ForeignVariable(p.name.clone())));
            }
        }
    }

    let scalar = |key: &str| -> Result<Option<ScalarField>, LoadError> {
        match get(key) {
            Some((text, l)) => {
                let e = expr_at(text, l)?;
                check_symbols(&e, &frame, l)?;
                Ok(Some(ScalarField::new(e, frame.clone())))
            }
            None => Ok(None),
        }
    };
    let multiplier = scalar("multiplier")?.unwrap_or_else(|| ScalarField::new(Expr::one(), frame.clone()));
    if multiplier.expr.simplify().is_zero() {
        let l = get("multiplier").map(|(_, l)| l).unwrap_or(last);
        return Err(err(l, LoadErrorKind::ZeroMultiplier));
    }
    let h1 = scalar("h1")?;
    let h2 = scalar("h2")?;
    let orientation = match get("orientation") {
        None | Some(("auto", _)) => None,
        Some(("+1" | "1", _)) => Some(1),
        Some(("-1", _)) => Some(-1),
        Some((_, l)) => return Err(err(l, LoadErrorKind::Orientation)),
    };

    let mut printed = BTreeMap::new();
    for (k, (v, l)) in &entries {
        if let Some(formula) = k.strip_prefix("printed.") {
            let p = if v.contains(';') {
                let c = vector_at(v, *l)?;
                for e in &c {
                    check_symbols(e, &frame, *l)?;
                }
                Printed::Vector(c)
            } else {
                let e = expr_at(v, *l)?;
                check_symbols(&e, &frame, *l)?;
                Printed::Scalar(e)
            };
            printed.insert(formula.to_string(), p);
        }
    }

    let transform = if entries.keys().any(|k| k.starts_with("transform.")) {
        let need = |k: &str| get(k).ok_or_else(|| err(last, LoadErrorKind::IncompleteTransform));
        let (ft, fl) = need("transform.frame")?;
        let oframe = frame_at(ft, time, fl)?;
        let (ot, ol) = need("transform.original")?;
        let original = VectorField3::new(vector_at(ot, ol)?, oframe.clone());
        let (fw, fwl) = need("transform.forward")?;
        let forward = vector_at(fw, fwl)?;
        let (iv, ivl) = need("transform.inverse")?;
        let inverse = vector_at(iv, ivl)?;
        for c in &original.components {
            check_symbols(c, &oframe, ol)?;
        }
        for c in &forward {
            check_symbols(c, &oframe, fwl)?;
        }
        for c in &inverse {
            check_symbols(c, &frame, ivl)?;
        }
        let rescale = match get("transform.rescale") {
            Some((r, l)) => {
                let e = expr_at(r, l)?;
                check_symbols(&e, &Frame::new(["u", "v", "w"], time), l)?;
                if e.free_symbols().iter().any(|s| frame.is_spatial(s)) {
                    return Err(err(l, LoadErrorKind::ForeignVariable(r.into())));
                }
                Some(e)
            }
            None => None,
        };
        Some(ChangeOfVariables { original, forward, inverse, rescale })
    } else {
        None
    };

    Ok(SystemDef {
        name: name.to_string(),
        description,
        frame,
        params: params.into_iter().map(|(p, _)| p).collect(),
        values: BTreeMap::new(),
        field,
        multiplier,
        h1,
        h2,
        orientation,
        transform,
        printed,
    })
}

fn vector_text(c: &[Expr; 3]) -> String {
    format!("{}; {}; {}", c[0], c[1], c[2])
}

/// Writes a definition in the system file format. Parameter values of an
/// instantiated system are not saved.
pub fn save_system(def: &SystemDef) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "name = {}", def.name);
    if !def.description.is_empty() {
        let _ = writeln!(s, "description = {}", def.description);
    }
    let _ = writeln!(s, "frame = {}", def.frame.spatial.join(" "));
    let _ = writeln!(s, "time = {}", def.frame.time.as_deref().unwrap_or("none"));
    if !def.params.is_empty() {
        s.push_str("params\n");
        for p in &def.params {
            s.push_str("  ");
            s.push_str(&p.name);
            match &p.constraint {
                Some(Constraint::Equals(e)) => {
                    let _ = write!(s, " = {e}");
                }
                Some(Constraint::NotEquals(e)) => {
                    let _ = write!(s, " != {e}");
                }
                None => {}
            }
            if let Some(d) = p.default {
                let _ = write!(s, " default {d}");
            }
            s.push('\n');
        }
    }
    let _ = writeln!(s, "field = {}", vector_text(&def.field.components));
    let _ = writeln!(s, "multiplier = {}", def.multiplier.expr);
    for (k, h) in [("h1", &def.h1), ("h2", &def.h2)] {
        if let Some(h) = h {
            let _ = writeln!(s, "{k} = {}", h.expr);
        }
    }
    let o = match def.orientation {
        Some(1) => "+1",
        Some(-1) => "-1",
        _ => "auto",
    };
    let _ = writeln!(s, "orientation = {o}");
    for (k, p) in &def.printed {
        match p {
            Printed::Scalar(e) => {
                let _ = writeln!(s, "printed.{k} = {e}");
            }
            Printed::Vector(c) => {
                let _ = writeln!(s, "printed.{k} = {}", vector_text(c));
            }
        }
    }
    if let Some(tr) = &def.transform {
        let _ = writeln!(s, "transform.frame = {}", tr.original.frame.spatial.join(" "));
        let _ = writeln!(s, "transform.original = {}", vector_text(&tr.original.components));
        let _ = writeln!(s, "transform.forward = {}", vector_text(&tr.forward));
        let _ = writeln!(s, "transform.inverse = {}", vector_text(&tr.inverse));
        if let Some(r) = &tr.rescale {
            let _ = writeln!(s, "transform.rescale = {r}");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn seven_builtins() {
        let names: Vec<String> = list_systems().into_iter().map(|s| s.name).collect();
        assert_eq!(names, ["lu-original", "lu-transformed", "modified-lu", "t-system", "chen", "chen-variant", "qi"]);
        let qi = list_systems().into_iter().find(|s| s.name == "qi").unwrap();
        assert!(qi.constraints.contains(&"alpha = 1".to_string()));
        assert!(qi.constraints.contains(&"beta = 1".to_string()));
        let lu = list_systems().into_iter().find(|s| s.name == "lu-transformed").unwrap();
        assert!(lu.constraints.contains(&"beta = 2*alpha".to_string()));
        assert!(lu.constraints.contains(&"gamma = -2*alpha".to_string()));
    }

    #[test]
    fn instantiate_fills_dependents() {
        let d = instantiate("lu-transformed", &params(&[("alpha", 1.0)])).unwrap();
        assert_eq!(d.values, params(&[("alpha", 1.0), ("beta", 2.0), ("gamma", -2.0)]));
        let x = d.field.evaluate(&d.bindings().with("u", 1.0).with("v", 2.0).with("w", 3.0)).unwrap();
        assert_eq!(x, [2.0, -3.0, 2.0]);
        assert_eq!(d.orientation, Some(-1));

        let q = instantiate("qi", &params(&[("gamma", 2.0)])).unwrap();
        let h1 = q.h1.as_ref().unwrap().expr.substitute("gamma", &Expr::int(2));
        assert_eq!(h1, parse("2*u^2 - v^2 - 3*w^2").unwrap().simplify());
    }

    #[test]
    fn constraint_violations() {
        let e = instantiate("qi", &params(&[("alpha", 2.0)])).unwrap_err();
        assert!(matches!(e, CatalogError::ConstraintViolation { ref name, .. } if name == "alpha"));
        let e = instantiate("t-system", &params(&[("alpha", 0.0)])).unwrap_err();
        assert!(matches!(e, CatalogError::ConstraintViolation { ref name, .. } if name == "alpha"));
        let e = instantiate("lu-transformed", &params(&[("alpha", 1.0), ("beta", 3.0)])).unwrap_err();
        assert!(matches!(e, CatalogError::ConstraintViolation { .. }));
        assert!(instantiate("lu-transformed", &params(&[("alpha", 1.5), ("beta", 3.0)])).is_ok());
        assert_eq!(
            instantiate("qi", &params(&[("delta", 1.0)])).unwrap_err(),
            CatalogError::UnknownParameter("delta".into())
        );
        assert_eq!(instantiate("lorenz", &BTreeMap::new()).unwrap_err(), CatalogError::UnknownSystem("lorenz".into()));
    }

    #[test]
    fn save_load_round_trip() {
        for d in builtins() {
            let text = save_system(&d);
            assert_eq!(load_system(&text).unwrap(), d, "{}", d.name);
        }
    }

    #[test]
    fn load_errors_and_defaults() {
        let e = load_system("name = a\nframe = u v\nfield = u; v; 0").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(matches!(e.kind, LoadErrorKind::Frame(_)));
        let e = load_system("name = a\nfield = u; v").unwrap_err();
        assert!(matches!(e.kind, LoadErrorKind::Components(2)));
        let e = load_system("name = a\nfield = x; v; w").unwrap_err();
        assert!(matches!(e.kind, LoadErrorKind::ForeignVariable(ref s) if s == "x"));
        let e = load_system("name = a\nfield = k*u; v; w").unwrap_err();
        assert!(matches!(e.kind, LoadErrorKind::UndeclaredParameter(_)));
        let e = load_system("name = a\nfield = u; v; w\nmultiplier = u - u").unwrap_err();
        assert_eq!(e.kind, LoadErrorKind::ZeroMultiplier);
        let e = load_system("name = a\nfield = u; v; w\ncolour = red").unwrap_err();
        assert!(matches!(e.kind, LoadErrorKind::UnknownKey(_)));

        let d = load_system("name = a\nparams\n  k default 2\nfield = k*u; v; w").unwrap();
        assert_eq!(d.multiplier.expr, Expr::one());
        assert_eq!(d.orientation, None);
        assert_eq!(d.frame, Frame::uvw());
        assert_eq!(d.instantiate(&BTreeMap::new()).unwrap().values["k"], 2.0);
    }

    #[test]
    fn missing_parameter() {
        let d = load_system("name = a\nparams\n  k\nfield = k*u; v; w").unwrap();
        assert_eq!(d.instantiate(&BTreeMap::new()).unwrap_err(), CatalogError::MissingParameter("k".into()));
    }

    #[test]
    fn h1_is_autonomous() {
        for d in builtins() {
            if let Some(h) = &d.h1 {
                assert!(!h.expr.contains_symbol("t"), "{}", d.name);
            }
        }
    }

    #[test]
    fn flipping_a_sign() {
        let d = builtin("lu-transformed").unwrap();
        let f = d.with_flipped_sign(2, 0).unwrap();
        assert_eq!(f.field.components[2], parse("-u*v").unwrap().simplify());
        assert!(d.with_flipped_sign(2, 1).is_none());
    }

    #[test]
    fn transform_metadata_required() {
        let d = instantiate("lu-original", &BTreeMap::new()).unwrap();
        assert_eq!(transform_check(&d, 10, 1e-12, 1).unwrap_err(), CatalogError::MissingTransform);
    }
}
