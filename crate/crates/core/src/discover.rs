//! First integrals and last multipliers by linear coefficient matching.
//!
//! A candidate `F = Σ cⱼ bⱼ` over an ansatz basis satisfies a linear
//! functional equation `L F = 0`. Evaluating `L bⱼ` at sample points gives a
//! matrix whose numerical nullspace, found by SVD, spans the solutions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Bindings, EvalError, Expr, Program, Rational, SymbolTable};
use crate::sampling::{rng, Domain, DEFAULT_SEED};
use crate::vecfield::{Frame, FrameMismatch, ScalarField, VectorField3};

/// Singular values below `NULL_THRESHOLD * σ_max` count as zero.
pub const NULL_THRESHOLD: f64 = 1e-10;

/// Singular values within this factor above the threshold make the rank
/// ambiguous.
pub const AMBIGUITY_BAND: f64 = 100.0;

/// Relative validation tolerance for accepted candidates.
pub const VALIDATION_TOL: f64 = 1e-8;

/// Cosine above which a candidate matches a known function.
pub const MATCH_COSINE: f64 = 1.0 - 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasisElement {
    /// Exponents of the three spatial coordinates.
    pub exponents: [u32; 3],
    /// Multiple `k` of the rate in the weight `exp(k rate t)`.
    pub weight: i64,
    #[serde(serialize_with = "as_string")]
    pub expr: Expr,
}

fn as_string<S: serde::Serializer>(e: &Expr, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(e)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnsatzBasis {
    pub degree: u32,
    /// Inclusive range of weight multiples, `None` for no time weights.
    pub weights: Option<(i64, i64)>,
    #[serde(serialize_with = "as_string")]
    pub rate: Expr,
    #[serde(skip)]
    pub frame: Frame,
    pub elements: Vec<BasisElement>,
}

impl AnsatzBasis {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// `Σ cⱼ bⱼ`.
    pub fn combine(&self, coefficients: &[f64]) -> Expr {
        let terms = self
            .elements
            .iter()
            .zip(coefficients)
            .filter(|(_, c)| **c != 0.0)
            .map(|(b, c)| &Expr::from_f64(*c) * &b.expr);
        Expr::sum(terms.collect()).simplify()
    }

    /// Numerical rank of the sampled Gram matrix; equals `len()` when the
    /// elements are independent on the domain.
    pub fn sampled_rank(&self, domain: &Domain, fixed: &Bindings, seed: u64) -> Result<usize, DiscoverError> {
        let exprs: Vec<Expr> = self.elements.iter().map(|b| b.expr.clone()).collect();
        let n = (3 * self.len()).max(200);
        let (a, _) = sample_matrix(&exprs, domain, fixed, n, seed)?;
        let svd = a.svd(false, false);
        let smax = svd.singular_values.max();
        Ok(svd.singular_values.iter().filter(|s| **s > NULL_THRESHOLD * smax).count())
    }
}

/// Monomials `u^a v^b w^c` with `a + b + c <= degree`, graded and in
/// lexicographic order within each degree, each times `exp(k rate t)` for
/// `k` in `weights`.
pub fn build_basis(degree: u32, frame: &Frame, weights: Option<(i64, i64)>, rate: Expr) -> AnsatzBasis {
    let mut monomials = Vec::new();
    for d in 0..=degree {
        for a in (0..=d).rev() {
            for b in (0..=d - a).rev() {
                monomials.push([a, b, d - a - b]);
            }
        }
    }
    let ks: Vec<i64> = match weights {
        Some((lo, hi)) => (lo..=hi).collect(),
        None => vec![0],
    };
    let time = frame.time.clone().unwrap_or_else(|| "t".into());
    let mut elements: Vec<BasisElement> = Vec::new();
    for &k in &ks {
        for e in &monomials {
            let mut f: Vec<Expr> = (0..3).filter(|&i| e[i] > 0).map(|i| frame.coordinate(i).pow(e[i] as i64)).collect();
            if k != 0 {
                f.push((&(&Expr::int(k) * &rate) * &Expr::symbol(&time)).exp());
            }
            let expr = Expr::product(f).simplify();
            if !elements.iter().any(|b| b.expr == expr) {
                elements.push(BasisElement { exponents: *e, weight: k, expr });
            }
        }
    }
    let frame = if weights.is_some() && frame.time.is_none() {
        Frame::new([&frame.spatial[0], &frame.spatial[1], &frame.spatial[2]], Some("t"))
    } else {
        frame.clone()
    };
    AnsatzBasis { degree, weights, rate, frame, elements }
}

/// The linear equation a candidate must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Functional {
    /// `∂F/∂t + ∇F · X = 0`.
    FirstIntegral,
    /// `∇F · X = 0` with time as a parameter; finds time-dependent
    /// Hamiltonians whose level sets contain the flow.
    Orthogonal,
    /// `∇ · (F X) = 0`.
    Multiplier,
}

impl Functional {
    fn apply(self, b: &Expr, x: &VectorField3) -> Expr {
        let f = &x.frame;
        let e = match self {
            Functional::FirstIntegral => {
                let mut terms: Vec<Expr> = (0..3).map(|i| &b.differentiate(&f.spatial[i]) * &x.components[i]).collect();
                if let Some(t) = &f.time {
                    terms.push(b.differentiate(t));
                }
                Expr::sum(terms)
            }
            Functional::Orthogonal => {
                Expr::sum((0..3).map(|i| &b.differentiate(&f.spatial[i]) * &x.components[i]).collect())
            }
            Functional::Multiplier => {
                Expr::sum((0..3).map(|i| (b * &x.components[i]).differentiate(&f.spatial[i])).collect())
            }
        };
        e.simplify()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoverConfig {
    /// Assembly points; `None` gives `max(3 |B|, 200)`.
    pub n: Option<usize>,
    pub validation: usize,
    pub seed: u64,
    /// Sampling box; `None` gives `[-2, 2]` per coordinate, `t` in `[0, 1]`.
    pub domain: Option<Domain>,
    /// Parameter values substituted into the field and the rate.
    pub params: Bindings,
}

impl Default for DiscoverConfig {
    fn default() -> Self {
        DiscoverConfig { n: None, validation: 1000, seed: DEFAULT_SEED, domain: None, params: Bindings::new() }
    }
}

impl DiscoverConfig {
    pub fn with_params(mut self, params: Bindings) -> Self {
        self.params = params;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = Some(n);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiscoverError {
    #[error("empty ansatz basis")]
    EmptyBasis,
    #[error("{n} sample points cannot determine {m} coefficients; need at least {m}")]
    TooFewPoints { n: usize, m: usize },
    #[error(
        "rank is ambiguous: singular value {value:.3e} lies just above the threshold {threshold:.3e}; \
         retry with more sample points"
    )]
    Ambiguous { value: f64, threshold: f64 },
    #[error("evaluation failed at every draw of the budget: {0}")]
    Sampling(EvalError),
    #[error(transparent)]
    Frame(#[from] FrameMismatch),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    /// Unit-norm coefficients in basis order, first nonzero positive.
    pub coefficients: Vec<f64>,
    /// The candidate with coefficients rescaled so the first nonzero one is 1
    /// and snapped to nearby small rationals.
    pub normalized: String,
    /// Worst `|L F| / (1 + max |cⱼ L bⱼ|)` at the validation points.
    pub residual: f64,
    pub valid: bool,
    /// Smallest `|F|` seen at the validation points.
    pub min_abs_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Annotation {
    pub known: String,
    /// Best-matching candidate, if its cosine exceeds [`MATCH_COSINE`].
    pub candidate: Option<usize>,
    /// Largest `|cos|` between the known coefficients and a candidate.
    pub cosine: f64,
    /// Cosine between the known coefficients and their projection onto the
    /// nullspace.
    pub span_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscoveryResult {
    pub functional: Functional,
    pub basis: AnsatzBasis,
    pub samples: usize,
    pub singular_values: Vec<f64>,
    pub dimension: usize,
    pub candidates: Vec<Candidate>,
    pub annotations: Vec<Annotation>,
}

impl DiscoveryResult {
    pub fn all_valid(&self) -> bool {
        self.candidates.iter().all(|c| c.valid)
    }

    /// Principal angles from this nullspace to `other`, in radians,
    /// ascending, one per candidate of `other`. Computed from sines, which
    /// stay accurate for nearly equal subspaces.
    pub fn subspace_angles(&self, other: &DiscoveryResult) -> Vec<f64> {
        let a = self.coefficient_matrix();
        let b = other.coefficient_matrix();
        if b.ncols() == 0 {
            return Vec::new();
        }
        let residual = &b - &a * (a.transpose() * &b);
        let mut s: Vec<f64> =
            residual.svd(false, false).singular_values.iter().map(|x| x.clamp(0.0, 1.0).asin()).collect();
        s.sort_by(f64::total_cmp);
        s
    }

    /// Columns are the candidate coefficient vectors.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        let m = self.basis.len();
        DMatrix::from_fn(m, self.candidates.len(), |i, j| self.candidates[j].coefficients[i])
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("result serializes");
        if let Some(map) = v.as_object_mut() {
            map.insert("schema".into(), 1.into());
        }
        serde_json::to_string_pretty(&v).expect("result serializes")
    }
}

fn default_domain(frame: &Frame) -> Domain {
    let s: Vec<&str> = frame.spatial.iter().map(String::as_str).collect();
    Domain::cube(&s, frame.time.as_deref(), 0.0, 1.0)
}

/// Rows `[e₁(p), .., e_m(p)]` at `n` seeded points where every expression
/// evaluates to a finite value, with the points' frames.
fn sample_matrix(
    exprs: &[Expr],
    domain: &Domain,
    fixed: &Bindings,
    n: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<Vec<f64>>), DiscoverError> {
    let mut names: Vec<String> = domain.ranges().map(|(k, _)| k.to_string()).collect();
    names.extend(fixed.iter().map(|(k, _)| k.to_string()));
    names.sort();
    names.dedup();
    let table = SymbolTable::new(&names);
    let programs: Vec<Program> = exprs.iter().map(|e| Program::compile(e, &table)).collect::<Result<_, _>>()?;

    let mut r = rng(seed);
    let mut frames = Vec::with_capacity(n);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut rejected = 0usize;
    while rows.len() < n {
        let batch: Vec<Vec<f64>> = (rows.len()..n)
            .map(|_| {
                let mut p = fixed.clone();
                p.extend(&domain.sample(&mut r));
                table.frame(&p)
            })
            .collect::<Result<_, _>>()?;
        let evaluated: Vec<Result<Vec<f64>, EvalError>> = batch
            .par_iter()
            .map(|f| {
                programs
                    .iter()
                    .map(|p| p.eval(f).and_then(|x| if x.is_finite() { Ok(x) } else { Err(EvalError::NonFinite) }))
                    .collect()
            })
            .collect();
        for (f, row) in batch.into_iter().zip(evaluated) {
            match row {
                Ok(v) => {
                    rows.push(v);
                    frames.push(f);
                }
                Err(e) => {
                    rejected += 1;
                    if rejected > 10 * n {
                        return Err(DiscoverError::Sampling(e));
                    }
                }
            }
        }
    }
    let m = exprs.len();
    Ok((DMatrix::from_fn(n, m, |i, j| rows[i][j]), frames))
}

/// Row-reduces the rows of `v` with partial pivoting, then
/// orthonormalizes them in order and fixes signs so the first nonzero
/// entry is positive. The result depends only on the row space.
fn canonical_basis(v: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let mut a = v.clone();
    let (k, m) = a.shape();
    let mut row = 0;
    for col in 0..m {
        if row == k {
            break;
        }
        let (piv, val) =
            (row..k).map(|r| (r, a[(r, col)].abs())).fold((row, -1.0), |b, x| if x.1 > b.1 { x } else { b });
        if val < 1e-9 {
            continue;
        }
        a.swap_rows(row, piv);
        let p = a[(row, col)];
        for j in 0..m {
            a[(row, j)] /= p;
        }
        for r in 0..k {
            if r != row {
                let f = a[(r, col)];
                if f != 0.0 {
                    for j in 0..m {
                        a[(r, j)] -= f * a[(row, j)];
                    }
                }
            }
        }
        row += 1;
    }
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(k);
    for r in 0..row {
        let mut x: DVector<f64> = a.row(r).transpose();
        for q in &out {
            x -= q * q.dot(&x);
        }
        x.apply(|c| {
            if c.abs() < 1e-14 {
                *c = 0.0
            }
        });
        let norm = x.norm();
        if norm < 1e-12 {
            continue;
        }
        x /= norm;
        if let Some(first) = x.iter().find(|c| c.abs() > 1e-12) {
            if *first < 0.0 {
                x = -x;
            }
        }
        out.push(x);
    }
    out
}

/// Nearest `p/q` with `q <= 12` when within `1e-9` relative, else the
/// decimal value.
fn snap(c: f64) -> Expr {
    for q in 1..=12i64 {
        let p = (c * q as f64).round();
        if (p / q as f64 - c).abs() <= 1e-9 * c.abs().max(1.0) {
            return Expr::constant(Rational::new((p as i64).into(), q.into()));
        }
    }
    Expr::from_f64(c)
}

fn normalized_form(basis: &AnsatzBasis, c: &DVector<f64>) -> String {
    let Some(lead) = c.iter().copied().find(|x| x.abs() > 1e-12) else { return "0".into() };
    let terms = basis
        .elements
        .iter()
        .zip(c.iter())
        .filter(|(_, x)| x.abs() > 1e-12 * lead.abs())
        .map(|(b, x)| &snap(x / lead) * &b.expr);
    Expr::sum(terms.collect()).simplify().to_string()
}

/// Solves `L F = 0` over `basis` for the field `x`.
pub fn search(
    functional: Functional,
    x: &VectorField3,
    basis: &AnsatzBasis,
    cfg: &DiscoverConfig,
) -> Result<DiscoveryResult, DiscoverError> {
    let m = basis.len();
    if m == 0 {
        return Err(DiscoverError::EmptyBasis);
    }
    let n = cfg.n.unwrap_or((3 * m).max(200));
    if n < m {
        return Err(DiscoverError::TooFewPoints { n, m });
    }
    let frame = if basis.frame.time.is_some() { basis.frame.clone() } else { x.frame.clone() };
    let domain = cfg.domain.clone().unwrap_or_else(|| default_domain(&frame));
    let rows: Vec<Expr> = basis.elements.iter().map(|b| functional.apply(&b.expr, x)).collect();

    let (a, _) = sample_matrix(&rows, &domain, &cfg.params, n, cfg.seed)?;
    let svd = a.svd(false, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let v_t = svd.v_t.expect("requested V");
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let threshold = NULL_THRESHOLD * smax;
    // Directions V beyond the computed singular values are null as well.
    let mut null_rows: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] <= threshold).collect();
    if let Some(&value) = sv.iter().find(|&&s| s > threshold && s <= AMBIGUITY_BAND * threshold) {
        return Err(DiscoverError::Ambiguous { value, threshold });
    }
    null_rows.extend(sv.len()..v_t.nrows());
    let null = DMatrix::from_fn(null_rows.len(), m, |i, j| v_t[(null_rows[i], j)]);
    let vectors = if null_rows.is_empty() { Vec::new() } else { canonical_basis(&null) };

    // Fresh validation points.
    let mut both = rows.clone();
    both.extend(basis.elements.iter().map(|b| b.expr.clone()));
    let (val, _) = sample_matrix(&both, &domain, &cfg.params, cfg.validation, cfg.seed.wrapping_add(1))?;
    let candidates = vectors
        .iter()
        .map(|c| {
            let mut residual: f64 = 0.0;
            let mut min_abs = f64::INFINITY;
            for i in 0..val.nrows() {
                let mut sum = 0.0;
                let mut scale: f64 = 0.0;
                let mut f = 0.0;
                for j in 0..m {
                    let t = c[j] * val[(i, j)];
                    sum += t;
                    scale = scale.max(t.abs());
                    f += c[j] * val[(i, m + j)];
                }
                residual = residual.max(sum.abs() / (1.0 + scale));
                min_abs = min_abs.min(f.abs());
            }
            Candidate {
                coefficients: c.iter().copied().collect(),
                normalized: normalized_form(basis, c),
                residual,
                valid: residual < VALIDATION_TOL,
                min_abs_value: min_abs,
            }
        })
        .collect();

    Ok(DiscoveryResult {
        functional,
        basis: basis.clone(),
        samples: n,
        singular_values: sv,
        dimension: vectors.len(),
        candidates,
        annotations: Vec::new(),
    })
}

/// Time-independent (or weighted) first integrals: `∂F/∂t + ∇F · X = 0`.
pub fn first_integral_search(
    x: &VectorField3,
    basis: &AnsatzBasis,
    cfg: &DiscoverConfig,
) -> Result<DiscoveryResult, DiscoverError> {
    search(Functional::FirstIntegral, x, basis, cfg)
}

/// Functions whose gradient is orthogonal to the field at each time.
pub fn orthogonal_search(
    x: &VectorField3,
    basis: &AnsatzBasis,
    cfg: &DiscoverConfig,
) -> Result<DiscoveryResult, DiscoverError> {
    search(Functional::Orthogonal, x, basis, cfg)
}

/// Last multipliers: `∇ · (M X) = 0`.
pub fn multiplier_search(
    x: &VectorField3,
    basis: &AnsatzBasis,
    cfg: &DiscoverConfig,
) -> Result<DiscoveryResult, DiscoverError> {
    search(Functional::Multiplier, x, basis, cfg)
}

/// Expands each known function in the basis by least squares at sample
/// points and records its best cosine against the candidates.
pub fn annotate(
    mut result: DiscoveryResult,
    known: &[(&str, &ScalarField)],
    cfg: &DiscoverConfig,
) -> Result<DiscoveryResult, DiscoverError> {
    if known.is_empty() {
        return Ok(result);
    }
    let basis = &result.basis;
    let frame = if basis.frame.time.is_some() { basis.frame.clone() } else { known[0].1.frame.clone() };
    let domain = cfg.domain.clone().unwrap_or_else(|| default_domain(&frame));
    let mut exprs: Vec<Expr> = basis.elements.iter().map(|b| b.expr.clone()).collect();
    exprs.extend(known.iter().map(|(_, f)| f.expr.clone()));
    let m = basis.len();
    let n = (3 * m).max(200);
    let (a, _) = sample_matrix(&exprs, &domain, &cfg.params, n, cfg.seed.wrapping_add(2))?;
    let b = a.columns(0, m).into_owned();
    let svd = b.clone().svd(true, true);
    let candidates = result.coefficient_matrix();
    let mut annotations = Vec::new();
    for (k, (name, _)) in known.iter().enumerate() {
        let y: DVector<f64> = a.column(m + k).into_owned();
        let c = svd.solve(&y, 1e-12).map_err(|_| DiscoverError::EmptyBasis)?;
        let fit = (&b * &c - &y).norm() / (1.0 + y.norm());
        let norm = c.norm();
        let (mut best, mut cosine) = (None, 0.0);
        let mut span_cosine = 0.0;
        if norm > 0.0 && fit < VALIDATION_TOL {
            let unit = &c / norm;
            for (j, col) in candidates.column_iter().enumerate() {
                let cos = col.dot(&unit).abs();
                if cos > cosine {
                    cosine = cos;
                    best = Some(j);
                }
            }
            span_cosine = (candidates.transpose() * &unit).norm();
        }
        annotations.push(Annotation {
            known: name.to_string(),
            candidate: best.filter(|_| cosine > MATCH_COSINE),
            cosine,
            span_cosine,
        });
    }
    result.annotations = annotations;
    Ok(result)
}
