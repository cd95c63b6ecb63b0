//! Integration of non-autonomous three-dimensional flows.
//!
//! Two methods: classical RK4 at a fixed step, and the Dormand–Prince 5(4)
//! pair with PI step control and fourth-order dense output. Monitored
//! functions `H(x, t)` are tracked along the way; each monitor also
//! integrates its explicit time derivative `∂H/∂t` as an extra ODE
//! component, so that `H(x(t), t) - H(x(t₀), t₀) - ∫ ∂H/∂t` measures how far
//! the flow is from being tangent to the level sets of `H`. The extra
//! components take part in step-size control, so a monitored run may take
//! more steps than an unmonitored one.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{Bindings, EvalError, Program, SymbolTable};
use crate::residual::{CompiledResidual, Residual};
use crate::vecfield::{ScalarField, VectorField3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Rk4 { step: f64 },
    Adaptive { atol: f64, rtol: f64, min_step: f64, max_step: f64 },
}

impl Method {
    /// Tolerances 1e-10, steps at most 0.1.
    pub fn adaptive() -> Self {
        Method::Adaptive { atol: 1e-10, rtol: 1e-10, min_step: 0.0, max_step: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub t0: f64,
    pub t1: f64,
    pub initial: [f64; 3],
    /// Parameter values of the field and monitors.
    pub params: Bindings,
    /// Output spacing. `None` records every step.
    pub sample_interval: Option<f64>,
}

impl IntegratorConfig {
    /// Adaptive defaults with output every 0.01.
    pub fn new(t0: f64, t1: f64, initial: [f64; 3]) -> Self {
        IntegratorConfig {
            method: Method::adaptive(),
            t0,
            t1,
            initial,
            params: Bindings::new(),
            sample_interval: Some(0.01),
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_params(mut self, params: Bindings) -> Self {
        self.params = params;
        self
    }

    pub fn with_sampling(mut self, interval: Option<f64>) -> Self {
        self.sample_interval = interval;
        self
    }

    fn validate(&self) -> Result<(), IntegrateError> {
        let bad = |m: &str| Err(IntegrateError::InvalidConfig(m.to_string()));
        if !(self.t1 > self.t0) {
            return bad("t1 must exceed t0");
        }
        if self.initial.iter().any(|x| !x.is_finite()) {
            return bad("initial state must be finite");
        }
        match self.method {
            Method::Rk4 { step } if !(step > 0.0) => return bad("step must be positive"),
            Method::Adaptive { atol, rtol, min_step, max_step } => {
                if !(atol > 0.0 && rtol > 0.0) {
                    return bad("tolerances must be positive");
                }
                if !(max_step > 0.0) || min_step < 0.0 || min_step > max_step {
                    return bad("need 0 <= min_step <= max_step, max_step > 0");
                }
            }
            _ => {}
        }
        if let Some(dt) = self.sample_interval {
            if !(dt > 0.0) {
                return bad("sample interval must be positive");
            }
        }
        Ok(())
    }
}

/// A function tracked along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Monitor {
    pub name: String,
    pub field: ScalarField,
}

impl Monitor {
    pub fn new(name: &str, field: ScalarField) -> Self {
        Monitor { name: name.to_string(), field }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonitorSeries {
    pub name: String,
    /// `H(x(tₖ), tₖ)`.
    pub values: Vec<f64>,
    /// Largest summand magnitude of `H` at each sample.
    pub scales: Vec<f64>,
    /// `∫ ∂H/∂t dt` from `t₀` to each sample.
    pub explicit: Vec<f64>,
}

impl MonitorSeries {
    fn relative(&self, k: usize, delta: f64) -> f64 {
        let scale = self.scales[k].max(self.scales[0]).max(self.explicit[k].abs());
        delta.abs() / (1.0 + scale)
    }

    /// Largest `|H(tₖ) - H(t₀)|` relative to one plus the size of the
    /// largest summand of `H`.
    pub fn drift(&self) -> f64 {
        (0..self.values.len()).map(|k| self.relative(k, self.values[k] - self.values[0])).fold(0.0, f64::max)
    }

    /// Largest `|H(tₖ) - H(t₀) - ∫ ∂H/∂t|`, relative as in [`drift`](Self::drift).
    /// Zero when `dH/dt = ∂H/∂t` along the flow.
    pub fn total_derivative_residual(&self) -> f64 {
        (0..self.values.len())
            .map(|k| self.relative(k, self.values[k] - self.values[0] - self.explicit[k]))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<[f64; 3]>,
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    pub monitors: Vec<MonitorSeries>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, [f64; 3])> {
        Some((*self.times.last()?, *self.states.last()?))
    }

    pub fn monitor(&self, name: &str) -> Option<&MonitorSeries> {
        self.monitors.iter().find(|m| m.name == name)
    }

    /// CSV with header `t,<state names>[,<monitor names>]`, 17 significant
    /// digits per value.
    pub fn write_csv<W: Write>(&self, names: [&str; 3], out: &mut W) -> io::Result<()> {
        write!(out, "t,{},{},{}", names[0], names[1], names[2])?;
        for m in &self.monitors {
            write!(out, ",{}", m.name)?;
        }
        writeln!(out)?;
        for (k, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            write!(out, "{t:.16e},{:.16e},{:.16e},{:.16e}", s[0], s[1], s[2])?;
            for m in &self.monitors {
                write!(out, ",{:.16e}", m.values[k])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("step size underflow (h = {h:e}) at t = {t}")]
    StepUnderflow { t: f64, h: f64, partial: Box<Trajectory> },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64, partial: Box<Trajectory> },
}

impl IntegrateError {
    /// The samples collected before an abort.
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            IntegrateError::StepUnderflow { partial, .. } | IntegrateError::NonFinite { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

/// Compiled right-hand side of the augmented system
/// `(ẋ, q̇₁, .., q̇ₘ) = (X(x, t), ∂H₁/∂t, .., ∂Hₘ/∂t)`.
struct System {
    field: [Program; 3],
    explicit: Vec<Program>,
    monitors: Vec<CompiledResidual>,
    names: Vec<String>,
    slots: Vec<f64>,
    time_slot: usize,
    evaluations: usize,
}

impl System {
    fn new(x: &VectorField3, monitors: &[Monitor], params: &Bindings) -> Result<Self, EvalError> {
        let mut table = SymbolTable::new(&x.frame.spatial);
        let time = x.frame.time.clone().unwrap_or_else(|| "t".into());
        let time_slot = table.insert(&time);
        let mut exprs: Vec<&crate::expr::Expr> = x.components.iter().collect();
        exprs.extend(monitors.iter().map(|m| &m.field.expr));
        for e in exprs {
            for s in e.free_symbols() {
                table.insert(&s);
            }
        }
        let mut slots = vec![0.0; table.len()];
        for (i, name) in table.names().iter().enumerate().skip(time_slot + 1) {
            slots[i] = params.get(name).ok_or_else(|| EvalError::Unbound(name.clone()))?;
        }
        let field = [0, 1, 2].map(|i| Program::compile(&x.components[i], &table));
        let [a, b, c] = field;
        let mut explicit = Vec::new();
        let mut compiled = Vec::new();
        for m in monitors {
            if m.field.frame != x.frame {
                return Err(EvalError::Unbound(format!("monitor {} frame {}", m.name, m.field.frame)));
            }
            explicit.push(Program::compile(&m.field.time_partial(), &table)?);
            compiled.push(Residual::from_terms([m.field.expr.clone()]).compile(&table)?);
        }
        Ok(System {
            field: [a?, b?, c?],
            explicit,
            monitors: compiled,
            names: monitors.iter().map(|m| m.name.clone()).collect(),
            slots,
            time_slot,
            evaluations: 0,
        })
    }

    fn dim(&self) -> usize {
        3 + self.explicit.len()
    }

    fn load(&mut self, t: f64, y: &[f64]) {
        self.slots[..3].copy_from_slice(&y[..3]);
        self.slots[self.time_slot] = t;
    }

    fn rhs(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        self.evaluations += 1;
        self.load(t, y);
        for i in 0..3 {
            out[i] = self.field[i].eval(&self.slots)?;
        }
        for (k, p) in self.explicit.iter().enumerate() {
            out[3 + k] = p.eval(&self.slots)?;
        }
        Ok(())
    }

    fn record(&mut self, traj: &mut Trajectory, t: f64, y: &[f64]) -> Result<(), EvalError> {
        self.load(t, y);
        traj.times.push(t);
        traj.states.push([y[0], y[1], y[2]]);
        for (k, m) in self.monitors.iter().enumerate() {
            let v = m.eval(&self.slots)?;
            let s = &mut traj.monitors[k];
            s.values.push(v.value);
            s.scales.push(v.scale);
            s.explicit.push(y[3 + k]);
        }
        Ok(())
    }

    fn empty_trajectory(&self) -> Trajectory {
        Trajectory {
            monitors: self.names.iter().map(|n| MonitorSeries { name: n.clone(), ..Default::default() }).collect(),
            ..Default::default()
        }
    }
}

/// Sample times `t₀ + k·dt` below `t₁`, then `t₁` itself.
fn sample_grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let n = ((t1 - t0) / dt).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| t0 + k as f64 * dt).filter(|t| *t < t1 - 1e-12 * dt).collect();
    grid.push(t1);
    grid
}

fn finite(y: &[f64]) -> bool {
    y[..3].iter().all(|v| v.is_finite())
}

/// Integrates `X` from `cfg.initial` over `[t0, t1]`, tracking `monitors`.
pub fn integrate(x: &VectorField3, cfg: &IntegratorConfig, monitors: &[Monitor]) -> Result<Trajectory, IntegrateError> {
    cfg.validate()?;
    let mut sys = System::new(x, monitors, &cfg.params)?;
    match cfg.method {
        Method::Rk4 { step } => rk4(&mut sys, cfg, step),
        Method::Adaptive { atol, rtol, min_step, max_step } => dopri5(&mut sys, cfg, atol, rtol, min_step, max_step),
    }
}

fn rk4(sys: &mut System, cfg: &IntegratorConfig, step: f64) -> Result<Trajectory, IntegrateError> {
    let dim = sys.dim();
    let span = cfg.t1 - cfg.t0;
    let n = ((span / step).round() as usize).max(1);
    let h = span / n as f64;
    let stride = cfg.sample_interval.map_or(1, |dt| ((dt / h).round() as usize).max(1));
    let mut y = vec![0.0; dim];
    y[..3].copy_from_slice(&cfg.initial);
    let mut traj = sys.empty_trajectory();
    sys.record(&mut traj, cfg.t0, &y)?;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    for i in 0..n {
        let t = cfg.t0 + i as f64 * h;
        sys.rhs(t, &y, &mut k1)?;
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        sys.rhs(t + 0.5 * h, &tmp, &mut k2)?;
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        sys.rhs(t + 0.5 * h, &tmp, &mut k3)?;
        for j in 0..dim {
            tmp[j] = y[j] + h * k3[j];
        }
        sys.rhs(t + h, &tmp, &mut k4)?;
        for j in 0..dim {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        traj.accepted += 1;
        let tn = if i + 1 == n { cfg.t1 } else { cfg.t0 + (i + 1) as f64 * h };
        if !finite(&y) {
            traj.evaluations = sys.evaluations;
            return Err(IntegrateError::NonFinite { t: tn, partial: Box::new(traj) });
        }
        if (i + 1) % stride == 0 || i + 1 == n {
            sys.record(&mut traj, tn, &y)?;
        }
    }
    traj.evaluations = sys.evaluations;
    Ok(traj)
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// PI controller constants.
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], atol: f64, rtol: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..err.len() {
        let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
        s += (err[i] / sc).powi(2);
    }
    (s / err.len() as f64).sqrt()
}

fn initial_step(
    sys: &mut System,
    t: f64,
    y: &[f64],
    f0: &[f64],
    atol: f64,
    rtol: f64,
    max_step: f64,
) -> Result<f64, EvalError> {
    let sc: Vec<f64> = y[..3].iter().map(|v| atol + rtol * v.abs()).collect();
    let norm = |v: &[f64]| ((0..3).map(|i| (v[i] / sc[i]).powi(2)).sum::<f64>() / 3.0).sqrt();
    let (d0, d1) = (norm(y), norm(f0));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(max_step);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; y.len()];
    sys.rhs(t + h0, &y1, &mut f1)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = norm(&diff) / h0;
    let m = d1.max(d2);
    let h1 = if m <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / m).powf(0.2) };
    Ok((100.0 * h0).min(h1).min(max_step))
}

fn dopri5(
    sys: &mut System,
    cfg: &IntegratorConfig,
    atol: f64,
    rtol: f64,
    min_step: f64,
    max_step: f64,
) -> Result<Trajectory, IntegrateError> {
    let dim = sys.dim();
    let mut t = cfg.t0;
    let mut y = vec![0.0; dim];
    y[..3].copy_from_slice(&cfg.initial);
    let mut traj = sys.empty_trajectory();
    let grid = cfg.sample_interval.map(|dt| sample_grid(cfg.t0, cfg.t1, dt));
    let mut next_sample = 0usize;
    if grid.is_some() {
        next_sample = 1;
    }
    sys.record(&mut traj, t, &y)?;

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    let mut ys = vec![0.0; dim];
    let mut y1 = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    let mut cont = vec![vec![0.0; dim]; 5];
    sys.rhs(t, &y, &mut k[0])?;
    let mut h = initial_step(sys, t, &y, &k[0], atol, rtol, max_step)?;
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;

    loop {
        let remaining = cfg.t1 - t;
        if remaining <= 1e-14 * cfg.t1.abs().max(1.0) {
            break;
        }
        let floor = min_step.max(16.0 * f64::EPSILON * t.abs().max(1.0));
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        if h < floor && !last {
            traj.evaluations = sys.evaluations;
            return Err(IntegrateError::StepUnderflow { t, h, partial: Box::new(traj) });
        }

        let stages: [(f64, &[(usize, f64)]); 6] = [
            (C2, &[(0, A21)]),
            (C3, &[(0, A31), (1, A32)]),
            (C4, &[(0, A41), (1, A42), (2, A43)]),
            (C5, &[(0, A51), (1, A52), (2, A53), (3, A54)]),
            (1.0, &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)]),
            (1.0, &[(0, A71), (2, A73), (3, A74), (4, A75), (5, A76)]),
        ];
        for (s, (c, row)) in stages.iter().enumerate() {
            let target = if s == 5 { &mut y1 } else { &mut ys };
            for j in 0..dim {
                let mut acc = 0.0;
                for &(m, a) in row.iter() {
                    acc += a * k[m][j];
                }
                target[j] = y[j] + h * acc;
            }
            let tt = if s == 5 { t + h } else { t + c * h };
            let input = if s == 5 { y1.clone() } else { ys.clone() };
            let (head, tail) = k.split_at_mut(s + 1);
            let _ = head;
            sys.rhs(tt, &input, &mut tail[0])?;
        }
        for j in 0..dim {
            err[j] = h * (E1 * k[0][j] + E3 * k[2][j] + E4 * k[3][j] + E5 * k[4][j] + E6 * k[5][j] + E7 * k[6][j]);
        }
        let e = if finite(&y1) { error_norm(&err, &y, &y1, atol, rtol) } else { f64::INFINITY };

        if e <= 1.0 {
            traj.accepted += 1;
            for j in 0..dim {
                let ydiff = y1[j] - y[j];
                let bspl = h * k[0][j] - ydiff;
                cont[0][j] = y[j];
                cont[1][j] = ydiff;
                cont[2][j] = bspl;
                cont[3][j] = ydiff - h * k[6][j] - bspl;
                cont[4][j] =
                    h * (D1 * k[0][j] + D3 * k[2][j] + D4 * k[3][j] + D5 * k[4][j] + D6 * k[5][j] + D7 * k[6][j]);
            }
            let t_new = if last { cfg.t1 } else { t + h };
            match &grid {
                Some(g) => {
                    while next_sample < g.len() && g[next_sample] <= t_new {
                        let ts = g[next_sample];
                        if ts == t_new {
                            sys.record(&mut traj, ts, &y1)?;
                        } else {
                            let th = (ts - t) / h;
                            let th1 = 1.0 - th;
                            let yi: Vec<f64> = (0..dim)
                                .map(|j| {
                                    cont[0][j]
                                        + th * (cont[1][j] + th1 * (cont[2][j] + th * (cont[3][j] + th1 * cont[4][j])))
                                })
                                .collect();
                            sys.record(&mut traj, ts, &yi)?;
                        }
                        next_sample += 1;
                    }
                }
                None => sys.record(&mut traj, t_new, &y1)?,
            }
            t = t_new;
            std::mem::swap(&mut y, &mut y1);
            let k7 = k[6].clone();
            k[0].copy_from_slice(&k7);
            let fac11 = e.powf(EXPO);
            let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            fac_old = e.max(1e-4);
            let mut h_new = (h / fac).min(max_step);
            if last_rejected {
                h_new = h_new.min(h);
            }
            last_rejected = false;
            h = h_new;
        } else {
            if !finite(&y1) && h <= floor {
                traj.evaluations = sys.evaluations;
                return Err(IntegrateError::NonFinite { t, partial: Box::new(traj) });
            }
            traj.rejected += 1;
            last_rejected = true;
            let fac11 = if e.is_finite() { e.powf(EXPO) } else { 1.0 / FAC_MIN };
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
        }
    }
    traj.evaluations = sys.evaluations;
    Ok(traj)
}

/// Slope of `log(error)` against `log(h)` for RK4 runs ending at `t1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
}

/// Runs RK4 at each step size and fits the error at `t1` against the
/// reference final state.
pub fn convergence_order(
    x: &VectorField3,
    params: &Bindings,
    initial: [f64; 3],
    t0: f64,
    t1: f64,
    reference: [f64; 3],
    steps: &[f64],
) -> Result<Convergence, IntegrateError> {
    if steps.len() < 2 {
        return Err(IntegrateError::InvalidConfig("need at least two step sizes".into()));
    }
    let mut errors = Vec::with_capacity(steps.len());
    for &h in steps {
        let cfg = IntegratorConfig::new(t0, t1, initial)
            .with_method(Method::Rk4 { step: h })
            .with_params(params.clone())
            .with_sampling(Some(t1 - t0));
        let traj = integrate(x, &cfg, &[])?;
        let (_, s) = traj.last().expect("trajectory has a final sample");
        let e = (0..3).map(|i| (s[i] - reference[i]).powi(2)).sum::<f64>().sqrt();
        errors.push(e);
    }
    let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(Convergence { steps: steps.to_vec(), errors, slope: sxy / sxx })
}

/// Integrates each configuration independently, in parallel; results are
/// in input order and identical to sequential runs.
pub fn ensemble(
    x: &VectorField3,
    configs: &[IntegratorConfig],
    monitors: &[Monitor],
) -> Vec<Result<Trajectory, IntegrateError>> {
    configs.par_iter().map(|c| integrate(x, c, monitors)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::vecfield::{scalar, Frame};

    fn vf(s: &str) -> VectorField3 {
        let c: Vec<_> = s.split(';').map(|p| parse(p).unwrap()).collect();
        VectorField3::new([c[0].clone(), c[1].clone(), c[2].clone()], Frame::uvw())
    }

    #[test]
    fn rk4_harmonic_oscillator() {
        let cfg =
            IntegratorConfig::new(0.0, std::f64::consts::TAU, [1.0, 0.0, 0.0]).with_method(Method::Rk4 { step: 1e-3 });
        let traj = integrate(&vf("v;-u;0"), &cfg, &[]).unwrap();
        let (t, s) = traj.last().unwrap();
        assert_eq!(t, std::f64::consts::TAU);
        assert!((s[0] - 1.0).abs() < 1e-8 && s[1].abs() < 1e-8, "{s:?}");
    }

    #[test]
    fn adaptive_tracks_exponential() {
        let cfg = IntegratorConfig::new(0.0, 1.0, [1.0, 1.0, 1.0]);
        let traj = integrate(&vf("u;-v;0"), &cfg, &[]).unwrap();
        let (_, s) = traj.last().unwrap();
        assert!((s[0] - 1f64.exp()).abs() < 1e-9);
        assert!((s[1] - (-1f64).exp()).abs() < 1e-9);
        assert_eq!(traj.len(), 101);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn monitors_accumulate_explicit_derivative() {
        // H = u*exp(-t) along u' = 0 changes only through t.
        let cfg = IntegratorConfig::new(0.0, 2.0, [1.5, 0.0, 0.0]);
        let m = Monitor::new("H", scalar(parse("u*exp(-t)").unwrap()));
        let traj = integrate(&vf("0;0;0"), &cfg, &[m]).unwrap();
        let s = &traj.monitors[0];
        assert!(s.drift() > 0.5);
        assert!(s.total_derivative_residual() < 1e-9, "{}", s.total_derivative_residual());
    }

    #[test]
    fn invalid_configs() {
        let x = vf("v;-u;0");
        let bad = IntegratorConfig::new(1.0, 1.0, [0.0; 3]);
        assert!(matches!(integrate(&x, &bad, &[]), Err(IntegrateError::InvalidConfig(_))));
        let bad = IntegratorConfig::new(0.0, 1.0, [0.0; 3]).with_method(Method::Rk4 { step: 0.0 });
        assert!(matches!(integrate(&x, &bad, &[]), Err(IntegrateError::InvalidConfig(_))));
        let unbound = vf("k*v;-u;0");
        let cfg = IntegratorConfig::new(0.0, 1.0, [0.0; 3]);
        assert!(matches!(integrate(&unbound, &cfg, &[]), Err(IntegrateError::Eval(EvalError::Unbound(_)))));
    }

    #[test]
    fn blow_up_aborts_with_partial_trajectory() {
        // u' = u^2 from 1 blows up at t = 1.
        let cfg = IntegratorConfig::new(0.0, 2.0, [1.0, 0.0, 0.0]);
        let e = integrate(&vf("u^2;0;0"), &cfg, &[]).unwrap_err();
        let p = e.partial().expect("partial trajectory");
        assert!(!p.is_empty());
        assert!(p.last().unwrap().0 < 1.0);
    }

    #[test]
    fn csv_layout() {
        let cfg = IntegratorConfig::new(0.0, 0.02, [1.0, 2.0, 3.0]);
        let m = Monitor::new("H1", scalar(parse("u").unwrap()));
        let traj = integrate(&vf("0;0;0"), &cfg, &[m]).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(["u", "v", "w"], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,u,v,w,H1");
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[1],
            "0.0000000000000000e0,1.0000000000000000e0,2.0000000000000000e0,3.0000000000000000e0,1.0000000000000000e0"
        );
    }
}
