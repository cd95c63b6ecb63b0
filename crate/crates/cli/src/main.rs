//! `biham`: verify, simulate and rediscover bi-Hamiltonian structures of
//! three-dimensional flows.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use biham_core::catalog::{self, SystemDef};
use biham_core::discover::{self, Functional};
use biham_core::integrate::{integrate, IntegratorConfig, Method, Monitor};
use biham_core::poisson::{poisson_bracket, PoissonVector};
use biham_core::verify::{verify_structure, SampleConfig};
use biham_core::{parse, Bindings, Expr, Frame, ScalarField, VectorField3};

#[derive(Parser)]
#[command(name = "biham", version, about = "Bi-Hamiltonian structures of 3D flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in systems with their parameter constraints.
    Catalog {
        #[arg(long)]
        json: bool,
    },
    /// Check the Poisson, Nambu and multiplier identities of a system.
    Verify {
        /// Built-in system name or path to a system file.
        system: String,
        #[arg(long = "param", value_name = "K=V")]
        params: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, env = "BIHAM_SEED", default_value_t = biham_core::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Omit the timestamp so equal seeds give identical bytes.
        #[arg(long)]
        deterministic: bool,
    },
    /// Integrate a system and write the trajectory as CSV.
    Simulate {
        system: String,
        #[arg(long = "param", value_name = "K=V")]
        params: Vec<String>,
        #[arg(long, value_name = "A,B,C")]
        init: String,
        #[arg(long, allow_negative_numbers = true)]
        t0: f64,
        #[arg(long, allow_negative_numbers = true)]
        t1: f64,
        #[arg(long, value_enum, default_value_t = MethodArg::Adaptive)]
        method: MethodArg,
        /// Step size for rk4.
        #[arg(long)]
        step: Option<f64>,
        /// Absolute and relative tolerance for the adaptive method.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Output spacing in time; 0 writes every accepted step.
        #[arg(long, default_value_t = 0.01)]
        interval: f64,
        /// Comma-separated subset of h1,h2 to record along the path.
        #[arg(long, value_delimiter = ',')]
        monitors: Vec<String>,
        /// CSV destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search an ansatz basis for first integrals or multipliers.
    Discover {
        system: String,
        #[arg(long = "param", value_name = "K=V")]
        params: Vec<String>,
        #[arg(long)]
        degree: u32,
        /// Range of time-weight multiples, e.g. `-2..0`.
        #[arg(long, value_name = "KMIN..KMAX", allow_hyphen_values = true)]
        weights: Option<String>,
        /// Rate of the weights `exp(k*rate*t)`; defaults to alpha when the
        /// system has it, else 1.
        #[arg(long)]
        rate: Option<String>,
        #[arg(long, value_enum, default_value_t = ModeArg::FirstIntegral)]
        mode: ModeArg,
        #[arg(long, env = "BIHAM_SEED", default_value_t = biham_core::DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the Poisson bracket {F, H} = grad F . (J x grad H).
    Bracket {
        #[arg(long, value_name = "E1;E2;E3", allow_hyphen_values = true)]
        j: String,
        #[arg(long, allow_hyphen_values = true)]
        f: String,
        #[arg(long, allow_hyphen_values = true)]
        h: String,
        #[arg(long, value_name = "U=..,V=..", allow_hyphen_values = true)]
        at: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rk4,
    Adaptive,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    FirstIntegral,
    Orthogonal,
    Multiplier,
}

/// Bad input; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Catalog { json } => catalog_cmd(json),
        Command::Verify { system, params, samples, seed, tol, out, deterministic } => {
            let def = load(&system, &params)?;
            if samples == 0 {
                return Err(usage("--samples must be at least 1"));
            }
            let cfg = SampleConfig::default().with_n(samples).with_seed(seed).with_tol(tol);
            let report = verify_structure(&def, &cfg)?;
            let stamp = (!deterministic).then(timestamp);
            let text = report.to_json(stamp.as_deref()) + "\n";
            emit(out.as_deref(), &text)?;
            for c in &report.checks {
                eprintln!("{:<15} {:<4} max_rel {:.3e}", c.name, if c.pass { "ok" } else { "FAIL" }, c.max_rel);
            }
            for n in &report.notes {
                eprintln!("note: {n}");
            }
            Ok(if report.pass() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Simulate { system, params, init, t0, t1, method, step, tol, interval, monitors, out } => {
            let def = load(&system, &params)?;
            let initial = parse_triple(&init)?;
            let method = match method {
                MethodArg::Rk4 => Method::Rk4 { step: step.ok_or_else(|| usage("rk4 needs --step"))? },
                MethodArg::Adaptive => Method::Adaptive { atol: tol, rtol: tol, min_step: 0.0, max_step: 0.1 },
            };
            let cfg = IntegratorConfig::new(t0, t1, initial)
                .with_method(method)
                .with_params(def.bindings())
                .with_sampling((interval > 0.0).then_some(interval));
            let mons = monitors.iter().map(|m| monitor(&def, m)).collect::<Result<Vec<_>>>()?;
            simulate(&def, &cfg, &mons, out.as_deref())
        }
        Command::Discover { system, params, degree, weights, rate, mode, seed, out } => {
            let def = load(&system, &params)?;
            let weights = weights.as_deref().map(parse_range).transpose()?;
            let rate = match rate {
                Some(r) => parse(&r).map_err(|e| usage(format!("--rate: {e}")))?,
                None if def.values.contains_key("alpha") => Expr::param("alpha"),
                None => Expr::one(),
            };
            let basis = discover::build_basis(degree, &def.frame, weights, rate);
            let cfg = discover::DiscoverConfig::default().with_params(def.bindings()).with_seed(seed);
            let functional = match mode {
                ModeArg::FirstIntegral => Functional::FirstIntegral,
                ModeArg::Orthogonal => Functional::Orthogonal,
                ModeArg::Multiplier => Functional::Multiplier,
            };
            let result = discover::search(functional, &def.field, &basis, &cfg)?;
            let known: Vec<(&str, &ScalarField)> = [("h1", def.h1.as_ref()), ("h2", def.h2.as_ref())]
                .into_iter()
                .filter_map(|(n, h)| Some((n, h?)))
                .collect();
            let result = if functional == Functional::Multiplier {
                discover::annotate(result, &[("multiplier", &def.multiplier)], &cfg)?
            } else {
                discover::annotate(result, &known, &cfg)?
            };
            emit(out.as_deref(), &(result.to_json() + "\n"))?;
            eprintln!("nullspace dimension {}", result.dimension);
            for c in &result.candidates {
                eprintln!("  {}  (residual {:.2e})", c.normalized, c.residual);
            }
            Ok(if result.all_valid() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Bracket { j, f, h, at } => bracket_cmd(&j, &f, &h, at.as_deref()),
    }
}

fn timestamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    secs.to_string()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    emit_bytes(out, text.as_bytes())
}

fn emit_bytes(out: Option<&Path>, text: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => match io::stdout().lock().write_all(text) {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            r => r.context("writing to standard output"),
        },
    }
}

/// A built-in name, else a system file.
fn load(system: &str, params: &[String]) -> Result<SystemDef> {
    let def = match catalog::builtin(system) {
        Ok(d) => d,
        Err(_) if Path::new(system).exists() => {
            let text = fs::read_to_string(system).with_context(|| format!("reading {system}"))?;
            catalog::load_system(&text).map_err(|e| usage(format!("{system}: {e}")))?
        }
        Err(e) => return Err(usage(e.to_string())),
    };
    let mut values = BTreeMap::new();
    for p in params {
        let (k, v) = p.split_once('=').ok_or_else(|| usage(format!("--param expects K=V, got '{p}'")))?;
        let v: f64 = v.trim().parse().map_err(|_| usage(format!("--param {k}: '{v}' is not a number")))?;
        values.insert(k.trim().to_string(), v);
    }
    def.instantiate(&values).map_err(|e| usage(e.to_string()))
}

fn parse_triple(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--init expects three numbers, got '{s}'")))?;
    v.try_into().map_err(|_| usage(format!("--init expects three numbers, got '{s}'")))
}

fn parse_range(s: &str) -> Result<(i64, i64)> {
    let bad = || usage(format!("--weights expects KMIN..KMAX, got '{s}'"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let (a, b): (i64, i64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a > b {
        return Err(bad());
    }
    Ok((a, b))
}

fn monitor(def: &SystemDef, name: &str) -> Result<Monitor> {
    let field = match name {
        "h1" => def.h1.clone(),
        "h2" => def.h2.clone(),
        _ => return Err(usage(format!("unknown monitor '{name}'; expected h1 or h2"))),
    };
    let field = field.ok_or_else(|| usage(format!("{} has no {name}", def.name)))?;
    Ok(Monitor::new(name, field))
}

fn simulate(def: &SystemDef, cfg: &IntegratorConfig, mons: &[Monitor], out: Option<&Path>) -> Result<ExitCode> {
    let names: Vec<&str> = def.frame.spatial.iter().map(String::as_str).collect();
    let names = [names[0], names[1], names[2]];
    let (traj, failure) = match integrate(&def.field, cfg, mons) {
        Ok(t) => (t, None),
        Err(e) => match e.partial() {
            Some(p) => (p.clone(), Some(e)),
            None => return Err(usage(e.to_string())),
        },
    };
    let mut buf = Vec::new();
    traj.write_csv(names, &mut buf)?;
    emit_bytes(out, &buf)?;
    eprintln!("{} accepted, {} rejected steps", traj.accepted, traj.rejected);
    for m in &traj.monitors {
        eprintln!(
            "{}: drift {:.3e}, total-derivative residual {:.3e}",
            m.name,
            m.drift(),
            m.total_derivative_residual()
        );
    }
    match failure {
        Some(e) => bail!("integration aborted: {e}"),
        None => Ok(ExitCode::SUCCESS),
    }
}

fn catalog_cmd(as_json: bool) -> Result<ExitCode> {
    let systems = catalog::list_systems();
    if as_json {
        let list: Vec<_> = systems
            .iter()
            .map(|s| {
                json!({
                    "name": s.name,
                    "description": s.description,
                    "frame": s.frame.symbols(),
                    "constraints": s.constraints,
                    "defaults": s.defaults,
                    "hamiltonian": s.hamiltonian,
                })
            })
            .collect();
        emit(None, &(serde_json::to_string_pretty(&json!({ "schema": 1, "systems": list }))? + "\n"))?;
        return Ok(ExitCode::SUCCESS);
    }
    let mut text = String::new();
    for s in &systems {
        let defaults: Vec<String> = s.defaults.iter().map(|(k, v)| format!("{k}={v}")).collect();
        text += &format!("{:<16} {}\n", s.name, s.description);
        if !s.constraints.is_empty() {
            text += &format!("{:<16} constraints: {}\n", "", s.constraints.join(", "));
        }
        if !defaults.is_empty() {
            text += &format!("{:<16} defaults: {}\n", "", defaults.join(", "));
        }
    }
    emit(None, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn bracket_cmd(j: &str, f: &str, h: &str, at: Option<&str>) -> Result<ExitCode> {
    let pe = |what: &str, s: &str| parse(s).map_err(|e| usage(format!("{what}: {e}")));
    let parts: Vec<&str> = j.split(';').collect();
    if parts.len() != 3 {
        return Err(usage(format!("--j expects three ';'-separated components, got {}", parts.len())));
    }
    let comps = [pe("--j", parts[0])?, pe("--j", parts[1])?, pe("--j", parts[2])?];
    let (f, h) = (pe("--f", f)?, pe("--h", h)?);
    let frame = Frame::infer(comps.iter().chain([&f, &h]));
    let pv = PoissonVector::new("J", VectorField3::new(comps, frame.clone()));
    let b = poisson_bracket(&ScalarField::new(f, frame.clone()), &ScalarField::new(h, frame), &pv)?;
    match b.expr.const_f64() {
        Some(c) => println!("{c}"),
        None => println!("{}", b.expr),
    }
    if let Some(at) = at {
        let mut point = Bindings::new();
        for kv in at.split(',') {
            let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--at expects K=V pairs, got '{kv}'")))?;
            let v: f64 = v.trim().parse().map_err(|_| usage(format!("--at {k}: '{v}' is not a number")))?;
            point.set(k.trim(), v);
        }
        let value = b.expr.evaluate(&point).map_err(|e| anyhow!("evaluating at {at}: {e}"))?;
        println!("{value}");
    }
    Ok(ExitCode::SUCCESS)
}
