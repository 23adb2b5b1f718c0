//! Command-line front end: `run`, `sets`, `compare` and `validate`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::{load_config, ConfigError};
use crate::controller::DesignError;
use crate::geometry::{export, Polytope, SET_TOL};
use crate::orchestrator::{
    self, audit_trace_with, prepare, sse_report, ExperimentSpec, RunError, SimulationTrace, Strategy,
    DEFAULT_AUDIT_TOL,
};

/// Environment variable selecting a tolerance profile.
pub const TOLERANCE_ENV: &str = "DSWMPC_TOLERANCE_PROFILE";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Exit {
    Ok = 0,
    /// The run was feasible but a guaranteed property failed its audit.
    AuditFailure = 1,
    Config = 2,
    Design = 3,
    Refused = 4,
    Infeasible = 5,
}

impl Exit {
    pub fn code(self) -> u8 {
        self as u8
    }

    fn status(self) -> &'static str {
        match self {
            Exit::Ok => "ok",
            Exit::AuditFailure => "audit_failure",
            Exit::Config => "config_error",
            Exit::Design => "design_failure",
            Exit::Refused => "refused",
            Exit::Infeasible => "runtime_infeasibility",
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dswmpc", version, about = "Distributed switched tube MPC experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one strategy and write trace.csv, audit.json, sse.json and status.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the designed sets and their certificates.
    Sets {
        config: PathBuf,
        #[arg(long, default_value = "dswmpc")]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several strategies and tabulate their square errors.
    Compare {
        config: PathBuf,
        /// Comma separated; defaults to the config's run.strategies.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<Strategy>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config and report every problem in it.
    Validate {
        config: PathBuf,
        /// Print the canonical form of the config.
        #[arg(long)]
        dump: bool,
    },
}

/// Numerical tolerances selectable through [`TOLERANCE_ENV`].
#[derive(Clone, Debug, PartialEq)]
pub struct ToleranceProfile {
    pub name: String,
    /// Overrides the config's mRPI accuracy when set.
    pub mrpi_eps: Option<f64>,
    pub audit_tol: f64,
}

impl ToleranceProfile {
    pub fn named(name: &str) -> Result<Self, String> {
        let (mrpi_eps, audit_tol) = match name {
            "default" => (None, DEFAULT_AUDIT_TOL),
            "strict" => (Some(1e-4), 1e-8),
            "loose" => (Some(1e-2), 1e-5),
            other => return Err(format!("unknown tolerance profile '{other}' (default, strict or loose)")),
        };
        Ok(ToleranceProfile {
            name: name.to_string(),
            mrpi_eps,
            audit_tol,
        })
    }

    pub fn from_env() -> Result<Self, String> {
        match std::env::var(TOLERANCE_ENV) {
            Ok(v) if !v.trim().is_empty() => Self::named(v.trim()),
            _ => Self::named("default"),
        }
    }

    fn apply(&self, spec: &mut ExperimentSpec) {
        if let Some(eps) = self.mrpi_eps {
            spec.options.mrpi_eps = eps;
        }
    }
}

pub fn execute(cli: &Cli) -> Exit {
    let profile = match ToleranceProfile::from_env() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {TOLERANCE_ENV}: {e}");
            return Exit::Config;
        }
    };
    let result = match &cli.command {
        Command::Run { config, strategy, out } => cmd_run(config, *strategy, out, &profile),
        Command::Sets { config, strategy, out } => cmd_sets(config, *strategy, out, &profile),
        Command::Compare {
            config,
            strategies,
            out,
        } => cmd_compare(config, strategies, out, &profile),
        Command::Validate { config, dump } => cmd_validate(config, *dump),
    };
    match result {
        Ok(exit) => exit,
        Err(e) => {
            eprintln!("error: {e}");
            Exit::Config
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn load_spec(config: &Path, profile: &ToleranceProfile) -> Result<ExperimentSpec, CliError> {
    let cfg = load_config(config)?;
    let mut spec = cfg.to_spec()?;
    profile.apply(&mut spec);
    Ok(spec)
}

fn exit_for(err: &RunError) -> Exit {
    match err {
        RunError::Design(_) => Exit::Design,
        RunError::Refused(_) => Exit::Refused,
        RunError::Spec(_) | RunError::Model(_) => Exit::Config,
    }
}

fn design_details(err: &RunError) -> serde_json::Value {
    match err {
        RunError::Design(DesignError::EmptySet { subsystem, mode, set }) => {
            json!({ "empty_set": set, "subsystem": subsystem + 1, "mode": mode + 1 })
        }
        _ => serde_json::Value::Null,
    }
}

/// Column names of the trace CSV for the given maximal dimensions.
pub fn trace_header(n_x: usize, n_u: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "subsystem", "mode", "delta"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=n_x).map(|k| format!("x[{k}]")));
    h.extend((1..=n_u).map(|k| format!("u[{k}]")));
    h.extend((1..=n_x).map(|k| format!("xhat[{k}]")));
    h.extend(["feasible", "cost", "solve_ms"].iter().map(|s| s.to_string()));
    h
}

/// One row per subsystem and step, plus the final state at `t = t_sim`.
/// Subsystems and modes are numbered from 1.
pub fn write_trace_csv(trace: &SimulationTrace, path: &Path) -> Result<(), CliError> {
    let n_x = trace.states[0].iter().map(|x| x.len()).max().unwrap_or(0);
    let n_u = trace.sets.input_sets.iter().map(|u| u.dim()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trace_header(n_x, n_u))?;
    let pad = |v: &[f64], n: usize| -> Vec<String> {
        (0..n).map(|k| v.get(k).map_or(String::new(), |x| format!("{x:.12e}"))).collect()
    };
    for step in &trace.steps {
        for (i, s) in step.subsystems.iter().enumerate() {
            let mut row = vec![
                step.t.to_string(),
                (i + 1).to_string(),
                (step.mode + 1).to_string(),
                step.delta.to_string(),
            ];
            row.extend(pad(&s.x, n_x));
            row.extend(pad(&s.u, n_u));
            row.extend(pad(s.xhat.as_deref().unwrap_or(&[]), n_x));
            row.push(s.feasible.to_string());
            row.push(if s.cost.is_finite() { format!("{:.12e}", s.cost) } else { String::new() });
            row.push(format!("{:.3}", s.solve_ms));
            w.write_record(&row)?;
        }
    }
    if trace.is_complete() {
        let t = trace.t_sim;
        for (i, x) in trace.states[t].iter().enumerate() {
            let mut row = vec![t.to_string(), (i + 1).to_string(), String::new(), String::new()];
            row.extend(pad(x.as_slice(), n_x));
            row.extend(pad(&[], n_u));
            row.extend(pad(&[], n_x));
            row.extend([String::new(), String::new(), String::new()]);
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

fn sse_json(trace: &SimulationTrace) -> serde_json::Value {
    let sse = sse_report(trace);
    json!({
        "convention": "sum over t = 0..=t_sim of x_ij(t)^2",
        "complete": trace.is_complete(),
        "per_state": sse.per_state,
        "per_subsystem": sse.per_subsystem,
        "total": sse.total,
    })
}

fn status_json(strategy: Strategy, exit: Exit, cause: Option<String>, details: serde_json::Value) -> serde_json::Value {
    json!({
        "strategy": strategy.name(),
        "status": exit.status(),
        "exit_code": exit.code(),
        "cause": cause,
        "details": details,
    })
}

/// Outcome of one strategy run, already written to `out`.
struct RunOutcome {
    exit: Exit,
    cause: Option<String>,
    sse_total: Option<f64>,
}

fn run_into(spec: &ExperimentSpec, strategy: Strategy, out: &Path, profile: &ToleranceProfile) -> Result<RunOutcome, CliError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let trace = match orchestrator::run(spec, strategy) {
        Ok(t) => t,
        Err(e) => {
            let exit = exit_for(&e);
            let cause = match &e {
                RunError::Refused(c) => c.clone(),
                other => other.to_string(),
            };
            write_json(&out.join("status.json"), &status_json(strategy, exit, Some(cause.clone()), design_details(&e)))?;
            return Ok(RunOutcome {
                exit,
                cause: Some(cause),
                sse_total: None,
            });
        }
    };
    write_trace_csv(&trace, &out.join("trace.csv"))?;
    let audit = audit_trace_with(&trace, spec, profile.audit_tol);
    write_json(
        &out.join("audit.json"),
        &json!({ "tolerance_profile": profile.name, "tolerance": profile.audit_tol, "report": audit }),
    )?;
    let sse = sse_json(&trace);
    write_json(&out.join("sse.json"), &sse)?;
    let (exit, cause, details) = match &trace.first_failure {
        Some(f) => (
            Exit::Infeasible,
            Some("runtime infeasibility".to_string()),
            json!({ "t": f.t, "controller": f.controller + 1, "reason": f.cause }),
        ),
        None if !audit.passed => {
            let failed: Vec<&str> = audit.checks.iter().filter(|c| !c.passed && !c.warn_only).map(|c| c.name).collect();
            (Exit::AuditFailure, Some(format!("audit failed: {}", failed.join(", "))), serde_json::Value::Null)
        }
        None => (Exit::Ok, None, serde_json::Value::Null),
    };
    write_json(&out.join("status.json"), &status_json(strategy, exit, cause.clone(), details))?;
    Ok(RunOutcome {
        exit,
        cause,
        sse_total: (exit == Exit::Ok).then(|| sse["total"].as_f64()).flatten(),
    })
}

fn report(strategy: Strategy, outcome: &RunOutcome, out: &Path) {
    match (&outcome.cause, outcome.sse_total) {
        (None, Some(sse)) => println!("{strategy}: ok, sum of square errors {sse:.4} ({})", out.display()),
        (cause, _) => println!("{strategy}: {} ({})", cause.as_deref().unwrap_or("failed"), out.display()),
    }
}

pub fn cmd_run(config: &Path, strategy: Strategy, out: &Path, profile: &ToleranceProfile) -> Result<Exit, CliError> {
    let spec = load_spec(config, profile)?;
    let outcome = run_into(&spec, strategy, out, profile)?;
    report(strategy, &outcome, out);
    Ok(outcome.exit)
}

pub fn cmd_compare(
    config: &Path,
    strategies: &[Strategy],
    out: &Path,
    profile: &ToleranceProfile,
) -> Result<Exit, CliError> {
    let cfg = load_config(config)?;
    let strategies = if strategies.is_empty() {
        cfg.strategies().map_err(|e| {
            CliError::Config(ConfigError::Invalid(vec![crate::config::FieldError {
                path: "run.strategies".into(),
                message: e,
            }]))
        })?
    } else {
        strategies.to_vec()
    };
    let mut spec = cfg.to_spec()?;
    profile.apply(&mut spec);
    fs::create_dir_all(out).map_err(io_err(out))?;

    let mut rows = vec![];
    for &s in &strategies {
        let dir = out.join(s.name());
        let outcome = run_into(&spec, s, &dir, profile)?;
        report(s, &outcome, &dir);
        rows.push((s, outcome));
    }
    let csv_path = out.join("compare.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["strategy", "sse_total", "status", "exit_code"])?;
    for (s, o) in &rows {
        let sse = o.sse_total.map_or("-".to_string(), |v| format!("{v:.6}"));
        w.write_record([s.name(), &sse, o.exit.status(), &o.exit.code().to_string()])?;
    }
    w.flush().map_err(io_err(&csv_path))?;
    let table: Vec<_> = rows
        .iter()
        .map(|(s, o)| {
            json!({
                "strategy": s.name(),
                "sse_total": o.sse_total,
                "display": o.sse_total.map_or("-".to_string(), |v| format!("{v:.4}")),
                "feasible": o.exit == Exit::Ok,
                "status": o.exit.status(),
                "cause": o.cause,
            })
        })
        .collect();
    write_json(&out.join("compare.json"), &json!({ "config": cfg.name, "rows": table }))?;
    Ok(Exit::Ok)
}

fn write_set(dir: &Path, stem: &str, p: &Polytope) -> Result<(), CliError> {
    let path = dir.join(format!("{stem}.txt"));
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    export::write_polytope(&mut f, p).map_err(io_err(&path))?;
    if p.dim() == 2 && !p.is_empty() && p.is_bounded() {
        if let Ok(text) = export::vertex_loop_csv(p) {
            let path = dir.join(format!("{stem}.vertices.csv"));
            fs::write(&path, text).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

pub fn cmd_sets(config: &Path, strategy: Strategy, out: &Path, profile: &ToleranceProfile) -> Result<Exit, CliError> {
    let spec = load_spec(config, profile)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let prepared = match prepare(&spec, strategy) {
        Ok(p) => p,
        Err(e) => {
            let exit = exit_for(&e);
            eprintln!("{strategy}: {e}");
            write_json(&out.join("status.json"), &status_json(strategy, exit, Some(e.to_string()), design_details(&e)))?;
            return Ok(exit);
        }
    };
    let mut certificates = vec![];
    let mut all_passed = true;
    for slot in &prepared.controllers {
        let d = &slot.design;
        let prefix = if slot.members.len() == 1 {
            format!("sub{}", slot.members[0] + 1)
        } else {
            "network".to_string()
        };
        let family = d.maximal_family(spec.options.max_iter).ok();
        for (m, b) in d.modes.iter().enumerate() {
            let stem = |name: &str| format!("{prefix}_mode{}_{name}", m + 1);
            write_set(out, &stem("W"), &b.sets.w)?;
            write_set(out, &stem("Z"), &b.sets.z)?;
            write_set(out, &stem("Xhat"), &b.sets.xhat)?;
            write_set(out, &stem("Uhat"), &b.sets.uhat)?;
            write_set(out, &stem("T"), &b.terminal)?;
            if let Some(f) = &family {
                write_set(out, &stem("C"), &f.sets[m])?;
            }
        }
        let cert = d.certify(SET_TOL);
        let (passed, detail) = match &cert {
            Ok(c) => (
                c.passed(),
                json!({
                    "rpi": c.rpi,
                    "tube_budgets": c.budgets,
                    "terminal_invariant": c.terminal.invariant,
                    "terminal_reachable": c.terminal.reachable.iter()
                        .map(|((i, j), ok)| json!({ "from": i + 1, "to": j + 1, "ok": ok }))
                        .collect::<Vec<_>>(),
                }),
            ),
            Err(e) => (false, json!({ "error": e.to_string() })),
        };
        let family_ok = family.as_ref().is_some_and(|f| f.converged);
        all_passed &= passed && family_ok;
        certificates.push(json!({
            "controller": prefix,
            "subsystems": slot.members.iter().map(|i| i + 1).collect::<Vec<_>>(),
            "design_modes": d.modes.len(),
            "mode_map": d.mode_map.iter().map(|m| m + 1).collect::<Vec<_>>(),
            "terminal_iterations": d.terminal_iterations,
            "maximal_family_converged": family_ok,
            "certificates": detail,
            "passed": passed && family_ok,
        }));
    }
    write_json(
        &out.join("certificates.json"),
        &json!({ "strategy": strategy.name(), "passed": all_passed, "controllers": certificates }),
    )?;
    write_json(
        &out.join("status.json"),
        &status_json(strategy, Exit::Ok, None, json!({ "certificates_passed": all_passed })),
    )?;
    println!(
        "{strategy}: sets of {} controller(s) written to {}, certificates {}",
        prepared.controllers.len(),
        out.display(),
        if all_passed { "pass" } else { "FAIL" }
    );
    Ok(Exit::Ok)
}

pub fn cmd_validate(config: &Path, dump: bool) -> Result<Exit, CliError> {
    match load_config(config) {
        Ok(cfg) => {
            if dump {
                print!("{}", cfg.to_canonical_toml());
            } else {
                println!(
                    "ok: {} subsystem(s), {} mode(s), horizon {}, t_sim {}",
                    cfg.subsystems.len(),
                    cfg.num_modes(),
                    cfg.controller.horizon,
                    cfg.run.t_sim
                );
            }
            Ok(Exit::Ok)
        }
        Err(e) => {
            eprintln!("{e}");
            Ok(Exit::Config)
        }
    }
}
