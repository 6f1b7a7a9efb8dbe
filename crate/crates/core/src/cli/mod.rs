//! The `flocklab` command-line tool.
//!
//! Exit codes: 0 success or feasible, 1 usage or I/O error, 2 infeasible
//! certificate, invalid scenario or audit violations, 3 collision event,
//! 4 step-size underflow.

pub mod artifacts;
pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::Value;

use crate::certify::{decay_rate_fit, fmt_num, verify_lemma_collision, verify_lemma_sync, AuditTolerance, Certificate, ViolationReport};
use crate::error::{FlockError, Result};
use crate::integrate::{run_model, Termination};
use crate::models::ModelVariant;
use crate::scenario::{bundled, materialize, parse_scenario, with_overrides, ScenarioFile};
use crate::state::spread_value;

pub use artifacts::{simulate_to_dir, Manifest, RunArtifacts};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_COLLISION: i32 = 3;
pub const EXIT_UNDERFLOW: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "flocklab", version, about = "Simulate and certify perturbed Cucker-Smale flocks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ScenarioArg {
    /// Scenario JSON file, or `bundled:NAME`.
    #[arg(long)]
    pub scenario: String,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a scenario and write CSV, SVG, certificate and manifest.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        out: PathBuf,
        /// Include positions in timeseries.csv.
        #[arg(long)]
        full: bool,
    },
    /// Evaluate the certificate for a scenario.
    Certify {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify (and optionally simulate) over a Cartesian product of parameters.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// `key=v1,v2,...` or `key=start:stop:step`; `key` is a dotted scenario path or `seed`.
        #[arg(long = "axis")]
        axes: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also integrate each point and record the observed decay rate.
        #[arg(long)]
        simulate: bool,
    },
    /// Parse and check a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: String,
    },
    /// Check the spread differential inequality along a finished run.
    Audit {
        #[arg(long)]
        run: PathBuf,
    },
}

/// Reads `PATH` or `bundled:NAME` into a scenario document.
pub fn read_scenario(source: &str) -> Result<ScenarioFile> {
    let text = match source.strip_prefix("bundled:") {
        Some(name) => bundled(name).ok_or_else(|| FlockError::Scenario(format!("no bundled scenario {name:?}")))?.to_string(),
        None => fs::read_to_string(source).map_err(|e| FlockError::Artifact(format!("{source}: {e}")))?,
    };
    parse_scenario(&text)
}

fn resolve(arg: &ScenarioArg) -> Result<ScenarioFile> {
    let file = read_scenario(&arg.scenario)?;
    Ok(match arg.seed {
        Some(seed) => file.with_seed(seed),
        None => file,
    })
}

pub fn termination_exit_code(t: &Termination) -> i32 {
    match t {
        Termination::Completed => EXIT_OK,
        Termination::CollisionEvent { .. } => EXIT_COLLISION,
        Termination::StepSizeUnderflow { .. } => EXIT_UNDERFLOW,
    }
}

pub fn cmd_simulate(file: &ScenarioFile, out: &Path, full: bool) -> Result<RunArtifacts> {
    let scenario = materialize(file)?;
    log::info!("simulating {} (n = {}, r = {}, seed = {})", scenario.name(), file.n, file.r, file.seed);
    simulate_to_dir(&scenario, out, full)
}

pub fn cmd_certify(file: &ScenarioFile) -> Result<Certificate> {
    materialize(file)?.certify()
}

pub fn cmd_validate(file: &ScenarioFile) -> Vec<String> {
    let mut diags = file.validate();
    if diags.is_empty() {
        if let Err(e) = materialize(file) {
            diags.push(e.to_string());
        }
    }
    diags
}

/// Audit outcome for a run directory.
#[derive(Debug, Clone)]
pub struct AuditOutcome {
    pub lemma: &'static str,
    pub k_used: Option<f64>,
    pub report: ViolationReport,
}

impl AuditOutcome {
    pub fn to_text(&self) -> String {
        let mut out = format!("lemma = {}\n", self.lemma);
        if let Some(k) = self.k_used {
            out += &format!("K_used = {}\n", fmt_num(k));
        }
        out += &format!("intervals_checked = {}\n", self.report.checked);
        out += &format!("violations = {}\n", self.report.count());
        out += &format!("worst_margin = {}\n", fmt_num(self.report.worst_margin));
        for v in &self.report.violations {
            out += &format!("violation t = {} quotient = {} bound = {} margin = {}\n", fmt_num(v.t), fmt_num(v.quotient), fmt_num(v.bound), fmt_num(v.margin));
        }
        out
    }
}

pub fn cmd_audit(run: &Path) -> Result<AuditOutcome> {
    let (manifest, scenario, samples) = artifacts::load_run(run)?;
    let tol = AuditTolerance { rtol: scenario.integrator().rtol, atol: scenario.integrator().atol };
    let out = match scenario.spec.variant {
        ModelVariant::CollisionFree => AuditOutcome { lemma: "collision", k_used: None, report: verify_lemma_collision(&samples, &scenario.spec, tol)? },
        ModelVariant::Sync | ModelVariant::Baseline => {
            let k = match (manifest.k_used, scenario.spec.variant) {
                (Some(k), _) => k,
                (None, ModelVariant::Baseline) => 0.0,
                (None, _) => scenario.k_bound()?.0,
            };
            AuditOutcome { lemma: "sync", k_used: Some(k), report: verify_lemma_sync(&samples, &scenario.envelope, scenario.spec.n, k, tol)? }
        }
    };
    fs::write(run.join("audit.txt"), out.to_text())?;
    Ok(out)
}

/// One sweep axis: a scenario path (or `seed`) and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<Value>,
}

fn parse_scalar(s: &str) -> Value {
    serde_json::from_str(s.trim()).unwrap_or_else(|_| Value::String(s.trim().to_string()))
}

pub fn parse_axis(spec: &str) -> Result<Axis> {
    let (key, rhs) = spec.split_once('=').ok_or_else(|| FlockError::InvalidInput(format!("axis `{spec}` is not key=values")))?;
    let key = key.trim().to_string();
    if key.is_empty() {
        return Err(FlockError::InvalidInput(format!("axis `{spec}` has an empty key")));
    }
    let parts: Vec<&str> = rhs.split(':').collect();
    let values = if parts.len() == 3 {
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| FlockError::InvalidInput(format!("axis `{spec}`: {e}")));
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || !(stop >= start) {
            return Err(FlockError::InvalidInput(format!("axis `{spec}` needs start <= stop and step > 0")));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| {
                let v = ((start + k as f64 * step) * 1e12).round() / 1e12;
                if key == "seed" {
                    Value::from(v as u64)
                } else {
                    Value::from(v)
                }
            })
            .collect()
    } else if parts.len() == 1 {
        rhs.split(',').filter(|s| !s.trim().is_empty()).map(parse_scalar).collect::<Vec<_>>()
    } else {
        return Err(FlockError::InvalidInput(format!("axis `{spec}`: range must be start:stop:step")));
    };
    if values.is_empty() {
        return Err(FlockError::InvalidInput(format!("axis `{spec}` has no values")));
    }
    Ok(Axis { key, values })
}

/// Result of one sweep point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub index: usize,
    pub values: Vec<Value>,
    pub seed: u64,
    pub certificate: Option<Certificate>,
    pub epsilon_obs: Option<f64>,
    pub termination: Option<Termination>,
    pub error: Option<String>,
}

fn cartesian(axes: &[Axis]) -> Vec<Vec<Value>> {
    let mut out = vec![vec![]];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect();
    }
    out
}

/// Fitted decay rate of `S(v)` over the part of the run above the noise floor.
pub fn observed_rate(samples: &[crate::FlockState]) -> Result<f64> {
    let s0 = spread_value(samples[0].v.view());
    let floor = 1e-8 * s0;
    let tb = samples.iter().take_while(|s| spread_value(s.v.view()) > floor).last().map(|s| s.t).unwrap_or(samples[0].t);
    decay_rate_fit(samples, (samples[0].t, tb))
}

fn sweep_point(base: &ScenarioFile, axes: &[Axis], index: usize, values: Vec<Value>, simulate: bool) -> SweepPoint {
    let mut seed = base.seed.wrapping_add(index as u64);
    let mut overrides = vec![];
    let mut seed_err = None;
    for (axis, v) in axes.iter().zip(&values) {
        if axis.key == "seed" {
            match v.as_u64() {
                Some(s) => seed = s,
                None => seed_err = Some(format!("seed value {v} is not a non-negative integer")),
            }
        } else {
            overrides.push((axis.key.clone(), v.clone()));
        }
    }
    let mut point = SweepPoint { index, values, seed, certificate: None, epsilon_obs: None, termination: None, error: seed_err.clone() };
    if seed_err.is_some() {
        return point;
    }
    let run = || -> Result<(Certificate, Option<(f64, Termination)>)> {
        let file = with_overrides(base, &overrides)?.with_seed(seed);
        let scenario = materialize(&file)?;
        let cert = scenario.certify()?;
        let sim = if simulate {
            let traj = run_model(&scenario.spec, &scenario.state0, scenario.integrator())?;
            Some((observed_rate(&traj.samples)?, traj.termination))
        } else {
            None
        };
        Ok((cert, sim))
    };
    match run() {
        Ok((cert, sim)) => {
            point.certificate = Some(cert);
            if let Some((eps, term)) = sim {
                point.epsilon_obs = Some(eps);
                point.termination = Some(term);
            }
        }
        Err(e) => {
            log::warn!("sweep point {index} failed: {e}");
            point.error = Some(e.to_string());
        }
    }
    point
}

/// Evaluates every point of the product, at most `jobs` at a time, in index order.
pub fn run_sweep(base: &ScenarioFile, axes: &[Axis], jobs: usize, simulate: bool) -> Result<Vec<SweepPoint>> {
    let grid = cartesian(axes);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| FlockError::InvalidInput(e.to_string()))?;
    Ok(pool.install(|| grid.into_par_iter().enumerate().map(|(i, vals)| sweep_point(base, axes, i, vals, simulate)).collect()))
}

fn value_cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(f) if !n.is_u64() && !n.is_i64() => fmt_num(f),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

pub fn write_sweep_csv(path: &Path, axes: &[Axis], points: &[SweepPoint], simulate: bool) -> Result<()> {
    let mut cert_keys: Vec<&'static str> = vec![];
    for p in points {
        if let Some(c) = &p.certificate {
            for (k, _) in c.fields() {
                if !cert_keys.contains(&k) {
                    cert_keys.push(k);
                }
            }
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec!["index".into()];
    header.extend(axes.iter().map(|a| a.key.clone()));
    header.push("seed_used".into());
    header.extend(cert_keys.iter().map(|k| k.to_string()));
    if simulate {
        header.push("epsilon_obs".into());
        header.push("termination".into());
    }
    header.push("error".into());
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![p.index.to_string()];
        row.extend(p.values.iter().map(value_cell));
        row.push(p.seed.to_string());
        let fields = p.certificate.as_ref().map(|c| c.fields()).unwrap_or_default();
        for k in &cert_keys {
            row.push(fields.iter().find(|(fk, _)| fk == k).map(|(_, v)| v.clone()).unwrap_or_default());
        }
        if simulate {
            row.push(p.epsilon_obs.map(fmt_num).unwrap_or_default());
            row.push(match &p.termination {
                None => String::new(),
                Some(Termination::Completed) => "completed".into(),
                Some(Termination::CollisionEvent { .. }) => "collision_event".into(),
                Some(Termination::StepSizeUnderflow { .. }) => "step_size_underflow".into(),
            });
        }
        row.push(p.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate { scenario, out, full } => {
            let file = resolve(&scenario)?;
            let art = cmd_simulate(&file, &out, full)?;
            let last = art.trajectory.last();
            println!("{}: {:?}", file.name, art.trajectory.termination);
            println!("samples = {}, t_last = {}, S_v = {}", art.trajectory.samples.len(), fmt_num(last.t), fmt_num(spread_value(last.v.view())));
            println!("artifacts written to {}", out.display());
            Ok(termination_exit_code(&art.trajectory.termination))
        }
        Command::Certify { scenario, out } => {
            let file = resolve(&scenario)?;
            let cert = cmd_certify(&file)?;
            let report = cert.to_report();
            print!("{report}");
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                fs::write(out.join(artifacts::CERTIFICATE), &report)?;
            }
            Ok(if cert.feasible() { EXIT_OK } else { EXIT_INFEASIBLE })
        }
        Command::Sweep { scenario, axes, out, jobs, simulate } => {
            let file = resolve(&scenario)?;
            let axes = axes.iter().map(|a| parse_axis(a)).collect::<Result<Vec<_>>>()?;
            let points = run_sweep(&file, &axes, jobs, simulate)?;
            fs::create_dir_all(&out)?;
            let path = out.join("sweep.csv");
            write_sweep_csv(&path, &axes, &points, simulate)?;
            let failed = points.iter().filter(|p| p.error.is_some()).count();
            let feasible = points.iter().filter(|p| p.certificate.as_ref().is_some_and(Certificate::feasible)).count();
            println!("{} points, {feasible} feasible, {failed} failed; wrote {}", points.len(), path.display());
            Ok(EXIT_OK)
        }
        Command::Validate { scenario } => {
            let file = read_scenario(&scenario)?;
            let diags = cmd_validate(&file);
            if diags.is_empty() {
                println!("{}: ok", file.name);
                Ok(EXIT_OK)
            } else {
                for d in &diags {
                    println!("{d}");
                }
                Ok(EXIT_INFEASIBLE)
            }
        }
        Command::Audit { run } => {
            let out = cmd_audit(&run)?;
            print!("{}", out.to_text());
            Ok(if out.report.is_clean() { EXIT_OK } else { EXIT_INFEASIBLE })
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("FLOCKLAB_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}
