//! Run artifacts: time-series CSV, SVG plots, certificate report and the
//! manifest that pins a run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::plot::{line_plot, Series};
use crate::certify::Certificate;
use crate::error::{FlockError, Result};
use crate::integrate::{run_model, Termination, Trajectory};
use crate::scenario::{materialize, Scenario, ScenarioFile};
use crate::state::{min_pair_distance_sq, pairwise_distance_sq, spread_value, FlockState};

pub const TIMESERIES: &str = "timeseries.csv";
pub const CERTIFICATE: &str = "certificate.txt";
pub const MANIFEST: &str = "manifest.json";
pub const PLOT_VELOCITIES: &str = "velocities.svg";
pub const PLOT_DISTANCES: &str = "distances.svg";
pub const PLOT_SPREAD: &str = "spread_v.svg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub scenario: ScenarioFile,
    pub scenario_sha256: String,
    pub seed: u64,
    pub version: String,
    pub termination: Termination,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub samples: usize,
    pub full_state: bool,
    pub k_used: Option<f64>,
    pub files: Vec<String>,
}

/// SHA-256 of the normalized scenario JSON.
pub fn scenario_digest(file: &ScenarioFile) -> String {
    hex::encode(Sha256::digest(file.to_json_pretty().as_bytes()))
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub timeseries: PathBuf,
    pub plots: Vec<PathBuf>,
    pub certificate: PathBuf,
    pub manifest: PathBuf,
    pub trajectory: Trajectory,
    pub certificate_value: Option<Certificate>,
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(n: usize, r: usize, full: bool) -> Vec<String> {
    let mut h: Vec<String> = ["t", "S_v", "S_x", "min_dist_sq"].iter().map(|s| s.to_string()).collect();
    for i in 0..n {
        for l in 0..r {
            h.push(format!("v_{i}_{l}"));
        }
    }
    if full {
        for i in 0..n {
            for l in 0..r {
                h.push(format!("x_{i}_{l}"));
            }
        }
    }
    h
}

pub fn write_timeseries(path: &Path, samples: &[FlockState], full: bool) -> Result<()> {
    let first = samples.first().ok_or_else(|| FlockError::Artifact("empty trajectory".into()))?;
    let (n, r) = (first.n(), first.r());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_path(path)?;
    w.write_record(header(n, r, full))?;
    for s in samples {
        let min_d = if n >= 2 { min_pair_distance_sq(s.x.view())?.0 } else { 0.0 };
        let mut row = vec![fmt_f64(s.t), fmt_f64(spread_value(s.v.view())), fmt_f64(spread_value(s.x.view())), fmt_f64(min_d)];
        row.extend(s.v.iter().map(|v| fmt_f64(*v)));
        if full {
            row.extend(s.x.iter().map(|v| fmt_f64(*v)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back a full-state time series; `None` when position columns are absent.
pub fn read_timeseries(path: &Path, n: usize, r: usize) -> Result<Option<Vec<FlockState>>> {
    let mut rd = csv::Reader::from_path(path)?;
    let hdr = rd.headers()?.clone();
    let expected_full = header(n, r, true);
    let expected_short = header(n, r, false);
    let cols: Vec<&str> = hdr.iter().collect();
    if cols == expected_short.iter().map(String::as_str).collect::<Vec<_>>() {
        return Ok(None);
    }
    if cols != expected_full.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(FlockError::Artifact(format!("unexpected CSV header in {}", path.display())));
    }
    let nr = n * r;
    let mut samples = vec![];
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| FlockError::Artifact(format!("row {}: {e}", k + 1))))
            .collect::<Result<_>>()?;
        if vals.len() != 4 + 2 * nr {
            return Err(FlockError::Artifact(format!("row {} has {} fields", k + 1, vals.len())));
        }
        let mut flat = vals[4 + nr..].to_vec();
        flat.extend_from_slice(&vals[4..4 + nr]);
        samples.push(FlockState::from_flat(vals[0], n, r, &flat)?);
    }
    Ok(Some(samples))
}

pub fn plots(samples: &[FlockState]) -> Vec<(&'static str, String)> {
    let Some(first) = samples.first() else { return vec![] };
    let (n, r) = (first.n(), first.r());
    let mut vel = vec![];
    for i in 0..n {
        for l in 0..r {
            let label = if r == 1 { format!("v_{i}") } else { format!("v_{i}^({l})") };
            vel.push(Series { label, points: samples.iter().map(|s| (s.t, s.v[[i, l]])).collect() });
        }
    }
    let mut dist = vec![];
    for i in 0..n {
        for j in i + 1..n {
            dist.push(Series {
                label: format!("|x_{i} - x_{j}|"),
                points: samples.iter().map(|s| (s.t, pairwise_distance_sq(s.x.view(), i, j).map(f64::sqrt).unwrap_or(f64::NAN))).collect(),
            });
        }
    }
    let sv = vec![Series { label: "S(v)".into(), points: samples.iter().map(|s| (s.t, spread_value(s.v.view()))).collect() }];
    vec![
        (PLOT_VELOCITIES, line_plot("Velocities", "t", "v_i", &vel, false)),
        (PLOT_DISTANCES, line_plot("Pairwise distances", "t", "|x_i - x_j|", &dist, false)),
        (PLOT_SPREAD, line_plot("Velocity spread", "t", "S(v) (log scale)", &sv, true)),
    ]
}

/// Simulates a scenario and writes every artifact into `dir`.
pub fn simulate_to_dir(scenario: &Scenario, dir: &Path, full: bool) -> Result<RunArtifacts> {
    fs::create_dir_all(dir)?;
    let trajectory = run_model(&scenario.spec, &scenario.state0, scenario.integrator())?;
    let timeseries = dir.join(TIMESERIES);
    write_timeseries(&timeseries, &trajectory.samples, full)?;

    let mut plot_paths = vec![];
    for (name, svg) in plots(&trajectory.samples) {
        let p = dir.join(name);
        fs::write(&p, svg)?;
        plot_paths.push(p);
    }

    let cert = scenario.certify();
    let certificate = dir.join(CERTIFICATE);
    let (report, k_used, certificate_value) = match cert {
        Ok(c) => {
            let k = match &c {
                Certificate::Sync(s) => Some(s.k_used),
                _ => None,
            };
            (c.to_report(), k, Some(c))
        }
        Err(e) => (format!("kind = unavailable\nerror = {e}\n"), None, None),
    };
    fs::write(&certificate, report)?;

    let mut files = vec![TIMESERIES.to_string()];
    files.extend(plot_paths.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()));
    files.push(CERTIFICATE.into());
    let manifest = Manifest {
        scenario: scenario.file.clone(),
        scenario_sha256: scenario_digest(&scenario.file),
        seed: scenario.file.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        termination: trajectory.termination.clone(),
        accepted_steps: trajectory.accepted,
        rejected_steps: trajectory.rejected,
        samples: trajectory.samples.len(),
        full_state: full,
        k_used,
        files,
    };
    let manifest_path = dir.join(MANIFEST);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(RunArtifacts { dir: dir.to_path_buf(), timeseries, plots: plot_paths, certificate, manifest: manifest_path, trajectory, certificate_value })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| FlockError::Artifact(format!("{}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| FlockError::Artifact(format!("{}: {e}", path.display())))?;
    if scenario_digest(&manifest.scenario) != manifest.scenario_sha256 {
        return Err(FlockError::Artifact("scenario digest does not match the manifest".into()));
    }
    Ok(manifest)
}

/// Samples for an audit: read from the CSV when it holds the full state,
/// otherwise re-simulated from the manifest.
pub fn load_run(dir: &Path) -> Result<(Manifest, Scenario, Vec<FlockState>)> {
    let manifest = read_manifest(dir)?;
    let scenario = materialize(&manifest.scenario)?;
    let (n, r) = (scenario.spec.n, scenario.spec.r);
    let csv_path = dir.join(TIMESERIES);
    let from_csv = if csv_path.exists() { read_timeseries(&csv_path, n, r)? } else { None };
    let samples = match from_csv {
        Some(s) => s,
        None => run_model(&scenario.spec, &scenario.state0, scenario.integrator())?.samples,
    };
    Ok((manifest, scenario, samples))
}
