//! Certificates for flocking and synchronization, the contraction
//! coefficient, and audits of the spread differential inequalities along
//! sampled trajectories.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::coupling::Envelope;
use crate::dynamics::{k_pair, InternalDynamics, RepulsionModel};
use crate::error::{FlockError, Result};
use crate::models::{ModelSpec, ModelVariant};
use crate::numeric::bisect;
use crate::state::{distance_sq_unchecked, min_pair_distance_sq, spread, spread_value, FlockState};

const ROOT_TOL: f64 = 1e-10;
const ROOT_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionResult {
    pub row_sum: f64,
    pub tau: f64,
    pub pair: (usize, usize),
}

/// `τ = m − min_{i≠i'} Σ_k min{p_ik, p_i'k}` for a nonnegative matrix with
/// constant row sums `m`.
pub fn contraction_coefficient(p: ArrayView2<f64>, row_sum_tol: f64) -> Result<ContractionResult> {
    let (n, cols) = p.dim();
    if n != cols || n == 0 {
        return Err(FlockError::InvalidInput(format!("expected a non-empty square matrix, got {n}×{cols}")));
    }
    if let Some(bad) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(FlockError::InvalidInput(format!("negative or non-finite entry {bad}")));
    }
    let sums: Vec<f64> = p.rows().into_iter().map(|row| row.sum()).collect();
    let m = sums[0];
    if let Some((i, s)) = sums.iter().enumerate().find(|(_, s)| (**s - m).abs() > row_sum_tol) {
        return Err(FlockError::InvalidInput(format!("row {i} sums to {s}, row 0 to {m}")));
    }
    let mut best = (m, (0, 0));
    for i in 0..n {
        for i2 in i + 1..n {
            let overlap: f64 = (0..n).map(|k| p[[i, k]].min(p[[i2, k]])).sum();
            if overlap < best.0 {
                best = (overlap, (i, i2));
            }
        }
    }
    let tau = if n == 1 { 0.0 } else { (m - best.0).clamp(0.0, m) };
    Ok(ContractionResult { row_sum: m, tau, pair: best.1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardCertificate {
    pub s_x0: f64,
    pub s_v0: f64,
    pub psi_tail: f64,
    pub feasible: bool,
}

/// Flocking condition `S(v⁰) < ∫_{S(x⁰)}^∞ ψ`.
pub fn certify_standard(env: &Envelope, state0: &FlockState) -> Result<StandardCertificate> {
    let s_x0 = spread_value(state0.x.view());
    let s_v0 = spread_value(state0.v.view());
    let psi_tail = env.integral(s_x0, f64::INFINITY)?;
    Ok(StandardCertificate { s_x0, s_v0, psi_tail, feasible: s_v0 < psi_tail })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSource {
    Region,
    Trajectory,
    UserSupplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncCertificate {
    pub k_used: f64,
    pub k_source: KSource,
    pub s_x0: f64,
    pub s_v0: f64,
    /// Connectivity factor multiplying ψ: `n`, or 1 when relaxed.
    pub gain: f64,
    pub d_max: f64,
    pub d_star: Option<f64>,
    pub epsilon: Option<f64>,
    pub feasible: bool,
    pub relaxed_connectivity: bool,
}

impl SyncCertificate {
    /// `G(d) = ∫_{S(x⁰)}^d (cψ − K)`.
    pub fn g(&self, env: &Envelope, d: f64) -> Result<f64> {
        sync_gain_integral(env, self.gain, self.k_used, self.s_x0, d)
    }
}

fn sync_gain_integral(env: &Envelope, c: f64, k: f64, a: f64, d: f64) -> Result<f64> {
    if d <= a {
        return Ok(0.0);
    }
    if d.is_infinite() && k > 0.0 {
        // Only reached when cψ − K stays positive on the whole ray.
        return Ok(f64::INFINITY);
    }
    let psi = env.integral(a, d)?;
    if d.is_infinite() {
        return Ok(c * psi);
    }
    Ok(c * psi - k * (d - a))
}

/// Synchronization certificate: finds `d*` with `∫_{S(x⁰)}^{d*} (cψ − K) = S(v⁰)`
/// below `d_max = sup{r : cψ(r) > K}`, and the decay rate `ε = cψ(d*) − K`.
pub fn certify_sync(env: &Envelope, state0: &FlockState, n: usize, k: f64, k_source: KSource, relaxed: bool) -> Result<SyncCertificate> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(FlockError::InvalidInput(format!("K = {k} must be finite and ≥ 0")));
    }
    if n == 0 {
        return Err(FlockError::InvalidInput("n must be positive".into()));
    }
    let c = if relaxed { 1.0 } else { n as f64 };
    let s_x0 = spread_value(state0.x.view());
    let s_v0 = spread_value(state0.v.view());
    let excess = |r: f64| c * env.psi(r) - k;

    let d_max = if excess(0.0) <= 0.0 {
        0.0
    } else {
        let mut hi = s_x0.max(1.0);
        while excess(hi) > 0.0 && hi < 1e15 {
            hi *= 2.0;
        }
        if excess(hi) > 0.0 {
            f64::INFINITY
        } else {
            bisect(excess, 0.0, hi, ROOT_TOL * hi.max(1.0), ROOT_ITER)
        }
    };

    let mut cert = SyncCertificate {
        k_used: k,
        k_source,
        s_x0,
        s_v0,
        gain: c,
        d_max,
        d_star: None,
        epsilon: None,
        feasible: false,
        relaxed_connectivity: relaxed,
    };
    if !(d_max > s_x0) {
        return Ok(cert);
    }
    let g = |d: f64| sync_gain_integral(env, c, k, s_x0, d);
    if !(g(d_max)? > s_v0) {
        return Ok(cert);
    }
    let mut hi = d_max;
    if hi.is_infinite() {
        hi = s_x0 + 1.0;
        while g(hi)? <= s_v0 {
            hi = s_x0 + 2.0 * (hi - s_x0);
        }
    }
    let d_star = if s_v0 == 0.0 {
        s_x0
    } else {
        bisect(|d| g(d).map(|v| v - s_v0).unwrap_or(f64::NAN), s_x0, hi, ROOT_TOL, ROOT_ITER)
    };
    cert.d_star = Some(d_star);
    cert.epsilon = Some(excess(d_star));
    cert.feasible = true;
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionCertificate {
    pub lhs: f64,
    pub psi_term: f64,
    pub repulsion_term: f64,
    pub min_dist_sq: f64,
    pub feasible: bool,
    pub initial_separation_ok: bool,
}

impl CollisionCertificate {
    pub fn margin(&self) -> f64 {
        self.psi_term - self.repulsion_term - self.lhs
    }
}

/// Collision avoidance and flocking condition
/// `S(v⁰)/n < ½∫_{S(x⁰)}^∞ ψ − max_{i≠j} ∫_{‖x_i⁰−x_j⁰‖²}^∞ f_ij`.
pub fn certify_collision(env: &Envelope, rep: &RepulsionModel, state0: &FlockState, n: usize) -> Result<CollisionCertificate> {
    if state0.n() != n || rep.n() != n {
        return Err(FlockError::DimensionMismatch { expected: n, got: state0.n() });
    }
    let x = state0.x.view();
    let lhs = spread_value(state0.v.view()) / n as f64;
    let psi_term = 0.5 * env.integral(spread_value(x), f64::INFINITY)?;
    let (min_dist_sq, _, _) = min_pair_distance_sq(x)?;
    let initial_separation_ok = min_dist_sq > rep.d0;
    if !initial_separation_ok {
        return Ok(CollisionCertificate { lhs, psi_term, repulsion_term: f64::INFINITY, min_dist_sq, feasible: false, initial_separation_ok });
    }
    let mut repulsion_term = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                repulsion_term = repulsion_term.max(rep.tail(i, j, distance_sq_unchecked(x, i, j))?);
            }
        }
    }
    let feasible = if psi_term.is_infinite() { true } else { lhs < psi_term - repulsion_term };
    Ok(CollisionCertificate { lhs, psi_term, repulsion_term, min_dist_sq, feasible, initial_separation_ok })
}

/// Least-squares slope of `−ln S(v(t))` over samples with `t ∈ [t_a, t_b]`.
pub fn decay_rate_fit(samples: &[FlockState], window: (f64, f64)) -> Result<f64> {
    let (ta, tb) = window;
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.t >= ta && s.t <= tb)
        .map(|s| (s.t, spread_value(s.v.view())))
        .collect();
    if pts.len() < 2 || !(tb > ta) {
        return Err(FlockError::InvalidInput(format!("window [{ta}, {tb}] holds {} samples", pts.len())));
    }
    if let Some((t, _)) = pts.iter().find(|(_, s)| !(*s > 0.0)) {
        return Err(FlockError::InvalidInput(format!("S(v) vanishes at t = {t}")));
    }
    decay_rate_fit_series(&pts.iter().map(|p| p.0).collect::<Vec<_>>(), &pts.iter().map(|p| p.1).collect::<Vec<_>>())
}

/// Same fit on a raw `(t, S)` series.
pub fn decay_rate_fit_series(t: &[f64], s: &[f64]) -> Result<f64> {
    if t.len() != s.len() || t.len() < 2 {
        return Err(FlockError::InvalidInput("need at least two samples".into()));
    }
    let m = t.len() as f64;
    let y: Vec<f64> = s.iter().map(|v| -v.ln()).collect();
    let tm = t.iter().sum::<f64>() / m;
    let ym = y.iter().sum::<f64>() / m;
    let sxx: f64 = t.iter().map(|ti| (ti - tm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(FlockError::InvalidInput("degenerate window".into()));
    }
    let sxy: f64 = t.iter().zip(&y).map(|(ti, yi)| (ti - tm) * (yi - ym)).sum();
    Ok(sxy / sxx)
}

/// Post-hoc `K` along sampled velocities. Diagnostic only.
pub fn k_trajectory(g: &dyn InternalDynamics, samples: &[FlockState]) -> Result<f64> {
    let mut k = f64::NEG_INFINITY;
    for s in samples {
        let n = s.n();
        for i in 0..n {
            for i2 in i + 1..n {
                let (a, b) = (s.v.row(i).to_vec(), s.v.row(i2).to_vec());
                for l in 0..g.dim() {
                    k = k.max(k_pair(g, s.t, l, &a, &b)?);
                }
            }
        }
    }
    Ok(k.max(0.0))
}

/// Tolerances for the discrete inequality audits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditTolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for AuditTolerance {
    fn default() -> Self {
        Self { rtol: 1e-6, atol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub quotient: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
    /// Largest `quotient − bound − tolerance` over all intervals.
    pub worst_margin: f64,
}

impl ViolationReport {
    pub fn count(&self) -> usize {
        self.violations.len()
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn max_abs(v: ArrayView2<f64>) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

// Compares the forward difference of S(v) on each output interval against
// the integrated form of S' ≤ −a S − b with coefficients frozen at their
// least favourable endpoint values. The allowed slack on the quotient is
// 10·(rtol·max(S(v), max|v|) + atol)/dt.
fn audit<F>(samples: &[FlockState], tol: AuditTolerance, mut coeffs: F) -> Result<ViolationReport>
where
    F: FnMut(&FlockState) -> Result<(f64, f64)>,
{
    let mut report = ViolationReport { checked: 0, violations: vec![], worst_margin: f64::NEG_INFINITY };
    if samples.len() < 2 {
        return Ok(report);
    }
    let mut prev = coeffs(&samples[0])?;
    for w in samples.windows(2) {
        let (s0, s1) = (spread_value(w[0].v.view()), spread_value(w[1].v.view()));
        let dt = w[1].t - w[0].t;
        if !(dt > 0.0) {
            continue;
        }
        let next = coeffs(&w[1])?;
        let rate = prev.0.min(next.0);
        let shift = prev.1.min(next.1);
        let decay = (-rate * dt).exp();
        let drift = if rate.abs() < 1e-12 { dt } else { (1.0 - decay) / rate };
        let predicted = s0 * decay - shift * drift;
        let quotient = (s1 - s0) / dt;
        let bound = (predicted - s0) / dt;
        let scale = s0.max(max_abs(w[0].v.view())).max(max_abs(w[1].v.view()));
        let slack = 10.0 * (tol.rtol * scale + tol.atol) / dt;
        let margin = quotient - bound - slack;
        report.checked += 1;
        report.worst_margin = report.worst_margin.max(margin);
        if margin > 0.0 {
            report.violations.push(Violation { t: w[0].t, quotient, bound, margin });
        }
        prev = next;
    }
    Ok(report)
}

/// Audits `D⁺S(v) ≤ (K − nψ(S(x)))·S(v)` on consecutive samples.
pub fn verify_lemma_sync(samples: &[FlockState], env: &Envelope, n: usize, k: f64, tol: AuditTolerance) -> Result<ViolationReport> {
    let c = n as f64;
    audit(samples, tol, |s| Ok((c * env.psi(spread_value(s.x.view())) - k, 0.0)))
}

/// `(ρ_{i,i'}, Γ_{i,i'})` at one state, for the spread-maximizing pair.
///
/// Pair terms count both directed weights, so constant all-to-all weights
/// give `ρ = n w`. `Γ` is built from the analytic tail derivatives
/// `d/dt ∫_{‖x_ij‖²}^∞ f_ij = −2 f_ij ⟨x_ij, v_ij⟩`.
pub fn collision_rates(spec: &ModelSpec, state: &FlockState) -> Result<(f64, f64)> {
    let rep = spec.repulsion.as_ref().ok_or_else(|| FlockError::InvalidInput("model has no repulsion".into()))?;
    let rep_spread = spread(state.v.view())?;
    let (i, i2, _) = rep_spread.argmax;
    let x = state.x.view();
    let v = state.v.view();
    let n = state.n();
    if i == i2 {
        return Ok((0.0, 0.0));
    }
    let dtail = |a: usize, b: usize| -> Result<f64> {
        let s = distance_sq_unchecked(x, a, b);
        let f = rep.force(a, b, s)?;
        let inner: f64 = (0..state.r()).map(|l| (x[[a, l]] - x[[b, l]]) * (v[[a, l]] - v[[b, l]])).sum();
        Ok(-2.0 * f * inner)
    };
    let w = |a: usize, b: usize| spec.coupling.weight_unchecked(a, b, state.t, x);
    let mut rho = w(i, i2) + w(i2, i);
    let mut gamma2 = dtail(i, i2)? + dtail(i2, i)?;
    for j in 0..n {
        if j != i && j != i2 {
            rho += w(i, j).min(w(i2, j));
            gamma2 += dtail(i, j)?.min(dtail(i2, j)?);
        }
    }
    Ok((rho, 0.5 * gamma2))
}

/// Audits `D⁺S(v) ≤ −ρ_{i,i'} S(v) − Γ_{i,i'}` on consecutive samples.
pub fn verify_lemma_collision(samples: &[FlockState], spec: &ModelSpec, tol: AuditTolerance) -> Result<ViolationReport> {
    if spec.variant != ModelVariant::CollisionFree {
        return Err(FlockError::InvalidInput("collision audit needs a collision-free model".into()));
    }
    audit(samples, tol, |s| collision_rates(spec, s))
}

/// Any certificate, with a flat `key = value` rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    Standard(StandardCertificate),
    Sync(SyncCertificate),
    Collision(CollisionCertificate),
}

impl Certificate {
    pub fn feasible(&self) -> bool {
        match self {
            Certificate::Standard(c) => c.feasible,
            Certificate::Sync(c) => c.feasible,
            Certificate::Collision(c) => c.feasible,
        }
    }

    /// Ordered `(key, value)` pairs.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_else(|| "infeasible".into());
        match self {
            Certificate::Standard(c) => vec![
                ("kind", "standard".into()),
                ("feasible", c.feasible.to_string()),
                ("S_x0", fmt_num(c.s_x0)),
                ("S_v0", fmt_num(c.s_v0)),
                ("psi_tail", fmt_num(c.psi_tail)),
            ],
            Certificate::Sync(c) => vec![
                ("kind", "sync".into()),
                ("feasible", c.feasible.to_string()),
                ("K_used", fmt_num(c.k_used)),
                ("K_source", format!("{:?}", c.k_source).to_lowercase()),
                ("S_x0", fmt_num(c.s_x0)),
                ("S_v0", fmt_num(c.s_v0)),
                ("gain", fmt_num(c.gain)),
                ("d_max", fmt_num(c.d_max)),
                ("d_star", opt(c.d_star)),
                ("epsilon", opt(c.epsilon)),
                ("relaxed_connectivity", c.relaxed_connectivity.to_string()),
            ],
            Certificate::Collision(c) => vec![
                ("kind", "collision".into()),
                ("feasible", c.feasible.to_string()),
                ("lhs", fmt_num(c.lhs)),
                ("psi_term", fmt_num(c.psi_term)),
                ("repulsion_term", fmt_num(c.repulsion_term)),
                ("min_dist_sq", fmt_num(c.min_dist_sq)),
                ("initial_separation_ok", c.initial_separation_ok.to_string()),
            ],
        }
    }

    pub fn to_report(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Shortest form that round-trips; infinities print as `inf`.
pub fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}
