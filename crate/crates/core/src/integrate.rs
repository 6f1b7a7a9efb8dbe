//! Adaptive Bogacki–Shampine 3(2) integration with dense output on a uniform
//! sampling grid and collision event detection.

use serde::{Deserialize, Serialize};

use crate::error::{FlockError, Result};
use crate::models::{ModelSpec, ModelVariant};
use crate::state::{min_pair_distance_sq, FlockState};

/// A first-order system `ẏ = f(t, y)` on a flat state vector.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

/// Adapter for closures.
pub struct FnSystem<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> OdeSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        (self.f)(t, y, dy);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default)]
    pub h_init: Option<f64>,
    #[serde(default)]
    pub h_max: Option<f64>,
    pub t_end: f64,
    pub sample_dt: f64,
    #[serde(default = "default_collision_margin")]
    pub collision_margin: f64,
}

fn default_rtol() -> f64 {
    1e-6
}
fn default_atol() -> f64 {
    1e-9
}
fn default_collision_margin() -> f64 {
    1e-9
}

impl IntegratorConfig {
    pub fn new(t_end: f64, sample_dt: f64) -> Self {
        Self {
            rtol: default_rtol(),
            atol: default_atol(),
            h_init: None,
            h_max: None,
            t_end,
            sample_dt,
            collision_margin: default_collision_margin(),
        }
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn validate(&self, t0: f64) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.rtol) || !positive(self.atol) {
            return Err(FlockError::InvalidInput("rtol and atol must be positive".into()));
        }
        if !(self.t_end > t0 && self.t_end.is_finite()) {
            return Err(FlockError::InvalidInput(format!("t_end = {} must exceed t0 = {t0}", self.t_end)));
        }
        if !positive(self.sample_dt) {
            return Err(FlockError::InvalidInput("sample_dt must be positive".into()));
        }
        if self.h_init.is_some_and(|h| !positive(h)) || self.h_max.is_some_and(|h| !positive(h)) {
            return Err(FlockError::InvalidInput("step bounds must be positive".into()));
        }
        if !(self.collision_margin >= 0.0) {
            return Err(FlockError::InvalidInput("collision_margin must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Uniform output times `t0, t0 + dt, …`, closed by `t_end`.
    pub fn sample_times(&self, t0: f64) -> Vec<f64> {
        let span = self.t_end - t0;
        let count = (span / self.sample_dt - 1e-9).ceil().max(1.0) as usize;
        (0..=count).map(|k| if k == count { self.t_end } else { t0 + k as f64 * self.sample_dt }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    CollisionEvent { t: f64, i: usize, j: usize },
    StepSizeUnderflow { t: f64 },
}

impl Termination {
    pub fn is_completed(&self) -> bool {
        matches!(self, Termination::Completed)
    }
}

/// Solution on the output grid of a flat system.
#[derive(Debug, Clone)]
pub struct RawSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
    pub termination: Termination,
}

/// Event function: value whose sign change ends the run, plus an agent pair.
pub type EventFn<'a> = dyn Fn(&[f64]) -> (f64, usize, usize) + 'a;

// Bogacki–Shampine 3(2) tableau.
const C2: f64 = 0.5;
const C3: f64 = 0.75;
const A21: f64 = 0.5;
const A32: f64 = 0.75;
const B1: f64 = 2.0 / 9.0;
const B2: f64 = 1.0 / 3.0;
const B3: f64 = 4.0 / 9.0;
// Third-order minus embedded second-order weights.
const E1: f64 = 2.0 / 9.0 - 7.0 / 24.0;
const E2: f64 = 1.0 / 3.0 - 1.0 / 4.0;
const E3: f64 = 4.0 / 9.0 - 1.0 / 3.0;
const E4: f64 = -1.0 / 8.0;

const BISECTION_STEPS: usize = 20;

fn hermite(y0: &[f64], f0: &[f64], y1: &[f64], f1: &[f64], h: f64, theta: f64, out: &mut [f64]) {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    for k in 0..out.len() {
        out[k] = h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k];
    }
}

// Hairer–Wanner starting step for a method of order 3.
fn initial_step<S: OdeSystem + ?Sized>(sys: &S, t0: f64, y0: &[f64], f0: &[f64], cfg: &IntegratorConfig, span: f64) -> f64 {
    let scale: Vec<f64> = y0.iter().map(|y| cfg.atol + cfg.rtol * y.abs()).collect();
    let d0 = y0.iter().zip(&scale).fold(0.0f64, |m, (y, s)| m.max((y / s).abs()));
    let d1 = f0.iter().zip(&scale).fold(0.0f64, |m, (f, s)| m.max((f / s).abs()));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    if sys.rhs(t0 + h0, &y1, &mut f1).is_err() {
        return h0 * 1e-3;
    }
    let d2 = f1.iter().zip(f0).zip(&scale).fold(0.0f64, |m, ((a, b), s)| m.max(((a - b) / s).abs())) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(1.0 / 3.0) };
    (100.0 * h0).min(h1).min(span)
}

/// Integrates `sys` from `(t0, y0)` to `cfg.t_end`.
///
/// A step is accepted when `max_k |e_k| / (atol + rtol·max(|y_k|, |y_k^new|)) ≤ 1`
/// and the next step is scaled by `min(5, max(0.2, 0.9·err^{−1/3}))`. Stages
/// whose right-hand side fails (singular region, non-finite values) are
/// treated as rejected steps.
pub fn solve<S: OdeSystem + ?Sized>(sys: &S, t0: f64, y0: &[f64], cfg: &IntegratorConfig, event: Option<&EventFn<'_>>) -> Result<RawSolution> {
    cfg.validate(t0)?;
    let dim = sys.dim();
    if y0.len() != dim {
        return Err(FlockError::DimensionMismatch { expected: dim, got: y0.len() });
    }
    let span = cfg.t_end - t0;
    let h_min = 1e-14 * span;
    let h_max = cfg.h_max.unwrap_or(span);
    let grid = cfg.sample_times(t0);

    let mut y = y0.to_vec();
    let mut f0 = vec![0.0; dim];
    sys.rhs(t0, &y, &mut f0)?;
    let mut h = cfg.h_init.unwrap_or_else(|| initial_step(sys, t0, &y, &f0, cfg, span)).min(h_max);

    let mut out_t = vec![t0];
    let mut out_y = vec![y.clone()];
    let mut next_sample = 1;
    let mut event_prev = event.map(|ev| ev(&y).0);

    let (mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut dense = vec![0.0; dim];
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let mut t = t0;

    while t < cfg.t_end {
        let last = t + h >= cfg.t_end - h_min;
        if last {
            h = cfg.t_end - t;
        }
        if h < h_min {
            return Ok(RawSolution { times: out_t, states: out_y, accepted, rejected, termination: Termination::StepSizeUnderflow { t } });
        }

        let stages_ok = (|| -> Result<()> {
            for k in 0..dim {
                stage[k] = y[k] + h * A21 * f0[k];
            }
            sys.rhs(t + C2 * h, &stage, &mut k2)?;
            for k in 0..dim {
                stage[k] = y[k] + h * A32 * k2[k];
            }
            sys.rhs(t + C3 * h, &stage, &mut k3)?;
            for k in 0..dim {
                y_new[k] = y[k] + h * (B1 * f0[k] + B2 * k2[k] + B3 * k3[k]);
            }
            if y_new.iter().any(|v| !v.is_finite()) {
                return Err(FlockError::NonFinite("step".into()));
            }
            sys.rhs(t + h, &y_new, &mut k4)
        })();
        if stages_ok.is_err() {
            rejected += 1;
            h *= 0.25;
            continue;
        }

        let mut err = 0.0f64;
        for k in 0..dim {
            let e = h * (E1 * f0[k] + E2 * k2[k] + E3 * k3[k] + E4 * k4[k]);
            let sc = cfg.atol + cfg.rtol * y[k].abs().max(y_new[k].abs());
            err = err.max(e.abs() / sc);
        }
        if !err.is_finite() {
            rejected += 1;
            h *= 0.2;
            continue;
        }

        if err <= 1.0 {
            let t_new = if last { cfg.t_end } else { t + h };

            if let (Some(ev), Some(prev)) = (event, event_prev) {
                let (value, _, _) = ev(&y_new);
                if prev > 0.0 && value <= 0.0 {
                    // The event lies in (t, t_new]; bisect on the dense output.
                    let (mut lo, mut hi) = (0.0f64, 1.0f64);
                    for _ in 0..BISECTION_STEPS {
                        let mid = 0.5 * (lo + hi);
                        hermite(&y, &f0, &y_new, &k4, h, mid, &mut dense);
                        if ev(&dense).0 > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let t_event = t + hi * h;
                    while next_sample < grid.len() && grid[next_sample] < t_event {
                        hermite(&y, &f0, &y_new, &k4, h, (grid[next_sample] - t) / h, &mut dense);
                        out_t.push(grid[next_sample]);
                        out_y.push(dense.clone());
                        next_sample += 1;
                    }
                    hermite(&y, &f0, &y_new, &k4, h, hi, &mut dense);
                    let (_, i, j) = ev(&dense);
                    out_t.push(t_event);
                    out_y.push(dense.clone());
                    accepted += 1;
                    return Ok(RawSolution {
                        times: out_t,
                        states: out_y,
                        accepted,
                        rejected,
                        termination: Termination::CollisionEvent { t: t_event, i, j },
                    });
                }
                event_prev = Some(value);
            }

            while next_sample < grid.len() && grid[next_sample] <= t_new {
                let ts = grid[next_sample];
                if ts == t_new {
                    out_y.push(y_new.clone());
                } else {
                    hermite(&y, &f0, &y_new, &k4, h, (ts - t) / h, &mut dense);
                    out_y.push(dense.clone());
                }
                out_t.push(ts);
                next_sample += 1;
            }
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut f0, &mut k4);
            accepted += 1;
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0) };
            h = (h * factor).min(h_max);
        } else {
            rejected += 1;
            h *= (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 1.0);
        }
    }
    Ok(RawSolution { times: out_t, states: out_y, accepted, rejected, termination: Termination::Completed })
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<FlockState>,
    pub accepted: usize,
    pub rejected: usize,
    pub termination: Termination,
}

impl Trajectory {
    fn from_raw(raw: RawSolution, n: usize, r: usize) -> Result<Self> {
        let samples = raw
            .times
            .iter()
            .zip(&raw.states)
            .map(|(&t, y)| FlockState::from_flat(t, n, r, y))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples, accepted: raw.accepted, rejected: raw.rejected, termination: raw.termination })
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &FlockState {
        self.samples.last().expect("trajectory holds the initial state")
    }
}

fn check_state(spec: &ModelSpec, state0: &FlockState) -> Result<()> {
    if state0.n() != spec.n || state0.r() != spec.r {
        return Err(FlockError::DimensionMismatch { expected: spec.n * spec.r, got: state0.n() * state0.r() });
    }
    Ok(())
}

/// Integrates a model without event monitoring.
pub fn integrate(spec: &ModelSpec, state0: &FlockState, cfg: &IntegratorConfig) -> Result<Trajectory> {
    check_state(spec, state0)?;
    let raw = solve(spec, state0.t, &state0.to_flat(), cfg, None)?;
    Trajectory::from_raw(raw, spec.n, spec.r)
}

/// Integrates a collision-free model and stops when the smallest squared
/// separation reaches `d0 + collision_margin`.
pub fn integrate_with_collision_event(spec: &ModelSpec, state0: &FlockState, cfg: &IntegratorConfig) -> Result<Trajectory> {
    check_state(spec, state0)?;
    if spec.variant != ModelVariant::CollisionFree {
        return Err(FlockError::InvalidInput("collision events need a collision-free model".into()));
    }
    let d0 = spec.repulsion.as_ref().expect("validated").d0;
    let threshold = d0 + cfg.collision_margin;
    let (min_sq, i, j) = min_pair_distance_sq(state0.x.view())?;
    if !(min_sq > threshold) {
        return Err(FlockError::SingularDomain { i, j, dist_sq: min_sq, d0 });
    }
    let nr = spec.n * spec.r;
    let (n, r) = (spec.n, spec.r);
    let event = move |y: &[f64]| {
        let x = ndarray::ArrayView2::from_shape((n, r), &y[..nr]).expect("flat layout");
        let (d, i, j) = min_pair_distance_sq(x).expect("n ≥ 2");
        (d - threshold, i, j)
    };
    let raw = solve(spec, state0.t, &state0.to_flat(), cfg, Some(&event))?;
    Trajectory::from_raw(raw, n, r)
}

/// Dispatches on the model variant.
pub fn run_model(spec: &ModelSpec, state0: &FlockState, cfg: &IntegratorConfig) -> Result<Trajectory> {
    match spec.variant {
        ModelVariant::CollisionFree => integrate_with_collision_event(spec, state0, cfg),
        _ => integrate(spec, state0, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::CouplingModel;
    use crate::dynamics::{LogisticCosine, RepulsionModel};
    use ndarray::{array, Array2};

    fn logistic_system() -> FnSystem<impl Fn(f64, &[f64], &mut [f64])> {
        FnSystem { dim: 1, f: |t: f64, z: &[f64], dz: &mut [f64]| dz[0] = t.cos() * (z[0] - 1.0) * (z[0] - 2.0) }
    }

    fn sup_error(sol: &RawSolution) -> f64 {
        sol.times
            .iter()
            .zip(&sol.states)
            .map(|(&t, y)| (y[0] - LogisticCosine::solution(t, 1.5)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_solution_has_no_rejections() {
        let sys = FnSystem { dim: 2, f: |_t: f64, _y: &[f64], dy: &mut [f64]| dy.fill(0.0) };
        let sol = solve(&sys, 0.0, &[3.0, -1.0], &IntegratorConfig::new(5.0, 0.5), None).unwrap();
        assert_eq!(sol.rejected, 0);
        assert!(sol.states.iter().all(|y| (y[0] - 3.0).abs() < 1e-14 && (y[1] + 1.0).abs() < 1e-14));
        assert_eq!(sol.times.len(), 11);
        assert_eq!(*sol.times.last().unwrap(), 5.0);
    }

    #[test]
    fn logistic_nominal_matches_closed_form() {
        let sol = solve(&logistic_system(), 0.0, &[1.5], &IntegratorConfig::new(20.0, 0.01), None).unwrap();
        assert!(sol.termination.is_completed());
        let err = sup_error(&sol);
        assert!(err <= 1e-5, "sup error {err}");
        assert!(sol.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn steps_dividing_the_span_land_on_t_end() {
        for h in [0.2, 0.1, 0.025, 0.3] {
            let cfg = IntegratorConfig { rtol: 1e3, atol: 1e3, h_init: Some(h), h_max: Some(h), ..IntegratorConfig::new(20.0, 20.0) };
            let sol = solve(&logistic_system(), 0.0, &[1.5], &cfg, None).unwrap();
            assert!(sol.termination.is_completed(), "h = {h}: {:?}", sol.termination);
            assert_eq!(sol.times, vec![0.0, 20.0]);
        }
    }

    #[test]
    fn fixed_step_order_is_three() {
        // Force uniform steps: loose tolerances, h_init = h_max = h.
        let mut errs = vec![];
        for h in [0.1, 0.05, 0.025] {
            let cfg = IntegratorConfig { rtol: 1e3, atol: 1e3, h_init: Some(h), h_max: Some(h), ..IntegratorConfig::new(10.0, 0.1) };
            let sol = solve(&logistic_system(), 0.0, &[1.5], &cfg, None).unwrap();
            errs.push(sup_error(&sol));
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 2.8, "order {order} from {errs:?}");
        }
    }

    #[test]
    fn sample_grid_row_count() {
        let cfg = IntegratorConfig::new(1.0, 0.3);
        let times = cfg.sample_times(0.0);
        assert_eq!(times.len(), 5);
        assert_eq!(*times.last().unwrap(), 1.0);
        assert_eq!(IntegratorConfig::new(40.0, 0.05).sample_times(0.0).len(), 801);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(IntegratorConfig::new(0.0, 0.1).validate(0.0).is_err());
        assert!(IntegratorConfig::new(1.0, 0.1).with_tolerances(0.0, 1e-9).validate(0.0).is_err());
    }

    #[test]
    fn underflow_reported() {
        // ẏ = y² blows up at t = 1.
        let sys = FnSystem { dim: 1, f: |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0] };
        let sol = solve(&sys, 0.0, &[1.0], &IntegratorConfig::new(2.0, 0.1), None).unwrap();
        match sol.termination {
            Termination::StepSizeUnderflow { t } => assert!((t - 1.0).abs() < 1e-3, "{t}"),
            other => panic!("expected underflow, got {other:?}"),
        }
    }

    #[test]
    fn event_bisection_locates_crossing() {
        // y = 2 − t crosses 0.6 at t = 1.4.
        let sys = FnSystem { dim: 1, f: |_t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = -1.0 };
        let ev = |y: &[f64]| (y[0] - 0.6, 0, 1);
        let sol = solve(&sys, 0.0, &[2.0], &IntegratorConfig::new(3.0, 0.25), Some(&ev)).unwrap();
        match sol.termination {
            Termination::CollisionEvent { t, .. } => assert!((t - 1.4).abs() < 1e-5, "{t}"),
            other => panic!("{other:?}"),
        }
        assert_eq!(sol.times.len(), 7);
    }

    #[test]
    fn collision_precondition_checked() {
        let rep = RepulsionModel::new(0.25, 1.5, Array2::from_elem((2, 2), 1.0)).unwrap();
        let spec = ModelSpec::collision_free(CouplingModel::Constant(1.0), rep, 2, 1).unwrap();
        let s = FlockState::new(0.0, array![[0.0], [0.3]], array![[0.0], [0.0]]).unwrap();
        assert!(matches!(integrate_with_collision_event(&spec, &s, &IntegratorConfig::new(1.0, 0.1)), Err(FlockError::SingularDomain { .. })));
    }

    #[test]
    fn head_on_agents_stop_before_the_wall() {
        let rep = RepulsionModel::new(0.25, 1.5, Array2::from_elem((2, 2), 0.05)).unwrap();
        let spec = ModelSpec::collision_free(CouplingModel::Constant(0.0), rep, 2, 1).unwrap();
        let s = FlockState::new(0.0, array![[0.0], [3.0]], array![[2.0], [-2.0]]).unwrap();
        let traj = integrate_with_collision_event(&spec, &s, &IntegratorConfig::new(4.0, 0.01)).unwrap();
        for state in &traj.samples {
            let d = crate::state::pairwise_distance_sq(state.x.view(), 0, 1).unwrap();
            assert!(d > 0.25, "t = {} d = {d}", state.t);
        }
        if let Termination::CollisionEvent { i, j, .. } = traj.termination {
            assert_eq!((i, j), (0, 1));
        }
    }
}
