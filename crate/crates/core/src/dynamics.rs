//! Internal vector fields `g(t, z)`, the segment functional `K(t, l, y, w)`
//! that measures how much `g` can pull agents apart, and singular repulsion
//! families `f_ij`.

use std::fmt;

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{FlockError, Result};
use crate::numeric::GL16;

/// Axis-aligned box `U = [lo_1, hi_1] × … × [lo_r, hi_r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(FlockError::InvalidInput("box bounds must be non-empty and of equal length".into()));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
            return Err(FlockError::InvalidInput("empty or unbounded box".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim() && z.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// All `2^r` vertices.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let r = self.dim();
        (0..1usize << r)
            .map(|mask| (0..r).map(|k| if mask >> k & 1 == 1 { self.hi[k] } else { self.lo[k] }).collect())
            .collect()
    }

    /// Tensor grid with `per_dim` points per axis (endpoints included).
    pub fn grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let per_dim = per_dim.max(2);
        let r = self.dim();
        let total = per_dim.pow(r as u32);
        (0..total)
            .map(|mut idx| {
                (0..r)
                    .map(|k| {
                        let step = idx % per_dim;
                        idx /= per_dim;
                        self.lo[k] + (self.hi[k] - self.lo[k]) * step as f64 / (per_dim - 1) as f64
                    })
                    .collect()
            })
            .collect()
    }
}

/// A nominal vector field `ż = g(t, z)` on `ℝ^r`.
pub trait InternalDynamics: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn eval(&self, t: f64, z: &[f64], out: &mut [f64]);

    /// Row-major `r × r` Jacobian `∂g^(l)/∂z^(h)` written into `out`.
    ///
    /// Defaults to central differences with step `1e-6·max(1, ‖z‖)`.
    fn jacobian(&self, t: f64, z: &[f64], out: &mut [f64]) {
        finite_difference_jacobian(self, t, z, out);
    }

    fn invariant_box(&self) -> Option<BoxRegion> {
        None
    }

    /// True when every Jacobian entry is affine in `z` for fixed `t`.
    fn affine_jacobian(&self) -> bool {
        false
    }

    /// Whether `z` lies in the open domain `V` of `g`.
    fn in_domain(&self, _z: &[f64]) -> bool {
        true
    }
}

pub fn finite_difference_jacobian<G: InternalDynamics + ?Sized>(g: &G, t: f64, z: &[f64], out: &mut [f64]) {
    let r = g.dim();
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = 1e-6 * norm.max(1.0);
    let mut zp = z.to_vec();
    let mut fp = vec![0.0; r];
    let mut fm = vec![0.0; r];
    for col in 0..r {
        zp[col] = z[col] + h;
        g.eval(t, &zp, &mut fp);
        zp[col] = z[col] - h;
        g.eval(t, &zp, &mut fm);
        zp[col] = z[col];
        for row in 0..r {
            out[row * r + col] = (fp[row] - fm[row]) / (2.0 * h);
        }
    }
}

/// `g ≡ 0`.
#[derive(Debug, Clone)]
pub struct ZeroDynamics {
    pub dim: usize,
}

impl InternalDynamics for ZeroDynamics {
    fn name(&self) -> &str {
        "zero"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _t: f64, _z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn jacobian(&self, _t: f64, _z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn affine_jacobian(&self) -> bool {
        true
    }
}

/// Scalar field `g(t, z) = cos(t)(z − 1)(z − 2)` with invariant interval `[1, 2]`.
#[derive(Debug, Clone, Default)]
pub struct LogisticCosine;

impl LogisticCosine {
    /// Closed-form solution of `ż = g(t, z)`, `z(0) = z0`, for `z0 ≠ 1`.
    pub fn solution(t: f64, z0: f64) -> f64 {
        let c = (z0 - 2.0) / (z0 - 1.0);
        let e = c * t.sin().exp();
        (2.0 - e) / (1.0 - e)
    }
}

impl InternalDynamics for LogisticCosine {
    fn name(&self) -> &str {
        "logistic_cosine"
    }
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, t: f64, z: &[f64], out: &mut [f64]) {
        out[0] = t.cos() * (z[0] - 1.0) * (z[0] - 2.0);
    }
    fn jacobian(&self, t: f64, z: &[f64], out: &mut [f64]) {
        out[0] = t.cos() * (2.0 * z[0] - 3.0);
    }
    fn invariant_box(&self) -> Option<BoxRegion> {
        Some(BoxRegion { lo: vec![1.0], hi: vec![2.0] })
    }
    fn affine_jacobian(&self) -> bool {
        true
    }
}

/// The Lorenz system with the classical parameters (10, 28, 8/3).
#[derive(Debug, Clone)]
pub struct Lorenz {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for Lorenz {
    fn default() -> Self {
        Self { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0 }
    }
}

impl InternalDynamics for Lorenz {
    fn name(&self) -> &str {
        "lorenz"
    }
    fn dim(&self) -> usize {
        3
    }
    fn eval(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        out[0] = self.sigma * (z[1] - z[0]);
        out[1] = -z[1] + z[0] * (self.rho - z[2]);
        out[2] = -self.beta * z[2] + z[0] * z[1];
    }
    fn jacobian(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[
            -self.sigma,
            self.sigma,
            0.0,
            self.rho - z[2],
            -1.0,
            -z[0],
            z[1],
            z[0],
            -self.beta,
        ]);
    }
    /// The box `[−17, 17.5] × [−22, 24.5] × [7, 45]` around the attractor.
    fn invariant_box(&self) -> Option<BoxRegion> {
        Some(BoxRegion { lo: vec![-17.0, -22.0, 7.0], hi: vec![17.5, 24.5, 45.0] })
    }
    fn affine_jacobian(&self) -> bool {
        true
    }
}

/// Looks up a built-in field by its scenario name.
pub fn builtin(name: &str, r: usize) -> Result<Box<dyn InternalDynamics>> {
    let g: Box<dyn InternalDynamics> = match name {
        "zero" => Box::new(ZeroDynamics { dim: r }),
        "logistic_cosine" => Box::new(LogisticCosine),
        "lorenz" => Box::new(Lorenz::default()),
        other => return Err(FlockError::InvalidInput(format!("unknown internal dynamics {other:?}"))),
    };
    if g.dim() != r {
        return Err(FlockError::DimensionMismatch { expected: g.dim(), got: r });
    }
    Ok(g)
}

/// `K(t, l, y, w) = ∫₀¹ ∂_l g^(l) dq + Σ_{h≠l} |∫₀¹ ∂_h g^(l) dq|` along the
/// segment `q y + (1 − q) w`, by 16-point Gauss–Legendre.
pub fn k_pair(g: &dyn InternalDynamics, t: f64, l: usize, y: &[f64], w: &[f64]) -> Result<f64> {
    let r = g.dim();
    if y.len() != r || w.len() != r {
        return Err(FlockError::DimensionMismatch { expected: r, got: y.len().min(w.len()) });
    }
    if l >= r {
        return Err(FlockError::IndexOutOfRange { index: l, limit: r });
    }
    let mut row_integral = vec![0.0; r];
    let mut jac = vec![0.0; r * r];
    let mut z = vec![0.0; r];
    for (&q, &weight) in GL16.nodes.iter().zip(&GL16.weights) {
        for k in 0..r {
            z[k] = q * y[k] + (1.0 - q) * w[k];
        }
        g.jacobian(t, &z, &mut jac);
        for h in 0..r {
            row_integral[h] += weight * jac[l * r + h];
        }
    }
    if row_integral.iter().any(|v| !v.is_finite()) {
        return Err(FlockError::NonFinite(format!("Jacobian of {} along segment", g.name())));
    }
    Ok(row_integral[l] + (0..r).filter(|&h| h != l).map(|h| row_integral[h].abs()).sum::<f64>())
}

#[derive(Debug, Clone)]
pub struct KRegionOptions {
    /// Times at which the supremum over `U` is taken.
    pub t_grid: Vec<f64>,
    /// Points per axis for the sampled path.
    pub samples_per_dim: usize,
}

impl Default for KRegionOptions {
    fn default() -> Self {
        let steps = 720;
        let t_grid = (0..=steps).map(|k| 2.0 * std::f64::consts::PI * k as f64 / steps as f64).collect();
        Self { t_grid, samples_per_dim: 21 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRegionEstimate {
    pub value: f64,
    /// True when the bound is exact in the state variable (affine Jacobian,
    /// corner evaluation); sampled estimates are not certified bounds.
    pub exact_in_state: bool,
    pub witness_t: f64,
    pub witness_z: Vec<f64>,
    pub witness_row: usize,
}

/// Upper estimate of `sup_{t, y, w ∈ U, l} K(t, l, y, w)`.
///
/// `K` over a segment is bounded by the pointwise row measure
/// `∂_l g^(l)(z) + Σ_{h≠l} |∂_h g^(l)(z)|` over `z ∈ U`, with equality at
/// `y = w = z`. For affine Jacobians this measure is convex in `z`, so its
/// maximum sits on a box corner.
pub fn k_region(g: &dyn InternalDynamics, region: &BoxRegion, opts: &KRegionOptions) -> Result<KRegionEstimate> {
    region.validate()?;
    let r = g.dim();
    if region.dim() != r {
        return Err(FlockError::DimensionMismatch { expected: r, got: region.dim() });
    }
    if opts.t_grid.is_empty() {
        return Err(FlockError::InvalidInput("empty time grid".into()));
    }
    let exact = g.affine_jacobian();
    let points = if exact { region.corners() } else { region.grid(opts.samples_per_dim) };
    if !exact {
        warn!("k_region for {:?} is a sampled estimate, not a certified bound", g.name());
    }
    let mut jac = vec![0.0; r * r];
    let mut best = KRegionEstimate {
        value: f64::NEG_INFINITY,
        exact_in_state: exact,
        witness_t: opts.t_grid[0],
        witness_z: points[0].clone(),
        witness_row: 0,
    };
    for &t in &opts.t_grid {
        for z in &points {
            g.jacobian(t, z, &mut jac);
            for l in 0..r {
                let row = &jac[l * r..(l + 1) * r];
                let measure = row[l] + (0..r).filter(|&h| h != l).map(|h| row[h].abs()).sum::<f64>();
                if measure > best.value {
                    best.value = measure;
                    best.witness_t = t;
                    best.witness_z = z.clone();
                    best.witness_row = l;
                }
            }
        }
    }
    if !best.value.is_finite() {
        return Err(FlockError::NonFinite("k_region".into()));
    }
    Ok(best)
}

/// `K` for the scalar logistic-cosine field evaluated along the nominal
/// trajectory `z(t, 0, z0)`, `z0 ∈ (1, 2)`.
///
/// Uses the separable bound `sup_t |cos t| · sup_t |2 z(t) − 3|`. The solution
/// is monotone in `e^{sin t}`, so the second factor is attained at `sin t = ±1`.
pub fn logistic_cosine_trajectory_k(z0: f64) -> Result<f64> {
    if !(z0 > 1.0 && z0 < 2.0) {
        return Err(FlockError::InvalidInput(format!("z0 = {z0} outside (1, 2)")));
    }
    let at = |s: f64| {
        let c = (z0 - 2.0) / (z0 - 1.0);
        let e = c * s.exp();
        (2.0 * (2.0 - e) / (1.0 - e) - 3.0).abs()
    };
    Ok(at(1.0).max(at(-1.0)))
}

/// Repulsion `f_ij(s) = C_ij / (s − d0)^φ` on squared distances `s > d0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepulsionModel {
    pub d0: f64,
    pub phi: f64,
    pub c: Array2<f64>,
}

impl RepulsionModel {
    pub fn new(d0: f64, phi: f64, c: Array2<f64>) -> Result<Self> {
        let rep = Self { d0, phi, c };
        rep.validate()?;
        Ok(rep)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(FlockError::InvalidInput(format!("d0 = {} must be > 0", self.d0)));
        }
        if !(self.phi > 1.0 && self.phi.is_finite()) {
            return Err(FlockError::InvalidInput(format!("φ = {} must exceed 1", self.phi)));
        }
        let (rows, cols) = self.c.dim();
        if rows != cols {
            return Err(FlockError::InvalidInput("C must be square".into()));
        }
        for i in 0..rows {
            for j in 0..cols {
                if i != j && !(self.c[[i, j]] > 0.0 && self.c[[i, j]].is_finite()) {
                    return Err(FlockError::InvalidInput(format!("C[{i}][{j}] must be positive")));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..n).all(|j| self.c[[i, j]] == self.c[[j, i]]))
    }

    fn check(&self, i: usize, j: usize, s: f64) -> Result<()> {
        if i == j {
            return Err(FlockError::SameAgent(i));
        }
        for idx in [i, j] {
            if idx >= self.n() {
                return Err(FlockError::IndexOutOfRange { index: idx, limit: self.n() });
            }
        }
        if !(s > self.d0) {
            return Err(FlockError::SingularDomain { i, j, dist_sq: s, d0: self.d0 });
        }
        Ok(())
    }

    pub fn force(&self, i: usize, j: usize, s: f64) -> Result<f64> {
        self.check(i, j, s)?;
        Ok(self.c[[i, j]] * (s - self.d0).powf(-self.phi))
    }

    /// `∫_s^∞ f_ij = C_ij (s − d0)^{1−φ} / (φ − 1)`.
    pub fn tail(&self, i: usize, j: usize, s: f64) -> Result<f64> {
        self.check(i, j, s)?;
        if s.is_infinite() {
            return Ok(0.0);
        }
        Ok(self.c[[i, j]] * (s - self.d0).powf(1.0 - self.phi) / (self.phi - 1.0))
    }
}

pub fn repulsion_tail(rep: &RepulsionModel, i: usize, j: usize, s: f64) -> Result<f64> {
    rep.tail(i, j, s)
}
