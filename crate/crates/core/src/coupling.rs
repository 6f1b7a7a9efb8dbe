//! Communication weights `w_ij(t, x)`, their uniform upper bound `w̄`, and the
//! non-increasing lower envelope `ψ` expressed in terms of the position spread.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{FlockError, Result};
use crate::numeric::adaptive_simpson;
use crate::state::distance_sq_unchecked;

/// Norm used for the pair distance inside [`ModulatedCoupling`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceNorm {
    #[default]
    Euclidean,
    /// Largest coordinate difference; never exceeds the spread `S(x)`.
    Max,
}

impl DistanceNorm {
    fn distance(self, x: ArrayView2<f64>, i: usize, j: usize) -> f64 {
        match self {
            DistanceNorm::Euclidean => distance_sq_unchecked(x, i, j).sqrt(),
            DistanceNorm::Max => x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Constant `c` with `dist(x_i, x_j) ≤ c·S(x)` in `r` dimensions.
    pub fn spread_factor(self, r: usize) -> f64 {
        match self {
            DistanceNorm::Euclidean => (r as f64).sqrt(),
            DistanceNorm::Max => 1.0,
        }
    }
}

/// `w_ij(x) = K / (σ² + ‖x_i − x_j‖²)^β`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawCoupling {
    pub k: f64,
    pub sigma: f64,
    pub beta: f64,
}

/// `w_ij(t, x) = w (1.5 + 0.5 sin t) / (dist(x_i, x_j) + β_ij²)^δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatedCoupling {
    pub w: f64,
    pub delta: f64,
    pub beta: Array2<f64>,
    pub norm: DistanceNorm,
    /// Upper bound on `β_ij²` used by the envelope. `None` uses the largest
    /// off-diagonal entry of `beta`.
    pub beta_sq_bound: Option<f64>,
}

pub const MODULATION_MIN: f64 = 1.0;
pub const MODULATION_MAX: f64 = 2.0;

pub fn modulation(t: f64) -> f64 {
    1.5 + 0.5 * t.sin()
}

impl ModulatedCoupling {
    fn off_diagonal_beta_sq(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.beta.nrows();
        (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| self.beta[[i, j]].powi(2)))
    }

    fn envelope_offset(&self) -> f64 {
        let realized = self.off_diagonal_beta_sq().fold(0.0, f64::max);
        match self.beta_sq_bound {
            Some(bound) => bound.max(realized),
            None => realized,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CouplingModel {
    /// Constant symmetric weight.
    Constant(f64),
    PowerLaw(PowerLawCoupling),
    Modulated(ModulatedCoupling),
}

impl CouplingModel {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(FlockError::InvalidInput(msg));
        match self {
            CouplingModel::Constant(c) if !(c.is_finite() && *c >= 0.0) => bad(format!("constant weight {c} must be ≥ 0")),
            CouplingModel::Constant(_) => Ok(()),
            CouplingModel::PowerLaw(p) => {
                if !(p.k > 0.0 && p.sigma > 0.0 && p.beta > 0.0) {
                    return bad("power-law coupling needs K, σ, β > 0".into());
                }
                Ok(())
            }
            CouplingModel::Modulated(m) => {
                if !(m.w.is_finite() && m.w >= 0.0 && m.delta.is_finite() && m.delta >= 0.0) {
                    return bad("modulated coupling needs w ≥ 0 and δ ≥ 0".into());
                }
                if m.beta.dim() != (n, n) {
                    return Err(FlockError::DimensionMismatch { expected: n, got: m.beta.nrows() });
                }
                if m.off_diagonal_beta_sq().any(|b| !(b > 0.0 && b.is_finite())) {
                    return bad("β_ij entries must be strictly positive".into());
                }
                Ok(())
            }
        }
    }

    /// `w_ij(t, x)` for `i ≠ j`.
    pub fn weight(&self, i: usize, j: usize, t: f64, x: ArrayView2<f64>) -> Result<f64> {
        if i == j {
            return Err(FlockError::SameAgent(i));
        }
        let n = x.nrows();
        for idx in [i, j] {
            if idx >= n {
                return Err(FlockError::IndexOutOfRange { index: idx, limit: n });
            }
        }
        Ok(self.weight_unchecked(i, j, t, x))
    }

    #[inline]
    pub(crate) fn weight_unchecked(&self, i: usize, j: usize, t: f64, x: ArrayView2<f64>) -> f64 {
        match self {
            CouplingModel::Constant(c) => *c,
            CouplingModel::PowerLaw(p) => p.k / (p.sigma * p.sigma + distance_sq_unchecked(x, i, j)).powf(p.beta),
            CouplingModel::Modulated(m) => {
                let d = m.norm.distance(x, i, j);
                m.w * modulation(t) / (d + m.beta[[i, j]].powi(2)).powf(m.delta)
            }
        }
    }

    /// All weights at `(t, x)`; the diagonal is zero.
    pub fn weight_matrix(&self, t: f64, x: ArrayView2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let mut w = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    w[[i, j]] = self.weight_unchecked(i, j, t, x);
                }
            }
        }
        w
    }

    /// Uniform upper bound `w̄` over all `(t, x)`.
    pub fn w_bar(&self) -> f64 {
        match self {
            CouplingModel::Constant(c) => *c,
            CouplingModel::PowerLaw(p) => p.k / p.sigma.powf(2.0 * p.beta),
            CouplingModel::Modulated(m) => {
                let beta_min_sq = m.off_diagonal_beta_sq().fold(f64::INFINITY, f64::min);
                MODULATION_MAX * m.w / beta_min_sq.powf(m.delta)
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            CouplingModel::Modulated(m) => {
                let n = m.beta.nrows();
                (0..n).all(|i| (0..n).all(|j| i == j || m.beta[[i, j]] == m.beta[[j, i]]))
            }
            _ => true,
        }
    }

    /// Lower envelope `ψ` with `inf_t w_ij(t, x) ≥ ψ(S(x))` in `r` dimensions.
    ///
    /// Pair distances are converted to the spread with the norm's
    /// [`DistanceNorm::spread_factor`], so the envelope is never optimistic.
    pub fn envelope_of(&self, r: usize) -> Envelope {
        let shape = match self {
            CouplingModel::Constant(c) => EnvelopeShape::Constant(*c),
            CouplingModel::PowerLaw(p) => EnvelopeShape::PowerLaw {
                gain: p.k,
                sigma_sq: p.sigma * p.sigma,
                dim_factor: r as f64,
                beta: p.beta,
            },
            CouplingModel::Modulated(m) => EnvelopeShape::Rational {
                gain: m.w * MODULATION_MIN,
                scale: m.norm.spread_factor(r),
                offset: m.envelope_offset(),
                exponent: m.delta,
            },
        };
        Envelope { shape, w_bar: self.w_bar() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeShape {
    /// `ψ(s) = c`.
    Constant(f64),
    /// `ψ(s) = gain / (scale·s + offset)^exponent`.
    Rational { gain: f64, scale: f64, offset: f64, exponent: f64 },
    /// `ψ(s) = gain / (σ² + dim_factor·s²)^β`.
    PowerLaw { gain: f64, sigma_sq: f64, dim_factor: f64, beta: f64 },
}

/// A non-increasing lower bound `ψ` on every weight, plus the upper bound `w̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub shape: EnvelopeShape,
    pub w_bar: f64,
}

impl Envelope {
    pub fn constant(c: f64) -> Self {
        Self { shape: EnvelopeShape::Constant(c), w_bar: c }
    }

    /// `gain / (s + offset)^exponent`.
    pub fn rational(gain: f64, offset: f64, exponent: f64) -> Self {
        let w_bar = if exponent == 0.0 { gain } else { gain / offset.powf(exponent) };
        Self { shape: EnvelopeShape::Rational { gain, scale: 1.0, offset, exponent }, w_bar }
    }

    pub fn psi(&self, s: f64) -> f64 {
        match self.shape {
            EnvelopeShape::Constant(c) => c,
            EnvelopeShape::Rational { gain, exponent, .. } if exponent == 0.0 => gain,
            EnvelopeShape::Rational { gain, scale, offset, exponent } => gain / (scale * s + offset).powf(exponent),
            EnvelopeShape::PowerLaw { gain, sigma_sq, dim_factor, beta } => gain / (sigma_sq + dim_factor * s * s).powf(beta),
        }
    }

    /// Whether `∫_a^∞ ψ` diverges.
    pub fn tail_diverges(&self) -> bool {
        match self.shape {
            EnvelopeShape::Constant(c) => c > 0.0,
            EnvelopeShape::Rational { gain, exponent, .. } => gain > 0.0 && exponent <= 1.0,
            EnvelopeShape::PowerLaw { gain, beta, .. } => gain > 0.0 && 2.0 * beta <= 1.0,
        }
    }

    /// `∫_a^b ψ(s) ds`; `b` may be `+∞`.
    ///
    /// Constant and rational envelopes use closed forms; the power-law family
    /// uses adaptive Simpson on a finite part plus an asymptotic series tail.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        if a.is_nan() || b.is_nan() || a > b || a < 0.0 {
            return Err(FlockError::InvalidInput(format!("invalid integration range [{a}, {b}]")));
        }
        if a == b {
            return Ok(0.0);
        }
        if b.is_infinite() && self.tail_diverges() {
            return Ok(f64::INFINITY);
        }
        Ok(match self.shape {
            EnvelopeShape::Constant(c) => {
                if b.is_infinite() {
                    0.0
                } else {
                    c * (b - a)
                }
            }
            EnvelopeShape::Rational { gain, exponent, .. } if exponent == 0.0 => {
                if b.is_infinite() {
                    0.0
                } else {
                    gain * (b - a)
                }
            }
            EnvelopeShape::Rational { gain, scale, offset, exponent } => {
                let ua = scale * a + offset;
                if (exponent - 1.0).abs() < 1e-14 {
                    gain / scale * ((scale * b + offset) / ua).ln()
                } else if b.is_infinite() {
                    gain / scale * ua.powf(1.0 - exponent) / (exponent - 1.0)
                } else {
                    let ub = scale * b + offset;
                    gain / scale * (ub.powf(1.0 - exponent) - ua.powf(1.0 - exponent)) / (1.0 - exponent)
                }
            }
            EnvelopeShape::PowerLaw { gain, sigma_sq, dim_factor, beta } => {
                if b.is_finite() {
                    self.integral_quadrature(a, b)?
                } else {
                    // Split where σ²/(r s²) ≤ 1e-2 and expand the tail.
                    let cut = a.max(10.0 * (sigma_sq / dim_factor).sqrt());
                    let body = if cut > a { self.integral_quadrature(a, cut)? } else { 0.0 };
                    body + power_law_tail(gain, sigma_sq, dim_factor, beta, cut)
                }
            }
        })
    }

    /// Adaptive Simpson (absolute tolerance 1e-10) on a finite interval,
    /// independent of any closed form.
    pub fn integral_quadrature(&self, a: f64, b: f64) -> Result<f64> {
        if !(a <= b && b.is_finite()) {
            return Err(FlockError::InvalidInput(format!("quadrature needs a finite range, got [{a}, {b}]")));
        }
        Ok(adaptive_simpson(&|s| self.psi(s), a, b, 1e-10))
    }
}

/// `psi_integral(env, a, b) = ∫_a^b ψ`.
pub fn psi_integral(env: &Envelope, a: f64, b: f64) -> Result<f64> {
    env.integral(a, b)
}

// ∫_M^∞ g (r s²)^(−β) (1 + σ²/(r s²))^(−β) ds expanded binomially.
fn power_law_tail(gain: f64, sigma_sq: f64, dim_factor: f64, beta: f64, m: f64) -> f64 {
    let ratio = sigma_sq / dim_factor;
    let mut coeff = 1.0;
    let mut total = 0.0;
    for k in 0..60 {
        let p = 2.0 * beta + 2.0 * k as f64 - 1.0;
        let term = coeff * ratio.powi(k) * m.powf(-p) / p;
        total += term;
        if term.abs() < 1e-18 * total.abs() {
            break;
        }
        coeff *= (-beta - k as f64) / (k as f64 + 1.0);
    }
    gain * dim_factor.powf(-beta) * total
}
