//! Flock state and the spread metrics that every condition is phrased in.
//!
//! Agent data is stored row-major: row `i` of an `n × r` matrix holds the
//! coordinates of agent `i`. Dimension indices are zero-based.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{FlockError, Result};

/// Positions and velocities of `n` agents in `r` dimensions at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlockState {
    pub t: f64,
    pub x: Array2<f64>,
    pub v: Array2<f64>,
}

impl FlockState {
    /// Validates shapes and finiteness.
    ///
    /// A single agent is accepted so that the uncoupled reduction of the
    /// synchronization model can be integrated; scenarios require `n ≥ 2`.
    pub fn new(t: f64, x: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        if x.dim() != v.dim() {
            return Err(FlockError::InvalidInput(format!(
                "position shape {:?} differs from velocity shape {:?}",
                x.dim(),
                v.dim()
            )));
        }
        let (n, r) = x.dim();
        if n == 0 || r == 0 {
            return Err(FlockError::InvalidInput(format!("need n ≥ 1 and r ≥ 1, got {n}×{r}")));
        }
        if !t.is_finite() || !all_finite(x.view()) || !all_finite(v.view()) {
            return Err(FlockError::NonFinite("flock state".into()));
        }
        Ok(Self { t, x, v })
    }

    pub fn from_rows(t: f64, x: &[Vec<f64>], v: &[Vec<f64>]) -> Result<Self> {
        Self::new(t, matrix_from_rows(x)?, matrix_from_rows(v)?)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn r(&self) -> usize {
        self.x.ncols()
    }

    /// Packs `[x; v]` row-major into one vector of length `2nr`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.x.iter().chain(self.v.iter()).copied().collect()
    }

    pub fn from_flat(t: f64, n: usize, r: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * n * r {
            return Err(FlockError::DimensionMismatch { expected: 2 * n * r, got: flat.len() });
        }
        let x = Array2::from_shape_vec((n, r), flat[..n * r].to_vec()).expect("shape checked");
        let v = Array2::from_shape_vec((n, r), flat[n * r..].to_vec()).expect("shape checked");
        Self::new(t, x, v)
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let n = rows.len();
    let r = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != r) {
        return Err(FlockError::InvalidInput("ragged matrix rows".into()));
    }
    Array2::from_shape_vec((n, r), rows.iter().flatten().copied().collect())
        .map_err(|e| FlockError::InvalidInput(e.to_string()))
}

pub fn matrix_to_rows(m: ArrayView2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|row| row.to_vec()).collect()
}

fn all_finite(m: ArrayView2<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Per-dimension spreads plus the maximizing `(i, j, l)`: agent `i` holds the
/// maximum and agent `j` the minimum of coordinate `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub per_dim: Vec<f64>,
    pub max: f64,
    pub argmax: (usize, usize, usize),
}

/// `max_i y_i^(l) − min_i y_i^(l)`.
pub fn spread_dim(y: ArrayView2<f64>, l: usize) -> Result<f64> {
    if l >= y.ncols() {
        return Err(FlockError::IndexOutOfRange { index: l, limit: y.ncols() });
    }
    Ok(extremes(y, l).0)
}

// (spread, argmax row, argmin row); first occurrence wins ties.
fn extremes(y: ArrayView2<f64>, l: usize) -> (f64, usize, usize) {
    let col = y.column(l);
    let (mut hi, mut lo) = (0, 0);
    for (i, &val) in col.iter().enumerate() {
        if val > col[hi] {
            hi = i;
        }
        if val < col[lo] {
            lo = i;
        }
    }
    (col[hi] - col[lo], hi, lo)
}

/// `S(y) = max_l S_l(y)` with the lexicographically smallest maximizer.
pub fn spread(y: ArrayView2<f64>) -> Result<SpreadReport> {
    if !all_finite(y) {
        return Err(FlockError::NonFinite("spread input".into()));
    }
    if y.nrows() == 0 || y.ncols() == 0 {
        return Err(FlockError::InvalidInput("empty matrix".into()));
    }
    let mut per_dim = Vec::with_capacity(y.ncols());
    let mut best = (f64::NEG_INFINITY, 0, 0, 0);
    for l in 0..y.ncols() {
        let (s, hi, lo) = extremes(y, l);
        per_dim.push(s);
        if s > best.0 {
            best = (s, hi, lo, l);
        }
    }
    Ok(SpreadReport { per_dim, max: best.0, argmax: (best.1, best.2, best.3) })
}

/// `S(y)` without the index bookkeeping; assumes finite input.
pub fn spread_value(y: ArrayView2<f64>) -> f64 {
    (0..y.ncols()).map(|l| extremes(y, l).0).fold(0.0, f64::max)
}

pub fn pairwise_distance_sq(x: ArrayView2<f64>, i: usize, j: usize) -> Result<f64> {
    let n = x.nrows();
    for idx in [i, j] {
        if idx >= n {
            return Err(FlockError::IndexOutOfRange { index: idx, limit: n });
        }
    }
    if i == j {
        return Err(FlockError::SameAgent(i));
    }
    Ok(distance_sq_unchecked(x, i, j))
}

#[inline]
pub(crate) fn distance_sq_unchecked(x: ArrayView2<f64>, i: usize, j: usize) -> f64 {
    x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Smallest squared separation and its pair `(i, j)` with `i < j`.
pub fn min_pair_distance_sq(x: ArrayView2<f64>) -> Result<(f64, usize, usize)> {
    let n = x.nrows();
    if n < 2 {
        return Err(FlockError::InvalidInput("need at least two agents".into()));
    }
    let mut best = (f64::INFINITY, 0, 1);
    for i in 0..n {
        for j in i + 1..n {
            let d = distance_sq_unchecked(x, i, j);
            if d < best.0 {
                best = (d, i, j);
            }
        }
    }
    Ok(best)
}
