//! Right-hand sides of the three governed systems.
//!
//! Every model has `ẋ_i = v_i`; they differ in the velocity equation:
//!
//! * baseline: `v̇_i = Σ_j w_ij (v_j − v_i)`
//! * synchronization: `v̇_i = g(t, v_i) + Σ_j w_ij (v_j − v_i)`
//! * collision-free: `v̇_i = Σ_j (w_ij − f_ij(‖x_ij‖²)⟨x_ij, v_ij⟩ / S(v)) (v_j − v_i)`

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::coupling::CouplingModel;
use crate::dynamics::{InternalDynamics, RepulsionModel};
use crate::error::{FlockError, Result};
use crate::integrate::OdeSystem;
use crate::state::{distance_sq_unchecked, spread_value, FlockState};

/// Floor for `S(v)` in the repulsion denominator.
pub const SPREAD_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Baseline,
    Sync,
    CollisionFree,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub variant: ModelVariant,
    pub coupling: CouplingModel,
    pub internal: Option<Arc<dyn InternalDynamics>>,
    pub repulsion: Option<RepulsionModel>,
    pub n: usize,
    pub r: usize,
}

impl ModelSpec {
    pub fn baseline(coupling: CouplingModel, n: usize, r: usize) -> Result<Self> {
        Self { variant: ModelVariant::Baseline, coupling, internal: None, repulsion: None, n, r }.validated()
    }

    pub fn sync(coupling: CouplingModel, internal: Arc<dyn InternalDynamics>, n: usize, r: usize) -> Result<Self> {
        Self { variant: ModelVariant::Sync, coupling, internal: Some(internal), repulsion: None, n, r }.validated()
    }

    pub fn collision_free(coupling: CouplingModel, repulsion: RepulsionModel, n: usize, r: usize) -> Result<Self> {
        Self { variant: ModelVariant::CollisionFree, coupling, internal: None, repulsion: Some(repulsion), n, r }.validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.r == 0 {
            return Err(FlockError::InvalidInput("n and r must be positive".into()));
        }
        self.coupling.validate(self.n)?;
        match self.variant {
            ModelVariant::Baseline => {}
            ModelVariant::Sync => {
                let g = self.internal.as_ref().ok_or_else(|| FlockError::InvalidInput("sync model needs internal dynamics".into()))?;
                if g.dim() != self.r {
                    return Err(FlockError::DimensionMismatch { expected: self.r, got: g.dim() });
                }
            }
            ModelVariant::CollisionFree => {
                let rep = self.repulsion.as_ref().ok_or_else(|| FlockError::InvalidInput("collision-free model needs a repulsion block".into()))?;
                rep.validate()?;
                if rep.n() != self.n {
                    return Err(FlockError::DimensionMismatch { expected: self.n, got: rep.n() });
                }
            }
        }
        Ok(())
    }

    /// Writes `(ẋ, v̇)` for the configured variant.
    pub fn rhs_into(&self, t: f64, x: ArrayView2<f64>, v: ArrayView2<f64>, mut dx: ArrayViewMut2<f64>, mut dv: ArrayViewMut2<f64>) -> Result<()> {
        if x.dim() != (self.n, self.r) || v.dim() != (self.n, self.r) {
            return Err(FlockError::DimensionMismatch { expected: self.n * self.r, got: x.len() });
        }
        dx.assign(&v);
        dv.fill(0.0);
        match self.variant {
            ModelVariant::Baseline => self.alignment(t, x, v, &mut dv),
            ModelVariant::Sync => {
                self.alignment(t, x, v, &mut dv)?;
                let g = self.internal.as_ref().expect("validated");
                let mut gz = vec![0.0; self.r];
                for i in 0..self.n {
                    let vi = v.row(i).to_vec();
                    if !g.in_domain(&vi) {
                        return Err(FlockError::OutsideDomain { agent: i });
                    }
                    g.eval(t, &vi, &mut gz);
                    for l in 0..self.r {
                        dv[[i, l]] += gz[l];
                    }
                }
                Ok(())
            }
            ModelVariant::CollisionFree => self.collision(t, x, v, &mut dv),
        }?;
        if dv.iter().any(|d| !d.is_finite()) {
            return Err(FlockError::NonFinite(format!("velocity field at t = {t}")));
        }
        Ok(())
    }

    fn alignment(&self, t: f64, x: ArrayView2<f64>, v: ArrayView2<f64>, dv: &mut ArrayViewMut2<f64>) -> Result<()> {
        for i in 0..self.n {
            for j in 0..self.n {
                if i == j {
                    continue;
                }
                let w = self.coupling.weight_unchecked(i, j, t, x);
                if !w.is_finite() {
                    return Err(FlockError::NonFinite(format!("weight w[{i}][{j}]")));
                }
                for l in 0..self.r {
                    dv[[i, l]] += w * (v[[j, l]] - v[[i, l]]);
                }
            }
        }
        Ok(())
    }

    fn collision(&self, t: f64, x: ArrayView2<f64>, v: ArrayView2<f64>, dv: &mut ArrayViewMut2<f64>) -> Result<()> {
        let rep = self.repulsion.as_ref().expect("validated");
        let s_v = spread_value(v).max(SPREAD_GUARD);
        for i in 0..self.n {
            for j in 0..self.n {
                if i == j {
                    continue;
                }
                let dist_sq = distance_sq_unchecked(x, i, j);
                if !(dist_sq > rep.d0) {
                    return Err(FlockError::SingularDomain { i, j, dist_sq, d0: rep.d0 });
                }
                let f = rep.c[[i, j]] * (dist_sq - rep.d0).powf(-rep.phi);
                let inner: f64 = (0..self.r).map(|l| (x[[i, l]] - x[[j, l]]) * (v[[i, l]] - v[[j, l]])).sum();
                let coeff = self.coupling.weight_unchecked(i, j, t, x) - f * inner / s_v;
                for l in 0..self.r {
                    dv[[i, l]] += coeff * (v[[j, l]] - v[[i, l]]);
                }
            }
        }
        Ok(())
    }

    /// Time derivative of a state, packed as a [`FlockState`] at the same `t`.
    pub fn derivative(&self, state: &FlockState) -> Result<FlockState> {
        let mut dx = Array2::zeros((self.n, self.r));
        let mut dv = Array2::zeros((self.n, self.r));
        self.rhs_into(state.t, state.x.view(), state.v.view(), dx.view_mut(), dv.view_mut())?;
        Ok(FlockState { t: state.t, x: dx, v: dv })
    }
}

impl OdeSystem for ModelSpec {
    fn dim(&self) -> usize {
        2 * self.n * self.r
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let nr = self.n * self.r;
        let shape = (self.n, self.r);
        let x = ArrayView2::from_shape(shape, &y[..nr]).expect("flat layout");
        let v = ArrayView2::from_shape(shape, &y[nr..]).expect("flat layout");
        let (dx, dv) = dy.split_at_mut(nr);
        let dx = ArrayViewMut2::from_shape(shape, dx).expect("flat layout");
        let dv = ArrayViewMut2::from_shape(shape, dv).expect("flat layout");
        self.rhs_into(t, x, v, dx, dv)
    }
}

fn with_variant(spec: &ModelSpec, variant: ModelVariant, state: &FlockState) -> Result<FlockState> {
    if spec.variant != variant {
        return Err(FlockError::InvalidInput(format!("model is {:?}, expected {variant:?}", spec.variant)));
    }
    spec.derivative(state)
}

pub fn rhs_baseline(spec: &ModelSpec, state: &FlockState) -> Result<FlockState> {
    with_variant(spec, ModelVariant::Baseline, state)
}

pub fn rhs_sync(spec: &ModelSpec, state: &FlockState) -> Result<FlockState> {
    with_variant(spec, ModelVariant::Sync, state)
}

pub fn rhs_collision(spec: &ModelSpec, state: &FlockState) -> Result<FlockState> {
    with_variant(spec, ModelVariant::CollisionFree, state)
}
