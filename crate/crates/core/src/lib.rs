//! Simulation and certification of perturbed Cucker–Smale flocking networks.
//!
//! The crate integrates three governed systems over `n` agents in `r`
//! dimensions:
//!
//! * the baseline alignment model `ẋ_i = v_i`, `v̇_i = Σ_j w_ij(t,x)(v_j − v_i)`;
//! * a synchronization model where each agent also follows an internal vector
//!   field `g(t, v_i)`;
//! * a collision-free model with singular pairwise repulsion `f_ij`.
//!
//! On top of the integrator it evaluates the sufficient conditions for
//! flocking ([`certify`]), audits the spread differential inequalities along
//! computed trajectories, and drives everything from JSON scenario files
//! ([`scenario`]) through the `flocklab` command-line tool ([`cli`]).

pub mod certify;
pub mod cli;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod integrate;
pub mod models;
pub mod numeric;
pub mod scenario;
pub mod state;

pub use error::{FlockError, Result};
pub use state::FlockState;
