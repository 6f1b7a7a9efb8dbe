//! Declarative scenarios: JSON documents describing a model, its parameters,
//! initial conditions, integrator settings and certification inputs.
//!
//! Every random draw comes from a ChaCha stream keyed by the scenario seed and
//! a fixed per-block stream id, so materialization is reproducible.

use std::sync::Arc;

use ndarray::Array2;
use rand::distributions::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::certify::{certify_collision, certify_standard, certify_sync, Certificate, KSource};
use crate::coupling::{CouplingModel, DistanceNorm, Envelope, ModulatedCoupling, PowerLawCoupling};
use crate::dynamics::{builtin, k_region, logistic_cosine_trajectory_k, BoxRegion, KRegionOptions, RepulsionModel};
use crate::error::{FlockError, Result};
use crate::integrate::IntegratorConfig;
use crate::models::{ModelSpec, ModelVariant};
use crate::state::{matrix_from_rows, min_pair_distance_sq, spread_value, FlockState};

const STREAM_COUPLING: u64 = 1;
const STREAM_REPULSION: u64 = 2;
const STREAM_X: u64 = 3;
const STREAM_V: u64 = 4;
const MAX_ATTEMPTS: usize = 10_000;
const SEPARATION_FACTOR: f64 = 1.1;

/// An `n × n` matrix given explicitly, as a constant, or drawn uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSpec {
    Constant(f64),
    Explicit(Vec<Vec<f64>>),
    Uniform {
        lo: f64,
        hi: f64,
        #[serde(default = "yes")]
        symmetric: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingBlock {
    Constant {
        value: f64,
    },
    PowerLaw {
        k: f64,
        sigma: f64,
        beta: f64,
    },
    Modulated {
        w: f64,
        delta: f64,
        beta: MatrixSpec,
        #[serde(default)]
        norm: DistanceNorm,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InternalBlock {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariant_box: Option<BoxRegion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepulsionBlock {
    pub d0: f64,
    pub phi: f64,
    pub c: MatrixSpec,
}

/// Agent positions or velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorSpec {
    Explicit(Vec<Vec<f64>>),
    /// Uniform draws in `[lo, hi]`, optionally rescaled about the centroid to
    /// a target spread.
    Uniform {
        lo: Vec<f64>,
        hi: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spread: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    pub x: VectorSpec,
    pub v: VectorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KSpec {
    /// Supremum over the internal dynamics' invariant box.
    Region,
    User(f64),
    /// Closed-form evaluation along the logistic-cosine nominal solution.
    NominalEnvelope { z0: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_source: Option<KSpec>,
    #[serde(default)]
    pub relaxed: bool,
}

/// The on-disk form of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub model: ModelVariant,
    pub n: usize,
    pub r: usize,
    #[serde(default)]
    pub seed: u64,
    pub coupling: CouplingBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internal: Option<InternalBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repulsion: Option<RepulsionBlock>,
    pub initial: InitialBlock,
    pub integrator: IntegratorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certification: Option<CertificationBlock>,
}

/// Parses a scenario document; errors carry the dotted path of the bad field.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        FlockError::Scenario(format!("at `{path}`: {}", e.into_inner()))
    })
}

fn parse_value(value: Value) -> Result<ScenarioFile> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        FlockError::Scenario(format!("at `{path}`: {}", e.into_inner()))
    })
}

impl ScenarioFile {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("scenario serializes")
    }

    /// Structural checks that do not need random draws.
    pub fn validate(&self) -> Vec<String> {
        let mut diags = vec![];
        let (n, r) = (self.n, self.r);
        if n < 2 {
            diags.push(format!("n: need at least 2 agents, got {n}"));
        }
        if r == 0 {
            diags.push("r: dimension must be positive".into());
        }
        match self.model {
            ModelVariant::Sync if self.internal.is_none() => diags.push("internal: required for the sync model".into()),
            ModelVariant::CollisionFree if self.repulsion.is_none() => diags.push("repulsion: required for the collision_free model".into()),
            _ => {}
        }
        if self.model != ModelVariant::Sync && self.internal.is_some() {
            diags.push("internal: only used by the sync model".into());
        }
        if self.model != ModelVariant::CollisionFree && self.repulsion.is_some() {
            diags.push("repulsion: only used by the collision_free model".into());
        }
        if let Some(block) = &self.internal {
            if let Err(e) = builtin(&block.name, r) {
                diags.push(format!("internal.name: {e}"));
            }
            if let Some(b) = &block.invariant_box {
                if let Err(e) = b.validate() {
                    diags.push(format!("internal.invariant_box: {e}"));
                } else if b.dim() != r {
                    diags.push(format!("internal.invariant_box: dimension {} ≠ r = {r}", b.dim()));
                }
            }
        }
        match &self.coupling {
            CouplingBlock::Constant { value } if !(*value >= 0.0 && value.is_finite()) => diags.push("coupling.constant.value: must be ≥ 0".into()),
            CouplingBlock::PowerLaw { k, sigma, beta } if !(*k > 0.0 && *sigma > 0.0 && *beta > 0.0) => {
                diags.push("coupling.power_law: needs k, sigma, beta > 0".into())
            }
            CouplingBlock::Modulated { w, delta, beta, .. } => {
                if !(*w >= 0.0 && w.is_finite()) {
                    diags.push("coupling.modulated.w: must be ≥ 0".into());
                }
                if !(*delta >= 0.0 && delta.is_finite()) {
                    diags.push("coupling.modulated.delta: must be ≥ 0".into());
                }
                check_matrix(beta, n, "coupling.modulated.beta", &mut diags);
            }
            _ => {}
        }
        if let Some(rep) = &self.repulsion {
            if !(rep.d0 > 0.0 && rep.d0.is_finite()) {
                diags.push("repulsion.d0: must be > 0".into());
            }
            if !(rep.phi > 1.0 && rep.phi.is_finite()) {
                diags.push("repulsion.phi: must exceed 1".into());
            }
            check_matrix(&rep.c, n, "repulsion.c", &mut diags);
        }
        check_vectors(&self.initial.x, n, r, "initial.x", &mut diags);
        check_vectors(&self.initial.v, n, r, "initial.v", &mut diags);
        if let Err(e) = self.integrator.validate(0.0) {
            diags.push(format!("integrator: {e}"));
        }
        if let Some(cert) = &self.certification {
            match (&cert.k_source, self.model) {
                (Some(_), ModelVariant::Baseline | ModelVariant::CollisionFree) => {
                    diags.push("certification.k_source: only used by the sync model".into())
                }
                (Some(KSpec::User(k)), _) if !(*k >= 0.0 && k.is_finite()) => diags.push("certification.k_source.user: K must be ≥ 0".into()),
                (Some(KSpec::NominalEnvelope { z0 }), _) => {
                    if self.internal.as_ref().is_some_and(|b| b.name != "logistic_cosine") {
                        diags.push("certification.k_source.nominal_envelope: only defined for logistic_cosine".into());
                    }
                    if !(*z0 > 1.0 && *z0 < 2.0) {
                        diags.push("certification.k_source.nominal_envelope.z0: must lie in (1, 2)".into());
                    }
                }
                _ => {}
            }
        }
        diags
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn check_matrix(m: &MatrixSpec, n: usize, path: &str, diags: &mut Vec<String>) {
    match m {
        MatrixSpec::Constant(c) if !(*c > 0.0 && c.is_finite()) => diags.push(format!("{path}: constant must be > 0")),
        MatrixSpec::Explicit(rows) => {
            if rows.len() != n || rows.iter().any(|row| row.len() != n) {
                diags.push(format!("{path}: expected a {n}×{n} matrix"));
            } else if (0..n).any(|i| (0..n).any(|j| i != j && !(rows[i][j] > 0.0 && rows[i][j].is_finite()))) {
                diags.push(format!("{path}: off-diagonal entries must be > 0"));
            }
        }
        MatrixSpec::Uniform { lo, hi, .. } if !(*lo >= 0.0 && lo < hi && hi.is_finite()) => {
            diags.push(format!("{path}: need 0 ≤ lo < hi"))
        }
        _ => {}
    }
}

fn check_vectors(spec: &VectorSpec, n: usize, r: usize, path: &str, diags: &mut Vec<String>) {
    match spec {
        VectorSpec::Explicit(rows) => {
            if rows.len() != n || rows.iter().any(|row| row.len() != r) {
                diags.push(format!("{path}.explicit: expected {n} rows of length {r}"));
            }
        }
        VectorSpec::Uniform { lo, hi, spread } => {
            if lo.len() != r || hi.len() != r {
                diags.push(format!("{path}.uniform: lo and hi need length {r}"));
            } else if lo.iter().zip(hi).any(|(l, h)| !(l <= h && l.is_finite() && h.is_finite())) {
                diags.push(format!("{path}.uniform: need lo ≤ hi"));
            }
            if spread.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
                diags.push(format!("{path}.uniform.spread: must be ≥ 0"));
            }
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn uniform_open(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let u: f64 = Open01.sample(rng);
    lo + (hi - lo) * u
}

fn materialize_matrix(spec: &MatrixSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    Ok(match spec {
        MatrixSpec::Constant(c) => {
            let mut m = Array2::from_elem((n, n), *c);
            m.diag_mut().fill(0.0);
            m
        }
        MatrixSpec::Explicit(rows) => matrix_from_rows(rows)?,
        MatrixSpec::Uniform { lo, hi, symmetric } => {
            let mut m = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    if i == j || (*symmetric && j < i) {
                        continue;
                    }
                    m[[i, j]] = uniform_open(rng, *lo, *hi);
                }
            }
            if *symmetric {
                for i in 0..n {
                    for j in 0..i {
                        m[[i, j]] = m[[j, i]];
                    }
                }
            }
            m
        }
    })
}

/// Draws an `n × r` block uniformly in `[lo, hi]` and, if requested, rescales
/// it about its centroid so that its spread equals the target.
pub fn generate_block(lo: &[f64], hi: &[f64], spread: Option<f64>, n: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let r = lo.len();
    let mut m = Array2::zeros((n, r));
    for i in 0..n {
        for l in 0..r {
            m[[i, l]] = if lo[l] == hi[l] { lo[l] } else { uniform_open(rng, lo[l], hi[l]) };
        }
    }
    if let Some(target) = spread {
        let current = spread_value(m.view());
        if current == 0.0 && target > 0.0 {
            return Err(FlockError::Scenario("degenerate draw cannot be rescaled to a positive spread".into()));
        }
        let factor = if target == 0.0 { 0.0 } else { target / current };
        let centroid = m.mean_axis(ndarray::Axis(0)).expect("n ≥ 1");
        for mut row in m.rows_mut() {
            for l in 0..r {
                row[l] = centroid[l] + (row[l] - centroid[l]) * factor;
            }
        }
    }
    Ok(m)
}

/// A scenario with every random draw resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub spec: ModelSpec,
    pub state0: FlockState,
    pub envelope: Envelope,
    pub region: Option<BoxRegion>,
}

/// Parses, validates and materializes a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    materialize(&parse_scenario(text)?)
}

pub fn materialize(file: &ScenarioFile) -> Result<Scenario> {
    let diags = file.validate();
    if !diags.is_empty() {
        return Err(FlockError::Scenario(diags.join("; ")));
    }
    let (n, r) = (file.n, file.r);
    let coupling = match &file.coupling {
        CouplingBlock::Constant { value } => CouplingModel::Constant(*value),
        CouplingBlock::PowerLaw { k, sigma, beta } => CouplingModel::PowerLaw(PowerLawCoupling { k: *k, sigma: *sigma, beta: *beta }),
        CouplingBlock::Modulated { w, delta, beta, norm } => {
            let mut rng = stream(file.seed, STREAM_COUPLING);
            let beta_sq_bound = match beta {
                MatrixSpec::Uniform { hi, .. } => Some(hi * hi),
                _ => None,
            };
            CouplingModel::Modulated(ModulatedCoupling {
                w: *w,
                delta: *delta,
                beta: materialize_matrix(beta, n, &mut rng)?,
                norm: *norm,
                beta_sq_bound,
            })
        }
    };

    let mut region = None;
    let spec = match file.model {
        ModelVariant::Baseline => ModelSpec::baseline(coupling, n, r)?,
        ModelVariant::Sync => {
            let block = file.internal.as_ref().expect("validated");
            let g: Arc<dyn crate::dynamics::InternalDynamics> = Arc::from(builtin(&block.name, r)?);
            region = block.invariant_box.clone().or_else(|| g.invariant_box());
            ModelSpec::sync(coupling, g, n, r)?
        }
        ModelVariant::CollisionFree => {
            let block = file.repulsion.as_ref().expect("validated");
            let mut rng = stream(file.seed, STREAM_REPULSION);
            let c = materialize_matrix(&block.c, n, &mut rng)?;
            ModelSpec::collision_free(coupling, RepulsionModel::new(block.d0, block.phi, c)?, n, r)?
        }
    };

    let d0 = spec.repulsion.as_ref().map(|rep| rep.d0);
    let x = materialize_vectors(&file.initial.x, n, &mut stream(file.seed, STREAM_X), |m| match d0 {
        Some(d0) => min_pair_distance_sq(m.view()).map(|(d, _, _)| d > SEPARATION_FACTOR * d0).unwrap_or(false),
        None => true,
    })?;
    let v_region = region.clone().filter(|_| file.model == ModelVariant::Sync);
    let v = materialize_vectors(&file.initial.v, n, &mut stream(file.seed, STREAM_V), |m| match &v_region {
        Some(b) => m.rows().into_iter().all(|row| b.contains(row.as_slice().expect("contiguous"))),
        None => true,
    })?;
    if let (Some(d0), VectorSpec::Explicit(_)) = (d0, &file.initial.x) {
        let (d, i, j) = min_pair_distance_sq(x.view())?;
        if !(d > d0) {
            return Err(FlockError::SingularDomain { i, j, dist_sq: d, d0 });
        }
    }
    let state0 = FlockState::new(0.0, x, v)?;
    let envelope = spec.coupling.envelope_of(r);
    Ok(Scenario { file: file.clone(), spec, state0, envelope, region })
}

fn materialize_vectors(spec: &VectorSpec, n: usize, rng: &mut ChaCha8Rng, accept: impl Fn(&Array2<f64>) -> bool) -> Result<Array2<f64>> {
    match spec {
        VectorSpec::Explicit(rows) => matrix_from_rows(rows),
        VectorSpec::Uniform { lo, hi, spread } => {
            for _ in 0..MAX_ATTEMPTS {
                let m = generate_block(lo, hi, *spread, n, rng)?;
                if accept(&m) {
                    return Ok(m);
                }
            }
            Err(FlockError::Scenario(format!("no admissible draw after {MAX_ATTEMPTS} attempts")))
        }
    }
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn integrator(&self) -> &IntegratorConfig {
        &self.file.integrator
    }

    pub fn relaxed(&self) -> bool {
        self.file.certification.as_ref().is_some_and(|c| c.relaxed)
    }

    /// `K` and its provenance for a sync scenario.
    pub fn k_bound(&self) -> Result<(f64, KSource)> {
        let g = self
            .spec
            .internal
            .as_ref()
            .ok_or_else(|| FlockError::Scenario("K is only defined for the sync model".into()))?;
        let source = self.file.certification.as_ref().and_then(|c| c.k_source.clone()).unwrap_or(KSpec::Region);
        match source {
            KSpec::User(k) => Ok((k, KSource::UserSupplied)),
            KSpec::NominalEnvelope { z0 } => Ok((logistic_cosine_trajectory_k(z0)?, KSource::Trajectory)),
            KSpec::Region => {
                let region = self
                    .region
                    .as_ref()
                    .ok_or_else(|| FlockError::Scenario(format!("no invariant box known for {:?}", g.name())))?;
                if let Some(i) = (0..self.state0.n()).find(|&i| !region.contains(self.state0.v.row(i).as_slice().expect("contiguous"))) {
                    return Err(FlockError::Scenario(format!("v⁰ of agent {i} lies outside the invariant box")));
                }
                let est = k_region(g.as_ref(), region, &KRegionOptions::default())?;
                Ok((est.value.max(0.0), KSource::Region))
            }
        }
    }

    /// The certificate matching the model variant.
    pub fn certify(&self) -> Result<Certificate> {
        match self.spec.variant {
            ModelVariant::Baseline => Ok(Certificate::Standard(certify_standard(&self.envelope, &self.state0)?)),
            ModelVariant::Sync => {
                let (k, source) = self.k_bound()?;
                Ok(Certificate::Sync(certify_sync(&self.envelope, &self.state0, self.spec.n, k, source, self.relaxed())?))
            }
            ModelVariant::CollisionFree => {
                let rep = self.spec.repulsion.as_ref().expect("validated");
                Ok(Certificate::Collision(certify_collision(&self.envelope, rep, &self.state0, self.spec.n)?))
            }
        }
    }
}

/// Sets a dotted path (`coupling.modulated.delta`, `initial.x.uniform.spread`) in a JSON
/// document. Intermediate objects must exist; the leaf may be new only if its
/// parent is an object, and the result is re-validated on parse.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (depth, key) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*key).to_string(), value);
                    return Ok(());
                }
                map.get_mut(*key).ok_or_else(|| FlockError::Scenario(format!("no key `{}`", parts[..=depth].join("."))))?
            }
            Value::Array(items) => {
                let idx: usize = key.parse().map_err(|_| FlockError::Scenario(format!("`{key}` is not an index")))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or(FlockError::IndexOutOfRange { index: idx, limit: len })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(FlockError::Scenario(format!("`{}` is not a container", parts[..depth].join(".")))),
        };
    }
    Err(FlockError::Scenario("empty path".into()))
}

/// Applies `(path, value)` overrides and re-parses.
pub fn with_overrides(file: &ScenarioFile, overrides: &[(String, Value)]) -> Result<ScenarioFile> {
    let mut doc = file.to_value();
    for (path, value) in overrides {
        set_path(&mut doc, path, value.clone())?;
    }
    parse_value(doc)
}

macro_rules! bundled_table {
    ($($name:literal),* $(,)?) => {
        /// Names of the scenarios shipped with the crate.
        pub const BUNDLED: &[&str] = &[$($name),*];

        /// Source text of a bundled scenario.
        pub fn bundled(name: &str) -> Option<&'static str> {
            match name {
                $($name => Some(include_str!(concat!("../scenarios/", $name, ".json"))),)*
                _ => None,
            }
        }
    };
}

bundled_table!(
    "example1_delta10",
    "example1_delta4",
    "example1_delta09",
    "example1_sweep",
    "example2_strong",
    "example2_weak",
    "example3_strong",
    "example3_weak",
);

/// Loads a bundled scenario by name.
pub fn load_bundled(name: &str) -> Result<Scenario> {
    let text = bundled(name).ok_or_else(|| FlockError::Scenario(format!("no bundled scenario {name:?}")))?;
    load_scenario(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::Certificate;
    use serde_json::json;

    #[test]
    fn every_bundled_scenario_loads_and_round_trips() {
        for name in BUNDLED {
            let text = bundled(name).unwrap();
            let file = parse_scenario(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&file.name, name);
            assert!(file.validate().is_empty(), "{name}: {:?}", file.validate());
            let again = parse_scenario(&file.to_json_pretty()).unwrap();
            assert_eq!(again, file);
            let a = materialize(&file).unwrap();
            let b = materialize(&again).unwrap();
            assert_eq!(a.state0, b.state0);
        }
    }

    #[test]
    fn example1_delta09_contents() {
        let s = load_bundled("example1_delta09").unwrap();
        assert_eq!((s.spec.n, s.spec.r), (5, 1));
        let v: Vec<f64> = s.state0.v.iter().copied().collect();
        assert_eq!(v, vec![1.2, 1.4, 1.1, 1.5, 1.3]);
        match &s.file.coupling {
            CouplingBlock::Modulated { w, delta, .. } => assert_eq!((*w, *delta), (1.0, 0.9)),
            other => panic!("{other:?}"),
        }
        assert!((s.envelope.psi(0.0) - 0.5f64.powf(0.9)).abs() < 1e-12);
    }

    #[test]
    fn example2_strong_contents() {
        let s = load_bundled("example2_strong").unwrap();
        assert_eq!(s.spec.internal.as_ref().unwrap().name(), "lorenz");
        assert!((spread_value(s.state0.v.view()) - 9.0).abs() < 1e-12);
        assert!((spread_value(s.state0.x.view()) - 9.0).abs() < 1e-12);
        match &s.file.coupling {
            CouplingBlock::Modulated { w, delta, .. } => assert_eq!((*w, *delta), (150.0, 0.5)),
            other => panic!("{other:?}"),
        }
        let b = s.region.as_ref().unwrap();
        for row in s.state0.v.rows() {
            assert!(b.contains(row.as_slice().unwrap()));
        }
    }

    #[test]
    fn missing_repulsion_is_rejected() {
        let mut doc: Value = serde_json::from_str(bundled("example3_strong").unwrap()).unwrap();
        doc.as_object_mut().unwrap().remove("repulsion");
        let file = parse_value(doc).unwrap();
        assert!(file.validate().iter().any(|d| d.starts_with("repulsion")));
        assert!(materialize(&file).is_err());
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let mut doc: Value = serde_json::from_str(bundled("example1_delta09").unwrap()).unwrap();
        doc["integrator"]["rtoll"] = json!(1e-3);
        let err = parse_scenario(&doc.to_string()).unwrap_err().to_string();
        assert!(err.contains("integrator"), "{err}");
        assert!(err.contains("rtoll"), "{err}");
        doc = serde_json::from_str(bundled("example1_delta09").unwrap()).unwrap();
        doc["coupling"]["modulated"]["delta"] = json!("big");
        let err = parse_scenario(&doc.to_string()).unwrap_err().to_string();
        assert!(err.contains("coupling.modulated.delta"), "{err}");
    }

    #[test]
    fn generator_hits_target_spread_and_is_deterministic() {
        let mut rng = stream(9, STREAM_X);
        let m = generate_block(&[0.0], &[1.0], Some(5.0), 5, &mut rng).unwrap();
        assert!((spread_value(m.view()) - 5.0).abs() < 1e-12);
        let mut rng2 = stream(9, STREAM_X);
        assert_eq!(m, generate_block(&[0.0], &[1.0], Some(5.0), 5, &mut rng2).unwrap());
        let zero = generate_block(&[0.0, 0.0], &[1.0, 1.0], Some(0.0), 4, &mut rng).unwrap();
        assert_eq!(spread_value(zero.view()), 0.0);
        let mut other = stream(10, STREAM_X);
        assert_ne!(m, generate_block(&[0.0], &[1.0], Some(5.0), 5, &mut other).unwrap());
    }

    #[test]
    fn collision_draws_respect_separation() {
        let file = parse_scenario(bundled("example3_strong").unwrap()).unwrap();
        for seed in 0..5 {
            let s = materialize(&file.clone().with_seed(seed)).unwrap();
            let d0 = s.spec.repulsion.as_ref().unwrap().d0;
            assert!(min_pair_distance_sq(s.state0.x.view()).unwrap().0 > 1.1 * d0);
            assert!(s.spec.repulsion.as_ref().unwrap().is_symmetric());
        }
    }

    #[test]
    fn overrides_set_nested_values() {
        let file = parse_scenario(bundled("example1_sweep").unwrap()).unwrap();
        let f2 = with_overrides(&file, &[("coupling.modulated.delta".into(), json!(1.25)), ("initial.x.uniform.spread".into(), json!(3.0))]).unwrap();
        match f2.coupling {
            CouplingBlock::Modulated { delta, .. } => assert_eq!(delta, 1.25),
            _ => unreachable!(),
        }
        let s = materialize(&f2).unwrap();
        assert!((spread_value(s.state0.x.view()) - 3.0).abs() < 1e-12);
        assert!(with_overrides(&file, &[("coupling.modulated.nope.deeper".into(), json!(1))]).is_err());
        assert!(with_overrides(&file, &[("coupling.modulated.deltta".into(), json!(1))]).is_err());
    }

    #[test]
    fn certificates_for_bundled_examples() {
        let weak = load_bundled("example2_weak").unwrap().certify().unwrap();
        assert!(!weak.feasible());
        let strong3 = load_bundled("example3_strong").unwrap().certify().unwrap();
        assert!(strong3.feasible());
        match load_bundled("example1_delta09").unwrap().certify().unwrap() {
            Certificate::Sync(c) => {
                assert!((c.k_used - 0.4621).abs() < 5e-4);
                assert!(c.feasible);
            }
            other => panic!("{other:?}"),
        }
        assert!(!load_bundled("example1_delta4").unwrap().certify().unwrap().feasible());
    }
}
