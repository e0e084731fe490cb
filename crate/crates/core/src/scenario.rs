//! Scenario documents: a TOML description of one certification run.
//!
//! ```toml
//! seed = 7
//! cost = "quadratic"
//! mass_fraction = 0.5
//!
//! [source]
//! kind = "grid"
//! lo = [0.0, 0.0]
//! hi = [1.0, 1.0]
//! count = 12
//!
//! [target]
//! kind = "grid"
//! lo = [1.25, 0.0]
//! hi = [2.25, 1.0]
//! count = 12
//!
//! [grid]
//! resolution = 64
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cost::{CostError, CostModel};
use crate::point::Point;
use crate::sphere::{SpherePoint, SphericalCap, SphereError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario field `{field}`: {message}")]
    Semantic { field: String, message: String },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Sphere(#[from] SphereError),
}

fn semantic(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Semantic { field: field.into(), message: message.into() }
}

/// A cost given either by id or by a table with parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostSpec {
    Id(String),
    Table(CostTable),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    pub id: String,
    /// Separation floor of the log cost.
    #[serde(default)]
    pub floor: Option<f64>,
    /// Positive multiplier applied to the cost.
    #[serde(default)]
    pub scale: Option<f64>,
}

impl CostSpec {
    pub fn id(&self) -> &str {
        match self {
            CostSpec::Id(id) => id,
            CostSpec::Table(t) => &t.id,
        }
    }

    pub fn build(&self, dim: usize) -> Result<CostModel, ScenarioError> {
        let (floor, scale) = match self {
            CostSpec::Id(_) => (None, None),
            CostSpec::Table(t) => (t.floor, t.scale),
        };
        let mut cost = match (self.id(), floor) {
            ("log", Some(f)) => {
                if !(f > 0.0) {
                    return Err(semantic("cost.floor", "must be positive"));
                }
                CostModel::log_with_floor(dim, f)
            }
            (_, Some(_)) => return Err(semantic("cost.floor", "only the log cost takes a floor")),
            (id, None) => CostModel::from_id(id, dim)?,
        };
        if let Some(s) = scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(semantic("cost.scale", "must be positive and finite"));
            }
            cost = cost.scaled(s);
        }
        Ok(cost)
    }
}

fn default_total_mass() -> f64 {
    1.0
}

/// How a measure's support and weights are generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// Explicit points; weights default to one each.
    Points {
        points: Vec<Vec<f64>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// Tensor grid of `count` points per axis over `[lo, hi]`, endpoints included.
    Grid {
        lo: Vec<f64>,
        hi: Vec<f64>,
        count: usize,
        #[serde(default = "default_total_mass")]
        total_mass: f64,
    },
    /// `count` seeded uniform samples of a closed ball.
    Ball {
        center: Vec<f64>,
        radius: f64,
        count: usize,
        #[serde(default = "default_total_mass")]
        total_mass: f64,
    },
    /// `count` seeded uniform samples of the box `[lo, hi]`.
    RandomBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
        count: usize,
        #[serde(default = "default_total_mass")]
        total_mass: f64,
    },
    /// Area-uniform lattice of `count` points on a cap of the 2-sphere.
    SphereCap {
        center: Vec<f64>,
        height: f64,
        count: usize,
        #[serde(default = "default_total_mass")]
        total_mass: f64,
    },
}

/// A generated measure: support and weights, plus the region it samples.
#[derive(Clone, Debug, PartialEq)]
pub struct BuiltMeasure {
    pub support: Vec<Point>,
    pub weights: Vec<f64>,
    pub region: Region,
}

/// The continuum region a measure samples, used to mask the fixed boundary.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// Union of balls of this radius around the support points.
    Cloud { radius: f64 },
    Sphere,
}

impl MeasureSpec {
    pub fn dim(&self) -> usize {
        match self {
            MeasureSpec::Points { points, .. } => points.first().map_or(0, Vec::len),
            MeasureSpec::Grid { lo, .. } | MeasureSpec::RandomBox { lo, .. } => lo.len(),
            MeasureSpec::Ball { center, .. } | MeasureSpec::SphereCap { center, .. } => center.len(),
        }
    }

    fn validate(&self, field: &str) -> Result<(), ScenarioError> {
        let finite = |v: &[f64]| v.iter().all(|c| c.is_finite());
        let check_mass = |m: f64| {
            if m > 0.0 && m.is_finite() {
                Ok(())
            } else {
                Err(semantic(&format!("{field}.total_mass"), "must be positive"))
            }
        };
        let check_count = |c: usize| {
            if c == 0 {
                Err(semantic(&format!("{field}.count"), "empty measure"))
            } else {
                Ok(())
            }
        };
        let check_box = |lo: &[f64], hi: &[f64]| {
            if lo.is_empty() || lo.len() != hi.len() || !finite(lo) || !finite(hi) {
                return Err(semantic(field, "lo and hi must be finite and of equal positive length"));
            }
            if lo.iter().zip(hi).any(|(a, b)| a > b) {
                return Err(semantic(field, "lo must not exceed hi"));
            }
            Ok(())
        };
        match self {
            MeasureSpec::Points { points, weights } => {
                if points.is_empty() {
                    return Err(semantic(&format!("{field}.points"), "empty measure"));
                }
                let n = points[0].len();
                if n == 0 || points.iter().any(|p| p.len() != n || !finite(p)) {
                    return Err(semantic(
                        &format!("{field}.points"),
                        "points must be finite and share a positive dimension",
                    ));
                }
                if let Some(w) = weights {
                    if w.len() != points.len() {
                        return Err(semantic(&format!("{field}.weights"), "one weight per point"));
                    }
                    if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                        return Err(semantic(&format!("{field}.weights"), "weights must be positive"));
                    }
                }
                Ok(())
            }
            MeasureSpec::Grid { lo, hi, count, total_mass } => {
                check_box(lo, hi)?;
                check_mass(*total_mass)?;
                if *count < 1 || (*count == 1 && lo != hi) {
                    return Err(semantic(&format!("{field}.count"), "need at least two points per axis"));
                }
                Ok(())
            }
            MeasureSpec::RandomBox { lo, hi, count, total_mass } => {
                check_box(lo, hi)?;
                check_mass(*total_mass)?;
                check_count(*count)
            }
            MeasureSpec::Ball { center, radius, count, total_mass } => {
                if center.is_empty() || !finite(center) {
                    return Err(semantic(&format!("{field}.center"), "must be a finite point"));
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(semantic(&format!("{field}.radius"), "must be positive"));
                }
                check_mass(*total_mass)?;
                check_count(*count)
            }
            MeasureSpec::SphereCap { center, height, count, total_mass } => {
                if center.len() != 3 {
                    return Err(semantic(&format!("{field}.center"), "caps live on the 2-sphere"));
                }
                SphericalCap::new(SpherePoint::normalized(center.clone())?, *height)?;
                check_mass(*total_mass)?;
                check_count(*count)
            }
        }
    }

    /// Generates the measure. Random kinds draw from `rng`.
    pub fn build(&self, rng: &mut ChaCha8Rng) -> Result<BuiltMeasure, ScenarioError> {
        let uniform = |support: Vec<Point>, total: f64, region: Region| {
            let w = total / support.len() as f64;
            let weights = vec![w; support.len()];
            BuiltMeasure { support, weights, region }
        };
        Ok(match self {
            MeasureSpec::Points { points, weights } => {
                let support: Vec<Point> = points.iter().cloned().map(Point::new).collect();
                let weights = weights.clone().unwrap_or_else(|| vec![1.0; support.len()]);
                let radius = crate::point::DomainSample::new(
                    support.clone(),
                    crate::point::SampleRole::Source,
                )?
                .mean_spacing();
                BuiltMeasure { support, weights, region: Region::Cloud { radius } }
            }
            MeasureSpec::Grid { lo, hi, count, total_mass } => {
                let n = lo.len();
                let total_points = count.pow(n as u32);
                let support = (0..total_points)
                    .map(|mut k| {
                        let coords = (0..n)
                            .map(|a| {
                                let i = k % count;
                                k /= count;
                                if *count == 1 {
                                    lo[a]
                                } else {
                                    lo[a] + (hi[a] - lo[a]) * i as f64 / (*count - 1) as f64
                                }
                            })
                            .collect();
                        Point::new(coords)
                    })
                    .collect();
                uniform(support, *total_mass, Region::Box { lo: lo.clone(), hi: hi.clone() })
            }
            MeasureSpec::RandomBox { lo, hi, count, total_mass } => {
                let support = (0..*count)
                    .map(|_| {
                        Point::new(lo.iter().zip(hi).map(|(a, b)| a + (b - a) * rng.gen::<f64>()).collect())
                    })
                    .collect();
                uniform(support, *total_mass, Region::Box { lo: lo.clone(), hi: hi.clone() })
            }
            MeasureSpec::Ball { center, radius, count, total_mass } => {
                let n = center.len();
                let mut support = Vec::with_capacity(*count);
                while support.len() < *count {
                    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                    if v.iter().map(|c| c * c).sum::<f64>() <= 1.0 {
                        support.push(Point::new(
                            center.iter().zip(&v).map(|(c, d)| c + radius * d).collect(),
                        ));
                    }
                }
                uniform(
                    support,
                    *total_mass,
                    Region::Ball { center: center.clone(), radius: *radius },
                )
            }
            MeasureSpec::SphereCap { center, height, count, total_mass } => {
                let cap = SphericalCap::new(SpherePoint::normalized(center.clone())?, *height)?;
                let support = cap.lattice(*count)?.iter().map(SpherePoint::to_point).collect();
                uniform(support, *total_mass, Region::Sphere)
            }
        })
    }
}

fn default_resolution() -> usize {
    64
}

/// The evaluation grid: `resolution` cells across the source's largest extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { resolution: default_resolution() }
    }
}

fn yes() -> bool {
    true
}
fn default_theta() -> f64 {
    std::f64::consts::FRAC_PI_4
}
fn default_ball_factor() -> f64 {
    0.9
}
fn default_semiconvexity_tolerance() -> f64 {
    crate::geometry::SEMICONVEXITY_TOLERANCE
}
fn default_windows() -> usize {
    10
}

/// Which predicates run, and their parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateSpec {
    #[serde(default = "yes")]
    pub cone: bool,
    #[serde(default = "yes")]
    pub ball: bool,
    #[serde(default = "yes")]
    pub lipschitz: bool,
    #[serde(default = "yes")]
    pub semiconvexity: bool,
    #[serde(default = "yes")]
    pub c_convexity: bool,
    /// Cone half-angle from the tangent plane, in radians.
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_ball_factor")]
    pub ball_factor: f64,
    #[serde(default = "default_semiconvexity_tolerance")]
    pub semiconvexity_tolerance: f64,
    /// Envelope windows examined along the boundary.
    #[serde(default = "default_windows")]
    pub windows: usize,
}

impl Default for PredicateSpec {
    fn default() -> Self {
        PredicateSpec {
            cone: true,
            ball: true,
            lipschitz: true,
            semiconvexity: true,
            c_convexity: true,
            theta: default_theta(),
            ball_factor: default_ball_factor(),
            semiconvexity_tolerance: default_semiconvexity_tolerance(),
            windows: default_windows(),
        }
    }
}

fn default_basepoints() -> usize {
    10
}
fn default_directions() -> usize {
    256
}

/// Sampled A3 minimization over source/target pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtwSpec {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_basepoints")]
    pub basepoints: usize,
    #[serde(default = "default_directions")]
    pub directions: usize,
}

impl Default for MtwSpec {
    fn default() -> Self {
        MtwSpec { enabled: false, basepoints: default_basepoints(), directions: default_directions() }
    }
}

fn default_sphere_resolution() -> usize {
    1000
}
fn default_rho() -> f64 {
    crate::sphere::DEFAULT_RHO
}
fn default_mass_margin() -> f64 {
    crate::sphere::DEFAULT_MASS_MARGIN
}

/// The polar-cap construction on the 2-sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereExampleSpec {
    #[serde(default = "default_sphere_resolution")]
    pub resolution: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_mass_margin")]
    pub mass_margin: f64,
}

impl Default for SphereExampleSpec {
    fn default() -> Self {
        SphereExampleSpec {
            resolution: default_sphere_resolution(),
            rho: default_rho(),
            mass_margin: default_mass_margin(),
        }
    }
}

fn default_mass_fraction() -> f64 {
    1.0
}

/// A validated run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub cost: CostSpec,
    /// Transported mass as a fraction of `min(|f|, |g|)`.
    #[serde(default = "default_mass_fraction")]
    pub mass_fraction: f64,
    #[serde(default)]
    pub source: Option<MeasureSpec>,
    #[serde(default)]
    pub target: Option<MeasureSpec>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub predicates: PredicateSpec,
    #[serde(default)]
    pub mtw: MtwSpec,
    #[serde(default)]
    pub sphere_example: Option<SphereExampleSpec>,
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    s.validate()?;
    Ok(s)
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.mass_fraction > 0.0 && self.mass_fraction <= 1.0) {
            return Err(semantic("mass_fraction", format!("{} not in (0, 1]", self.mass_fraction)));
        }
        let p = &self.predicates;
        if !(p.theta > 0.0 && p.theta < std::f64::consts::FRAC_PI_2) {
            return Err(semantic("predicates.theta", "must lie in (0, pi/2)"));
        }
        if !(p.ball_factor > 0.0) {
            return Err(semantic("predicates.ball_factor", "must be positive"));
        }
        if !(p.semiconvexity_tolerance >= 0.0) {
            return Err(semantic("predicates.semiconvexity_tolerance", "must be nonnegative"));
        }
        if let Some(ex) = &self.sphere_example {
            if self.cost.id() != "sphere" {
                return Err(semantic("sphere_example", "requires cost = \"sphere\""));
            }
            if !(ex.rho > 0.0) || !(ex.mass_margin >= 0.0) {
                return Err(semantic("sphere_example", "rho must be positive, mass_margin nonnegative"));
            }
            if ex.resolution < crate::sphere::MIN_EXAMPLE_RESOLUTION {
                return Err(semantic(
                    "sphere_example.resolution",
                    format!("at least {}", crate::sphere::MIN_EXAMPLE_RESOLUTION),
                ));
            }
            if self.source.is_some() || self.target.is_some() {
                return Err(semantic("sphere_example", "builds its own measures; drop source/target"));
            }
            return Ok(());
        }
        let (Some(src), Some(tgt)) = (&self.source, &self.target) else {
            return Err(semantic("source/target", "both measures are required"));
        };
        src.validate("source")?;
        tgt.validate("target")?;
        if src.dim() != tgt.dim() {
            return Err(semantic(
                "target",
                format!("dimension {} differs from source dimension {}", tgt.dim(), src.dim()),
            ));
        }
        // Resolves the cost id, reporting the registered ids if unknown.
        self.cost.build(src.dim())?;
        if self.cost.id() == "sphere" && src.dim() != 3 {
            return Err(semantic("cost", "the sphere cost needs points in R^3"));
        }
        Ok(())
    }

    /// Dimension of the measures' points.
    pub fn dim(&self) -> usize {
        self.source.as_ref().map_or(3, MeasureSpec::dim)
    }

    pub fn cost_model(&self) -> Result<CostModel, ScenarioError> {
        self.cost.build(self.dim())
    }

    /// Builds both measures from the scenario seed.
    pub fn measures(&self) -> Result<(BuiltMeasure, BuiltMeasure), ScenarioError> {
        let (Some(src), Some(tgt)) = (&self.source, &self.target) else {
            return Err(semantic("source/target", "both measures are required"));
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let f = src.build(&mut rng)?;
        rng.set_stream(2);
        let g = tgt.build(&mut rng)?;
        Ok((f, g))
    }

    /// Hex SHA-256 of the canonical JSON form, seed included.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
cost = "quadratic"
[source]
kind = "points"
points = [[0.0], [1.0]]
[target]
kind = "points"
points = [[3.0]]
"#;

    #[test]
    fn minimal_scenario_gets_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.seed, 0);
        assert_eq!(s.mass_fraction, 1.0);
        assert_eq!(s.grid.resolution, 64);
        assert!(s.predicates.cone && s.predicates.ball);
        assert_eq!(s.predicates.ball_factor, 0.9);
        let (f, g) = s.measures().unwrap();
        assert_eq!(f.weights, vec![1.0, 1.0]);
        assert_eq!(g.support.len(), 1);
    }

    #[test]
    fn rejects_bad_documents() {
        let zero = format!("mass_fraction = 0.0\n{MINIMAL}");
        assert!(matches!(parse_scenario(&zero), Err(ScenarioError::Semantic { .. })));
        let unknown = MINIMAL.replace("quadratic", "cubic");
        match parse_scenario(&unknown) {
            Err(ScenarioError::Cost(CostError::UnknownCost { known, .. })) => {
                assert!(known.contains(&"quadratic".to_string()))
            }
            other => panic!("{other:?}"),
        }
        let extra = format!("colour = 3\n{MINIMAL}");
        let err = parse_scenario(&extra).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
        let empty = MINIMAL.replace("points = [[3.0]]", "points = []");
        assert!(parse_scenario(&empty).is_err());
    }

    #[test]
    fn digest_tracks_seed_and_random_measures_replay() {
        let text = r#"
seed = 3
cost = { id = "log", floor = 1e-4 }
[source]
kind = "random_box"
lo = [0.0, 0.0]
hi = [1.0, 1.0]
count = 20
[target]
kind = "ball"
center = [3.0, 0.0]
radius = 0.5
count = 10
"#;
        let a = parse_scenario(text).unwrap();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.measures().unwrap(), b.measures().unwrap());
        b.seed = 4;
        assert_ne!(a.digest(), b.digest());
        assert_ne!(a.measures().unwrap().0.support, b.measures().unwrap().0.support);
    }
}
