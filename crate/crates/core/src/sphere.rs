//! Squared geodesic distance on the unit sphere, exponential charts, and the
//! polar-cap construction where a non-c-convex target still leaves a whole
//! cap of the source inactive.
//!
//! Points are unit vectors in the ambient space `R^{n+1}`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostError, CostFunction, CostModel};
use crate::geometry::{midpoint_coverage, PredicateReport};
use crate::point::{dot, norm, Point};
use crate::solver::{solve_partial, DiscreteMeasure, SolverError, TransportPlan};

/// Tolerance on `|v| = 1`.
pub const UNIT_TOLERANCE: f64 = 1e-12;
/// Points closer than this to the antipode are treated as on the cut locus.
pub const CUT_LOCUS_GUARD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SphereError {
    #[error("not a unit vector: |v| = {0}")]
    NotUnit(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("point is on the cut locus of the base (distance {0})")]
    CutLocus(f64),
    #[error("tangent vector is not tangent at the base (inner product {0})")]
    NotTangent(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// A unit vector in `R^{n+1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpherePoint(Vec<f64>);

impl SpherePoint {
    pub fn new(v: Vec<f64>) -> Result<Self, SphereError> {
        let r = norm(&v);
        if v.len() < 2 || !((r - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(SphereError::NotUnit(r));
        }
        Ok(SpherePoint(v))
    }

    /// Projects a nonzero vector onto the sphere.
    pub fn normalized(v: Vec<f64>) -> Result<Self, SphereError> {
        let r = norm(&v);
        if !(r > 0.0 && r.is_finite()) {
            return Err(SphereError::NotUnit(r));
        }
        Ok(SpherePoint(v.into_iter().map(|c| c / r).collect()))
    }

    pub fn north(ambient: usize) -> Self {
        let mut v = vec![0.0; ambient];
        v[ambient - 1] = 1.0;
        SpherePoint(v)
    }

    pub fn south(ambient: usize) -> Self {
        let mut v = vec![0.0; ambient];
        v[ambient - 1] = -1.0;
        SpherePoint(v)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn ambient_dim(&self) -> usize {
        self.0.len()
    }

    pub fn antipode(&self) -> Self {
        SpherePoint(self.0.iter().map(|c| -c).collect())
    }

    /// Polar angle from the north pole and azimuth, for 2-sphere output.
    pub fn spherical_coords(&self) -> (f64, f64) {
        let n = self.0.len();
        let polar = self.0[n - 1].clamp(-1.0, 1.0).acos();
        let azimuth = if n >= 3 { self.0[1].atan2(self.0[0]) } else { 0.0 };
        (polar, azimuth)
    }

    pub fn to_point(&self) -> Point {
        Point::new(self.0.clone())
    }
}

/// `{v : <v, center> >= 1 - height}`, height measured along the axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalCap {
    pub center: SpherePoint,
    pub height: f64,
}

impl SphericalCap {
    pub fn new(center: SpherePoint, height: f64) -> Result<Self, SphereError> {
        if !(height > 0.0 && height <= 2.0) {
            return Err(SphereError::Config(format!("cap height {height} not in (0, 2]")));
        }
        Ok(SphericalCap { center, height })
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        dot(v, self.center.coords()) >= 1.0 - self.height
    }

    /// Geodesic radius of the cap.
    pub fn angular_radius(&self) -> f64 {
        (1.0 - self.height).clamp(-1.0, 1.0).acos()
    }

    /// Fibonacci-type lattice of `count` points covering the cap uniformly
    /// in area. Only defined on the 2-sphere.
    pub fn lattice(&self, count: usize) -> Result<Vec<SpherePoint>, SphereError> {
        if self.center.ambient_dim() != 3 {
            return Err(SphereError::DimensionMismatch(self.center.ambient_dim(), 3));
        }
        let (e1, e2) = tangent_frame(self.center.coords());
        let c = self.center.coords();
        let golden = PI * (3.0 - 5f64.sqrt());
        Ok((0..count)
            .map(|k| {
                let z = 1.0 - self.height * (k as f64 + 0.5) / count as f64;
                let s = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden * k as f64;
                let v: Vec<f64> = (0..3)
                    .map(|i| z * c[i] + s * (phi.cos() * e1[i] + phi.sin() * e2[i]))
                    .collect();
                SpherePoint::normalized(v).expect("lattice point is nonzero")
            })
            .collect())
    }
}

/// Orthonormal pair spanning the tangent plane of a unit vector in `R^3`.
fn tangent_frame(c: &[f64]) -> ([f64; 3], [f64; 3]) {
    let helper = if c[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let p = dot(&helper, c);
    let mut e1 = [helper[0] - p * c[0], helper[1] - p * c[1], helper[2] - p * c[2]];
    let r = norm(&e1);
    e1.iter_mut().for_each(|v| *v /= r);
    let e2 = [
        c[1] * e1[2] - c[2] * e1[1],
        c[2] * e1[0] - c[0] * e1[2],
        c[0] * e1[1] - c[1] * e1[0],
    ];
    (e1, e2)
}

/// Quasi-uniform Fibonacci lattice of `count` points on the 2-sphere.
pub fn fibonacci_sphere(count: usize) -> Vec<SpherePoint> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let s = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            SpherePoint::normalized(vec![s * phi.cos(), s * phi.sin(), z]).expect("nonzero")
        })
        .collect()
}

/// Angle between unit vectors, as `2 atan2(|x - y|, |x + y|)`: unlike
/// `acos(x . y)` it keeps full precision near 0 and pi.
pub fn geodesic_distance(x: &[f64], y: &[f64]) -> f64 {
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// `d(x, y)^2 / 2`.
pub fn geodesic_cost(x: &SpherePoint, y: &SpherePoint) -> f64 {
    let d = geodesic_distance(x.coords(), y.coords());
    0.5 * d * d
}

fn log_raw(base: &[f64], x: &[f64]) -> Result<Vec<f64>, SphereError> {
    let d = geodesic_distance(base, x);
    if d > PI - CUT_LOCUS_GUARD {
        return Err(SphereError::CutLocus(d));
    }
    let c = dot(base, x).clamp(-1.0, 1.0);
    let w: Vec<f64> = x.iter().zip(base).map(|(a, b)| a - c * b).collect();
    let wn = norm(&w);
    if wn == 0.0 || d == 0.0 {
        return Ok(vec![0.0; base.len()]);
    }
    Ok(w.into_iter().map(|v| v * d / wn).collect())
}

/// Logarithm map: the tangent vector at `base` whose geodesic reaches `x`.
pub fn log_map(base: &SpherePoint, x: &SpherePoint) -> Result<Vec<f64>, SphereError> {
    if base.ambient_dim() != x.ambient_dim() {
        return Err(SphereError::DimensionMismatch(base.ambient_dim(), x.ambient_dim()));
    }
    log_raw(base.coords(), x.coords())
}

/// Exponential map, the inverse of [`log_map`] on the open ball of radius pi.
pub fn exp_map(base: &SpherePoint, v: &[f64]) -> Result<SpherePoint, SphereError> {
    if base.ambient_dim() != v.len() {
        return Err(SphereError::DimensionMismatch(base.ambient_dim(), v.len()));
    }
    let t = dot(base.coords(), v);
    if t.abs() > 1e-9 * (1.0 + norm(v)) {
        return Err(SphereError::NotTangent(t));
    }
    let r = norm(v);
    if r == 0.0 {
        return Ok(base.clone());
    }
    let out = base
        .coords()
        .iter()
        .zip(v)
        .map(|(b, w)| r.cos() * b + r.sin() * w / r)
        .collect();
    SpherePoint::normalized(out)
}

/// Smallest distance from a transported point to the cut locus of its
/// source, `pi - d(x, T(x))`, over positive-mass entries. Infinite for an
/// empty plan.
pub fn cut_locus_margin(plan: &TransportPlan) -> f64 {
    plan.entries
        .iter()
        .filter(|e| e.mass > 0.0)
        .map(|e| {
            let (x, y) = plan.pair(e);
            PI - geodesic_distance(x.coords(), y.coords())
        })
        .fold(f64::INFINITY, f64::min)
}

/// `d^2 / 2` on the unit sphere as a [`CostFunction`] on ambient vectors.
///
/// The gradient is the Riemannian one, `-log_x(y)`, expressed in ambient
/// coordinates. Higher derivatives are not provided because the ambient
/// finite-difference stencil would leave the sphere.
#[derive(Clone, Copy, Debug, Default)]
pub struct SphereCost;

impl CostFunction for SphereCost {
    fn id(&self) -> &str {
        "sphere"
    }

    fn smoothness(&self) -> u8 {
        1
    }

    fn vanishes_on_diagonal(&self) -> bool {
        true
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = geodesic_distance(x, y);
        0.5 * d * d
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        log_raw(x, y).ok().map(|v| v.into_iter().map(|c| -c).collect())
    }
}

/// Height of the target cap and of the excluded north cap.
pub const EXAMPLE_CAP_HEIGHT: f64 = 1.0 / 16.0;
/// Height of the enlarged cap around the target.
pub const EXAMPLE_ENLARGED_HEIGHT: f64 = 1.0 / 8.0;
/// Default relative excess of target mass over the source mass on the cap.
pub const DEFAULT_RHO: f64 = 0.1;
/// Default bound on the active mass in the north cap.
pub const DEFAULT_MASS_MARGIN: f64 = 1e-9;
/// Smallest accepted source lattice.
pub const MIN_EXAMPLE_RESOLUTION: usize = 500;

/// Outcome of [`run_cap_example`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapExampleReport {
    pub resolution: usize,
    pub rho: f64,
    pub mass_margin: f64,
    pub source_count: usize,
    pub target_count: usize,
    /// Source mass on the target cap.
    pub source_mass_on_target_cap: f64,
    pub target_mass: f64,
    pub transported_mass: f64,
    /// Source mass on the enlarged cap minus the target mass.
    pub epsilon: f64,
    pub objective: f64,
    pub north_cap_active_mass: f64,
    pub north_cap_inactive: bool,
    pub tan_theta: f64,
    pub two_theta: f64,
    /// `2 theta <= 8/7 < 15/8`.
    pub angle_chain_holds: bool,
    pub max_transport_distance: f64,
    pub long_arcs_absent: bool,
    pub cut_locus_margin: f64,
    /// Active sources with an inactive lattice neighbor, as (polar, azimuth).
    pub boundary_samples: Vec<(f64, f64)>,
}

/// Builds and solves the polar-cap construction.
///
/// Sources are a Fibonacci lattice of `resolution` points with equal weight
/// `1 / resolution`. Targets are the lattice points in the south cap of
/// height 1/16, weighted so their total is `(1 + rho)` times the source mass
/// there, and the transported mass is `(1 + rho / 2)` times that source mass.
pub fn run_cap_example(
    resolution: usize,
    mass_margin: f64,
    rho: f64,
) -> Result<CapExampleReport, SphereError> {
    if resolution < MIN_EXAMPLE_RESOLUTION {
        return Err(SphereError::Config(format!(
            "resolution {resolution} below the minimum {MIN_EXAMPLE_RESOLUTION}"
        )));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(SphereError::Config(format!("rho = {rho} must be positive")));
    }
    let lattice = fibonacci_sphere(resolution);
    let w = 1.0 / resolution as f64;
    let target_cap = SphericalCap::new(SpherePoint::south(3), EXAMPLE_CAP_HEIGHT)?;
    let enlarged = SphericalCap::new(SpherePoint::south(3), EXAMPLE_ENLARGED_HEIGHT)?;
    let north_cap = SphericalCap::new(SpherePoint::north(3), EXAMPLE_CAP_HEIGHT)?;

    let targets: Vec<Point> = lattice
        .iter()
        .filter(|p| target_cap.contains(p.coords()))
        .map(SpherePoint::to_point)
        .collect();
    if targets.is_empty() {
        return Err(SphereError::Config("target cap contains no lattice points".into()));
    }
    let on_cap = targets.len() as f64 * w;
    let target_mass = (1.0 + rho) * on_cap;
    let m = (1.0 + rho / 2.0) * on_cap;
    let on_enlarged =
        lattice.iter().filter(|p| enlarged.contains(p.coords())).count() as f64 * w;
    let epsilon = on_enlarged - target_mass;
    if !(epsilon > 0.0) {
        return Err(SphereError::Config(format!(
            "enlarged cap carries {on_enlarged} source mass, not above target mass {target_mass}"
        )));
    }

    let sources: Vec<Point> = lattice.iter().map(SpherePoint::to_point).collect();
    let f = DiscreteMeasure::new(sources, vec![w; resolution])?;
    let g = DiscreteMeasure::uniform(targets.clone(), target_mass)?;
    let cost = CostModel::new(std::sync::Arc::new(SphereCost), 3);
    let plan = solve_partial(&f, &g, m, &cost)?;

    let north_cap_active_mass: f64 = lattice
        .iter()
        .zip(&plan.left_marginal)
        .filter(|(p, _)| north_cap.contains(p.coords()))
        .map(|(_, a)| a)
        .sum();
    let max_transport_distance = plan
        .entries
        .iter()
        .filter(|e| e.mass > 0.0)
        .map(|e| {
            let (x, y) = plan.pair(e);
            geodesic_distance(x.coords(), y.coords())
        })
        .fold(0.0, f64::max);

    let cos_theta = 1.0 - EXAMPLE_ENLARGED_HEIGHT;
    let tan_theta = (1.0 - cos_theta * cos_theta).sqrt() / cos_theta;
    let two_theta = 2.0 * tan_theta.atan();

    Ok(CapExampleReport {
        resolution,
        rho,
        mass_margin,
        source_count: resolution,
        target_count: targets.len(),
        source_mass_on_target_cap: on_cap,
        target_mass,
        transported_mass: plan.mass,
        epsilon,
        objective: plan.objective,
        north_cap_active_mass,
        north_cap_inactive: north_cap_active_mass <= mass_margin,
        tan_theta,
        two_theta,
        angle_chain_holds: two_theta <= 8.0 / 7.0 && 8.0 / 7.0 < 15.0 / 8.0,
        max_transport_distance,
        long_arcs_absent: max_transport_distance < 15.0 / 8.0,
        cut_locus_margin: cut_locus_margin(&plan),
        boundary_samples: active_boundary(&lattice, &plan.left_marginal, 6),
    })
}

/// Active lattice points with an inactive point among their `k` nearest
/// neighbors.
fn active_boundary(lattice: &[SpherePoint], active_mass: &[f64], k: usize) -> Vec<(f64, f64)> {
    let active: Vec<bool> = active_mass.iter().map(|&a| a > 0.0).collect();
    let mut out = Vec::new();
    for (i, p) in lattice.iter().enumerate() {
        if !active[i] {
            continue;
        }
        let mut near: Vec<(f64, usize)> = lattice
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, q)| (-dot(p.coords(), q.coords()), j))
            .collect();
        let k = k.min(near.len());
        if k < near.len() {
            near.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0));
        }
        if near[..k].iter().any(|&(_, j)| !active[j]) {
            out.push(p.spherical_coords());
        }
    }
    out
}

/// Default density of the cap sample in [`annulus_image_demo`].
pub const ANNULUS_SAMPLES: usize = 600;

/// Maps a lattice on `cap` through `y -> grad_x c(base, y)` into the tangent
/// plane at `base` (2-sphere only) and runs the midpoint-coverage test on the
/// image. Sample points on the cut locus of `base` have no image and are
/// dropped; the count is recorded in the note.
pub fn cap_image_convexity(
    base: &SpherePoint,
    cap: &SphericalCap,
    samples: usize,
) -> Result<PredicateReport, SphereError> {
    let lattice = cap.lattice(samples)?;
    let (e1, e2) = tangent_frame(base.coords());
    let mut images = Vec::with_capacity(lattice.len());
    let mut dropped = 0;
    for y in &lattice {
        match log_map(base, y) {
            Ok(v) => images.push(vec![-dot(&v, &e1), -dot(&v, &e2)]),
            Err(SphereError::CutLocus(_)) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    let mut report = midpoint_coverage("c_convexity", &images);
    if dropped > 0 {
        report.note = format!("{}; {dropped} samples on the cut locus dropped", report.note);
    }
    Ok(report)
}

/// The image of the south cap of height 1/16 seen from the north pole is an
/// annulus, so the midpoint test fails.
pub fn annulus_image_demo() -> PredicateReport {
    let cap = SphericalCap::new(SpherePoint::south(3), EXAMPLE_CAP_HEIGHT).expect("valid height");
    cap_image_convexity(&SpherePoint::north(3), &cap, ANNULUS_SAMPLES).expect("2-sphere input")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng) -> SpherePoint {
        loop {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = norm(&v);
            if r > 0.1 && r <= 1.0 {
                return SpherePoint::normalized(v).unwrap();
            }
        }
    }

    #[test]
    fn cost_values() {
        let n = SpherePoint::north(3);
        let e = SpherePoint::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(geodesic_cost(&n, &n), 0.0);
        assert!((geodesic_cost(&n, &n.antipode()) - PI * PI / 2.0).abs() < 1e-15);
        assert!((geodesic_cost(&n, &e) - PI * PI / 8.0).abs() < 1e-15);
        assert!(SpherePoint::new(vec![1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn charts_round_trip_and_reject_antipodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = SpherePoint::north(3);
        assert_eq!(log_map(&base, &base).unwrap(), vec![0.0; 3]);
        assert!(matches!(log_map(&base, &base.antipode()), Err(SphereError::CutLocus(_))));
        for _ in 0..1000 {
            let b = random_point(&mut rng);
            let x = random_point(&mut rng);
            if geodesic_distance(b.coords(), x.coords()) > PI - 1e-3 {
                continue;
            }
            let back = exp_map(&b, &log_map(&b, &x).unwrap()).unwrap();
            let err = norm(&back.coords().iter().zip(x.coords()).map(|(a, c)| a - c).collect::<Vec<_>>());
            assert!(err <= 1e-10, "round trip error {err}");
        }
    }

    #[test]
    fn chart_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        while checked < 200 {
            let x = random_point(&mut rng);
            let y = random_point(&mut rng);
            let d = geodesic_distance(x.coords(), y.coords());
            if !(0.1..=PI - 0.1).contains(&d) {
                continue;
            }
            checked += 1;
            let grad = SphereCost.grad_x(x.coords(), y.coords()).unwrap();
            let (e1, e2) = tangent_frame(x.coords());
            for e in [e1, e2] {
                let h = 1e-5;
                let at = |t: f64| {
                    let v: Vec<f64> = e.iter().map(|c| c * t).collect();
                    geodesic_cost(&exp_map(&x, &v).unwrap(), &y)
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                assert!((fd - dot(&grad, &e)).abs() < 1e-6, "{fd} vs {}", dot(&grad, &e));
            }
        }
    }

    #[test]
    fn cut_locus_margin_examples() {
        let n = SpherePoint::north(3);
        let near = SpherePoint::normalized(vec![0.05, 0.0, 1.0]).unwrap();
        let mk = |y: &SpherePoint| {
            let f = DiscreteMeasure::new(vec![n.to_point()], vec![1.0]).unwrap();
            let g = DiscreteMeasure::new(vec![y.to_point()], vec![1.0]).unwrap();
            solve_partial(&f, &g, 1.0, &CostModel::from_id("sphere", 3).unwrap()).unwrap()
        };
        let plan = mk(&near);
        let d = geodesic_distance(n.coords(), near.coords());
        assert!(cut_locus_margin(&plan) >= PI - 0.1);
        assert_eq!(cut_locus_margin(&plan) + d, PI);
        assert_eq!(cut_locus_margin(&mk(&n.antipode())), 0.0);
    }

    #[test]
    fn cap_images() {
        let report = annulus_image_demo();
        assert!(!report.pass && !report.degenerate, "{report:?}");
        let tilt = SpherePoint::new(vec![(PI / 4.0).sin(), 0.0, (PI / 4.0).cos()]).unwrap();
        let small = SphericalCap::new(tilt, 1.0 - 0.2f64.cos()).unwrap();
        let ok = cap_image_convexity(&SpherePoint::north(3), &small, 400).unwrap();
        assert!(ok.pass && !ok.degenerate, "{ok:?}");
        let tiny = SphericalCap::new(SpherePoint::south(3), 1e-15).unwrap();
        let degenerate = cap_image_convexity(&SpherePoint::north(3), &tiny, 50).unwrap();
        assert!(degenerate.degenerate && degenerate.pass);
    }

    #[test]
    fn cap_example_leaves_north_cap_inactive() {
        let r = run_cap_example(MIN_EXAMPLE_RESOLUTION, DEFAULT_MASS_MARGIN, DEFAULT_RHO).unwrap();
        assert!(r.epsilon > 0.0 && r.north_cap_inactive, "{r:?}");
        assert!(r.long_arcs_absent && r.angle_chain_holds);
        assert!((r.tan_theta - 15f64.sqrt() / 7.0).abs() < 1e-12);
        assert!(!r.boundary_samples.is_empty());
        assert!(run_cap_example(100, 1e-9, 0.1).is_err());
    }
}
