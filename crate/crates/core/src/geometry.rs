//! Sampled certificates for the geometric predicates on active regions.
//!
//! Every check here tests finitely many points. A pass means only that no
//! violation was found at the tested resolution, and reports say so.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::{ActiveRegionField, ConeEnvelope, FreeBoundarySample};
use crate::cost::{CostConstants, CostError, CostModel};
use crate::point::{distance, dot, norm, DomainSample, Point};

/// Opening parameters above this are capped and flagged.
pub const ALPHA_CAP: f64 = 1e6;

pub const PASS_NOTE: &str = "no violation found at this resolution";
pub const FAIL_NOTE: &str = "violation found";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("out of domain: {0}")]
    Domain(String),
}

/// Interior cone profile `(delta, alpha)`: cones `C_alpha` of height `delta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeProfile {
    pub delta: f64,
    pub alpha: f64,
    /// Set when the opening parameter hit [`ALPHA_CAP`].
    pub alpha_capped: bool,
}

impl ConeProfile {
    /// Half-angle of the cone around its axis: `tan(angle) = 1 / alpha`.
    pub fn half_angle(&self) -> f64 {
        (1.0 / self.alpha).atan()
    }
}

/// Outcome of one sampled predicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredicateReport {
    pub name: String,
    pub pass: bool,
    pub worst_margin: f64,
    pub worst_witness: Vec<Point>,
    pub samples_checked: usize,
    pub note: String,
    #[serde(default)]
    pub degenerate: bool,
}

impl PredicateReport {
    pub fn from_margin(
        name: &str,
        worst_margin: f64,
        worst_witness: Vec<Point>,
        samples_checked: usize,
    ) -> Self {
        let pass = worst_margin >= 0.0;
        PredicateReport {
            name: name.into(),
            pass,
            worst_margin,
            worst_witness,
            samples_checked,
            note: if pass { PASS_NOTE } else { FAIL_NOTE }.into(),
            degenerate: false,
        }
    }

    fn degenerate(name: &str, reason: String, samples_checked: usize) -> Self {
        PredicateReport {
            name: name.into(),
            pass: true,
            worst_margin: 0.0,
            worst_witness: Vec::new(),
            samples_checked,
            note: format!("degenerate: {reason}"),
            degenerate: true,
        }
    }
}

/// Cone profile for sublevel sets of `c(., y)` at cone half-angle `theta`
/// measured from the boundary tangent plane: `alpha = tan(pi/2 - theta)`
/// and `delta = b1 cos(theta) / (2 c2)`, the radius below which the
/// second-order remainder stays under half the first-order decrease.
pub fn cone_profile(
    cost: &CostModel,
    constants: &CostConstants,
    theta: f64,
) -> Result<ConeProfile, GeometryError> {
    cost.require_order(2)?;
    if !(theta > 0.0 && theta < std::f64::consts::FRAC_PI_2) {
        return Err(GeometryError::Domain(format!("theta = {theta} not in (0, pi/2)")));
    }
    if !(constants.b1 > 0.0) {
        return Err(GeometryError::Degenerate(format!("b1 = {} must be positive", constants.b1)));
    }
    if !(constants.c2 > 0.0) {
        return Err(GeometryError::Degenerate(format!("c2 = {} must be positive", constants.c2)));
    }
    let raw_alpha = (std::f64::consts::FRAC_PI_2 - theta).tan();
    let alpha_capped = !(raw_alpha <= ALPHA_CAP);
    Ok(ConeProfile {
        delta: constants.b1 * theta.cos() / (2.0 * constants.c2),
        alpha: raw_alpha.min(ALPHA_CAP),
        alpha_capped,
    })
}

/// Ray fan layout for [`check_cone_condition`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeFan {
    pub rays: usize,
    pub radii: usize,
    pub seed: u64,
}

impl Default for ConeFan {
    fn default() -> Self {
        ConeFan { rays: 64, radii: 8, seed: 0x5eed_c0de }
    }
}

/// Unit directions strictly inside the cone of half-angle `psi` around `axis`.
fn fan_directions(axis: &[f64], psi: f64, fan: &ConeFan) -> Vec<Vec<f64>> {
    let n = axis.len();
    if n == 1 {
        return vec![axis.to_vec()];
    }
    if n == 2 {
        let perp = [-axis[1], axis[0]];
        return (0..fan.rays)
            .map(|k| {
                let t = -psi + (k as f64 + 0.5) * 2.0 * psi / fan.rays as f64;
                vec![t.cos() * axis[0] + t.sin() * perp[0], t.cos() * axis[1] + t.sin() * perp[1]]
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(fan.seed);
    let mut out = vec![axis.to_vec()];
    while out.len() < fan.rays {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = dot(&v, axis);
        v.iter_mut().zip(axis).for_each(|(a, b)| *a -= p * b);
        let vn = norm(&v);
        if vn < 1e-6 {
            continue;
        }
        let t = rng.gen_range(0.0..1.0) * psi * (1.0 - 1e-9);
        out.push(axis.iter().zip(&v).map(|(a, b)| t.cos() * a + t.sin() * b / vn).collect());
    }
    out
}

fn reduce_worst(
    per_sample: Vec<(f64, Vec<Point>, usize)>,
) -> (f64, Vec<Point>, usize) {
    let mut worst = (f64::INFINITY, Vec::new());
    let mut checked = 0;
    for (m, w, c) in per_sample {
        checked += c;
        if m < worst.0 {
            worst = (m, w);
        }
    }
    (worst.0, worst.1, checked)
}

/// Tests the cone `x + C_alpha(nu^perp)` truncated at radius `delta` around
/// every boundary sample: each tested point must lie in the active region.
/// Points off the grid are judged by the field's exact predicate.
pub fn check_cone_condition(
    field: &ActiveRegionField,
    samples: &[FreeBoundarySample],
    profile: &ConeProfile,
    fan: &ConeFan,
) -> PredicateReport {
    let psi = profile.half_angle();
    let h = field.grid().h();
    let r0 = profile.delta.min(2.0 * h);
    let radii: Vec<f64> = (0..fan.radii)
        .map(|k| {
            let t = if fan.radii > 1 { k as f64 / (fan.radii - 1) as f64 } else { 1.0 };
            (r0 + (profile.delta - r0) * t) * (1.0 - 1e-9)
        })
        .collect();
    let per_sample: Vec<(f64, Vec<Point>, usize)> = samples
        .par_iter()
        .map(|s| {
            let x = s.point.coords();
            let mut worst = (f64::INFINITY, Vec::new());
            let mut count = 0;
            for d in fan_directions(&s.normal, psi, fan) {
                for &r in &radii {
                    let p: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + r * b).collect();
                    let m = field.margin(&p);
                    count += 1;
                    if m < worst.0 {
                        worst = (m, vec![s.point.clone(), Point::new(p)]);
                    }
                }
            }
            (worst.0, worst.1, count)
        })
        .collect();
    let (m, w, c) = reduce_worst(per_sample);
    PredicateReport::from_margin("cone_condition", if c == 0 { 0.0 } else { m }, w, c)
}

/// Tests every grid-aligned lattice point inside the open ball of radius
/// `factor * r`, `r = b1 / c2`, tangent to the boundary at each sample on its
/// active side. The lattice stride depends on `r` only, so balls with smaller
/// factors test a subset of the points tested with larger ones.
pub fn check_ball_condition(
    field: &ActiveRegionField,
    samples: &[FreeBoundarySample],
    constants: &CostConstants,
    factor: f64,
) -> Result<PredicateReport, GeometryError> {
    if let Some(cost) = field.cost() {
        cost.require_order(2)?;
    }
    let r = constants
        .ball_radius()
        .map_err(|e| GeometryError::Degenerate(e.to_string()))?;
    if !(factor > 0.0) {
        return Err(GeometryError::Domain(format!("radius factor {factor} must be positive")));
    }
    let grid = field.grid();
    let h = grid.h();
    let stride = ((2.0 * r / (24.0 * h)).ceil() as i64).max(1);
    let step = h * stride as f64;
    let rho = factor * r;
    // The tangent point lies on the sphere itself; a fixed sliver keeps it
    // out regardless of rounding, and keeps balls of growing radius nested.
    let inner = rho - 1e-9 * h;
    let origin = grid.origin().to_vec();
    let per_sample: Vec<(f64, Vec<Point>, usize)> = samples
        .par_iter()
        .map(|s| {
            let center: Vec<f64> =
                s.point.coords().iter().zip(&s.normal).map(|(a, b)| a + rho * b).collect();
            let lo: Vec<i64> = center
                .iter()
                .zip(&origin)
                .map(|(c, o)| ((c - rho - o) / step).floor() as i64)
                .collect();
            let hi: Vec<i64> = center
                .iter()
                .zip(&origin)
                .map(|(c, o)| ((c + rho - o) / step).ceil() as i64)
                .collect();
            let mut worst = (f64::INFINITY, Vec::new());
            let mut count = 0;
            let mut idx = lo.clone();
            loop {
                let p: Vec<f64> =
                    idx.iter().zip(&origin).map(|(&i, o)| o + step * i as f64).collect();
                if distance(&p, &center) < inner {
                    let m = field.margin(&p);
                    count += 1;
                    if m < worst.0 {
                        worst = (m, vec![s.point.clone(), Point::new(p)]);
                    }
                }
                // Odometer increment over the index box.
                let mut k = 0;
                loop {
                    if k == idx.len() {
                        return (worst.0, worst.1, count);
                    }
                    idx[k] += 1;
                    if idx[k] <= hi[k] {
                        break;
                    }
                    idx[k] = lo[k];
                    k += 1;
                }
            }
        })
        .collect();
    let (m, w, c) = reduce_worst(per_sample);
    Ok(PredicateReport::from_margin("ball_condition", if c == 0 { 0.0 } else { m }, w, c))
}

/// Relative slack on the semiconvexity bound.
pub const SEMICONVEXITY_TOLERANCE: f64 = 0.1;

/// Discrete semiconvexity with radius `r`: every second difference of the
/// envelope must satisfy `phi(z+H) + phi(z-H) - 2 phi(z) >= -(H^2 / r)(1 + tol)`.
pub fn check_semiconvexity(
    envelope: &ConeEnvelope,
    r: f64,
) -> Result<PredicateReport, GeometryError> {
    check_semiconvexity_with(envelope, r, SEMICONVEXITY_TOLERANCE)
}

/// [`check_semiconvexity`] with an explicit relative tolerance.
pub fn check_semiconvexity_with(
    envelope: &ConeEnvelope,
    r: f64,
    tolerance: f64,
) -> Result<PredicateReport, GeometryError> {
    if !(r > 0.0) {
        return Err(GeometryError::Domain(format!("radius {r} must be positive")));
    }
    if envelope.counts.iter().any(|&c| c < 3) {
        return Err(GeometryError::Domain("envelope needs at least 3 nodes per axis".into()));
    }
    let mut worst = (f64::INFINITY, Vec::new());
    let diffs = envelope.second_differences();
    for &(k, _axis, h, d2) in &diffs {
        let bound = -(h * h / r) * (1.0 + tolerance);
        let margin = d2 - bound;
        if margin < worst.0 {
            let z = envelope.graph_point(k);
            worst = (margin, vec![Point::new(envelope.frame.to_ambient(&z))]);
        }
    }
    Ok(PredicateReport::from_margin("semiconvexity", worst.0, worst.1, diffs.len()))
}

/// Hash grid over a point cloud for radius queries.
struct SpatialHash<'a> {
    cell: f64,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
    points: &'a [Vec<f64>],
}

impl<'a> SpatialHash<'a> {
    fn new(points: &'a [Vec<f64>], cell: f64) -> Self {
        let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        SpatialHash { cell, buckets, points }
    }

    fn key(p: &[f64], cell: f64) -> Vec<i64> {
        p.iter().map(|v| (v / cell).floor() as i64).collect()
    }

    /// Distance to the nearest point, exact when it is within `cell`.
    fn nearest(&self, q: &[f64]) -> f64 {
        let base = Self::key(q, self.cell);
        let n = q.len();
        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let key: Vec<i64> = base
                .iter()
                .map(|b| {
                    let off = (c % 3) as i64 - 1;
                    c /= 3;
                    b + off
                })
                .collect();
            if let Some(ids) = self.buckets.get(&key) {
                for &i in ids {
                    best = best.min(distance(q, &self.points[i]));
                }
            }
        }
        if best <= self.cell {
            return best;
        }
        self.points.iter().map(|p| distance(q, p)).fold(f64::INFINITY, f64::min)
    }
}

/// Median nearest-neighbor distance of a cloud.
fn median_nn(points: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| distance(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Midpoint coverage of a point cloud: every midpoint of two cloud points
/// must lie within `2 x` the median nearest-neighbor spacing of some cloud
/// point. Collinear clouds in dimension at least 2 are flagged degenerate.
pub fn midpoint_coverage(name: &str, images: &[Vec<f64>]) -> PredicateReport {
    let n = images.first().map_or(0, Vec::len);
    if images.len() < 2 {
        return PredicateReport::degenerate(name, "fewer than two image points".into(), images.len());
    }
    if n >= 2 && affine_rank(images) < n {
        return PredicateReport::degenerate(
            name,
            "image is contained in a lower-dimensional affine subspace".into(),
            images.len(),
        );
    }
    let tol = 2.0 * median_nn(images);
    if !(tol > 0.0) {
        return PredicateReport::degenerate(name, "image points coincide".into(), images.len());
    }
    let hash = SpatialHash::new(images, tol);
    let per: Vec<(f64, usize, usize)> = (0..images.len())
        .into_par_iter()
        .map(|i| {
            let mut worst = (0.0f64, i, i);
            for j in i + 1..images.len() {
                let mid: Vec<f64> =
                    images[i].iter().zip(&images[j]).map(|(a, b)| 0.5 * (a + b)).collect();
                let gap = hash.nearest(&mid);
                if gap > worst.0 {
                    worst = (gap, i, j);
                }
            }
            worst
        })
        .collect();
    let (gap, i, j) = per
        .into_iter()
        .fold((0.0f64, 0, 0), |a, b| if b.0 > a.0 { b } else { a });
    let pairs = images.len() * (images.len() - 1) / 2;
    let mut report = PredicateReport::from_margin(
        name,
        tol - gap,
        vec![Point::new(images[i].clone()), Point::new(images[j].clone())],
        pairs,
    );
    report.note = format!("{} (midpoint tolerance {tol:.3e})", report.note);
    report
}

fn affine_rank(points: &[Vec<f64>]) -> usize {
    let n = points[0].len();
    let k = points.len();
    let mean: Vec<f64> = (0..n).map(|a| points.iter().map(|p| p[a]).sum::<f64>() / k as f64).collect();
    let m = nalgebra::DMatrix::from_fn(k, n, |r, c| points[r][c] - mean[c]);
    let sv = m.singular_values();
    let top = sv.iter().fold(0.0f64, |a, b| a.max(*b));
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > 1e-8 * top).count()
}

/// Sampled c-convexity of `lambda` seen from `x`: the image
/// `{grad_x c(x, y) : y in lambda}` must pass [`midpoint_coverage`].
pub fn check_c_convexity(
    cost: &CostModel,
    x: &Point,
    lambda: &DomainSample,
) -> Result<PredicateReport, GeometryError> {
    cost.require_order(1)?;
    let n = cost.dim();
    if lambda.len() < n + 1 {
        return Err(GeometryError::Domain(format!(
            "need at least {} target samples, got {}",
            n + 1,
            lambda.len()
        )));
    }
    let images = lambda
        .points()
        .iter()
        .map(|y| cost.grad_x(x.coords(), y.coords()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(midpoint_coverage("c_convexity", &images))
}

/// Principal-curvature threshold `a2^n / a1` for the target boundary.
pub fn curvature_threshold(a1: f64, a2: f64, n: u32) -> Result<f64, GeometryError> {
    if !(a1 > 0.0) {
        return Err(GeometryError::Domain(format!("a1 = {a1} must be positive")));
    }
    Ok(a2.powi(n as i32) / a1)
}

/// Integrability exponent of the densities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum HolderP {
    Finite(f64),
    Infinity,
}

/// `(2p - n - 1) / (2p(2n - 1) - n + 1)`, or `1 / (2n - 1)` for `p = inf`.
/// Requires `p > (n + 1) / 2` so the exponent is positive.
pub fn holder_exponent(p: HolderP, n: u32) -> Result<f64, GeometryError> {
    if n == 0 {
        return Err(GeometryError::Domain("dimension must be at least 1".into()));
    }
    let nf = n as f64;
    match p {
        HolderP::Infinity => Ok(1.0 / (2.0 * nf - 1.0)),
        HolderP::Finite(p) => {
            if !(p > (nf + 1.0) / 2.0) {
                return Err(GeometryError::Domain(format!(
                    "p = {p} must exceed (n + 1) / 2 = {}",
                    (nf + 1.0) / 2.0
                )));
            }
            Ok((2.0 * p - nf - 1.0) / (2.0 * p * (2.0 * nf - 1.0) - nf + 1.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::EvaluationGrid;

    #[test]
    fn profile_for_quadratic_example() {
        let c = CostModel::quadratic(2);
        let k = CostConstants { b0: 4.0, b1: 8f64.sqrt(), c2: 1.0 };
        let p = cone_profile(&c, &k, std::f64::consts::FRAC_PI_4).unwrap();
        assert!((p.delta - 1.0).abs() < 1e-12);
        assert!((p.alpha - 1.0).abs() < 1e-12);
        let tiny = cone_profile(&c, &k, 1e-9).unwrap();
        assert!(tiny.alpha_capped && tiny.alpha == ALPHA_CAP);
        let zero = CostConstants { b1: 0.0, ..k };
        assert!(cone_profile(&c, &zero, 0.5).is_err());
    }

    #[test]
    fn half_plane_passes_inward_and_fails_outward() {
        let grid = EvaluationGrid::covering(&[0.0, 0.0], &[1.0, 1.0], 32).unwrap();
        let field = ActiveRegionField::from_signed_distance(&grid, |p| p[0] - 0.5);
        let mk = |nx: f64| FreeBoundarySample {
            cell: 0,
            point: Point::from([0.5 + 1e-3, 0.5]),
            source: Point::from([0.0, 0.0]),
            target: Point::from([0.0, 0.0]),
            normal: vec![nx, 0.0],
            threshold: 0.0,
        };
        let profile = ConeProfile { delta: 0.2, alpha: 0.5, alpha_capped: false };
        let fan = ConeFan::default();
        assert!(check_cone_condition(&field, &[mk(1.0)], &profile, &fan).pass);
        let bad = check_cone_condition(&field, &[mk(-1.0)], &profile, &fan);
        assert!(!bad.pass && bad.worst_margin < 0.0 && bad.worst_witness.len() == 2);
    }

    #[test]
    fn semiconvexity_examples() {
        let nodes: Vec<f64> = (0..21).map(|k| -1.0 + 0.1 * k as f64).collect();
        let env = |f: &dyn Fn(f64) -> f64| {
            ConeEnvelope::from_values(vec![-1.0], vec![0.1], vec![21], nodes.iter().map(|z| f(*z)).collect(), 1.0)
                .unwrap()
        };
        assert!(check_semiconvexity(&env(&|z: f64| z.abs()), 1.0).unwrap().pass);
        assert!(!check_semiconvexity(&env(&|z: f64| -z * z), 1.0).unwrap().pass);
        // Curvature exactly 1/r sits on the bound.
        let r = 2.0;
        assert!(check_semiconvexity(&env(&|z: f64| -z * z / (2.0 * r)), r).unwrap().pass);
        assert!(!check_semiconvexity(&env(&|z: f64| -z * z / (2.0 * r)), 1.5 * r).unwrap().pass);
        // Upper hemisphere near its apex: second differences close to -h^2/r.
        let r = 5.0;
        let cap = env(&|z: f64| (r * r - z * z).sqrt());
        let report = check_semiconvexity(&cap, r).unwrap();
        assert!(report.pass && report.worst_margin < 0.1 * 0.01 / r, "{report:?}");
    }

    #[test]
    fn c_convexity_of_ball_and_clusters() {
        let c = CostModel::quadratic(2);
        let x = Point::from([0.0, 0.0]);
        let mut ball = Vec::new();
        let mut two = Vec::new();
        for i in -10i32..=10 {
            for j in -10i32..=10 {
                let p = [i as f64 * 0.1, j as f64 * 0.1];
                if p[0] * p[0] + p[1] * p[1] <= 1.0 {
                    ball.push(Point::from([p[0] + 3.0, p[1]]));
                }
                if p[0] * p[0] + p[1] * p[1] <= 0.09 {
                    two.push(Point::from([p[0] + 3.0, p[1]]));
                    two.push(Point::from([p[0] + 6.0, p[1]]));
                }
            }
        }
        let role = crate::point::SampleRole::Target;
        let ok = check_c_convexity(&c, &x, &DomainSample::new(ball, role).unwrap()).unwrap();
        assert!(ok.pass, "{ok:?}");
        let bad = check_c_convexity(&c, &x, &DomainSample::new(two, role).unwrap()).unwrap();
        assert!(!bad.pass);
        let line: Vec<Point> = (0..10).map(|k| Point::from([k as f64, 0.0])).collect();
        let flat = check_c_convexity(&c, &x, &DomainSample::new(line, role).unwrap()).unwrap();
        assert!(flat.degenerate && flat.pass);
    }

    #[test]
    fn curvature_and_holder_values() {
        assert_eq!(curvature_threshold(1.0, 1.0, 5).unwrap(), 1.0);
        assert_eq!(curvature_threshold(4.0, 2.0, 3).unwrap(), 2.0);
        assert!(curvature_threshold(0.0, 1.0, 2).is_err());
        assert_eq!(holder_exponent(HolderP::Finite(2.0), 2).unwrap(), 1.0 / 11.0);
        assert_eq!(holder_exponent(HolderP::Infinity, 2).unwrap(), 1.0 / 3.0);
        assert!(holder_exponent(HolderP::Finite(1.5), 2).is_err());
    }
}
