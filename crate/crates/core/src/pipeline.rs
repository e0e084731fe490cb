//! Scenario runs: solve, build the active region, extract the boundary, run
//! the enabled predicates, and collect everything into a [`RunRecord`].

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::{
    active_region, cone_envelope, eligible_window_centers, extract_boundary, graph_match,
    normal_field_holder, ActiveRegionField, BoundaryError, ConeEnvelope, EnvelopeResolution,
    EnvelopeWindow, EvaluationGrid, FreeBoundarySample,
};
use crate::cost::{CostConstants, CostError, CostModel};
use crate::geometry::{
    check_ball_condition, check_c_convexity, check_cone_condition, check_semiconvexity_with,
    cone_profile, ConeFan, ConeProfile, GeometryError, PredicateReport,
};
use crate::mtw::{a3_infimum, A3Report, MtwError};
use crate::point::{DomainSample, Point, SampleRole};
use crate::scenario::{BuiltMeasure, Region, Scenario, ScenarioError};
use crate::solver::{check_duality, solve_partial, DiscreteMeasure, SolverError, TransportPlan};
use crate::sphere::{
    annulus_image_demo, cut_locus_margin, run_cap_example, CapExampleReport, SphereError,
};

/// Module errors, labelled with the stage that raised them.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("cost: {0}")]
    Cost(#[from] CostError),
    #[error("boundary: {0}")]
    Boundary(#[from] BoundaryError),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("mtw: {0}")]
    Mtw(#[from] MtwError),
    #[error("sphere: {0}")]
    Sphere(#[from] SphereError),
}

/// A predicate that was not run, and why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedPredicate {
    pub name: String,
    pub reason: String,
}

/// Everything a run reports. Wall-clock timings are kept out of the
/// serialized form so records are reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario_digest: String,
    pub seed: u64,
    pub cost: String,
    pub dim: usize,
    pub mass: Option<f64>,
    pub objective: Option<f64>,
    pub duality_violation: Option<f64>,
    pub constants: Option<CostConstants>,
    pub cone_profile: Option<ConeProfile>,
    pub grid_h: Option<f64>,
    pub active_cells: Option<usize>,
    pub boundary_samples: Option<usize>,
    /// Holder seminorm of the boundary normal field with exponent 1.
    pub normal_lipschitz: Option<f64>,
    pub cut_locus_margin: Option<f64>,
    pub reports: Vec<PredicateReport>,
    pub skipped: Vec<SkippedPredicate>,
    pub warnings: Vec<String>,
    pub mtw: Option<A3Report>,
    pub sphere: Option<CapExampleReport>,
    /// Midpoint test on the image of the target cap; expected to fail.
    pub sphere_annulus: Option<PredicateReport>,
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

impl RunRecord {
    fn new(s: &Scenario) -> Self {
        RunRecord {
            scenario_digest: s.digest(),
            seed: s.seed,
            cost: s.cost.id().to_string(),
            dim: s.dim(),
            mass: None,
            objective: None,
            duality_violation: None,
            constants: None,
            cone_profile: None,
            grid_h: None,
            active_cells: None,
            boundary_samples: None,
            normal_lipschitz: None,
            cut_locus_margin: None,
            reports: Vec::new(),
            skipped: Vec::new(),
            warnings: Vec::new(),
            mtw: None,
            sphere: None,
            sphere_annulus: None,
            timings: Vec::new(),
        }
    }

    /// True when every predicate that ran passed.
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    fn skip(&mut self, name: &str, reason: impl Into<String>) {
        self.skipped.push(SkippedPredicate { name: name.into(), reason: reason.into() });
    }
}

/// How far a run goes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Solve,
    Boundary,
    Verify,
}

/// A record together with the artifacts behind it.
#[derive(Debug)]
pub struct PipelineOutput {
    pub record: RunRecord,
    pub plan: Option<TransportPlan>,
    pub field: Option<ActiveRegionField>,
    pub samples: Vec<FreeBoundarySample>,
    pub envelopes: Vec<ConeEnvelope>,
}

/// Runs every stage.
pub fn run_pipeline(s: &Scenario) -> Result<RunRecord, PipelineError> {
    Ok(run_stages(s, Stage::Verify)?.record)
}

struct Timer<'a> {
    record: &'a mut Vec<(String, f64)>,
    start: Instant,
}

impl<'a> Timer<'a> {
    fn lap(&mut self, name: &str) {
        self.record.push((name.into(), self.start.elapsed().as_secs_f64()));
        self.start = Instant::now();
    }
}

/// Runs the scenario up to and including `stage`.
pub fn run_stages(s: &Scenario, stage: Stage) -> Result<PipelineOutput, PipelineError> {
    s.validate()?;
    let mut record = RunRecord::new(s);
    if let Some(ex) = &s.sphere_example {
        let start = Instant::now();
        let report = run_cap_example(ex.resolution, ex.mass_margin, ex.rho)?;
        record.objective = Some(report.objective);
        record.mass = Some(report.transported_mass);
        record.cut_locus_margin = Some(report.cut_locus_margin);
        record.reports.push(PredicateReport::from_margin(
            "north_cap_inactive",
            report.mass_margin - report.north_cap_active_mass,
            Vec::new(),
            report.source_count,
        ));
        record.reports.push(PredicateReport::from_margin(
            "angle_chain",
            (8.0 / 7.0 - report.two_theta).min(15.0 / 8.0 - 8.0 / 7.0),
            Vec::new(),
            1,
        ));
        record.reports.push(PredicateReport::from_margin(
            "no_long_arcs",
            15.0 / 8.0 - report.max_transport_distance,
            Vec::new(),
            report.target_count,
        ));
        record.timings.push(("sphere_example".into(), start.elapsed().as_secs_f64()));
        if stage >= Stage::Verify {
            record.sphere_annulus = Some(annulus_image_demo());
        }
        record.sphere = Some(report);
        return Ok(PipelineOutput {
            record,
            plan: None,
            field: None,
            samples: Vec::new(),
            envelopes: Vec::new(),
        });
    }

    let mut timings = Vec::new();
    let mut timer = Timer { record: &mut timings, start: Instant::now() };
    let cost = s.cost_model()?;
    let (fb, gb) = s.measures()?;
    let f = DiscreteMeasure::new(fb.support.clone(), fb.weights.clone())?;
    let g = DiscreteMeasure::new(gb.support.clone(), gb.weights.clone())?;
    let m = s.mass_fraction * f.total_mass().min(g.total_mass());
    let plan = solve_partial(&f, &g, m, &cost)?;
    record.mass = Some(plan.mass);
    record.objective = Some(plan.objective);
    record.duality_violation = Some(check_duality(&plan, &cost));
    timer.lap("solve");

    let mut out = PipelineOutput {
        record,
        plan: None,
        field: None,
        samples: Vec::new(),
        envelopes: Vec::new(),
    };
    if stage == Stage::Solve {
        out.plan = Some(plan);
        out.record.timings = timings;
        return Ok(out);
    }
    let record = &mut out.record;

    if cost.id() == "sphere" {
        record.cut_locus_margin = Some(cut_locus_margin(&plan));
        for name in PREDICATES {
            record.skip(name, "grid predicates need a Euclidean cost");
        }
        out.plan = Some(plan);
        out.record.timings = timings;
        return Ok(out);
    }

    let (lo, hi) = region_bounds(&fb);
    let grid = EvaluationGrid::covering(&lo, &hi, s.grid.resolution)?;
    let omega_mask = region_mask(&grid, &fb);
    let field = active_region(&plan, &cost, &grid)?;
    let samples = extract_boundary(&field, &omega_mask)?;
    record.grid_h = Some(grid.h());
    record.active_cells = Some(field.active_count());
    record.boundary_samples = Some(samples.len());
    record.normal_lipschitz = normal_field_holder(&samples, 1.0).ok();
    timer.lap("boundary");

    if stage >= Stage::Verify {
        verify(s, &cost, &fb, &gb, &field, &samples, record, &mut out.envelopes)?;
        timer.lap("predicates");
        if s.mtw.enabled {
            record.mtw = run_mtw(s, &cost, &fb, &gb, record)?;
            timer.lap("mtw");
        }
    }
    out.record.timings = timings;
    out.plan = Some(plan);
    out.field = Some(field);
    out.samples = samples;
    Ok(out)
}

const PREDICATES: [&str; 5] =
    ["cone_condition", "ball_condition", "lipschitz_envelope", "semiconvexity", "c_convexity"];

fn region_bounds(m: &BuiltMeasure) -> (Vec<f64>, Vec<f64>) {
    match &m.region {
        Region::Box { lo, hi } => (lo.clone(), hi.clone()),
        Region::Ball { center, radius } => (
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        ),
        Region::Cloud { radius } => {
            let (lo, hi) = crate::point::bounding_box(&m.support);
            (
                lo.iter().map(|v| v - radius).collect(),
                hi.iter().map(|v| v + radius).collect(),
            )
        }
        Region::Sphere => crate::point::bounding_box(&m.support),
    }
}

fn region_mask(grid: &EvaluationGrid, m: &BuiltMeasure) -> Vec<bool> {
    match &m.region {
        Region::Box { lo, hi } => grid.box_mask(lo, hi),
        Region::Ball { center, radius } => {
            grid.proximity_mask(&[Point::new(center.clone())], *radius)
        }
        Region::Cloud { radius } => grid.proximity_mask(&m.support, *radius),
        Region::Sphere => vec![false; grid.len()],
    }
}

#[allow(clippy::too_many_arguments)]
fn verify(
    s: &Scenario,
    cost: &CostModel,
    fb: &BuiltMeasure,
    gb: &BuiltMeasure,
    field: &ActiveRegionField,
    samples: &[FreeBoundarySample],
    record: &mut RunRecord,
    envelopes: &mut Vec<ConeEnvelope>,
) -> Result<(), PipelineError> {
    let p = &s.predicates;
    let omega = DomainSample::new(fb.support.clone(), SampleRole::Source)?;
    let lambda = DomainSample::new(gb.support.clone(), SampleRole::Target)?;

    // Constants and the cone profile gate the grid predicates.
    let mut gate: Option<String> = None;
    let mut constants = None;
    if cost.smoothness() < 2 {
        gate = Some(format!("cost `{}` has no second derivatives", cost.id()));
    } else {
        let (k, b1) = CostConstants::estimate(cost, &omega, &lambda)?;
        record.constants = Some(k);
        if b1.degenerate {
            record.warnings.push(format!(
                "b1 = {:.3e} is numerically zero on the sampled domain (supports overlap or touch); \
                 cone and ball radii are undefined",
                b1.value
            ));
            gate = Some("b1 is zero on the sampled domain".into());
        } else if !(k.c2 > 0.0) {
            gate = Some("c2 is zero on the sampled domain".into());
        } else {
            constants = Some(k);
        }
    }
    if samples.is_empty() && gate.is_none() {
        gate = Some("no free boundary samples at this resolution".into());
    }
    let profile = match (&constants, &gate) {
        (Some(k), None) => {
            let pr = cone_profile(cost, k, p.theta)?;
            if pr.alpha_capped {
                record.warnings.push("cone opening parameter capped".into());
            }
            record.cone_profile = Some(pr);
            Some(pr)
        }
        _ => None,
    };

    let fan = ConeFan { seed: s.seed, ..ConeFan::default() };
    match (p.cone, &profile, &gate) {
        (false, _, _) => record.skip("cone_condition", "disabled"),
        (true, Some(pr), _) => {
            record.reports.push(check_cone_condition(field, samples, pr, &fan));
        }
        (true, None, reason) => record.skip("cone_condition", reason.clone().unwrap_or_default()),
    }
    match (p.ball, &constants, &gate) {
        (false, _, _) => record.skip("ball_condition", "disabled"),
        (true, Some(k), None) => {
            record.reports.push(check_ball_condition(field, samples, k, p.ball_factor)?);
        }
        (true, _, reason) => record.skip("ball_condition", reason.clone().unwrap_or_default()),
    }

    let wants_envelopes = p.lipschitz || p.semiconvexity;
    let envelope_gate = if field.grid().dim() < 2 {
        Some("envelopes need dimension at least 2".to_string())
    } else {
        gate.clone()
    };
    match (wants_envelopes, &profile, &constants, envelope_gate) {
        (true, Some(pr), Some(k), None) => {
            let r = k.ball_radius()?;
            let centers = eligible_window_centers(samples, r, p.windows);
            if centers.is_empty() {
                for (on, name) in [(p.lipschitz, "lipschitz_envelope"), (p.semiconvexity, "semiconvexity")] {
                    if on {
                        record.skip(name, "no boundary sample has a full envelope window");
                    }
                }
            } else {
                let h = field.grid().h();
                let mut lip = (f64::INFINITY, Vec::new());
                let mut semi = (f64::INFINITY, Vec::new(), 0usize);
                for &c in &centers {
                    let s0 = &samples[c];
                    let window = EnvelopeWindow { center: s0.point.clone(), half_width: r };
                    if p.lipschitz {
                        let env = cone_envelope(
                            samples,
                            &s0.normal,
                            pr.alpha,
                            &window,
                            EnvelopeResolution::Spacing(h / 2.0),
                        )?;
                        let gm = graph_match(&env, samples)?;
                        let margin = (2.0 * h - gm).min(pr.alpha + 2.0 * h - env.lipschitz_constant());
                        if margin < lip.0 {
                            lip = (margin, vec![s0.point.clone()]);
                        }
                        envelopes.push(env);
                    }
                    if p.semiconvexity {
                        let coarse = cone_envelope(
                            samples,
                            &s0.normal,
                            pr.alpha,
                            &window,
                            EnvelopeResolution::Nodes(3),
                        )?;
                        let rep = check_semiconvexity_with(&coarse, r, p.semiconvexity_tolerance)?;
                        semi.2 += rep.samples_checked;
                        if rep.worst_margin < semi.0 {
                            semi = (rep.worst_margin, rep.worst_witness, semi.2);
                        }
                    }
                }
                if p.lipschitz {
                    record.reports.push(PredicateReport::from_margin(
                        "lipschitz_envelope",
                        lip.0,
                        lip.1,
                        centers.len(),
                    ));
                } else {
                    record.skip("lipschitz_envelope", "disabled");
                }
                if p.semiconvexity {
                    record.reports.push(PredicateReport::from_margin("semiconvexity", semi.0, semi.1, semi.2));
                } else {
                    record.skip("semiconvexity", "disabled");
                }
            }
        }
        (false, ..) => {
            record.skip("lipschitz_envelope", "disabled");
            record.skip("semiconvexity", "disabled");
        }
        (true, _, _, reason) => {
            let reason = reason.unwrap_or_else(|| "cone profile unavailable".into());
            for (on, name) in [(p.lipschitz, "lipschitz_envelope"), (p.semiconvexity, "semiconvexity")] {
                record.skip(name, if on { reason.clone() } else { "disabled".into() });
            }
        }
    }

    if !p.c_convexity {
        record.skip("c_convexity", "disabled");
    } else if lambda.len() < cost.dim() + 1 {
        record.skip("c_convexity", "fewer than n + 1 target samples");
    } else {
        let x = central_point(&fb.support);
        record.reports.push(check_c_convexity(cost, &x, &lambda)?);
    }
    Ok(())
}

/// The support point closest to the support's centroid.
fn central_point(points: &[Point]) -> Point {
    let n = points[0].dim();
    let k = points.len() as f64;
    let mean: Vec<f64> = (0..n).map(|a| points.iter().map(|p| p[a]).sum::<f64>() / k).collect();
    let mean = Point::new(mean);
    points
        .iter()
        .min_by(|a, b| a.distance(&mean).total_cmp(&b.distance(&mean)))
        .expect("nonempty support")
        .clone()
}

fn run_mtw(
    s: &Scenario,
    cost: &CostModel,
    fb: &BuiltMeasure,
    gb: &BuiltMeasure,
    record: &mut RunRecord,
) -> Result<Option<A3Report>, PipelineError> {
    if cost.smoothness() < 4 {
        record.warnings.push(format!("mtw skipped: cost `{}` is not order 4", cost.id()));
        return Ok(None);
    }
    if cost.dim() < 2 {
        record.warnings.push("mtw skipped: dimension 1".into());
        return Ok(None);
    }
    Ok(Some(sampled_a3(s, cost, fb, gb)?))
}

/// Sampled A3 infimum over seeded source/target basepoints. Pairs closer
/// than the cost's separation scale are skipped.
pub fn sampled_a3(
    s: &Scenario,
    cost: &CostModel,
    fb: &BuiltMeasure,
    gb: &BuiltMeasure,
) -> Result<A3Report, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(3);
    let mut pairs = Vec::with_capacity(s.mtw.basepoints);
    let mut attempts = 0;
    while pairs.len() < s.mtw.basepoints && attempts < 100 * s.mtw.basepoints.max(1) {
        attempts += 1;
        let x = &fb.support[rng.gen_range(0..fb.support.len())];
        let y = &gb.support[rng.gen_range(0..gb.support.len())];
        if x.distance(y) > 1e-3 {
            pairs.push((x.clone(), y.clone()));
        }
    }
    Ok(a3_infimum(cost, &pairs, s.mtw.directions)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;

    #[test]
    fn one_dimensional_run_skips_envelopes() {
        let s = parse_scenario(
            r#"
cost = "quadratic"
mass_fraction = 0.5
[source]
kind = "grid"
lo = [0.0]
hi = [2.0]
count = 21
[target]
kind = "points"
points = [[10.0]]
[grid]
resolution = 40
"#,
        )
        .unwrap();
        let r = run_pipeline(&s).unwrap();
        assert!(r.objective.unwrap() > 0.0);
        assert!(r.duality_violation.unwrap() < 1e-9);
        assert!(r.skipped.iter().any(|k| k.name == "semiconvexity"));
        assert!(r.reports.iter().any(|k| k.name == "cone_condition"));
    }

    #[test]
    fn overlapping_log_run_warns_and_skips_cone() {
        let s = parse_scenario(
            r#"
cost = "log"
mass_fraction = 0.5
[source]
kind = "grid"
lo = [0.0, 0.0]
hi = [1.0, 1.0]
count = 6
[target]
kind = "grid"
lo = [0.0, 0.0]
hi = [1.0, 1.0]
count = 6
[grid]
resolution = 16
"#,
        )
        .unwrap();
        let r = run_pipeline(&s).unwrap();
        assert!(r.objective.is_some());
        assert!(r.warnings.iter().any(|w| w.contains("b1")));
        let cone = r.skipped.iter().find(|k| k.name == "cone_condition").unwrap();
        assert!(cone.reason.contains("b1"));
    }
}
