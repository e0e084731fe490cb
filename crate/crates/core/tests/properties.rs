//! Invariants checked on random inputs.

use freebound::boundary::{
    cone_envelope, extract_boundary, free_normal, ActiveRegionField, EnvelopeResolution,
    EnvelopeWindow, EvaluationGrid,
};
use freebound::cost::{estimate_b0, estimate_b1, check_nondegeneracy, DerivativeMode};
use freebound::geometry::{
    check_ball_condition, check_cone_condition, cone_profile, curvature_threshold,
    holder_exponent, ConeFan, ConeProfile, HolderP,
};
use freebound::mtw::{a3_infimum, mtw_tensor};
use freebound::pipeline::{run_stages, Stage};
use freebound::scenario::parse_scenario;
use freebound::solver::{exchange_symmetry_check, solve_partial, DiscreteMeasure};
use freebound::sphere::{geodesic_distance, SpherePoint};
use freebound::{CostConstants, CostModel, DomainSample, Point, SampleRole};
use proptest::prelude::*;

fn coords(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

fn cloud(n: usize, len: std::ops::RangeInclusive<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(coords(n, lo, hi).prop_map(Point::new), len)
}

fn measure(len: std::ops::RangeInclusive<usize>, lo: f64, hi: f64) -> impl Strategy<Value = DiscreteMeasure> {
    cloud(2, len, lo, hi)
        .prop_flat_map(|pts| {
            let k = pts.len();
            (Just(pts), prop::collection::vec(0.1f64..1.0, k))
        })
        .prop_map(|(pts, w)| DiscreteMeasure::new(pts, w).unwrap())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadratic_constants_track_min_distance(
        xs in cloud(2, 1..=6, 0.0, 1.0),
        ys in cloud(2, 1..=6, 2.0, 3.0),
    ) {
        let c = CostModel::quadratic(2);
        let min_d = xs.iter()
            .flat_map(|x| ys.iter().map(move |y| x.distance(y)))
            .fold(f64::INFINITY, f64::min);
        let omega = DomainSample::new(xs.clone(), SampleRole::Source).unwrap();
        let lambda = DomainSample::new(ys.clone(), SampleRole::Target).unwrap();
        let b0 = estimate_b0(&c, &omega, &lambda).unwrap();
        let b1 = estimate_b1(&c, &omega, &lambda).unwrap();
        prop_assert!((b0 - 0.5 * min_d * min_d).abs() <= 1e-12);
        prop_assert!((b1.value - min_d).abs() <= 1e-12);

        let mut rev = xs;
        rev.reverse();
        let omega_rev = DomainSample::new(rev, SampleRole::Source).unwrap();
        prop_assert_eq!(estimate_b0(&c, &omega_rev, &lambda).unwrap(), b0);
        prop_assert_eq!(estimate_b1(&c, &omega_rev, &lambda).unwrap().value, b1.value);
    }

    #[test]
    fn log_gradient_matches_finite_differences(
        x in coords(3, -1.0, 1.0),
        y in coords(3, 2.0, 3.0),
    ) {
        let exact = CostModel::log(3);
        let fd = CostModel::log(3).with_mode(DerivativeMode::FiniteDifference);
        let a = exact.grad_x(&x, &y).unwrap();
        let b = fd.grad_x(&x, &y).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() <= 1e-8 * p.abs().max(1.0));
        }
        let ma = exact.mixed(&x, &y).unwrap();
        let mb = fd.mixed(&x, &y).unwrap();
        prop_assert!((ma - mb).amax() <= 1e-6);
    }

    #[test]
    fn quadratic_mixed_determinant_alternates(n in 1usize..=4, seed in any::<u64>()) {
        let x: Vec<f64> = (0..n).map(|k| ((seed >> k) & 7) as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 2.0).collect();
        let det = check_nondegeneracy(&CostModel::quadratic(n), &Point::new(x), &Point::new(y)).unwrap();
        prop_assert!((det - (-1f64).powi(n as i32)).abs() <= 1e-12);
    }

    #[test]
    fn mtw_tensor_symmetric_and_form_scale_free(
        x in coords(3, -1.0, 1.0),
        y in coords(3, 2.0, 3.0),
        xi in coords(3, -1.0, 1.0),
        eta in coords(3, -1.0, 1.0),
        a in 0.1f64..10.0,
        b in 0.1f64..10.0,
    ) {
        let c = CostModel::log(3);
        let t = mtw_tensor(&c, &Point::new(x.clone()), &Point::new(y.clone())).unwrap();
        prop_assert!(t.symmetry_defect() <= 1e-9 * t.entries.max_abs().max(1.0));
        let nx: f64 = xi.iter().map(|v| v * v).sum();
        let ne: f64 = eta.iter().map(|v| v * v).sum();
        prop_assume!(nx > 1e-3 && ne > 1e-3);
        let base = t.normalized_form(&xi, &eta);
        let xs: Vec<f64> = xi.iter().map(|v| a * v).collect();
        let es: Vec<f64> = eta.iter().map(|v| b * v).collect();
        let scaled = t.normalized_form(&xs, &es);
        prop_assert!((base - scaled).abs() <= 1e-9 * base.abs().max(1.0));

        let q = mtw_tensor(&CostModel::quadratic(3), &Point::new(x), &Point::new(y)).unwrap();
        prop_assert_eq!(q.entries.max_abs(), 0.0);
    }

    #[test]
    fn solver_respects_marginals_and_mass(
        f in measure(1..=7, 0.0, 1.0),
        g in measure(1..=7, 0.5, 1.5),
        frac in 0.05f64..1.0,
    ) {
        let c = CostModel::quadratic(2);
        let m = frac * f.total_mass().min(g.total_mass());
        let plan = solve_partial(&f, &g, m, &c).unwrap();
        prop_assert!(plan.satisfies_constraints(m, 1e-9));
        let total: f64 = plan.entries.iter().map(|e| e.mass).sum();
        prop_assert!((total - m).abs() <= 1e-9);
        prop_assert!(plan.entries.iter().all(|e| e.mass >= 0.0));
        prop_assert!(exchange_symmetry_check(&f, &g, m, &c).unwrap());
    }

    #[test]
    fn objective_grows_with_mass(
        f in measure(2..=7, 0.0, 1.0),
        g in measure(2..=7, 0.5, 1.5),
        a in 0.05f64..1.0,
        b in 0.05f64..1.0,
    ) {
        let c = CostModel::quadratic(2);
        let cap = f.total_mass().min(g.total_mass());
        let (lo, hi) = (a.min(b) * cap, a.max(b) * cap);
        let small = solve_partial(&f, &g, lo, &c).unwrap().objective;
        let large = solve_partial(&f, &g, hi, &c).unwrap().objective;
        prop_assert!(large >= small - 1e-12 * small.abs().max(1.0));
    }

    #[test]
    fn balanced_problem_uses_all_mass(
        pts_f in cloud(2, 1..=6, 0.0, 1.0),
        pts_g in cloud(2, 1..=6, 1.0, 2.0),
    ) {
        let f = DiscreteMeasure::uniform(pts_f, 1.0).unwrap();
        let g = DiscreteMeasure::uniform(pts_g, 1.0).unwrap();
        let plan = solve_partial(&f, &g, 1.0, &CostModel::quadratic(2)).unwrap();
        for (a, w) in plan.left_marginal.iter().zip(f.weights()) {
            prop_assert!((a - w).abs() <= 1e-9);
        }
        for (a, w) in plan.right_marginal.iter().zip(g.weights()) {
            prop_assert!((a - w).abs() <= 1e-9);
        }
    }

    #[test]
    fn free_normal_is_unit_and_scale_free(
        x in coords(3, -1.0, 1.0),
        y in coords(3, -1.0, 1.0),
        lambda in 0.01f64..100.0,
    ) {
        prop_assume!(dist(&x, &y) > 1e-3);
        let (px, py) = (Point::new(x), Point::new(y));
        for c in [CostModel::quadratic(3), CostModel::log(3)] {
            let nu = free_normal(&px, &py, &c).unwrap();
            let len = nu.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((len - 1.0).abs() <= 1e-12);
            let scaled = free_normal(&px, &py, &c.scaled(lambda)).unwrap();
            prop_assert_eq!(scaled, nu);
        }
    }

    #[test]
    fn growing_angle_never_grows_delta(t1 in 0.05f64..1.5, t2 in 0.05f64..1.5, b1 in 0.1f64..5.0) {
        let c = CostModel::quadratic(2);
        let k = CostConstants { b0: 1.0, b1, c2: 1.0 };
        let p1 = cone_profile(&c, &k, t1.min(t2)).unwrap();
        let p2 = cone_profile(&c, &k, t1.max(t2)).unwrap();
        prop_assert!(p2.delta <= p1.delta);
    }

    #[test]
    fn holder_exponent_increases_in_p(n in 1u32..=6, a in 0.01f64..50.0, b in 0.01f64..50.0) {
        let floor = (n as f64 + 1.0) / 2.0;
        let (p, q) = (floor + a.min(b), floor + a.max(b));
        let ep = holder_exponent(HolderP::Finite(p), n).unwrap();
        let eq = holder_exponent(HolderP::Finite(q), n).unwrap();
        let inf = holder_exponent(HolderP::Infinity, n).unwrap();
        prop_assert!(ep > 0.0 && ep <= eq && eq <= inf);
        prop_assert!(holder_exponent(HolderP::Finite(floor), n).is_err());
    }

    #[test]
    fn holder_exponent_decreases_in_n(n in 1u32..=6, extra in 0.01f64..20.0) {
        // p must be admissible for both dimensions.
        let p = (n as f64 + 2.0) / 2.0 + extra;
        let low = holder_exponent(HolderP::Finite(p), n).unwrap();
        let high = holder_exponent(HolderP::Finite(p), n + 1).unwrap();
        prop_assert!(high < low);
    }

    #[test]
    fn a3_estimate_never_rises_with_more_samples(
        pairs in prop::collection::vec((coords(2, -1.0, 1.0), coords(2, 2.0, 3.0)), 2..=5),
        d1 in 0usize..40,
        extra in 0usize..40,
    ) {
        let c = CostModel::log(2);
        let pairs: Vec<(Point, Point)> =
            pairs.into_iter().map(|(x, y)| (Point::new(x), Point::new(y))).collect();
        let few = a3_infimum(&c, &pairs[..1], d1).unwrap().c0_estimate.unwrap();
        let many = a3_infimum(&c, &pairs, d1 + extra).unwrap().c0_estimate.unwrap();
        prop_assert!(many <= few);
    }

    #[test]
    fn curvature_threshold_inverts_a1(k in -6i32..6, a2 in 0.1f64..4.0, n in 1u32..=4) {
        let a1 = 2f64.powi(k);
        let t = curvature_threshold(a1, a2, n).unwrap();
        prop_assert_eq!(t * a1, a2.powi(n as i32));
    }

    #[test]
    fn geodesic_distance_is_symmetric(a in coords(3, -1.0, 1.0), b in coords(3, -1.0, 1.0)) {
        let (Ok(p), Ok(q)) = (SpherePoint::normalized(a), SpherePoint::normalized(b)) else {
            return Ok(());
        };
        let d = geodesic_distance(p.coords(), q.coords());
        prop_assert_eq!(d, geodesic_distance(q.coords(), p.coords()));
        prop_assert!((0.0..=std::f64::consts::PI).contains(&d));
        prop_assert!(geodesic_distance(p.coords(), p.coords()) < 1e-8);
        let to_antipode = geodesic_distance(p.coords(), p.antipode().coords());
        prop_assert!((to_antipode - std::f64::consts::PI).abs() < 1e-7);
    }
}

/// The half-space `{x_0 < cut}` on a grid over the unit cube.
fn half_space(dim: usize, cut: f64) -> ActiveRegionField {
    let res = if dim == 2 { 32 } else { 12 };
    let grid = EvaluationGrid::covering(&vec![0.0; dim], &vec![1.0; dim], res).unwrap();
    ActiveRegionField::from_signed_distance(&grid, move |p| cut - p[0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn half_space_holds_inward_cones_only(
        dim in 2usize..=3,
        cut in 0.3f64..0.7,
        delta in 0.2f64..0.3,
        alpha in 0.05f64..5.0,
    ) {
        let field = half_space(dim, cut);
        let mask = vec![true; field.grid().len()];
        let mut samples = extract_boundary(&field, &mask).unwrap();
        prop_assume!(!samples.is_empty());
        let profile = ConeProfile { delta, alpha, alpha_capped: false };
        prop_assert!(check_cone_condition(&field, &samples, &profile, &ConeFan::default()).pass);
        for s in &mut samples {
            s.normal.iter_mut().for_each(|v| *v = -*v);
        }
        prop_assert!(!check_cone_condition(&field, &samples, &profile, &ConeFan::default()).pass);
    }

    #[test]
    fn ball_margin_shrinks_with_factor(cut in 0.3f64..0.7, f1 in 0.1f64..3.0, f2 in 0.1f64..3.0) {
        let grid = EvaluationGrid::covering(&[0.0, 0.0], &[1.0, 1.0], 32).unwrap();
        let center = [cut + 0.5, 0.5];
        let field = ActiveRegionField::from_signed_distance(&grid, move |p| {
            0.5 - ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt()
        });
        let mask = vec![true; grid.len()];
        let samples = extract_boundary(&field, &mask).unwrap();
        prop_assume!(!samples.is_empty());
        let k = CostConstants { b0: 1.0, b1: 0.1, c2: 1.0 };
        let lo = check_ball_condition(&field, &samples, &k, f1.min(f2)).unwrap();
        let hi = check_ball_condition(&field, &samples, &k, f1.max(f2)).unwrap();
        // Balls too small to hold a lattice point are vacuous.
        prop_assume!(lo.samples_checked > 0);
        prop_assert!(hi.worst_margin <= lo.worst_margin + 1e-12);
    }

    #[test]
    fn boundary_samples_are_active_and_interior(
        pairs in prop::collection::vec((coords(2, 0.2, 0.8), coords(2, 1.2, 1.8)), 1..=4),
    ) {
        let c = CostModel::quadratic(2);
        let pairs: Vec<(Point, Point)> =
            pairs.into_iter().map(|(x, y)| (Point::new(x), Point::new(y))).collect();
        let grid = EvaluationGrid::covering(&[0.0, 0.0], &[1.0, 1.0], 32).unwrap();
        let field = ActiveRegionField::from_pairs(&c, &pairs, &grid).unwrap();
        let mask = grid.box_mask(&[0.0, 0.0], &[1.0, 1.0]);
        let samples = extract_boundary(&field, &mask).unwrap();
        for s in &samples {
            prop_assert!(field.is_active(s.cell));
            prop_assert!(grid.full_neighborhood(s.cell).unwrap().iter().all(|&k| mask[k]));
            // The witness generator really contains the sample.
            let d = s.point.distance(&s.target);
            prop_assert!(0.5 * d * d < s.threshold);
        }
        if samples.len() > 1 {
            let s0 = &samples[0];
            let window = EnvelopeWindow { center: s0.point.clone(), half_width: 0.25 };
            let alpha = 1.0;
            let env = cone_envelope(&samples, &s0.normal, alpha, &window, EnvelopeResolution::Spacing(grid.h() / 2.0)).unwrap();
            prop_assert!(env.lipschitz_constant() <= alpha + 2.0 * grid.h());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn scenarios_are_deterministic(seed in any::<u64>()) {
        let text = format!(
            "seed = {seed}\ncost = \"quadratic\"\nmass_fraction = 0.5\n\
             [source]\nkind = \"random_box\"\nlo = [0.0, 0.0]\nhi = [1.0, 1.0]\ncount = 20\n\
             [target]\nkind = \"random_box\"\nlo = [1.5, 0.0]\nhi = [2.5, 1.0]\ncount = 20\n\
             [grid]\nresolution = 24\n"
        );
        let s = parse_scenario(&text).unwrap();
        let a = run_stages(&s, Stage::Verify).unwrap();
        let b = run_stages(&s, Stage::Verify).unwrap();
        prop_assert_eq!(serde_json::to_string(&a.record).unwrap(), serde_json::to_string(&b.record).unwrap());
        prop_assert_eq!(a.plan, b.plan);
    }
}
