//! Exact discrete optimal partial transport.
//!
//! A partial problem with mass `m` becomes a balanced one by adding a dummy
//! source of mass `|g| - m` and a dummy target of mass `|f| - m`, linked to
//! every real node at zero cost but not to each other. The balanced problem
//! is solved by successive shortest paths with node potentials, which also
//! yields the dual potentials certifying optimality.

mod flow;
mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostError, CostModel};
use crate::point::Point;

/// Largest support size accepted by [`brute_force_partial`].
pub const BRUTE_FORCE_CAP: usize = 6;

/// Slack allowed on marginal and mass constraints.
pub const PLAN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("mass out of range: {0}")]
    Domain(String),
    #[error("instance {nf}x{ng} exceeds the brute-force cap of {cap}x{cap}")]
    SizeCap { nf: usize, ng: usize, cap: usize },
    #[error("internal solver failure: {0}")]
    Internal(String),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// A weighted point cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    support: Vec<Point>,
    weights: Vec<f64>,
    total_mass: f64,
}

impl DiscreteMeasure {
    pub fn new(support: Vec<Point>, weights: Vec<f64>) -> Result<Self, SolverError> {
        if support.is_empty() {
            return Err(SolverError::InvalidMeasure("empty support".into()));
        }
        if support.len() != weights.len() {
            return Err(SolverError::InvalidMeasure(format!(
                "{} points but {} weights",
                support.len(),
                weights.len()
            )));
        }
        let dim = support[0].dim();
        if let Some(p) = support.iter().find(|p| p.dim() != dim) {
            return Err(CostError::DimensionMismatch { expected: dim, found: p.dim() }.into());
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(SolverError::InvalidMeasure(format!("weight {w} is not positive")));
        }
        let total_mass = weights.iter().sum();
        Ok(DiscreteMeasure { support, weights, total_mass })
    }

    /// Equal weights summing to `total`.
    pub fn uniform(support: Vec<Point>, total: f64) -> Result<Self, SolverError> {
        let w = total / support.len().max(1) as f64;
        let n = support.len();
        Self::new(support, vec![w; n])
    }

    pub fn support(&self) -> &[Point] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support[0].dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// A sparse coupling with its marginals and dual potentials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub entries: Vec<PlanEntry>,
    pub objective: f64,
    pub mass: f64,
    pub left_marginal: Vec<f64>,
    pub right_marginal: Vec<f64>,
    pub dual_u: Vec<f64>,
    pub dual_v: Vec<f64>,
    pub sources: Vec<Point>,
    pub targets: Vec<Point>,
    pub source_weights: Vec<f64>,
    pub target_weights: Vec<f64>,
}

impl TransportPlan {
    /// Builds a plan from explicit entries (for example a hand-made
    /// suboptimal plan). Potentials are reconstructed from the plan's basis.
    pub fn from_entries(
        f: &DiscreteMeasure,
        g: &DiscreteMeasure,
        entries: Vec<PlanEntry>,
        cost: &CostModel,
    ) -> Result<Self, SolverError> {
        let costs = cost_matrix(f, g, cost)?;
        Ok(assemble(f, g, &costs, entries, None))
    }

    /// Source and target points of an entry.
    pub fn pair(&self, e: &PlanEntry) -> (&Point, &Point) {
        (&self.sources[e.source], &self.targets[e.target])
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Componentwise marginal constraints and total mass, with `tol` slack.
    pub fn satisfies_constraints(&self, m: f64, tol: f64) -> bool {
        let left = self
            .left_marginal
            .iter()
            .zip(&self.source_weights)
            .all(|(a, w)| *a <= w + tol);
        let right = self
            .right_marginal
            .iter()
            .zip(&self.target_weights)
            .all(|(a, w)| *a <= w + tol);
        let total: f64 = self.entries.iter().map(|e| e.mass).sum();
        left && right && (total - m).abs() <= tol
    }
}

/// The selected map value `T(x)` for one source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivePair {
    pub source: usize,
    pub target: usize,
}

pub(crate) fn cost_matrix(
    f: &DiscreteMeasure,
    g: &DiscreteMeasure,
    cost: &CostModel,
) -> Result<Vec<f64>, SolverError> {
    for d in [f.dim(), g.dim()] {
        if d != cost.dim() {
            return Err(CostError::DimensionMismatch { expected: cost.dim(), found: d }.into());
        }
    }
    let mut c = Vec::with_capacity(f.len() * g.len());
    for x in f.support() {
        for y in g.support() {
            let v = cost.value(x.coords(), y.coords());
            if !v.is_finite() {
                return Err(SolverError::Internal(format!(
                    "cost is not finite between {:?} and {:?}",
                    x.coords(),
                    y.coords()
                )));
            }
            c.push(v);
        }
    }
    Ok(c)
}

fn check_mass(total_f: f64, total_g: f64, m: f64) -> Result<f64, SolverError> {
    let cap = total_f.min(total_g);
    if !(m > 0.0) || !m.is_finite() {
        return Err(SolverError::Domain(format!("m = {m} must be positive")));
    }
    if m > cap + 1e-12 {
        return Err(SolverError::Domain(format!("m = {m} exceeds min(|f|, |g|) = {cap}")));
    }
    Ok(m.min(cap))
}

fn assemble(
    f: &DiscreteMeasure,
    g: &DiscreteMeasure,
    costs: &[f64],
    entries: Vec<PlanEntry>,
    duals: Option<(Vec<f64>, Vec<f64>)>,
) -> TransportPlan {
    let ng = g.len();
    let mut left = vec![0.0; f.len()];
    let mut right = vec![0.0; ng];
    let mut objective = 0.0;
    let mut mass = 0.0;
    for e in &entries {
        left[e.source] += e.mass;
        right[e.target] += e.mass;
        objective += costs[e.source * ng + e.target] * e.mass;
        mass += e.mass;
    }
    let (dual_u, dual_v) = duals.unwrap_or_else(|| {
        reconstruct_potentials(costs, f.weights(), g.weights(), &entries, &left, &right)
    });
    TransportPlan {
        entries,
        objective,
        mass,
        left_marginal: left,
        right_marginal: right,
        dual_u,
        dual_v,
        sources: f.support().to_vec(),
        targets: g.support().to_vec(),
        source_weights: f.weights().to_vec(),
        target_weights: g.weights().to_vec(),
    }
}

/// Solves the partial problem from a precomputed row-major cost matrix.
///
/// Returns the flow entries and the `(u, v)` potentials.
pub fn solve_partial_costs(
    costs: &[f64],
    f: &[f64],
    g: &[f64],
    m: f64,
) -> Result<(Vec<PlanEntry>, Vec<f64>, Vec<f64>), SolverError> {
    if costs.len() != f.len() * g.len() {
        return Err(SolverError::InvalidMeasure("cost matrix shape mismatch".into()));
    }
    let total_f: f64 = f.iter().sum();
    let total_g: f64 = g.iter().sum();
    let m = check_mass(total_f, total_g, m)?;
    let sol = flow::solve_augmented(costs, f, g, m)?;
    let ng = g.len();
    let entries = sol
        .flow
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(k, &mass)| PlanEntry { source: k / ng, target: k % ng, mass })
        .collect();
    Ok((entries, sol.u, sol.v))
}

/// Optimal partial transport of mass `m` from `f` to `g`.
pub fn solve_partial(
    f: &DiscreteMeasure,
    g: &DiscreteMeasure,
    m: f64,
    cost: &CostModel,
) -> Result<TransportPlan, SolverError> {
    check_mass(f.total_mass(), g.total_mass(), m)?;
    let costs = cost_matrix(f, g, cost)?;
    let (entries, u, v) = solve_partial_costs(&costs, f.weights(), g.weights(), m)?;
    Ok(assemble(f, g, &costs, entries, Some((u, v))))
}

/// Reference solution by a dense simplex on the original linear program.
/// Only for tiny instances (at most 6 x 6).
pub fn brute_force_partial(
    f: &DiscreteMeasure,
    g: &DiscreteMeasure,
    m: f64,
    cost: &CostModel,
) -> Result<TransportPlan, SolverError> {
    let (nf, ng) = (f.len(), g.len());
    if nf > BRUTE_FORCE_CAP || ng > BRUTE_FORCE_CAP {
        return Err(SolverError::SizeCap { nf, ng, cap: BRUTE_FORCE_CAP });
    }
    let m = check_mass(f.total_mass(), g.total_mass(), m)?;
    let costs = cost_matrix(f, g, cost)?;
    let nv = nf * ng;
    let mut a_ub = Vec::with_capacity(nf + ng);
    let mut b_ub = Vec::with_capacity(nf + ng);
    for i in 0..nf {
        let mut row = vec![0.0; nv];
        row[i * ng..(i + 1) * ng].fill(1.0);
        a_ub.push(row);
        b_ub.push(f.weights()[i]);
    }
    for j in 0..ng {
        let mut row = vec![0.0; nv];
        for i in 0..nf {
            row[i * ng + j] = 1.0;
        }
        a_ub.push(row);
        b_ub.push(g.weights()[j]);
    }
    let x = simplex::minimize(&costs, &a_ub, &b_ub, &[vec![1.0; nv]], &[m])?;
    let entries = x
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 1e-13)
        .map(|(k, &mass)| PlanEntry { source: k / ng, target: k % ng, mass })
        .collect();
    Ok(assemble(f, g, &costs, entries, None))
}

/// One map value per active source: the target receiving the most mass,
/// ties going to the lowest target index.
pub fn extract_map(plan: &TransportPlan) -> Vec<ActivePair> {
    let mut best: Vec<Option<(usize, f64)>> = vec![None; plan.left_marginal.len()];
    for e in &plan.entries {
        if e.mass <= 0.0 {
            continue;
        }
        let slot = &mut best[e.source];
        *slot = match *slot {
            None => Some((e.target, e.mass)),
            Some((t, mass)) => {
                if e.mass > mass || (e.mass == mass && e.target < t) {
                    Some((e.target, e.mass))
                } else {
                    Some((t, mass))
                }
            }
        };
    }
    best.into_iter()
        .enumerate()
        .filter_map(|(source, b)| b.map(|(target, _)| ActivePair { source, target }))
        .collect()
}

/// Largest complementary-slackness violation of the plan's potentials:
/// `|c - u - v|` on arcs carrying mass and `max(0, u + v - c)` on every arc.
pub fn check_duality(plan: &TransportPlan, cost: &CostModel) -> f64 {
    let mut worst = 0.0f64;
    for (i, x) in plan.sources.iter().enumerate() {
        for (j, y) in plan.targets.iter().enumerate() {
            let c = cost.value(x.coords(), y.coords());
            worst = worst.max(plan.dual_u[i] + plan.dual_v[j] - c);
        }
    }
    for e in &plan.entries {
        if e.mass > 0.0 {
            let (x, y) = plan.pair(e);
            let c = cost.value(x.coords(), y.coords());
            worst = worst.max((c - plan.dual_u[e.source] - plan.dual_v[e.target]).abs());
        }
    }
    worst
}

/// Solves the problem and its transpose (roles of `f` and `g` exchanged,
/// cost transposed) and compares objectives.
pub fn exchange_symmetry_check(
    f: &DiscreteMeasure,
    g: &DiscreteMeasure,
    m: f64,
    cost: &CostModel,
) -> Result<bool, SolverError> {
    let forward = solve_partial(f, g, m, cost)?;
    let costs = cost_matrix(f, g, cost)?;
    let (nf, ng) = (f.len(), g.len());
    let mut transposed = vec![0.0; nf * ng];
    for i in 0..nf {
        for j in 0..ng {
            transposed[j * nf + i] = costs[i * ng + j];
        }
    }
    let (entries, _, _) = solve_partial_costs(&transposed, g.weights(), f.weights(), m)?;
    let back: f64 = entries.iter().map(|e| transposed[e.source * nf + e.target] * e.mass).sum();
    Ok((forward.objective - back).abs() <= PLAN_TOLERANCE)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Potentials for an arbitrary plan, from its basis in the augmented network.
///
/// Basis arcs are the plan's positive entries, dummy-target arcs of sources
/// with slack and dummy-source arcs of targets with slack. Remaining
/// components are joined by the cheapest available arcs, then `u_l + v_r =
/// cost` is propagated along the resulting tree. For an optimal basis this
/// recovers a dual certificate; for a suboptimal one it exposes the reduced
/// costs that prove suboptimality.
pub fn reconstruct_potentials(
    costs: &[f64],
    f: &[f64],
    g: &[f64],
    entries: &[PlanEntry],
    left: &[f64],
    right: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (nf, ng) = (f.len(), g.len());
    let s_hat = nf;
    let right_node = |r: usize| nf + 1 + r;
    let t_hat = ng;
    let nodes = nf + 1 + ng + 1;
    let arc_cost = |l: usize, r: usize| if l < nf && r < ng { costs[l * ng + r] } else { 0.0 };

    let mut uf = UnionFind::new(nodes);
    let mut tree: Vec<(usize, usize)> = Vec::new();
    let tol = PLAN_TOLERANCE;
    let add = |uf: &mut UnionFind, tree: &mut Vec<(usize, usize)>, l: usize, r: usize| {
        if uf.union(l, right_node(r)) {
            tree.push((l, r));
        }
    };
    for e in entries.iter().filter(|e| e.mass > 0.0) {
        add(&mut uf, &mut tree, e.source, e.target);
    }
    for i in 0..nf {
        if left[i] < f[i] - tol {
            add(&mut uf, &mut tree, i, t_hat);
        }
    }
    for j in 0..ng {
        if right[j] < g[j] - tol {
            add(&mut uf, &mut tree, s_hat, j);
        }
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for l in 0..=nf {
        for r in 0..=ng {
            if !(l == s_hat && r == t_hat) {
                candidates.push((arc_cost(l, r), l, r));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, l, r) in candidates {
        add(&mut uf, &mut tree, l, r);
    }

    let mut pot_l = vec![f64::NAN; nf + 1];
    let mut pot_r = vec![f64::NAN; ng + 1];
    pot_l[0] = 0.0;
    let mut changed = true;
    while changed {
        changed = false;
        for &(l, r) in &tree {
            let c = arc_cost(l, r);
            if !pot_l[l].is_nan() && pot_r[r].is_nan() {
                pot_r[r] = c - pot_l[l];
                changed = true;
            } else if pot_l[l].is_nan() && !pot_r[r].is_nan() {
                pot_l[l] = c - pot_r[r];
                changed = true;
            }
        }
    }
    (pot_l[..nf].to_vec(), pot_r[..ng].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64], weights: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(points.iter().map(|&p| Point::from([p])).collect(), weights.to_vec())
            .unwrap()
    }

    #[test]
    fn one_dimensional_example() {
        let f = line(&[0.0, 1.0], &[1.0, 1.0]);
        let g = line(&[10.0], &[1.0]);
        let c = CostModel::quadratic(1);
        let plan = solve_partial(&f, &g, 1.0, &c).unwrap();
        assert_eq!(plan.entries.len(), 1);
        assert_eq!(plan.entries[0].source, 1);
        assert!((plan.objective - 40.5).abs() < 1e-12);
        assert!(check_duality(&plan, &c) <= 1e-9);
        let bf = brute_force_partial(&f, &g, 1.0, &c).unwrap();
        assert!((bf.objective - 40.5).abs() < 1e-12);
        assert!(exchange_symmetry_check(&f, &g, 1.0, &c).unwrap());
    }

    #[test]
    fn suboptimal_plan_violates_duality() {
        let f = line(&[0.0, 1.0], &[1.0, 1.0]);
        let g = line(&[10.0], &[1.0]);
        let c = CostModel::quadratic(1);
        let plan = TransportPlan::from_entries(
            &f,
            &g,
            vec![PlanEntry { source: 0, target: 0, mass: 1.0 }],
            &c,
        )
        .unwrap();
        assert_eq!(plan.objective, 50.0);
        assert!(check_duality(&plan, &c) >= 9.5);
    }

    #[test]
    fn mass_range_is_enforced() {
        let f = line(&[0.0], &[1.0]);
        let g = line(&[1.0], &[2.0]);
        let c = CostModel::quadratic(1);
        assert!(matches!(solve_partial(&f, &g, 0.0, &c), Err(SolverError::Domain(_))));
        assert!(matches!(solve_partial(&f, &g, 1.5, &c), Err(SolverError::Domain(_))));
        assert!(solve_partial(&f, &g, 1.0 + 1e-13, &c).is_ok());
    }

    #[test]
    fn map_selection_rules() {
        let plan = |entries: Vec<PlanEntry>| TransportPlan {
            entries,
            objective: 0.0,
            mass: 1.0,
            left_marginal: vec![1.0],
            right_marginal: vec![0.0; 4],
            dual_u: vec![],
            dual_v: vec![],
            sources: vec![],
            targets: vec![],
            source_weights: vec![],
            target_weights: vec![],
        };
        let e = |target, mass| PlanEntry { source: 0, target, mass };
        assert_eq!(extract_map(&plan(vec![e(2, 1.0)]))[0].target, 2);
        assert_eq!(extract_map(&plan(vec![e(0, 0.3), e(2, 0.7)]))[0].target, 2);
        assert_eq!(extract_map(&plan(vec![e(3, 0.5), e(1, 0.5)]))[0].target, 1);
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let pts: Vec<f64> = (0..7).map(f64::from).collect();
        let f = line(&pts, &[1.0; 7]);
        let c = CostModel::quadratic(1);
        assert!(matches!(
            brute_force_partial(&f, &f, 1.0, &c),
            Err(SolverError::SizeCap { .. })
        ));
    }

    #[test]
    fn negative_costs_are_handled() {
        // -log|x - y| is negative beyond unit separation.
        let f = line(&[0.0, 0.5, 1.0], &[1.0, 1.0, 1.0]);
        let g = line(&[3.0, 4.0], &[1.0, 1.0]);
        let c = CostModel::log(1);
        let plan = solve_partial(&f, &g, 1.5, &c).unwrap();
        let bf = brute_force_partial(&f, &g, 1.5, &c).unwrap();
        assert!((plan.objective - bf.objective).abs() < 1e-9);
        assert!(check_duality(&plan, &c) <= 1e-9);
    }
}
