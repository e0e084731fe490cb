//! Active regions as unions of cost sublevel sets, their free boundary on a
//! regular grid, free normals and cone envelopes of the boundary.
//!
//! For every plan pair `(x, y)` the sublevel set `{z : c(z, y) < c(x, y)}`
//! is active; the active region is their union. Cells are classified by the
//! exact strict inequality, with no tolerance: grid resolution alone sets
//! the accuracy.

mod envelope;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostError, CostModel};
use crate::point::{distance, norm, Point};
use crate::solver::TransportPlan;

pub use envelope::{
    cone_envelope, eligible_window_centers, graph_match, ConeEnvelope, EnvelopeResolution,
    EnvelopeWindow, Frame,
};

/// Minimum number of cells per axis.
pub const MIN_RESOLUTION: usize = 8;

/// Gradients at or below this norm have no usable direction.
pub const GRADIENT_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundaryError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("grid has dimension {grid}, data has dimension {data}")]
    DimensionMismatch { grid: usize, data: usize },
    #[error("x-gradient of the cost vanishes (|grad| = {0:e}); b1 is effectively zero")]
    DegenerateGradient(f64),
    #[error("no boundary samples inside the envelope window")]
    EmptyWindow,
    #[error("{0}")]
    Invalid(String),
}

/// A regular grid of cell centers `origin + h * index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationGrid {
    origin: Vec<f64>,
    h: f64,
    shape: Vec<usize>,
}

impl EvaluationGrid {
    pub fn new(origin: Vec<f64>, h: f64, shape: Vec<usize>) -> Result<Self, BoundaryError> {
        if origin.is_empty() || origin.len() != shape.len() {
            return Err(BoundaryError::Grid("origin and shape must share a positive dimension".into()));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(BoundaryError::Grid(format!("cell size {h} must be positive")));
        }
        if let Some(s) = shape.iter().find(|&&s| s < MIN_RESOLUTION) {
            return Err(BoundaryError::Grid(format!(
                "{s} cells on an axis; at least {MIN_RESOLUTION} required"
            )));
        }
        Ok(EvaluationGrid { origin, h, shape })
    }

    /// Square cells of size `max_extent / resolution`, covering `[lo, hi]`
    /// with a margin of two cells on every side.
    pub fn covering(lo: &[f64], hi: &[f64], resolution: usize) -> Result<Self, BoundaryError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(BoundaryError::Grid("bounds must share a positive dimension".into()));
        }
        if resolution < MIN_RESOLUTION {
            return Err(BoundaryError::Grid(format!(
                "resolution {resolution} below minimum {MIN_RESOLUTION}"
            )));
        }
        let extent = lo.iter().zip(hi).fold(0.0f64, |m, (a, b)| m.max(b - a));
        let h = if extent > 0.0 { extent / resolution as f64 } else { 1.0 / resolution as f64 };
        let origin = lo.iter().map(|v| v - 2.0 * h).collect();
        let shape = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| (((b - a) / h - 1e-9).ceil().max(0.0) as usize + 5).max(MIN_RESOLUTION))
            .collect();
        Self::new(origin, h, shape)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of a flat cell index (axis 0 varies fastest).
    pub fn unravel(&self, mut cell: usize) -> Vec<usize> {
        self.shape
            .iter()
            .map(|&s| {
                let i = cell % s;
                cell /= s;
                i
            })
            .collect()
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        let mut cell = 0;
        for k in (0..self.dim()).rev() {
            cell = cell * self.shape[k] + idx[k];
        }
        cell
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        self.unravel(cell)
            .iter()
            .zip(&self.origin)
            .map(|(&i, o)| o + self.h * i as f64)
            .collect()
    }

    /// Cell whose center is nearest to `p`, if `p` lies within the grid's
    /// half-cell-padded extent.
    pub fn locate(&self, p: &[f64]) -> Option<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let t = ((p[k] - self.origin[k]) / self.h).round();
            if t < 0.0 || t >= self.shape[k] as f64 {
                return None;
            }
            idx.push(t as usize);
        }
        Some(self.ravel(&idx))
    }

    /// Face neighbors (at most `2n`).
    pub fn face_neighbors(&self, cell: usize) -> Vec<usize> {
        let idx = self.unravel(cell);
        let mut out = Vec::with_capacity(2 * self.dim());
        for k in 0..self.dim() {
            for step in [-1i64, 1] {
                let v = idx[k] as i64 + step;
                if v >= 0 && (v as usize) < self.shape[k] {
                    let mut n = idx.clone();
                    n[k] = v as usize;
                    out.push(self.ravel(&n));
                }
            }
        }
        out
    }

    /// The full `3^n` neighborhood including `cell`; `None` if it leaves the grid.
    pub fn full_neighborhood(&self, cell: usize) -> Option<Vec<usize>> {
        let idx = self.unravel(cell);
        if idx.iter().zip(&self.shape).any(|(&i, &s)| i == 0 || i + 1 >= s) {
            return None;
        }
        let n = self.dim();
        let count = 3usize.pow(n as u32);
        let mut out = Vec::with_capacity(count);
        for code in 0..count {
            let mut c = code;
            let mut m = idx.clone();
            for v in m.iter_mut() {
                *v = *v + (c % 3) - 1;
                c /= 3;
            }
            out.push(self.ravel(&m));
        }
        Some(out)
    }

    /// Mask of cells whose centers lie in the closed box `[lo, hi]`.
    pub fn box_mask(&self, lo: &[f64], hi: &[f64]) -> Vec<bool> {
        (0..self.len())
            .map(|cell| {
                let c = self.center(cell);
                c.iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(v, (a, b))| *v >= a - 1e-12 && *v <= b + 1e-12)
            })
            .collect()
    }

    /// Mask of cells within `radius` of some point.
    pub fn proximity_mask(&self, points: &[Point], radius: f64) -> Vec<bool> {
        (0..self.len())
            .into_par_iter()
            .map(|cell| {
                let c = self.center(cell);
                points.iter().any(|p| distance(&c, p.coords()) <= radius)
            })
            .collect()
    }
}

/// One sublevel-set generator `{z : c(z, target) < threshold}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub source: Point,
    pub target: Point,
    pub threshold: f64,
}

type SignedDistance = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Predicate {
    /// Union of sublevel sets; one entry per distinct target with its
    /// largest threshold and the generator that attains it.
    Sublevel {
        cost: CostModel,
        targets: Vec<(Point, f64, usize)>,
    },
    /// A region given by a signed distance, positive inside.
    Implicit(SignedDistance),
}

/// Active indicator on a grid plus the exact predicate behind it.
#[derive(Clone)]
pub struct ActiveRegionField {
    grid: EvaluationGrid,
    indicator: Vec<bool>,
    witness: Vec<Option<usize>>,
    gap: Vec<f64>,
    generators: Vec<Generator>,
    predicate: Predicate,
}

impl std::fmt::Debug for ActiveRegionField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActiveRegionField")
            .field("grid", &self.grid)
            .field("active_cells", &self.active_count())
            .field("generators", &self.generators.len())
            .finish()
    }
}

impl ActiveRegionField {
    /// Builds the union of sublevel sets for explicit `(x, y)` pairs.
    pub fn from_pairs(
        cost: &CostModel,
        pairs: &[(Point, Point)],
        grid: &EvaluationGrid,
    ) -> Result<Self, BoundaryError> {
        if grid.dim() != cost.dim() {
            return Err(BoundaryError::DimensionMismatch { grid: grid.dim(), data: cost.dim() });
        }
        let mut generators = Vec::with_capacity(pairs.len());
        for (x, y) in pairs {
            for d in [x.dim(), y.dim()] {
                if d != grid.dim() {
                    return Err(BoundaryError::DimensionMismatch { grid: grid.dim(), data: d });
                }
            }
            generators.push(Generator {
                source: x.clone(),
                target: y.clone(),
                threshold: cost.value(x.coords(), y.coords()),
            });
        }
        let mut targets: Vec<(Point, f64, usize)> = Vec::new();
        for (k, g) in generators.iter().enumerate() {
            match targets.iter_mut().find(|(t, _, _)| t == &g.target) {
                Some(entry) => {
                    if g.threshold > entry.1 {
                        entry.1 = g.threshold;
                        entry.2 = k;
                    }
                }
                None => targets.push((g.target.clone(), g.threshold, k)),
            }
        }
        let predicate = Predicate::Sublevel { cost: cost.clone(), targets };
        let evals: Vec<(f64, Option<usize>)> = (0..grid.len())
            .into_par_iter()
            .map(|cell| eval_sublevel(&predicate, &grid.center(cell)))
            .collect();
        let indicator = evals.iter().map(|(g, _)| *g < 0.0).collect();
        let gap = evals.iter().map(|(g, _)| *g).collect();
        let witness = evals.iter().map(|(_, w)| *w).collect();
        Ok(ActiveRegionField {
            grid: grid.clone(),
            indicator,
            witness,
            gap,
            generators,
            predicate,
        })
    }

    /// A synthetic region `{p : sd(p) > 0}` with no generators.
    pub fn from_signed_distance<F>(grid: &EvaluationGrid, sd: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let sd: SignedDistance = Arc::new(sd);
        let gap: Vec<f64> = (0..grid.len()).map(|c| -sd(&grid.center(c))).collect();
        ActiveRegionField {
            grid: grid.clone(),
            indicator: gap.iter().map(|g| *g < 0.0).collect(),
            witness: vec![None; grid.len()],
            gap,
            generators: Vec::new(),
            predicate: Predicate::Implicit(sd),
        }
    }

    pub fn grid(&self) -> &EvaluationGrid {
        &self.grid
    }

    pub fn indicator(&self) -> &[bool] {
        &self.indicator
    }

    pub fn is_active(&self, cell: usize) -> bool {
        self.indicator[cell]
    }

    pub fn active_count(&self) -> usize {
        self.indicator.iter().filter(|a| **a).count()
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    /// Generator minimizing `c(cell, y) - threshold`, if any.
    pub fn witness(&self, cell: usize) -> Option<&Generator> {
        self.witness[cell].map(|k| &self.generators[k])
    }

    /// `min_k c(cell, y_k) - b_k`; negative exactly on active cells.
    pub fn gap(&self, cell: usize) -> f64 {
        self.gap[cell]
    }

    pub fn cost(&self) -> Option<&CostModel> {
        match &self.predicate {
            Predicate::Sublevel { cost, .. } => Some(cost),
            Predicate::Implicit(_) => None,
        }
    }

    /// Signed margin of an arbitrary point: positive inside the region,
    /// strictly negative outside. For sublevel unions this is the
    /// first-order distance `-gap / |grad_x c|` to the witnessing level set.
    pub fn margin(&self, p: &[f64]) -> f64 {
        let raw = match &self.predicate {
            Predicate::Implicit(sd) => sd(p),
            Predicate::Sublevel { cost, targets } => {
                let (gap, w) = eval_sublevel(&self.predicate, p);
                let slope = w
                    .and_then(|k| {
                        let t = targets.iter().find(|t| t.2 == k)?;
                        cost.grad_x(p, t.0.coords()).ok().map(|g| norm(&g))
                    })
                    .filter(|s| *s > GRADIENT_FLOOR)
                    .unwrap_or(1.0);
                let m = -gap / slope;
                if gap >= 0.0 {
                    return m.min(-f64::MIN_POSITIVE);
                }
                m
            }
        };
        if raw <= 0.0 {
            raw.min(-f64::MIN_POSITIVE)
        } else {
            raw
        }
    }

    /// Whether `p` lies in the region, by the exact predicate.
    pub fn contains(&self, p: &[f64]) -> bool {
        self.margin(p) > 0.0
    }
}

fn eval_sublevel(pred: &Predicate, p: &[f64]) -> (f64, Option<usize>) {
    match pred {
        Predicate::Sublevel { cost, targets } => {
            let mut best = (f64::INFINITY, None);
            for (y, b, k) in targets {
                let g = cost.value(p, y.coords()) - b;
                if g < best.0 {
                    best = (g, Some(*k));
                }
            }
            best
        }
        Predicate::Implicit(sd) => (-sd(p), None),
    }
}

/// The union of sublevel sets generated by every positive-mass plan pair.
pub fn active_region(
    plan: &TransportPlan,
    cost: &CostModel,
    grid: &EvaluationGrid,
) -> Result<ActiveRegionField, BoundaryError> {
    let pairs: Vec<(Point, Point)> = plan
        .entries
        .iter()
        .filter(|e| e.mass > 0.0)
        .map(|e| {
            let (x, y) = plan.pair(e);
            (x.clone(), y.clone())
        })
        .collect();
    ActiveRegionField::from_pairs(cost, &pairs, grid)
}

/// A point on the discrete free boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeBoundarySample {
    pub cell: usize,
    pub point: Point,
    pub source: Point,
    pub target: Point,
    pub normal: Vec<f64>,
    pub threshold: f64,
}

/// `-grad_x c(x, y) / |grad_x c(x, y)|`.
pub fn free_normal(x: &Point, y: &Point, cost: &CostModel) -> Result<Vec<f64>, BoundaryError> {
    let g = cost.grad_x_direction(x.coords(), y.coords())?;
    let n = norm(&g);
    if !(n * cost.scale().abs() > GRADIENT_FLOOR) {
        return Err(BoundaryError::DegenerateGradient(n * cost.scale().abs()));
    }
    Ok(g.iter().map(|v| -v / n).collect())
}

/// Active cells touching an inactive face neighbor whose whole `3^n`
/// neighborhood lies inside `omega_mask`. Cells next to the fixed boundary
/// are therefore never reported.
pub fn extract_boundary(
    field: &ActiveRegionField,
    omega_mask: &[bool],
) -> Result<Vec<FreeBoundarySample>, BoundaryError> {
    let grid = field.grid();
    if omega_mask.len() != grid.len() {
        return Err(BoundaryError::Grid(format!(
            "mask has {} cells, grid has {}",
            omega_mask.len(),
            grid.len()
        )));
    }
    let cost = field.cost();
    let mut out = Vec::new();
    for cell in 0..grid.len() {
        if !field.is_active(cell) {
            continue;
        }
        let Some(hood) = grid.full_neighborhood(cell) else {
            continue;
        };
        if !hood.iter().all(|&c| omega_mask[c]) {
            continue;
        }
        let faces = grid.face_neighbors(cell);
        let touches_inactive = faces.iter().any(|&c| !field.is_active(c));
        let touches_active = faces.iter().any(|&c| field.is_active(c));
        if !(touches_inactive && touches_active) {
            continue;
        }
        let point = Point::new(grid.center(cell));
        let (source, target, threshold, normal) = match (field.witness(cell), cost) {
            (Some(g), Some(cost)) => {
                let nu = free_normal(&point, &g.target, cost)?;
                (g.source.clone(), g.target.clone(), g.threshold, nu)
            }
            _ => {
                // Synthetic regions: the normal is the inward gradient of the
                // signed distance.
                let nu = implicit_normal(field, point.coords(), grid.h());
                (point.clone(), point.clone(), 0.0, nu)
            }
        };
        out.push(FreeBoundarySample { cell, point, source, target, normal, threshold });
    }
    Ok(out)
}

fn implicit_normal(field: &ActiveRegionField, p: &[f64], h: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..p.len())
        .map(|k| {
            let mut a = p.to_vec();
            let mut b = p.to_vec();
            a[k] += 0.5 * h;
            b[k] -= 0.5 * h;
            field.margin(&a) - field.margin(&b)
        })
        .collect();
    let n = norm(&g);
    if n > 0.0 {
        g.iter_mut().for_each(|v| *v /= n);
    }
    g
}

/// Hölder seminorm of the normal field along the boundary:
/// `max |nu_1 - nu_2| / |x_1 - x_2|^exponent` over sample pairs.
pub fn normal_field_holder(
    samples: &[FreeBoundarySample],
    exponent: f64,
) -> Result<f64, BoundaryError> {
    if samples.len() < 2 {
        return Err(BoundaryError::Invalid("need at least two samples".into()));
    }
    let worst = samples
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            samples[i + 1..].iter().fold(0.0f64, |m, b| {
                let d = a.point.distance(&b.point);
                if d == 0.0 {
                    return m;
                }
                m.max(distance(&a.normal, &b.normal) / d.powf(exponent))
            })
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}
