//! Cost functions, their derivatives up to order four, and the scalar
//! constants (`b0`, `b1`, `c2`) estimated over sampled domains.
//!
//! Index conventions follow the usual transport notation: indices before the
//! comma differentiate in `x`, indices after it in `y`. So `mixed` is
//! `c_{i,j}`, `d3_xxy` is `c_{ij,m}`, `d3_xyy` is `c_{n,rs}` and `d4_xxyy`
//! is `c_{ij,rs}`.

mod builtin;
pub(crate) mod fd;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::point::{DomainSample, Point};
use crate::tensor::{Tensor3, Tensor4};

pub use builtin::{RadialCost, RadialKind};

/// Identifiers accepted by [`CostModel::from_id`].
pub const REGISTERED_COSTS: &[&str] = &["quadratic", "log", "sqrtplus", "sphere"];

/// Below this, `b1` is reported as degenerate.
pub const B1_WARNING_TOLERANCE: f64 = 1e-9;

/// Two gradient images closer than this count as a twist violation.
pub const TWIST_TOLERANCE: f64 = 1e-9;

/// Relative `h` vs `2h` discrepancy above which a derivative is flagged.
pub const FD_QUALITY_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("sample set is empty")]
    EmptySample,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cost `{cost}` provides derivatives up to order {available}, order {needed} requested")]
    Capability {
        cost: String,
        needed: u8,
        available: u8,
    },
    #[error("unknown cost `{id}`; registered costs: {}", .known.join(", "))]
    UnknownCost { id: String, known: Vec<String> },
    #[error("mixed derivative matrix is singular (det = {det:e})")]
    SingularMixed { det: f64 },
    #[error("gradient vanishes (|grad| = {norm:e})")]
    DegenerateGradient { norm: f64 },
    #[error("{0}")]
    Domain(String),
}

/// A cost `c(x, y)` with optional analytic derivatives.
///
/// Only `value` is required. Any derivative left as `None` is computed by
/// finite differences of `value`, up to the declared `smoothness`.
pub trait CostFunction: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;

    /// Highest derivative order the cost supports (1, 2 or 4).
    fn smoothness(&self) -> u8;

    /// Whether `c(x, x) = 0` is part of the cost's contract.
    fn vanishes_on_diagonal(&self) -> bool {
        false
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64;

    fn grad_x(&self, _x: &[f64], _y: &[f64]) -> Option<Vec<f64>> {
        None
    }
    fn grad_y(&self, _x: &[f64], _y: &[f64]) -> Option<Vec<f64>> {
        None
    }
    fn hess_xx(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
    fn mixed(&self, _x: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
    fn d3_xxy(&self, _x: &[f64], _y: &[f64]) -> Option<Tensor3> {
        None
    }
    fn d3_xyy(&self, _x: &[f64], _y: &[f64]) -> Option<Tensor3> {
        None
    }
    fn d4_xxyy(&self, _x: &[f64], _y: &[f64]) -> Option<Tensor4> {
        None
    }
}

/// A cost given by a closure; all derivatives come from finite differences.
pub struct FnCost<F> {
    id: String,
    smoothness: u8,
    f: F,
}

impl<F> FnCost<F>
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    pub fn new(id: impl Into<String>, smoothness: u8, f: F) -> Self {
        FnCost { id: id.into(), smoothness, f }
    }
}

impl<F> fmt::Debug for FnCost<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnCost").field("id", &self.id).finish()
    }
}

impl<F> CostFunction for FnCost<F>
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }
    fn smoothness(&self) -> u8 {
        self.smoothness
    }
    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.f)(x, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Analytic where the cost provides it, finite differences otherwise.
    #[default]
    Auto,
    /// Always use finite differences, even when analytic forms exist.
    FiniteDifference,
}

/// Base finite-difference steps before scaling by the local separation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdSteps {
    pub low_order: f64,
    pub high_order: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        FdSteps { low_order: 1e-4, high_order: 1e-2 }
    }
}

/// An evaluable cost bound to a dimension, with derivative dispatch.
///
/// Cheap to clone and safe to share across threads.
#[derive(Clone)]
pub struct CostModel {
    func: Arc<dyn CostFunction>,
    dim: usize,
    scale: f64,
    mode: DerivativeMode,
    steps: FdSteps,
}

impl fmt::Debug for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostModel")
            .field("id", &self.func.id())
            .field("dim", &self.dim)
            .field("scale", &self.scale)
            .field("mode", &self.mode)
            .finish()
    }
}

/// Default separation floor for singular costs.
pub const DEFAULT_SEPARATION_FLOOR: f64 = 1e-6;

impl CostModel {
    pub fn new(func: Arc<dyn CostFunction>, dim: usize) -> Self {
        CostModel {
            func,
            dim,
            scale: 1.0,
            mode: DerivativeMode::Auto,
            steps: FdSteps::default(),
        }
    }

    /// `|x - y|^2 / 2`
    pub fn quadratic(dim: usize) -> Self {
        Self::new(Arc::new(RadialCost::new(RadialKind::Quadratic, 0.0)), dim)
    }

    /// `-log |x - y|`, evaluated no closer than the default separation floor.
    pub fn log(dim: usize) -> Self {
        Self::log_with_floor(dim, DEFAULT_SEPARATION_FLOOR)
    }

    pub fn log_with_floor(dim: usize, floor: f64) -> Self {
        Self::new(Arc::new(RadialCost::new(RadialKind::Log, floor)), dim)
    }

    /// `sqrt(1 + |x - y|^2)`
    pub fn sqrt_plus(dim: usize) -> Self {
        Self::new(Arc::new(RadialCost::new(RadialKind::SqrtPlus, 0.0)), dim)
    }

    /// Looks up a registered cost. `"sphere"` works on ambient unit vectors,
    /// so `dim` is the ambient dimension.
    pub fn from_id(id: &str, dim: usize) -> Result<Self, CostError> {
        match id {
            "quadratic" => Ok(Self::quadratic(dim)),
            "log" => Ok(Self::log(dim)),
            "sqrtplus" => Ok(Self::sqrt_plus(dim)),
            "sphere" => Ok(Self::new(Arc::new(crate::sphere::SphereCost), dim)),
            other => Err(CostError::UnknownCost {
                id: other.to_string(),
                known: REGISTERED_COSTS.iter().map(|s| s.to_string()).collect(),
            }),
        }
    }

    /// A closure-backed custom cost; derivatives by finite differences.
    pub fn from_fn<F>(id: &str, dim: usize, smoothness: u8, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(Arc::new(FnCost::new(id, smoothness, f)), dim)
    }

    /// The cost `lambda * c`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.scale *= lambda;
        out
    }

    pub fn with_mode(mut self, mode: DerivativeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_steps(mut self, steps: FdSteps) -> Self {
        self.steps = steps;
        self
    }

    pub fn id(&self) -> &str {
        self.func.id()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn smoothness(&self) -> u8 {
        self.func.smoothness()
    }

    pub fn mode(&self) -> DerivativeMode {
        self.mode
    }

    pub fn vanishes_on_diagonal(&self) -> bool {
        self.func.vanishes_on_diagonal()
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        self.scale * self.func.value(x, y)
    }

    pub fn require_order(&self, needed: u8) -> Result<(), CostError> {
        let available = self.func.smoothness();
        if needed > available {
            return Err(CostError::Capability {
                cost: self.func.id().to_string(),
                needed,
                available,
            });
        }
        Ok(())
    }

    fn check_dims(&self, x: &[f64], y: &[f64]) -> Result<(), CostError> {
        for len in [x.len(), y.len()] {
            if len != self.dim {
                return Err(CostError::DimensionMismatch { expected: self.dim, found: len });
            }
        }
        Ok(())
    }

    fn analytic<T>(&self, get: impl FnOnce(&dyn CostFunction) -> Option<T>) -> Option<T> {
        match self.mode {
            DerivativeMode::Auto => get(self.func.as_ref()),
            DerivativeMode::FiniteDifference => None,
        }
    }

    /// Separation-scaled step so stencils never straddle a nearby singularity.
    fn step(&self, x: &[f64], y: &[f64], order: usize) -> f64 {
        let sep = crate::point::distance(x, y).max(1e-3);
        let base = if order <= 2 { self.steps.low_order } else { self.steps.high_order };
        base * sep
    }

    fn joint(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(2 * self.dim);
        z.extend_from_slice(x);
        z.extend_from_slice(y);
        z
    }

    fn fd_estimate(&self, x: &[f64], y: &[f64], idx: &[usize]) -> fd::Estimate {
        let n = self.dim;
        let f = |z: &[f64]| self.func.value(&z[..n], &z[n..]);
        let h = self.step(x, y, idx.len());
        fd::richardson(&f, &self.joint(x, y), idx, h)
    }

    fn fd(&self, x: &[f64], y: &[f64], idx: &[usize]) -> f64 {
        self.fd_estimate(x, y, idx).value
    }

    /// `grad_x c(x, y)`.
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, CostError> {
        self.check_dims(x, y)?;
        self.require_order(1)?;
        let raw = self
            .analytic(|c| c.grad_x(x, y))
            .unwrap_or_else(|| (0..self.dim).map(|i| self.fd(x, y, &[i])).collect());
        Ok(raw.into_iter().map(|v| self.scale * v).collect())
    }

    /// Direction of `grad_x c(x, y)` computed from the unscaled cost, so a
    /// positive rescaling of the cost leaves it bit-for-bit unchanged.
    pub(crate) fn grad_x_direction(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, CostError> {
        self.check_dims(x, y)?;
        self.require_order(1)?;
        let raw = self
            .analytic(|c| c.grad_x(x, y))
            .unwrap_or_else(|| (0..self.dim).map(|i| self.fd(x, y, &[i])).collect());
        let sign = self.scale.signum();
        Ok(raw.into_iter().map(|v| sign * v).collect())
    }

    /// `grad_y c(x, y)`.
    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, CostError> {
        self.check_dims(x, y)?;
        self.require_order(1)?;
        let n = self.dim;
        let raw = self
            .analytic(|c| c.grad_y(x, y))
            .unwrap_or_else(|| (0..n).map(|j| self.fd(x, y, &[n + j])).collect());
        Ok(raw.into_iter().map(|v| self.scale * v).collect())
    }

    /// `D^2_xx c(x, y)`.
    pub fn hess_xx(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>, CostError> {
        self.check_dims(x, y)?;
        self.require_order(2)?;
        let raw = self.analytic(|c| c.hess_xx(x, y)).unwrap_or_else(|| {
            let n = self.dim;
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = self.fd(x, y, &[i, j]);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            m
        });
        Ok(raw * self.scale)
    }

    /// The mixed matrix `c_{i,j} = d^2 c / dx_i dy_j`.
    pub fn mixed(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>, CostError> {
        self.check_dims(x, y)?;
        self.require_order(2)?;
        let n = self.dim;
        let raw = self
            .analytic(|c| c.mixed(x, y))
            .unwrap_or_else(|| DMatrix::from_fn(n, n, |i, j| self.fd(x, y, &[i, n + j])));
        Ok(raw * self.scale)
    }

    /// `c_{ij,m}`, indexed `(i, j, m)`.
    pub fn d3_xxy(&self, x: &[f64], y: &[f64]) -> Result<Tensor3, CostError> {
        self.check_dims(x, y)?;
        self.require_order(4)?;
        let n = self.dim;
        let mut t = self.analytic(|c| c.d3_xxy(x, y)).unwrap_or_else(|| {
            let mut t = Tensor3::zeros(n);
            for i in 0..n {
                for j in i..n {
                    for m in 0..n {
                        let v = self.fd(x, y, &[i, j, n + m]);
                        t.set(i, j, m, v);
                        t.set(j, i, m, v);
                    }
                }
            }
            t
        });
        scale3(&mut t, self.scale);
        Ok(t)
    }

    /// `c_{n,rs}`, indexed `(n, r, s)`.
    pub fn d3_xyy(&self, x: &[f64], y: &[f64]) -> Result<Tensor3, CostError> {
        self.check_dims(x, y)?;
        self.require_order(4)?;
        let n = self.dim;
        let mut t = self.analytic(|c| c.d3_xyy(x, y)).unwrap_or_else(|| {
            let mut t = Tensor3::zeros(n);
            for a in 0..n {
                for r in 0..n {
                    for s in r..n {
                        let v = self.fd(x, y, &[a, n + r, n + s]);
                        t.set(a, r, s, v);
                        t.set(a, s, r, v);
                    }
                }
            }
            t
        });
        scale3(&mut t, self.scale);
        Ok(t)
    }

    /// `c_{ij,rs}`, indexed `(i, j, r, s)`.
    pub fn d4_xxyy(&self, x: &[f64], y: &[f64]) -> Result<Tensor4, CostError> {
        self.check_dims(x, y)?;
        self.require_order(4)?;
        let n = self.dim;
        let mut t = self.analytic(|c| c.d4_xxyy(x, y)).unwrap_or_else(|| {
            let mut t = Tensor4::zeros(n);
            for i in 0..n {
                for j in i..n {
                    for r in 0..n {
                        for s in r..n {
                            let v = self.fd(x, y, &[i, j, n + r, n + s]);
                            t.set(i, j, r, s, v);
                            t.set(j, i, r, s, v);
                            t.set(i, j, s, r, v);
                            t.set(j, i, s, r, v);
                        }
                    }
                }
            }
            t
        });
        let s = self.scale;
        for i in 0..n {
            for j in 0..n {
                for r in 0..n {
                    for q in 0..n {
                        t.set(i, j, r, q, s * t.get(i, j, r, q));
                    }
                }
            }
        }
        Ok(t)
    }

    /// Worst relative `h` vs `2h` discrepancy of the finite-difference
    /// estimates that would be used at `(x, y)` for derivatives of `order`.
    ///
    /// Returns 0 when every derivative of that order is analytic.
    pub fn fd_quality(&self, x: &[f64], y: &[f64], order: u8) -> Result<f64, CostError> {
        self.check_dims(x, y)?;
        self.require_order(order)?;
        let n = self.dim;
        let analytic = match order {
            1 => self.analytic(|c| c.grad_x(x, y)).is_some(),
            2 => self.analytic(|c| c.mixed(x, y)).is_some(),
            _ => self.analytic(|c| c.d4_xxyy(x, y)).is_some(),
        };
        if analytic {
            return Ok(0.0);
        }
        let indices: Vec<Vec<usize>> = match order {
            1 => (0..n).map(|i| vec![i]).collect(),
            2 => (0..n).flat_map(|i| (0..n).map(move |j| vec![i, n + j])).collect(),
            3 => (0..n)
                .flat_map(|i| (0..n).flat_map(move |j| (0..n).map(move |m| vec![i, j, n + m])))
                .collect(),
            _ => (0..n)
                .flat_map(|i| {
                    (0..n).flat_map(move |j| {
                        (0..n).flat_map(move |r| (0..n).map(move |s| vec![i, j, n + r, n + s]))
                    })
                })
                .collect(),
        };
        let estimates: Vec<fd::Estimate> =
            indices.iter().map(|idx| self.fd_estimate(x, y, idx)).collect();
        let magnitude = estimates.iter().fold(1.0f64, |m, e| m.max(e.value.abs()));
        Ok(estimates
            .iter()
            .fold(0.0f64, |m, e| m.max((e.fine - e.coarse).abs() / magnitude)))
    }
}

fn scale3(t: &mut Tensor3, s: f64) {
    let n = t.dim();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                t.set(i, j, k, s * t.get(i, j, k));
            }
        }
    }
}

/// The constants every geometric predicate is parameterized by.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    /// Minimum sampled cost.
    pub b0: f64,
    /// Minimum sampled `|grad_x c|`.
    pub b1: f64,
    /// Maximum sampled operator norm of `D^2_xx c`.
    pub c2: f64,
}

impl CostConstants {
    /// Estimates all three constants; fails if the cost is not order 2.
    pub fn estimate(
        cost: &CostModel,
        omega: &DomainSample,
        lambda: &DomainSample,
    ) -> Result<(Self, B1Estimate), CostError> {
        let b0 = estimate_b0(cost, omega, lambda)?;
        let b1 = estimate_b1(cost, omega, lambda)?;
        let c2 = estimate_c2(cost, omega, lambda)?;
        Ok((CostConstants { b0, b1: b1.value, c2 }, b1))
    }

    /// The interior ball radius `b1 / c2`.
    pub fn ball_radius(&self) -> Result<f64, CostError> {
        if !(self.b1 > 0.0 && self.c2 > 0.0) {
            return Err(CostError::Domain(format!(
                "ball radius needs b1 > 0 and c2 > 0 (b1 = {}, c2 = {})",
                self.b1, self.c2
            )));
        }
        Ok(self.b1 / self.c2)
    }
}

/// `b1` together with the degeneracy flag raised when it is (near) zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct B1Estimate {
    pub value: f64,
    pub degenerate: bool,
}

fn check_samples(
    cost: &CostModel,
    omega: &DomainSample,
    lambda: &DomainSample,
) -> Result<(), CostError> {
    for s in [omega, lambda] {
        if s.dim() != cost.dim() {
            return Err(CostError::DimensionMismatch { expected: cost.dim(), found: s.dim() });
        }
    }
    Ok(())
}

/// Reduces `f` over all sampled pairs with an order-independent fold.
fn pair_reduce<F>(
    omega: &DomainSample,
    lambda: &DomainSample,
    init: f64,
    pick: fn(f64, f64) -> f64,
    f: F,
) -> Result<f64, CostError>
where
    F: Fn(&Point, &Point) -> Result<f64, CostError> + Sync,
{
    omega
        .points()
        .par_iter()
        .map(|x| {
            lambda
                .points()
                .iter()
                .try_fold(init, |acc, y| f(x, y).map(|v| pick(acc, v)))
        })
        .try_reduce(|| init, |a, b| Ok(pick(a, b)))
}

/// Minimum of `c(x, y)` over the sampled product domain.
pub fn estimate_b0(
    cost: &CostModel,
    omega: &DomainSample,
    lambda: &DomainSample,
) -> Result<f64, CostError> {
    check_samples(cost, omega, lambda)?;
    pair_reduce(omega, lambda, f64::INFINITY, f64::min, |x, y| {
        Ok(cost.value(x.coords(), y.coords()))
    })
}

/// Minimum of `|grad_x c(x, y)|` over the sampled product domain.
pub fn estimate_b1(
    cost: &CostModel,
    omega: &DomainSample,
    lambda: &DomainSample,
) -> Result<B1Estimate, CostError> {
    check_samples(cost, omega, lambda)?;
    cost.require_order(1)?;
    let value = pair_reduce(omega, lambda, f64::INFINITY, f64::min, |x, y| {
        cost.grad_x(x.coords(), y.coords())
            .map(|g| crate::point::norm(&g))
    })?;
    Ok(B1Estimate { value, degenerate: value <= B1_WARNING_TOLERANCE })
}

/// Maximum operator norm of `D^2_xx c(., y)` over the sampled product domain.
pub fn estimate_c2(
    cost: &CostModel,
    omega: &DomainSample,
    lambda: &DomainSample,
) -> Result<f64, CostError> {
    check_samples(cost, omega, lambda)?;
    cost.require_order(2)?;
    pair_reduce(omega, lambda, 0.0, f64::max, |x, y| {
        let h = cost.hess_xx(x.coords(), y.coords())?;
        Ok(operator_norm_sym(&h))
    })
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub(crate) fn operator_norm_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Sampled twist check: `y -> grad_x c(x, y)` must separate every pair of
/// targets by more than [`TWIST_TOLERANCE`]. Necessary, not sufficient.
pub fn check_twist(cost: &CostModel, x: &Point, lambda: &DomainSample) -> Result<bool, CostError> {
    if lambda.dim() != cost.dim() {
        return Err(CostError::DimensionMismatch { expected: cost.dim(), found: lambda.dim() });
    }
    let images = lambda
        .points()
        .iter()
        .map(|y| cost.grad_x(x.coords(), y.coords()))
        .collect::<Result<Vec<_>, _>>()?;
    for (a, ga) in images.iter().enumerate() {
        for gb in &images[a + 1..] {
            if crate::point::distance(ga, gb) <= TWIST_TOLERANCE {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// `det c_{i,j}(x, y)`; callers compare its magnitude against a tolerance.
pub fn check_nondegeneracy(cost: &CostModel, x: &Point, y: &Point) -> Result<f64, CostError> {
    Ok(cost.mixed(x.coords(), y.coords())?.determinant())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point::SampleRole;

    fn sample(points: Vec<[f64; 2]>, role: SampleRole) -> DomainSample {
        DomainSample::new(points.into_iter().map(Point::from).collect(), role).unwrap()
    }

    fn unit_square() -> DomainSample {
        sample(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]],
            SampleRole::Source,
        )
    }

    fn far_square() -> DomainSample {
        sample(vec![[3.0, 3.0], [4.0, 3.0], [3.0, 4.0], [4.0, 4.0]], SampleRole::Target)
    }

    #[test]
    fn quadratic_constants_on_separated_squares() {
        let c = CostModel::quadratic(2);
        let (k, b1) = CostConstants::estimate(&c, &unit_square(), &far_square()).unwrap();
        assert!((k.b0 - 4.0).abs() < 1e-12);
        assert!((k.b1 - 8f64.sqrt()).abs() < 1e-12);
        assert!(!b1.degenerate);
        assert!((k.c2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shared_point_gives_zero_b0_and_flags_b1() {
        let c = CostModel::quadratic(2);
        let lam = sample(vec![[1.0, 1.0], [5.0, 5.0]], SampleRole::Target);
        assert_eq!(estimate_b0(&c, &unit_square(), &lam).unwrap(), 0.0);
        let b1 = estimate_b1(&c, &unit_square(), &lam).unwrap();
        assert_eq!(b1.value, 0.0);
        assert!(b1.degenerate);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let c = CostModel::quadratic(3);
        assert!(matches!(
            estimate_b0(&c, &unit_square(), &far_square()),
            Err(CostError::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn log_hessian_norm_at_unit_separation() {
        // D^2(-log r) at r = 1 has eigenvalues +1 (radial) and -1 (tangential).
        let c = CostModel::log(2);
        let om = sample(vec![[0.0, 0.0]], SampleRole::Source);
        let la = sample(vec![[0.6, 0.8]], SampleRole::Target);
        assert!((estimate_c2(&c, &om, &la).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn order_one_cost_has_no_c2() {
        let c = CostModel::from_fn("lip", 2, 1, |x, y| crate::point::distance(x, y));
        let err = estimate_c2(&c, &unit_square(), &far_square()).unwrap_err();
        assert!(matches!(err, CostError::Capability { needed: 2, available: 1, .. }));
    }

    #[test]
    fn quadratic_mixed_determinant() {
        for n in 1..=3 {
            let c = CostModel::quadratic(n);
            let x = Point::new(vec![0.3; n]);
            let y = Point::new(vec![-1.1; n]);
            let det = check_nondegeneracy(&c, &x, &y).unwrap();
            assert_eq!(det, (-1f64).powi(n as i32));
        }
    }

    #[test]
    fn quartic_is_degenerate_on_diagonal() {
        let c = CostModel::from_fn("quartic", 1, 4, |x, y| (x[0] - y[0]).powi(4));
        let x = Point::from([0.4]);
        assert!(check_nondegeneracy(&c, &x, &x).unwrap().abs() < 1e-6);
    }

    #[test]
    fn duplicate_targets_break_twist() {
        let c = CostModel::from_fn("quartic", 1, 4, |x, y| (x[0] - y[0]).powi(4));
        let x = Point::from([0.0]);
        let lam = DomainSample::new(
            vec![Point::from([1.0]), Point::from([1.0])],
            SampleRole::Target,
        )
        .unwrap();
        assert!(!check_twist(&c, &x, &lam).unwrap());
        let q = CostModel::quadratic(2);
        assert!(check_twist(&q, &Point::from([0.0, 0.0]), &far_square()).unwrap());
    }

    #[test]
    fn unknown_id_lists_registered_costs() {
        let err = CostModel::from_id("cubic", 2).unwrap_err();
        let msg = err.to_string();
        for id in REGISTERED_COSTS {
            assert!(msg.contains(id), "{msg}");
        }
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let x = [0.2, -0.4];
        let y = [0.9, 0.3];
        for base in [CostModel::quadratic(2), CostModel::log(2), CostModel::sqrt_plus(2)] {
            let fd = base.clone().with_mode(DerivativeMode::FiniteDifference);
            let rel = |a: &[f64], b: &[f64]| {
                let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())) / scale
            };
            assert!(rel(&base.grad_x(&x, &y).unwrap(), &fd.grad_x(&x, &y).unwrap()) < 1e-5);
            assert!(rel(base.mixed(&x, &y).unwrap().as_slice(), fd.mixed(&x, &y).unwrap().as_slice()) < 1e-5);
            assert!(rel(base.d3_xxy(&x, &y).unwrap().as_slice(), fd.d3_xxy(&x, &y).unwrap().as_slice()) < 1e-5);
            assert!(rel(base.d3_xyy(&x, &y).unwrap().as_slice(), fd.d3_xyy(&x, &y).unwrap().as_slice()) < 1e-5);
            assert!(rel(base.d4_xxyy(&x, &y).unwrap().as_slice(), fd.d4_xxyy(&x, &y).unwrap().as_slice()) < 1e-5);
            // The raw h/2h gap is a conservative indicator; the extrapolated
            // values above are far more accurate than it suggests.
            let q = fd.fd_quality(&x, &y, 4).unwrap();
            assert!(q < 10.0 * FD_QUALITY_THRESHOLD, "{} quality {q}", base.id());
        }
    }
}
