//! Points in Euclidean space and finite sample sets of them.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::cost::CostError;

/// A point in `R^n`, stored as its coordinate vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    /// Builds a point, rejecting empty or non-finite coordinates.
    pub fn try_new(coords: Vec<f64>) -> Result<Self, CostError> {
        if coords.is_empty() {
            return Err(CostError::InvalidPoint("point has no coordinates".into()));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(CostError::InvalidPoint(format!("non-finite coordinate {bad}")));
        }
        Ok(Point(coords))
    }

    pub fn origin(dim: usize) -> Self {
        Point(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn distance(&self, other: &Point) -> f64 {
        distance(&self.0, &other.0)
    }
}

impl Index<usize> for Point {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for Point {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

impl<const N: usize> From<[f64; N]> for Point {
    fn from(v: [f64; N]) -> Self {
        Point(v.to_vec())
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Which side of the transport problem a sample set describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleRole {
    Source,
    Target,
}

/// A finite sample of a source or target domain.
///
/// Infima over the continuous domains are replaced by minima over these
/// samples, so the sample density bounds how sharp any estimate can be.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSample {
    points: Vec<Point>,
    role: SampleRole,
}

impl DomainSample {
    pub fn new(points: Vec<Point>, role: SampleRole) -> Result<Self, CostError> {
        let first = points.first().ok_or(CostError::EmptySample)?;
        let dim = first.dim();
        for p in &points {
            if p.dim() != dim {
                return Err(CostError::DimensionMismatch {
                    expected: dim,
                    found: p.dim(),
                });
            }
        }
        Ok(DomainSample { points, role })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn role(&self) -> SampleRole {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Axis-aligned bounding box as `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        bounding_box(&self.points)
    }

    /// Mean nearest-neighbour distance; recorded in reports as the sample density.
    pub fn mean_spacing(&self) -> f64 {
        if self.points.len() < 2 {
            return 0.0;
        }
        let total: f64 = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| p.distance(q))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / self.points.len() as f64
    }
}

pub fn bounding_box(points: &[Point]) -> (Vec<f64>, Vec<f64>) {
    let dim = points.first().map_or(0, Point::dim);
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in points {
        for k in 0..dim {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_coordinates() {
        assert!(Point::try_new(vec![0.0, f64::NAN]).is_err());
        assert!(Point::try_new(vec![]).is_err());
        assert!(Point::try_new(vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn sample_requires_matching_dimensions() {
        let err = DomainSample::new(
            vec![Point::from([0.0, 0.0]), Point::from([1.0])],
            SampleRole::Source,
        )
        .unwrap_err();
        assert!(matches!(err, CostError::DimensionMismatch { expected: 2, found: 1 }));
        assert!(matches!(
            DomainSample::new(vec![], SampleRole::Target),
            Err(CostError::EmptySample)
        ));
    }

    #[test]
    fn bounding_box_and_spacing() {
        let s = DomainSample::new(
            vec![Point::from([0.0, 1.0]), Point::from([2.0, -1.0]), Point::from([1.0, 0.0])],
            SampleRole::Source,
        )
        .unwrap();
        assert_eq!(s.bounding_box(), (vec![0.0, -1.0], vec![2.0, 1.0]));
        assert!((s.mean_spacing() - 2f64.sqrt()).abs() < 1e-12);
    }
}
