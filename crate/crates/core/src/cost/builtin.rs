//! Built-in translation-invariant costs `c(x, y) = phi(|x - y|^2)`.
//!
//! For such costs every derivative follows from the chain rule in
//! `s = |r|^2`, `r = x - y`, and each `y`-derivative is minus the matching
//! `x`-derivative. The analytic tensors below are written once in terms of
//! `phi', phi'', phi''', phi''''`.

use nalgebra::DMatrix;

use super::CostFunction;
use crate::tensor::{Tensor3, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RadialKind {
    /// `|x - y|^2 / 2`
    Quadratic,
    /// `-log |x - y|`
    Log,
    /// `sqrt(1 + |x - y|^2)`
    SqrtPlus,
}

#[derive(Clone, Debug)]
pub struct RadialCost {
    kind: RadialKind,
    /// Separations below this are evaluated at the floor (singular costs only).
    floor: f64,
}

impl RadialCost {
    pub fn new(kind: RadialKind, floor: f64) -> Self {
        RadialCost { kind, floor }
    }

    fn clamp_s(&self, s: f64) -> f64 {
        match self.kind {
            RadialKind::Log => s.max(self.floor * self.floor),
            _ => s,
        }
    }

    /// `[phi, phi', phi'', phi''', phi'''']` at `s`.
    fn profile(&self, s: f64) -> [f64; 5] {
        let s = self.clamp_s(s);
        match self.kind {
            RadialKind::Quadratic => [0.5 * s, 0.5, 0.0, 0.0, 0.0],
            RadialKind::Log => [
                -0.5 * s.ln(),
                -0.5 / s,
                0.5 / (s * s),
                -1.0 / (s * s * s),
                3.0 / (s * s * s * s),
            ],
            RadialKind::SqrtPlus => {
                let t = 1.0 + s;
                let rt = t.sqrt();
                [
                    rt,
                    0.5 / rt,
                    -0.25 / (t * rt),
                    0.375 / (t * t * rt),
                    -0.9375 / (t * t * t * rt),
                ]
            }
        }
    }

    fn diff(x: &[f64], y: &[f64]) -> (Vec<f64>, f64) {
        let r: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let s = r.iter().map(|v| v * v).sum();
        (r, s)
    }

    fn third_x(&self, x: &[f64], y: &[f64]) -> Tensor3 {
        let (r, s) = Self::diff(x, y);
        let p = self.profile(s);
        let n = r.len();
        let mut t = Tensor3::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut v = 8.0 * p[3] * r[i] * r[j] * r[k];
                    let mut lin = 0.0;
                    if i == j {
                        lin += r[k];
                    }
                    if i == k {
                        lin += r[j];
                    }
                    if j == k {
                        lin += r[i];
                    }
                    v += 4.0 * p[2] * lin;
                    t.set(i, j, k, v);
                }
            }
        }
        t
    }
}

fn kd(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

impl CostFunction for RadialCost {
    fn id(&self) -> &str {
        match self.kind {
            RadialKind::Quadratic => "quadratic",
            RadialKind::Log => "log",
            RadialKind::SqrtPlus => "sqrtplus",
        }
    }

    fn smoothness(&self) -> u8 {
        4
    }

    fn vanishes_on_diagonal(&self) -> bool {
        self.kind == RadialKind::Quadratic
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let (_, s) = Self::diff(x, y);
        self.profile(s)[0]
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        let (r, s) = Self::diff(x, y);
        let d1 = self.profile(s)[1];
        Some(r.iter().map(|ri| 2.0 * d1 * ri).collect())
    }

    fn grad_y(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        self.grad_x(x, y).map(|g| g.into_iter().map(|v| -v).collect())
    }

    fn hess_xx(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        let (r, s) = Self::diff(x, y);
        let p = self.profile(s);
        let n = r.len();
        Some(DMatrix::from_fn(n, n, |i, j| {
            4.0 * p[2] * r[i] * r[j] + 2.0 * p[1] * kd(i, j)
        }))
    }

    fn mixed(&self, x: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        self.hess_xx(x, y).map(|h| -h)
    }

    fn d3_xxy(&self, x: &[f64], y: &[f64]) -> Option<Tensor3> {
        let t = self.third_x(x, y);
        let n = t.dim();
        let mut out = Tensor3::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for m in 0..n {
                    out.set(i, j, m, -t.get(i, j, m));
                }
            }
        }
        Some(out)
    }

    fn d3_xyy(&self, x: &[f64], y: &[f64]) -> Option<Tensor3> {
        Some(self.third_x(x, y))
    }

    fn d4_xxyy(&self, x: &[f64], y: &[f64]) -> Option<Tensor4> {
        let (r, s) = Self::diff(x, y);
        let p = self.profile(s);
        let n = r.len();
        let mut q = Tensor4::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let quartic = 16.0 * p[4] * r[i] * r[j] * r[k] * r[l];
                        let quad = kd(i, j) * r[k] * r[l]
                            + kd(i, k) * r[j] * r[l]
                            + kd(i, l) * r[j] * r[k]
                            + kd(j, k) * r[i] * r[l]
                            + kd(j, l) * r[i] * r[k]
                            + kd(k, l) * r[i] * r[j];
                        let cst = kd(i, j) * kd(k, l) + kd(i, k) * kd(j, l) + kd(i, l) * kd(j, k);
                        q.set(i, j, k, l, quartic + 8.0 * p[3] * quad + 4.0 * p[2] * cst);
                    }
                }
            }
        }
        Some(q)
    }
}
