//! The Ma-Trudinger-Wang tensor and a sampled estimate of its A3 constant.
//!
//! The tensor is evaluated at `(x, y)` rather than `(x, p)`; the momentum
//! `p = grad_x c(x, y)` is implicit through the twist relation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostError, CostModel};
use crate::point::{dot, norm, Point};
use crate::tensor::Tensor4;

/// Mixed matrices with `|det|` at or below this are treated as singular.
pub const NONDEGENERACY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MtwError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("mixed matrix is singular at the basepoint (det = {det:e})")]
    Singular { det: f64 },
    #[error("no orthogonal direction pairs exist in dimension {0}")]
    DegenerateDimension(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtwTensor {
    pub entries: Tensor4,
    pub x: Point,
    pub y: Point,
}

impl MtwTensor {
    pub fn dim(&self) -> usize {
        self.entries.dim()
    }

    /// `A_{ij,kl} xi_i xi_j eta_k eta_l`.
    pub fn form(&self, xi: &[f64], eta: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let a = xi[i] * xi[j];
                if a == 0.0 {
                    continue;
                }
                for k in 0..n {
                    for l in 0..n {
                        acc += self.entries.get(i, j, k, l) * a * eta[k] * eta[l];
                    }
                }
            }
        }
        acc
    }

    /// The form divided by `|xi|^2 |eta|^2`.
    pub fn normalized_form(&self, xi: &[f64], eta: &[f64]) -> f64 {
        let nx = dot(xi, xi);
        let ne = dot(eta, eta);
        self.form(xi, eta) / (nx * ne)
    }

    /// Whether nonzero orthogonal direction pairs exist (false for `n = 1`).
    pub fn admits_orthogonal_pairs(&self) -> bool {
        self.dim() >= 2
    }

    /// Largest deviation from the `(i,j)` and `(k,l)` swap symmetries.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.dim();
        let t = &self.entries;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = t.get(i, j, k, l);
                        worst = worst.max((v - t.get(j, i, k, l)).abs());
                        worst = worst.max((v - t.get(i, j, l, k)).abs());
                    }
                }
            }
        }
        worst
    }
}

/// `A_{ij,kl} = c^{r,k} c^{s,l} (c^{m,n} c_{ij,m} c_{n,rs} - c_{ij,rs})`.
pub fn mtw_tensor(cost: &CostModel, x: &Point, y: &Point) -> Result<MtwTensor, MtwError> {
    cost.require_order(4)?;
    let (xs, ys) = (x.coords(), y.coords());
    let mixed = cost.mixed(xs, ys)?;
    let det = mixed.determinant();
    if !(det.abs() > NONDEGENERACY_TOLERANCE) {
        return Err(MtwError::Singular { det });
    }
    let inv = mixed
        .clone()
        .try_inverse()
        .ok_or(MtwError::Singular { det })?;
    let t_xxy = cost.d3_xxy(xs, ys)?;
    let t_xyy = cost.d3_xyy(xs, ys)?;
    let q = cost.d4_xxyy(xs, ys)?;
    let n = cost.dim();

    // inner_{ij,rs} = c^{m,n} c_{ij,m} c_{n,rs} - c_{ij,rs}
    // `inv[(m, a)]` is c^{m,a}: the row index pairs with y, the column with x.
    let mut inner = Tensor4::zeros(n);
    for i in 0..n {
        for j in 0..n {
            for r in 0..n {
                for s in 0..n {
                    let mut acc = 0.0;
                    for m in 0..n {
                        let cm = t_xxy.get(i, j, m);
                        if cm == 0.0 {
                            continue;
                        }
                        for a in 0..n {
                            acc += inv[(m, a)] * cm * t_xyy.get(a, r, s);
                        }
                    }
                    inner.set(i, j, r, s, acc - q.get(i, j, r, s));
                }
            }
        }
    }

    let mut out = Tensor4::zeros(n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut acc = 0.0;
                    for r in 0..n {
                        let ark = inv[(r, k)];
                        if ark == 0.0 {
                            continue;
                        }
                        for s in 0..n {
                            acc += ark * inv[(s, l)] * inner.get(i, j, r, s);
                        }
                    }
                    out.set(i, j, k, l, acc);
                }
            }
        }
    }
    Ok(MtwTensor { entries: out, x: x.clone(), y: y.clone() })
}

/// Where the sampled minimum of the normalized form was attained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A3Argmin {
    pub x: Point,
    pub y: Point,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
}

/// Result of the sampled A3 minimization.
///
/// `c0_estimate` is an upper bound on the true infimum: sampling can falsify
/// positivity but never certify it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A3Report {
    pub c0_estimate: Option<f64>,
    pub argmin: Option<A3Argmin>,
    pub samples_checked: usize,
    pub bound_kind: String,
    pub flagged: Option<String>,
}

impl A3Report {
    pub fn empty() -> Self {
        A3Report {
            c0_estimate: None,
            argmin: None,
            samples_checked: 0,
            bound_kind: "upper bound on inf".into(),
            flagged: Some("no basepoints supplied; estimate undefined".into()),
        }
    }
}

/// Plastic-number style additive recurrence in `d` dimensions.
fn rd_point(index: usize, d: usize) -> Vec<f64> {
    // phi_d is the unique positive root of x^{d+1} = x + 1.
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
    }
    (0..d)
        .map(|k| {
            let alpha = (1.0 / phi).powi(k as i32 + 1);
            (0.5 + alpha * (index as f64 + 1.0)).fract()
        })
        .collect()
}

/// Maps uniforms in `(0,1)^{2k}` to `2k` standard normals (Box-Muller).
fn gaussians(u: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(u.len());
    for pair in u.chunks(2) {
        let u1 = pair[0].clamp(1e-12, 1.0 - 1e-12);
        let u2 = pair.get(1).copied().unwrap_or(0.5);
        let rad = (-2.0 * u1.ln()).sqrt();
        let ang = std::f64::consts::TAU * u2;
        out.push(rad * ang.cos());
        out.push(rad * ang.sin());
    }
    out
}

/// Deterministic orthonormal direction pairs: all axis pairs first, then
/// `count` low-discrepancy pairs. Prefixes are stable, so asking for more
/// directions only ever adds pairs.
pub fn direction_pairs(n: usize, count: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = Vec::with_capacity(count + n * n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let mut xi = vec![0.0; n];
                let mut eta = vec![0.0; n];
                xi[i] = 1.0;
                eta[j] = 1.0;
                out.push((xi, eta));
            }
        }
    }
    let d = 2 * n + (2 * n) % 2;
    let mut index = 0usize;
    while out.len() < count + n * (n - 1) {
        let g = gaussians(&rd_point(index, d));
        index += 1;
        let xi_raw = &g[..n];
        let eta_raw = &g[n..2 * n];
        let nx = norm(xi_raw);
        if nx < 1e-8 {
            continue;
        }
        let xi: Vec<f64> = xi_raw.iter().map(|v| v / nx).collect();
        let proj = dot(eta_raw, &xi);
        let mut eta: Vec<f64> = eta_raw.iter().zip(&xi).map(|(e, x)| e - proj * x).collect();
        // A second pass removes the residual component left by rounding.
        let proj2 = dot(&eta, &xi);
        for (e, x) in eta.iter_mut().zip(&xi) {
            *e -= proj2 * x;
        }
        let ne = norm(&eta);
        if ne < 1e-8 {
            continue;
        }
        eta.iter_mut().for_each(|e| *e /= ne);
        out.push((xi, eta));
    }
    out
}

/// Minimizes the normalized A3 form over basepoints and direction pairs.
pub fn a3_infimum(
    cost: &CostModel,
    pairs: &[(Point, Point)],
    directions_per_pair: usize,
) -> Result<A3Report, MtwError> {
    let n = cost.dim();
    if n < 2 {
        return Err(MtwError::DegenerateDimension(n));
    }
    if pairs.is_empty() {
        return Ok(A3Report::empty());
    }
    let dirs = direction_pairs(n, directions_per_pair);
    let per_point: Vec<(f64, usize)> = pairs
        .par_iter()
        .map(|(x, y)| {
            let t = mtw_tensor(cost, x, y)?;
            let mut best = (f64::INFINITY, 0usize);
            for (k, (xi, eta)) in dirs.iter().enumerate() {
                let v = t.normalized_form(xi, eta);
                if v < best.0 {
                    best = (v, k);
                }
            }
            Ok(best)
        })
        .collect::<Result<_, MtwError>>()?;

    let (mut best_v, mut best_p, mut best_d) = (f64::INFINITY, 0, 0);
    for (p, &(v, d)) in per_point.iter().enumerate() {
        if v < best_v {
            (best_v, best_p, best_d) = (v, p, d);
        }
    }
    let (xi, eta) = dirs[best_d].clone();
    Ok(A3Report {
        c0_estimate: Some(best_v),
        argmin: Some(A3Argmin {
            x: pairs[best_p].0.clone(),
            y: pairs[best_p].1.clone(),
            xi,
            eta,
        }),
        samples_checked: pairs.len() * dirs.len(),
        bound_kind: "upper bound on inf".into(),
        flagged: None,
    })
}
