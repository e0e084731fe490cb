//! A small dense two-phase simplex with Bland's rule.
//!
//! Used only as an independent exact reference on tiny instances; it shares
//! no code with the flow solver.

use super::SolverError;

const TOL: f64 = 1e-11;

/// Minimizes `c.x` subject to `a_ub x <= b_ub`, `a_eq x = b_eq`, `x >= 0`.
/// Right-hand sides must be nonnegative.
pub(crate) fn minimize(
    c: &[f64],
    a_ub: &[Vec<f64>],
    b_ub: &[f64],
    a_eq: &[Vec<f64>],
    b_eq: &[f64],
) -> Result<Vec<f64>, SolverError> {
    let nv = c.len();
    let mu = a_ub.len();
    let me = a_eq.len();
    let rows = mu + me;
    let cols = nv + mu + me; // structural, slack, artificial
    let rhs = cols;
    let mut t = vec![vec![0.0; cols + 1]; rows];
    let mut basis = vec![0usize; rows];
    for (r, (row, &b)) in a_ub.iter().zip(b_ub).enumerate() {
        t[r][..nv].copy_from_slice(row);
        t[r][nv + r] = 1.0;
        t[r][rhs] = b;
        basis[r] = nv + r;
    }
    for (k, (row, &b)) in a_eq.iter().zip(b_eq).enumerate() {
        let r = mu + k;
        t[r][..nv].copy_from_slice(row);
        t[r][nv + mu + k] = 1.0;
        t[r][rhs] = b;
        basis[r] = nv + mu + k;
    }
    if t.iter().any(|row| row[rhs] < 0.0) {
        return Err(SolverError::Internal("negative right-hand side".into()));
    }

    let mut phase1 = vec![0.0; cols];
    phase1[nv + mu..].fill(1.0);
    run(&mut t, &mut basis, &phase1, cols)?;
    let infeas: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &b)| b >= nv + mu)
        .map(|(r, _)| t[r][rhs])
        .sum();
    if infeas > 1e-9 {
        return Err(SolverError::Internal(format!("LP infeasible (phase one residual {infeas:e})")));
    }
    // Pivot zero-level artificials out where possible.
    for r in 0..rows {
        if basis[r] >= nv + mu {
            if let Some(j) = (0..nv + mu).find(|&j| t[r][j].abs() > TOL) {
                pivot(&mut t, &mut basis, r, j);
            }
        }
    }

    let mut phase2 = vec![0.0; cols];
    phase2[..nv].copy_from_slice(c);
    run(&mut t, &mut basis, &phase2, nv + mu)?;

    let mut x = vec![0.0; nv];
    for (r, &b) in basis.iter().enumerate() {
        if b < nv {
            x[b] = t[r][rhs];
        }
    }
    Ok(x)
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, j: usize) {
    let p = t[r][j];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    let prow = t[r].clone();
    for (k, row) in t.iter_mut().enumerate() {
        if k != r {
            let f = row[j];
            if f != 0.0 {
                for (a, b) in row.iter_mut().zip(&prow) {
                    *a -= f * b;
                }
            }
        }
    }
    basis[r] = j;
}

/// Simplex iterations on `cost`, letting only columns `< allowed` enter.
fn run(
    t: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &[f64],
    allowed: usize,
) -> Result<(), SolverError> {
    let rhs = cost.len();
    for _ in 0..100_000 {
        // Bland: lowest-index column with negative reduced cost.
        let entering = (0..allowed).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let z: f64 = basis.iter().enumerate().map(|(r, &b)| cost[b] * t[r][j]).sum();
            cost[j] - z < -TOL
        });
        let Some(j) = entering else {
            return Ok(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..t.len() {
            if t[r][j] > TOL {
                let ratio = t[r][rhs] / t[r][j];
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lv)) => {
                        if ratio < lv - TOL || (ratio <= lv + TOL && basis[r] < basis[lr]) {
                            Some((r, ratio))
                        } else {
                            Some((lr, lv))
                        }
                    }
                };
            }
        }
        let Some((r, _)) = leave else {
            return Err(SolverError::Internal("LP unbounded".into()));
        };
        pivot(t, basis, r, j);
    }
    Err(SolverError::Internal("simplex iteration limit".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lp() {
        // min -x - y  s.t. x + 2y <= 4, 3x + y <= 6, x + y = 2.5
        let x = minimize(
            &[-1.0, -1.0],
            &[vec![1.0, 2.0], vec![3.0, 1.0]],
            &[4.0, 6.0],
            &[vec![1.0, 1.0]],
            &[2.5],
        )
        .unwrap();
        assert!((x[0] + x[1] - 2.5).abs() < 1e-12);
        assert!(x[0] + 2.0 * x[1] <= 4.0 + 1e-12);
        assert!(3.0 * x[0] + x[1] <= 6.0 + 1e-12);
    }
}
