//! Central finite differences on the joint variable `z = (x, y)`.
//!
//! A mixed partial `d^k / dz_a1 ... dz_ak` is approximated by the tensor
//! product of 1-D central differences, which needs `2^k` evaluations and is
//! second-order accurate for repeated as well as distinct indices. Each
//! estimate is formed at steps `h` and `2h` and Richardson-combined; the
//! relative gap between the two raw estimates is the quality indicator.

/// Raw central-difference estimate of the mixed partial over `idx` at `z0`.
pub(crate) fn central_partial<F>(f: &F, z0: &[f64], idx: &[usize], h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let k = idx.len();
    let mut z = z0.to_vec();
    let mut acc = 0.0;
    for mask in 0u32..(1 << k) {
        z.copy_from_slice(z0);
        let mut sign = 1.0;
        for (bit, &a) in idx.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                z[a] -= h;
                sign = -sign;
            } else {
                z[a] += h;
            }
        }
        acc += sign * f(&z);
    }
    acc / (2.0 * h).powi(k as i32)
}

/// A Richardson-extrapolated estimate with the raw `h` vs `2h` discrepancy.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Estimate {
    pub value: f64,
    pub fine: f64,
    pub coarse: f64,
}

pub(crate) fn richardson<F>(f: &F, z0: &[f64], idx: &[usize], h: f64) -> Estimate
where
    F: Fn(&[f64]) -> f64,
{
    let fine = central_partial(f, z0, idx, h);
    let coarse = central_partial(f, z0, idx, 2.0 * h);
    Estimate { value: (4.0 * fine - coarse) / 3.0, fine, coarse }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_partials_are_recovered() {
        // f = z0^2 z1 + z1^3 z0 + z0^4
        let f = |z: &[f64]| z[0] * z[0] * z[1] + z[1].powi(3) * z[0] + z[0].powi(4);
        let z = [0.7, -0.3];
        let d0 = richardson(&f, &z, &[0], 1e-3).value;
        let exact_d0 = 2.0 * z[0] * z[1] + z[1].powi(3) + 4.0 * z[0].powi(3);
        assert!((d0 - exact_d0).abs() < 1e-9);
        let d01 = richardson(&f, &z, &[0, 1], 1e-3).value;
        let exact_d01 = 2.0 * z[0] + 3.0 * z[1] * z[1];
        assert!((d01 - exact_d01).abs() < 1e-8);
        let d0000 = richardson(&f, &z, &[0, 0, 0, 0], 1e-2).value;
        assert!((d0000 - 24.0).abs() < 1e-6);
        let d011 = richardson(&f, &z, &[0, 1, 1], 1e-2).value;
        assert!((d011 - 6.0 * z[1]).abs() < 1e-7);
    }
}
