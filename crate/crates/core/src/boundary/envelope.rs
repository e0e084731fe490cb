//! Cone envelopes: the boundary near a point rebuilt as the supremum of cone
//! functions hanging from nearby boundary samples.
//!
//! Coordinates are rotated so the base normal (pointing into the active
//! region) becomes `-e_n`. The region then lies below the boundary graph and
//! each sample `y` contributes the cone function `y_n - alpha |z' - y'|`,
//! the upper surface of the cone `y + C_alpha` that the cone condition puts
//! inside the region. The supremum is Lipschitz with constant `alpha`.

use serde::{Deserialize, Serialize};

use super::{BoundaryError, FreeBoundarySample};
use crate::point::{distance, dot, norm, Point};

/// Orthonormal frame with origin `x0`; the last axis is minus the base normal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub origin: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
}

impl Frame {
    pub fn new(origin: &[f64], base_normal: &[f64]) -> Result<Self, BoundaryError> {
        let n = origin.len();
        if base_normal.len() != n {
            return Err(BoundaryError::DimensionMismatch { grid: n, data: base_normal.len() });
        }
        let bn = norm(base_normal);
        if !(bn > 0.0) {
            return Err(BoundaryError::Invalid("base normal must be nonzero".into()));
        }
        let last: Vec<f64> = base_normal.iter().map(|v| -v / bn).collect();
        let mut axes: Vec<Vec<f64>> = Vec::with_capacity(n);
        for k in 0..n {
            if axes.len() == n - 1 {
                break;
            }
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            for a in axes.iter().chain(std::iter::once(&last)) {
                let p = dot(&e, a);
                e.iter_mut().zip(a).for_each(|(v, w)| *v -= p * w);
            }
            let en = norm(&e);
            if en > 1e-6 {
                axes.push(e.into_iter().map(|v| v / en).collect());
            }
        }
        axes.push(last);
        Ok(Frame { origin: origin.to_vec(), axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Frame coordinates of an ambient point.
    pub fn to_local(&self, p: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = p.iter().zip(&self.origin).map(|(a, b)| a - b).collect();
        self.axes.iter().map(|a| dot(&d, a)).collect()
    }

    /// Ambient point of frame coordinates.
    pub fn to_ambient(&self, z: &[f64]) -> Vec<f64> {
        let mut p = self.origin.clone();
        for (c, a) in z.iter().zip(&self.axes) {
            p.iter_mut().zip(a).for_each(|(v, w)| *v += c * w);
        }
        p
    }
}

/// A box window of half-width `half_width` around `center`, measured in the
/// rotated frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeWindow {
    pub center: Point,
    pub half_width: f64,
}

/// How finely the lateral envelope grid is laid out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvelopeResolution {
    /// Target node spacing.
    Spacing(f64),
    /// Exact node count per lateral axis.
    Nodes(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeEnvelope {
    pub frame: Frame,
    pub alpha: f64,
    pub window: Option<EnvelopeWindow>,
    /// Lower corner of the lateral grid.
    pub lo: Vec<f64>,
    pub spacing: Vec<f64>,
    pub counts: Vec<usize>,
    /// Heights on the lateral grid, axis 0 fastest.
    pub values: Vec<f64>,
}

impl ConeEnvelope {
    /// An envelope from given heights, for synthetic profiles.
    pub fn from_values(
        lo: Vec<f64>,
        spacing: Vec<f64>,
        counts: Vec<usize>,
        values: Vec<f64>,
        alpha: f64,
    ) -> Result<Self, BoundaryError> {
        let n = lo.len() + 1;
        if spacing.len() != lo.len() || counts.len() != lo.len() {
            return Err(BoundaryError::Invalid("inconsistent lateral grid".into()));
        }
        if values.len() != counts.iter().product::<usize>() {
            return Err(BoundaryError::Invalid("value count does not match grid".into()));
        }
        let mut base = vec![0.0; n];
        base[n - 1] = -1.0;
        Ok(ConeEnvelope {
            frame: Frame::new(&vec![0.0; n], &base)?,
            alpha,
            window: None,
            lo,
            spacing,
            counts,
            values,
        })
    }

    pub fn lateral_dim(&self) -> usize {
        self.counts.len()
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    fn unravel(&self, mut k: usize) -> Vec<usize> {
        self.counts
            .iter()
            .map(|&c| {
                let i = k % c;
                k /= c;
                i
            })
            .collect()
    }

    fn ravel(&self, idx: &[usize]) -> usize {
        let mut k = 0;
        for a in (0..idx.len()).rev() {
            k = k * self.counts[a] + idx[a];
        }
        k
    }

    /// Lateral coordinates of node `k`.
    pub fn node(&self, k: usize) -> Vec<f64> {
        self.unravel(k)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + self.spacing[a] * i as f64)
            .collect()
    }

    /// Graph point `(z', phi(z'))` of node `k` in frame coordinates.
    pub fn graph_point(&self, k: usize) -> Vec<f64> {
        let mut z = self.node(k);
        z.push(self.values[k]);
        z
    }

    /// Largest axis-neighbor slope `|phi(a) - phi(b)| / |a - b|`.
    pub fn lipschitz_constant(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.node_count() {
            let idx = self.unravel(k);
            for a in 0..self.lateral_dim() {
                if idx[a] + 1 < self.counts[a] {
                    let mut j = idx.clone();
                    j[a] += 1;
                    let slope = (self.values[self.ravel(&j)] - self.values[k]).abs() / self.spacing[a];
                    worst = worst.max(slope);
                }
            }
        }
        worst
    }

    /// For every interior node and lateral axis, the second difference
    /// `phi(z + H) + phi(z - H) - 2 phi(z)` together with `H` and the node.
    pub fn second_differences(&self) -> Vec<(usize, usize, f64, f64)> {
        let mut out = Vec::new();
        for k in 0..self.node_count() {
            let idx = self.unravel(k);
            for a in 0..self.lateral_dim() {
                if idx[a] == 0 || idx[a] + 1 >= self.counts[a] {
                    continue;
                }
                let mut p = idx.clone();
                let mut m = idx.clone();
                p[a] += 1;
                m[a] -= 1;
                let d2 = self.values[self.ravel(&p)] + self.values[self.ravel(&m)] - 2.0 * self.values[k];
                out.push((k, a, self.spacing[a], d2));
            }
        }
        out
    }
}

fn in_window(z: &[f64], w: f64) -> bool {
    z.iter().all(|v| v.abs() <= w)
}

/// Frame coordinates of the samples inside the window.
fn window_points(
    frame: &Frame,
    samples: &[FreeBoundarySample],
    half_width: f64,
) -> Vec<Vec<f64>> {
    samples
        .iter()
        .map(|s| frame.to_local(s.point.coords()))
        .filter(|z| in_window(z, half_width))
        .collect()
}

/// `phi(z') = max_y (y_n - alpha |z' - y'|)` over samples in the window, on a
/// lateral grid spanning the samples' projected extent.
pub fn cone_envelope(
    samples: &[FreeBoundarySample],
    base_normal: &[f64],
    alpha: f64,
    window: &EnvelopeWindow,
    resolution: EnvelopeResolution,
) -> Result<ConeEnvelope, BoundaryError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(BoundaryError::Invalid(format!("alpha = {alpha} must be positive")));
    }
    let n = window.center.dim();
    if n < 2 {
        return Err(BoundaryError::Invalid("envelopes need dimension at least 2".into()));
    }
    let frame = Frame::new(window.center.coords(), base_normal)?;
    let pts = window_points(&frame, samples, window.half_width);
    if pts.is_empty() {
        return Err(BoundaryError::EmptyWindow);
    }
    let m = n - 1;
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for z in &pts {
        for a in 0..m {
            lo[a] = lo[a].min(z[a]);
            hi[a] = hi[a].max(z[a]);
        }
    }
    let mut counts = Vec::with_capacity(m);
    let mut spacing = Vec::with_capacity(m);
    for a in 0..m {
        let ext = hi[a] - lo[a];
        let c = match resolution {
            EnvelopeResolution::Spacing(s) => ((ext / s).round() as usize + 1).max(1),
            EnvelopeResolution::Nodes(c) => c.max(1),
        };
        counts.push(c);
        spacing.push(if c > 1 { ext / (c - 1) as f64 } else { 1.0 });
    }
    let mut env = ConeEnvelope {
        frame,
        alpha,
        window: Some(window.clone()),
        lo,
        spacing,
        counts,
        values: Vec::new(),
    };
    let total: usize = env.counts.iter().product();
    env.values = (0..total)
        .map(|k| {
            let z = env.node(k);
            pts.iter()
                .map(|y| y[m] - alpha * distance(&z, &y[..m]))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Ok(env)
}

/// Two-sided Hausdorff distance, in ambient length units, between the
/// envelope graph and the window's boundary samples over the envelope's
/// lateral extent.
pub fn graph_match(
    envelope: &ConeEnvelope,
    samples: &[FreeBoundarySample],
) -> Result<f64, BoundaryError> {
    let window = envelope
        .window
        .as_ref()
        .ok_or_else(|| BoundaryError::Invalid("envelope has no window".into()))?;
    let m = envelope.lateral_dim();
    let hi: Vec<f64> = (0..m)
        .map(|a| envelope.lo[a] + envelope.spacing[a] * (envelope.counts[a] - 1) as f64)
        .collect();
    let pts: Vec<Vec<f64>> = window_points(&envelope.frame, samples, window.half_width)
        .into_iter()
        .filter(|z| (0..m).all(|a| z[a] >= envelope.lo[a] - 1e-12 && z[a] <= hi[a] + 1e-12))
        .collect();
    if pts.is_empty() || envelope.node_count() == 0 {
        return Err(BoundaryError::EmptyWindow);
    }
    let graph: Vec<Vec<f64>> = (0..envelope.node_count()).map(|k| envelope.graph_point(k)).collect();
    let directed = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.iter()
            .map(|a| to.iter().map(|b| distance(a, b)).fold(f64::INFINITY, f64::min))
            .fold(0.0f64, f64::max)
    };
    Ok(directed(&graph, &pts).max(directed(&pts, &graph)))
}

/// Samples whose window of half-width `w` holds other samples reaching at
/// least `0.8 w` in both directions along every lateral axis of the
/// sample's own frame; `count` of them, evenly spread over the list.
pub fn eligible_window_centers(
    samples: &[FreeBoundarySample],
    w: f64,
    count: usize,
) -> Vec<usize> {
    let mut eligible = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let Ok(frame) = Frame::new(s.point.coords(), &s.normal) else {
            continue;
        };
        let m = frame.dim() - 1;
        let mut lo = vec![0.0f64; m];
        let mut hi = vec![0.0f64; m];
        for z in window_points(&frame, samples, w) {
            for a in 0..m {
                lo[a] = lo[a].min(z[a]);
                hi[a] = hi[a].max(z[a]);
            }
        }
        if (0..m).all(|a| hi[a] >= 0.8 * w && lo[a] <= -0.8 * w) {
            eligible.push(i);
        }
    }
    if eligible.len() <= count {
        return eligible;
    }
    (0..count).map(|k| eligible[k * eligible.len() / count]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(p: [f64; 2]) -> FreeBoundarySample {
        FreeBoundarySample {
            cell: 0,
            point: Point::from(p),
            source: Point::from(p),
            target: Point::from(p),
            normal: vec![0.0, -1.0],
            threshold: 0.0,
        }
    }

    #[test]
    fn frame_maps_normal_to_minus_last_axis() {
        let f = Frame::new(&[1.0, 2.0, 3.0], &[0.0, 0.6, 0.8]).unwrap();
        let z = f.to_local(&[1.0, 2.6, 3.8]);
        assert!(z[0].abs() < 1e-12 && z[1].abs() < 1e-12 && (z[2] + 1.0).abs() < 1e-12);
        let back = f.to_ambient(&z);
        assert!(distance(&back, &[1.0, 2.6, 3.8]) < 1e-12);
    }

    #[test]
    fn single_sample_gives_one_cone() {
        let s = vec![sample([0.0, 0.0]), sample([1.0, 0.0]), sample([-1.0, 0.0])];
        let win = EnvelopeWindow { center: Point::from([0.0, 0.0]), half_width: 2.0 };
        // Normal -e_2 leaves the frame equal to the ambient axes.
        let env = cone_envelope(&s[..1], &[0.0, -1.0], 1.0, &win, EnvelopeResolution::Spacing(0.1))
            .unwrap();
        assert_eq!(env.values, vec![0.0]);
        let env = cone_envelope(&s, &[0.0, -1.0], 1.0, &win, EnvelopeResolution::Spacing(0.25)).unwrap();
        assert_eq!(env.node_count(), 9);
        assert!(env.lipschitz_constant() <= 1.0 + 1e-12);
    }

    #[test]
    fn higher_apex_wins() {
        let s = vec![sample([0.0, 0.0]), sample([0.0, 0.5])];
        let win = EnvelopeWindow { center: Point::from([0.0, 0.0]), half_width: 1.0 };
        let env = cone_envelope(&s, &[0.0, -1.0], 1.0, &win, EnvelopeResolution::Nodes(1)).unwrap();
        assert!((env.values[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_window_is_an_error() {
        let s = vec![sample([5.0, 5.0])];
        let win = EnvelopeWindow { center: Point::from([0.0, 0.0]), half_width: 1.0 };
        assert!(matches!(
            cone_envelope(&s, &[0.0, -1.0], 1.0, &win, EnvelopeResolution::Nodes(3)),
            Err(BoundaryError::EmptyWindow)
        ));
    }

    #[test]
    fn envelope_of_its_own_samples_matches_at_projections() {
        let s: Vec<_> = (0..11).map(|k| sample([-0.5 + 0.1 * k as f64, 0.0])).collect();
        let win = EnvelopeWindow { center: Point::from([0.0, 0.0]), half_width: 1.0 };
        let env = cone_envelope(&s, &[0.0, -1.0], 1.0, &win, EnvelopeResolution::Spacing(0.1)).unwrap();
        assert!(graph_match(&env, &s).unwrap() < 1e-12);
    }
}
