//! Successive shortest paths on the dummy-augmented bipartite network.
//!
//! Left nodes are the sources plus a dummy source carrying `|g| - m`; right
//! nodes are the targets plus a dummy target absorbing `|f| - m`. Dummy arcs
//! cost nothing and the dummy-to-dummy arc does not exist, so exactly `m`
//! units travel between real nodes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::SolverError;

pub(crate) struct FlowSolution {
    /// Real-to-real flow, row-major `nf x ng`.
    pub flow: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
struct Item {
    dist: f64,
    node: usize,
}

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance, then on node index for determinism.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) fn solve_augmented(
    costs: &[f64],
    f: &[f64],
    g: &[f64],
    m: f64,
) -> Result<FlowSolution, SolverError> {
    let nf = f.len();
    let ng = g.len();
    let (lw, rw) = (nf + 1, ng + 1);
    let total_f: f64 = f.iter().sum();
    let total_g: f64 = g.iter().sum();
    let eps = 1e-13 * (total_f + total_g);

    // Shift real arcs so every arc cost is nonnegative; the optimal plan is
    // unchanged because exactly `m` units use real arcs.
    let min_cost = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if min_cost < 0.0 { -min_cost } else { 0.0 };
    let arc_cost = |l: usize, r: usize| -> Option<f64> {
        match (l < nf, r < ng) {
            (true, true) => Some(costs[l * ng + r] + shift),
            (false, false) => None,
            _ => Some(0.0),
        }
    };

    let mut supply: Vec<f64> = f.to_vec();
    supply.push((total_g - m).max(0.0));
    let mut demand: Vec<f64> = g.to_vec();
    demand.push((total_f - m).max(0.0));
    for s in supply.iter_mut().chain(demand.iter_mut()) {
        if *s <= eps {
            *s = 0.0;
        }
    }

    let mut flow = vec![0.0; lw * rw];
    let mut pl = vec![0.0; lw];
    let mut pr = vec![0.0; rw];

    let mut dist_l = vec![f64::INFINITY; lw];
    let mut dist_r = vec![f64::INFINITY; rw];
    let mut done_l = vec![false; lw];
    let mut done_r = vec![false; rw];
    let mut pred_r = vec![usize::MAX; rw];
    let mut pred_l = vec![usize::MAX; lw];
    let mut heap = BinaryHeap::new();

    let max_iter = 64 * (lw + rw) * (lw + rw) + 1000;
    let mut iter = 0;
    while supply.iter().any(|&s| s > 0.0) {
        iter += 1;
        if iter > max_iter {
            return Err(SolverError::Internal("augmenting path limit exceeded".into()));
        }
        dist_l.fill(f64::INFINITY);
        dist_r.fill(f64::INFINITY);
        done_l.fill(false);
        done_r.fill(false);
        pred_r.fill(usize::MAX);
        pred_l.fill(usize::MAX);
        heap.clear();
        for l in 0..lw {
            if supply[l] > 0.0 {
                dist_l[l] = 0.0;
                heap.push(Item { dist: 0.0, node: l });
            }
        }

        // Nodes 0..lw are left, lw..lw+rw are right.
        let mut sink = None;
        while let Some(Item { dist, node }) = heap.pop() {
            if node < lw {
                let l = node;
                if done_l[l] || dist > dist_l[l] {
                    continue;
                }
                done_l[l] = true;
                for r in 0..rw {
                    if done_r[r] {
                        continue;
                    }
                    if let Some(c) = arc_cost(l, r) {
                        let nd = dist + (c + pl[l] - pr[r]).max(0.0);
                        if nd < dist_r[r] {
                            dist_r[r] = nd;
                            pred_r[r] = l;
                            heap.push(Item { dist: nd, node: lw + r });
                        }
                    }
                }
            } else {
                let r = node - lw;
                if done_r[r] || dist > dist_r[r] {
                    continue;
                }
                done_r[r] = true;
                if demand[r] > 0.0 {
                    sink = Some((r, dist));
                    break;
                }
                for l in 0..lw {
                    if done_l[l] || flow[l * rw + r] <= 0.0 {
                        continue;
                    }
                    let c = arc_cost(l, r).expect("flow only on existing arcs");
                    let nd = dist + (pr[r] - pl[l] - c).max(0.0);
                    if nd < dist_l[l] {
                        dist_l[l] = nd;
                        pred_l[l] = r;
                        heap.push(Item { dist: nd, node: l });
                    }
                }
            }
        }

        let (t, dt) = sink.ok_or_else(|| {
            SolverError::Internal("no augmenting path; augmented network infeasible".into())
        })?;
        for l in 0..lw {
            pl[l] += dist_l[l].min(dt);
        }
        for r in 0..rw {
            pr[r] += dist_r[r].min(dt);
        }

        // Bottleneck along the path.
        let mut bottleneck = demand[t];
        let mut r = t;
        let root = loop {
            let l = pred_r[r];
            match pred_l[l] {
                usize::MAX => break l,
                r2 => {
                    bottleneck = bottleneck.min(flow[l * rw + r2]);
                    r = r2;
                }
            }
        };
        bottleneck = bottleneck.min(supply[root]);

        let mut r = t;
        loop {
            let l = pred_r[r];
            flow[l * rw + r] += bottleneck;
            match pred_l[l] {
                usize::MAX => break,
                r2 => {
                    let fl = &mut flow[l * rw + r2];
                    *fl -= bottleneck;
                    if *fl <= eps {
                        *fl = 0.0;
                    }
                    r = r2;
                }
            }
        }
        supply[root] -= bottleneck;
        if supply[root] <= eps {
            supply[root] = 0.0;
        }
        demand[t] -= bottleneck;
        if demand[t] <= eps {
            demand[t] = 0.0;
        }
    }

    let mut real = vec![0.0; nf * ng];
    for i in 0..nf {
        for j in 0..ng {
            real[i * ng + j] = flow[i * rw + j];
        }
    }
    let u = (0..nf).map(|i| -pl[i]).collect();
    let v = (0..ng).map(|j| pr[j] - shift).collect();
    Ok(FlowSolution { flow: real, u, v })
}
