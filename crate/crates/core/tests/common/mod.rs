//! Reference implementations used by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use luda_core::panoptic_metrics::Quality;
use luda_core::sensor_geometry::PanopticLabel;
use ndarray::Array2;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

/// Exact optimum of the balanced transport LP with uniform marginals
/// `1/n`, `1/m`, by successive shortest paths on integer supplies
/// (`m` units per row, `n` per column).
pub fn lp_uniform_optimum(c: &Array2<f64>) -> f64 {
    let (n, m) = c.dim();
    // nodes: 0 = source, 1..=n rows, n+1..=n+m cols, n+m+1 = sink
    let nodes = n + m + 2;
    let (src, sink) = (0, n + m + 1);
    let mut to = vec![];
    let mut cap: Vec<i64> = vec![];
    let mut cost = vec![];
    let mut adj = vec![vec![]; nodes];
    let mut add = |u: usize, v: usize, k: i64, w: f64, adj: &mut Vec<Vec<usize>>| {
        adj[u].push(to.len());
        to.push(v);
        cap.push(k);
        cost.push(w);
        adj[v].push(to.len());
        to.push(u);
        cap.push(0);
        cost.push(-w);
    };
    for i in 0..n {
        add(src, 1 + i, m as i64, 0.0, &mut adj);
        for j in 0..m {
            add(1 + i, 1 + n + j, i64::MAX / 4, c[[i, j]], &mut adj);
        }
    }
    for j in 0..m {
        add(1 + n + j, sink, n as i64, 0.0, &mut adj);
    }
    let mut remaining = (n * m) as i64;
    let mut total = 0.0;
    while remaining > 0 {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev_edge = vec![usize::MAX; nodes];
        dist[src] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if !dist[u].is_finite() {
                    continue;
                }
                for &e in &adj[u] {
                    if cap[e] > 0 && dist[u] + cost[e] < dist[to[e]] - 1e-15 {
                        dist[to[e]] = dist[u] + cost[e];
                        prev_edge[to[e]] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        assert!(dist[sink].is_finite(), "flow network disconnected");
        let mut push = remaining;
        let mut v = sink;
        while v != src {
            let e = prev_edge[v];
            push = push.min(cap[e]);
            v = to[e ^ 1];
        }
        let mut v = sink;
        while v != src {
            let e = prev_edge[v];
            cap[e] -= push;
            cap[e ^ 1] += push;
            total += push as f64 * cost[e];
            v = to[e ^ 1];
        }
        remaining -= push;
    }
    total / (n * m) as f64
}

fn gkl(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        y
    } else {
        x * (x / y).ln() - x + y
    }
}

/// Unbalanced entropic objective of a 1×1 plan `π`.
pub fn objective_1x1(pi: f64, c: f64, a: f64, b: f64, eps: f64, rho: f64) -> f64 {
    c * pi + eps * gkl(pi, a * b) + rho * gkl(pi, a) + rho * gkl(pi, b)
}

/// Minimizer of [`objective_1x1`] by nested grid refinement on a log grid.
pub fn grid_search_1x1(c: f64, a: f64, b: f64, eps: f64, rho: f64) -> f64 {
    let f = |p: f64| objective_1x1(p, c, a, b, eps, rho);
    let (mut lo, mut hi) = ((1e-300f64).ln(), (10.0 * a.max(b)).ln());
    let mut best = lo;
    for _ in 0..30 {
        let steps = 200;
        let h = (hi - lo) / steps as f64;
        best = (0..=steps)
            .map(|k| lo + k as f64 * h)
            .min_by(|x, y| f(x.exp()).total_cmp(&f(y.exp())))
            .unwrap();
        lo = best - 2.0 * h;
        hi = best + 2.0 * h;
    }
    best.exp()
}

/// Naive two-pass per-channel mean and population variance of a C×N matrix.
pub fn two_pass_stats(x: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.ncols() as f64;
    let mut means = vec![];
    let mut vars = vec![];
    for row in x.rows() {
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        means.push(mean);
        vars.push(var);
    }
    (means, vars)
}

pub struct BruteForcePanoptic {
    pub per_class: BTreeMap<u16, (Quality, bool)>,
    pub all: Option<Quality>,
    pub things: Option<Quality>,
    pub stuff: Option<Quality>,
}

/// Enumerates every (gt segment, predicted segment) pair of each class;
/// matched IoUs are summed in ascending order.
pub fn brute_force_panoptic(pred: &[PanopticLabel], gt: &[PanopticLabel], ignore: u16) -> BruteForcePanoptic {
    let key = |l: &PanopticLabel| (l.semantic_id, if l.is_thing { l.instance_id } else { 0 });
    let mut gt_segs: BTreeMap<(u16, u16), BTreeSet<usize>> = BTreeMap::new();
    let mut pred_segs: BTreeMap<(u16, u16), BTreeSet<usize>> = BTreeMap::new();
    let mut is_thing: BTreeMap<u16, bool> = BTreeMap::new();
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if g.semantic_id == ignore {
            continue;
        }
        gt_segs.entry(key(g)).or_default().insert(i);
        *is_thing.entry(g.semantic_id).or_insert(false) |= g.is_thing;
        if p.semantic_id != ignore {
            pred_segs.entry(key(p)).or_default().insert(i);
            is_thing.entry(p.semantic_id).or_insert(p.is_thing);
        }
    }
    let mut per_class = BTreeMap::new();
    for (&class, &thing) in &is_thing {
        let gs: Vec<_> = gt_segs.iter().filter(|(k, _)| k.0 == class).collect();
        let ps: Vec<_> = pred_segs.iter().filter(|(k, _)| k.0 == class).collect();
        let mut tp = 0u64;
        let mut matched_ious = vec![];
        let mut gm = vec![false; gs.len()];
        let mut pm = vec![false; ps.len()];
        for (a, (_, g)) in gs.iter().enumerate() {
            for (b, (_, p)) in ps.iter().enumerate() {
                let inter = g.intersection(p).count();
                let union = g.len() + p.len() - inter;
                let iou = inter as f64 / union as f64;
                if iou > 0.5 {
                    tp += 1;
                    matched_ious.push(iou);
                    gm[a] = true;
                    pm[b] = true;
                }
            }
        }
        matched_ious.sort_by(f64::total_cmp);
        let iou_sum: f64 = matched_ious.iter().sum();
        let fn_ = gm.iter().filter(|m| !**m).count() as f64;
        let fp = pm.iter().filter(|m| !**m).count() as f64;
        let q = if tp == 0 {
            Quality { pq: 0.0, sq: 0.0, rq: 0.0 }
        } else {
            let t = tp as f64;
            let sq = iou_sum / t;
            let rq = t / (t + 0.5 * fp + 0.5 * fn_);
            Quality { pq: sq * rq, sq, rq }
        };
        per_class.insert(class, (q, thing));
    }
    let mean = |sel: &dyn Fn(bool) -> bool| {
        let qs: Vec<&Quality> = per_class.values().filter(|(_, t)| sel(*t)).map(|(q, _)| q).collect();
        if qs.is_empty() {
            return None;
        }
        let n = qs.len() as f64;
        let (mut pq, mut sq, mut rq) = (0.0, 0.0, 0.0);
        for q in &qs {
            pq += q.pq;
            sq += q.sq;
            rq += q.rq;
        }
        Some(Quality { pq: pq / n, sq: sq / n, rq: rq / n })
    };
    BruteForcePanoptic {
        all: mean(&|_| true),
        things: mean(&|t| t),
        stuff: mean(&|t| !t),
        per_class,
    }
}
