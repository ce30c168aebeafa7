#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use harp_core::planner::{NodeId, Planner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// Pedestrians walking straight, curving left and curving right, written as
/// an obsmat-style table (frame, id, x, z, y) at 2.5 frames per second.
pub fn synthetic_obsmat(seed: u64, per_class: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut id = 0;
    for curvature in [0.0, 0.08, -0.08] {
        for _ in 0..per_class {
            id += 1;
            let (mut x, mut y) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
            let heading: f64 = rng.random_range(-3.1..3.1);
            let speed = rng.random_range(1.0..1.4);
            let bend = curvature * rng.random_range(0.7..1.3);
            let frames = (rng.random_range(10.5..15.0) * 2.5) as usize;
            let first = id * 3;
            for f in 0..=frames {
                let t = f as f64 / 2.5;
                rows.push((first + f, id, x, y));
                let a: f64 = heading + bend * t;
                x += speed * a.cos() / 2.5;
                y += speed * a.sin() / 2.5;
            }
        }
    }
    rows.sort_by_key(|r| (r.0, r.1));
    rows.iter()
        .map(|(f, id, x, y)| format!("{f} {id} {x:.6} 0.0 {y:.6}\n"))
        .collect()
}

/// Cost-to-goal over the planner's current edge set.
pub fn dijkstra(p: &Planner) -> BTreeMap<NodeId, f64> {
    let mut dist: BTreeMap<NodeId, f64> = p.node_ids().map(|v| (v, f64::INFINITY)).collect();
    dist.insert(p.goal(), 0.0);
    let edges = p.edge_list();
    let mut done = BTreeMap::new();
    loop {
        let next = dist
            .iter()
            .filter(|(v, d)| !done.contains_key(*v) && d.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(v, _)| *v);
        let Some(u) = next else { break };
        done.insert(u, ());
        let du = dist[&u];
        for &(from, to, c) in &edges {
            if to == u && du + c < dist[&from] {
                dist.insert(from, du + c);
            }
        }
    }
    dist
}

/// Largest gap between planner lmc values and the oracle, plus the largest
/// `|g - lmc|`.
pub fn oracle_gap(p: &Planner) -> (f64, f64) {
    let d = dijkstra(p);
    let mut gap: f64 = 0.0;
    let mut inconsistency: f64 = 0.0;
    for v in p.node_ids() {
        let (l, o, g) = (p.lmc(v), d[&v], p.g(v));
        if l.is_infinite() != o.is_infinite() {
            return (f64::INFINITY, f64::INFINITY);
        }
        if l.is_finite() {
            gap = gap.max((l - o).abs());
        }
        if g.is_infinite() != l.is_infinite() {
            inconsistency = f64::INFINITY;
        } else if l.is_finite() {
            inconsistency = inconsistency.max((g - l).abs());
        }
    }
    (gap, inconsistency)
}

/// Whether following parents from every finite node reaches the goal.
pub fn is_tree(p: &Planner) -> bool {
    p.node_ids().filter(|&v| p.lmc(v).is_finite()).all(|v| {
        let mut u = v;
        for _ in 0..=p.node_count() {
            if u == p.goal() {
                return true;
            }
            match p.parent(u) {
                Some(w) => u = w,
                None => return false,
            }
        }
        false
    })
}
