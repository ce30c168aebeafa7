//! RRTX-style replanning graph over time-augmented states.
//!
//! The graph is rooted at the goal. Every node stores its cost-to-goal `g`,
//! a one-step look-ahead estimate `lmc` and a parent edge; the parents form
//! the optimal-path subtree. Directed edges `v -> u` point toward the goal and
//! are feasible only when `u` is reachable from `v` without exceeding the
//! speed cap, so every edge moves forward in time and the graph is acyclic.
//! The goal accepts any arrival time.
//!
//! Inconsistencies caused by new samples, cost decreases and cost increases
//! (handled by orphaning the affected subtree) are repaired by a priority
//! queue keyed on `(min(g, lmc), g)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::danger::{DangerModel, EdgeCost, HumanContext};
use crate::geometry::{Bounds, Configuration, ConvexRegion, HumanPose, PathSegment, State};

pub type NodeId = usize;
type EdgeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
    #[error("goal {0} is outside the environment or in collision")]
    BadGoal(Configuration),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub seed: u64,
    /// Probability of sampling near the robot instead of uniformly.
    pub goal_bias: f64,
    /// Upper clamp of the neighbour radius, meters.
    pub r_max: f64,
    /// Shrinking-ball constant; derived from the environment area when absent.
    pub gamma_ball: Option<f64>,
    pub epsilon_consistency: f64,
    /// Speed cap defining edge feasibility and robot advancement, m/s.
    pub max_speed: f64,
    pub samples_per_step: usize,
    /// Samples drawn before the robot starts moving.
    pub initial_samples: usize,
    /// Sets the sampled time window: `2 * diagonal / min_cruise_speed`.
    pub min_cruise_speed: f64,
    /// No sampling beyond this many live nodes.
    pub max_nodes: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            goal_bias: 0.05,
            r_max: 2.0,
            gamma_ball: None,
            epsilon_consistency: 1e-6,
            max_speed: 2.0,
            samples_per_step: 50,
            initial_samples: 1500,
            min_cruise_speed: 1.0,
            max_nodes: 4000,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let checks = [
            (0.0..=1.0).contains(&self.goal_bias),
            self.r_max > 0.0,
            self.gamma_ball.is_none_or(|g| g > 0.0),
            self.epsilon_consistency >= 0.0,
            self.max_speed > 0.0,
            self.min_cruise_speed > 0.0,
            self.max_nodes >= 2,
        ];
        if checks.iter().all(|&c| c) {
            Ok(())
        } else {
            Err(PlannerError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// `2 * sqrt(3 * area / pi)`.
pub fn gamma_for_area(area: f64) -> f64 {
    2.0 * (3.0 * area / PI).sqrt()
}

/// `min(gamma * sqrt(ln n / n), r_max)`; `r_max` for fewer than two samples.
pub fn shrinking_ball_radius(n: usize, gamma: f64, r_max: f64) -> f64 {
    if n < 2 {
        return r_max;
    }
    let n = n as f64;
    (gamma * (n.ln() / n).sqrt()).min(r_max)
}

/// Draws a state: uniform over `bounds x [t_lo, t_hi]`, or with probability
/// `bias` a point within `bias_radius` of the robot, timed to be reachable
/// from it at `max_speed`.
#[allow(clippy::too_many_arguments)]
pub fn sample_state<R: Rng>(
    rng: &mut R,
    bounds: &Bounds,
    t_lo: f64,
    t_hi: f64,
    bias: f64,
    robot: Option<&State>,
    bias_radius: f64,
    max_speed: f64,
) -> State {
    if let Some(robot) = robot {
        if bias > 0.0 && rng.random::<f64>() < bias {
            let rho = bias_radius * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..2.0 * PI);
            let q = bounds.clamp(robot.config + Configuration::new(rho * phi.cos(), rho * phi.sin()));
            let t = robot.t + q.distance(robot.config) / max_speed + rng.random::<f64>();
            return State::new(q, t);
        }
    }
    let x = rng.random_range(bounds.min.x..=bounds.max.x);
    let y = rng.random_range(bounds.min.y..=bounds.max.y);
    let t = if t_hi > t_lo { rng.random_range(t_lo..=t_hi) } else { t_lo };
    State::at(x, y, t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64, f64);

#[derive(Debug, Clone, Copy)]
struct Entry {
    key: Key,
    node: NodeId,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl Ord for Entry {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .0
            .total_cmp(&self.key.0)
            .then(other.key.1.total_cmp(&self.key.1))
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct Node {
    state: State,
    g: f64,
    lmc: f64,
    parent: Option<EdgeId>,
    out: Vec<EdgeId>,
    inc: Vec<EdgeId>,
    queued: Option<Key>,
    orphan: bool,
    alive: bool,
    /// Radius at the last cull of this node's running edges.
    cull_r: f64,
}

#[derive(Debug, Clone)]
struct Edge {
    from: NodeId,
    to: NodeId,
    creator: NodeId,
    cost: EdgeCost,
    blocked: bool,
    alive: bool,
    stamp: u64,
}

impl Edge {
    fn effective(&self) -> f64 {
        if self.blocked {
            f64::INFINITY
        } else {
            self.cost.total
        }
    }
}

/// Uniform bucket grid over the environment.
#[derive(Debug, Clone)]
struct Grid {
    origin: Configuration,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<NodeId>>,
}

impl Grid {
    fn new(bounds: &Bounds, cell: f64) -> Self {
        let nx = ((bounds.width() / cell).ceil() as usize).max(1);
        let ny = ((bounds.height() / cell).ceil() as usize).max(1);
        Self {
            origin: bounds.min,
            cell,
            nx,
            ny,
            cells: vec![Vec::new(); nx * ny],
        }
    }

    fn index(&self, q: Configuration) -> (usize, usize) {
        let ix = ((q.x - self.origin.x) / self.cell).floor().clamp(0.0, (self.nx - 1) as f64) as usize;
        let iy = ((q.y - self.origin.y) / self.cell).floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        (ix, iy)
    }

    fn insert(&mut self, id: NodeId, q: Configuration) {
        let (ix, iy) = self.index(q);
        self.cells[iy * self.nx + ix].push(id);
    }

    fn remove(&mut self, id: NodeId, q: Configuration) {
        let (ix, iy) = self.index(q);
        let cell = &mut self.cells[iy * self.nx + ix];
        if let Some(pos) = cell.iter().position(|&n| n == id) {
            cell.swap_remove(pos);
        }
    }

    /// Ids in every cell overlapping the box.
    fn query_box(&self, lo: Configuration, hi: Configuration, out: &mut Vec<NodeId>) {
        let (x0, y0) = self.index(lo);
        let (x1, y1) = self.index(hi);
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                out.extend_from_slice(&self.cells[iy * self.nx + ix]);
            }
        }
    }
}

/// Outcome of advancing the robot for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: State,
    pub stop: bool,
    pub arrived: bool,
    /// Planned polyline from the robot to the goal; empty when blocked.
    pub path: Vec<Configuration>,
    /// Cost-to-goal of the plan; infinite when blocked.
    pub lmc: f64,
}

/// Counters since the last call to [`Planner::take_stats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlannerStats {
    pub samples: usize,
    pub inserted: usize,
    pub queue_pops: usize,
    pub orphaned: usize,
    pub cost_updates: usize,
    pub pruned: usize,
}

#[derive(Debug, Clone)]
pub struct Planner {
    config: PlannerConfig,
    bounds: Bounds,
    gamma: f64,
    robot_radius: f64,
    danger: DangerModel,
    t_now: f64,
    t_window: f64,
    goal: NodeId,
    nodes: Vec<Node>,
    free_nodes: Vec<NodeId>,
    edges: Vec<Edge>,
    free_edges: Vec<EdgeId>,
    live: usize,
    grid: Grid,
    heap: BinaryHeap<Entry>,
    obstacles: Vec<ConvexRegion>,
    humans: Vec<HumanContext>,
    rng: ChaCha8Rng,
    stamp: u64,
    stats: PlannerStats,
}

impl Planner {
    pub fn new(
        config: PlannerConfig,
        bounds: Bounds,
        goal: Configuration,
        robot_radius: f64,
        danger: DangerModel,
    ) -> Result<Self, PlannerError> {
        config.validate()?;
        if !bounds.is_valid() {
            return Err(PlannerError::InvalidConfig(format!("invalid bounds {bounds:?}")));
        }
        if !bounds.contains(goal) {
            return Err(PlannerError::BadGoal(goal));
        }
        let gamma = config.gamma_ball.unwrap_or_else(|| gamma_for_area(bounds.area()));
        let mut planner = Self {
            config,
            bounds,
            gamma,
            robot_radius: robot_radius.max(0.0),
            danger,
            t_now: 0.0,
            t_window: 2.0 * bounds.diagonal() / config.min_cruise_speed,
            goal: 0,
            nodes: Vec::new(),
            free_nodes: Vec::new(),
            edges: Vec::new(),
            free_edges: Vec::new(),
            live: 0,
            grid: Grid::new(&bounds, (config.r_max / 4.0).max(0.1)),
            heap: BinaryHeap::new(),
            obstacles: Vec::new(),
            humans: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            stamp: 0,
            stats: PlannerStats::default(),
        };
        planner.goal = planner.alloc_node(State::new(goal, f64::INFINITY));
        let root = &mut planner.nodes[planner.goal];
        root.g = 0.0;
        root.lmc = 0.0;
        Ok(planner)
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn time(&self) -> f64 {
        self.t_now
    }

    pub fn time_window(&self) -> f64 {
        self.t_window
    }

    pub fn goal(&self) -> NodeId {
        self.goal
    }

    pub fn goal_config(&self) -> Configuration {
        self.nodes[self.goal].state.config
    }

    pub fn danger(&self) -> &DangerModel {
        &self.danger
    }

    pub fn humans(&self) -> &[HumanContext] {
        &self.humans
    }

    pub fn obstacles(&self) -> &[ConvexRegion] {
        &self.obstacles
    }

    pub fn node_count(&self) -> usize {
        self.live
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.alive).count()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.alive).map(|(i, _)| i)
    }

    pub fn state(&self, id: NodeId) -> State {
        self.nodes[id].state
    }

    pub fn g(&self, id: NodeId) -> f64 {
        self.nodes[id].g
    }

    pub fn lmc(&self, id: NodeId) -> f64 {
        self.nodes[id].lmc
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent.map(|e| self.edges[e].to)
    }

    /// Live edges as `(from, to, effective cost)`.
    pub fn edge_list(&self) -> Vec<(NodeId, NodeId, f64)> {
        self.edges
            .iter()
            .filter(|e| e.alive)
            .map(|e| (e.from, e.to, e.effective()))
            .collect()
    }

    pub fn queue_is_empty(&self) -> bool {
        !self.heap.iter().any(|e| self.is_current(e))
    }

    pub fn take_stats(&mut self) -> PlannerStats {
        std::mem::take(&mut self.stats)
    }

    /// Current neighbour radius.
    pub fn radius(&self) -> f64 {
        shrinking_ball_radius(self.live, self.gamma, self.config.r_max)
    }

    fn alloc_node(&mut self, state: State) -> NodeId {
        let node = Node {
            state,
            g: f64::INFINITY,
            lmc: f64::INFINITY,
            parent: None,
            out: Vec::new(),
            inc: Vec::new(),
            queued: None,
            orphan: false,
            alive: true,
            cull_r: f64::INFINITY,
        };
        let id = match self.free_nodes.pop() {
            Some(id) => {
                self.nodes[id] = node;
                id
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        };
        self.grid.insert(id, state.config);
        self.live += 1;
        id
    }

    fn alloc_edge(&mut self, from: NodeId, to: NodeId, creator: NodeId, cost: EdgeCost, blocked: bool) -> EdgeId {
        let edge = Edge {
            from,
            to,
            creator,
            cost,
            blocked,
            alive: true,
            stamp: 0,
        };
        let id = match self.free_edges.pop() {
            Some(id) => {
                self.edges[id] = edge;
                id
            }
            None => {
                self.edges.push(edge);
                self.edges.len() - 1
            }
        };
        self.nodes[from].out.push(id);
        self.nodes[to].inc.push(id);
        id
    }

    fn remove_edge(&mut self, e: EdgeId) {
        let Edge { from, to, .. } = self.edges[e];
        let out = &mut self.nodes[from].out;
        if let Some(p) = out.iter().position(|&x| x == e) {
            out.swap_remove(p);
        }
        let inc = &mut self.nodes[to].inc;
        if let Some(p) = inc.iter().position(|&x| x == e) {
            inc.swap_remove(p);
        }
        if self.nodes[from].parent == Some(e) {
            self.nodes[from].parent = None;
        }
        self.edges[e].alive = false;
        self.free_edges.push(e);
    }

    fn remove_node(&mut self, v: NodeId) {
        let edges: Vec<EdgeId> = self.nodes[v].out.iter().chain(&self.nodes[v].inc).copied().collect();
        for e in edges {
            if self.edges[e].alive {
                self.remove_edge(e);
            }
        }
        let q = self.nodes[v].state.config;
        self.grid.remove(v, q);
        let node = &mut self.nodes[v];
        node.alive = false;
        node.queued = None;
        node.out = Vec::new();
        node.inc = Vec::new();
        self.free_nodes.push(v);
        self.live -= 1;
    }

    /// Segment travelled along `from -> to`; arrival at the goal is at full speed.
    fn segment(&self, from: &State, to: NodeId) -> PathSegment {
        let end = if to == self.goal {
            let q = self.nodes[to].state.config;
            State::new(q, from.t + from.config.distance(q) / self.config.max_speed)
        } else {
            self.nodes[to].state
        };
        PathSegment { start: *from, end }
    }

    /// Whether `a -> b` respects the speed cap and moves forward in time.
    fn time_feasible(&self, a: &State, b: NodeId) -> bool {
        if b == self.goal {
            return true;
        }
        let bs = &self.nodes[b].state;
        let d = a.config.distance(bs.config);
        bs.t > a.t && bs.t - a.t >= d / self.config.max_speed - 1e-12
    }

    fn segment_blocked(&self, seg: &PathSegment) -> bool {
        let (a, b) = (seg.start.config, seg.end.config);
        let r = self.robot_radius;
        self.obstacles.iter().any(|s| {
            let (lo, hi) = s.bbox();
            if a.x.max(b.x) + r < lo.x || a.x.min(b.x) - r > hi.x || a.y.max(b.y) + r < lo.y || a.y.min(b.y) - r > hi.y {
                return false;
            }
            s.segment_distance(a, b) < r
        })
    }

    fn point_blocked(&self, q: Configuration) -> bool {
        self.obstacles
            .iter()
            .any(|s| s.bbox_distance(q) < self.robot_radius && (s.contains(q) || s.distance(q) < self.robot_radius))
    }

    fn evaluate(&self, seg: &PathSegment) -> (EdgeCost, bool) {
        let blocked = self.segment_blocked(seg);
        let cost = if blocked {
            EdgeCost::length_only(seg.length())
        } else {
            self.danger.edge_cost(seg, &self.humans)
        };
        (cost, blocked)
    }

    fn near(&self, q: Configuration, r: f64) -> Vec<NodeId> {
        let mut cand = Vec::new();
        let d = Configuration::new(r, r);
        self.grid.query_box(q - d, q + d, &mut cand);
        cand.retain(|&id| self.nodes[id].state.config.distance(q) <= r);
        cand.sort_unstable();
        cand
    }

    fn nearest(&self, q: Configuration) -> Option<NodeId> {
        let mut best: Option<(f64, NodeId)> = None;
        let mut reach = self.grid.cell;
        let span = self.bounds.diagonal() + self.grid.cell;
        loop {
            let mut cand = Vec::new();
            let d = Configuration::new(reach, reach);
            self.grid.query_box(q - d, q + d, &mut cand);
            for id in cand {
                let dist = self.nodes[id].state.config.distance(q);
                if best.is_none_or(|(b, bid)| dist < b || (dist == b && id < bid)) {
                    best = Some((dist, id));
                }
            }
            // every point within `reach` has been scanned
            if best.is_some_and(|(b, _)| b <= reach) || reach > span {
                return best.map(|(_, id)| id);
            }
            reach *= 2.0;
        }
    }

    fn key(&self, v: NodeId) -> Key {
        let n = &self.nodes[v];
        Key(n.g.min(n.lmc), n.g)
    }

    fn verify_queue(&mut self, v: NodeId) {
        let key = self.key(v);
        if self.nodes[v].queued == Some(key) {
            return;
        }
        self.nodes[v].queued = Some(key);
        self.heap.push(Entry { key, node: v });
    }

    fn is_current(&self, e: &Entry) -> bool {
        let n = &self.nodes[e.node];
        n.alive && n.queued == Some(e.key)
    }

    fn peek(&mut self) -> Option<Key> {
        while let Some(top) = self.heap.peek() {
            if self.is_current(top) {
                return Some(top.key);
            }
            self.heap.pop();
        }
        None
    }

    fn pop(&mut self) -> Option<NodeId> {
        while let Some(top) = self.heap.pop() {
            if self.is_current(&top) {
                self.nodes[top.node].queued = None;
                return Some(top.node);
            }
        }
        None
    }

    fn compact_queue(&mut self) {
        if self.heap.len() > 4 * self.live + 4096 {
            let entries: Vec<Entry> = self.heap.drain().collect();
            self.heap = entries.into_iter().filter(|e| self.is_current(e)).collect();
        }
    }

    fn inconsistent(&self, v: NodeId) -> bool {
        let n = &self.nodes[v];
        n.g > n.lmc + self.config.epsilon_consistency
    }

    /// Drops edges incident to `v` that another node created, that are longer
    /// than `r` and that are not tree edges.
    fn cull_neighbors(&mut self, v: NodeId, r: f64) {
        self.nodes[v].cull_r = r;
        let doomed: Vec<EdgeId> = self.nodes[v]
            .out
            .iter()
            .chain(&self.nodes[v].inc)
            .copied()
            .filter(|&e| {
                let edge = &self.edges[e];
                edge.creator != v
                    && edge.cost.length > r
                    && self.nodes[edge.from].parent != Some(e)
            })
            .collect();
        for e in doomed {
            if self.edges[e].alive {
                self.remove_edge(e);
            }
        }
    }

    fn set_parent(&mut self, v: NodeId, e: EdgeId) {
        self.nodes[v].parent = Some(e);
    }

    /// Recomputes `lmc(v)` as the best out-edge.
    fn update_lmc(&mut self, v: NodeId) {
        if v == self.goal {
            return;
        }
        let mut best = f64::INFINITY;
        let mut best_e = None;
        for &e in &self.nodes[v].out {
            let edge = &self.edges[e];
            let u = &self.nodes[edge.to];
            if u.orphan || u.parent.is_some_and(|pe| self.edges[pe].to == v) {
                continue;
            }
            let c = edge.effective() + u.lmc;
            if c < best {
                best = c;
                best_e = Some(e);
            }
        }
        self.nodes[v].lmc = best;
        self.nodes[v].parent = best_e;
    }

    /// Relaxes every in-neighbour of `v` through `v`; returns how many improved.
    pub fn rewire_neighbors(&mut self, v: NodeId) -> usize {
        if !self.inconsistent(v) {
            return 0;
        }
        let lmc_v = self.nodes[v].lmc;
        let mut improved = 0;
        let inc = self.nodes[v].inc.clone();
        for e in inc {
            let w = self.edges[e].from;
            let c = self.edges[e].effective() + lmc_v;
            if self.nodes[w].lmc > c {
                self.nodes[w].lmc = c;
                self.set_parent(w, e);
                improved += 1;
                if self.inconsistent(w) {
                    self.verify_queue(w);
                }
            }
        }
        improved
    }

    /// Inserts a node at `state` and connects it to its neighbourhood.
    /// Returns `None` when the state collides or has no finite connection.
    pub fn extend(&mut self, state: State) -> Option<NodeId> {
        if !self.bounds.contains(state.config) || self.point_blocked(state.config) {
            return None;
        }
        let r = shrinking_ball_radius(self.live + 1, self.gamma, self.config.r_max);
        let near = self.near(state.config, r);
        // (neighbour, outgoing?) pairs that respect time
        let links: Vec<(NodeId, bool)> = near
            .iter()
            .flat_map(|&u| {
                let out = self.time_feasible(&state, u);
                let inc = u != self.goal && {
                    let us = self.nodes[u].state;
                    let d = us.config.distance(state.config);
                    state.t > us.t && state.t - us.t >= d / self.config.max_speed - 1e-12
                };
                [(u, true), (u, false)].into_iter().filter(move |&(_, o)| if o { out } else { inc })
            })
            .collect();
        let evaluated: Vec<(NodeId, bool, EdgeCost, bool)> = links
            .iter()
            .map(|&(u, out)| {
                let seg = if out {
                    self.segment(&state, u)
                } else {
                    PathSegment {
                        start: self.nodes[u].state,
                        end: state,
                    }
                };
                let (cost, blocked) = self.evaluate(&seg);
                (u, out, cost, blocked)
            })
            .collect();
        let mut best = f64::INFINITY;
        let mut best_i = None;
        for (i, (u, out, cost, blocked)) in evaluated.iter().enumerate() {
            let n = &self.nodes[*u];
            if !*out || *blocked || n.orphan {
                continue;
            }
            let c = cost.total + n.lmc;
            if c < best {
                best = c;
                best_i = Some(i);
            }
        }
        best_i?;
        let v = self.alloc_node(state);
        for (i, (u, out, cost, blocked)) in evaluated.into_iter().enumerate() {
            let e = if out {
                self.alloc_edge(v, u, v, cost, blocked)
            } else {
                self.alloc_edge(u, v, v, cost, blocked)
            };
            if Some(i) == best_i {
                self.set_parent(v, e);
            }
        }
        self.nodes[v].lmc = best;
        self.verify_queue(v);
        self.stats.inserted += 1;
        // the ball shrank: trim neighbours whose running edges are now too long
        for u in near {
            if r < 0.95 * self.nodes[u].cull_r {
                self.cull_neighbors(u, r);
            }
        }
        Some(v)
    }

    /// Draws one sample (saturated toward its nearest node) and extends.
    pub fn add_sample(&mut self, robot: Option<&State>) -> Option<NodeId> {
        self.stats.samples += 1;
        let mut s = sample_state(
            &mut self.rng,
            &self.bounds,
            self.t_now,
            self.t_now + self.t_window,
            self.config.goal_bias,
            robot,
            self.config.r_max,
            self.config.max_speed,
        );
        let r = shrinking_ball_radius(self.live + 1, self.gamma, self.config.r_max);
        if let Some(nearest) = self.nearest(s.config) {
            let q = self.nodes[nearest].state.config;
            let d = q.distance(s.config);
            if d > r {
                s.config = q.lerp(s.config, r / d);
            }
        }
        self.extend(s)
    }

    /// Draws `n` samples unless the node cap is reached.
    pub fn grow(&mut self, n: usize, robot: Option<&State>) -> usize {
        let mut added = 0;
        for _ in 0..n {
            if self.live >= self.config.max_nodes {
                break;
            }
            if self.add_sample(robot).is_some() {
                added += 1;
            }
        }
        added
    }

    /// Collision-free, time-feasible connections from the robot, with costs.
    fn robot_links(&self, robot: &State) -> Vec<(NodeId, f64)> {
        let near = self.near(robot.config, self.config.r_max);
        near.into_par_iter()
            .filter(|&u| self.time_feasible(robot, u) && self.nodes[u].lmc.is_finite())
            .filter_map(|u| {
                let seg = self.segment(robot, u);
                let (cost, blocked) = self.evaluate(&seg);
                (!blocked).then_some((u, cost.total))
            })
            .collect()
    }

    fn best_link(&self, links: &[(NodeId, f64)]) -> Option<(NodeId, f64)> {
        links
            .iter()
            .map(|&(u, c)| (u, c + self.nodes[u].lmc))
            .filter(|(_, c)| c.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }

    /// Processes the queue in key order until it is empty or, when a robot is
    /// given, until no queued node can improve the robot's connection.
    pub fn reduce_inconsistency(&mut self, robot: Option<&State>) {
        let links = robot.map(|r| self.robot_links(r));
        loop {
            let Some(top) = self.peek() else { break };
            if let Some(links) = &links {
                let value = self.best_link(links).map_or(f64::INFINITY, |(_, c)| c);
                let pending = links.iter().any(|&(u, _)| self.nodes[u].queued.is_some());
                if top.0 >= value && !pending {
                    break;
                }
            }
            let v = self.pop().expect("peeked");
            self.stats.queue_pops += 1;
            if self.inconsistent(v) {
                self.update_lmc(v);
                self.rewire_neighbors(v);
            }
            let n = &mut self.nodes[v];
            n.g = n.lmc;
        }
        self.compact_queue();
    }

    fn orphan(&mut self, v: NodeId) {
        if !self.nodes[v].orphan {
            self.nodes[v].orphan = true;
            self.nodes[v].queued = None;
        }
    }

    /// Detaches every orphan and its subtree and queues the nodes they can
    /// reattach through.
    fn propagate_descendants(&mut self, mut orphans: Vec<NodeId>) {
        let mut i = 0;
        while i < orphans.len() {
            let v = orphans[i];
            for k in 0..self.nodes[v].inc.len() {
                let e = self.nodes[v].inc[k];
                let w = self.edges[e].from;
                if self.nodes[w].parent == Some(e) && !self.nodes[w].orphan {
                    self.orphan(w);
                    orphans.push(w);
                }
            }
            i += 1;
        }
        self.stats.orphaned += orphans.len();
        for &v in &orphans {
            for k in 0..self.nodes[v].out.len() {
                let u = self.edges[self.nodes[v].out[k]].to;
                if !self.nodes[u].orphan {
                    self.nodes[u].g = f64::INFINITY;
                    self.verify_queue(u);
                }
            }
        }
        for &v in &orphans {
            let n = &mut self.nodes[v];
            n.parent = None;
            n.g = f64::INFINITY;
            n.lmc = f64::INFINITY;
            n.orphan = false;
        }
    }

    /// Advances the clock and removes nodes whose time has passed.
    pub fn set_time(&mut self, t_now: f64) {
        self.t_now = t_now;
        let past: Vec<NodeId> = self
            .node_ids()
            .filter(|&v| v != self.goal && self.nodes[v].state.t < t_now)
            .collect();
        self.stats.pruned += past.len();
        for v in past {
            self.remove_node(v);
        }
    }

    /// Replaces the obstacle set and the observed humans, recomputing the
    /// costs of every edge near a change and repairing the tree. The queue is
    /// left for [`Planner::reduce_inconsistency`].
    pub fn update_environment(&mut self, obstacles: Vec<ConvexRegion>, humans: Vec<HumanContext>) {
        let mut zones: Vec<(Configuration, Configuration)> = Vec::new();
        let pad = Configuration::new(self.robot_radius, self.robot_radius);
        for s in self.obstacles.iter().filter(|s| !obstacles.contains(s)) {
            zones.push((s.bbox().0 - pad, s.bbox().1 + pad));
        }
        for s in obstacles.iter().filter(|s| !self.obstacles.contains(s)) {
            zones.push((s.bbox().0 - pad, s.bbox().1 + pad));
        }
        let poses = |h: &[HumanContext]| h.iter().map(|c| c.pose).collect::<Vec<HumanPose>>();
        let humans_changed = poses(&self.humans) != poses(&humans)
            || (self.danger.params.time_gating && !humans.is_empty());
        if humans_changed && !self.danger.is_length_only() {
            for h in self.humans.iter().chain(&humans) {
                zones.push(h.region.bbox());
            }
        }
        self.obstacles = obstacles;
        self.humans = humans;
        if zones.is_empty() {
            return;
        }

        self.stamp += 1;
        let stamp = self.stamp;
        let reach = Configuration::new(self.config.r_max, self.config.r_max);
        let mut nodes = Vec::new();
        for (lo, hi) in &zones {
            self.grid.query_box(*lo - reach, *hi + reach, &mut nodes);
        }
        let mut cand = Vec::new();
        for v in nodes {
            for k in 0..self.nodes[v].out.len() {
                let e = self.nodes[v].out[k];
                if self.edges[e].stamp != stamp {
                    self.edges[e].stamp = stamp;
                    let (a, b) = (self.nodes[v].state.config, self.nodes[self.edges[e].to].state.config);
                    let touches = zones.iter().any(|(lo, hi)| {
                        !(a.x.max(b.x) < lo.x || a.x.min(b.x) > hi.x || a.y.max(b.y) < lo.y || a.y.min(b.y) > hi.y)
                    });
                    if touches {
                        cand.push(e);
                    }
                }
            }
        }
        cand.sort_unstable();
        let fresh: Vec<(EdgeCost, bool)> = cand
            .par_iter()
            .map(|&e| {
                let edge = &self.edges[e];
                let seg = self.segment(&self.nodes[edge.from].state, edge.to);
                self.evaluate(&seg)
            })
            .collect();

        let mut orphans = Vec::new();
        let mut decreased = Vec::new();
        for (&e, (cost, blocked)) in cand.iter().zip(fresh) {
            let old = self.edges[e].effective();
            self.edges[e].cost = cost;
            self.edges[e].blocked = blocked;
            let new = self.edges[e].effective();
            if new == old {
                continue;
            }
            self.stats.cost_updates += 1;
            let from = self.edges[e].from;
            if new > old {
                if self.nodes[from].parent == Some(e) && !self.nodes[from].orphan {
                    self.orphan(from);
                    orphans.push(from);
                }
            } else {
                decreased.push(e);
            }
        }
        if !orphans.is_empty() {
            self.propagate_descendants(orphans);
        }
        for e in decreased {
            let Edge { from, to, .. } = self.edges[e];
            let c = self.edges[e].effective() + self.nodes[to].lmc;
            if c < self.nodes[from].lmc {
                self.nodes[from].lmc = c;
                self.set_parent(from, e);
            }
            if self.inconsistent(from) {
                self.verify_queue(from);
            }
        }
    }

    /// Best connection of the robot and the path it induces.
    pub fn robot_plan(&self, robot: &State) -> Option<(f64, Vec<Configuration>)> {
        let links = self.robot_links(robot);
        let (first, value) = self.best_link(&links)?;
        let mut path = vec![robot.config];
        let mut v = first;
        for _ in 0..=self.nodes.len() {
            path.push(self.nodes[v].state.config);
            if v == self.goal {
                return Some((value, path));
            }
            v = self.parent(v)?;
        }
        None
    }

    /// Moves the robot along its plan at full speed for `dt` seconds.
    pub fn plan_step(&self, robot: &State, dt: f64) -> StepResult {
        let goal = self.goal_config();
        let next_t = robot.t + dt;
        if robot.config.distance(goal) < 1e-9 {
            return StepResult {
                state: State::new(goal, next_t),
                stop: false,
                arrived: true,
                path: vec![goal],
                lmc: 0.0,
            };
        }
        let Some((lmc, path)) = self.robot_plan(robot) else {
            return StepResult {
                state: State::new(robot.config, next_t),
                stop: true,
                arrived: false,
                path: Vec::new(),
                lmc: f64::INFINITY,
            };
        };
        let mut budget = self.config.max_speed * dt;
        let mut q = robot.config;
        for &next in &path[1..] {
            let d = q.distance(next);
            if d <= budget {
                budget -= d;
                q = next;
            } else {
                q = q.lerp(next, budget / d);
                budget = 0.0;
                break;
            }
        }
        let arrived = budget >= 0.0 && q.distance(goal) < 1e-9;
        StepResult {
            state: State::new(if arrived { goal } else { q }, next_t),
            stop: false,
            arrived,
            path,
            lmc,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_box(size: f64) -> Bounds {
        Bounds::new(Configuration::new(0.0, 0.0), Configuration::new(size, size))
    }

    fn planner(bounds: Bounds, goal: Configuration) -> Planner {
        Planner::new(PlannerConfig::default(), bounds, goal, 0.3, DangerModel::length_only()).unwrap()
    }

    #[test]
    fn radius_examples() {
        assert_eq!(shrinking_ball_radius(1, 10.0, 2.0), 2.0);
        let r = shrinking_ball_radius(10_000, 10.0, 2.0);
        assert!((r - 10.0 * (10_000f64.ln() / 1e4).sqrt()).abs() < 1e-15);
        assert!((r - 0.3035).abs() < 1e-4);
        let mut last = f64::INFINITY;
        for n in 3..5000 {
            let r = shrinking_ball_radius(n, 25.0, 2.0);
            assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn samples_cover_the_box() {
        let b = empty_box(10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..n {
            let s = sample_state(&mut rng, &b, 0.0, 10.0, 0.0, None, 2.0, 2.0);
            assert!(b.contains(s.config) && (0.0..=10.0).contains(&s.t));
            sx += s.config.x;
            sy += s.config.y;
        }
        assert!((sx / n as f64 - 5.0).abs() < 0.05);
        assert!((sy / n as f64 - 5.0).abs() < 0.05);
    }

    #[test]
    fn sampling_is_seeded_and_bias_is_optional() {
        let b = empty_box(10.0);
        let robot = State::at(1.0, 1.0, 0.0);
        let draw = |seed, bias| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200)
                .map(|_| sample_state(&mut rng, &b, 0.0, 5.0, bias, Some(&robot), 0.5, 2.0))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(4, 0.3), draw(4, 0.3));
        assert_ne!(draw(4, 0.3), draw(5, 0.3));
        // the unbiased stream never lands in the robot disc on purpose; the
        // biased stream does so repeatedly
        let near = |v: &[State]| v.iter().filter(|s| s.config.distance(robot.config) <= 0.5).count();
        assert!(near(&draw(4, 1.0)) == 200);
        assert!(near(&draw(4, 0.0)) < 10);
    }

    #[test]
    fn first_sample_near_goal_connects() {
        let mut p = planner(empty_box(10.0), Configuration::new(5.0, 5.0));
        let v = p.extend(State::at(6.0, 5.0, 1.0)).unwrap();
        assert_eq!(p.lmc(v), 1.0);
        assert_eq!(p.parent(v), Some(p.goal()));
        assert!(p.extend(State::at(9.5, 9.5, 1.0)).is_none(), "beyond r_max of everything");
    }

    #[test]
    fn samples_in_obstacles_are_rejected() {
        let mut p = planner(empty_box(10.0), Configuration::new(5.0, 5.0));
        let wall = ConvexRegion::axis_aligned(Configuration::new(5.5, 4.0), Configuration::new(6.5, 6.0));
        p.update_environment(vec![wall], Vec::new());
        assert!(p.extend(State::at(6.0, 5.0, 1.0)).is_none());
        assert!(p.extend(State::at(5.0, 6.5, 1.0)).is_some());
    }

    #[test]
    fn speed_infeasible_samples_are_rejected() {
        let mut p = planner(empty_box(10.0), Configuration::new(1.0, 1.0));
        let u = p.extend(State::at(2.5, 1.0, 5.0)).unwrap();
        assert!(p.lmc(u).is_finite());
        // 1.5 m from u but only 0.1 s earlier, and 3.5 m from the goal
        assert!(p.extend(State::at(4.0, 1.0, 4.9)).is_none());
        assert!(p.extend(State::at(4.0, 1.0, 4.0)).is_some());
    }

    #[test]
    fn shortcut_rewires_the_chain() {
        let mut p = planner(empty_box(10.0), Configuration::new(1.0, 1.0));
        let b = p.extend(State::at(2.5, 2.2, 5.0)).unwrap();
        let a = p.extend(State::at(4.0, 1.0, 0.0)).unwrap();
        p.reduce_inconsistency(None);
        assert_eq!(p.parent(a), Some(b));
        let before = p.lmc(a);
        assert!(p.rewire_neighbors(a) == 0, "consistent node has nothing to push");
        let b2 = p.extend(State::at(2.5, 1.0, 5.0)).unwrap();
        p.reduce_inconsistency(None);
        assert!(p.lmc(a) < before);
        assert_eq!(p.parent(a), Some(b2));
        assert!((p.lmc(a) - 3.0).abs() < 1e-12);
        assert_eq!(dijkstra(&p)[a], p.lmc(a));
    }

    /// Exhaustive shortest path to the goal over the live edges.
    fn dijkstra(p: &Planner) -> Vec<f64> {
        let n = p.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[p.goal()] = 0.0;
        let edges = p.edge_list();
        loop {
            let next = (0..n)
                .filter(|&i| !done[i] && dist[i].is_finite())
                .min_by(|&a, &b| dist[a].total_cmp(&dist[b]));
            let Some(u) = next else { break };
            done[u] = true;
            for &(from, to, c) in &edges {
                if to == u && dist[u] + c < dist[from] {
                    dist[from] = dist[u] + c;
                }
            }
        }
        dist
    }

    fn assert_matches_dijkstra(p: &Planner) {
        let d = dijkstra(p);
        for v in p.node_ids() {
            let (l, o) = (p.lmc(v), d[v]);
            assert!(
                (l.is_infinite() && o.is_infinite()) || (l - o).abs() <= 1e-6,
                "node {v}: lmc {l} vs {o}"
            );
            assert!(!p.inconsistent(v));
        }
    }

    fn assert_tree(p: &Planner) {
        for v in p.node_ids() {
            if !p.lmc(v).is_finite() {
                continue;
            }
            let mut u = v;
            let mut hops = 0;
            while u != p.goal() {
                u = p.parent(u).expect("finite node has a parent");
                hops += 1;
                assert!(hops <= p.node_count(), "cycle through {v}");
            }
        }
    }

    #[test]
    fn random_graphs_match_dijkstra() {
        for seed in 0..5 {
            let config = PlannerConfig {
                seed,
                ..Default::default()
            };
            let mut p =
                Planner::new(config, empty_box(8.0), Configuration::new(7.0, 7.0), 0.2, DangerModel::length_only())
                    .unwrap();
            let wall = ConvexRegion::axis_aligned(Configuration::new(2.0, 3.0), Configuration::new(6.0, 3.5));
            p.update_environment(vec![wall.clone()], Vec::new());
            p.grow(300, None);
            p.reduce_inconsistency(None);
            assert!(p.node_count() <= 500);
            assert_matches_dijkstra(&p);
            assert_tree(&p);

            // remove the wall, then put it back elsewhere
            p.update_environment(Vec::new(), Vec::new());
            p.reduce_inconsistency(None);
            assert_matches_dijkstra(&p);
            let moved = wall.translated(Configuration::new(0.0, 2.0));
            p.update_environment(vec![moved], Vec::new());
            p.reduce_inconsistency(None);
            assert_matches_dijkstra(&p);
            assert_tree(&p);
        }
    }

    #[test]
    fn insert_then_remove_obstacle_restores_costs() {
        let mut p = planner(empty_box(10.0), Configuration::new(9.0, 9.0));
        p.grow(1500, None);
        p.reduce_inconsistency(None);
        let robot = State::at(1.0, 1.0, 0.0);
        let (before, path) = p.robot_plan(&robot).unwrap();
        let mid = path[path.len() / 2];
        let block = ConvexRegion::axis_aligned(mid - Configuration::new(0.5, 0.5), mid + Configuration::new(0.5, 0.5));
        p.update_environment(vec![block.clone()], Vec::new());
        p.reduce_inconsistency(Some(&robot));
        let (during, detour) = p.robot_plan(&robot).unwrap();
        assert!(during > before);
        for w in detour.windows(2) {
            assert!(block.segment_distance(w[0], w[1]) >= 0.3);
        }
        p.update_environment(Vec::new(), Vec::new());
        p.reduce_inconsistency(None);
        let (after, _) = p.robot_plan(&robot).unwrap();
        assert!((after - before).abs() < 1e-6, "{after} vs {before}");
    }

    #[test]
    fn unchanged_environment_changes_nothing() {
        let mut p = planner(empty_box(10.0), Configuration::new(9.0, 9.0));
        p.grow(300, None);
        p.reduce_inconsistency(None);
        p.take_stats();
        p.update_environment(Vec::new(), Vec::new());
        assert_eq!(p.take_stats().cost_updates, 0);
        assert!(p.queue_is_empty());
    }

    #[test]
    fn plan_step_examples() {
        let mut p = planner(empty_box(10.0), Configuration::new(5.0, 1.0));
        let robot = State::at(1.0, 1.0, 0.0);
        p.grow(800, Some(&robot));
        p.reduce_inconsistency(Some(&robot));
        let step = p.plan_step(&robot, 0.1);
        assert!(!step.stop);
        assert!((step.state.config.distance(robot.config) - 0.2).abs() < 1e-12);
        assert!((step.state.t - 0.1).abs() < 1e-15);

        let at_goal = State::at(5.0, 1.0, 3.0);
        let s = p.plan_step(&at_goal, 0.1);
        assert!(s.arrived && s.state.config == p.goal_config());

        // enclose the robot
        let cage = ConvexRegion::axis_aligned(Configuration::new(0.0, 0.0), Configuration::new(10.0, 10.0));
        p.update_environment(vec![cage], Vec::new());
        p.reduce_inconsistency(Some(&robot));
        let s = p.plan_step(&robot, 0.1);
        assert!(s.stop && s.state.config == robot.config && s.lmc.is_infinite());
    }

    #[test]
    fn pruning_drops_past_nodes_only() {
        let mut p = planner(empty_box(10.0), Configuration::new(9.0, 9.0));
        p.grow(400, None);
        p.reduce_inconsistency(None);
        p.set_time(5.0);
        for v in p.node_ids() {
            assert!(v == p.goal() || p.state(v).t >= 5.0);
        }
        p.reduce_inconsistency(None);
        assert_matches_dijkstra(&p);
        assert_tree(&p);
    }
}
