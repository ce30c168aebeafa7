//! Planar configurations, space-time states and the convex-shape queries the
//! planner and the danger model are built on.
//!
//! Every robot state is a planar position paired with a time stamp. Obstacles
//! are convex polygons; humans are represented by oriented rectangles and by
//! the convex future-position regions computed in [`crate::danger`].

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default spatial spacing used to discretize segments for collision checks
/// and path danger sums, in meters.
pub const DEFAULT_SPACING: f64 = 0.05;

const CONTAINS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("convex region needs at least 3 distinct vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertex sequence is not convex (turn sign changes at vertex {0})")]
    NotConvex(usize),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("segment runs backward in time ({start} -> {end})")]
    TimeReversed { start: f64, end: f64 },
}

/// Robot or human position in the world frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Configuration {
    pub x: f64,
    pub y: f64,
}

impl Configuration {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Configuration) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Configuration) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, other: Configuration) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn lerp(self, other: Configuration, s: f64) -> Configuration {
        Configuration::new(self.x + (other.x - self.x) * s, self.y + (other.y - self.y) * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Configuration {
    fn from(v: [f64; 2]) -> Self {
        Configuration::new(v[0], v[1])
    }
}

impl From<Configuration> for [f64; 2] {
    fn from(c: Configuration) -> Self {
        [c.x, c.y]
    }
}

impl Add for Configuration {
    type Output = Configuration;
    fn add(self, rhs: Configuration) -> Configuration {
        Configuration::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Configuration {
    type Output = Configuration;
    fn sub(self, rhs: Configuration) -> Configuration {
        Configuration::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Configuration {
    type Output = Configuration;
    fn mul(self, rhs: f64) -> Configuration {
        Configuration::new(self.x * rhs, self.y * rhs)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3})", self.x, self.y)
    }
}

/// A configuration paired with a time stamp in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub config: Configuration,
    pub t: f64,
}

impl State {
    pub const fn new(config: Configuration, t: f64) -> Self {
        Self { config, t }
    }

    pub fn at(x: f64, y: f64, t: f64) -> Self {
        Self::new(Configuration::new(x, y), t)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already; only exact -pi can survive the shift.
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Position and walking direction of a pedestrian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanPose {
    pub position: Configuration,
    pub heading: f64,
}

impl HumanPose {
    pub fn new(position: Configuration, heading: f64) -> Self {
        Self {
            position,
            heading: normalize_angle(heading),
        }
    }
}

/// Expresses `q` in the pedestrian's frame: longitudinal along the heading,
/// lateral positive to the left of it.
pub fn to_human_frame(q: Configuration, pose: &HumanPose) -> (f64, f64) {
    let d = q - pose.position;
    let (s, c) = pose.heading.sin_cos();
    (c * d.x + s * d.y, -s * d.x + c * d.y)
}

/// Inverse of [`to_human_frame`].
pub fn from_human_frame(p_ln: f64, p_lt: f64, pose: &HumanPose) -> Configuration {
    let (s, c) = pose.heading.sin_cos();
    Configuration::new(
        pose.position.x + c * p_ln - s * p_lt,
        pose.position.y + s * p_ln + c * p_lt,
    )
}

/// Straight-line motion between two states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSegment {
    pub start: State,
    pub end: State,
}

impl PathSegment {
    /// Builds a segment, rejecting non-finite input and motion backward in time.
    pub fn new(start: State, end: State) -> Result<Self, GeometryError> {
        if !(start.config.is_finite() && end.config.is_finite()) || !start.t.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if end.t < start.t {
            return Err(GeometryError::TimeReversed {
                start: start.t,
                end: end.t,
            });
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.start.config.distance(self.end.config)
    }

    pub fn duration(&self) -> f64 {
        self.end.t - self.start.t
    }

    pub fn state_at(&self, s: f64) -> State {
        State::new(
            self.start.config.lerp(self.end.config, s),
            self.start.t + (self.end.t - self.start.t) * s,
        )
    }
}

/// Uniform discretization of a segment: at least two states, the exact
/// endpoints first and last, neighbouring samples no more than `spacing` apart.
pub fn discretize_path(seg: &PathSegment, spacing: f64) -> Vec<State> {
    assert!(spacing > 0.0, "spacing must be positive");
    let n = sample_count(seg.length(), spacing);
    let mut out = Vec::with_capacity(n);
    out.push(seg.start);
    for i in 1..n - 1 {
        out.push(seg.state_at(i as f64 / (n - 1) as f64));
    }
    out.push(seg.end);
    out
}

/// Number of samples [`discretize_path`] produces for a segment of `length`.
pub fn sample_count(length: f64, spacing: f64) -> usize {
    let intervals = (length / spacing - 1e-9).ceil().max(1.0);
    intervals as usize + 1
}

/// Axis-aligned environment box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Configuration,
    pub max: Configuration,
}

impl Bounds {
    pub fn new(min: Configuration, max: Configuration) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> Configuration {
        self.min.lerp(self.max, 0.5)
    }

    pub fn contains(&self, q: Configuration) -> bool {
        q.x >= self.min.x && q.x <= self.max.x && q.y >= self.min.y && q.y <= self.max.y
    }

    pub fn clamp(&self, q: Configuration) -> Configuration {
        Configuration::new(
            q.x.clamp(self.min.x, self.max.x),
            q.y.clamp(self.min.y, self.max.y),
        )
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.width() > 0.0 && self.height() > 0.0
    }
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Configuration>", into = "Vec<Configuration>")]
pub struct ConvexRegion {
    vertices: Vec<Configuration>,
    lo: Configuration,
    hi: Configuration,
}

impl ConvexRegion {
    /// Accepts vertices in either winding; clockwise input is reversed.
    pub fn new(mut vertices: Vec<Configuration>) -> Result<Self, GeometryError> {
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        let area2: f64 = (0..vertices.len())
            .map(|i| vertices[i].cross(vertices[(i + 1) % vertices.len()]))
            .sum();
        if area2 == 0.0 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if area2 < 0.0 {
            vertices.reverse();
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            let turn = (b - a).cross(c - b);
            let scale = (b - a).norm() * (c - b).norm();
            if turn < -1e-12 * scale.max(1.0) {
                return Err(GeometryError::NotConvex((i + 1) % n));
            }
        }
        Ok(Self::from_ccw(vertices))
    }

    fn from_ccw(vertices: Vec<Configuration>) -> Self {
        let mut lo = vertices[0];
        let mut hi = vertices[0];
        for v in &vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        Self { vertices, lo, hi }
    }

    /// Convex hull of a point cloud (monotone chain, collinear points dropped).
    pub fn hull(points: &[Configuration]) -> Result<Self, GeometryError> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        pts.dedup();
        if pts.len() < 3 {
            return Err(GeometryError::TooFewVertices(pts.len()));
        }
        let mut hull: Vec<Configuration> = Vec::with_capacity(2 * pts.len());
        for pass in 0..2 {
            let start = hull.len();
            let iter: Box<dyn Iterator<Item = &Configuration>> = if pass == 0 {
                Box::new(pts.iter())
            } else {
                Box::new(pts.iter().rev())
            };
            for &p in iter {
                while hull.len() >= start + 2 {
                    let a = hull[hull.len() - 2];
                    let b = hull[hull.len() - 1];
                    if (b - a).cross(p - a) <= 0.0 {
                        hull.pop();
                    } else {
                        break;
                    }
                }
                hull.push(p);
            }
            hull.pop();
        }
        if hull.len() < 3 {
            return Err(GeometryError::TooFewVertices(hull.len()));
        }
        Ok(Self::from_ccw(hull))
    }

    /// Oriented rectangle: `length` along `heading`, `width` across it.
    pub fn rectangle(center: Configuration, heading: f64, length: f64, width: f64) -> Self {
        let (s, c) = heading.sin_cos();
        let u = Configuration::new(c, s) * (0.5 * length);
        let v = Configuration::new(-s, c) * (0.5 * width);
        Self::from_ccw(vec![
            center - u - v,
            center + u - v,
            center + u + v,
            center - u + v,
        ])
    }

    pub fn axis_aligned(min: Configuration, max: Configuration) -> Self {
        Self::from_ccw(vec![
            min,
            Configuration::new(max.x, min.y),
            max,
            Configuration::new(min.x, max.y),
        ])
    }

    pub fn vertices(&self) -> &[Configuration] {
        &self.vertices
    }

    /// Bounding box as (min corner, max corner).
    pub fn bbox(&self) -> (Configuration, Configuration) {
        (self.lo, self.hi)
    }

    fn edges(&self) -> impl Iterator<Item = (Configuration, Configuration)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Closed containment test (boundary counts as inside).
    pub fn contains(&self, p: Configuration) -> bool {
        if p.x < self.lo.x - CONTAINS_TOL
            || p.x > self.hi.x + CONTAINS_TOL
            || p.y < self.lo.y - CONTAINS_TOL
            || p.y > self.hi.y + CONTAINS_TOL
        {
            return false;
        }
        self.edges().all(|(a, b)| {
            let e = b - a;
            e.cross(p - a) >= -CONTAINS_TOL * e.norm().max(1.0)
        })
    }

    /// Euclidean distance from `p` to the region; zero inside.
    pub fn distance(&self, p: Configuration) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Lower bound on [`ConvexRegion::distance`] from the bounding box alone.
    pub fn bbox_distance(&self, p: Configuration) -> f64 {
        let dx = (self.lo.x - p.x).max(p.x - self.hi.x).max(0.0);
        let dy = (self.lo.y - p.y).max(p.y - self.hi.y).max(0.0);
        dx.hypot(dy)
    }

    /// Euclidean distance from the segment `a`-`b` to the region; zero on contact.
    pub fn segment_distance(&self, a: Configuration, b: Configuration) -> f64 {
        if self.contains(a) || self.contains(b) {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for (u, v) in self.edges() {
            if segments_intersect(a, b, u, v) {
                return 0.0;
            }
            best = best
                .min(point_segment_distance(a, u, v))
                .min(point_segment_distance(b, u, v))
                .min(point_segment_distance(u, a, b));
        }
        best
    }

    pub fn translated(&self, offset: Configuration) -> Self {
        Self::from_ccw(self.vertices.iter().map(|&v| v + offset).collect())
    }
}

impl TryFrom<Vec<Configuration>> for ConvexRegion {
    type Error = GeometryError;
    fn try_from(v: Vec<Configuration>) -> Result<Self, Self::Error> {
        ConvexRegion::new(v)
    }
}

impl From<ConvexRegion> for Vec<Configuration> {
    fn from(r: ConvexRegion) -> Self {
        r.vertices
    }
}

pub fn point_segment_distance(p: Configuration, a: Configuration, b: Configuration) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let s = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * s)
}

fn orientation(a: Configuration, b: Configuration, c: Configuration) -> i8 {
    let v = (b - a).cross(c - a);
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn on_segment(a: Configuration, b: Configuration, p: Configuration) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed segment-segment intersection, collinear overlaps included.
pub fn segments_intersect(
    p1: Configuration,
    q1: Configuration,
    p2: Configuration,
    q2: Configuration,
) -> bool {
    let o1 = orientation(p1, q1, p2);
    let o2 = orientation(p1, q1, q2);
    let o3 = orientation(p2, q2, p1);
    let o4 = orientation(p2, q2, q1);
    if o1 != o2 && o3 != o4 {
        return true;
    }
    (o1 == 0 && on_segment(p1, q1, p2))
        || (o2 == 0 && on_segment(p1, q1, q2))
        || (o3 == 0 && on_segment(p2, q2, p1))
        || (o4 == 0 && on_segment(p2, q2, q1))
}

/// True iff the planar projection of `seg` touches or lies inside `region`.
pub fn segment_intersects_region(seg: &PathSegment, region: &ConvexRegion) -> bool {
    let a = seg.start.config;
    let b = seg.end.config;
    let (lo, hi) = region.bbox();
    if a.x.max(b.x) < lo.x || a.x.min(b.x) > hi.x || a.y.max(b.y) < lo.y || a.y.min(b.y) > hi.y {
        return false;
    }
    if region.contains(a) || region.contains(b) {
        return true;
    }
    region.edges().any(|(u, v)| segments_intersect(a, b, u, v))
}

/// Shapes whose position depends on time, e.g. replayed pedestrians.
pub trait DynamicObstacles: Send + Sync + fmt::Debug {
    fn shapes_at(&self, t: f64) -> Vec<ConvexRegion>;
}

/// Static convex shapes plus an optional time-dependent source.
#[derive(Debug, Clone, Default)]
pub struct ObstacleSet {
    pub static_shapes: Vec<ConvexRegion>,
    pub dynamic: Option<Arc<dyn DynamicObstacles>>,
}

impl ObstacleSet {
    pub fn new(static_shapes: Vec<ConvexRegion>) -> Self {
        Self {
            static_shapes,
            dynamic: None,
        }
    }

    pub fn with_dynamic(mut self, dynamic: Arc<dyn DynamicObstacles>) -> Self {
        self.dynamic = Some(dynamic);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.static_shapes.is_empty() && self.dynamic.is_none()
    }

    /// Every shape occupied at time `t`.
    pub fn shapes_at(&self, t: f64) -> Vec<ConvexRegion> {
        let mut shapes = self.static_shapes.clone();
        if let Some(d) = &self.dynamic {
            shapes.extend(d.shapes_at(t));
        }
        shapes
    }

    /// Whether a disc of `radius` centered at `q` overlaps a shape occupied at `t`.
    pub fn point_collides(&self, q: Configuration, t: f64, radius: f64) -> bool {
        let hit = |r: &ConvexRegion| r.bbox_distance(q) <= radius && disc_hits(r, q, radius);
        if self.static_shapes.iter().any(hit) {
            return true;
        }
        match &self.dynamic {
            Some(d) => d.shapes_at(t).iter().any(hit),
            None => false,
        }
    }
}

fn disc_hits(region: &ConvexRegion, q: Configuration, radius: f64) -> bool {
    region.contains(q) || region.distance(q) < radius
}

/// Disc-robot collision check on a discretized segment.
pub fn collision_free(
    seg: &PathSegment,
    obstacles: &ObstacleSet,
    robot_radius: f64,
    spacing: f64,
) -> bool {
    if obstacles.is_empty() {
        return true;
    }
    // Skip shapes that cannot come within reach of the swept disc.
    let a = seg.start.config;
    let b = seg.end.config;
    let near: Vec<&ConvexRegion> = obstacles
        .static_shapes
        .iter()
        .filter(|r| {
            let (lo, hi) = r.bbox();
            !(a.x.max(b.x) + robot_radius < lo.x
                || a.x.min(b.x) - robot_radius > hi.x
                || a.y.max(b.y) + robot_radius < lo.y
                || a.y.min(b.y) - robot_radius > hi.y)
        })
        .collect();
    if near.is_empty() && obstacles.dynamic.is_none() {
        return true;
    }
    discretize_path(seg, spacing).iter().all(|s| {
        let q = s.config;
        let static_hit = near
            .iter()
            .any(|r| r.bbox_distance(q) <= robot_radius && disc_hits(r, q, robot_radius));
        if static_hit {
            return false;
        }
        match &obstacles.dynamic {
            Some(d) => !d
                .shapes_at(s.t)
                .iter()
                .any(|r| r.bbox_distance(q) <= robot_radius && disc_hits(r, q, robot_radius)),
            None => true,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_square() -> ConvexRegion {
        ConvexRegion::axis_aligned(Configuration::new(0.0, 0.0), Configuration::new(1.0, 1.0))
    }

    fn seg(ax: f64, ay: f64, bx: f64, by: f64) -> PathSegment {
        PathSegment::new(State::at(ax, ay, 0.0), State::at(bx, by, 1.0)).unwrap()
    }

    #[test]
    fn segment_distance_matches_dense_sampling() {
        let tri = ConvexRegion::new(vec![
            Configuration::new(0.0, 0.0),
            Configuration::new(2.0, 0.5),
            Configuration::new(0.5, 1.5),
        ])
        .unwrap();
        let cases = [
            (Configuration::new(-1.0, -1.0), Configuration::new(3.0, -1.0)),
            (Configuration::new(-1.0, 2.0), Configuration::new(3.0, 2.0)),
            (Configuration::new(-1.0, 0.5), Configuration::new(3.0, 0.5)),
            (Configuration::new(0.5, 0.5), Configuration::new(0.6, 0.6)),
            (Configuration::new(3.0, 3.0), Configuration::new(3.0, 3.0)),
        ];
        for (a, b) in cases {
            let n = 20_000;
            let dense = (0..=n)
                .map(|i| tri.distance(a.lerp(b, i as f64 / n as f64)))
                .fold(f64::INFINITY, f64::min);
            assert!((tri.segment_distance(a, b) - dense).abs() < 1e-3, "{a} {b}");
        }
        assert_eq!(tri.segment_distance(Configuration::new(-1.0, 0.5), Configuration::new(3.0, 0.5)), 0.0);
    }

    #[test]
    fn human_frame_examples() {
        let origin = HumanPose::new(Configuration::new(0.0, 0.0), 0.0);
        assert_eq!(to_human_frame(Configuration::new(0.0, 0.0), &origin), (0.0, 0.0));

        let up = HumanPose::new(Configuration::new(0.0, 0.0), PI / 2.0);
        let (ln, lt) = to_human_frame(Configuration::new(1.0, 0.0), &up);
        assert!(ln.abs() < 1e-12 && (lt + 1.0).abs() < 1e-12);

        let shifted = HumanPose::new(Configuration::new(1.0, 1.0), 0.0);
        assert_eq!(to_human_frame(Configuration::new(2.0, 1.0), &shifted), (1.0, 0.0));
    }

    #[test]
    fn lateral_axis_points_left() {
        let pose = HumanPose::new(Configuration::new(0.0, 0.0), 0.0);
        let (_, lt) = to_human_frame(Configuration::new(0.0, 1.0), &pose);
        assert!(lt > 0.0);
    }

    #[test]
    fn heading_normalization() {
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-0.5) + 0.5).abs() < 1e-15);
        let h = HumanPose::new(Configuration::default(), 7.0).heading;
        assert!(h > -PI && h <= PI);
    }

    #[test]
    fn discretize_examples() {
        let s = PathSegment::new(State::at(0.0, 0.0, 0.0), State::at(1.0, 0.0, 1.0)).unwrap();
        let pts = discretize_path(&s, 0.5);
        let xs: Vec<f64> = pts.iter().map(|p| p.config.x).collect();
        assert_eq!(xs, vec![0.0, 0.5, 1.0]);
        assert_eq!(pts[1].t, 0.5);

        let z = PathSegment::new(State::at(0.0, 0.0, 0.0), State::at(0.0, 0.0, 0.0)).unwrap();
        let pts = discretize_path(&z, 0.1);
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0], pts[1]);

        let pts = discretize_path(&s, 0.3);
        assert_eq!(pts.len(), 5);
        for w in pts.windows(2) {
            assert!((w[1].config.x - w[0].config.x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn reversed_segment_rejected() {
        let err = PathSegment::new(State::at(0.0, 0.0, 1.0), State::at(1.0, 0.0, 0.5));
        assert!(matches!(err, Err(GeometryError::TimeReversed { .. })));
    }

    #[test]
    fn region_intersection_examples() {
        let sq = unit_square();
        assert!(segment_intersects_region(&seg(-1.0, 0.5, 2.0, 0.5), &sq));
        assert!(!segment_intersects_region(&seg(-1.0, 2.0, 2.0, 2.0), &sq));
        assert!(segment_intersects_region(&seg(0.2, 0.2, 0.8, 0.7), &sq));
        // grazing a corner counts
        assert!(segment_intersects_region(&seg(1.0, 1.0, 2.0, 3.0), &sq));
    }

    #[test]
    fn region_rejects_bad_input() {
        let two = vec![Configuration::new(0.0, 0.0), Configuration::new(1.0, 0.0)];
        assert_eq!(ConvexRegion::new(two), Err(GeometryError::TooFewVertices(2)));
        let dart = vec![
            Configuration::new(0.0, 0.0),
            Configuration::new(2.0, 0.0),
            Configuration::new(1.0, 0.5),
            Configuration::new(1.0, 2.0),
        ];
        assert!(matches!(ConvexRegion::new(dart), Err(GeometryError::NotConvex(_))));
        let cw = vec![
            Configuration::new(0.0, 0.0),
            Configuration::new(0.0, 1.0),
            Configuration::new(1.0, 1.0),
            Configuration::new(1.0, 0.0),
        ];
        let r = ConvexRegion::new(cw).unwrap();
        let v = r.vertices();
        let area2: f64 = (0..4).map(|i| v[i].cross(v[(i + 1) % 4])).sum();
        assert!(area2 > 0.0);
        assert!(r.contains(Configuration::new(0.5, 0.5)));
    }

    #[test]
    fn hull_drops_interior_and_collinear_points() {
        let pts = vec![
            Configuration::new(0.0, 0.0),
            Configuration::new(1.0, 0.0),
            Configuration::new(2.0, 0.0),
            Configuration::new(2.0, 2.0),
            Configuration::new(0.0, 2.0),
            Configuration::new(1.0, 1.0),
        ];
        let h = ConvexRegion::hull(&pts).unwrap();
        assert_eq!(h.vertices().len(), 4);
        assert!(ConvexRegion::hull(&pts[..3]).is_err());
    }

    #[test]
    fn rectangle_dimensions() {
        let r = ConvexRegion::rectangle(Configuration::new(1.0, 1.0), PI / 2.0, 0.3, 0.5);
        // length 0.3 along +y, width 0.5 along x
        assert!(r.contains(Configuration::new(1.24, 1.0)));
        assert!(!r.contains(Configuration::new(1.0, 1.2)));
        assert!((r.distance(Configuration::new(2.0, 1.0)) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn collision_examples() {
        let empty = ObstacleSet::default();
        assert!(collision_free(&seg(0.0, 0.0, 5.0, 5.0), &empty, 0.3, DEFAULT_SPACING));

        let obs = ObstacleSet::new(vec![unit_square()]);
        assert!(!collision_free(&seg(-1.0, 0.5, 2.0, 0.5), &obs, 0.3, DEFAULT_SPACING));
        assert!(collision_free(&seg(-1.0, 1.5, 2.0, 1.5), &obs, 0.3, DEFAULT_SPACING));
        assert!(!collision_free(&seg(-1.0, 1.25, 2.0, 1.25), &obs, 0.3, DEFAULT_SPACING));
    }

    #[derive(Debug)]
    struct LateGate;

    impl DynamicObstacles for LateGate {
        fn shapes_at(&self, t: f64) -> Vec<ConvexRegion> {
            if t >= 2.0 {
                vec![ConvexRegion::axis_aligned(
                    Configuration::new(4.0, -1.0),
                    Configuration::new(5.0, 1.0),
                )]
            } else {
                Vec::new()
            }
        }
    }

    #[test]
    fn moving_obstacle_respects_time() {
        let obs = ObstacleSet::default().with_dynamic(Arc::new(LateGate));
        // crosses x in [4,5] during t in [0.8, 1.0], gate only closes at t=2
        let early = PathSegment::new(State::at(0.0, 0.0, 0.0), State::at(5.0, 0.0, 1.0)).unwrap();
        assert!(collision_free(&early, &obs, 0.3, DEFAULT_SPACING));
        let late = PathSegment::new(State::at(0.0, 0.0, 2.0), State::at(5.0, 0.0, 3.0)).unwrap();
        assert!(!collision_free(&late, &obs, 0.3, DEFAULT_SPACING));
    }

    /// Dense-sampling oracle for segment/triangle intersection.
    fn oracle_intersects(a: Configuration, b: Configuration, tri: &ConvexRegion) -> bool {
        (0..=10_000).any(|i| tri.contains(a.lerp(b, i as f64 / 10_000.0)))
    }

    #[test]
    fn intersection_agrees_with_dense_sampling() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut disagreements = 0;
        for _ in 0..1000 {
            let mut p = || Configuration::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let tri = match ConvexRegion::new(vec![p(), p(), p()]) {
                Ok(t) => t,
                Err(_) => continue,
            };
            let (a, b) = (p(), p());
            let s = PathSegment::new(State::new(a, 0.0), State::new(b, 1.0)).unwrap();
            if segment_intersects_region(&s, &tri) != oracle_intersects(a, b, &tri) {
                // sampling can only miss grazing contacts thinner than 1e-4 of the segment
                let grazing = (0..tri.vertices().len()).any(|i| {
                    let u = tri.vertices()[i];
                    let v = tri.vertices()[(i + 1) % 3];
                    point_segment_distance(u, a, b) < 1e-3 || point_segment_distance(a, u, v) < 1e-3
                        || point_segment_distance(b, u, v) < 1e-3
                });
                if !grazing {
                    disagreements += 1;
                }
            }
        }
        assert_eq!(disagreements, 0);
    }

    proptest! {
        #[test]
        fn human_frame_is_isometry(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64,
            hx in -50.0..50.0f64, hy in -50.0..50.0f64,
            th in -10.0..10.0f64,
        ) {
            let pose = HumanPose::new(Configuration::new(hx, hy), th);
            let a = Configuration::new(ax, ay);
            let b = Configuration::new(bx, by);
            let (a1, a2) = to_human_frame(a, &pose);
            let (b1, b2) = to_human_frame(b, &pose);
            let d = (a1 - b1).hypot(a2 - b2);
            prop_assert!((d - a.distance(b)).abs() < 1e-9);
            let back = from_human_frame(a1, a2, &pose);
            prop_assert!(back.distance(a) < 1e-9);
        }

        #[test]
        fn discretization_is_monotone(
            len in 0.0..20.0f64, spacing in 0.01..2.0f64, t0 in 0.0..10.0f64, dt in 0.0..5.0f64,
        ) {
            let s = PathSegment::new(State::at(0.0, 0.0, t0), State::at(len, 0.0, t0 + dt)).unwrap();
            let pts = discretize_path(&s, spacing);
            prop_assert!(pts.len() >= 2);
            prop_assert_eq!(pts[0], s.start);
            prop_assert_eq!(*pts.last().unwrap(), s.end);
            for w in pts.windows(2) {
                prop_assert!(w[1].t >= w[0].t);
                prop_assert!(w[1].config.x >= w[0].config.x);
                prop_assert!(w[1].config.x - w[0].config.x <= spacing + 1e-9);
            }
        }
    }
}
