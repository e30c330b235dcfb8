//! SE(2) pose algebra, oriented boxes and polygon predicates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate polygon: {0} vertices (need at least 3)")]
    DegeneratePolygon(usize),
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid can land exactly on -pi after the shift
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, o: &Point2) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Default for Pose2D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose2D {
    pub const IDENTITY: Pose2D = Pose2D { x: 0.0, y: 0.0, yaw: 0.0 };

    /// Builds a pose with the yaw normalized.
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: normalize_angle(yaw) }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// `self ∘ d`: applies a body-frame increment.
    pub fn compose(&self, d: &DeltaPose) -> Pose2D {
        let (s, c) = self.yaw.sin_cos();
        Pose2D::new(
            self.x + c * d.dx - s * d.dy,
            self.y + s * d.dx + c * d.dy,
            self.yaw + d.dyaw,
        )
    }

    /// Maps a point given in this pose's frame to the parent frame.
    pub fn transform_point(&self, p: Point2) -> Point2 {
        let (s, c) = self.yaw.sin_cos();
        Point2::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }

    /// Maps a parent-frame point into this pose's frame.
    pub fn inverse_transform_point(&self, p: Point2) -> Point2 {
        let (s, c) = self.yaw.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        Point2::new(c * dx + s * dy, -s * dx + c * dy)
    }

    /// Expresses a frame-local pose in the parent frame (inverse of [`into_frame`]).
    pub fn from_frame(&self, local: &Pose2D) -> Pose2D {
        let p = self.transform_point(local.position());
        Pose2D::new(p.x, p.y, self.yaw + local.yaw)
    }
}

/// Ego-frame motion increment: translation in the previous pose's frame plus heading change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DeltaPose {
    pub dx: f64,
    pub dy: f64,
    pub dyaw: f64,
}

impl DeltaPose {
    pub const ZERO: DeltaPose = DeltaPose { dx: 0.0, dy: 0.0, dyaw: 0.0 };

    pub const fn new(dx: f64, dy: f64, dyaw: f64) -> Self {
        Self { dx, dy, dyaw }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dyaw.is_finite()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dyaw]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Increment that carries `from` onto `to`.
    pub fn between(from: &Pose2D, to: &Pose2D) -> DeltaPose {
        let local = into_frame(from, to);
        DeltaPose::new(local.x, local.y, local.yaw)
    }
}

/// Chains body-frame increments starting from `start`; output has one pose per delta.
pub fn integrate(start: &Pose2D, deltas: &[DeltaPose]) -> Result<Vec<Pose2D>, GeomError> {
    if !start.is_finite() {
        return Err(GeomError::InvalidInput(format!("non-finite start pose {start:?}")));
    }
    let mut out = Vec::with_capacity(deltas.len());
    let mut cur = *start;
    for (i, d) in deltas.iter().enumerate() {
        if !d.is_finite() {
            return Err(GeomError::InvalidInput(format!("non-finite delta at index {i}: {d:?}")));
        }
        cur = cur.compose(d);
        out.push(cur);
    }
    Ok(out)
}

/// Pose of `global` expressed in the frame anchored at `frame`.
pub fn into_frame(frame: &Pose2D, global: &Pose2D) -> Pose2D {
    let p = frame.inverse_transform_point(global.position());
    Pose2D::new(p.x, p.y, global.yaw - frame.yaw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Pose2D,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Pose2D, length: f64, width: f64) -> Self {
        debug_assert!(length > 0.0 && width > 0.0);
        Self { center, length, width }
    }

    /// Corners in the fixed order front-left, front-right, rear-right, rear-left.
    pub fn corners(&self) -> [Point2; 4] {
        box_corners(self)
    }
}

pub fn box_corners(b: &OrientedBox) -> [Point2; 4] {
    let hl = 0.5 * b.length;
    let hw = 0.5 * b.width;
    let c = &b.center;
    [
        c.transform_point(Point2::new(hl, hw)),
        c.transform_point(Point2::new(hl, -hw)),
        c.transform_point(Point2::new(-hl, -hw)),
        c.transform_point(Point2::new(-hl, hw)),
    ]
}

fn project(corners: &[Point2; 4], axis: (f64, f64)) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in corners {
        let v = p.x * axis.0 + p.y * axis.1;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Separating-axis overlap test; touching boxes intersect.
pub fn boxes_intersect(a: &OrientedBox, b: &OrientedBox) -> bool {
    // cheap reject on bounding circles
    let ra = 0.5 * a.length.hypot(a.width);
    let rb = 0.5 * b.length.hypot(b.width);
    if a.center.position().dist(&b.center.position()) > ra + rb {
        return false;
    }
    let ca = box_corners(a);
    let cb = box_corners(b);
    let axes = [a.center.yaw, a.center.yaw + PI / 2.0, b.center.yaw, b.center.yaw + PI / 2.0];
    for yaw in axes {
        let axis = (yaw.cos(), yaw.sin());
        let (alo, ahi) = project(&ca, axis);
        let (blo, bhi) = project(&cb, axis);
        if ahi < blo || bhi < alo {
            return false;
        }
    }
    true
}

/// Simple polygon, counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point2>,
}

impl Polygon {
    /// Builds a polygon, reorienting clockwise input to counter-clockwise.
    pub fn new(mut vertices: Vec<Point2>) -> Result<Self, GeomError> {
        if vertices.len() < 3 {
            return Err(GeomError::DegeneratePolygon(vertices.len()));
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(GeomError::InvalidInput("non-finite polygon vertex".into()));
        }
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.vertices.len() < 3 {
            return Err(GeomError::DegeneratePolygon(self.vertices.len()));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn contains(&self, p: Point2) -> bool {
        point_in_polygon(self, p)
    }

    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Polygon {
        Polygon { vertices: self.vertices.iter().map(|p| f(*p)).collect() }
    }
}

fn signed_area(v: &[Point2]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

fn on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    const EPS: f64 = 1e-9;
    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    let len = a.dist(&b).max(EPS);
    if cross.abs() / len > EPS {
        return false;
    }
    p.x >= a.x.min(b.x) - EPS
        && p.x <= a.x.max(b.x) + EPS
        && p.y >= a.y.min(b.y) - EPS
        && p.y <= a.y.max(b.y) + EPS
}

/// Crossing-number containment; points on the boundary are inside.
pub fn point_in_polygon(poly: &Polygon, pt: Point2) -> bool {
    let v = &poly.vertices;
    let n = v.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if on_segment(pt, a, b) {
            return true;
        }
        if (a.y > pt.y) != (b.y > pt.y) {
            let x = a.x + (pt.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if pt.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}
