use std::f64::consts::PI;

use crate::geom::{Point2, Polygon, Pose2D};

/// Reference line of the road: straight along +x or a constant-curvature arc starting at the origin
/// heading +x (positive curvature turns left).
#[derive(Debug, Clone, Copy)]
pub struct Road {
    pub curvature: f64,
}

impl Road {
    pub fn straight() -> Self {
        Self { curvature: 0.0 }
    }

    pub fn arc(curvature: f64) -> Self {
        Self { curvature }
    }

    pub fn heading(&self, s: f64) -> f64 {
        self.curvature * s
    }

    /// Cartesian pose at Frenet coordinates; `d` is the left offset.
    pub fn frenet_to_pose(&self, s: f64, d: f64, rel_heading: f64) -> Pose2D {
        let k = self.curvature;
        let (x, y, h) = if k.abs() < 1e-12 {
            (s, d, 0.0)
        } else {
            let th = k * s;
            let (st, ct) = th.sin_cos();
            (st / k - d * st, (1.0 - ct) / k + d * ct, th)
        };
        Pose2D::new(x, y, h + rel_heading)
    }

    pub fn frenet_to_point(&self, s: f64, d: f64) -> Point2 {
        self.frenet_to_pose(s, d, 0.0).position()
    }

    /// Projects a point onto the reference line, returning (s, d).
    pub fn project(&self, p: Point2) -> (f64, f64) {
        let k = self.curvature;
        if k.abs() < 1e-12 {
            return (p.x, p.y);
        }
        let qx = p.x;
        let qy = p.y - 1.0 / k;
        let rho = qx.hypot(qy);
        if k > 0.0 {
            let th = qx.atan2(-qy);
            (th / k, 1.0 / k - rho)
        } else {
            let th = (-qx).atan2(qy);
            (th / k, 1.0 / k + rho)
        }
    }
}

/// Lateral reference profile of the ego path: piecewise constant with cosine blends.
#[derive(Debug, Clone)]
pub struct LateralProfile {
    /// (s_start, s_end, d_from, d_to) blends in increasing s; constant elsewhere.
    pub base: f64,
    pub blends: Vec<(f64, f64, f64, f64)>,
}

impl LateralProfile {
    pub fn constant(d: f64) -> Self {
        Self { base: d, blends: Vec::new() }
    }

    pub fn with_blend(mut self, s0: f64, s1: f64, to: f64) -> Self {
        let from = self.blends.last().map_or(self.base, |b| b.3);
        self.blends.push((s0, s1, from, to));
        self
    }

    pub fn d(&self, s: f64) -> f64 {
        let mut d = self.base;
        for &(s0, s1, from, to) in &self.blends {
            if s <= s0 {
                return d;
            }
            if s >= s1 {
                d = to;
                continue;
            }
            let u = (s - s0) / (s1 - s0);
            return from + (to - from) * 0.5 * (1.0 - (PI * u).cos());
        }
        d
    }

    pub fn slope(&self, s: f64) -> f64 {
        for &(s0, s1, from, to) in &self.blends {
            if s > s0 && s < s1 {
                let u = (s - s0) / (s1 - s0);
                return (to - from) * 0.5 * PI * (PI * u).sin() / (s1 - s0);
            }
        }
        0.0
    }
}

/// Builds a corridor polygon between lateral offsets `right(s)` and `left(s)` sampled every
/// `step` meters over [s0, s1]. Sharp boundary vertices in `breaks` are inserted exactly.
pub fn corridor(
    road: &Road,
    s0: f64,
    s1: f64,
    step: f64,
    right: impl Fn(f64) -> f64,
    left: impl Fn(f64) -> f64,
    breaks: &[f64],
) -> Vec<Point2> {
    let mut ss: Vec<f64> = Vec::new();
    let n = ((s1 - s0) / step).ceil() as usize;
    for i in 0..=n {
        ss.push((s0 + i as f64 * step).min(s1));
    }
    ss.extend(breaks.iter().copied().filter(|b| *b > s0 && *b < s1));
    ss.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ss.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let mut pts: Vec<Point2> = ss.iter().map(|&s| road.frenet_to_point(s, right(s))).collect();
    pts.extend(ss.iter().rev().map(|&s| road.frenet_to_point(s, left(s))));
    pts
}

pub fn polygon_from(points: Vec<Point2>) -> Polygon {
    Polygon::new(points).expect("corridor polygons have at least 4 vertices")
}
