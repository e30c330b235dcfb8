//! Fixtures and dense oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lcot_core::codec::{fit_codebook, trajectory_deltas, Codebook};
use lcot_core::eval::EGO_DIMS;
use lcot_core::geom::{integrate, DeltaPose, OrientedBox, Point2, Pose2D};
use lcot_core::lwm::LwmConfig;
use lcot_core::policy::PolicyConfig;
use lcot_core::sim::{generate_clip, AgentState, AgentTrack, AgentType, Category, Clip, SimConfig, HISTORY_STEPS, TOTAL_STEPS};

pub fn tiny_policy() -> PolicyConfig {
    PolicyConfig {
        d_model: 16,
        layers: 2,
        heads: 2,
        lwm_head_hidden: 16,
        max_branches: 3,
        lwm: LwmConfig { n_agents: 8, m: 2, d_lwm: 8, mlp_blocks: 1 },
    }
}

/// One clip per category and a codebook fitted on them.
pub fn fixture(v: usize) -> (Vec<Clip>, Codebook) {
    let sc = SimConfig::default();
    let clips: Vec<Clip> = Category::ALL.iter().map(|&c| generate_clip(c, 3, &sc).unwrap()).collect();
    let deltas: Vec<_> = clips.iter().flat_map(|c| trajectory_deltas(&c.ego_future)).collect();
    (clips, fit_codebook(&deltas, v, 1, 10, 1.0).unwrap())
}

pub const CELL: f64 = 0.01;
pub const BAND: f64 = 0.02;

pub fn local(b: &OrientedBox, x: f64, y: f64) -> (f64, f64) {
    let (s, c) = b.center.yaw.sin_cos();
    let (dx, dy) = (x - b.center.x, y - b.center.y);
    (c * dx + s * dy, -s * dx + c * dy)
}

pub fn inside_box(b: &OrientedBox, x: f64, y: f64, margin: f64) -> bool {
    let (lx, ly) = local(b, x, y);
    lx.abs() <= b.length / 2.0 + margin && ly.abs() <= b.width / 2.0 + margin
}

pub fn aabb(b: &OrientedBox, margin: f64) -> (f64, f64, f64, f64) {
    let (s, c) = b.center.yaw.sin_cos();
    let hx = (c * b.length).abs() / 2.0 + (s * b.width).abs() / 2.0 + margin;
    let hy = (s * b.length).abs() / 2.0 + (c * b.width).abs() / 2.0 + margin;
    (b.center.x - hx, b.center.x + hx, b.center.y - hy, b.center.y + hy)
}

/// Some world-grid cell centre lies in both `a` and `b` grown by `margin`.
pub fn raster_overlap(a: &OrientedBox, b: &OrientedBox, margin: f64) -> bool {
    let (ax0, ax1, ay0, ay1) = aabb(a, 0.0);
    let (bx0, bx1, by0, by1) = aabb(b, margin);
    let (x0, x1, y0, y1) = (ax0.max(bx0), ax1.min(bx1), ay0.max(by0), ay1.min(by1));
    if x0 > x1 || y0 > y1 {
        return false;
    }
    let (i0, i1) = ((x0 / CELL).floor() as i64, (x1 / CELL).ceil() as i64);
    let (j0, j1) = ((y0 / CELL).floor() as i64, (y1 / CELL).ceil() as i64);
    for i in i0..=i1 {
        for j in j0..=j1 {
            let (x, y) = (i as f64 * CELL, j as f64 * CELL);
            if inside_box(a, x, y, 0.0) && inside_box(b, x, y, margin) {
                return true;
            }
        }
    }
    false
}

/// Overlap verdict, or None inside the tangency band.
pub fn overlap_oracle(a: &OrientedBox, b: &OrientedBox) -> Option<bool> {
    let grown = raster_overlap(a, b, BAND);
    let shrunk = raster_overlap(a, b, -BAND);
    (grown == shrunk).then_some(grown)
}

pub fn random_box(r: &mut ChaCha8Rng, spread: f64) -> OrientedBox {
    OrientedBox::new(
        Pose2D::new(r.random_range(-spread..spread), r.random_range(-spread..spread), r.random_range(-PI..PI)),
        r.random_range(0.5..6.0),
        r.random_range(0.5..3.0),
    )
}

pub fn ego_box(p: &Pose2D, margin: f64) -> OrientedBox {
    OrientedBox::new(*p, EGO_DIMS.0 + 2.0 * margin, EGO_DIMS.1 + 2.0 * margin)
}

pub fn random_trajectory(r: &mut ChaCha8Rng) -> Vec<Pose2D> {
    let v: f64 = r.random_range(0.0..15.0);
    let w: f64 = r.random_range(-0.3..0.3);
    let start = Pose2D::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-0.3..0.3));
    integrate(&start, &vec![DeltaPose { dx: v * 0.1, dy: 0.0, dyaw: w * 0.1 }; 64]).unwrap()
}

pub fn constant_velocity_agent(r: &mut ChaCha8Rng, id: u64) -> AgentTrack {
    let p0 = Pose2D::new(r.random_range(-5.0..70.0), r.random_range(-8.0..8.0), r.random_range(-PI..PI));
    let v: f64 = r.random_range(0.0..12.0);
    let hide = r.random_range(0..TOTAL_STEPS + 20);
    let states = (0..TOTAL_STEPS)
        .map(|s| {
            let t = (s as f64 - HISTORY_STEPS as f64) * 0.1;
            let pose = Pose2D::new(p0.x + v * t * p0.yaw.cos(), p0.y + v * t * p0.yaw.sin(), p0.yaw);
            AgentState { pose, speed: v, yaw_rate: 0.0, valid: s != hide }
        })
        .collect();
    AgentTrack { agent_id: id, agent_type: AgentType::Vehicle, length: r.random_range(1.0..6.0), width: r.random_range(0.6..2.5), states }
}

/// Crossing-number test, independent of the library polygon code; boundary handling is irrelevant
/// outside the tangency band.
pub fn in_polygon(poly: &[Point2], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.y > y) != (b.y > y) && x < a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y) {
            inside = !inside;
        }
    }
    inside
}

/// Whether any point of the box outline, sampled every centimetre, leaves the polygon.
pub fn outline_leaves(poly: &[Point2], b: &OrientedBox) -> bool {
    let (s, c) = b.center.yaw.sin_cos();
    let (hl, hw) = (b.length / 2.0, b.width / 2.0);
    let edges = [((-hl, -hw), (hl, -hw)), ((hl, -hw), (hl, hw)), ((hl, hw), (-hl, hw)), ((-hl, hw), (-hl, -hw))];
    for ((x0, y0), (x1, y1)) in edges {
        let len = (x1 - x0).hypot(y1 - y0);
        let n = (len / CELL).ceil() as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let (lx, ly) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            if !in_polygon(poly, b.center.x + c * lx - s * ly, b.center.y + s * lx + c * ly) {
                return true;
            }
        }
    }
    false
}

pub fn random_convex_polygon(r: &mut ChaCha8Rng) -> Vec<Point2> {
    let (cx, rx, ry) = (r.random_range(20.0..40.0), r.random_range(25.0..60.0), r.random_range(3.0..12.0));
    let n = r.random_range(5..14);
    let mut angles: Vec<f64> = (0..n).map(|_| r.random_range(0.0..2.0 * PI)).collect();
    angles.sort_by(f64::total_cmp);
    angles.iter().map(|a| Point2::new(cx + rx * a.cos(), ry * a.sin())).collect()
}


/// Outcome of an oracle sweep: cases decided outside the tangency band, positives among them,
/// and disagreements with the library.
#[derive(Debug, Default, Clone, Copy)]
pub struct Tally {
    pub checked: usize,
    pub positive: usize,
    pub mismatches: usize,
}

impl Tally {
    fn record(&mut self, oracle: bool, library: bool) {
        self.checked += 1;
        self.positive += oracle as usize;
        self.mismatches += (oracle != library) as usize;
    }
}

pub fn box_pair_sweep(seed: u64, n: usize) -> Tally {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    for _ in 0..n {
        let (a, b) = (random_box(&mut r, 1.0), random_box(&mut r, 4.0));
        if let Some(o) = overlap_oracle(&a, &b) {
            t.record(o, lcot_core::geom::boxes_intersect(&a, &b));
        }
    }
    t
}

/// Random ego trajectories against constant-velocity agents, both windows per case.
pub fn collision_sweep(seed: u64, n: usize) -> Tally {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    for _ in 0..n {
        let traj = random_trajectory(&mut r);
        let agents: Vec<AgentTrack> = (0..r.random_range(1..4)).map(|i| constant_velocity_agent(&mut r, i)).collect();
        for window in [2.5, 5.0] {
            let steps = (window * 10.0) as usize;
            let mut verdict = Some(false);
            'steps: for (i, p) in traj[..steps].iter().enumerate() {
                for a in &agents {
                    let Some(b) = a.box_at(HISTORY_STEPS + i) else { continue };
                    match overlap_oracle(&ego_box(p, 0.0), &b) {
                        Some(true) => {
                            verdict = Some(true);
                            break 'steps;
                        }
                        Some(false) => {}
                        None => verdict = None,
                    }
                }
            }
            if let Some(v) = verdict {
                t.record(v, lcot_core::eval::collision(&traj, &agents, window, EGO_DIMS).unwrap());
            }
        }
    }
    t
}

/// Random trajectories inside random convex corridors, both windows per case.
pub fn offroad_sweep(seed: u64, n: usize) -> Tally {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    let mut cases = 0;
    while cases < n {
        let pts = random_convex_polygon(&mut r);
        let Ok(poly) = lcot_core::geom::Polygon::new(pts.clone()) else { continue };
        cases += 1;
        let traj = random_trajectory(&mut r);
        for window in [2.5, 5.0] {
            let steps = (window * 10.0) as usize;
            let grown = traj[..steps].iter().any(|p| outline_leaves(&pts, &ego_box(p, BAND)));
            let shrunk = traj[..steps].iter().any(|p| outline_leaves(&pts, &ego_box(p, -BAND)));
            if grown == shrunk {
                t.record(grown, lcot_core::eval::offroad(&traj, &poly, window, EGO_DIMS).unwrap());
            }
        }
    }
    t
}
