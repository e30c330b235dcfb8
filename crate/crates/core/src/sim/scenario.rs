//! Scenario scripting and the closed-loop world rollout behind [`super::generate_clip`].

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::road::{corridor, polygon_from, LateralProfile, Road};
use super::{
    AgentState, AgentTrack, AgentType, Category, Clip, EgoState, SimConfig, SimError, CURRENT_STEP, DT,
    HISTORY_STEPS, TOTAL_STEPS,
};
use crate::binio::derive_seed;
use crate::geom::{
    boxes_intersect, into_frame, normalize_angle, point_in_polygon, DeltaPose, OrientedBox, Point2, Polygon,
    Pose2D,
};

const IDM_ACCEL: f64 = 1.6;
const IDM_DECEL: f64 = 2.5;
const IDM_GAP: f64 = 2.5;
const IDM_HEADWAY: f64 = 1.2;
const LATERAL_ACCEL: f64 = 2.0;

fn idm(v: f64, v0: f64, lead: Option<(f64, f64)>) -> f64 {
    let free = IDM_ACCEL * (1.0 - (v / v0.max(0.1)).powi(4));
    match lead {
        None => free,
        Some((gap, v_lead)) => {
            let s_star = IDM_GAP + (v * IDM_HEADWAY + v * (v - v_lead) / (2.0 * (IDM_ACCEL * IDM_DECEL).sqrt())).max(0.0);
            free - IDM_ACCEL * (s_star / gap.max(0.1)).powi(2)
        }
    }
}

#[derive(Debug, Clone)]
enum Behavior {
    Lane { v0: f64 },
    Schedule { v1: f64, v2: f64, t_change: f64, rate: f64 },
    Brake { v0: f64, t_brake: f64, decel: f64 },
    CutIn { v0: f64, d_from: f64, d_to: f64, t_start: f64, duration: f64 },
    Static,
    Walk { v: f64 },
    Cross { v: f64 },
}

#[derive(Debug, Clone)]
struct Agent {
    id: u64,
    kind: AgentType,
    length: f64,
    width: f64,
    s: f64,
    d: f64,
    v: f64,
    behavior: Behavior,
    valid_from: usize,
    valid_to: usize,
}

impl Agent {
    fn new(id: u64, kind: AgentType, dims: (f64, f64), s: f64, d: f64, v: f64, behavior: Behavior) -> Self {
        Self {
            id,
            kind,
            length: dims.0,
            width: dims.1,
            s,
            d,
            v,
            behavior,
            valid_from: 0,
            valid_to: TOTAL_STEPS,
        }
    }

    fn crossing(&self) -> bool {
        matches!(self.behavior, Behavior::Cross { .. })
    }

    /// Extent along the road direction.
    fn s_extent(&self) -> f64 {
        if self.crossing() {
            self.width
        } else {
            self.length
        }
    }

    fn s_rate(&self) -> f64 {
        match self.behavior {
            Behavior::Cross { .. } | Behavior::Static => 0.0,
            Behavior::Walk { v } => v,
            _ => self.v,
        }
    }
}

struct World {
    road: Road,
    path: LateralProfile,
    drivable: Vec<Point2>,
    agents: Vec<Agent>,
    ego_v0: f64,
    ego_v_init: f64,
    /// Agent index whose scripted lane entry must be observed as a cut-in.
    cut_in: Option<usize>,
}

#[derive(Clone, Copy)]
struct Rec {
    s: f64,
    d: f64,
    s_rate: f64,
    d_rate: f64,
}

struct Rollout {
    ego: Vec<(Pose2D, f64, f64)>,
    agents: Vec<Vec<Rec>>,
}

fn uni(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn vehicle_dims(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (uni(rng, 4.2, 5.0), uni(rng, 1.7, 2.0))
}

fn time_of(step: usize) -> f64 {
    (step as f64 - CURRENT_STEP as f64) * DT
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    cfg: &'a SimConfig,
    next_id: u64,
    agents: Vec<Agent>,
}

impl<'a> Builder<'a> {
    fn id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn push(&mut self, kind: AgentType, dims: (f64, f64), s: f64, d: f64, v: f64, b: Behavior) -> usize {
        let id = self.id();
        self.agents.push(Agent::new(id, kind, dims, s, d, v, b));
        self.agents.len() - 1
    }

    fn lane(&self, i: i32) -> f64 {
        i as f64 * self.cfg.lane_width
    }

    /// Randomly truncates the validity window of a background agent.
    fn maybe_partial(&mut self, idx: usize) {
        if self.rng.random::<f64>() < 0.25 {
            if self.rng.random::<bool>() {
                self.agents[idx].valid_from = self.rng.random_range(1..40);
            } else {
                self.agents[idx].valid_to = self.rng.random_range(30..TOTAL_STEPS);
            }
        }
    }

    /// Background traffic: adjacent-lane vehicles, parked cars, sidewalk pedestrians.
    fn background(&mut self, adjacent: bool, ego_v0: f64) {
        let hw = 0.5 * self.cfg.lane_width;
        if adjacent {
            let n = self.rng.random_range(0..=3);
            let mut s = uni(&mut self.rng, -45.0, -20.0);
            for _ in 0..n {
                s += uni(&mut self.rng, 18.0, 40.0);
                let v0 = (ego_v0 + uni(&mut self.rng, -3.0, 3.0)).clamp(4.0, 16.0);
                let dims = vehicle_dims(&mut self.rng);
                let d = self.lane(1);
                let i = self.push(AgentType::Vehicle, dims, s, d, v0, Behavior::Lane { v0 });
                self.maybe_partial(i);
            }
        }
        for _ in 0..self.rng.random_range(0..=2) {
            let dims = vehicle_dims(&mut self.rng);
            let s = uni(&mut self.rng, -20.0, 130.0);
            let d = -hw - 0.8 - 0.5 * dims.1 - uni(&mut self.rng, 0.0, 0.8);
            let i = self.push(AgentType::Static, dims, s, d, 0.0, Behavior::Static);
            self.maybe_partial(i);
        }
        for _ in 0..self.rng.random_range(0..=2) {
            let size = uni(&mut self.rng, 0.5, 0.8);
            let s = uni(&mut self.rng, -10.0, 90.0);
            let d = -hw - 3.5 - uni(&mut self.rng, 0.0, 1.5);
            let v = uni(&mut self.rng, 0.9, 1.6) * if self.rng.random::<bool>() { 1.0 } else { -1.0 };
            let i = self.push(AgentType::Vru, (size, size), s, d, v.abs(), Behavior::Walk { v });
            self.maybe_partial(i);
        }
    }

    fn follower(&mut self, ego_v0: f64) {
        if self.rng.random::<f64>() < 0.4 {
            let dims = vehicle_dims(&mut self.rng);
            let s = -uni(&mut self.rng, 18.0, 32.0);
            let v0 = ego_v0 * uni(&mut self.rng, 0.9, 1.1);
            self.push(AgentType::Vehicle, dims, s, 0.0, ego_v0, Behavior::Lane { v0 });
        }
    }
}

fn build_world(category: Category, rng: ChaCha8Rng, cfg: &SimConfig) -> World {
    let mut b = Builder { rng, cfg, next_id: 0, agents: Vec::new() };
    let lw = cfg.lane_width;
    let hw = 0.5 * lw;
    let mut road = Road::straight();
    let mut path = LateralProfile::constant(0.0);
    let mut ego_v0 = uni(&mut b.rng, 7.0, 14.0);
    let mut ego_v_init = ego_v0;
    let mut cut_in = None;
    // two-lane corridor: [-hw, lane 1 + hw]
    let mut right: Box<dyn Fn(f64) -> f64> = Box::new(move |_| -hw);
    let left_edge = lw + hw;
    let mut cross_road: Option<(f64, f64)> = None;
    let mut breaks = Vec::new();

    match category {
        Category::LaneKeepingStraight | Category::LaneKeepingCurve => {
            if category == Category::LaneKeepingCurve {
                let k = uni(&mut b.rng, 1.0 / 220.0, 1.0 / 90.0);
                road = Road::arc(if b.rng.random::<bool>() { k } else { -k });
                ego_v0 = ego_v0.min((LATERAL_ACCEL / k).sqrt());
                ego_v_init = ego_v0;
            }
            if b.rng.random::<bool>() {
                let dims = vehicle_dims(&mut b.rng);
                let s = uni(&mut b.rng, 45.0, 70.0);
                let v0 = ego_v0 + uni(&mut b.rng, 0.5, 3.0);
                b.push(AgentType::Vehicle, dims, s, 0.0, v0, Behavior::Lane { v0 });
            }
            b.background(true, ego_v0);
            b.follower(ego_v0);
        }
        Category::LeadFollowing => {
            let v1 = uni(&mut b.rng, 6.0, 12.0);
            ego_v_init = v1;
            ego_v0 = v1 + uni(&mut b.rng, 2.0, 5.0);
            let dims = vehicle_dims(&mut b.rng);
            let gap = uni(&mut b.rng, 12.0, 28.0);
            let v2 = (v1 * uni(&mut b.rng, 0.35, 1.4)).clamp(2.0, 16.0);
            let t_change = uni(&mut b.rng, -0.5, 4.0);
            let rate = uni(&mut b.rng, 1.5, 3.0);
            b.push(AgentType::Vehicle, dims, gap + 0.5 * (dims.0 + cfg.ego_length), 0.0, v1, Behavior::Schedule {
                v1,
                v2,
                t_change,
                rate,
            });
            b.background(true, ego_v0);
            b.follower(v1);
        }
        Category::StopForVehicle => {
            let v1 = uni(&mut b.rng, 5.0, 9.0);
            ego_v_init = v1;
            ego_v0 = v1 + uni(&mut b.rng, 1.0, 4.0);
            let dims = vehicle_dims(&mut b.rng);
            let gap = uni(&mut b.rng, 12.0, 24.0);
            let t_brake = uni(&mut b.rng, -1.0, 1.5);
            let decel = uni(&mut b.rng, 3.0, 5.0);
            b.push(AgentType::Vehicle, dims, gap + 0.5 * (dims.0 + cfg.ego_length), 0.0, v1, Behavior::Brake {
                v0: v1,
                t_brake,
                decel,
            });
            b.background(true, ego_v0);
        }
        Category::CutIn => {
            ego_v0 = uni(&mut b.rng, 8.0, 13.0);
            ego_v_init = ego_v0;
            let dims = vehicle_dims(&mut b.rng);
            let v0 = ego_v0 - uni(&mut b.rng, 0.0, 3.0);
            let s = uni(&mut b.rng, 12.0, 26.0);
            let t_start = uni(&mut b.rng, 0.0, 2.5);
            let duration = uni(&mut b.rng, 2.0, 3.0);
            cut_in = Some(b.push(AgentType::Vehicle, dims, s, lw, v0, Behavior::CutIn {
                v0,
                d_from: lw,
                d_to: 0.0,
                t_start,
                duration,
            }));
            b.background(false, ego_v0);
            b.follower(ego_v0);
        }
        Category::LaneChange => {
            let s_now = ego_v0 * (CURRENT_STEP as f64 * DT);
            let s0 = s_now + uni(&mut b.rng, 0.0, 15.0);
            let len = uni(&mut b.rng, 35.0, 50.0);
            path = path.with_blend(s0, s0 + len, lw);
            // target-lane traffic leaves a gap around the ego
            if b.rng.random::<bool>() {
                let dims = vehicle_dims(&mut b.rng);
                let s = s0 + len + uni(&mut b.rng, 20.0, 45.0);
                let v0 = ego_v0 + uni(&mut b.rng, 0.0, 2.0);
                b.push(AgentType::Vehicle, dims, s, lw, v0, Behavior::Lane { v0 });
            }
            if b.rng.random::<bool>() {
                let dims = vehicle_dims(&mut b.rng);
                let s = -uni(&mut b.rng, 30.0, 45.0);
                let v0 = ego_v0 * uni(&mut b.rng, 0.8, 1.0);
                b.push(AgentType::Vehicle, dims, s, lw, v0, Behavior::Lane { v0 });
            }
            if b.rng.random::<bool>() {
                let dims = vehicle_dims(&mut b.rng);
                let s = uni(&mut b.rng, 40.0, 60.0);
                let v0 = ego_v0 * uni(&mut b.rng, 0.6, 0.9);
                b.push(AgentType::Vehicle, dims, s, 0.0, v0, Behavior::Lane { v0 });
            }
            b.background(false, ego_v0);
        }
        Category::Merging => {
            let s_now = ego_v0 * (CURRENT_STEP as f64 * DT);
            let t0 = s_now + uni(&mut b.rng, 50.0, 80.0);
            let t1 = t0 + 30.0;
            path = path.with_blend(t0 - 45.0, t0 - 5.0, lw);
            right = Box::new(move |s: f64| {
                if s <= t0 {
                    -hw
                } else if s >= t1 {
                    hw
                } else {
                    -hw + (s - t0) / (t1 - t0) * lw
                }
            });
            breaks.extend([t0, t1]);
            let dims = vehicle_dims(&mut b.rng);
            let s = uni(&mut b.rng, -5.0, 25.0);
            let v0 = ego_v0 - uni(&mut b.rng, 0.0, 3.0);
            b.push(AgentType::Vehicle, dims, s, lw, v0, Behavior::Lane { v0 });
            if b.rng.random::<bool>() {
                let dims = vehicle_dims(&mut b.rng);
                let s = s + uni(&mut b.rng, 25.0, 40.0);
                b.push(AgentType::Vehicle, dims, s, lw, v0, Behavior::Lane { v0 });
            }
            b.background(false, ego_v0);
        }
        Category::Intersection => {
            let s_now = ego_v0 * (CURRENT_STEP as f64 * DT);
            let sx = s_now + uni(&mut b.rng, 18.0, 45.0);
            cross_road = Some((sx - lw, sx + lw));
            breaks.extend([sx - lw, sx + lw]);
            let dir = if b.rng.random::<bool>() { 1.0 } else { -1.0 };
            let t_arrive = uni(&mut b.rng, 0.5, 5.5);
            let (kind, dims, v, s_c) = if b.rng.random::<f64>() < 0.7 {
                let dims = vehicle_dims(&mut b.rng);
                // drive on the right-hand lane of the crossing road
                (AgentType::Vehicle, dims, uni(&mut b.rng, 5.0, 9.0), sx + dir * 0.5 * lw)
            } else {
                let size = uni(&mut b.rng, 0.5, 0.8);
                (AgentType::Vru, (size, size), uni(&mut b.rng, 1.1, 1.8), sx - lw - 2.0)
            };
            // the crossing agent reaches the ego lane edge at t_arrive
            let edge = -dir * (hw + 0.5 * dims.0);
            let d0 = edge - dir * v * (t_arrive + CURRENT_STEP as f64 * DT);
            b.push(kind, dims, s_c, d0, v, Behavior::Cross { v: dir * v });
            b.background(true, ego_v0);
        }
    }

    let s_now = ego_v_init * CURRENT_STEP as f64 * DT;
    let (s_lo, s_hi) = (s_now - 45.0, s_now + 190.0);
    let drivable = match cross_road {
        None => corridor(&road, s_lo, s_hi, 4.0, right, move |_| left_edge, &breaks),
        Some((c0, c1)) => {
            // plus-shaped junction on a straight road
            let ext = 70.0;
            vec![
                Point2::new(s_lo, -hw),
                Point2::new(c0, -hw),
                Point2::new(c0, -ext),
                Point2::new(c1, -ext),
                Point2::new(c1, -hw),
                Point2::new(s_hi, -hw),
                Point2::new(s_hi, left_edge),
                Point2::new(c1, left_edge),
                Point2::new(c1, ext),
                Point2::new(c0, ext),
                Point2::new(c0, left_edge),
                Point2::new(s_lo, left_edge),
            ]
        }
    };
    World { road, path, drivable, agents: b.agents, ego_v0, ego_v_init, cut_in }
}

fn rollout(w: &mut World, cfg: &SimConfig) -> Rollout {
    let road = w.road;
    let d0 = w.path.d(0.0);
    let mut ego = road.frenet_to_pose(0.0, d0, w.path.slope(0.0).atan());
    let mut v = w.ego_v_init;
    let mut last_yaw_rate = 0.0;
    let v0_eff = if road.curvature.abs() > 1e-12 {
        w.ego_v0.min((LATERAL_ACCEL / road.curvature.abs()).sqrt())
    } else {
        w.ego_v0
    };
    let mut ego_rec = Vec::with_capacity(TOTAL_STEPS);
    let mut agent_rec: Vec<Vec<Rec>> = vec![Vec::with_capacity(TOTAL_STEPS); w.agents.len()];
    let mut d_rates = vec![0.0; w.agents.len()];

    for k in 0..TOTAL_STEPS {
        let t = time_of(k);
        ego_rec.push((ego, v, last_yaw_rate));
        for (i, a) in w.agents.iter().enumerate() {
            agent_rec[i].push(Rec { s: a.s, d: a.d, s_rate: a.s_rate(), d_rate: d_rates[i] });
        }
        if k + 1 == TOTAL_STEPS {
            break;
        }

        let (s_e, d_e) = road.project(ego.position());

        // ego steering: pure pursuit on the reference lane
        let look = (0.9 * v + 4.0).max(5.0);
        let s_t = s_e + look;
        let target = road.frenet_to_point(s_t, w.path.d(s_t));
        let local = ego.inverse_transform_point(target);
        let kappa = 2.0 * local.y / (local.x * local.x + local.y * local.y);
        let yaw_rate = (v * kappa).clamp(-cfg.max_yaw_rate, cfg.max_yaw_rate);

        // ego longitudinal: gap regulation against the nearest obstacle on the path
        let mut lead: Option<(f64, f64)> = None;
        let mut consider = |gap: f64, vl: f64| {
            if lead.is_none_or(|(g, _)| gap < g) {
                lead = Some((gap, vl));
            }
        };
        for a in &w.agents {
            if k < a.valid_from || k >= a.valid_to {
                continue;
            }
            if a.crossing() {
                let Behavior::Cross { v: vd } = a.behavior else { unreachable!() };
                let centre = w.path.d(a.s);
                let margin = 0.5 * cfg.ego_width + 1.0 + 0.5 * a.length;
                let (lo, hi) = (centre - margin, centre + margin);
                let cleared = if vd > 0.0 { a.d > hi } else { a.d < lo };
                let soon = if vd > 0.0 { a.d + vd * 4.0 >= lo } else { a.d + vd * 4.0 <= hi };
                let stop_at = a.s - 0.5 * a.width - 1.5;
                let ego_front = s_e + 0.5 * cfg.ego_length;
                if !cleared && soon && ego_front < a.s - 0.5 * a.width {
                    consider(stop_at - ego_front, 0.0);
                }
                continue;
            }
            if a.s <= s_e {
                continue;
            }
            let band = 0.5 * (cfg.ego_width + a.width) + 0.4;
            if (a.d - w.path.d(a.s)).abs() < band {
                consider(a.s - s_e - 0.5 * (cfg.ego_length + a.s_extent()), a.s_rate());
            }
        }
        let acc = idm(v, v0_eff, lead).clamp(-cfg.max_decel, cfg.max_accel);
        let v_new = (v + acc * DT).clamp(0.0, cfg.max_speed);
        let yaw_mid = ego.yaw + 0.5 * yaw_rate * DT;
        let v_avg = 0.5 * (v + v_new);
        ego = Pose2D::new(
            ego.x + v_avg * yaw_mid.cos() * DT,
            ego.y + v_avg * yaw_mid.sin() * DT,
            ego.yaw + yaw_rate * DT,
        );
        v = v_new;
        last_yaw_rate = yaw_rate;

        // agents
        let snapshot: Vec<(f64, f64, f64, f64, f64, bool)> = w
            .agents
            .iter()
            .map(|a| (a.s, a.d, a.s_rate(), a.s_extent(), a.width, a.crossing()))
            .collect();
        for (i, a) in w.agents.iter_mut().enumerate() {
            let leader = |s: f64, d: f64, width: f64, len: f64| -> Option<(f64, f64)> {
                let mut best: Option<(f64, f64)> = None;
                for (j, &(sj, dj, vj, lj, wj, cj)) in snapshot.iter().enumerate() {
                    if j == i || cj || sj <= s || (dj - d).abs() >= 0.5 * (width + wj) + 0.3 {
                        continue;
                    }
                    let gap = sj - s - 0.5 * (len + lj);
                    if best.is_none_or(|(g, _)| gap < g) {
                        best = Some((gap, vj));
                    }
                }
                if s_e > s && (d_e - d).abs() < 0.5 * (width + cfg.ego_width) + 0.3 {
                    let gap = s_e - s - 0.5 * (len + cfg.ego_length);
                    if best.is_none_or(|(g, _)| gap < g) {
                        best = Some((gap, v));
                    }
                }
                best
            };
            let d_prev = a.d;
            match a.behavior.clone() {
                Behavior::Lane { v0 } => {
                    let acc = idm(a.v, v0, leader(a.s, a.d, a.width, a.length)).clamp(-8.0, 3.0);
                    let vn = (a.v + acc * DT).max(0.0);
                    a.s += 0.5 * (a.v + vn) * DT;
                    a.v = vn;
                }
                Behavior::Schedule { v1, v2, t_change, rate } => {
                    let target = if t < t_change { v1 } else { v2 };
                    let acc = ((target - a.v) / DT).clamp(-rate, rate);
                    let vn = (a.v + acc * DT).max(0.0);
                    a.s += 0.5 * (a.v + vn) * DT;
                    a.v = vn;
                }
                Behavior::Brake { v0, t_brake, decel } => {
                    let acc = if t < t_brake { ((v0 - a.v) / DT).clamp(-1.0, 1.0) } else { -decel };
                    let vn = (a.v + acc * DT).max(0.0);
                    a.s += 0.5 * (a.v + vn) * DT;
                    a.v = vn;
                }
                Behavior::CutIn { v0, d_from, d_to, t_start, duration } => {
                    let acc = idm(a.v, v0, leader(a.s, a.d, a.width, a.length)).clamp(-8.0, 3.0);
                    let vn = (a.v + acc * DT).max(0.0);
                    a.s += 0.5 * (a.v + vn) * DT;
                    a.v = vn;
                    let u = ((t + DT - t_start) / duration).clamp(0.0, 1.0);
                    a.d = d_from + (d_to - d_from) * 0.5 * (1.0 - (std::f64::consts::PI * u).cos());
                }
                Behavior::Static => {}
                Behavior::Walk { v } => a.s += v * DT,
                Behavior::Cross { v } => a.d += v * DT,
            }
            d_rates[i] = (a.d - d_prev) / DT;
        }
    }
    Rollout { ego: ego_rec, agents: agent_rec }
}

fn agent_pose(road: &Road, a: &Agent, r: &Rec) -> Pose2D {
    let rel = match a.behavior {
        Behavior::Cross { v } => FRAC_PI_2.copysign(v),
        Behavior::Walk { v } if v < 0.0 => std::f64::consts::PI,
        Behavior::Static | Behavior::Walk { .. } => 0.0,
        _ => {
            if r.s_rate > 0.3 {
                r.d_rate.atan2(r.s_rate)
            } else {
                0.0
            }
        }
    };
    road.frenet_to_pose(r.s, r.d, rel)
}

fn assemble(category: Category, seed: u64, w: &World, ro: &Rollout) -> Clip {
    let frame = ro.ego[CURRENT_STEP].0;
    let ego_history = ro.ego[..HISTORY_STEPS]
        .iter()
        .map(|(p, v, yr)| EgoState { pose: into_frame(&frame, p), speed: *v, yaw_rate: *yr })
        .collect();
    let ego_future = ro.ego[HISTORY_STEPS..].iter().map(|(p, _, _)| into_frame(&frame, p)).collect();
    let agents = w
        .agents
        .iter()
        .zip(&ro.agents)
        .map(|(a, recs)| {
            let poses: Vec<Pose2D> = recs.iter().map(|r| agent_pose(&w.road, a, r)).collect();
            let states = poses
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let r = &recs[k];
                    let next = poses.get(k + 1).unwrap_or(p);
                    let prev = if k > 0 { &poses[k - 1] } else { p };
                    let yaw_rate = if k + 1 < poses.len() {
                        normalize_angle(next.yaw - p.yaw) / DT
                    } else {
                        normalize_angle(p.yaw - prev.yaw) / DT
                    };
                    AgentState {
                        pose: into_frame(&frame, p),
                        speed: r.s_rate.hypot(r.d_rate),
                        yaw_rate,
                        valid: k >= a.valid_from && k < a.valid_to,
                    }
                })
                .collect();
            AgentTrack { agent_id: a.id, agent_type: a.kind, length: a.length, width: a.width, states }
        })
        .collect();
    let drivable = polygon_from(w.drivable.iter().map(|p| frame.inverse_transform_point(*p)).collect());
    let (s_now, _) = w.road.project(frame.position());
    let route = (0..=80)
        .map(|i| {
            let s = s_now - 10.0 + 2.0 * i as f64;
            into_frame(&frame, &w.road.frenet_to_pose(s, w.path.d(s), w.path.slope(s).atan()))
        })
        .collect();
    Clip {
        clip_id: format!("{}-{:016x}", category.name(), seed),
        category,
        seed,
        ego_history,
        ego_future,
        agents,
        drivable,
        route,
    }
}

fn ego_box(p: &Pose2D, cfg: &SimConfig) -> OrientedBox {
    OrientedBox::new(*p, cfg.ego_length, cfg.ego_width)
}

/// Rejects clips violating the expert-safety, kinematic or scripted-event guarantees.
fn verify(clip: &Clip, w: &World, ro: &Rollout, cfg: &SimConfig) -> bool {
    let poly: &Polygon = &clip.drivable;
    for (i, p) in clip.ego_future.iter().enumerate() {
        let b = ego_box(p, cfg);
        if !b.corners().iter().chain(std::iter::once(&p.position())).all(|c| point_in_polygon(poly, *c)) {
            return false;
        }
        for a in &clip.agents {
            if let Some(ab) = a.box_at(HISTORY_STEPS + i) {
                if boxes_intersect(&b, &ab) {
                    return false;
                }
            }
        }
    }
    let mut prev = Pose2D::IDENTITY;
    for p in &clip.ego_future {
        let d = DeltaPose::between(&prev, p);
        if d.dx.hypot(d.dy) > cfg.max_speed * DT + 1e-9 || d.dyaw.abs() > cfg.max_yaw_rate * DT + 1e-9 {
            return false;
        }
        prev = *p;
    }
    let end = TOTAL_STEPS - 1;
    match clip.category {
        Category::StopForVehicle => {
            let lead_stopped = ro.agents[0][end].s_rate == 0.0;
            ro.ego[end].1 < 0.5 && lead_stopped
        }
        Category::CutIn => {
            let idx = w.cut_in.expect("cut-in agent");
            let half = 0.5 * cfg.lane_width;
            let recs = &ro.agents[idx];
            recs[CURRENT_STEP].d >= half && recs[HISTORY_STEPS..].iter().any(|r| r.d < half)
        }
        _ => true,
    }
}

pub(super) fn generate(category: Category, seed: u64, cfg: &SimConfig) -> Result<Clip, SimError> {
    for attempt in 0..cfg.max_attempts {
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(&[&"sim", &category.name(), &seed, &attempt]));
        let mut world = build_world(category, rng, cfg);
        let ro = rollout(&mut world, cfg);
        let clip = assemble(category, seed, &world, &ro);
        if verify(&clip, &world, &ro, cfg) {
            return Ok(clip);
        }
    }
    Err(SimError::Exhausted { category, seed, attempts: cfg.max_attempts })
}
