//! Latent world model: agent windows, the encoder that compresses them into M tokens, and the
//! action-conditioned targets used for cold start and GT-LWM evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{ActionBlock, Codebook, CodecError, BLOCK_LEN};
use crate::geom::{box_corners, integrate, into_frame, OrientedBox, Pose2D};
use crate::nn::{Embedding, Graph, LayerNorm, Linear, Mask, MultiHeadAttention, NnError, ParamId, ParamStore, ResidualMlp, Tensor, Var};
use crate::sim::{AgentType, Clip, CURRENT_STEP, HISTORY_STEPS, TOTAL_STEPS};

/// Steps per LWM window (1.0 s at 10 Hz).
pub const WINDOW_STEPS: usize = BLOCK_LEN;
/// Raw per-step features: x, y, sin yaw, cos yaw, length, width, vx, vy, yaw rate.
pub const F: usize = 9;
/// Normalized corner coordinates appended by the encoder.
pub const CORNER_F: usize = 8;

const POS_NORM: f64 = 20.0;
const DIM_NORM: f64 = 5.0;
const VEL_NORM: f64 = 10.0;

#[derive(Debug, Error)]
pub enum LwmError {
    #[error("window starting at step {start} exceeds the {TOTAL_STEPS}-step clip horizon")]
    Horizon { start: usize },
    #[error("invalid LWM config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LwmConfig {
    /// Agents kept per window.
    pub n_agents: usize,
    /// Output tokens per state.
    pub m: usize,
    pub d_lwm: usize,
    pub mlp_blocks: usize,
}

impl Default for LwmConfig {
    fn default() -> Self {
        Self { n_agents: 64, m: 2, d_lwm: 64, mlp_blocks: 2 }
    }
}

impl LwmConfig {
    pub fn validate(&self) -> Result<(), LwmError> {
        if self.n_agents == 0 || self.m == 0 || self.d_lwm == 0 {
            return Err(LwmError::Config("n_agents, m and d_lwm must be positive".into()));
        }
        Ok(())
    }
}

/// N agent slots × 10 steps of raw features in a window frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentWindow {
    pub n: usize,
    /// `n * WINDOW_STEPS` rows, slot-major.
    pub features: Vec<[f64; F]>,
    pub valid: Vec<bool>,
    /// `None` marks an empty slot.
    pub types: Vec<Option<AgentType>>,
}

impl AgentWindow {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            features: vec![[0.0; F]; n * WINDOW_STEPS],
            valid: vec![false; n * WINDOW_STEPS],
            types: vec![None; n],
        }
    }

    pub fn slot_valid(&self, a: usize) -> bool {
        self.valid[a * WINDOW_STEPS..(a + 1) * WINDOW_STEPS].iter().any(|v| *v)
    }

    pub fn num_agents(&self) -> usize {
        (0..self.n).filter(|a| self.slot_valid(*a)).count()
    }
}

/// Features of one agent state expressed in `frame`.
pub fn agent_features(frame: &Pose2D, pose: &Pose2D, length: f64, width: f64, speed: f64, yaw_rate: f64) -> [f64; F] {
    let p = into_frame(frame, pose);
    let (s, c) = p.yaw.sin_cos();
    [p.x, p.y, s, c, length, width, speed * c, speed * s, yaw_rate]
}

/// Selects the `n` agents nearest to the frame origin and re-centres their states for steps
/// `start..start + 10` into `frame`. Distance is measured at each agent's first valid step in the
/// window; ties break by agent id.
pub fn build_agent_window(clip: &Clip, frame: &Pose2D, start: usize, n: usize) -> Result<AgentWindow, LwmError> {
    if start + WINDOW_STEPS > TOTAL_STEPS {
        return Err(LwmError::Horizon { start });
    }
    let mut cands: Vec<(f64, u64, usize)> = Vec::new();
    for (i, a) in clip.agents.iter().enumerate() {
        let first = (start..start + WINDOW_STEPS).find(|&s| a.states[s].valid);
        if let Some(s) = first {
            let p = frame.inverse_transform_point(a.states[s].pose.position());
            cands.push((p.x.hypot(p.y), a.agent_id, i));
        }
    }
    cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut w = AgentWindow::empty(n);
    for (slot, &(_, _, i)) in cands.iter().take(n).enumerate() {
        let a = &clip.agents[i];
        w.types[slot] = Some(a.agent_type);
        for t in 0..WINDOW_STEPS {
            let st = &a.states[start + t];
            if st.valid {
                w.features[slot * WINDOW_STEPS + t] = agent_features(frame, &st.pose, a.length, a.width, st.speed, st.yaw_rate);
                w.valid[slot * WINDOW_STEPS + t] = true;
            }
        }
    }
    Ok(w)
}

/// History window ending at the current time, in the current ego frame.
pub fn history_window(clip: &Clip, n: usize) -> AgentWindow {
    build_agent_window(clip, &Pose2D::IDENTITY, CURRENT_STEP + 1 - WINDOW_STEPS, n).expect("history window in range")
}

/// Window of future block `t` re-centred at `frame`.
pub fn future_window(clip: &Clip, t: usize, frame: &Pose2D, n: usize) -> Result<AgentWindow, LwmError> {
    build_agent_window(clip, frame, HISTORY_STEPS + t * BLOCK_LEN, n)
}

/// Integrates a block's Δ-poses from `start`; returns the 10 poses.
pub fn block_poses(block: &ActionBlock, codebook: &Codebook, start: &Pose2D) -> Result<Vec<Pose2D>, LwmError> {
    Ok(codebook.decode(&block.0, start)?)
}

/// Window and end pose for block `t` of a proposal starting at `start`.
pub fn target_window_for_block(
    clip: &Clip,
    t: usize,
    block: &ActionBlock,
    codebook: &Codebook,
    start: &Pose2D,
    n: usize,
) -> Result<(AgentWindow, Pose2D), LwmError> {
    if HISTORY_STEPS + (t + 1) * BLOCK_LEN > TOTAL_STEPS {
        return Err(LwmError::Horizon { start: HISTORY_STEPS + t * BLOCK_LEN });
    }
    let poses = integrate(start, &codebook.lookup(&block.0)?).map_err(CodecError::from)?;
    let end = *poses.last().expect("10 poses");
    Ok((future_window(clip, t, &end, n)?, end))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LwmState {
    /// M × d_lwm.
    pub tokens: Tensor,
}

#[derive(Debug, Clone)]
pub struct LwmEncoder {
    pub cfg: LwmConfig,
    input: Linear,
    time_emb: Embedding,
    type_emb: Embedding,
    blocks: Vec<ResidualMlp>,
    pool_query: ParamId,
    pool_attn: MultiHeadAttention,
    queries: ParamId,
    null: ParamId,
    agent_attn: MultiHeadAttention,
    out_ln: LayerNorm,
}

fn normalized_row(f: &[f64; F]) -> [f64; F + CORNER_F] {
    let yaw = f[2].atan2(f[3]);
    let b = OrientedBox::new(Pose2D { x: f[0], y: f[1], yaw }, f[4], f[5]);
    let mut out = [0.0; F + CORNER_F];
    out[0] = f[0] / POS_NORM;
    out[1] = f[1] / POS_NORM;
    out[2] = f[2];
    out[3] = f[3];
    out[4] = f[4] / DIM_NORM;
    out[5] = f[5] / DIM_NORM;
    out[6] = f[6] / VEL_NORM;
    out[7] = f[7] / VEL_NORM;
    out[8] = f[8];
    for (k, c) in box_corners(&b).iter().enumerate() {
        out[F + 2 * k] = c.x / POS_NORM;
        out[F + 2 * k + 1] = c.y / POS_NORM;
    }
    out
}

impl LwmEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &LwmConfig, rng: &mut impl Rng) -> Result<Self, LwmError> {
        cfg.validate()?;
        let d = cfg.d_lwm;
        let p = |s: &str| format!("{prefix}.{s}");
        Ok(Self {
            cfg: cfg.clone(),
            input: Linear::new(store, &p("input"), F + CORNER_F, d, rng)?,
            time_emb: Embedding::new(store, &p("time_emb"), WINDOW_STEPS, d, rng)?,
            type_emb: Embedding::new(store, &p("type_emb"), AgentType::COUNT, d, rng)?,
            blocks: (0..cfg.mlp_blocks)
                .map(|i| ResidualMlp::new(store, &p(&format!("res{i}")), d, rng))
                .collect::<Result<_, _>>()?,
            pool_query: store.add(&p("pool_query"), Tensor::randn(1, d, 0.5, rng))?,
            pool_attn: MultiHeadAttention::new(store, &p("pool_attn"), d, 1, rng)?,
            queries: store.add(&p("queries"), Tensor::randn(cfg.m, d, 0.5, rng))?,
            null: store.add(&p("null"), Tensor::randn(1, d, 0.5, rng))?,
            agent_attn: MultiHeadAttention::new(store, &p("agent_attn"), d, 1, rng)?,
            out_ln: LayerNorm::new(store, &p("out_ln"), d)?,
        })
    }

    /// Encodes a window into an M × d_lwm node. Fully masked agents and invalid steps are skipped.
    pub fn encode(&self, g: &mut Graph, w: &AgentWindow) -> Result<Var, LwmError> {
        let d = self.cfg.d_lwm;
        let mut rows = Vec::new();
        let mut steps = Vec::new();
        let mut types = Vec::new();
        let mut group = Vec::new();
        let mut agents = 0;
        for a in 0..w.n {
            if !w.slot_valid(a) {
                continue;
            }
            let ty = w.types[a].map(AgentType::index);
            for t in 0..WINDOW_STEPS {
                if w.valid[a * WINDOW_STEPS + t] {
                    rows.extend_from_slice(&normalized_row(&w.features[a * WINDOW_STEPS + t]));
                    steps.push(Some(t));
                    types.push(ty);
                    group.push(agents);
                }
            }
            agents += 1;
        }
        let keys = if agents > 0 {
            let x = g.constant(Tensor::new(steps.len(), F + CORNER_F, rows)?);
            let x = self.input.forward(g, x)?;
            let te = self.time_emb.forward(g, &steps)?;
            let ye = self.type_emb.forward(g, &types)?;
            let x = g.add(x, te)?;
            let mut x = g.add(x, ye)?;
            for b in &self.blocks {
                x = b.forward(g, x)?;
            }
            let pq = g.param(self.pool_query);
            let q = g.rows(pq, &vec![0; agents])?;
            let mask = Mask::Groups { queries: (0..agents).collect(), keys: group };
            self.pool_attn.forward(g, q, x, &mask)?
        } else {
            g.param(self.null)
        };
        debug_assert_eq!(g.shape(keys).1, d);
        let q = g.param(self.queries);
        let out = self.agent_attn.forward(g, q, keys, &Mask::None)?;
        Ok(self.out_ln.forward(g, out)?)
    }

    /// Tape-free convenience wrapper.
    pub fn encode_state(&self, store: &ParamStore, w: &AgentWindow) -> Result<LwmState, LwmError> {
        let mut g = Graph::new(store);
        let v = self.encode(&mut g, w)?;
        Ok(LwmState { tokens: g.value(v).clone() })
    }
}

/// Target state for block `t` and the end pose for chaining into block `t + 1`.
pub fn lwm_target_for_block(
    clip: &Clip,
    t: usize,
    block: &ActionBlock,
    codebook: &Codebook,
    start: &Pose2D,
    enc: &LwmEncoder,
    store: &ParamStore,
) -> Result<(LwmState, Pose2D), LwmError> {
    let (w, end) = target_window_for_block(clip, t, block, codebook, start, enc.cfg.n_agents)?;
    Ok((enc.encode_state(store, &w)?, end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{DeltaPose, Point2, Polygon};
    use crate::sim::{AgentState, AgentTrack, Category, EgoState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn static_clip(agents: &[(f64, f64)]) -> Clip {
        let ego = EgoState { pose: Pose2D::IDENTITY, speed: 0.0, yaw_rate: 0.0 };
        Clip {
            clip_id: "t".into(),
            category: Category::LaneKeepingStraight,
            seed: 0,
            ego_history: vec![ego; HISTORY_STEPS],
            ego_future: vec![Pose2D::IDENTITY; 64],
            agents: agents
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| AgentTrack {
                    agent_id: i as u64,
                    agent_type: AgentType::Static,
                    length: 4.0,
                    width: 2.0,
                    states: vec![
                        AgentState { pose: Pose2D::new(x, y, 0.0), speed: 0.0, yaw_rate: 0.0, valid: true };
                        TOTAL_STEPS
                    ],
                })
                .collect(),
            drivable: Polygon::new(vec![
                Point2::new(-50.0, -10.0),
                Point2::new(100.0, -10.0),
                Point2::new(100.0, 10.0),
                Point2::new(-50.0, 10.0),
            ])
            .unwrap(),
            route: vec![],
        }
    }

    #[test]
    fn empty_scene_is_fully_masked() {
        let w = build_agent_window(&static_clip(&[]), &Pose2D::IDENTITY, 0, 8).unwrap();
        assert!(w.valid.iter().all(|v| !v));
        assert_eq!(w.num_agents(), 0);
    }

    #[test]
    fn recentring() {
        let clip = static_clip(&[(15.0, 0.0)]);
        let w = build_agent_window(&clip, &Pose2D::new(10.0, 0.0, 0.0), 20, 4).unwrap();
        for t in 0..WINDOW_STEPS {
            assert!((w.features[t][0] - 5.0).abs() < 1e-12 && w.features[t][1].abs() < 1e-12);
        }
    }

    #[test]
    fn advancing_block_recentres_agent() {
        let clip = static_clip(&[(15.0, 0.0)]);
        let cb = Codebook {
            codes: vec![DeltaPose::new(1.0, 0.0, 0.0)],
            feature_scales: [1.0; 3],
            fit_seed: 0,
            data_hash: [0; 32],
            objective: vec![],
        };
        let (w, end) = target_window_for_block(&clip, 0, &ActionBlock([0; 10]), &cb, &Pose2D::IDENTITY, 4).unwrap();
        assert!((end.x - 10.0).abs() < 1e-12);
        assert!((w.features[0][0] - 5.0).abs() < 1e-12);
        assert!(target_window_for_block(&clip, 6, &ActionBlock([0; 10]), &cb, &Pose2D::IDENTITY, 4).is_err());
    }

    #[test]
    fn selection_keeps_nearest() {
        let pts: Vec<(f64, f64)> = (0..20).map(|i| (30.0 - i as f64 * 1.5, 0.5 * i as f64)).collect();
        let w = build_agent_window(&static_clip(&pts), &Pose2D::IDENTITY, 0, 5).unwrap();
        let mut d: Vec<f64> = pts.iter().map(|(x, y)| x.hypot(*y)).collect();
        d.sort_by(f64::total_cmp);
        for (s, want) in d.iter().take(5).enumerate() {
            let f = w.features[s * WINDOW_STEPS];
            assert!((f[0].hypot(f[1]) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn null_state_and_mask_sensitivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cfg = LwmConfig { n_agents: 4, m: 2, d_lwm: 8, mlp_blocks: 1 };
        let enc = LwmEncoder::new(&mut store, "lwm", &cfg, &mut rng).unwrap();
        let empty = enc.encode_state(&store, &AgentWindow::empty(4)).unwrap();
        assert_eq!(empty.tokens.shape(), (2, 8));
        assert!(empty.tokens.is_finite());
        assert_eq!(empty, enc.encode_state(&store, &AgentWindow::empty(4)).unwrap());

        let one = build_agent_window(&static_clip(&[(8.0, 1.0)]), &Pose2D::IDENTITY, 0, 4).unwrap();
        let two = build_agent_window(&static_clip(&[(8.0, 1.0), (20.0, -3.0)]), &Pose2D::IDENTITY, 0, 4).unwrap();
        let a = enc.encode_state(&store, &one).unwrap();
        let b = enc.encode_state(&store, &two).unwrap();
        assert!(a.tokens.max_abs_diff(&b.tokens) > 1e-9);
    }
}
