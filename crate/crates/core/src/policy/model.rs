use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layout::{special_id, ObsLayout, Role, SequenceLayout, Slot, EOR, NUM_SPECIAL, SEP};
use super::{Mode, PolicyError};
use crate::binio::sha256;
use crate::codec::{Codebook, TokenId, BLOCK_LEN, MAX_BLOCKS};
use crate::geom::DeltaPose;
use crate::lwm::{history_window, AgentWindow, LwmConfig, LwmEncoder, LwmState};
use crate::nn::{Embedding, Graph, LayerNorm, Linear, Mask, Mlp, ParamStore, Tensor, TransformerBlock, Var};
use crate::sim::{Clip, FUTURE_STEPS, HISTORY_STEPS};

pub const ROUTE_TOKENS: usize = 2;
pub const EGO_TOKENS: usize = 2;
const ROUTE_SAMPLES: usize = 20;
const ROUTE_F: usize = 4 * ROUTE_SAMPLES;
const EGO_STEP_F: usize = 9;
const EGO_F: usize = EGO_STEP_F * HISTORY_STEPS / EGO_TOKENS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub lwm_head_hidden: usize,
    /// Size of the branch embedding table; B must not exceed it.
    pub max_branches: usize,
    pub lwm: LwmConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { d_model: 128, layers: 4, heads: 4, lwm_head_hidden: 128, max_branches: 4, lwm: LwmConfig::default() }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.d_model == 0 || self.layers == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(PolicyError::Config(format!(
                "d_model {} must be positive and divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.max_branches == 0 || self.lwm_head_hidden == 0 {
            return Err(PolicyError::Config("max_branches and lwm_head_hidden must be positive".into()));
        }
        self.lwm.validate()?;
        Ok(())
    }

    pub fn obs_layout(&self) -> ObsLayout {
        ObsLayout { scene: self.lwm.m, route: ROUTE_TOKENS, ego: EGO_TOKENS }
    }
}

/// Vectorized observation of one clip: history agent window, route samples, ego kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub window: AgentWindow,
    pub route: Tensor,
    pub ego: Tensor,
}

impl Observation {
    pub fn from_clip(clip: &Clip, n_agents: usize) -> Self {
        let mut route = Vec::with_capacity(ROUTE_TOKENS * ROUTE_F);
        let stride = (clip.route.len() / (ROUTE_TOKENS * ROUTE_SAMPLES)).max(1);
        for i in 0..ROUTE_TOKENS * ROUTE_SAMPLES {
            let p = clip.route[(i * stride).min(clip.route.len() - 1)];
            route.extend_from_slice(&[p.x / 50.0, p.y / 10.0, p.yaw.sin(), p.yaw.cos()]);
        }
        let mut ego = Vec::with_capacity(EGO_TOKENS * EGO_F);
        for (i, s) in clip.ego_history.iter().enumerate() {
            let d = if i == 0 { DeltaPose::ZERO } else { DeltaPose::between(&clip.ego_history[i - 1].pose, &s.pose) };
            ego.extend_from_slice(&[
                s.pose.x / 20.0,
                s.pose.y / 5.0,
                s.pose.yaw.sin(),
                s.pose.yaw.cos(),
                s.speed / 10.0,
                s.yaw_rate,
                d.dx / 2.0,
                d.dy * 5.0,
                d.dyaw * 10.0,
            ]);
        }
        Self {
            window: history_window(clip, n_agents),
            route: Tensor { rows: ROUTE_TOKENS, cols: ROUTE_F, data: route },
            ego: Tensor { rows: EGO_TOKENS, cols: EGO_F, data: ego },
        }
    }
}

/// Teacher-forcing inputs. LWM states are graph nodes so GT encodings can carry gradient.
pub struct SeqInputs<'a> {
    pub obs: &'a Observation,
    pub lwm0: Option<Var>,
    /// B·K states in branch-major order.
    pub blocks: Vec<Var>,
    /// B·K·10 proposal tokens in branch-major order.
    pub proposals: Vec<TokenId>,
    pub finals: Vec<TokenId>,
}

/// Per-slot embedding indices; the same sum is formed by the tape and the incremental decoder.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SlotIds {
    pub content: Option<usize>,
    pub tok: Option<usize>,
    pub step: Option<usize>,
    pub role: usize,
    pub branch: Option<usize>,
    pub lwm_pos: Option<usize>,
    pub obs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub cfg: PolicyConfig,
    /// Action vocabulary size V; logits cover V + NUM_SPECIAL.
    pub vocab: usize,
    pub scene_enc: LwmEncoder,
    pub lwm_enc: LwmEncoder,
    pub(super) scene_proj: Linear,
    pub(super) route_in: Linear,
    pub(super) ego_in: Linear,
    pub(super) lwm_proj: Linear,
    pub(super) tok_emb: Embedding,
    pub(super) step_emb: Embedding,
    pub(super) role_emb: Embedding,
    pub(super) branch_emb: Embedding,
    pub(super) lwm_pos_emb: Embedding,
    pub(super) obs_emb: Embedding,
    pub(super) blocks: Vec<TransformerBlock>,
    pub(super) ln_f: LayerNorm,
    pub(super) head: Linear,
    pub(super) lwm_head: Mlp,
}

impl Policy {
    pub fn new(cfg: &PolicyConfig, vocab: usize, rng: &mut impl Rng) -> Result<(Self, ParamStore), PolicyError> {
        cfg.validate()?;
        if vocab == 0 {
            return Err(PolicyError::Config("vocabulary must be non-empty".into()));
        }
        let mut s = ParamStore::new();
        let d = cfg.d_model;
        let dl = cfg.lwm.d_lwm;
        let m = cfg.lwm.m;
        let obs = cfg.obs_layout();
        let p = Self {
            cfg: cfg.clone(),
            vocab,
            scene_enc: LwmEncoder::new(&mut s, "scene", &cfg.lwm, rng)?,
            lwm_enc: LwmEncoder::new(&mut s, "lwm", &cfg.lwm, rng)?,
            scene_proj: Linear::new(&mut s, "obs.scene_proj", dl, d, rng)?,
            route_in: Linear::new(&mut s, "obs.route", ROUTE_F, d, rng)?,
            ego_in: Linear::new(&mut s, "obs.ego", EGO_F, d, rng)?,
            lwm_proj: Linear::new(&mut s, "lwm_proj", dl, d, rng)?,
            tok_emb: Embedding::new(&mut s, "emb.tok", vocab + NUM_SPECIAL, d, rng)?,
            step_emb: Embedding::new(&mut s, "emb.step", FUTURE_STEPS, d, rng)?,
            role_emb: Embedding::new(&mut s, "emb.role", Role::COUNT, d, rng)?,
            branch_emb: Embedding::new(&mut s, "emb.branch", cfg.max_branches, d, rng)?,
            lwm_pos_emb: Embedding::new(&mut s, "emb.lwm_pos", (MAX_BLOCKS + 1) * m, d, rng)?,
            obs_emb: Embedding::new(&mut s, "emb.obs", obs.len(), d, rng)?,
            blocks: (0..cfg.layers)
                .map(|i| TransformerBlock::new(&mut s, &format!("blocks.{i}"), d, cfg.heads, rng))
                .collect::<Result<_, _>>()?,
            ln_f: LayerNorm::new(&mut s, "ln_f", d)?,
            head: Linear::with_std(&mut s, "head", d, vocab + NUM_SPECIAL, 0.5 / (d as f64).sqrt(), rng)?,
            lwm_head: Mlp::new(&mut s, "lwm_head", d, cfg.lwm_head_hidden, m * dl, rng)?,
        };
        Ok((p, s))
    }

    /// Re-initializes the action rows of the token table as a random linear map of the
    /// standardized code values, so nearby motions start with nearby embeddings, and aligns the
    /// output head with them.
    pub fn seed_action_embeddings(&self, store: &mut ParamStore, codebook: &Codebook, rng: &mut impl Rng) -> Result<(), PolicyError> {
        if codebook.len() != self.vocab {
            return Err(PolicyError::Config(format!("codebook has {} codes, policy vocabulary is {}", codebook.len(), self.vocab)));
        }
        let d = self.cfg.d_model;
        let basis = Tensor::randn(3, d, 0.5, rng);
        let noise = Tensor::randn(self.vocab, d, 0.1, rng);
        let z: Vec<[f64; 3]> = codebook
            .codes
            .iter()
            .map(|c| {
                let a = c.to_array();
                [0, 1, 2].map(|k| a[k] / codebook.feature_scales[k])
            })
            .collect();
        let mean = [0, 1, 2].map(|k| z.iter().map(|v| v[k]).sum::<f64>() / z.len() as f64);
        let table = store.value_mut(self.tok_emb.table);
        for (v, zv) in z.iter().enumerate() {
            let row = table.row_slice_mut(v);
            for (c, x) in row.iter_mut().enumerate() {
                *x = noise.get(v, c) + (0..3).map(|k| (zv[k] - mean[k]) * basis.get(k, c)).sum::<f64>();
            }
        }
        // Output columns start aligned with the input rows, so repeating the last motion is the
        // initial preference.
        let emb = table.clone();
        let rms = (emb.data[..self.vocab * d].iter().map(|x| x * x).sum::<f64>() / (self.vocab * d) as f64).sqrt();
        let head = store.value_mut(self.head.w);
        let cols = head.cols;
        for v in 0..self.vocab {
            for c in 0..d {
                head.data[c * cols + v] = emb.get(v, c) / (rms * (d as f64).sqrt());
            }
        }
        Ok(())
    }

    /// Digest of the architecture; checkpoints carry it.
    pub fn config_hash(&self) -> [u8; 32] {
        let j = serde_json::to_vec(&(&self.cfg, self.vocab)).expect("config serializes");
        sha256(&j)
    }

    pub fn layout(&self, mode: Mode, k: usize, b: usize) -> Result<SequenceLayout, PolicyError> {
        if mode == Mode::LatentCot && b > self.cfg.max_branches {
            return Err(PolicyError::Layout(format!("B={b} exceeds max_branches {}", self.cfg.max_branches)));
        }
        SequenceLayout::new(mode, k, b, self.cfg.lwm.m, self.cfg.obs_layout())
    }

    pub fn observe(&self, clip: &Clip) -> Observation {
        Observation::from_clip(clip, self.cfg.lwm.n_agents)
    }

    /// Embedding indices for a slot; `tok` is the action token at discrete action slots.
    /// `content` indexes observation rows first, then LWM rows in slot order.
    pub fn slot_ids(&self, layout: &SequenceLayout, slot: Slot, tok: Option<TokenId>) -> SlotIds {
        let m = layout.m;
        let n_obs = layout.obs.len();
        let mut ids = SlotIds::default();
        match slot {
            Slot::Obs(i) => {
                ids.content = Some(i);
                ids.role = layout.obs.role(i).index();
                ids.obs = Some(i);
            }
            Slot::Sep => {
                ids.tok = Some(special_id(self.vocab, SEP) as usize);
                ids.role = Role::Sep.index();
            }
            Slot::Eor => {
                ids.tok = Some(special_id(self.vocab, EOR) as usize);
                ids.role = Role::Eor.index();
            }
            Slot::Lwm0 { m: j } => {
                ids.content = Some(n_obs + j);
                ids.role = Role::Lwm0.index();
                ids.lwm_pos = Some(j);
            }
            Slot::Lwm { branch, block, m: j } => {
                ids.content = Some(n_obs + m + (branch * layout.k + block) * m + j);
                ids.role = Role::Lwm.index();
                ids.lwm_pos = Some((block + 1) * m + j);
                ids.branch = Some(branch);
            }
            Slot::Action { branch, block, j } => {
                ids.tok = tok.map(|t| t as usize);
                ids.step = Some(block * BLOCK_LEN + j);
                ids.role = Role::Proposal.index();
                ids.branch = Some(branch);
            }
            Slot::Final(i) => {
                ids.tok = tok.map(|t| t as usize);
                ids.step = Some(i);
                ids.role = Role::Final.index();
            }
        }
        ids
    }

    /// Observation rows (n_obs × d_model) on the tape.
    pub fn obs_rows(&self, g: &mut Graph, obs: &Observation) -> Result<Var, PolicyError> {
        let scene = self.scene_enc.encode(g, &obs.window)?;
        let scene = self.scene_proj.forward(g, scene)?;
        let route = g.constant(obs.route.clone());
        let route = self.route_in.forward(g, route)?;
        let ego = g.constant(obs.ego.clone());
        let ego = self.ego_in.forward(g, ego)?;
        Ok(g.concat_rows(&[scene, route, ego])?)
    }

    /// Tape-free observation rows.
    pub fn obs_tensor(&self, store: &ParamStore, obs: &Observation) -> Result<Tensor, PolicyError> {
        let mut g = Graph::new(store);
        let v = self.obs_rows(&mut g, obs)?;
        Ok(g.value(v).clone())
    }

    /// Input embeddings for every slot of `layout`.
    fn embed(&self, g: &mut Graph, layout: &SequenceLayout, x: &SeqInputs) -> Result<Var, PolicyError> {
        let want_lwm = layout.mode != Mode::None;
        if want_lwm != x.lwm0.is_some() || x.blocks.len() != layout.k * layout.b {
            return Err(PolicyError::Layout(format!(
                "LWM inputs (lwm0: {}, blocks: {}) do not fit layout {:?} K={} B={}",
                x.lwm0.is_some(),
                x.blocks.len(),
                layout.mode,
                layout.k,
                layout.b
            )));
        }
        if x.proposals.len() != layout.k * layout.b * BLOCK_LEN || x.finals.len() > FUTURE_STEPS {
            return Err(PolicyError::Layout(format!(
                "{} proposal and {} final tokens for K={} B={}",
                x.proposals.len(),
                x.finals.len(),
                layout.k,
                layout.b
            )));
        }
        if let Some(t) = x.proposals.iter().chain(&x.finals).find(|t| **t as usize >= self.vocab) {
            return Err(PolicyError::Layout(format!("token {t} outside the action vocabulary {}", self.vocab)));
        }
        let slots = layout.slots();
        let n = layout.final_slot(0) + x.finals.len();
        let mut ids = Vec::with_capacity(n);
        for &s in &slots[..n] {
            let tok = match s {
                Slot::Action { branch, block, j } => Some(x.proposals[(branch * layout.k + block) * BLOCK_LEN + j]),
                Slot::Final(i) => Some(x.finals[i]),
                _ => None,
            };
            ids.push(self.slot_ids(layout, s, tok));
        }
        let mut content = vec![self.obs_rows(g, x.obs)?];
        if let Some(l0) = x.lwm0 {
            let mut states = vec![l0];
            states.extend(x.blocks.iter().copied());
            let st = g.concat_rows(&states)?;
            content.push(self.lwm_proj.forward(g, st)?);
        }
        let content = g.concat_rows(&content)?;
        let col = |f: fn(&SlotIds) -> Option<usize>| ids.iter().map(f).collect::<Vec<_>>();
        let mut h = g.gather(content, &col(|s| s.content))?;
        let parts = [
            (self.tok_emb, col(|s| s.tok)),
            (self.step_emb, col(|s| s.step)),
            (self.role_emb, col(|s| Some(s.role))),
            (self.branch_emb, col(|s| s.branch)),
            (self.lwm_pos_emb, col(|s| s.lwm_pos)),
            (self.obs_emb, col(|s| s.obs)),
        ];
        for (emb, idx) in parts {
            let e = emb.forward(g, &idx)?;
            h = g.add(h, e)?;
        }
        Ok(h)
    }

    /// Causal transformer over the layout prefix covered by `x` (finals may be partial).
    /// Returns final-norm hidden states, one row per slot.
    pub fn forward(&self, g: &mut Graph, layout: &SequenceLayout, x: &SeqInputs) -> Result<Var, PolicyError> {
        let mut h = self.embed(g, layout, x)?;
        for blk in &self.blocks {
            h = blk.forward(g, h, &Mask::Causal)?;
        }
        Ok(self.ln_f.forward(g, h)?)
    }

    /// Logits (rows × (V + S)) read from the given hidden rows.
    pub fn logits(&self, g: &mut Graph, hidden: Var, rows: &[usize]) -> Result<Var, PolicyError> {
        let h = g.rows(hidden, rows)?;
        Ok(self.head.forward(g, h)?)
    }

    /// f_phi: one hidden row → M × d_lwm.
    pub fn predict_lwm(&self, g: &mut Graph, hidden: Var, row: usize) -> Result<Var, PolicyError> {
        let h = g.rows(hidden, &[row])?;
        let y = self.lwm_head.forward(g, h)?;
        Ok(g.reshape(y, self.cfg.lwm.m, self.cfg.lwm.d_lwm)?)
    }

    pub fn predict_lwm_row(&self, store: &ParamStore, hidden: &[f64]) -> LwmState {
        let y = self.lwm_head.apply_row(store, hidden);
        LwmState { tokens: Tensor { rows: self.cfg.lwm.m, cols: self.cfg.lwm.d_lwm, data: y } }
    }

    /// Tape-free embedding of one slot given its projected content row (if any).
    pub(super) fn embed_row(&self, store: &ParamStore, ids: &SlotIds, content: Option<&[f64]>) -> Vec<f64> {
        let mut h = match content {
            Some(c) => c.to_vec(),
            None => vec![0.0; self.cfg.d_model],
        };
        let parts = [
            (self.tok_emb, ids.tok),
            (self.step_emb, ids.step),
            (self.role_emb, Some(ids.role)),
            (self.branch_emb, ids.branch),
            (self.lwm_pos_emb, ids.lwm_pos),
            (self.obs_emb, ids.obs),
        ];
        for (emb, i) in parts {
            match i {
                Some(i) => h.iter_mut().zip(emb.row(store, i)).for_each(|(a, b)| *a += b),
                None => h.iter_mut().for_each(|a| *a += 0.0),
            }
        }
        h
    }
}
