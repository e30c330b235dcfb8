//! Stage 0 supervised pretraining, Stage 1 latent-CoT cold start, Stage 2 GRPO.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::derive_seed;
use crate::codec::{slice_blocks, ActionBlock, Codebook, CodecError, TokenId, MAX_BLOCKS};
use crate::eval::{ade, EvalError};
use crate::geom::Pose2D;
use crate::lwm::{history_window, target_window_for_block, AgentWindow, LwmError};
use crate::nn::{cosine_lr, AdamW, CeItem, Grads, Graph, NnError, ParamStore, Var};
use crate::policy::{action_logits, replay_graph, rollout, Completion, LwmSource, Mode, Observation, Policy, PolicyError, SampleConfig, SeqInputs};
use crate::sim::{Clip, FUTURE_STEPS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("group advantages need G >= 2, got {0}")]
    GroupTooSmall(usize),
    #[error("stale rollout: sampled from parameter version {sampled}, store is at {current}")]
    StaleSnapshot { sampled: u64, current: u64 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Lwm(#[from] LwmError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub steps: usize,
    /// Examples per optimizer step.
    pub batch: usize,
    /// Peak learning rate, cosine-annealed to 0.
    pub lr: f64,
    pub grad_clip: f64,
    pub weight_decay: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { steps: 1000, batch: 16, lr: 4e-5, grad_clip: 1.0, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub steps: usize,
    /// Groups per update; effective batch is `groups_per_step · G` completions.
    pub groups_per_step: usize,
    /// Constant learning rate.
    pub lr: f64,
    pub grad_clip: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self { steps: 500, groups_per_step: 4, lr: 1e-6, grad_clip: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub lambda: f64,
    #[serde(rename = "G")]
    pub group: usize,
    pub temperature: f64,
    pub top_p: f64,
    /// Teacher samples drawn per training clip for cold start.
    pub cold_start_samples: usize,
    pub stage0: StageConfig,
    pub stage1: StageConfig,
    pub stage2: RlConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 5,
            b: 2,
            lambda: 0.1,
            group: 8,
            temperature: 0.6,
            top_p: 0.98,
            cold_start_samples: 1,
            stage0: StageConfig { steps: 2000, ..StageConfig::default() },
            stage1: StageConfig { steps: 1000, ..StageConfig::default() },
            stage2: RlConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |s: String| Err(TrainError::Config(s));
        if self.k > MAX_BLOCKS {
            return err(format!("K={} violates K*10 <= 64", self.k));
        }
        if self.b == 0 {
            return err("B must be at least 1".into());
        }
        if self.group < 2 {
            return err(format!("G={} violates G >= 2", self.group));
        }
        if !(self.lambda >= 0.0) {
            return err(format!("lambda={} violates lambda >= 0", self.lambda));
        }
        if !(self.temperature >= 0.0) || !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return err("temperature must be >= 0 and top_p in (0, 1]".into());
        }
        for (name, s) in [("stage0", &self.stage0), ("stage1", &self.stage1)] {
            if s.batch == 0 || !(s.lr >= 0.0) || !(s.grad_clip > 0.0) {
                return err(format!("{name}: batch must be positive, lr >= 0, grad_clip > 0"));
            }
        }
        if self.stage2.groups_per_step == 0 || !(self.stage2.lr >= 0.0) || !(self.stage2.grad_clip > 0.0) {
            return err("stage2: groups_per_step must be positive, lr >= 0, grad_clip > 0".into());
        }
        if self.cold_start_samples == 0 {
            return err("cold_start_samples must be positive".into());
        }
        Ok(())
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig { k: self.k, b: self.b, temperature: self.temperature, top_p: self.top_p }
    }
}

/// One row of a training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub l_token: f64,
    pub l_lwm: f64,
    pub mean_reward: f64,
}

pub fn metrics_csv(rows: &[StepMetrics]) -> String {
    let mut s = String::from("step,lr,loss,l_token,l_lwm,mean_reward\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6e},{:.8},{:.8},{:.8},{:.6}", r.step, r.lr, r.loss, r.l_token, r.l_lwm, r.mean_reward);
    }
    s
}

/// Loss node plus its logged parts.
pub struct LossParts {
    pub total: Var,
    pub l_token: f64,
    pub l_lwm: f64,
}

/// Expert tokens for every clip.
pub fn expert_tokens(clips: &[Clip], codebook: &Codebook) -> Result<Vec<Vec<TokenId>>, TrainError> {
    Ok(clips.iter().map(|c| codebook.encode(&c.ego_future)).collect::<Result<_, _>>()?)
}

/// Mean CE of the 64 expert tokens; `Lwm0` mode conditions on the encoded GT history.
pub fn stage0_loss(policy: &Policy, g: &mut Graph, obs: &Observation, finals: &[TokenId], mode: Mode) -> Result<LossParts, TrainError> {
    let layout = policy.layout(mode, 0, 0)?;
    let lwm0 = match layout.mode {
        Mode::None => None,
        _ => Some(policy.lwm_enc.encode(g, &obs.window)?),
    };
    let x = SeqInputs { obs, lwm0, blocks: Vec::new(), proposals: Vec::new(), finals: finals.to_vec() };
    let (logits, targets) = action_logits(policy, g, &layout, &x)?;
    let w = 1.0 / targets.len() as f64;
    let items: Vec<CeItem> = targets.iter().enumerate().map(|(row, &t)| CeItem { row, target: t as usize, weight: w }).collect();
    let total = g.cross_entropy(logits, &items, policy.vocab)?;
    let l_token = g.value(total).item();
    Ok(LossParts { total, l_token, l_lwm: 0.0 })
}

/// Runs `steps` optimizer steps; each step averages per-example gradients over a batch drawn
/// from a seeded epoch shuffle of `0..n`.
fn supervised_loop<F>(store: &mut ParamStore, n: usize, cfg: &StageConfig, seed: u64, loss: F) -> Result<Vec<StepMetrics>, TrainError>
where
    F: Fn(&mut Graph, usize) -> Result<LossParts, TrainError> + Sync,
{
    if n == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        while batch.len() < cfg.batch {
            if order.is_empty() {
                order = (0..n).collect();
                order.shuffle(&mut rng);
            }
            batch.push(order.pop().expect("refilled"));
        }
        let snapshot: &ParamStore = store;
        let parts = batch
            .par_iter()
            .map(|&i| {
                let mut g = Graph::new(snapshot);
                let p = loss(&mut g, i)?;
                let lv = g.value(p.total).item();
                Ok((g.backward(p.total)?, lv, p.l_token, p.l_lwm))
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        let mut grads = Grads::empty(store.len());
        let mut row = StepMetrics { step, lr: cosine_lr(cfg.lr, step, cfg.steps), loss: 0.0, l_token: 0.0, l_lwm: 0.0, mean_reward: 0.0 };
        let inv = 1.0 / batch.len() as f64;
        for (g, l, t, w) in &parts {
            grads.merge(g);
            row.loss += l * inv;
            row.l_token += t * inv;
            row.l_lwm += w * inv;
        }
        grads.scale(inv);
        grads.clip_norm(cfg.grad_clip);
        AdamW { lr: row.lr, weight_decay: cfg.weight_decay, ..AdamW::default() }.step(store, grads)?;
        log.push(row);
    }
    Ok(log)
}

/// Stage 0: supervised fit of the expert tokens with Reason = ∅ (`Mode::None`) or
/// Reason = [LWM0] from GT history (`Mode::Lwm0`). The caller keeps a frozen copy as teacher.
pub fn stage0_sft(
    policy: &Policy,
    store: &mut ParamStore,
    clips: &[Clip],
    codebook: &Codebook,
    mode: Mode,
    cfg: &StageConfig,
    seed: u64,
) -> Result<Vec<StepMetrics>, TrainError> {
    if mode == Mode::LatentCot {
        return Err(TrainError::Config("stage 0 trains without reasoning (mode none or lwm0)".into()));
    }
    let finals = expert_tokens(clips, codebook)?;
    let obs: Vec<Observation> = clips.iter().map(|c| policy.observe(c)).collect();
    supervised_loop(store, clips.len(), cfg, derive_seed(&[&"stage0", &mode, &seed]), |g, i| {
        stage0_loss(policy, g, &obs[i], &finals[i], mode)
    })
}

/// Teacher-forcing data for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ColdStartExample {
    pub clip_index: usize,
    /// B × K teacher proposal blocks.
    pub proposals: Vec<Vec<ActionBlock>>,
    /// GT history window behind the LWM0 target.
    pub lwm0_window: AgentWindow,
    /// B × K agent windows re-centred along each proposal; encoded into the LWM targets.
    pub lwm_windows: Vec<Vec<AgentWindow>>,
    /// Chained start pose of every block.
    pub block_starts: Vec<Vec<Pose2D>>,
    pub final_target: Vec<TokenId>,
}

/// Samples B teacher trajectories (LWM0-conditioned, GT history), slices each into K blocks and
/// builds the chained target windows.
#[allow(clippy::too_many_arguments)]
pub fn build_cold_start_example(
    clip_index: usize,
    clip: &Clip,
    teacher: &Policy,
    teacher_store: &ParamStore,
    codebook: &Codebook,
    cfg: &TrainConfig,
    n_agents: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ColdStartExample, TrainError> {
    let sample = SampleConfig { k: 0, b: 0, temperature: cfg.temperature, top_p: cfg.top_p };
    let mut proposals = Vec::with_capacity(cfg.b);
    let mut lwm_windows = Vec::with_capacity(cfg.b);
    let mut block_starts = Vec::with_capacity(cfg.b);
    for _ in 0..cfg.b {
        let c = rollout(teacher, teacher_store, codebook, clip, Mode::Lwm0, LwmSource::Gt, &sample, rng)?;
        let blocks = slice_blocks(&c.final_tokens, cfg.k)?;
        let mut pose = Pose2D::IDENTITY;
        let mut ws = Vec::with_capacity(cfg.k);
        let mut starts = Vec::with_capacity(cfg.k);
        for (t, a) in blocks.iter().enumerate() {
            starts.push(pose);
            let (w, end) = target_window_for_block(clip, t, a, codebook, &pose, n_agents)?;
            ws.push(w);
            pose = end;
        }
        proposals.push(blocks);
        lwm_windows.push(ws);
        block_starts.push(starts);
    }
    Ok(ColdStartExample {
        clip_index,
        proposals,
        lwm0_window: history_window(clip, n_agents),
        lwm_windows,
        block_starts,
        final_target: codebook.encode(&clip.ego_future)?,
    })
}

/// Builds `cold_start_samples` examples per clip with per-(clip, sample) seeds.
pub fn build_cold_start_set(
    clips: &[Clip],
    teacher: &Policy,
    teacher_store: &ParamStore,
    codebook: &Codebook,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<ColdStartExample>, TrainError> {
    let n_agents = teacher.cfg.lwm.n_agents;
    let jobs: Vec<(usize, usize)> = (0..clips.len()).flat_map(|i| (0..cfg.cold_start_samples).map(move |r| (i, r))).collect();
    jobs.par_iter()
        .map(|&(i, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[&"cold-start", &seed, &clips[i].clip_id, &r]));
            build_cold_start_example(i, &clips[i], teacher, teacher_store, codebook, cfg, n_agents, &mut rng)
        })
        .collect()
}

/// Stage-1 loss: mean token CE over proposals and finals plus λ · mean LWM squared error.
/// GT states enter the LWM slots through the trainee's encoder; the head regresses detached copies.
pub fn stage1_loss(policy: &Policy, g: &mut Graph, obs: &Observation, ex: &ColdStartExample, lambda: f64) -> Result<LossParts, TrainError> {
    let (b, k) = (ex.proposals.len(), ex.proposals.first().map_or(0, Vec::len));
    let layout = policy.layout(Mode::LatentCot, k, b)?;
    let lwm0 = policy.lwm_enc.encode(g, &ex.lwm0_window)?;
    let mut blocks = Vec::with_capacity(b * k);
    for w in ex.lwm_windows.iter().flatten() {
        blocks.push(policy.lwm_enc.encode(g, w)?);
    }
    let proposals: Vec<TokenId> = ex.proposals.iter().flatten().flat_map(|a| a.0).collect();
    let x = SeqInputs { obs, lwm0: Some(lwm0), blocks: blocks.clone(), proposals, finals: ex.final_target.clone() };
    let hidden = policy.forward(g, &layout, &x)?;
    let rows: Vec<usize> = layout.action_slots().iter().map(|(_, p)| p - 1).collect();
    let logits = policy.logits(g, hidden, &rows)?;
    let targets: Vec<TokenId> = x.proposals.iter().chain(&x.finals).copied().collect();
    let w = 1.0 / targets.len() as f64;
    let items: Vec<CeItem> = targets.iter().enumerate().map(|(row, &t)| CeItem { row, target: t as usize, weight: w }).collect();
    let l_token = g.cross_entropy(logits, &items, policy.vocab)?;
    let mut sites = vec![(layout.lwm0_site(), lwm0)];
    for br in 0..b {
        for t in 0..k {
            sites.push((layout.lwm_site(br, t), blocks[br * k + t]));
        }
    }
    let mut l_lwm: Option<Var> = None;
    for (site, target) in &sites {
        let pred = policy.predict_lwm(g, hidden, *site)?;
        let tgt = g.value(*target).clone();
        let e = g.mse(pred, &tgt)?;
        l_lwm = Some(match l_lwm {
            Some(acc) => g.add(acc, e)?,
            None => e,
        });
    }
    let l_lwm = g.scale(l_lwm.expect("LWM0 site always present"), 1.0 / sites.len() as f64);
    let (tv, lv) = (g.value(l_token).item(), g.value(l_lwm).item());
    // λ = 0 keeps f_phi off the tape entirely so it receives no update.
    let total = if lambda == 0.0 {
        l_token
    } else {
        let s = g.scale(l_lwm, lambda);
        g.add(l_token, s)?
    };
    Ok(LossParts { total, l_token: tv, l_lwm: lv })
}

/// Stage 1: teacher-forced cold start on prebuilt examples.
pub fn stage1_cold_start(
    policy: &Policy,
    store: &mut ParamStore,
    clips: &[Clip],
    examples: &[ColdStartExample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<StepMetrics>, TrainError> {
    let obs: Vec<Observation> = clips.iter().map(|c| policy.observe(c)).collect();
    supervised_loop(store, examples.len(), &cfg.stage1, derive_seed(&[&"stage1", &seed]), |g, i| {
        let ex = &examples[i];
        stage1_loss(policy, g, &obs[ex.clip_index], ex, cfg.lambda)
    })
}

/// Group-mean-centred rewards. Differences to the first reward are taken before averaging so a
/// common shift cancels exactly instead of surviving as rounding in the mean.
pub fn grpo_advantages(rewards: &[f64]) -> Result<Vec<f64>, TrainError> {
    if rewards.len() < 2 {
        return Err(TrainError::GroupTooSmall(rewards.len()));
    }
    let d: Vec<f64> = rewards.iter().map(|r| r - rewards[0]).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    Ok(d.iter().map(|x| x - mean).collect())
}

/// R = −ADE over the full horizon.
pub fn reward(c: &Completion, clip: &Clip) -> Result<f64, TrainError> {
    Ok(-ade(&c.trajectory, &clip.ego_future, FUTURE_STEPS)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoGroup {
    pub clip_index: usize,
    pub completions: Vec<Completion>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GrpoGroup {
    pub fn new(clip_index: usize, clip: &Clip, completions: Vec<Completion>) -> Result<Self, TrainError> {
        let rewards = completions.iter().map(|c| reward(c, clip)).collect::<Result<Vec<_>, _>>()?;
        let advantages = grpo_advantages(&rewards)?;
        Ok(Self { clip_index, completions, rewards, advantages })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrpoStats {
    pub loss: f64,
    pub mean_reward: f64,
    /// False when every advantage was zero and the store was left untouched.
    pub updated: bool,
}

/// One GRPO update: loss = mean over groups of (1/G)·Σ_j A_j · Σ_t −log π(x_t), discrete
/// tokens only, no KL term. Advantages are recomputed from the stored rewards.
pub fn grpo_step(
    policy: &Policy,
    store: &mut ParamStore,
    clips: &[Clip],
    groups: &[GrpoGroup],
    cfg: &RlConfig,
) -> Result<GrpoStats, TrainError> {
    if groups.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let current = store.version();
    for c in groups.iter().flat_map(|g| &g.completions) {
        if c.version != current {
            return Err(TrainError::StaleSnapshot { sampled: c.version, current });
        }
    }
    let mut jobs = Vec::new();
    let mut rsum = 0.0;
    let mut rn = 0usize;
    for grp in groups {
        let adv = grpo_advantages(&grp.rewards)?;
        let w = 1.0 / (grp.completions.len() as f64 * groups.len() as f64);
        rsum += grp.rewards.iter().sum::<f64>();
        rn += grp.rewards.len();
        for (c, a) in grp.completions.iter().zip(adv) {
            if a != 0.0 {
                jobs.push((grp.clip_index, c, a * w));
            }
        }
    }
    let mean_reward = rsum / rn as f64;
    if jobs.is_empty() {
        return Ok(GrpoStats { loss: 0.0, mean_reward, updated: false });
    }
    let snapshot: &ParamStore = store;
    let parts = jobs
        .par_iter()
        .map(|&(ci, c, w)| {
            let obs = policy.observe(&clips[ci]);
            let mut g = Graph::new(snapshot);
            let r = replay_graph(policy, &mut g, &obs, c)?;
            let items: Vec<CeItem> = r.targets.iter().enumerate().map(|(row, &t)| CeItem { row, target: t as usize, weight: w }).collect();
            let l = g.cross_entropy(r.logits, &items, policy.vocab)?;
            Ok((g.backward(l)?, g.value(l).item()))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let mut grads = Grads::empty(store.len());
    let mut loss = 0.0;
    for (g, l) in &parts {
        grads.merge(g);
        loss += l;
    }
    grads.clip_norm(cfg.grad_clip);
    AdamW { lr: cfg.lr, ..AdamW::default() }.step(store, grads)?;
    Ok(GrpoStats { loss, mean_reward, updated: true })
}

/// Rolls out a group of G completions for one clip against the current snapshot.
#[allow(clippy::too_many_arguments)]
pub fn rollout_group(
    policy: &Policy,
    store: &ParamStore,
    codebook: &Codebook,
    clips: &[Clip],
    clip_index: usize,
    mode: Mode,
    source: LwmSource,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GrpoGroup, TrainError> {
    let clip = &clips[clip_index];
    let sample = cfg.sample_config();
    let completions = (0..cfg.group)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[&seed, &clip.clip_id, &j]));
            rollout(policy, store, codebook, clip, mode, source, &sample, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    GrpoGroup::new(clip_index, clip, completions)
}

/// Stage 2: snapshot → G rollouts per sampled clip → centred advantages → one update, repeated.
#[allow(clippy::too_many_arguments)]
pub fn stage2_rl(
    policy: &Policy,
    store: &mut ParamStore,
    clips: &[Clip],
    codebook: &Codebook,
    mode: Mode,
    source: LwmSource,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<StepMetrics>, TrainError> {
    if clips.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[&"stage2", &mode, &source, &seed]));
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(cfg.stage2.steps);
    for step in 0..cfg.stage2.steps {
        let mut picks = Vec::with_capacity(cfg.stage2.groups_per_step);
        while picks.len() < cfg.stage2.groups_per_step {
            if order.is_empty() {
                order = (0..clips.len()).collect();
                order.shuffle(&mut rng);
            }
            picks.push(order.pop().expect("refilled"));
        }
        let step_seed = derive_seed(&[&"rollout", &seed, &step]);
        let groups = picks
            .iter()
            .map(|&i| rollout_group(policy, store, codebook, clips, i, mode, source, cfg, step_seed))
            .collect::<Result<Vec<_>, _>>()?;
        let st = grpo_step(policy, store, clips, &groups, &cfg.stage2)?;
        log.push(StepMetrics { step, lr: cfg.stage2.lr, loss: st.loss, l_token: 0.0, l_lwm: 0.0, mean_reward: st.mean_reward });
    }
    Ok(log)
}
