use rand::Rng;
use serde::{Deserialize, Serialize};

use super::decode::{action_logprob, KvDecoder};
use super::layout::{SequenceLayout, Slot};
use super::model::{Observation, Policy, SeqInputs};
use super::{LwmSource, Mode, PolicyError};
use crate::codec::{ActionBlock, Codebook, TokenId, BLOCK_LEN};
use crate::geom::Pose2D;
use crate::lwm::{lwm_target_for_block, LwmState};
use crate::nn::{sample_top_p, Graph, ParamStore, Tensor, Var};
use crate::sim::{Clip, FUTURE_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub k: usize,
    pub b: usize,
    pub temperature: f64,
    pub top_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasonTrace {
    pub lwm0: Option<LwmState>,
    pub lwm0_source: LwmSource,
    /// B branches of K (proposal, LWM) pairs.
    pub branches: Vec<Vec<(ActionBlock, LwmState)>>,
}

impl ReasonTrace {
    pub fn empty() -> Self {
        Self { lwm0: None, lwm0_source: LwmSource::Gt, branches: Vec::new() }
    }

    /// True when the trace has exactly `b` branches of `k` pairs and M-row states.
    pub fn has_shape(&self, k: usize, b: usize, m: usize) -> bool {
        self.lwm0.as_ref().is_some_and(|s| s.tokens.rows == m)
            && self.branches.len() == b
            && self.branches.iter().all(|br| br.len() == k && br.iter().all(|(_, s)| s.tokens.rows == m))
    }

    /// Generated reasoning slots: LWM0, every (block, state) pair, and EOR.
    pub fn token_count(&self) -> usize {
        let Some(l0) = &self.lwm0 else { return 0 };
        let pairs: usize = self.branches.iter().flatten().map(|(_, s)| BLOCK_LEN + s.tokens.rows).sum();
        l0.tokens.rows + pairs + 1
    }

    pub fn proposals(&self) -> Vec<TokenId> {
        self.branches.iter().flatten().flat_map(|(a, _)| a.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub clip_id: String,
    pub mode: Mode,
    pub lwm_source: LwmSource,
    pub reason: ReasonTrace,
    pub final_tokens: Vec<TokenId>,
    pub trajectory: Vec<Pose2D>,
    /// Σ log π over sampled proposal and final tokens, temperature 1, specials masked.
    pub logprob: f64,
    pub reward: Option<f64>,
    /// Parameter-store version the completion was sampled from.
    pub version: u64,
}

impl Completion {
    pub fn k(&self) -> usize {
        self.reason.branches.first().map_or(0, Vec::len)
    }

    pub fn b(&self) -> usize {
        if self.k() == 0 {
            0
        } else {
            self.reason.branches.len()
        }
    }
}

/// One decoding pass over a single sequence.
pub struct Session<'a> {
    policy: &'a Policy,
    store: &'a ParamStore,
    layout: SequenceLayout,
    dec: KvDecoder<'a>,
    ego_hidden: Vec<f64>,
    obs: &'a Observation,
    logprob: f64,
}

impl<'a> Session<'a> {
    /// Pushes the observation tokens and SEP.
    pub fn start(policy: &'a Policy, store: &'a ParamStore, layout: SequenceLayout, obs: &'a Observation) -> Result<Self, PolicyError> {
        let rows = policy.obs_tensor(store, obs)?;
        let mut s = Self { policy, store, layout, dec: KvDecoder::new(policy, store), ego_hidden: Vec::new(), obs, logprob: 0.0 };
        for i in 0..layout.obs.len() {
            s.push(Slot::Obs(i), None, Some(rows.row_slice(i)));
        }
        s.ego_hidden = s.dec.hidden().to_vec();
        s.push(Slot::Sep, None, None);
        Ok(s)
    }

    pub fn logprob(&self) -> f64 {
        self.logprob
    }

    fn push(&mut self, slot: Slot, tok: Option<TokenId>, content: Option<&[f64]>) {
        debug_assert_eq!(self.layout.position(slot), self.dec.len());
        let ids = self.policy.slot_ids(&self.layout, slot, tok);
        let x = self.policy.embed_row(self.store, &ids, content);
        self.dec.push(x);
    }

    fn push_state(&mut self, state: &LwmState, slot: impl Fn(usize) -> Slot) {
        for m in 0..state.tokens.rows {
            let c = self.policy.lwm_proj.apply_row(self.store, state.tokens.row_slice(m));
            self.push(slot(m), None, Some(&c));
        }
    }

    /// Samples one action token from the current position and, unless `last`, feeds it back.
    fn sample(&mut self, slot: Slot, cfg: &SampleConfig, rng: &mut impl Rng, last: bool) -> Result<TokenId, PolicyError> {
        let logits = self.dec.logits();
        let v = self.policy.vocab;
        let t = sample_top_p(&logits[..v], cfg.temperature, cfg.top_p, rng)?;
        self.logprob += action_logprob(&logits, v, t);
        let t = t as TokenId;
        if !last {
            self.push(slot, Some(t), None);
        }
        Ok(t)
    }

    pub fn generate_reason(
        &mut self,
        clip: &Clip,
        source: LwmSource,
        cfg: &SampleConfig,
        codebook: &Codebook,
        rng: &mut impl Rng,
    ) -> Result<ReasonTrace, PolicyError> {
        let l = self.layout;
        if l.mode == Mode::None {
            return Ok(ReasonTrace::empty());
        }
        let enc = &self.policy.lwm_enc;
        let lwm0 = match source {
            LwmSource::Gt => enc.encode_state(self.store, &self.obs.window)?,
            LwmSource::Predicted => self.policy.predict_lwm_row(self.store, &self.ego_hidden),
        };
        self.push_state(&lwm0, |m| Slot::Lwm0 { m });
        let mut branches = Vec::with_capacity(l.b);
        for branch in 0..l.b {
            let mut pose = Pose2D::IDENTITY;
            let mut pairs = Vec::with_capacity(l.k);
            for block in 0..l.k {
                let mut toks = [0; BLOCK_LEN];
                for (j, t) in toks.iter_mut().enumerate() {
                    *t = self.sample(Slot::Action { branch, block, j }, cfg, rng, false)?;
                }
                let a = ActionBlock(toks);
                let state = match source {
                    LwmSource::Gt => {
                        let (s, end) = lwm_target_for_block(clip, block, &a, codebook, &pose, enc, self.store)?;
                        pose = end;
                        s
                    }
                    LwmSource::Predicted => self.policy.predict_lwm_row(self.store, self.dec.hidden()),
                };
                self.push_state(&state, |m| Slot::Lwm { branch, block, m });
                pairs.push((a, state));
            }
            branches.push(pairs);
        }
        self.push(Slot::Eor, None, None);
        Ok(ReasonTrace { lwm0: Some(lwm0), lwm0_source: source, branches })
    }

    pub fn generate_final(&mut self, cfg: &SampleConfig, rng: &mut impl Rng) -> Result<Vec<TokenId>, PolicyError> {
        (0..FUTURE_STEPS).map(|i| self.sample(Slot::Final(i), cfg, rng, i + 1 == FUTURE_STEPS)).collect()
    }
}

/// Samples one completion for `clip` against the current parameter snapshot.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    policy: &Policy,
    store: &ParamStore,
    codebook: &Codebook,
    clip: &Clip,
    mode: Mode,
    source: LwmSource,
    cfg: &SampleConfig,
    rng: &mut impl Rng,
) -> Result<Completion, PolicyError> {
    let layout = policy.layout(mode, cfg.k, cfg.b)?;
    let obs = policy.observe(clip);
    let mut s = Session::start(policy, store, layout, &obs)?;
    let reason = s.generate_reason(clip, source, cfg, codebook, rng)?;
    let final_tokens = s.generate_final(cfg, rng)?;
    let trajectory = codebook.decode(&final_tokens, &Pose2D::IDENTITY)?;
    Ok(Completion {
        clip_id: clip.clip_id.clone(),
        mode: layout.mode,
        lwm_source: source,
        reason,
        final_tokens,
        trajectory,
        logprob: s.logprob(),
        reward: None,
        version: store.version(),
    })
}

/// Teacher-forced graph of a recorded completion. LWM inputs enter as constants.
pub struct Replay {
    pub layout: SequenceLayout,
    pub logits: Var,
    pub targets: Vec<TokenId>,
}

pub fn replay_graph(policy: &Policy, g: &mut Graph, obs: &Observation, c: &Completion) -> Result<Replay, PolicyError> {
    let layout = policy.layout(c.mode, c.k(), c.b())?;
    let lwm0 = c.reason.lwm0.as_ref().map(|s| g.constant(s.tokens.clone()));
    let blocks = c.reason.branches.iter().flatten().map(|(_, s)| g.constant(s.tokens.clone())).collect();
    let inputs = SeqInputs { obs, lwm0, blocks, proposals: c.reason.proposals(), finals: c.final_tokens.clone() };
    let (logits, targets) = action_logits(policy, g, &layout, &inputs)?;
    Ok(Replay { layout, logits, targets })
}

/// Logit rows predicting every action slot present in `x`, and the tokens they predict.
pub fn action_logits(policy: &Policy, g: &mut Graph, layout: &SequenceLayout, x: &SeqInputs) -> Result<(Var, Vec<TokenId>), PolicyError> {
    let hidden = policy.forward(g, layout, x)?;
    let n = x.proposals.len() + x.finals.len();
    let rows: Vec<usize> = layout.action_slots().iter().take(n).map(|(_, p)| p - 1).collect();
    let targets = x.proposals.iter().chain(&x.finals).copied().collect();
    Ok((policy.logits(g, hidden, &rows)?, targets))
}

/// Per-token log-probabilities of a completion, recomputed by teacher forcing.
pub fn replay_logprobs(policy: &Policy, store: &ParamStore, clip: &Clip, c: &Completion) -> Result<Vec<f64>, PolicyError> {
    let obs = policy.observe(clip);
    let mut g = Graph::new(store);
    let r = replay_graph(policy, &mut g, &obs, c)?;
    let lg: &Tensor = g.value(r.logits);
    Ok(r.targets.iter().enumerate().map(|(i, &t)| action_logprob(lg.row_slice(i), policy.vocab, t as usize)).collect())
}
