//! Trajectory metrics, seeded multi-sample evaluation, reasoning-action analysis and the
//! reasoning-budget sweep.

mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::derive_seed;
use crate::codec::{Codebook, CodecError, TokenId};
use crate::geom::{GeomError, Pose2D};
use crate::policy::{rollout, LwmSource, Mode, Policy, PolicyError, ReasonTrace, SampleConfig, SequenceLayout};
use crate::sim::Clip;

pub use metrics::{ade, collision, corner_dist, offroad, window_steps, EGO_DIMS};

pub const SAMPLES_PER_CLIP: usize = 6;
/// Steps compared in the reasoning-action analysis.
pub const ANALYSIS_STEPS: usize = 50;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory length mismatch: predicted {pred}, expert {expert}")]
    Length { pred: usize, expert: usize },
    #[error("horizon of {horizon} steps does not fit a {len}-step trajectory")]
    Horizon { horizon: usize, len: usize },
    #[error("reasoning analysis compares two branches and needs B=2, got B={0}")]
    Branches(usize),
    #[error("reasoning analysis needs latent-CoT rollouts with K >= 1")]
    NoReasoning,
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// One sampled plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub trajectory: Vec<Pose2D>,
    pub reason: Option<ReasonTrace>,
}

/// Anything that can produce a trajectory for a clip.
pub trait Planner: Sync {
    fn plan(&self, clip: &Clip, rng: &mut ChaCha8Rng) -> Result<Sample, EvalError>;
}

pub struct PolicyPlanner<'a> {
    pub policy: &'a Policy,
    pub store: &'a crate::nn::ParamStore,
    pub codebook: &'a Codebook,
    pub mode: Mode,
    pub source: LwmSource,
    pub sample: SampleConfig,
}

impl Planner for PolicyPlanner<'_> {
    fn plan(&self, clip: &Clip, rng: &mut ChaCha8Rng) -> Result<Sample, EvalError> {
        let c = rollout(self.policy, self.store, self.codebook, clip, self.mode, self.source, &self.sample, rng)?;
        let reason = (c.mode == Mode::LatentCot).then_some(c.reason);
        Ok(Sample { trajectory: c.trajectory, reason })
    }
}

/// Emits the codec reconstruction of the expert future.
pub struct GtReplay<'a>(pub &'a Codebook);

impl Planner for GtReplay<'_> {
    fn plan(&self, clip: &Clip, _: &mut ChaCha8Rng) -> Result<Sample, EvalError> {
        let toks = self.0.encode(&clip.ego_future)?;
        Ok(Sample { trajectory: self.0.decode(&toks, &Pose2D::IDENTITY)?, reason: None })
    }
}

/// Uniformly random action tokens.
pub struct UniformTokens<'a>(pub &'a Codebook);

impl Planner for UniformTokens<'_> {
    fn plan(&self, clip: &Clip, rng: &mut ChaCha8Rng) -> Result<Sample, EvalError> {
        let toks: Vec<TokenId> = (0..clip.ego_future.len()).map(|_| rng.random_range(0..self.0.len()) as TokenId).collect();
        Ok(Sample { trajectory: self.0.decode(&toks, &Pose2D::IDENTITY)?, reason: None })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub samples_per_clip: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { samples_per_clip: SAMPLES_PER_CLIP, seed: 0 }
    }
}

/// Table 1 metric columns. Percentages are in [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub ade: f64,
    pub offroad_2_5: f64,
    pub offroad_5_0: f64,
    pub coll_2_5: f64,
    pub coll_5_0: f64,
    pub corner_dist: f64,
}

impl MetricsRow {
    pub const COLUMNS: [&'static str; 6] = ["ade", "offroad_2_5", "offroad_5_0", "coll_2_5", "coll_5_0", "corner_dist"];

    fn values(&self) -> [f64; 6] {
        [self.ade, self.offroad_2_5, self.offroad_5_0, self.coll_2_5, self.coll_5_0, self.corner_dist]
    }

    fn from_values(v: [f64; 6]) -> Self {
        Self { ade: v[0], offroad_2_5: v[1], offroad_5_0: v[2], coll_2_5: v[3], coll_5_0: v[4], corner_dist: v[5] }
    }

    /// Column-wise mean; empty input gives zeros.
    pub fn mean<'a>(rows: impl IntoIterator<Item = &'a MetricsRow>) -> Self {
        let mut acc = [0.0; 6];
        let mut n = 0usize;
        for r in rows {
            acc.iter_mut().zip(r.values()).for_each(|(a, v)| *a += v);
            n += 1;
        }
        if n > 0 {
            acc.iter_mut().for_each(|a| *a /= n as f64);
        }
        Self::from_values(acc)
    }
}

/// Metrics of one trajectory against a clip.
pub fn sample_metrics(traj: &[Pose2D], clip: &Clip) -> Result<MetricsRow, EvalError> {
    let pct = |b: bool| if b { 100.0 } else { 0.0 };
    Ok(MetricsRow {
        ade: ade(traj, &clip.ego_future, clip.ego_future.len())?,
        offroad_2_5: pct(offroad(traj, &clip.drivable, 2.5, EGO_DIMS)?),
        offroad_5_0: pct(offroad(traj, &clip.drivable, 5.0, EGO_DIMS)?),
        coll_2_5: pct(collision(traj, &clip.agents, 2.5, EGO_DIMS)?),
        coll_5_0: pct(collision(traj, &clip.agents, 5.0, EGO_DIMS)?),
        corner_dist: corner_dist(traj, &clip.ego_future, EGO_DIMS)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub category: String,
    #[serde(flatten)]
    pub metrics: MetricsRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub clips: usize,
    #[serde(flatten)]
    pub metrics: MetricsRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub samples_per_clip: usize,
    pub seed: u64,
    pub aggregate: MetricsRow,
    pub per_category: BTreeMap<String, CategoryRow>,
    pub per_clip: Vec<ClipMetrics>,
    /// Producer hashes (config, codebook, checkpoint) filled in by the pipeline.
    #[serde(default)]
    pub lineage: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-category table followed by an `overall` row.
    pub fn category_csv(&self) -> String {
        let mut s = format!("category,clips,{}\n", MetricsRow::COLUMNS.join(","));
        let mut row = |name: &str, n: usize, m: &MetricsRow| {
            let vals: Vec<String> = m.values().iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(s, "{name},{n},{}", vals.join(","));
        };
        for (c, r) in &self.per_category {
            row(c, r.clips, &r.metrics);
        }
        row("overall", self.per_clip.len(), &self.aggregate);
        s
    }
}

/// Seed for sample `idx` of `clip_id`; independent of evaluation order.
pub fn sample_seed(master: u64, clip_id: &str, idx: usize) -> u64 {
    derive_seed(&[&"eval", &master, &clip_id, &idx])
}

fn per_clip<T: Send>(
    clips: &[Clip],
    cfg: &EvalConfig,
    planner: &dyn Planner,
    f: impl Fn(&Clip, &[Sample]) -> Result<T, EvalError> + Sync,
) -> Result<Vec<T>, EvalError> {
    clips
        .par_iter()
        .map(|clip| {
            let samples = (0..cfg.samples_per_clip)
                .map(|i| planner.plan(clip, &mut ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, &clip.clip_id, i))))
                .collect::<Result<Vec<_>, _>>()?;
            f(clip, &samples)
        })
        .collect()
}

/// Samples each clip `samples_per_clip` times; per-clip score is the sample mean.
pub fn evaluate_model(label: &str, planner: &dyn Planner, clips: &[Clip], cfg: &EvalConfig) -> Result<MetricsReport, EvalError> {
    let per_clip = per_clip(clips, cfg, planner, |clip, samples| {
        let rows = samples.iter().map(|s| sample_metrics(&s.trajectory, clip)).collect::<Result<Vec<_>, _>>()?;
        Ok(ClipMetrics { clip_id: clip.clip_id.clone(), category: clip.category.name().to_string(), metrics: MetricsRow::mean(&rows) })
    })?;
    let mut groups: BTreeMap<String, Vec<MetricsRow>> = BTreeMap::new();
    for c in &per_clip {
        groups.entry(c.category.clone()).or_default().push(c.metrics);
    }
    let per_category = groups
        .into_iter()
        .map(|(k, v)| (k, CategoryRow { clips: v.len(), metrics: MetricsRow::mean(&v) }))
        .collect();
    Ok(MetricsReport {
        label: label.to_string(),
        samples_per_clip: cfg.samples_per_clip,
        seed: cfg.seed,
        aggregate: MetricsRow::mean(per_clip.iter().map(|c| &c.metrics)),
        per_category,
        per_clip,
        lineage: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReasoningReport {
    /// ADE between the two branch rollouts.
    pub diversity: f64,
    /// ADE from the final plan to its closest branch.
    pub alignment: f64,
    /// Mean branch ADE to the expert.
    pub quality: f64,
    /// Final-plan ADE to the expert.
    pub final_quality: f64,
    pub horizon_steps: usize,
    pub clips: usize,
}

impl ReasoningReport {
    pub const ROWS: [&'static str; 4] = ["diversity", "alignment", "quality", "final"];

    /// Two-column comparison table in the Appendix B layout.
    pub fn comparison_csv(no_rl: &ReasoningReport, rl: &ReasoningReport) -> String {
        let mut s = String::from("metric,no_rl,with_rl\n");
        let pairs = [
            (no_rl.diversity, rl.diversity),
            (no_rl.alignment, rl.alignment),
            (no_rl.quality, rl.quality),
            (no_rl.final_quality, rl.final_quality),
        ];
        for (name, (a, b)) in Self::ROWS.iter().zip(pairs) {
            let _ = writeln!(s, "{name},{a:.6},{b:.6}");
        }
        s
    }
}

/// Branch trajectory: the branch's proposal blocks integrated back to back from the current pose.
pub fn branch_trajectory(trace_branch: &[(crate::codec::ActionBlock, crate::lwm::LwmState)], codebook: &Codebook) -> Result<Vec<Pose2D>, EvalError> {
    let toks: Vec<TokenId> = trace_branch.iter().flat_map(|(a, _)| a.0).collect();
    Ok(codebook.decode(&toks, &Pose2D::IDENTITY)?)
}

/// Diversity, alignment, quality and final ADE over the first `h` steps for two branches.
pub fn reasoning_metrics(branches: [&[Pose2D]; 2], fin: &[Pose2D], expert: &[Pose2D], h: usize) -> Result<[f64; 4], EvalError> {
    let cut = |t: &[Pose2D]| -> Result<Vec<Pose2D>, EvalError> {
        t.get(..h).map(<[Pose2D]>::to_vec).ok_or(EvalError::Horizon { horizon: h, len: t.len() })
    };
    let (b0, b1, f, e) = (cut(branches[0])?, cut(branches[1])?, cut(fin)?, cut(expert)?);
    let diversity = ade(&b0, &b1, h)?;
    let alignment = ade(&f, &b0, h)?.min(ade(&f, &b1, h)?);
    let quality = 0.5 * (ade(&b0, &e, h)? + ade(&b1, &e, h)?);
    let final_q = ade(&f, &e, h)?;
    Ok([diversity, alignment, quality, final_q])
}

pub fn reasoning_analysis(planner: &dyn Planner, codebook: &Codebook, clips: &[Clip], cfg: &EvalConfig, b: usize) -> Result<ReasoningReport, EvalError> {
    if b != 2 {
        return Err(EvalError::Branches(b));
    }
    let rows = per_clip(clips, cfg, planner, |clip, samples| {
        let mut acc = [0.0; 4];
        let mut h = 0;
        for s in samples {
            let r = s.reason.as_ref().ok_or(EvalError::NoReasoning)?;
            if r.branches.len() != 2 {
                return Err(EvalError::Branches(r.branches.len()));
            }
            let t0 = branch_trajectory(&r.branches[0], codebook)?;
            let t1 = branch_trajectory(&r.branches[1], codebook)?;
            h = ANALYSIS_STEPS.min(t0.len());
            if h == 0 {
                return Err(EvalError::NoReasoning);
            }
            let m = reasoning_metrics([&t0, &t1], &s.trajectory, &clip.ego_future, h)?;
            acc.iter_mut().zip(m).for_each(|(a, v)| *a += v / samples.len() as f64);
        }
        Ok((acc, h))
    })?;
    let n = rows.len().max(1) as f64;
    let mean = |i: usize| rows.iter().map(|(r, _)| r[i]).sum::<f64>() / n;
    Ok(ReasoningReport {
        diversity: mean(0),
        alignment: mean(1),
        quality: mean(2),
        final_quality: mean(3),
        horizon_steps: rows.first().map_or(0, |r| r.1),
        clips: rows.len(),
    })
}

/// Reasoning tokens spent by a (K, B) configuration: (10 + M)·K·B + the layout constant.
pub fn token_budget(k: usize, b: usize, layout: &SequenceLayout) -> usize {
    crate::policy::token_budget(k, b, layout)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub k: usize,
    pub b: usize,
    pub tokens: usize,
    pub ade: f64,
}

/// Budget/accuracy curve: one record per (K, B) planner plus the non-reasoning baseline (K = B = 0, 0 tokens).
pub fn efficiency_sweep(
    points: &[(usize, usize, SequenceLayout, &dyn Planner)],
    baseline: &dyn Planner,
    clips: &[Clip],
    cfg: &EvalConfig,
) -> Result<Vec<SweepRecord>, EvalError> {
    let mut out = vec![SweepRecord { k: 0, b: 0, tokens: 0, ade: evaluate_model("baseline", baseline, clips, cfg)?.aggregate.ade }];
    for (k, b, layout, p) in points {
        let r = evaluate_model(&format!("k{k}_b{b}"), *p, clips, cfg)?;
        out.push(SweepRecord { k: *k, b: *b, tokens: token_budget(*k, *b, layout), ade: r.aggregate.ade });
    }
    Ok(out)
}

pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut s = String::from("k,b,tokens,ade\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{:.6}", r.k, r.b, r.tokens, r.ade);
    }
    s
}
