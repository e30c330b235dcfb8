//! Artifact-level orchestration: each step reads its prerequisites from the artifact root,
//! writes its products there, and stamps them with producer hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{derive_seed, hex32, read_file, sha256};
use crate::codec::{fit_codebook, trajectory_deltas, Codebook, CodecError};
use crate::config::RunConfig;
use crate::eval::{self, EvalConfig, EvalError, MetricsReport, PolicyPlanner, ReasoningReport, SweepRecord};
use crate::nn::{Checkpoint, NnError, ParamStore};
use crate::policy::{token_budget, LwmSource, Mode, Policy, PolicyError};
use crate::sim::{generate_dataset, read_clipset, write_clipset, ClipSet, SimError, Split};
use crate::train::{self, metrics_csv, StepMetrics, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing {file}; run `lcot {command}` first")]
    Missing { file: String, command: String },
    #[error("lineage mismatch: {0}")]
    Lineage(String),
    #[error("{0}")]
    Usage(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

/// Which trained model an evaluation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub mode: Mode,
    pub source: LwmSource,
    pub k: usize,
    pub b: usize,
    pub rl: bool,
}

/// Modes without reasoning blocks carry (K, B) = (0, 0) in names and labels.
pub fn reasoning_shape(mode: Mode, k: usize, b: usize) -> (usize, usize) {
    if mode == Mode::LatentCot {
        (k, b)
    } else {
        (0, 0)
    }
}

impl Variant {
    pub fn new(mode: Mode, source: LwmSource, k: usize, b: usize, rl: bool) -> Self {
        let (k, b) = reasoning_shape(mode, k, b);
        Self { mode, source, k, b, rl }
    }

    pub fn label(&self) -> String {
        let mut s = format!("{}/{}", self.mode, self.source);
        if self.mode == Mode::LatentCot {
            s += &format!("/k{}_b{}", self.k, self.b);
        }
        if self.rl {
            s += "/rl";
        }
        s
    }
}

/// Metadata stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: String,
    pub mode: Mode,
    pub source: Option<LwmSource>,
    pub k: usize,
    pub b: usize,
    pub config_hash: String,
    pub codebook_hash: String,
    pub train_clips_hash: String,
    pub parent: Option<String>,
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub root: PathBuf,
    /// Printed progress lines go here when set.
    pub verbose: bool,
}

impl Pipeline {
    pub fn new(cfg: RunConfig, root: impl Into<PathBuf>) -> Self {
        Self { cfg, root: root.into(), verbose: false }
    }

    fn say(&self, s: &str) {
        if self.verbose {
            eprintln!("{s}");
        }
    }

    pub fn clips_path(&self, split: Split) -> PathBuf {
        self.root.join(format!("clips_{}.bin", split.name()))
    }

    pub fn codebook_path(&self) -> PathBuf {
        self.root.join("codebook.bin")
    }

    pub fn stage0_path(&self, mode: Mode) -> PathBuf {
        self.root.join(format!("stage0_{}.ckpt", mode.name()))
    }

    pub fn stage1_path(&self, k: usize, b: usize) -> PathBuf {
        self.root.join(format!("stage1_k{k}_b{b}.ckpt"))
    }

    pub fn stage2_path(&self, mode: Mode, source: LwmSource, k: usize, b: usize) -> PathBuf {
        let (k, b) = reasoning_shape(mode, k, b);
        self.root.join(format!("stage2_{}_{}_k{k}_b{b}.ckpt", mode.name(), source.name()))
    }

    fn require(&self, path: &Path, command: &str) -> Result<(), PipelineError> {
        if path.exists() {
            Ok(())
        } else {
            Err(PipelineError::Missing { file: path.display().to_string(), command: command.to_string() })
        }
    }

    fn file_hash(&self, path: &Path) -> Result<String, PipelineError> {
        Ok(hex32(&sha256(&read_file(path).map_err(CodecError::from)?)))
    }

    fn config_hash(&self) -> String {
        hex32(&self.cfg.hash())
    }

    /// Creates `runs/<cmd>-<epoch>-<n>/` with a config snapshot; never reuses a directory.
    pub fn run_dir(&self, cmd: &str) -> Result<PathBuf, PipelineError> {
        let runs = self.root.join("runs");
        fs::create_dir_all(&runs).map_err(io_err(&runs))?;
        let epoch = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut n = 0;
        loop {
            let d = runs.join(format!("{cmd}-{epoch}-{n}"));
            match fs::create_dir(&d) {
                Ok(()) => {
                    let c = d.join("config.toml");
                    fs::write(&c, self.cfg.to_toml()).map_err(io_err(&c))?;
                    return Ok(d);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(io_err(&d)(e)),
            }
        }
    }

    fn write(&self, path: &Path, text: &str) -> Result<(), PipelineError> {
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn gen_data(&self) -> Result<(ClipSet, ClipSet), PipelineError> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let seed = derive_seed(&[&"data", &self.cfg.seed]);
        let train = generate_dataset(&self.cfg.sim, Split::Train, seed)?;
        let val = generate_dataset(&self.cfg.sim, Split::Val, seed)?;
        write_clipset(&train, &self.clips_path(Split::Train))?;
        write_clipset(&val, &self.clips_path(Split::Val))?;
        Ok((train, val))
    }

    pub fn load_clips(&self, split: Split) -> Result<ClipSet, PipelineError> {
        let p = self.clips_path(split);
        self.require(&p, "gen-data")?;
        let set = read_clipset(&p)?;
        if set.config_hash != self.cfg.sim.hash() {
            return Err(PipelineError::Lineage(format!("{} was generated with a different sim config", p.display())));
        }
        Ok(set)
    }

    pub fn fit_codebook(&self) -> Result<Codebook, PipelineError> {
        let train = self.load_clips(Split::Train)?;
        let deltas: Vec<_> = train.clips.iter().flat_map(|c| trajectory_deltas(&c.ego_future)).collect();
        let c = &self.cfg.codec;
        let cb = fit_codebook(&deltas, c.v, derive_seed(&[&"codebook", &self.cfg.seed]), c.iters, c.yaw_scale)?;
        cb.save(&self.codebook_path())?;
        Ok(cb)
    }

    pub fn load_codebook(&self) -> Result<Codebook, PipelineError> {
        let p = self.codebook_path();
        self.require(&p, "fit-codebook")?;
        Ok(Codebook::load(&p)?)
    }

    fn fresh_policy(&self, cb: &Codebook, name: &str) -> Result<(Policy, ParamStore), PipelineError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[&"init", &self.cfg.seed, &name]));
        let (policy, mut store) = Policy::new(&self.cfg.model, cb.len(), &mut rng)?;
        policy.seed_action_embeddings(&mut store, cb, &mut rng)?;
        Ok((policy, store))
    }

    fn save_ckpt(&self, policy: &Policy, store: &ParamStore, meta: &CheckpointMeta, path: &Path) -> Result<(), PipelineError> {
        let ck = Checkpoint { config_hash: policy.config_hash(), meta: serde_json::to_string(meta).expect("meta"), store: store.clone() };
        ck.save(path)?;
        Ok(())
    }

    /// Loads a checkpoint into a freshly built policy after checking architecture and codebook lineage.
    pub fn load_model(&self, path: &Path, command: &str, cb: &Codebook) -> Result<(Policy, ParamStore, CheckpointMeta), PipelineError> {
        self.require(path, command)?;
        let ck = Checkpoint::load(path)?;
        let (policy, mut store) = self.fresh_policy(cb, "load")?;
        let meta: CheckpointMeta = serde_json::from_str(&ck.meta)
            .map_err(|e| PipelineError::Lineage(format!("{}: unreadable metadata: {e}", path.display())))?;
        if meta.codebook_hash != hex32(&cb.hash()) {
            return Err(PipelineError::Lineage(format!("{} was trained against a different codebook", path.display())));
        }
        if ck.config_hash != policy.config_hash() {
            return Err(PipelineError::Lineage(format!("{} was trained with a different model config", path.display())));
        }
        store.load_state(&ck.store)?;
        Ok((policy, store, meta))
    }

    #[allow(clippy::too_many_arguments)]
    fn meta(&self, stage: &str, mode: Mode, source: Option<LwmSource>, k: usize, b: usize, cb: &Codebook, parent: Option<&Path>) -> Result<CheckpointMeta, PipelineError> {
        Ok(CheckpointMeta {
            stage: stage.into(),
            mode,
            source,
            k,
            b,
            config_hash: self.config_hash(),
            codebook_hash: hex32(&cb.hash()),
            train_clips_hash: self.file_hash(&self.clips_path(Split::Train))?,
            parent: parent.map(|p| self.file_hash(p)).transpose()?,
        })
    }

    fn log_metrics(&self, dir: &Path, name: &str, log: &[StepMetrics]) -> Result<(), PipelineError> {
        self.write(&dir.join(name), &metrics_csv(log))
    }

    /// Trains the non-reasoning baseline and the GT-LWM0 model (teacher and stage-1 init).
    pub fn train_stage0(&self, run: &Path) -> Result<Vec<StepMetrics>, PipelineError> {
        let train = self.load_clips(Split::Train)?;
        let cb = self.load_codebook()?;
        let mut last = Vec::new();
        for mode in [Mode::None, Mode::Lwm0] {
            self.say(&format!("stage0 {mode}"));
            let (policy, mut store) = self.fresh_policy(&cb, mode.name())?;
            let log = train::stage0_sft(&policy, &mut store, &train.clips, &cb, mode, &self.cfg.train.stage0, self.cfg.seed)?;
            self.log_metrics(run, &format!("stage0_{}.csv", mode.name()), &log)?;
            let meta = self.meta("stage0", mode, Some(LwmSource::Gt), 0, 0, &cb, None)?;
            self.save_ckpt(&policy, &store, &meta, &self.stage0_path(mode))?;
            last = log;
        }
        Ok(last)
    }

    pub fn train_stage1(&self, run: &Path, k: usize, b: usize) -> Result<Vec<StepMetrics>, PipelineError> {
        let train = self.load_clips(Split::Train)?;
        let cb = self.load_codebook()?;
        let parent = self.stage0_path(Mode::Lwm0);
        let (policy, teacher) = {
            let (p, s, _) = self.load_model(&parent, "train-stage0", &cb)?;
            (p, s)
        };
        let mut tc = self.cfg.train.clone();
        tc.k = k;
        tc.b = b;
        tc.validate()?;
        self.say(&format!("stage1 k{k} b{b}: building cold-start set"));
        let examples = train::build_cold_start_set(&train.clips, &policy, &teacher, &cb, &tc, self.cfg.seed)?;
        let mut store = teacher.clone();
        store.reset_optimizer();
        let log = train::stage1_cold_start(&policy, &mut store, &train.clips, &examples, &tc, self.cfg.seed)?;
        self.log_metrics(run, &format!("stage1_k{k}_b{b}.csv"), &log)?;
        let meta = self.meta("stage1", Mode::LatentCot, Some(LwmSource::Gt), k, b, &cb, Some(&parent))?;
        self.save_ckpt(&policy, &store, &meta, &self.stage1_path(k, b))?;
        Ok(log)
    }

    /// Path and producing command of the pre-RL checkpoint for a mode.
    pub fn base_checkpoint(&self, mode: Mode, k: usize, b: usize) -> (PathBuf, String) {
        match mode {
            Mode::LatentCot => (self.stage1_path(k, b), format!("train-stage1 --K {k} --B {b}")),
            m => (self.stage0_path(m), "train-stage0".into()),
        }
    }

    pub fn checkpoint_for(&self, v: &Variant) -> (PathBuf, String) {
        if v.rl {
            let cmd = format!("train-stage2 --mode {} --lwm-source {} --K {} --B {}", v.mode, v.source, v.k, v.b);
            (self.stage2_path(v.mode, v.source, v.k, v.b), cmd)
        } else {
            self.base_checkpoint(v.mode, v.k, v.b)
        }
    }

    pub fn train_stage2(&self, run: &Path, mode: Mode, source: LwmSource, k: usize, b: usize) -> Result<Vec<StepMetrics>, PipelineError> {
        let train = self.load_clips(Split::Train)?;
        let cb = self.load_codebook()?;
        let (parent, cmd) = self.base_checkpoint(mode, k, b);
        let (policy, mut store, _) = self.load_model(&parent, &cmd, &cb)?;
        store.reset_optimizer();
        let mut tc = self.cfg.train.clone();
        tc.k = k;
        tc.b = b;
        tc.validate()?;
        let (k, b) = reasoning_shape(mode, k, b);
        self.say(&format!("stage2 {mode} {source} k{k} b{b}"));
        let log = train::stage2_rl(&policy, &mut store, &train.clips, &cb, mode, source, &tc, self.cfg.seed)?;
        self.log_metrics(run, &format!("stage2_{}_{}_k{k}_b{b}.csv", mode.name(), source.name()), &log)?;
        let meta = self.meta("stage2", mode, Some(source), k, b, &cb, Some(&parent))?;
        self.save_ckpt(&policy, &store, &meta, &self.stage2_path(mode, source, k, b))?;
        Ok(log)
    }

    fn eval_cfg(&self) -> EvalConfig {
        EvalConfig { seed: derive_seed(&[&"eval", &self.cfg.seed]), ..self.cfg.eval }
    }

    pub fn evaluate(&self, v: &Variant) -> Result<MetricsReport, PipelineError> {
        let val = self.load_clips(Split::Val)?;
        let cb = self.load_codebook()?;
        let (path, cmd) = self.checkpoint_for(v);
        let (policy, store, _) = self.load_model(&path, &cmd, &cb)?;
        let sample = crate::policy::SampleConfig { k: v.k, b: v.b, temperature: self.cfg.train.temperature, top_p: self.cfg.train.top_p };
        let planner = PolicyPlanner { policy: &policy, store: &store, codebook: &cb, mode: v.mode, source: v.source, sample };
        let mut rep = eval::evaluate_model(&v.label(), &planner, &val.clips, &self.eval_cfg())?;
        rep.lineage = BTreeMap::from([
            ("config_hash".to_string(), self.config_hash()),
            ("codebook_hash".to_string(), hex32(&cb.hash())),
            ("checkpoint_hash".to_string(), self.file_hash(&path)?),
            ("val_clips_hash".to_string(), self.file_hash(&self.clips_path(Split::Val))?),
        ]);
        Ok(rep)
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write_report(&self, dir: &Path, stem: &str, rep: &MetricsReport) -> Result<(), PipelineError> {
        self.write(&dir.join(format!("{stem}.json")), &rep.to_json())?;
        self.write(&dir.join(format!("{stem}.csv")), &rep.category_csv())
    }

    /// Appendix-B style analysis of the stage-1 model and its RL successor for the same source.
    pub fn analyze_reasoning(&self, source: LwmSource, k: usize, b: usize) -> Result<(ReasoningReport, ReasoningReport), PipelineError> {
        if b != 2 {
            return Err(EvalError::Branches(b).into());
        }
        let val = self.load_clips(Split::Val)?;
        let cb = self.load_codebook()?;
        let mut out = Vec::new();
        for rl in [false, true] {
            let v = Variant { mode: Mode::LatentCot, source, k, b, rl };
            let (path, cmd) = self.checkpoint_for(&v);
            let (policy, store, _) = self.load_model(&path, &cmd, &cb)?;
            let sample = crate::policy::SampleConfig { k, b, temperature: self.cfg.train.temperature, top_p: self.cfg.train.top_p };
            let planner = PolicyPlanner { policy: &policy, store: &store, codebook: &cb, mode: Mode::LatentCot, source, sample };
            out.push(eval::reasoning_analysis(&planner, &cb, &val.clips, &self.eval_cfg(), b)?);
        }
        Ok((out[0], out[1]))
    }

    /// Budget/ADE curve over stage-1 checkpoints (GT LWM, no RL) plus the stage-0 baseline.
    pub fn sweep(&self, configs: &[(usize, usize)]) -> Result<Vec<SweepRecord>, PipelineError> {
        let val = self.load_clips(Split::Val)?;
        let cb = self.load_codebook()?;
        let ec = self.eval_cfg();
        let t = &self.cfg.train;
        let mut models = Vec::new();
        for &(k, b) in configs {
            let (path, cmd) = self.base_checkpoint(Mode::LatentCot, k, b);
            models.push((k, b, self.load_model(&path, &cmd, &cb)?));
        }
        let (bp, bcmd) = self.base_checkpoint(Mode::None, 0, 0);
        let (base_p, base_s, _) = self.load_model(&bp, &bcmd, &cb)?;
        let sample = |k, b| crate::policy::SampleConfig { k, b, temperature: t.temperature, top_p: t.top_p };
        let baseline = PolicyPlanner { policy: &base_p, store: &base_s, codebook: &cb, mode: Mode::None, source: LwmSource::Gt, sample: sample(0, 0) };
        let planners: Vec<_> = models
            .iter()
            .map(|(k, b, (p, s, _))| PolicyPlanner { policy: p, store: s, codebook: &cb, mode: Mode::LatentCot, source: LwmSource::Gt, sample: sample(*k, *b) })
            .collect();
        let mut points = Vec::new();
        for ((k, b, (p, _, _)), pl) in models.iter().zip(&planners) {
            points.push((*k, *b, p.layout(Mode::LatentCot, *k, *b)?, pl as &dyn eval::Planner));
        }
        let recs = eval::efficiency_sweep(&points, &baseline, &val.clips, &ec)?;
        debug_assert!(recs.iter().skip(1).zip(configs).all(|(r, (k, b))| r.tokens == token_budget(*k, *b, &points[0].2)));
        Ok(recs)
    }
}
