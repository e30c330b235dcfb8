//! Procedural driving clips: a two-lane road world with scripted traffic and an expert ego driven
//! by a gap-regulating longitudinal law and pure-pursuit steering.

mod io;
pub mod road;
mod scenario;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{derive_seed, sha256, FormatError};
use crate::geom::{OrientedBox, Polygon, Pose2D};

pub use io::{read_clipset, write_clipset, CLIPSET_FORMAT_VERSION};

/// Samples per second.
pub const HZ: f64 = 10.0;
pub const DT: f64 = 1.0 / HZ;
pub const HISTORY_STEPS: usize = 16;
pub const FUTURE_STEPS: usize = 64;
pub const TOTAL_STEPS: usize = HISTORY_STEPS + FUTURE_STEPS;
/// Index of the current time inside an agent track.
pub const CURRENT_STEP: usize = HISTORY_STEPS - 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("infeasible sim config: {0}")]
    Infeasible(String),
    #[error("could not generate a valid {category} clip for seed {seed} after {attempts} attempts")]
    Exhausted { category: Category, seed: u64, attempts: usize },
    #[error("duplicate clip id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    LaneKeepingStraight,
    LaneKeepingCurve,
    LeadFollowing,
    StopForVehicle,
    CutIn,
    LaneChange,
    Merging,
    Intersection,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::LaneKeepingStraight,
        Category::LaneKeepingCurve,
        Category::LeadFollowing,
        Category::StopForVehicle,
        Category::CutIn,
        Category::LaneChange,
        Category::Merging,
        Category::Intersection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::LaneKeepingStraight => "lane_keeping_straight",
            Category::LaneKeepingCurve => "lane_keeping_curve",
            Category::LeadFollowing => "lead_following",
            Category::StopForVehicle => "stop_for_vehicle",
            Category::CutIn => "cut_in",
            Category::LaneChange => "lane_change",
            Category::Merging => "merging",
            Category::Intersection => "intersection",
        }
    }

    pub fn index(self) -> u8 {
        Self::ALL.iter().position(|c| *c == self).unwrap() as u8
    }

    pub fn from_index(i: u8) -> Option<Category> {
        Self::ALL.get(i as usize).copied()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.iter().copied().find(|c| c.name() == s).ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Vehicle,
    Vru,
    Static,
}

impl AgentType {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            AgentType::Vehicle => 0,
            AgentType::Vru => 1,
            AgentType::Static => 2,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        [AgentType::Vehicle, AgentType::Vru, AgentType::Static].get(i as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub pose: Pose2D,
    pub speed: f64,
    pub yaw_rate: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: u64,
    pub agent_type: AgentType,
    pub length: f64,
    pub width: f64,
    /// `TOTAL_STEPS` states; index `CURRENT_STEP` is the current time.
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    pub fn box_at(&self, step: usize) -> Option<OrientedBox> {
        let s = self.states.get(step)?;
        s.valid.then(|| OrientedBox::new(s.pose, self.length, self.width))
    }

    /// State at future step `i` (0-based, first future sample is `i = 0`).
    pub fn future(&self, i: usize) -> &AgentState {
        &self.states[HISTORY_STEPS + i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose2D,
    pub speed: f64,
    pub yaw_rate: f64,
}

/// One driving scenario. All geometry is expressed in the ego frame at the current time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub clip_id: String,
    pub category: Category,
    pub seed: u64,
    /// 16 states at 10 Hz; the last one is the current pose (identity).
    pub ego_history: Vec<EgoState>,
    /// 64 expert poses at 10 Hz.
    pub ego_future: Vec<Pose2D>,
    pub agents: Vec<AgentTrack>,
    pub drivable: Polygon,
    /// Centerline of the lane the expert follows, sampled every 2 m starting 10 m behind the ego.
    pub route: Vec<Pose2D>,
}

impl Clip {
    pub fn current_speed(&self) -> f64 {
        self.ego_history.last().map_or(0.0, |s| s.speed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSet {
    pub split: Split,
    pub config_hash: [u8; 32],
    pub clips: Vec<Clip>,
    pub category_histogram: BTreeMap<Category, usize>,
}

impl ClipSet {
    pub fn histogram_of(clips: &[Clip]) -> BTreeMap<Category, usize> {
        let mut h = BTreeMap::new();
        for c in clips {
            *h.entry(c.category).or_insert(0) += 1;
        }
        h
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub lane_width: f64,
    pub ego_length: f64,
    pub ego_width: f64,
    /// Kinematic limits applied to the expert.
    pub max_speed: f64,
    pub max_yaw_rate: f64,
    pub max_accel: f64,
    pub max_decel: f64,
    pub train_per_category: usize,
    pub val_per_category: usize,
    pub categories: Vec<Category>,
    pub max_attempts: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            lane_width: 3.5,
            ego_length: 4.6,
            ego_width: 1.8,
            max_speed: 20.0,
            max_yaw_rate: 0.8,
            max_accel: 3.0,
            max_decel: 7.0,
            train_per_category: 25,
            val_per_category: 50,
            categories: Category::ALL.to_vec(),
            max_attempts: 64,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("lane_width", self.lane_width),
            ("ego_length", self.ego_length),
            ("ego_width", self.ego_width),
            ("max_speed", self.max_speed),
            ("max_yaw_rate", self.max_yaw_rate),
            ("max_accel", self.max_accel),
            ("max_decel", self.max_decel),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Infeasible(format!("{name} must be positive (got {v})")));
            }
        }
        if self.lane_width <= self.ego_width + 0.4 {
            return Err(SimError::Infeasible(format!(
                "lane_width ({}) must exceed ego_width ({}) by at least 0.4 m",
                self.lane_width, self.ego_width
            )));
        }
        if self.max_speed < 15.0 {
            return Err(SimError::Infeasible(format!(
                "max_speed ({}) must be at least 15 m/s for the scripted scenarios",
                self.max_speed
            )));
        }
        if self.max_attempts == 0 {
            return Err(SimError::Infeasible("max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> [u8; 32] {
        sha256(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn count_for(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_category,
            Split::Val => self.val_per_category,
        }
    }
}

/// Generates one clip; a pure function of its arguments.
pub fn generate_clip(category: Category, seed: u64, config: &SimConfig) -> Result<Clip, SimError> {
    config.validate()?;
    scenario::generate(category, seed, config)
}

/// Seed used for the `index`-th clip of `category` in a dataset.
pub fn clip_seed(dataset_seed: u64, split: Split, category: Category, index: usize) -> u64 {
    derive_seed(&[&"clip", &dataset_seed, &split.name(), &category.name(), &index])
}

/// Generates `count_for(split)` clips for every configured category.
pub fn generate_dataset(config: &SimConfig, split: Split, seed: u64) -> Result<ClipSet, SimError> {
    config.validate()?;
    let n = config.count_for(split);
    let jobs: Vec<(Category, u64)> = config
        .categories
        .iter()
        .flat_map(|&c| (0..n).map(move |i| (c, clip_seed(seed, split, c, i))))
        .collect();
    use rayon::prelude::*;
    let clips = jobs
        .par_iter()
        .map(|&(c, s)| scenario::generate(c, s, config))
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen = std::collections::HashSet::new();
    for c in &clips {
        if !seen.insert(c.clip_id.as_str()) {
            return Err(SimError::DuplicateId(c.clip_id.clone()));
        }
    }
    Ok(ClipSet {
        split,
        config_hash: config.hash(),
        category_histogram: ClipSet::histogram_of(&clips),
        clips,
    })
}
