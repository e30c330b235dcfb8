//! Autoregressive policy over observation, latent-reasoning and trajectory tokens.

mod decode;
mod layout;
mod model;
mod rollout;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::lwm::LwmError;
use crate::nn::NnError;

pub use decode::{action_logprob, KvDecoder};
pub use layout::{special_id, token_budget, ObsLayout, Role, SequenceLayout, Slot, SlotKind, NUM_SPECIAL, SPECIAL_TOKENS};
pub use model::{Observation, Policy, PolicyConfig, SeqInputs, SlotIds, EGO_TOKENS, ROUTE_TOKENS};
pub use rollout::{action_logits, replay_graph, replay_logprobs, rollout, Completion, ReasonTrace, Replay, SampleConfig, Session};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("layout violation: {0}")]
    Layout(String),
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Lwm(#[from] LwmError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// What the policy generates before the final trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    None,
    Lwm0,
    LatentCot,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Lwm0 => "lwm0",
            Mode::LatentCot => "latent-cot",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Mode::None),
            "lwm0" | "lwm0-only" | "lwm0_only" => Ok(Mode::Lwm0),
            "latent-cot" | "latent_cot" => Ok(Mode::LatentCot),
            _ => Err(format!("unknown mode {s:?} (expected none, lwm0, latent-cot)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LwmSource {
    Gt,
    Predicted,
}

impl LwmSource {
    pub fn name(self) -> &'static str {
        match self {
            LwmSource::Gt => "gt",
            LwmSource::Predicted => "predicted",
        }
    }
}

impl fmt::Display for LwmSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LwmSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gt" => Ok(LwmSource::Gt),
            "predicted" | "pred" => Ok(LwmSource::Predicted),
            _ => Err(format!("unknown LWM source {s:?} (expected gt, predicted)")),
        }
    }
}
