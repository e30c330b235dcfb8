use serde::{Deserialize, Serialize};

use super::{Mode, PolicyError};
use crate::codec::{TokenId, BLOCK_LEN, MAX_BLOCKS};
use crate::sim::FUTURE_STEPS;

/// Special tokens live above the action vocabulary, in this order.
pub const SPECIAL_TOKENS: [&str; 3] = ["SEP", "EOR", "PAD"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();
pub const SEP: usize = 0;
pub const EOR: usize = 1;

pub fn special_id(vocab: usize, which: usize) -> TokenId {
    (vocab + which) as TokenId
}

/// Embedding role of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Scene,
    Route,
    Ego,
    Sep,
    Lwm0,
    Proposal,
    Lwm,
    Eor,
    Final,
}

impl Role {
    pub const COUNT: usize = 9;

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Obs(usize),
    Sep,
    Lwm0 { m: usize },
    Action { branch: usize, block: usize, j: usize },
    Lwm { branch: usize, block: usize, m: usize },
    Eor,
    Final(usize),
}

impl Slot {
    pub fn kind(self) -> SlotKind {
        match self {
            Slot::Sep | Slot::Eor | Slot::Action { .. } | Slot::Final(_) => SlotKind::Discrete,
            _ => SlotKind::Continuous,
        }
    }

    /// Slots whose token is sampled from the policy.
    pub fn is_action(self) -> bool {
        matches!(self, Slot::Action { .. } | Slot::Final(_))
    }
}

/// Observation token counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub scene: usize,
    pub route: usize,
    pub ego: usize,
}

impl ObsLayout {
    pub fn len(&self) -> usize {
        self.scene + self.route + self.ego
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn role(&self, i: usize) -> Role {
        if i < self.scene {
            Role::Scene
        } else if i < self.scene + self.route {
            Role::Route
        } else {
            Role::Ego
        }
    }
}

/// `[obs][SEP]([LWM0 ×M]([(10 actions, M LWM) ×K] ×B)[EOR])[64 final]`.
///
/// Branches are told apart by a learned branch embedding on every reasoning slot rather than a
/// separator token. Latent CoT with K = 0 or B = 0 is normalized to the LWM0-only layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceLayout {
    pub mode: Mode,
    pub k: usize,
    pub b: usize,
    pub m: usize,
    pub obs: ObsLayout,
}

impl SequenceLayout {
    pub fn new(mode: Mode, k: usize, b: usize, m: usize, obs: ObsLayout) -> Result<Self, PolicyError> {
        if k > MAX_BLOCKS {
            return Err(PolicyError::Layout(format!("K={k} violates K*10 <= 64")));
        }
        if m == 0 {
            return Err(PolicyError::Layout("M must be positive".into()));
        }
        let (mode, k, b) = match mode {
            Mode::LatentCot if k == 0 || b == 0 => (Mode::Lwm0, 0, 0),
            Mode::LatentCot => (mode, k, b),
            _ => (mode, 0, 0),
        };
        Ok(Self { mode, k, b, m, obs })
    }

    pub fn block_len(&self) -> usize {
        BLOCK_LEN + self.m
    }

    pub fn sep(&self) -> usize {
        self.obs.len()
    }

    fn reason_start(&self) -> usize {
        self.sep() + 1
    }

    /// Slots generated between SEP and the first final action.
    pub fn reasoning_len(&self) -> usize {
        match self.mode {
            Mode::None => 0,
            _ => self.m + self.k * self.b * self.block_len() + 1,
        }
    }

    /// Reasoning slots beyond the (10 + M)·K·B proposal/LWM pairs: LWM0 and EOR.
    pub fn special_constant(&self) -> usize {
        match self.mode {
            Mode::None => 0,
            _ => self.m + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.reason_start() + self.reasoning_len() + FUTURE_STEPS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lwm0(&self, m: usize) -> usize {
        self.reason_start() + m
    }

    pub fn action(&self, branch: usize, block: usize, j: usize) -> usize {
        self.reason_start() + self.m + (branch * self.k + block) * self.block_len() + j
    }

    pub fn lwm(&self, branch: usize, block: usize, m: usize) -> usize {
        self.action(branch, block, 0) + BLOCK_LEN + m
    }

    pub fn eor(&self) -> usize {
        self.reason_start() + self.reasoning_len() - 1
    }

    pub fn final_slot(&self, i: usize) -> usize {
        self.reason_start() + self.reasoning_len() + i
    }

    pub fn position(&self, s: Slot) -> usize {
        match s {
            Slot::Obs(i) => i,
            Slot::Sep => self.sep(),
            Slot::Lwm0 { m } => self.lwm0(m),
            Slot::Action { branch, block, j } => self.action(branch, block, j),
            Slot::Lwm { branch, block, m } => self.lwm(branch, block, m),
            Slot::Eor => self.eor(),
            Slot::Final(i) => self.final_slot(i),
        }
    }

    /// Hidden state feeding the LWM head for LWM0: the last ego token.
    pub fn lwm0_site(&self) -> usize {
        self.obs.len() - 1
    }

    /// Hidden state feeding the LWM head for block `(branch, block)`: its last action slot.
    pub fn lwm_site(&self, branch: usize, block: usize) -> usize {
        self.action(branch, block, BLOCK_LEN - 1)
    }

    pub fn slots(&self) -> Vec<Slot> {
        let mut out: Vec<Slot> = (0..self.obs.len()).map(Slot::Obs).collect();
        out.push(Slot::Sep);
        if self.mode != Mode::None {
            out.extend((0..self.m).map(|m| Slot::Lwm0 { m }));
            for branch in 0..self.b {
                for block in 0..self.k {
                    out.extend((0..BLOCK_LEN).map(|j| Slot::Action { branch, block, j }));
                    out.extend((0..self.m).map(|m| Slot::Lwm { branch, block, m }));
                }
            }
            out.push(Slot::Eor);
        }
        out.extend((0..FUTURE_STEPS).map(Slot::Final));
        debug_assert_eq!(out.len(), self.len());
        out
    }

    /// Action slots (proposals in branch/block order, then finals) with their positions.
    pub fn action_slots(&self) -> Vec<(Slot, usize)> {
        self.slots()
            .into_iter()
            .enumerate()
            .filter(|(_, s)| s.is_action())
            .map(|(p, s)| (s, p))
            .collect()
    }
}

/// Reasoning tokens for a (K, B) budget: (10 + M)·K·B plus the layout constant.
pub fn token_budget(k: usize, b: usize, layout: &SequenceLayout) -> usize {
    (BLOCK_LEN + layout.m) * k * b + layout.special_constant()
}

#[cfg(test)]
mod tests {
    use super::*;

    const OBS: ObsLayout = ObsLayout { scene: 2, route: 2, ego: 2 };

    #[test]
    fn positions_match_slot_enumeration() {
        for (mode, k, b) in [(Mode::None, 0, 0), (Mode::Lwm0, 0, 0), (Mode::LatentCot, 3, 2), (Mode::LatentCot, 6, 1)] {
            let l = SequenceLayout::new(mode, k, b, 2, OBS).unwrap();
            for (p, s) in l.slots().into_iter().enumerate() {
                assert_eq!(l.position(s), p, "{s:?}");
            }
        }
    }

    #[test]
    fn budget_and_nesting() {
        let l = SequenceLayout::new(Mode::LatentCot, 5, 2, 2, OBS).unwrap();
        assert_eq!(l.reasoning_len(), 123);
        assert_eq!(token_budget(5, 2, &l), 120 + l.special_constant());
        let a = SequenceLayout::new(Mode::LatentCot, 0, 3, 2, OBS).unwrap();
        let c = SequenceLayout::new(Mode::Lwm0, 0, 0, 2, OBS).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.slots(), c.slots());
        let e = SequenceLayout::new(Mode::LatentCot, 7, 1, 2, OBS).unwrap_err().to_string();
        assert!(e.contains("K*10 <= 64"), "{e}");
    }
}
