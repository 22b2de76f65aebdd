//! Intrinsic-reward models: RND, ICM, NSM and ensemble disagreement (DD).
//!
//! All models see states divided by the environment's observation
//! half-widths, so rewards are on a comparable scale across dimensions.
//! Rewards are always computed from the current parameters; nothing here
//! caches a reward for a stored transition.

mod model;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use model::{CuriosityModel, RewardNormalizer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CuriosityKind {
    Rnd,
    Icm,
    Nsm,
    Dd,
}

/// A component of a SARS tuple a model may need.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    State,
    Action,
    NextState,
}

impl Label {
    pub fn symbol(self) -> &'static str {
        match self {
            Label::State => "s",
            Label::Action => "a",
            Label::NextState => "s'",
        }
    }
}

const SAS: &[Label] = &[Label::State, Label::Action, Label::NextState];

impl CuriosityKind {
    pub const ALL: [CuriosityKind; 4] =
        [CuriosityKind::Rnd, CuriosityKind::Icm, CuriosityKind::Nsm, CuriosityKind::Dd];

    pub fn name(self) -> &'static str {
        match self {
            CuriosityKind::Rnd => "rnd",
            CuriosityKind::Icm => "icm",
            CuriosityKind::Nsm => "nsm",
            CuriosityKind::Dd => "dd",
        }
    }

    pub fn training_labels(self) -> &'static [Label] {
        match self {
            CuriosityKind::Rnd => &[Label::State],
            _ => SAS,
        }
    }

    pub fn evaluation_labels(self) -> &'static [Label] {
        match self {
            CuriosityKind::Rnd => &[Label::State],
            CuriosityKind::Dd => &[Label::State, Label::Action],
            CuriosityKind::Icm | CuriosityKind::Nsm => SAS,
        }
    }

    /// Whether the reward can score imagined states, i.e. needs no true next state.
    pub fn planner_compatible(self) -> bool {
        !self.evaluation_labels().contains(&Label::NextState)
    }
}

pub fn planner_compatible(kind: CuriosityKind) -> bool {
    kind.planner_compatible()
}

impl fmt::Display for CuriosityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name().to_uppercase())
    }
}

impl FromStr for CuriosityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnd" => Ok(CuriosityKind::Rnd),
            "icm" => Ok(CuriosityKind::Icm),
            "nsm" => Ok(CuriosityKind::Nsm),
            "dd" => Ok(CuriosityKind::Dd),
            other => Err(Error::config(format!("unknown curiosity kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuriosityConfig {
    pub kind: CuriosityKind,
    /// Hidden widths shared by every network of the model.
    pub hidden: Vec<usize>,
    /// RND embedding width.
    pub embed_dim: usize,
    /// ICM latent width.
    pub latent_dim: usize,
    /// DD ensemble size.
    pub ensemble_size: usize,
    /// Probability that a DD member trains on a given transition.
    pub bootstrap_prob: f64,
    pub lr: f64,
    /// Divide rewards by a running standard deviation of training-batch rewards.
    pub normalize_rewards: bool,
}

impl CuriosityConfig {
    pub fn new(kind: CuriosityKind) -> Self {
        Self {
            kind,
            hidden: vec![64, 64],
            embed_dim: 16,
            latent_dim: 16,
            ensemble_size: 5,
            bootstrap_prob: 0.8,
            lr: 1e-3,
            normalize_rewards: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == CuriosityKind::Dd && self.ensemble_size < 2 {
            return Err(Error::config("DD needs an ensemble of at least 2 members"));
        }
        if !(self.bootstrap_prob > 0.0 && self.bootstrap_prob <= 1.0) {
            return Err(Error::config("bootstrap probability must be in (0, 1]"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("curiosity learning rate must be positive"));
        }
        if self.embed_dim == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config("curiosity network widths must be >= 1"));
        }
        Ok(())
    }
}
