//! Replay buffer, the on-disk dataset format, and hindsight relabeling.

mod buffer;
mod format;
mod relabel;
mod stats;

pub use buffer::{ReplayBuffer, SarsBatch, Transition, TransitionRef, Window};
pub use format::{DatasetHeader, FORMAT_MAGIC};
pub use relabel::relabel;
pub use stats::{quantile, stats_schema, write_stats_table, DatasetStats};

use crate::envsuite::EnvSpec;
use crate::error::{Error, Result};

/// A collected run: transitions in collection order plus provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub transitions: ReplayBuffer,
}

impl Dataset {
    pub fn new(header: DatasetHeader, transitions: ReplayBuffer) -> Result<Self> {
        let mut header = header;
        if header.obs_dim != transitions.obs_dim() || header.act_dim != transitions.act_dim() {
            return Err(Error::config("dataset header dims do not match transitions"));
        }
        header.size = transitions.len() as u64;
        Ok(Self { header, transitions })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        EnvSpec::by_name(&self.header.env)?.with_episode_length(self.header.episode_length as usize)
    }

    /// The first `n` transitions of the run.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n > self.len() {
            return Err(Error::precondition(format!(
                "prefix of {n} transitions requested from a dataset of {}",
                self.len()
            )));
        }
        let mut header = self.header.clone();
        header.size = n as u64;
        Ok(Self { header, transitions: self.transitions.prefix(n) })
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::of(self)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        format::save(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        format::load(path.as_ref())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        format::to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        format::from_bytes(bytes)
    }
}
