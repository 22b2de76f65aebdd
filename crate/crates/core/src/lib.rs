//! Task-agnostic exploration, hindsight reward relabeling and offline
//! policy inference on small continuous-control environments.
//!
//! The pipeline runs in four stages: an exploration agent collects a
//! transition [`datastore::Dataset`] without seeing task rewards; the
//! dataset is relabeled with a task's reward; a Critic Regularized
//! Regression learner ([`crr`]) fits a policy offline; and
//! [`evalharness`] evaluates the policy and relates its return to
//! statistics of the data.

pub mod agents;
pub mod crr;
pub mod curiosity;
pub mod datastore;
pub mod envsuite;
mod error;
pub mod evalharness;
pub mod funcapprox;
pub mod hash;
pub mod planner;
pub mod rng;
pub mod tables;
pub mod worldmodel;

pub use error::{Error, Result};
