//! Data-collection agents: uniform random, reactive curiosity agents,
//! intrinsic model-predictive control (IMPC), and a task-aware baseline.
//!
//! Collection alternates environment steps and learner steps in one
//! thread: after every `learner_period` environment steps the agent takes
//! one learner step on a batch from the buffer collected so far. Nothing
//! depends on the requested run length, so the first `n` transitions of a
//! long run equal a run of length `n`.

mod policy;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use policy::{GaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};

use crate::crr::{CrrConfig, CrrLearner, StepMetrics, TdBatch};
use crate::curiosity::{CuriosityConfig, CuriosityKind, CuriosityModel};
use crate::datastore::{Dataset, DatasetHeader, ReplayBuffer, Transition};
use crate::envsuite::{self, EnvSpec, TaskSpec};
use crate::error::{Error, Result};
use crate::hash::config_hash;
use crate::planner::{maybe_plan, CuriosityReward, PlannerConfig};
use crate::rng::stream;
use crate::worldmodel::{DynamicsConfig, DynamicsModel, TrajectoryBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "curiosity", rename_all = "kebab-case")]
pub enum AgentKind {
    Random,
    Reactive(CuriosityKind),
    Impc(CuriosityKind),
    TaskAware,
}

impl AgentKind {
    pub fn is_task_agnostic(self) -> bool {
        !matches!(self, AgentKind::TaskAware)
    }

    pub fn curiosity(self) -> Option<CuriosityKind> {
        match self {
            AgentKind::Reactive(k) | AgentKind::Impc(k) => Some(k),
            _ => None,
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentKind::Random => f.write_str("random"),
            AgentKind::Reactive(k) => write!(f, "reactive-{}", k.name()),
            AgentKind::Impc(k) => write!(f, "impc-{}", k.name()),
            AgentKind::TaskAware => f.write_str("task-aware"),
        }
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    /// Accepts `random`, `task-aware`, `reactive-<kind>` and `impc-<kind>`;
    /// a bare curiosity name means the reactive agent.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        match s.as_str() {
            "random" => return Ok(AgentKind::Random),
            "task-aware" | "taskaware" => return Ok(AgentKind::TaskAware),
            _ => {}
        }
        if let Some(k) = s.strip_prefix("impc-") {
            return Ok(AgentKind::Impc(k.parse()?));
        }
        if let Some(k) = s.strip_prefix("reactive-") {
            return Ok(AgentKind::Reactive(k.parse()?));
        }
        s.parse::<CuriosityKind>()
            .map(AgentKind::Reactive)
            .map_err(|_| Error::config(format!("unknown agent '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub kind: AgentKind,
    #[serde(default)]
    pub planner: PlannerConfig,
    /// Environment steps per learner step.
    #[serde(default = "default_learner_period")]
    pub learner_period: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// TD horizon of the online critic.
    #[serde(default = "default_n_step")]
    pub n_step: usize,
    /// Online actor-critic settings (`n_step`, `batch_size` and `steps` are taken from above).
    #[serde(default = "default_online_crr")]
    pub learner: CrrConfig,
    #[serde(default)]
    pub curiosity: Option<CuriosityConfig>,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
}

fn default_learner_period() -> usize {
    4
}
fn default_batch() -> usize {
    64
}
fn default_n_step() -> usize {
    5
}

fn default_online_crr() -> CrrConfig {
    CrrConfig { v_max: Some(1000.0), ..CrrConfig::default() }
}

impl AgentConfig {
    pub fn new(kind: AgentKind) -> Self {
        let curiosity = kind.curiosity().map(|k| {
            let mut c = CuriosityConfig::new(k);
            c.normalize_rewards = true;
            c
        });
        Self {
            kind,
            planner: PlannerConfig::default(),
            learner_period: default_learner_period(),
            batch_size: default_batch(),
            n_step: default_n_step(),
            learner: default_online_crr(),
            curiosity,
            dynamics: DynamicsConfig::default(),
        }
    }

    pub fn with_planner(mut self, planner: PlannerConfig) -> Self {
        self.planner = planner;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let AgentKind::Impc(k) = self.kind {
            if !k.planner_compatible() {
                return Err(Error::config(format!(
                    "IMPC cannot plan with {k}: its reward needs the true next state"
                )));
            }
            self.planner.validate()?;
            if self.dynamics.train_horizon > self.n_step {
                return Err(Error::config("dynamics training horizon cannot exceed the sampled window length"));
            }
        }
        if let Some(k) = self.kind.curiosity() {
            match &self.curiosity {
                Some(c) if c.kind == k => c.validate()?,
                Some(c) => {
                    return Err(Error::config(format!(
                        "agent {} configured with a {} curiosity model",
                        self.kind, c.kind
                    )))
                }
                None => return Err(Error::config(format!("agent {} needs a curiosity section", self.kind))),
            }
        }
        if self.learner_period == 0 || self.batch_size == 0 || self.n_step == 0 {
            return Err(Error::config("learner period, batch size and n-step must be >= 1"));
        }
        self.learner.validate()
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}

/// Uniform sample from the action box.
pub fn random_act(spec: &EnvSpec, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "random-act", 0);
    (0..spec.act_dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Where the rewards written to the buffer come from.
#[derive(Clone, Debug, PartialEq)]
pub enum RewardChannel {
    /// The environment's default task.
    Default,
    /// A specific task's reward.
    Task(TaskSpec),
    /// All zeros: the environment exposes no reward at all.
    Zeroed,
}

/// Losses from one learner step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnerLosses {
    pub crr: StepMetrics,
    pub curiosity: Option<f64>,
    pub dynamics: Option<f64>,
}

/// An acting and learning agent bound to one environment.
#[derive(Clone, Debug)]
pub struct Agent {
    config: AgentConfig,
    env: EnvSpec,
    seed: u64,
    learner: Option<CrrLearner>,
    curiosity: Option<CuriosityModel>,
    dynamics: Option<DynamicsModel>,
    learner_steps: u64,
}

impl Agent {
    pub fn new(config: AgentConfig, env: &EnvSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        let learner = match config.kind {
            AgentKind::Random => None,
            _ => {
                let mut cfg = config.learner.clone();
                cfg.n_step = config.n_step;
                cfg.batch_size = config.batch_size;
                let v_max = cfg.v_max.unwrap_or(env.episode_length as f64);
                Some(CrrLearner::new(cfg, env, v_max, seed)?)
            }
        };
        let curiosity = match &config.curiosity {
            Some(c) if config.kind.curiosity().is_some() => Some(CuriosityModel::for_env(c.clone(), env, seed)?),
            _ => None,
        };
        let dynamics = match config.kind {
            AgentKind::Impc(_) => Some(DynamicsModel::for_env(config.dynamics.clone(), env, seed)?),
            _ => None,
        };
        Ok(Self { config, env: env.clone(), seed, learner, curiosity, dynamics, learner_steps: 0 })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn policy(&self) -> Option<&GaussianPolicy> {
        self.learner.as_ref().map(|l| &l.policy)
    }

    pub fn curiosity(&self) -> Option<&CuriosityModel> {
        self.curiosity.as_ref()
    }

    pub fn dynamics(&self) -> Option<&DynamicsModel> {
        self.dynamics.as_ref()
    }

    pub fn learner_steps(&self) -> u64 {
        self.learner_steps
    }

    /// Action for observation `obs` at global step `t`. Sees nothing but the observation.
    pub fn act(&self, obs: &[f64], t: u64) -> Result<Vec<f64>> {
        let step_seed = self.seed ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        match self.config.kind {
            AgentKind::Random => Ok(random_act(&self.env, step_seed)),
            AgentKind::Reactive(_) | AgentKind::TaskAware => {
                let policy = &self.learner.as_ref().expect("learning agent").policy;
                policy.sample(obs, &mut stream(self.seed, "act", t))
            }
            AgentKind::Impc(_) => self.impc_act(obs, step_seed),
        }
    }

    /// IMPC action: plan with probability rho, otherwise sample the policy.
    pub fn impc_act(&self, obs: &[f64], seed: u64) -> Result<Vec<f64>> {
        let (Some(learner), Some(curiosity), Some(dynamics)) = (&self.learner, &self.curiosity, &self.dynamics) else {
            return Err(Error::config(format!("agent {} does not plan", self.config.kind)));
        };
        let reward = CuriosityReward::new(curiosity)?;
        maybe_plan(obs, &learner.policy, dynamics, &reward, &self.config.planner, seed)
    }

    /// One learner step on a batch drawn from `buffer`. Task-agnostic
    /// agents score the batch with their curiosity model and ignore the
    /// buffer's reward column; the task-aware agent learns from it.
    pub fn learn(&mut self, buffer: &ReplayBuffer) -> Result<Option<LearnerLosses>> {
        let Some(learner) = self.learner.as_mut() else {
            return Ok(None);
        };
        let n_step = self.config.n_step;
        let mut rng = stream(self.seed, "learn-batch", self.learner_steps);
        let windows = buffer.sample(self.config.batch_size, n_step, &mut rng)?;
        let gamma = learner.config().gamma;
        let batch = match &self.curiosity {
            Some(c) => TdBatch::from_windows(buffer, &windows, gamma, |b| {
                c.rewards(&b.states, Some(&b.actions), Some(&b.next_states))
            })?,
            None => TdBatch::from_windows(buffer, &windows, gamma, |b| Ok(b.rewards.clone()))?,
        };
        let crr = learner.update(&batch)?;
        let starts: Vec<usize> = windows.iter().map(|w| w.start).collect();
        let curiosity = match self.curiosity.as_mut() {
            Some(c) => Some(c.train(&buffer.gather(&starts))?),
            None => None,
        };
        let dynamics = match self.dynamics.as_mut() {
            Some(d) => {
                let h = d.config().train_horizon;
                Some(d.train(&TrajectoryBatch::from_windows(buffer, &windows, h)?)?)
            }
            None => None,
        };
        self.learner_steps += 1;
        Ok(Some(LearnerLosses { crr, curiosity, dynamics }))
    }
}

/// Per-run collection summary, written next to the dataset as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectionLog {
    pub agent: String,
    pub env: String,
    pub seed: u64,
    pub steps: u64,
    pub config_hash: String,
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<u64>,
    pub learner_steps: u64,
}

/// Seed of the `episode`-th reset of a run.
fn episode_seed(seed: u64, episode: u64) -> u64 {
    use rand::RngCore as _;
    stream(seed, "episode-reset", episode).next_u64()
}

/// Runs `agent` for `n_steps` environment steps, appending every
/// transition to `buffer`.
pub fn collect_into(
    agent: &mut Agent,
    n_steps: u64,
    channel: &RewardChannel,
    buffer: &mut ReplayBuffer,
) -> Result<CollectionLog> {
    let env = agent.env.clone();
    if n_steps == 0 {
        return Err(Error::config("collection needs at least one step"));
    }
    if buffer.obs_dim() != env.obs_dim || buffer.act_dim() != env.act_dim {
        return Err(Error::config("buffer dimensions do not match the environment"));
    }
    if (buffer.capacity() as u64) < n_steps {
        return Err(Error::config(format!(
            "buffer capacity {} is smaller than the {n_steps} steps requested",
            buffer.capacity()
        )));
    }
    let task = match channel {
        RewardChannel::Task(t) => Some(t.clone()),
        _ => None,
    };
    let period = agent.config.learner_period as u64;
    let mut returns = Vec::new();
    let mut lengths = Vec::new();
    let mut state = envsuite::reset(&env, episode_seed(agent.seed, 0));
    let mut episode: u32 = 0;
    let mut ep_return = 0.0;
    for t in 0..n_steps {
        let action = env.clip_action(&agent.act(&state.obs, t)?);
        let out = envsuite::step_with_task(&env, &state, &action, task.as_ref())?;
        let reward = if *channel == RewardChannel::Zeroed { 0.0 } else { out.reward };
        buffer.append(&Transition {
            state: state.obs.clone(),
            action,
            reward,
            next_state: out.state.obs.clone(),
            boundary: out.boundary,
            terminal: false,
            episode,
            step: state.step as u32,
        })?;
        ep_return += reward;
        if (t + 1) % period == 0 && buffer.len() >= agent.config.batch_size.max(agent.config.n_step) {
            agent.learn(buffer)?;
        }
        if out.boundary {
            returns.push(ep_return);
            lengths.push(out.state.step as u64);
            ep_return = 0.0;
            episode += 1;
            state = envsuite::reset(&env, episode_seed(agent.seed, u64::from(episode)));
        } else {
            state = out.state;
        }
    }
    Ok(CollectionLog {
        agent: agent.config.kind.to_string(),
        env: env.name.clone(),
        seed: agent.seed,
        steps: n_steps,
        config_hash: agent.config.hash()?,
        episode_returns: returns,
        episode_lengths: lengths,
        learner_steps: agent.learner_steps,
    })
}

/// Builds the agent, collects `n_steps` and packages the result as a dataset.
pub fn collect(config: &AgentConfig, env: &EnvSpec, n_steps: u64, seed: u64, channel: &RewardChannel) -> Result<(Dataset, CollectionLog)> {
    let mut agent = Agent::new(config.clone(), env, seed)?;
    let mut buffer = ReplayBuffer::unbounded(env.obs_dim, env.act_dim)?;
    let log = collect_into(&mut agent, n_steps, channel, &mut buffer)?;
    let header = DatasetHeader {
        env: env.name.clone(),
        obs_dim: env.obs_dim,
        act_dim: env.act_dim,
        episode_length: env.episode_length as u64,
        agent: config.kind.to_string(),
        seed,
        config_hash: log.config_hash.clone(),
        size: 0,
        relabel_task: match channel {
            RewardChannel::Task(t) => Some(t.clone()),
            _ => None,
        },
    };
    Ok((Dataset::new(header, buffer)?, log))
}

/// The task-aware baseline: learns online from `task`'s reward.
pub fn task_aware_collect(config: &AgentConfig, env: &EnvSpec, task: &TaskSpec, n_steps: u64, seed: u64) -> Result<(Dataset, CollectionLog)> {
    if config.kind != AgentKind::TaskAware {
        return Err(Error::config("task_aware_collect needs a task-aware agent config"));
    }
    collect(config, env, n_steps, seed, &RewardChannel::Task(task.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agent_names_round_trip() {
        for k in [
            AgentKind::Random,
            AgentKind::TaskAware,
            AgentKind::Reactive(CuriosityKind::Icm),
            AgentKind::Impc(CuriosityKind::Dd),
        ] {
            assert_eq!(k.to_string().parse::<AgentKind>().unwrap(), k);
        }
        assert_eq!("rnd".parse::<AgentKind>().unwrap(), AgentKind::Reactive(CuriosityKind::Rnd));
        assert!("mpo".parse::<AgentKind>().is_err());
    }

    #[test]
    fn impc_compatibility() {
        let env = EnvSpec::by_name("pointmass").unwrap();
        for (k, ok) in [
            (CuriosityKind::Rnd, true),
            (CuriosityKind::Dd, true),
            (CuriosityKind::Nsm, false),
            (CuriosityKind::Icm, false),
        ] {
            let r = Agent::new(AgentConfig::new(AgentKind::Impc(k)), &env, 0);
            assert_eq!(r.is_ok(), ok, "{k}");
            if !ok {
                assert!(matches!(r.unwrap_err(), Error::Config(_)));
            }
        }
    }

    #[test]
    fn random_act_in_box() {
        let env = EnvSpec::by_name("reacher").unwrap();
        for s in 0..1000 {
            assert!(random_act(&env, s).iter().all(|a| (-1.0..=1.0).contains(a)));
        }
        assert_eq!(random_act(&env, 5), random_act(&env, 5));
    }

    #[test]
    fn config_serde_round_trip() {
        let c = AgentConfig::new(AgentKind::Impc(CuriosityKind::Rnd));
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<AgentConfig>(&text).unwrap(), c);
        let minimal: AgentConfig = serde_json::from_str(r#"{"kind":{"type":"random"}}"#).unwrap();
        assert_eq!(minimal.kind, AgentKind::Random);
    }
}
