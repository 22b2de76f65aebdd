use ndarray::{Array2, ArrayView1};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// One SARS record plus episode bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Last step of an episode cut by the time limit.
    pub boundary: bool,
    /// True environment termination (never produced by the built-in environments).
    pub terminal: bool,
    pub episode: u32,
    pub step: u32,
}

/// Borrowed view of one stored transition.
#[derive(Clone, Copy, Debug)]
pub struct TransitionRef<'a> {
    pub state: &'a [f64],
    pub action: &'a [f64],
    pub reward: f64,
    pub next_state: &'a [f64],
    pub boundary: bool,
    pub terminal: bool,
    pub episode: u32,
    pub step: u32,
}

impl TransitionRef<'_> {
    pub fn to_owned(&self) -> Transition {
        Transition {
            state: self.state.to_vec(),
            action: self.action.to_vec(),
            reward: self.reward,
            next_state: self.next_state.to_vec(),
            boundary: self.boundary,
            terminal: self.terminal,
            episode: self.episode,
            step: self.step,
        }
    }
}

/// A contiguous run of `len` transitions from one episode, starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }

    pub fn last(&self) -> usize {
        self.start + self.len - 1
    }
}

/// A batch of transitions as matrices (rows are transitions).
#[derive(Clone, Debug, PartialEq)]
pub struct SarsBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub boundary: Vec<bool>,
    pub terminal: Vec<bool>,
}

impl SarsBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Column-oriented FIFO transition store.
///
/// Logical index 0 is the oldest retained transition. Evicted rows are
/// physically dropped in bulk, so storage stays contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
    start: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    boundary: Vec<bool>,
    terminal: Vec<bool>,
    episode: Vec<u32>,
    step: Vec<u32>,
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, act_dim: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 || obs_dim == 0 || act_dim == 0 {
            return Err(Error::config(format!(
                "replay buffer needs positive dims and capacity (obs {obs_dim}, act {act_dim}, capacity {capacity})"
            )));
        }
        Ok(Self {
            obs_dim,
            act_dim,
            capacity,
            start: 0,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            boundary: Vec::new(),
            terminal: Vec::new(),
            episode: Vec::new(),
            step: Vec::new(),
        })
    }

    /// An effectively unbounded buffer.
    pub fn unbounded(obs_dim: usize, act_dim: usize) -> Result<Self> {
        Self::new(obs_dim, act_dim, usize::MAX)
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rewards.len() - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn append(&mut self, t: &Transition) -> Result<()> {
        self.push(t.state.as_slice(), &t.action, t.reward, &t.next_state, t.boundary, t.terminal, t.episode, t.step)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        state: &[f64],
        action: &[f64],
        reward: f64,
        next_state: &[f64],
        boundary: bool,
        terminal: bool,
        episode: u32,
        step: u32,
    ) -> Result<()> {
        if state.len() != self.obs_dim || next_state.len() != self.obs_dim || action.len() != self.act_dim {
            return Err(Error::contract(format!(
                "transition dims ({}, {}, {}) do not match buffer ({}, {})",
                state.len(),
                action.len(),
                next_state.len(),
                self.obs_dim,
                self.act_dim
            )));
        }
        if state.iter().chain(action).chain(next_state).any(|x| !x.is_finite()) || !reward.is_finite() {
            return Err(Error::contract("transition contains non-finite values"));
        }
        self.states.extend_from_slice(state);
        self.actions.extend_from_slice(action);
        self.rewards.push(reward);
        self.next_states.extend_from_slice(next_state);
        self.boundary.push(boundary);
        self.terminal.push(terminal);
        self.episode.push(episode);
        self.step.push(step);
        if self.len() > self.capacity {
            self.start += 1;
            if self.start >= self.capacity.min(1 << 16) {
                self.compact();
            }
        }
        Ok(())
    }

    fn compact(&mut self) {
        let s = self.start;
        self.states.drain(..s * self.obs_dim);
        self.actions.drain(..s * self.act_dim);
        self.next_states.drain(..s * self.obs_dim);
        self.rewards.drain(..s);
        self.boundary.drain(..s);
        self.terminal.drain(..s);
        self.episode.drain(..s);
        self.step.drain(..s);
        self.start = 0;
    }

    fn phys(&self, i: usize) -> usize {
        assert!(i < self.len(), "transition index {i} out of range {}", self.len());
        self.start + i
    }

    pub fn state(&self, i: usize) -> &[f64] {
        let p = self.phys(i);
        &self.states[p * self.obs_dim..(p + 1) * self.obs_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        let p = self.phys(i);
        &self.actions[p * self.act_dim..(p + 1) * self.act_dim]
    }

    pub fn next_state(&self, i: usize) -> &[f64] {
        let p = self.phys(i);
        &self.next_states[p * self.obs_dim..(p + 1) * self.obs_dim]
    }

    pub fn reward(&self, i: usize) -> f64 {
        self.rewards[self.phys(i)]
    }

    pub fn episode(&self, i: usize) -> u32 {
        self.episode[self.phys(i)]
    }

    pub fn boundary(&self, i: usize) -> bool {
        self.boundary[self.phys(i)]
    }

    pub fn terminal(&self, i: usize) -> bool {
        self.terminal[self.phys(i)]
    }

    pub fn step_index(&self, i: usize) -> u32 {
        self.step[self.phys(i)]
    }

    pub fn get(&self, i: usize) -> TransitionRef<'_> {
        TransitionRef {
            state: self.state(i),
            action: self.action(i),
            reward: self.reward(i),
            next_state: self.next_state(i),
            boundary: self.boundary(i),
            terminal: self.terminal(i),
            episode: self.episode(i),
            step: self.step_index(i),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = TransitionRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards[self.start..]
    }

    pub(crate) fn set_reward(&mut self, i: usize, r: f64) {
        let p = self.phys(i);
        self.rewards[p] = r;
    }

    /// Gathers the given logical indices into row-major matrices.
    pub fn gather(&self, indices: &[usize]) -> SarsBatch {
        let n = indices.len();
        let (ds, da) = (self.obs_dim, self.act_dim);
        let mut states = Array2::zeros((n, ds));
        let mut actions = Array2::zeros((n, da));
        let mut next_states = Array2::zeros((n, ds));
        let mut rewards = Vec::with_capacity(n);
        let mut boundary = Vec::with_capacity(n);
        let mut terminal = Vec::with_capacity(n);
        for (row, &i) in indices.iter().enumerate() {
            states.row_mut(row).assign(&ArrayView1::from(self.state(i)));
            actions.row_mut(row).assign(&ArrayView1::from(self.action(i)));
            next_states.row_mut(row).assign(&ArrayView1::from(self.next_state(i)));
            rewards.push(self.reward(i));
            boundary.push(self.boundary(i));
            terminal.push(self.terminal(i));
        }
        SarsBatch { states, actions, rewards, next_states, boundary, terminal }
    }

    /// Copy of the first `n` logical transitions.
    pub fn prefix(&self, n: usize) -> ReplayBuffer {
        let n = n.min(self.len());
        let (s, e) = (self.start, self.start + n);
        ReplayBuffer {
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            capacity: self.capacity,
            start: 0,
            states: self.states[s * self.obs_dim..e * self.obs_dim].to_vec(),
            actions: self.actions[s * self.act_dim..e * self.act_dim].to_vec(),
            rewards: self.rewards[s..e].to_vec(),
            next_states: self.next_states[s * self.obs_dim..e * self.obs_dim].to_vec(),
            boundary: self.boundary[s..e].to_vec(),
            terminal: self.terminal[s..e].to_vec(),
            episode: self.episode[s..e].to_vec(),
            step: self.step[s..e].to_vec(),
        }
    }

    fn window_ok(&self, start: usize, len: usize) -> bool {
        let last = start + len - 1;
        last < self.len() && self.episode(start) == self.episode(last)
    }

    /// Samples `batch` windows of `n_step` consecutive transitions from a
    /// single episode, uniformly over all such windows.
    pub fn sample(&self, batch: usize, n_step: usize, rng: &mut Rng) -> Result<Vec<Window>> {
        if n_step == 0 {
            return Err(Error::config("window length must be >= 1"));
        }
        if self.len() < n_step {
            return Err(Error::precondition(format!(
                "buffer of {} transitions holds no window of length {n_step}",
                self.len()
            )));
        }
        let span = self.len() - n_step + 1;
        let mut out = Vec::with_capacity(batch);
        let mut valid: Option<Vec<usize>> = None;
        while out.len() < batch {
            if let Some(v) = &valid {
                out.push(Window { start: v[rng.random_range(0..v.len())], len: n_step });
                continue;
            }
            let mut accepted = false;
            for _ in 0..64 {
                let i = rng.random_range(0..span);
                if self.window_ok(i, n_step) {
                    out.push(Window { start: i, len: n_step });
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                let v: Vec<usize> = (0..span).filter(|&i| self.window_ok(i, n_step)).collect();
                if v.is_empty() {
                    return Err(Error::precondition(format!(
                        "no single-episode window of length {n_step} in buffer"
                    )));
                }
                valid = Some(v);
            }
        }
        Ok(out)
    }

    /// [`ReplayBuffer::sample`] with a stream derived from `seed`.
    pub fn sample_seeded(&self, batch: usize, n_step: usize, seed: u64) -> Result<Vec<Window>> {
        self.sample(batch, n_step, &mut crate::rng::stream(seed, "replay-sample", 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn tr(i: u32, episode: u32) -> Transition {
        Transition {
            state: vec![i as f64, 0.5],
            action: vec![-(i as f64)],
            reward: i as f64 * 0.1,
            next_state: vec![i as f64 + 1.0, 0.5],
            boundary: false,
            terminal: false,
            episode,
            step: i,
        }
    }

    #[test]
    fn append_counts_and_round_trips() {
        let mut b = ReplayBuffer::new(2, 1, 10).unwrap();
        for i in 0..7 {
            b.append(&tr(i, 0)).unwrap();
        }
        assert_eq!(b.len(), 7);
        assert_eq!(b.get(3).to_owned(), tr(3, 0));
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2, 1, 5).unwrap();
        for i in 0..6 {
            b.append(&tr(i, 0)).unwrap();
        }
        assert_eq!(b.len(), 5);
        assert_eq!(b.get(0).to_owned(), tr(1, 0));
        assert_eq!(b.get(4).to_owned(), tr(5, 0));
        for i in 6..40 {
            b.append(&tr(i, 0)).unwrap();
        }
        assert_eq!(b.len(), 5);
        assert_eq!(b.get(0).to_owned(), tr(35, 0));
    }

    #[test]
    fn dim_mismatch_is_contract_violation() {
        let mut b = ReplayBuffer::new(3, 1, 5).unwrap();
        assert!(matches!(b.append(&tr(0, 0)), Err(Error::Contract(_))));
        assert!(matches!(ReplayBuffer::new(3, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn windows_stay_inside_episodes() {
        let mut b = ReplayBuffer::unbounded(2, 1).unwrap();
        for e in 0..10u32 {
            for i in 0..7 {
                b.append(&tr(i, e)).unwrap();
            }
        }
        let ws = b.sample(2000, 4, &mut stream(1, "w", 0)).unwrap();
        for w in ws {
            assert_eq!(b.episode(w.start), b.episode(w.last()));
        }
        assert!(matches!(b.sample(1, 8, &mut stream(1, "w", 0)), Err(Error::Precondition(_))));
        let empty = ReplayBuffer::unbounded(2, 1).unwrap();
        assert!(matches!(empty.sample(1, 1, &mut stream(1, "w", 0)), Err(Error::Precondition(_))));
    }

    #[test]
    fn single_step_sampling_is_uniform() {
        let mut b = ReplayBuffer::unbounded(2, 1).unwrap();
        for i in 0..100 {
            b.append(&tr(i, 0)).unwrap();
        }
        let ws = b.sample(100_000, 1, &mut stream(5, "chi2", 0)).unwrap();
        let mut counts = [0f64; 100];
        for w in ws {
            assert_eq!(w.len, 1);
            counts[w.start] += 1.0;
        }
        let expected = 1000.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // Upper 0.001 critical value of chi-square with 99 degrees of freedom.
        assert!(chi2 < 148.23, "chi2 = {chi2}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut b = ReplayBuffer::unbounded(2, 1).unwrap();
        for i in 0..50 {
            b.append(&tr(i, i / 10)).unwrap();
        }
        assert_eq!(b.sample_seeded(32, 3, 9).unwrap(), b.sample_seeded(32, 3, 9).unwrap());
    }
}
