//! Transition records `(s, a, r', s')` stored column-block by column-block.

use crate::error::{Error, Result};

/// Borrowed view of one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<'a> {
    pub state: &'a [f64],
    pub action: &'a [f64],
    pub reward: f64,
    pub next_state: &'a [f64],
}

/// A typed collection of transitions with fixed state/action dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    n: usize,
    m: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
}

/// Batches and datasets share one representation.
pub type TransitionBatch = TransitionDataset;

impl TransitionDataset {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        TransitionDataset {
            n: state_dim,
            m: action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
        }
    }

    pub fn with_capacity(state_dim: usize, action_dim: usize, capacity: usize) -> Self {
        TransitionDataset {
            n: state_dim,
            m: action_dim,
            states: Vec::with_capacity(capacity * state_dim),
            actions: Vec::with_capacity(capacity * action_dim),
            rewards: Vec::with_capacity(capacity),
            next_states: Vec::with_capacity(capacity * state_dim),
        }
    }

    /// Builds a dataset from flat row-major blocks.
    pub fn from_parts(
        state_dim: usize,
        action_dim: usize,
        states: Vec<f64>,
        actions: Vec<f64>,
        rewards: Vec<f64>,
        next_states: Vec<f64>,
    ) -> Result<Self> {
        let count = rewards.len();
        if states.len() != count * state_dim
            || next_states.len() != count * state_dim
            || actions.len() != count * action_dim
        {
            return Err(Error::InputShape(format!(
                "inconsistent transition blocks for {count} records (n = {state_dim}, m = {action_dim})"
            )));
        }
        let ds = TransitionDataset {
            n: state_dim,
            m: action_dim,
            states,
            actions,
            rewards,
            next_states,
        };
        ds.check_finite()?;
        Ok(ds)
    }

    pub fn push(&mut self, state: &[f64], action: &[f64], reward: f64, next_state: &[f64]) -> Result<()> {
        if state.len() != self.n || next_state.len() != self.n || action.len() != self.m {
            return Err(Error::InputShape(format!(
                "transition with |s| = {}, |a| = {}, |s'| = {} does not fit n = {}, m = {}",
                state.len(),
                action.len(),
                next_state.len(),
                self.n,
                self.m
            )));
        }
        self.states.extend_from_slice(state);
        self.actions.extend_from_slice(action);
        self.rewards.push(reward);
        self.next_states.extend_from_slice(next_state);
        Ok(())
    }

    #[inline]
    pub fn state_dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn action_dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    #[inline]
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.m..(i + 1) * self.m]
    }

    #[inline]
    pub fn reward(&self, i: usize) -> f64 {
        self.rewards[i]
    }

    #[inline]
    pub fn next_state(&self, i: usize) -> &[f64] {
        &self.next_states[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize) -> Transition<'_> {
        Transition {
            state: self.state(i),
            action: self.action(i),
            reward: self.reward(i),
            next_state: self.next_state(i),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Transition<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn next_states(&self) -> &[f64] {
        &self.next_states
    }

    /// Copies the listed records, in order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> TransitionDataset {
        let mut out = TransitionDataset::with_capacity(self.n, self.m, indices.len());
        for &i in indices {
            out.states.extend_from_slice(self.state(i));
            out.actions.extend_from_slice(self.action(i));
            out.rewards.push(self.rewards[i]);
            out.next_states.extend_from_slice(self.next_state(i));
        }
        out
    }

    /// Appends every record of `other`.
    pub fn extend_from(&mut self, other: &TransitionDataset) -> Result<()> {
        if other.n != self.n || other.m != self.m {
            return Err(Error::InputShape(format!(
                "cannot merge datasets with dims ({}, {}) and ({}, {})",
                self.n, self.m, other.n, other.m
            )));
        }
        self.states.extend_from_slice(&other.states);
        self.actions.extend_from_slice(&other.actions);
        self.rewards.extend_from_slice(&other.rewards);
        self.next_states.extend_from_slice(&other.next_states);
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        let all = self
            .states
            .iter()
            .chain(&self.actions)
            .chain(&self.rewards)
            .chain(&self.next_states);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericInput("dataset contains non-finite values".into()));
        }
        Ok(())
    }
}
