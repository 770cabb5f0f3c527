use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Chain actions. The index order is the tie-break order used by planners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainAction {
    Backward = 0,
    Forward = 1,
}

impl ChainAction {
    pub const ALL: [ChainAction; 2] = [ChainAction::Backward, ChainAction::Forward];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(ChainAction::Backward),
            1 => Ok(ChainAction::Forward),
            _ => Err(Error::InvalidArgument(format!("chain action index {i}"))),
        }
    }

    #[inline]
    fn reversed(self) -> Self {
        match self {
            ChainAction::Backward => ChainAction::Forward,
            ChainAction::Forward => ChainAction::Backward,
        }
    }
}

/// A finite chain of `N` states. Episodes start at state 1 and last `N + 9`
/// steps. Moving off an edge leaves the agent in place. Each state is a
/// flip-state with probability one half, fixed at construction: acting from
/// a flip-state reverses the action. Reaching state `0` pays `0.01`,
/// reaching state `N - 1` pays `1.0`.
#[derive(Debug, Clone)]
pub struct ChainEnv<S: Scalar> {
    n_states: usize,
    flip_mask: Vec<bool>,
    current_state: usize,
    steps_taken: usize,
    episode_length: usize,
    reward_small: S,
    reward_large: S,
    visited: Vec<bool>,
    done: bool,
}

impl<S: Scalar> ChainEnv<S> {
    /// Flip-mask drawn once from the seed; fixed for the instance lifetime.
    pub fn new(n_states: usize, rng_seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let flip_mask = (0..n_states).map(|_| rng.gen_bool(0.5)).collect();
        Self::with_flip_mask(n_states, flip_mask)
    }

    /// Explicit flip-mask (tests and oracles).
    pub fn with_flip_mask(n_states: usize, flip_mask: Vec<bool>) -> Result<Self> {
        if n_states < 2 {
            return Err(Error::InvalidArgument("chain needs at least 2 states".into()));
        }
        if flip_mask.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "flip mask length {} != n_states {n_states}",
                flip_mask.len()
            )));
        }
        let mut env = Self {
            n_states,
            flip_mask,
            current_state: 1,
            steps_taken: 0,
            episode_length: n_states + 9,
            reward_small: S::from_f64(0.01),
            reward_large: S::one(),
            visited: vec![false; n_states],
            done: false,
        };
        env.visited[1] = true;
        Ok(env)
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn current_state(&self) -> usize {
        self.current_state
    }

    #[inline]
    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    #[inline]
    pub fn episode_length(&self) -> usize {
        self.episode_length
    }

    #[inline]
    pub fn steps_remaining(&self) -> usize {
        self.episode_length - self.steps_taken
    }

    #[inline]
    pub fn is_done(&self) -> bool {
        self.done
    }

    /// True flip-mask; for test oracles, never for planners.
    #[inline]
    pub fn flip_mask(&self) -> &[bool] {
        &self.flip_mask
    }

    /// One-hot encoding of a state index, length `N`.
    pub fn state_encoding(&self, state: usize) -> Vec<S> {
        let mut enc = vec![S::zero(); self.n_states];
        enc[state] = S::one();
        enc
    }

    /// One-hot encoding of an action, length 2.
    pub fn action_encoding(&self, action: ChainAction) -> Vec<S> {
        let mut enc = vec![S::zero(); 2];
        enc[action.index()] = S::one();
        enc
    }

    /// Dynamics-model input: `state one-hot ++ action one-hot`.
    pub fn model_input(&self, state: usize, action: ChainAction) -> Vec<S> {
        let mut enc = self.state_encoding(state);
        enc.extend(self.action_encoding(action));
        enc
    }

    #[inline]
    pub fn model_input_dim(&self) -> usize {
        self.n_states + 2
    }

    #[inline]
    pub fn model_output_dim(&self) -> usize {
        self.n_states
    }

    /// Start a new episode at state 1. The per-run visited set persists.
    pub fn reset(&mut self) -> Vec<S> {
        self.current_state = 1;
        self.steps_taken = 0;
        self.done = false;
        self.visited[1] = true;
        self.state_encoding(1)
    }

    /// Successor of `(state, action)` under the fixed flip-mask; the chain's
    /// transition kernel is degenerate so this is exactly one state.
    pub fn successor(&self, state: usize, action: ChainAction) -> usize {
        let effective = if self.flip_mask[state] { action.reversed() } else { action };
        match effective {
            ChainAction::Forward => (state + 1).min(self.n_states - 1),
            ChainAction::Backward => state.saturating_sub(1),
        }
    }

    fn reward_at(&self, state: usize) -> S {
        if state == 0 {
            self.reward_small
        } else if state == self.n_states - 1 {
            self.reward_large
        } else {
            S::zero()
        }
    }

    pub fn step(&mut self, action: ChainAction) -> Result<Transition<S>> {
        if self.done {
            return Err(Error::Environment("stepping a finished chain episode".into()));
        }
        let state = self.current_state;
        let next = self.successor(state, action);
        self.steps_taken += 1;
        self.done = self.steps_taken == self.episode_length;
        self.visited[next] = true;
        let transition = Transition {
            state: self.state_encoding(state),
            action: self.action_encoding(action),
            next_state: self.state_encoding(next),
            external_reward: self.reward_at(next),
            done: self.done,
        };
        self.current_state = next;
        Ok(transition)
    }

    /// Fraction of distinct states visited this run.
    pub fn coverage(&self) -> f64 {
        self.visited.iter().filter(|&&v| v).count() as f64 / self.n_states as f64
    }

    pub fn visited(&self) -> &[bool] {
        &self.visited
    }
}
