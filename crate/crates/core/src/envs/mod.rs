//! Desk-scale exploration environments.
//!
//! [`ChainEnv`] is the stochastic chain with flip-states; [`MazeEnv`] is a
//! continuous 2-D U-corridor. Both keep a per-run visited set so coverage is
//! monotone across episodes of the same run.

mod chain;
mod maze;
mod replay;

pub use chain::{ChainAction, ChainEnv};
pub use maze::{MazeConfig, MazeEnv};
pub use replay::{transitions_to_csv, ReplayBuffer, Transition};
