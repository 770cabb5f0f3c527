//! Planners and exploration agents.
//!
//! The chain agent plans with MCTS through tables precomputed from the
//! current model ensemble; the maze agent uses cross-entropy random
//! shooting through the sampled models. DDQN is the model-free baseline.

mod ddqn;
mod explore;
mod mcts;
mod shooting;

pub use ddqn::{DdqnAgent, DdqnConfig};
pub use explore::{
    dedup_chain_batch, ChainExplorer, ChainExplorerConfig, ChainMethod, ChainPolicy,
    EpisodeMetrics, MazeExplorer, MazeExplorerConfig, OptimizerConfig, StepRecord,
};
pub use mcts::{
    build_chain_simulator, mcts_plan, ChainRewardMode, ChainSimulator, MctsConfig,
    MctsDiagnostics, MctsTree,
};
pub use shooting::{cem_refit, shooting_plan, ShootingConfig, ShootingDiagnostics};
