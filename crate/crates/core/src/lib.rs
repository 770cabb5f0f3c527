//! Exploration through an implicit posterior over environment dynamics.
//!
//! The crate trains a layer-wise weight generator whose draws are full
//! dynamics networks. The generator is fitted with amortized Stein
//! variational gradient descent so that its samples track the posterior over
//! dynamics models given the replay buffer, and the predictive variance
//! across samples serves as an intrinsic reward for exploration.
//!
//! Module map:
//! - [`diffcore`]: dense tensors, MLP forward/backward, Adam.
//! - [`hypergen`]: the layer-wise weight generator and ensemble sampling.
//! - [`svgd`]: kernels in function space, the Stein direction, particle and
//!   amortized updates.
//! - [`intrinsic`]: predictive-variance, disagreement, and prediction-error
//!   rewards.
//! - [`envs`]: the stochastic chain and a continuous U-maze, with coverage
//!   accounting.
//! - [`agents`]: MCTS and shooting planners, a DDQN baseline, and the
//!   exploration loop.
//!
//! All numeric code is generic over the scalar type via [`scalar::Scalar`];
//! the aliases below pin the `f64` instantiation used by the experiment
//! harness.

pub mod agents;
pub mod diffcore;
pub mod envs;
pub mod error;
pub mod hypergen;
pub mod intrinsic;
pub mod scalar;
pub mod svgd;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar for experiments. 32-bit drift in the Stein updates is not
/// worth debugging at these problem sizes.
pub type Real = f64;

pub type Tensor = diffcore::Tensor<Real>;
pub type MlpSpec = diffcore::MlpSpec;
pub type AdamState = diffcore::AdamState<Real>;
pub type GeneratorBundle = hypergen::GeneratorBundle<Real>;
pub type DynamicsSample = hypergen::DynamicsSample<Real>;
pub type SvgdConfig = svgd::SvgdConfig<Real>;
pub type Transition = envs::Transition<Real>;
pub type ReplayBuffer = envs::ReplayBuffer<Real>;
pub type ChainEnv = envs::ChainEnv<Real>;
pub type MazeEnv = envs::MazeEnv<Real>;
pub type ChainExplorerConfig = agents::ChainExplorerConfig<Real>;
pub type MazeExplorerConfig = agents::MazeExplorerConfig<Real>;
