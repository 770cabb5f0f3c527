//! Run configuration: a single TOML tree with per-experiment sections.
//!
//! Unknown keys are hard errors so hyperparameter typos cannot silently
//! fall back to defaults. Defaults follow the experiment conventions:
//! chain models are 4x256 tanh with weight decay 1e-6 and m = 5 samples;
//! the continuous maze uses ReLU models, weight decay 1e-5, m = 32,
//! minibatch 256. Adam runs at 1e-4 for all model training.

use serde::{Deserialize, Serialize};
use svgd_explore::agents::{DdqnConfig, MctsConfig, ShootingConfig};
use svgd_explore::diffcore::Nonlinearity;
use svgd_explore::envs::MazeConfig;
use svgd_explore::hypergen::{GeneratorConfig, NoiseSharing};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Chain,
    Maze,
    SvgdSanity,
    Gradcheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    Disagreement,
    Icm,
    Ddqn,
    Random,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ours" => Ok(Method::Ours),
            "disagreement" => Ok(Method::Disagreement),
            "icm" => Ok(Method::Icm),
            "ddqn" => Ok(Method::Ddqn),
            "random" => Ok(Method::Random),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

impl clap::ValueEnum for Method {
    fn value_variants<'a>() -> &'a [Self] {
        &[
            Method::Ours,
            Method::Disagreement,
            Method::Icm,
            Method::Ddqn,
            Method::Random,
        ]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Method::Ours => "ours",
            Method::Disagreement => "disagreement",
            Method::Icm => "icm",
            Method::Ddqn => "ddqn",
            Method::Random => "random",
        }))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Method::Ours => "ours",
            Method::Disagreement => "disagreement",
            Method::Icm => "icm",
            Method::Ddqn => "ddqn",
            Method::Random => "random",
        };
        write!(f, "{name}")
    }
}

/// Checkpoint serialization selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointFormat {
    Off,
    Json,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub noise_dim: usize,
    pub hidden: Vec<usize>,
    pub nonlinearity: Nonlinearity,
    pub output_scale: f64,
    pub noise_sharing: NoiseSharing,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            noise_dim: 32,
            hidden: vec![64, 64],
            nonlinearity: Nonlinearity::Relu,
            output_scale: 1.0,
            noise_sharing: NoiseSharing::Shared,
        }
    }
}

impl GeneratorSection {
    pub fn to_core(&self) -> GeneratorConfig {
        GeneratorConfig {
            noise_dim: self.noise_dim,
            hidden_widths: self.hidden.clone(),
            nonlinearity: self.nonlinearity,
            output_scale: self.output_scale,
            noise_sharing: self.noise_sharing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSection {
    pub n_states: usize,
    pub episodes: usize,
    /// Random episodes rolled into the buffer before exploring (episode 0).
    pub warmup_episodes: usize,
    pub model_hidden: Vec<usize>,
    pub model_nonlinearity: Nonlinearity,
    /// SVGD particles per refit update and planning ensemble size.
    pub sample_count: usize,
    pub weight_decay: f64,
    pub refit_epochs: usize,
    pub kernel_floor: f64,
    pub normalize_reward: bool,
    pub stop_at_full_coverage: bool,
    pub mcts: MctsConfig,
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            n_states: 40,
            episodes: 30,
            warmup_episodes: 1,
            model_hidden: vec![256, 256, 256, 256],
            model_nonlinearity: Nonlinearity::Tanh,
            sample_count: 5,
            weight_decay: 1e-6,
            refit_epochs: 10,
            kernel_floor: 1e-8,
            normalize_reward: false,
            stop_at_full_coverage: true,
            mcts: MctsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MazeSection {
    pub steps: usize,
    pub warmup_steps: usize,
    pub env: MazeConfig,
    pub model_hidden: Vec<usize>,
    pub model_nonlinearity: Nonlinearity,
    pub sample_count: usize,
    pub weight_decay: f64,
    pub refit_interval: usize,
    pub refit_iterations: usize,
    pub minibatch: usize,
    pub kernel_floor: f64,
    pub shooting: ShootingConfig,
}

impl Default for MazeSection {
    fn default() -> Self {
        Self {
            steps: 10_000,
            warmup_steps: 500,
            env: MazeConfig::default(),
            model_hidden: vec![64, 64],
            model_nonlinearity: Nonlinearity::Relu,
            sample_count: 32,
            weight_decay: 1e-5,
            refit_interval: 25,
            refit_iterations: 50,
            minibatch: 256,
            kernel_floor: 1e-8,
            shooting: ShootingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SanitySection {
    pub particle_count: usize,
    pub step_size: f64,
    pub iterations: usize,
}

impl Default for SanitySection {
    fn default() -> Self {
        Self {
            particle_count: 32,
            step_size: 0.05,
            iterations: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    pub export_trajectories: bool,
    pub save_checkpoint: CheckpointFormat,
    pub optimizer: OptimizerSection,
    pub generator: GeneratorSection,
    pub chain: ChainSection,
    pub maze: MazeSection,
    pub ddqn: DdqnConfig,
    pub sanity: SanitySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Chain,
            method: Method::Ours,
            seeds: vec![0, 1, 2],
            output_dir: "runs".into(),
            export_trajectories: false,
            save_checkpoint: CheckpointFormat::Off,
            optimizer: OptimizerSection::default(),
            generator: GeneratorSection::default(),
            chain: ChainSection::default(),
            maze: MazeSection::default(),
            ddqn: DdqnConfig::default(),
            sanity: SanitySection::default(),
        }
    }
}

impl RunConfig {
    /// Parse TOML, rejecting unknown keys with a field-precise message.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds: need at least one seed".into()));
        }
        if self.chain.n_states < 2 {
            return Err(CliError::Config("chain.n_states: must be >= 2".into()));
        }
        if self.chain.sample_count < 2 {
            return Err(CliError::Config("chain.sample_count: variance rewards need >= 2".into()));
        }
        if self.maze.sample_count < 2 {
            return Err(CliError::Config("maze.sample_count: variance rewards need >= 2".into()));
        }
        if self.optimizer.learning_rate <= 0.0 {
            return Err(CliError::Config("optimizer.learning_rate: must be > 0".into()));
        }
        if self.experiment == Experiment::Maze {
            match self.method {
                Method::Ours | Method::Disagreement | Method::Random => {}
                other => {
                    return Err(CliError::Config(format!(
                        "method: '{other}' is not defined for the maze experiment \
                         (use ours, disagreement, or random)"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Hash of everything that must be identical across methods within one
    /// experiment: the dynamics architecture, optimizer, generator, SVGD,
    /// and environment settings. The method field itself is excluded.
    pub fn pipeline_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        #[derive(Serialize)]
        struct Shared<'a> {
            experiment: &'a Experiment,
            optimizer: &'a OptimizerSection,
            generator: &'a GeneratorSection,
            chain: &'a ChainSection,
            maze: &'a MazeSection,
        }
        let canon = serde_json::to_vec(&Shared {
            experiment: &self.experiment,
            optimizer: &self.optimizer,
            generator: &self.generator,
            chain: &self.chain,
            maze: &self.maze,
        })
        .expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&canon);
        hex_string(&hasher.finalize())
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let config = RunConfig::default();
        let text = config.to_toml();
        let parsed = RunConfig::from_toml(&text).unwrap();
        assert_eq!(config, parsed);
    }

    #[test]
    fn unknown_keys_are_rejected_with_field_name() {
        let err = RunConfig::from_toml("warmup_epochs = 3\n").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("warmup_epochs"), "{msg}");

        let err = RunConfig::from_toml("[chain]\nn_stattes = 40\n").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("n_stattes"), "{msg}");
    }

    #[test]
    fn supplement_defaults_are_pinned() {
        let config = RunConfig::default();
        assert_eq!(config.optimizer.learning_rate, 1e-4);
        assert_eq!(config.chain.weight_decay, 1e-6);
        assert_eq!(config.maze.weight_decay, 1e-5);
        assert_eq!(config.maze.minibatch, 256);
        assert_eq!(config.chain.sample_count, 5);
        assert_eq!(config.maze.sample_count, 32);
        assert_eq!(config.generator.noise_dim, 32);
        assert_eq!(config.generator.hidden, vec![64, 64]);
        assert_eq!(config.chain.n_states, 40);
        assert_eq!(config.chain.refit_epochs, 10);
        assert_eq!(config.chain.mcts.tree_iterations, 25);
        assert_eq!(config.chain.mcts.rollouts_per_iteration, 10);
    }

    #[test]
    fn pipeline_hash_ignores_the_method() {
        let mut a = RunConfig::default();
        let mut b = RunConfig::default();
        a.method = Method::Ours;
        b.method = Method::Icm;
        assert_eq!(a.pipeline_hash(), b.pipeline_hash());
        b.chain.model_hidden = vec![16];
        assert_ne!(a.pipeline_hash(), b.pipeline_hash());
    }

    #[test]
    fn maze_rejects_undefined_methods() {
        let mut config = RunConfig::default();
        config.experiment = Experiment::Maze;
        config.method = Method::Ddqn;
        assert!(config.validate().is_err());
        config.method = Method::Icm;
        assert!(config.validate().is_err());
        config.method = Method::Ours;
        assert!(config.validate().is_ok());
    }
}
