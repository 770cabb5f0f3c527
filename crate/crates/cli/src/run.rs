//! Experiment orchestration: one run directory per (experiment, method),
//! one subdirectory per seed, every byte of `metrics.csv` a deterministic
//! function of (config, seed).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use rand::{Rng, SeedableRng};
use svgd_explore::agents::{
    ChainExplorer, ChainExplorerConfig, ChainMethod, DdqnAgent, MazeExplorer, MazeExplorerConfig,
    StepRecord,
};
use svgd_explore::envs::{transitions_to_csv, ChainAction, ChainEnv, MazeEnv, ReplayBuffer};
use svgd_explore::hypergen::GeneratorBundle;
use svgd_explore::svgd::SvgdConfig;
use svgd_explore::Real;

use crate::config::{CheckpointFormat, Experiment, Method, RunConfig};
use crate::manifest::write_manifest;
use crate::metrics::{episodes_to_coverage, summary_csv, MetricsRow, RunMetrics};
use crate::CliError;

pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub per_seed: Vec<RunMetrics>,
}

fn chain_method(method: Method) -> ChainMethod {
    match method {
        Method::Ours => ChainMethod::Ours,
        Method::Disagreement => ChainMethod::Disagreement,
        Method::Icm => ChainMethod::Icm,
        Method::Random | Method::Ddqn => ChainMethod::Random,
    }
}

fn chain_explorer_config(config: &RunConfig) -> ChainExplorerConfig<Real> {
    ChainExplorerConfig {
        model_hidden: config.chain.model_hidden.clone(),
        model_nonlinearity: config.chain.model_nonlinearity,
        generator: config.generator.to_core(),
        svgd: SvgdConfig {
            step_size: 1.0,
            particle_count: config.chain.sample_count,
            kernel_floor: config.chain.kernel_floor,
        },
        optimizer: svgd_explore::agents::OptimizerConfig {
            learning_rate: config.optimizer.learning_rate,
            weight_decay: config.chain.weight_decay,
        },
        refit_epochs: config.chain.refit_epochs,
        mcts: config.chain.mcts.clone(),
        ensemble_size: config.chain.sample_count,
        normalize_reward: config.chain.normalize_reward,
    }
}

fn maze_explorer_config(config: &RunConfig) -> MazeExplorerConfig<Real> {
    MazeExplorerConfig {
        model_hidden: config.maze.model_hidden.clone(),
        model_nonlinearity: config.maze.model_nonlinearity,
        generator: config.generator.to_core(),
        svgd: SvgdConfig {
            step_size: 1.0,
            particle_count: config.maze.sample_count,
            kernel_floor: config.maze.kernel_floor,
        },
        optimizer: svgd_explore::agents::OptimizerConfig {
            learning_rate: config.optimizer.learning_rate,
            weight_decay: config.maze.weight_decay,
        },
        refit_interval: config.maze.refit_interval,
        refit_iterations: config.maze.refit_iterations,
        minibatch: config.maze.minibatch,
        shooting: config.maze.shooting.clone(),
        ensemble_size: config.maze.sample_count,
    }
}

fn push_rows(rows: &mut Vec<MetricsRow>, steps: &[StepRecord], episode: u64, next_step: &mut u64) {
    for s in steps {
        rows.push(MetricsRow {
            step: *next_step,
            episode,
            coverage: s.coverage,
            intrinsic_reward: s.intrinsic_reward,
            model_loss: s.model_loss,
            bandwidth: s.bandwidth,
        });
        *next_step += 1;
    }
}

/// Execute one chain seed for any model-based or random method.
fn run_chain_seed(config: &RunConfig, seed: u64, seed_dir: &Path) -> Result<RunMetrics, CliError> {
    let start = Instant::now();
    let n = config.chain.n_states;
    let mut env = ChainEnv::new(n, seed).map_err(core_err)?;
    let mut buffer = ReplayBuffer::new();
    let mut explorer =
        ChainExplorer::new(chain_method(config.method), n, chain_explorer_config(config), seed)
            .map_err(core_err)?;
    let mut rows = Vec::new();
    let mut next_step = 0u64;
    let mut error = None;

    for warmup_ep in 0..config.chain.warmup_episodes {
        let metrics = explorer.run_random_episode(&mut env, &mut buffer).map_err(core_err)?;
        push_rows(&mut rows, &metrics.steps, warmup_ep as u64, &mut next_step);
    }
    let first_episode = config.chain.warmup_episodes as u64;
    for ep in 0..config.chain.episodes {
        let episode = first_episode + ep as u64;
        match explorer.run_episode(&mut env, &mut buffer) {
            Ok(metrics) => push_rows(&mut rows, &metrics.steps, episode, &mut next_step),
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
        if config.chain.stop_at_full_coverage && env.coverage() >= 1.0 {
            break;
        }
    }
    if config.export_trajectories {
        fs::write(seed_dir.join("trajectory.csv"), transitions_to_csv(buffer.transitions()))?;
    }
    save_chain_checkpoint(config, &explorer, &buffer, seed_dir)?;
    Ok(RunMetrics {
        seed,
        episodes_to_full_coverage: episodes_to_coverage(&rows, 1.0),
        final_coverage: rows.last().map(|r| r.coverage).unwrap_or(0.0),
        wall_time_secs: start.elapsed().as_secs_f64(),
        svgd_failures: explorer.svgd_failures(),
        error,
        rows,
    })
}

/// Execute one chain seed with the DDQN baseline (external reward only).
fn run_chain_ddqn_seed(config: &RunConfig, seed: u64, seed_dir: &Path) -> Result<RunMetrics, CliError> {
    let start = Instant::now();
    let n = config.chain.n_states;
    let mut env = ChainEnv::new(n, seed).map_err(core_err)?;
    let mut init_rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    init_rng.set_stream(21);
    let mut agent: DdqnAgent<Real> =
        DdqnAgent::new(n, 2, config.ddqn.clone(), &mut init_rng).map_err(core_err)?;
    let mut action_rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    action_rng.set_stream(22);
    let mut rows = Vec::new();
    let mut next_step = 0u64;
    let mut buffer = ReplayBuffer::new();

    // Warmup episodes mirror the model-based pipeline: random actions that
    // seed the replay before learning starts.
    for episode in 0..(config.chain.warmup_episodes + config.chain.episodes) {
        env.reset();
        let warmup = episode < config.chain.warmup_episodes;
        while !env.is_done() {
            let state = env.state_encoding(env.current_state());
            let action_idx = if warmup {
                action_rng.gen_range(0..2)
            } else {
                agent.act(&state, &mut action_rng).map_err(core_err)?
            };
            let t = env.step(ChainAction::from_index(action_idx).map_err(core_err)?).map_err(core_err)?;
            agent
                .observe(
                    t.state.clone(),
                    action_idx,
                    t.external_reward,
                    t.next_state.clone(),
                    t.done,
                    &mut action_rng,
                )
                .map_err(core_err)?;
            buffer.push(t);
            rows.push(MetricsRow {
                step: next_step,
                episode: episode as u64,
                coverage: env.coverage(),
                intrinsic_reward: 0.0,
                model_loss: agent.last_loss(),
                bandwidth: 0.0,
            });
            next_step += 1;
        }
        if config.chain.stop_at_full_coverage && env.coverage() >= 1.0 {
            break;
        }
    }
    if config.export_trajectories {
        fs::write(seed_dir.join("trajectory.csv"), transitions_to_csv(buffer.transitions()))?;
    }
    Ok(RunMetrics {
        seed,
        episodes_to_full_coverage: episodes_to_coverage(&rows, 1.0),
        final_coverage: rows.last().map(|r| r.coverage).unwrap_or(0.0),
        wall_time_secs: start.elapsed().as_secs_f64(),
        svgd_failures: 0,
        error: None,
        rows,
    })
}

/// Execute one maze seed.
fn run_maze_seed(config: &RunConfig, seed: u64, seed_dir: &Path) -> Result<RunMetrics, CliError> {
    let start = Instant::now();
    let mut env = MazeEnv::new(config.maze.env.clone()).map_err(core_err)?;
    let mut buffer = ReplayBuffer::new();
    let mut explorer =
        MazeExplorer::new(chain_method(config.method), maze_explorer_config(config), seed)
            .map_err(core_err)?;
    let horizon = config.maze.env.horizon as u64;
    let mut rows = Vec::new();
    let mut error = None;
    for step in 0..config.maze.steps {
        let warmup = step < config.maze.warmup_steps;
        let record = if warmup {
            explorer.random_step(&mut env, &mut buffer)
        } else {
            explorer.step(&mut env, &mut buffer)
        };
        match record {
            Ok(r) => rows.push(MetricsRow {
                step: step as u64,
                episode: step as u64 / horizon,
                coverage: r.coverage,
                intrinsic_reward: r.intrinsic_reward,
                model_loss: r.model_loss,
                bandwidth: r.bandwidth,
            }),
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    if config.export_trajectories {
        fs::write(seed_dir.join("trajectory.csv"), transitions_to_csv(buffer.transitions()))?;
    }
    save_maze_checkpoint(config, &explorer, &buffer, seed_dir)?;
    Ok(RunMetrics {
        seed,
        episodes_to_full_coverage: episodes_to_coverage(&rows, 1.0),
        final_coverage: rows.last().map(|r| r.coverage).unwrap_or(0.0),
        wall_time_secs: start.elapsed().as_secs_f64(),
        svgd_failures: explorer.svgd_failures(),
        error,
        rows,
    })
}

/// Agent checkpoint: generator (or ensemble) + optimizer metadata + buffer.
#[derive(Serialize, Deserialize)]
pub struct JsonCheckpoint {
    pub bundle: Option<GeneratorBundle<Real>>,
    pub ensemble: Option<Vec<Vec<Real>>>,
    pub adam_step_count: u64,
    pub buffer: ReplayBuffer<Real>,
}

fn save_chain_checkpoint(
    config: &RunConfig,
    explorer: &ChainExplorer<Real>,
    buffer: &ReplayBuffer<Real>,
    seed_dir: &Path,
) -> Result<(), CliError> {
    save_checkpoint_parts(config, explorer.bundle(), explorer.ensemble_thetas(), buffer, seed_dir)
}

fn save_maze_checkpoint(
    config: &RunConfig,
    explorer: &MazeExplorer<Real>,
    buffer: &ReplayBuffer<Real>,
    seed_dir: &Path,
) -> Result<(), CliError> {
    save_checkpoint_parts(config, explorer.bundle(), None, buffer, seed_dir)
}

fn save_checkpoint_parts(
    config: &RunConfig,
    bundle: Option<&GeneratorBundle<Real>>,
    ensemble: Option<&[Vec<Real>]>,
    buffer: &ReplayBuffer<Real>,
    seed_dir: &Path,
) -> Result<(), CliError> {
    match config.save_checkpoint {
        CheckpointFormat::Off => Ok(()),
        CheckpointFormat::Json => {
            let checkpoint = JsonCheckpoint {
                bundle: bundle.cloned(),
                ensemble: ensemble.map(|e| e.to_vec()),
                adam_step_count: 0,
                buffer: buffer.clone(),
            };
            let text = serde_json::to_string(&checkpoint)
                .map_err(|e| CliError::Runtime(format!("checkpoint: {e}")))?;
            fs::write(seed_dir.join("checkpoint.json"), text)?;
            Ok(())
        }
        CheckpointFormat::Binary => {
            // Bundle in its flat binary container; the rest as JSON.
            let mut out = Vec::new();
            out.extend_from_slice(b"SVGDCKP1");
            let bundle_bytes = match bundle {
                Some(b) => b.to_binary().map_err(core_err)?,
                None => Vec::new(),
            };
            out.extend_from_slice(&(bundle_bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&bundle_bytes);
            let rest = serde_json::to_vec(&JsonCheckpoint {
                bundle: None,
                ensemble: ensemble.map(|e| e.to_vec()),
                adam_step_count: 0,
                buffer: buffer.clone(),
            })
            .map_err(|e| CliError::Runtime(format!("checkpoint: {e}")))?;
            out.extend_from_slice(&(rest.len() as u64).to_le_bytes());
            out.extend_from_slice(&rest);
            fs::write(seed_dir.join("checkpoint.bin"), out)?;
            Ok(())
        }
    }
}

/// Read back a binary checkpoint written by [`save_checkpoint_parts`].
pub fn load_binary_checkpoint(bytes: &[u8]) -> Result<(Option<GeneratorBundle<Real>>, JsonCheckpoint), CliError> {
    if bytes.len() < 16 || &bytes[..8] != b"SVGDCKP1" {
        return Err(CliError::Runtime("bad checkpoint magic".into()));
    }
    let bundle_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let bundle_end = 16 + bundle_len;
    let bundle = if bundle_len > 0 {
        Some(GeneratorBundle::from_binary(&bytes[16..bundle_end]).map_err(core_err)?)
    } else {
        None
    };
    let rest_len = u64::from_le_bytes(bytes[bundle_end..bundle_end + 8].try_into().unwrap()) as usize;
    let rest: JsonCheckpoint =
        serde_json::from_slice(&bytes[bundle_end + 8..bundle_end + 8 + rest_len])
            .map_err(|e| CliError::Runtime(format!("checkpoint: {e}")))?;
    Ok((bundle, rest))
}

fn core_err(e: svgd_explore::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Run every seed of the configured experiment, writing the run directory
/// as it goes. `snapshot` carries the raw bytes of the input config file.
pub fn run_experiment(
    config: &RunConfig,
    out_root: &Path,
    snapshot: Option<&[u8]>,
) -> Result<RunOutcome, CliError> {
    let run_dir = out_root.join(format!("{}-{}", experiment_name(config.experiment), config.method));
    fs::create_dir_all(&run_dir)?;
    match snapshot {
        Some(bytes) => fs::write(run_dir.join("config.snapshot"), bytes)?,
        None => fs::write(run_dir.join("config.snapshot"), config.to_toml())?,
    }
    fs::write(run_dir.join("config.effective.toml"), config.to_toml())?;

    let per_seed: Vec<RunMetrics> = config
        .seeds
        .par_iter()
        .map(|&seed| -> Result<RunMetrics, CliError> {
            let seed_dir = run_dir.join(format!("seed-{seed}"));
            fs::create_dir_all(&seed_dir)?;
            let mut metrics = match (config.experiment, config.method) {
                (Experiment::Chain, Method::Ddqn) => run_chain_ddqn_seed(config, seed, &seed_dir)?,
                (Experiment::Chain, _) => run_chain_seed(config, seed, &seed_dir)?,
                (Experiment::Maze, _) => run_maze_seed(config, seed, &seed_dir)?,
                _ => {
                    return Err(CliError::Config(
                        "experiment: run_experiment covers chain and maze".into(),
                    ))
                }
            };
            metrics.seed = seed;
            fs::write(seed_dir.join("metrics.csv"), metrics.to_csv())?;
            Ok(metrics)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    fs::write(run_dir.join("summary.csv"), summary_csv(&per_seed))?;
    write_manifest(&run_dir, config)?;
    Ok(RunOutcome { run_dir, per_seed })
}

pub fn experiment_name(e: Experiment) -> &'static str {
    match e {
        Experiment::Chain => "chain",
        Experiment::Maze => "maze",
        Experiment::SvgdSanity => "svgd-sanity",
        Experiment::Gradcheck => "gradcheck",
    }
}
