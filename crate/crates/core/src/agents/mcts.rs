//! Monte Carlo tree search over learned chain dynamics.
//!
//! Planning never touches the real environment. The model ensemble is
//! collapsed into lookup tables first — the chain has only `N x 2` distinct
//! `(state, action)` queries, so the mean transition and the intrinsic
//! reward of every pair are computed once per planning step and the tree
//! itself is pure table arithmetic.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergen::DynamicsSample;
use crate::intrinsic::variance_reward;
use crate::scalar::Scalar;

/// Learned-model view of the chain: mean-prediction successor and intrinsic
/// reward per `(state, action)`.
#[derive(Debug, Clone)]
pub struct ChainSimulator {
    n_states: usize,
    /// `next[state * 2 + action]`, argmax of the mean predicted one-hot.
    next: Vec<usize>,
    /// `reward[state * 2 + action]`.
    reward: Vec<f64>,
}

impl ChainSimulator {
    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn next_state(&self, state: usize, action: usize) -> usize {
        self.next[state * 2 + action]
    }

    #[inline]
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * 2 + action]
    }

    /// Table-backed simulator for tests.
    pub fn from_tables(n_states: usize, next: Vec<usize>, reward: Vec<f64>) -> Result<Self> {
        if next.len() != n_states * 2 || reward.len() != n_states * 2 {
            return Err(Error::DimensionMismatch("simulator table size".into()));
        }
        if next.iter().any(|&s| s >= n_states) {
            return Err(Error::InvalidArgument("next-state index out of range".into()));
        }
        Ok(Self { n_states, next, reward })
    }
}

/// Intrinsic reward wired into the planning tables.
pub enum ChainRewardMode<'a> {
    /// Predictive variance across the model set at each `(s, a)`.
    Variance,
    /// Squared error between the mean prediction and the recorded next
    /// state, zero for `(s, a)` pairs never observed. Keyed by
    /// `(state, action)` with the observed successor index as value.
    PredictionError(&'a BTreeMap<(usize, usize), usize>),
    /// All rewards zero.
    None,
}

/// Evaluate the ensemble on every `(state, action)` pair and collapse it
/// into transition and reward tables.
pub fn build_chain_simulator<S: Scalar>(
    models: &[DynamicsSample<S>],
    n_states: usize,
    mode: &ChainRewardMode<'_>,
) -> Result<ChainSimulator> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("need at least one model".into()));
    }
    let input_dim = n_states + 2;
    let rows = n_states * 2;
    let mut inputs = vec![S::zero(); rows * input_dim];
    for s in 0..n_states {
        for a in 0..2 {
            let row = s * 2 + a;
            inputs[row * input_dim + s] = S::one();
            inputs[row * input_dim + n_states + a] = S::one();
        }
    }
    let m = models.len();
    // predictions[i]: (rows, n_states)
    let mut predictions: Vec<Vec<S>> = Vec::with_capacity(m);
    for model in models {
        if model.target_spec().input_dim() != input_dim || model.target_spec().output_dim() != n_states {
            return Err(Error::DimensionMismatch("model dims do not match the chain encoding".into()));
        }
        let mut out = Vec::new();
        model.predict_batch_into(&inputs, rows, &mut out)?;
        predictions.push(out);
    }
    let mut next = vec![0usize; rows];
    let mut reward = vec![0.0f64; rows];
    let mut row_preds = vec![S::zero(); m * n_states];
    for row in 0..rows {
        let mut mean = vec![0.0f64; n_states];
        for (i, pred) in predictions.iter().enumerate() {
            let slice = &pred[row * n_states..(row + 1) * n_states];
            row_preds[i * n_states..(i + 1) * n_states].copy_from_slice(slice);
            for (acc, &v) in mean.iter_mut().zip(slice) {
                *acc += v.to_f64() / m as f64;
            }
        }
        // Mean prediction projected onto the nearest one-hot.
        let argmax = mean
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        next[row] = argmax;
        reward[row] = match mode {
            ChainRewardMode::Variance => {
                if m >= 2 {
                    variance_reward(&row_preds, m, n_states)?.to_f64()
                } else {
                    0.0
                }
            }
            ChainRewardMode::PredictionError(observed) => {
                let s = row / 2;
                let a = row % 2;
                match observed.get(&(s, a)) {
                    Some(&obs_next) => {
                        let mut err = 0.0;
                        for (k, &mu) in mean.iter().enumerate() {
                            let target = if k == obs_next { 1.0 } else { 0.0 };
                            err += (mu - target) * (mu - target);
                        }
                        err
                    }
                    None => 0.0,
                }
            }
            ChainRewardMode::None => 0.0,
        };
    }
    ChainSimulator::from_tables(n_states, next, reward)
}

/// UCB-1 tree search parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MctsConfig {
    pub tree_iterations: usize,
    pub rollouts_per_iteration: usize,
    pub ucb_constant: f64,
    pub discount: f64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            tree_iterations: 25,
            rollouts_per_iteration: 10,
            ucb_constant: std::f64::consts::SQRT_2,
            discount: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MctsDiagnostics {
    /// No root child was ever visited; the action fell back to a random
    /// draw.
    pub fallback_random: bool,
}

#[derive(Debug, Clone)]
pub struct MctsNode {
    pub state_index: usize,
    pub visit_count: u64,
    pub total_value: f64,
    /// Arena indices of the two children, present once expanded.
    pub children: Option<[usize; 2]>,
}

/// Arena tree; exposed so tests can check the visit-count invariant.
#[derive(Debug, Clone)]
pub struct MctsTree {
    pub nodes: Vec<MctsNode>,
}

impl MctsTree {
    fn new(root_state: usize) -> Self {
        Self {
            nodes: vec![MctsNode {
                state_index: root_state,
                visit_count: 0,
                total_value: 0.0,
                children: None,
            }],
        }
    }

    fn expand(&mut self, idx: usize, sim: &ChainSimulator) {
        let state = self.nodes[idx].state_index;
        let mut children = [0usize; 2];
        for (a, slot) in children.iter_mut().enumerate() {
            let child = MctsNode {
                state_index: sim.next_state(state, a),
                visit_count: 0,
                total_value: 0.0,
                children: None,
            };
            self.nodes.push(child);
            *slot = self.nodes.len() - 1;
        }
        self.nodes[idx].children = Some(children);
    }

    /// UCB-1 pick among the children of `idx`. Unvisited children score
    /// +infinity, so every child is tried before any revisit; ties break on
    /// the lowest action index.
    fn select_action(&self, idx: usize, c: f64) -> usize {
        let node = &self.nodes[idx];
        let children = node.children.expect("selection on unexpanded node");
        let parent_visits = node.visit_count.max(1) as f64;
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (a, &child_idx) in children.iter().enumerate() {
            let child = &self.nodes[child_idx];
            let score = if child.visit_count == 0 {
                f64::INFINITY
            } else {
                child.total_value / child.visit_count as f64
                    + c * (parent_visits.ln() / child.visit_count as f64).sqrt()
            };
            if score > best_score {
                best_score = score;
                best = a;
            }
        }
        best
    }

    /// Every parent's visit count equals the sum over children plus its own
    /// expansion visit.
    pub fn check_visit_invariant(&self) -> bool {
        self.nodes.iter().all(|node| match node.children {
            None => true,
            Some(children) => {
                let child_sum: u64 = children.iter().map(|&c| self.nodes[c].visit_count).sum();
                node.visit_count == child_sum + 1
            }
        })
    }
}

fn random_rollout<R: Rng + ?Sized>(
    sim: &ChainSimulator,
    mut state: usize,
    horizon: usize,
    discount: f64,
    rng: &mut R,
) -> f64 {
    let mut value = 0.0;
    let mut scale = 1.0;
    for _ in 0..horizon {
        let action = rng.gen_range(0..2usize);
        value += scale * sim.reward(state, action);
        state = sim.next_state(state, action);
        scale *= discount;
    }
    value
}

/// Build a fresh tree from `root_state` and return the first action. The
/// tree is discarded after the call; the caller executes one real step and
/// replans.
pub fn mcts_plan<R: Rng + ?Sized>(
    sim: &ChainSimulator,
    root_state: usize,
    steps_left: usize,
    cfg: &MctsConfig,
    rng: &mut R,
) -> (usize, MctsDiagnostics, MctsTree) {
    let mut tree = MctsTree::new(root_state);
    for _ in 0..cfg.tree_iterations {
        // Selection.
        let mut path: Vec<(usize, f64)> = vec![(0, 0.0)];
        let mut idx = 0usize;
        let mut depth = 0usize;
        while tree.nodes[idx].children.is_some() && depth < steps_left {
            let action = tree.select_action(idx, cfg.ucb_constant);
            let state = tree.nodes[idx].state_index;
            let edge_reward = sim.reward(state, action);
            idx = tree.nodes[idx].children.unwrap()[action];
            path.push((idx, edge_reward));
            depth += 1;
        }
        // Expansion.
        if depth < steps_left && tree.nodes[idx].children.is_none() {
            tree.expand(idx, sim);
        }
        // Evaluation: random rollouts through the learned tables.
        let horizon = steps_left - depth;
        let rollouts = cfg.rollouts_per_iteration.max(1);
        let mut value = 0.0;
        for _ in 0..rollouts {
            value += random_rollout(sim, tree.nodes[idx].state_index, horizon, cfg.discount, rng);
        }
        value /= rollouts as f64;
        // Backup: discounted return seen from each node on the path.
        for &(node_idx, edge_reward) in path.iter().rev() {
            value = edge_reward + cfg.discount * value;
            let node = &mut tree.nodes[node_idx];
            node.visit_count += 1;
            node.total_value += value;
        }
    }
    // Root decision: highest mean child value, ties to the lowest index.
    let mut diagnostics = MctsDiagnostics::default();
    let action = match tree.nodes[0].children {
        Some(children) if children.iter().any(|&c| tree.nodes[c].visit_count > 0) => {
            let mut best = 0usize;
            let mut best_value = f64::NEG_INFINITY;
            for (a, &child_idx) in children.iter().enumerate() {
                let child = &tree.nodes[child_idx];
                if child.visit_count == 0 {
                    continue;
                }
                let mean = child.total_value / child.visit_count as f64;
                if mean > best_value {
                    best_value = mean;
                    best = a;
                }
            }
            best
        }
        _ => {
            diagnostics.fallback_random = true;
            rng.gen_range(0..2usize)
        }
    };
    (action, diagnostics, tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{MlpSpec, Nonlinearity};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Two-state toy: forward pays 1, backward pays 0, transitions loop.
    fn toy_sim() -> ChainSimulator {
        ChainSimulator::from_tables(
            2,
            vec![0, 1, 0, 1],
            vec![0.0, 1.0, 0.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn zero_rewards_tie_break_to_lowest_action() {
        let sim = ChainSimulator::from_tables(3, vec![0, 1, 0, 2, 1, 2], vec![0.0; 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (action, diag, _) = mcts_plan(&sim, 1, 10, &MctsConfig::default(), &mut rng);
        assert_eq!(action, 0);
        assert!(!diag.fallback_random);
    }

    #[test]
    fn rewarding_action_is_selected() {
        let sim = toy_sim();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (action, _, _) = mcts_plan(&sim, 0, 8, &MctsConfig::default(), &mut rng);
        assert_eq!(action, 1, "forward accrues reward 1 per step");
    }

    #[test]
    fn exhaustive_two_step_oracle_agrees() {
        // Enumerate all depth-2 action sequences on the toy simulator; the
        // best first action maximizes total reward.
        let sim = toy_sim();
        let mut best = (f64::NEG_INFINITY, 0usize);
        for a0 in 0..2 {
            for a1 in 0..2 {
                let s1 = sim.next_state(0, a0);
                let total = sim.reward(0, a0) + sim.reward(s1, a1);
                if total > best.0 {
                    best = (total, a0);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (action, _, _) = mcts_plan(&sim, 0, 2, &MctsConfig::default(), &mut rng);
        assert_eq!(action, best.1);
    }

    #[test]
    fn unvisited_children_are_visited_before_any_revisit() {
        let sim = toy_sim();
        let cfg = MctsConfig {
            tree_iterations: 3,
            rollouts_per_iteration: 1,
            ..MctsConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, _, tree) = mcts_plan(&sim, 0, 5, &cfg, &mut rng);
        // Iteration 1 expands the root; iterations 2 and 3 must each visit
        // a distinct child (+inf UCB on unvisited).
        let children = tree.nodes[0].children.unwrap();
        assert_eq!(tree.nodes[children[0]].visit_count, 1);
        assert_eq!(tree.nodes[children[1]].visit_count, 1);
    }

    #[test]
    fn visit_counts_satisfy_the_parent_child_invariant() {
        let sim = toy_sim();
        for iterations in [1, 2, 5, 25, 80] {
            let cfg = MctsConfig {
                tree_iterations: iterations,
                rollouts_per_iteration: 3,
                ..MctsConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let (_, _, tree) = mcts_plan(&sim, 0, 12, &cfg, &mut rng);
            assert!(tree.check_visit_invariant(), "failed at {iterations} iterations");
        }
    }

    #[test]
    fn zero_iterations_falls_back_to_random_with_flag() {
        let sim = toy_sim();
        let cfg = MctsConfig {
            tree_iterations: 0,
            ..MctsConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (action, diag, _) = mcts_plan(&sim, 0, 5, &cfg, &mut rng);
        assert!(diag.fallback_random);
        assert!(action < 2);
    }

    #[test]
    fn constant_reward_shift_preserves_child_ordering() {
        let sim = toy_sim();
        let shifted = ChainSimulator::from_tables(
            2,
            vec![0, 1, 0, 1],
            vec![5.0, 6.0, 5.0, 6.0],
        )
        .unwrap();
        let cfg = MctsConfig::default();
        let rank = |sim: &ChainSimulator| -> Vec<usize> {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let (_, _, tree) = mcts_plan(sim, 0, 10, &cfg, &mut rng);
            let children = tree.nodes[0].children.unwrap();
            let means: Vec<f64> = children
                .iter()
                .map(|&c| {
                    let n = &tree.nodes[c];
                    n.total_value / n.visit_count.max(1) as f64
                })
                .collect();
            let mut order: Vec<usize> = (0..means.len()).collect();
            order.sort_by(|&a, &b| means[b].partial_cmp(&means[a]).unwrap());
            order
        };
        assert_eq!(rank(&sim), rank(&shifted));
    }

    #[test]
    fn simulator_tables_match_direct_model_evaluation() {
        let n_states = 4;
        let spec = MlpSpec::new(vec![n_states + 2, 8, n_states], Nonlinearity::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let models: Vec<DynamicsSample<f64>> = (0..3)
            .map(|_| {
                use rand::Rng;
                let theta: Vec<f64> =
                    (0..spec.param_count()).map(|_| rng.gen_range(-0.8..0.8)).collect();
                DynamicsSample::from_theta(spec.clone(), theta).unwrap()
            })
            .collect();
        let sim = build_chain_simulator(&models, n_states, &ChainRewardMode::Variance).unwrap();
        for s in 0..n_states {
            for a in 0..2 {
                let mut input = vec![0.0; n_states + 2];
                input[s] = 1.0;
                input[n_states + a] = 1.0;
                let mut mean = vec![0.0; n_states];
                let mut preds = Vec::new();
                for model in &models {
                    let out = model.predict(&input).unwrap();
                    for (acc, &v) in mean.iter_mut().zip(&out) {
                        *acc += v / models.len() as f64;
                    }
                    preds.extend(out);
                }
                let argmax = mean
                    .iter()
                    .enumerate()
                    .max_by(|(_, x), (_, y)| x.partial_cmp(y).unwrap())
                    .unwrap()
                    .0;
                assert_eq!(sim.next_state(s, a), argmax);
                let var = variance_reward(&preds, models.len(), n_states).unwrap();
                assert!((sim.reward(s, a) - var).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prediction_error_mode_rewards_only_observed_pairs() {
        let n_states = 3;
        let spec = MlpSpec::new(vec![n_states + 2, 4, n_states], Nonlinearity::Tanh).unwrap();
        let theta = vec![0.1; spec.param_count()];
        let models = vec![DynamicsSample::from_theta(spec, theta).unwrap()];
        let mut observed = BTreeMap::new();
        observed.insert((1usize, 0usize), 0usize);
        let sim =
            build_chain_simulator(&models, n_states, &ChainRewardMode::PredictionError(&observed))
                .unwrap();
        assert!(sim.reward(1, 0) > 0.0, "observed pair has prediction error");
        assert_eq!(sim.reward(0, 0), 0.0, "unobserved pair has no signal");
        assert_eq!(sim.reward(2, 1), 0.0);
    }
}
