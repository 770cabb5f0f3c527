//! Stein variational machinery in function space.
//!
//! Particles are dynamics networks evaluated on a transition batch. The
//! kernel compares particles through their predictions: the pairwise
//! distance is the batch-mean squared output difference and the bandwidth is
//! the median of those distances. [`compute_phi_star`] assembles the
//! steepest-descent direction on the KL divergence — a kernel-weighted
//! log-likelihood gradient plus the analytic kernel gradient that keeps
//! particles apart.
//!
//! Two update drivers share that direction: [`particle_update`] moves
//! explicit particles (the reference engine), and [`amortized_update`]
//! backpropagates the direction through the sampled networks into the
//! generator parameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{adam_step_from_ascent, forward_batch, AdamState, BatchTrace, MlpSpec};
use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::hypergen::{DynamicsSample, GeneratorBundle};
use crate::scalar::{all_finite, Scalar};

/// SVGD driver parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SvgdConfig<S: Scalar> {
    /// Step size for explicit particles. In amortized mode the Adam learning
    /// rate is the effective step; zero still means "do not move".
    pub step_size: S,
    /// Particles per update.
    pub particle_count: usize,
    /// Lower bound on the kernel bandwidth; collapsed particles would
    /// otherwise divide by zero.
    pub kernel_floor: S,
}

impl<S: Scalar> Default for SvgdConfig<S> {
    fn default() -> Self {
        Self {
            step_size: S::one(),
            particle_count: 32,
            kernel_floor: S::from_f64(1e-8),
        }
    }
}

/// Kernel matrix over particles plus the bandwidth and distances behind it.
#[derive(Debug, Clone)]
pub struct KernelEval<S: Scalar> {
    m: usize,
    /// `m x m`, entries `exp(-d/h)`; symmetric, unit diagonal.
    pub matrix: Vec<S>,
    /// Median pairwise distance, floored.
    pub bandwidth: S,
    /// `m x m` batch-mean squared output distances.
    pub pairwise_distances: Vec<S>,
}

impl<S: Scalar> KernelEval<S> {
    #[inline]
    pub fn num_particles(&self) -> usize {
        self.m
    }
}

/// A transition batch flattened for network evaluation, with per-row
/// multiplicities. A row with weight `c` stands for `c` identical
/// transitions, so weighted evaluation is exactly equivalent to evaluating
/// the expanded batch — the chain refit relies on this to collapse its
/// replay buffer onto the few distinct `(s, a)` pairs.
#[derive(Debug, Clone)]
pub struct TransitionBatch<S: Scalar> {
    inputs: Vec<S>,
    targets: Vec<S>,
    weights: Vec<S>,
    rows: usize,
    input_dim: usize,
    target_dim: usize,
    total_weight: S,
}

impl<S: Scalar> TransitionBatch<S> {
    pub fn from_transitions(batch: &[Transition<S>]) -> Result<Self> {
        let weights = vec![S::one(); batch.len()];
        Self::from_transitions_weighted(batch, &weights)
    }

    pub fn from_transitions_weighted(batch: &[Transition<S>], weights: &[S]) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty transition batch".into()));
        }
        if weights.len() != batch.len() {
            return Err(Error::DimensionMismatch("weights vs batch length".into()));
        }
        let state_dim = batch[0].state.len();
        let action_dim = batch[0].action.len();
        let target_dim = batch[0].next_state.len();
        let rows = batch.len();
        let mut inputs = Vec::with_capacity(rows * (state_dim + action_dim));
        let mut targets = Vec::with_capacity(rows * target_dim);
        for t in batch {
            if t.state.len() != state_dim || t.action.len() != action_dim || t.next_state.len() != target_dim {
                return Err(Error::DimensionMismatch("inconsistent transition encodings".into()));
            }
            inputs.extend_from_slice(&t.state);
            inputs.extend_from_slice(&t.action);
            targets.extend_from_slice(&t.next_state);
        }
        Self::from_raw(inputs, targets, weights.to_vec(), rows, state_dim + action_dim, target_dim)
    }

    /// Raw constructor for callers that already hold flattened rows.
    pub fn from_raw(
        inputs: Vec<S>,
        targets: Vec<S>,
        weights: Vec<S>,
        rows: usize,
        input_dim: usize,
        target_dim: usize,
    ) -> Result<Self> {
        if inputs.len() != rows * input_dim || targets.len() != rows * target_dim || weights.len() != rows {
            return Err(Error::DimensionMismatch("transition batch buffers".into()));
        }
        let total_weight: S = weights.iter().copied().sum();
        if total_weight <= S::zero() {
            return Err(Error::InvalidArgument("batch weights must sum to > 0".into()));
        }
        Ok(Self {
            inputs,
            targets,
            weights,
            rows,
            input_dim,
            target_dim,
            total_weight,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[inline]
    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    #[inline]
    pub fn inputs(&self) -> &[S] {
        &self.inputs
    }

    #[inline]
    pub fn targets(&self) -> &[S] {
        &self.targets
    }

    #[inline]
    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    #[inline]
    pub fn total_weight(&self) -> S {
        self.total_weight
    }
}

/// Particle predictions on a batch with the regression log-likelihood
/// gradients taken at the outputs.
///
/// The per-transition loss is the squared error averaged over state
/// dimensions, `L = (1/s) ||f(s,a) - s'||^2`, so `log p = -sum_D L` gives
/// output gradients `-2 c_l (f - s') / s`. Averaging over dimensions (not
/// summing) keeps the likelihood drive commensurate with the kernel
/// repulsion when the state is high-dimensional; with `s = 1` the two
/// conventions coincide.
#[derive(Debug, Clone)]
pub struct FunctionBatchEval<S: Scalar> {
    /// `m x n x s` particle outputs.
    pub outputs: Vec<S>,
    /// Weighted mean (over the batch) of the per-transition loss.
    pub per_particle_loss: Vec<S>,
    /// `m x n x s` gradients of `log p` w.r.t. the outputs.
    pub loss_grads: Vec<S>,
    m: usize,
    rows: usize,
    target_dim: usize,
    row_weights: Vec<S>,
    total_weight: S,
}

impl<S: Scalar> FunctionBatchEval<S> {
    #[inline]
    pub fn num_particles(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    #[inline]
    pub fn block(&self) -> usize {
        self.rows * self.target_dim
    }
}

/// Batch-mean squared L2 distance between particle outputs:
/// `D[i][j] = (1/n) sum_l ||f_i(x_l) - f_j(x_l)||^2`. Symmetric with a zero
/// diagonal.
pub fn pairwise_function_distance<S: Scalar>(outputs: &[S], m: usize, n: usize, s: usize) -> Result<Vec<S>> {
    let weights = vec![S::one(); n];
    pairwise_function_distance_weighted(outputs, m, n, s, &weights, S::from_usize(n))
}

fn pairwise_function_distance_weighted<S: Scalar>(
    outputs: &[S],
    m: usize,
    n: usize,
    s: usize,
    weights: &[S],
    total_weight: S,
) -> Result<Vec<S>> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("need m >= 1 and n >= 1".into()));
    }
    if outputs.len() != m * n * s || weights.len() != n {
        return Err(Error::DimensionMismatch("outputs tensor shape".into()));
    }
    let block = n * s;
    let mut d = vec![S::zero(); m * m];
    for i in 0..m {
        let fi = &outputs[i * block..(i + 1) * block];
        for j in (i + 1)..m {
            let fj = &outputs[j * block..(j + 1) * block];
            let mut acc = S::zero();
            for (l, &w) in weights.iter().enumerate() {
                let mut row = S::zero();
                for k in 0..s {
                    let diff = fi[l * s + k] - fj[l * s + k];
                    row += diff * diff;
                }
                acc += w * row;
            }
            let val = acc / total_weight;
            d[i * m + j] = val;
            d[j * m + i] = val;
        }
    }
    Ok(d)
}

/// Gaussian kernel with the median heuristic: `h` is the median off-diagonal
/// pairwise distance floored at `kernel_floor`, entries are `exp(-d/h)`.
/// A single particle yields the 1x1 matrix `[[1]]` with `h = kernel_floor`.
pub fn rbf_kernel_median<S: Scalar>(distances: &[S], m: usize, kernel_floor: S) -> Result<KernelEval<S>> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    if distances.len() != m * m {
        return Err(Error::DimensionMismatch("distance matrix shape".into()));
    }
    if kernel_floor <= S::zero() {
        return Err(Error::InvalidArgument("kernel_floor must be > 0".into()));
    }
    let mut off_diag: Vec<S> = Vec::with_capacity(m * m - m);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                let dij = distances[i * m + j];
                if dij < S::zero() || !dij.is_finite() {
                    return Err(Error::InvalidArgument(
                        "distances must be finite and nonnegative".into(),
                    ));
                }
                off_diag.push(dij);
            }
        }
    }
    let bandwidth = if off_diag.is_empty() {
        kernel_floor
    } else {
        off_diag.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = off_diag.len() / 2;
        let median = if off_diag.len() % 2 == 1 {
            off_diag[mid]
        } else {
            (off_diag[mid - 1] + off_diag[mid]) / S::two()
        };
        median.max(kernel_floor)
    };
    let mut matrix = vec![S::zero(); m * m];
    for i in 0..m {
        for j in 0..m {
            matrix[i * m + j] = if i == j {
                S::one()
            } else {
                (-distances[i * m + j] / bandwidth).exp()
            };
        }
    }
    Ok(KernelEval {
        m,
        matrix,
        bandwidth,
        pairwise_distances: distances.to_vec(),
    })
}

/// Evaluate particle parameter vectors on a batch, optionally keeping the
/// forward traces for backprop. `thetas` is `(m, param_count)` row-major.
fn eval_thetas_on_batch<S: Scalar>(
    spec: &MlpSpec,
    thetas: &[S],
    m: usize,
    batch: &TransitionBatch<S>,
    want_traces: bool,
) -> Result<(FunctionBatchEval<S>, Option<Vec<BatchTrace<S>>>)> {
    if batch.input_dim() != spec.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "batch input dim {} != model input dim {}",
            batch.input_dim(),
            spec.input_dim()
        )));
    }
    if batch.target_dim() != spec.output_dim() {
        return Err(Error::DimensionMismatch(format!(
            "batch target dim {} != model output dim {}",
            batch.target_dim(),
            spec.output_dim()
        )));
    }
    let p = spec.param_count();
    if thetas.len() != m * p {
        return Err(Error::DimensionMismatch("thetas shape".into()));
    }
    let n = batch.rows();
    let s = batch.target_dim();
    let traces: Vec<BatchTrace<S>> = (0..m)
        .into_par_iter()
        .map(|i| forward_batch(spec, &thetas[i * p..(i + 1) * p], batch.inputs(), n))
        .collect::<Result<Vec<_>>>()?;
    let block = n * s;
    let inv_s = S::one() / S::from_usize(s);
    let mut outputs = vec![S::zero(); m * block];
    let mut loss_grads = vec![S::zero(); m * block];
    let mut per_particle_loss = vec![S::zero(); m];
    for i in 0..m {
        let out = traces[i].outputs();
        outputs[i * block..(i + 1) * block].copy_from_slice(out);
        let mut loss = S::zero();
        for l in 0..n {
            let w = batch.weights[l];
            for k in 0..s {
                let idx = l * s + k;
                let diff = out[idx] - batch.targets()[idx];
                loss += w * diff * diff * inv_s;
                loss_grads[i * block + idx] = -S::two() * w * diff * inv_s;
            }
        }
        per_particle_loss[i] = loss / batch.total_weight();
    }
    let eval = FunctionBatchEval {
        outputs,
        per_particle_loss,
        loss_grads,
        m,
        rows: n,
        target_dim: s,
        row_weights: batch.weights.clone(),
        total_weight: batch.total_weight(),
    };
    Ok((eval, want_traces.then_some(traces)))
}

/// Evaluate sampled dynamics networks on a transition batch and take the
/// log-likelihood gradients `-2 (f(s,a) - s')` at the outputs. The loss is
/// the squared error of next-state prediction.
pub fn log_likelihood_grads<S: Scalar>(
    samples: &[DynamicsSample<S>],
    batch: &[Transition<S>],
) -> Result<FunctionBatchEval<S>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let spec = samples[0].target_spec().clone();
    let p = spec.param_count();
    let mut thetas = Vec::with_capacity(samples.len() * p);
    for s in samples {
        if s.target_spec() != &spec {
            return Err(Error::DimensionMismatch("samples disagree on target spec".into()));
        }
        thetas.extend_from_slice(s.theta());
    }
    let tb = TransitionBatch::from_transitions(batch)?;
    let (eval, _) = eval_thetas_on_batch(&spec, &thetas, samples.len(), &tb, false)?;
    Ok(eval)
}

/// The empirical Stein direction at every particle:
///
/// `phi*(f_i) = (1/m) sum_l [ k(f_l, f_i) grad_logp(f_l) + grad_{f_l} k(f_l, f_i) ]`
///
/// with the kernel gradient taken analytically through the batch-mean
/// distance: `grad_{f_l(x)} k = k * (-2 c_x / (C h)) * (f_l(x) - f_i(x))`.
pub fn compute_phi_star<S: Scalar>(eval: &FunctionBatchEval<S>, kernel: &KernelEval<S>) -> Result<Vec<S>> {
    let m = eval.num_particles();
    if kernel.num_particles() != m {
        return Err(Error::DimensionMismatch("kernel vs eval particle count".into()));
    }
    let block = eval.block();
    let s = eval.target_dim();
    // driving = K * G and smoothed = K * F, both (m, n*s).
    let mut driving = vec![S::zero(); m * block];
    let mut smoothed = vec![S::zero(); m * block];
    S::gemm(
        m,
        m,
        block,
        S::one(),
        &kernel.matrix,
        m as isize,
        1,
        &eval.loss_grads,
        block as isize,
        1,
        S::zero(),
        &mut driving,
        block as isize,
        1,
    );
    S::gemm(
        m,
        m,
        block,
        S::one(),
        &kernel.matrix,
        m as isize,
        1,
        &eval.outputs,
        block as isize,
        1,
        S::zero(),
        &mut smoothed,
        block as isize,
        1,
    );
    // Row sums of K (= column sums by symmetry).
    let krow: Vec<S> = (0..m)
        .map(|i| kernel.matrix[i * m..(i + 1) * m].iter().copied().sum())
        .collect();
    let inv_m = S::one() / S::from_usize(m);
    let repulsion_scale = -S::two() / (eval.total_weight * kernel.bandwidth);
    let mut phi = vec![S::zero(); m * block];
    for i in 0..m {
        for l in 0..eval.rows() {
            let row_scale = repulsion_scale * eval.row_weights[l];
            for k in 0..s {
                let idx = i * block + l * s + k;
                let repulse = row_scale * (smoothed[idx] - krow[i] * eval.outputs[idx]);
                phi[idx] = inv_m * (driving[idx] + repulse);
            }
        }
    }
    Ok(phi)
}

/// Emitted once per SVGD update for the experiment logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SvgdDiagnostics<S: Scalar> {
    pub mean_loss: S,
    pub bandwidth: S,
    pub phi_norm: S,
}

fn phi_norm<S: Scalar>(phi: &[S]) -> S {
    phi.iter().map(|&v| v * v).sum::<S>().sqrt()
}

/// Plain SVGD step on explicit particle value vectors; the reference engine
/// the amortized path is validated against. The kernel is taken over the
/// particle values themselves and `logp_grads[i]` is the target score at
/// particle `i`. Updates in place: `p_i += step_size * phi*_i`.
pub fn particle_update<S: Scalar>(
    particles: &mut [Vec<S>],
    logp_grads: &[Vec<S>],
    step_size: S,
    kernel_floor: S,
) -> Result<SvgdDiagnostics<S>> {
    let m = particles.len();
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    if logp_grads.len() != m {
        return Err(Error::DimensionMismatch("logp_grads vs particles".into()));
    }
    let dim = particles[0].len();
    if particles.iter().any(|p| p.len() != dim) || logp_grads.iter().any(|g| g.len() != dim) {
        return Err(Error::DimensionMismatch("particle dimensions".into()));
    }
    // A particle value is a "function" evaluated on a single-row batch.
    let mut outputs = Vec::with_capacity(m * dim);
    let mut grads = Vec::with_capacity(m * dim);
    for (p, g) in particles.iter().zip(logp_grads) {
        outputs.extend_from_slice(p);
        grads.extend_from_slice(g);
    }
    let distances = pairwise_function_distance(&outputs, m, 1, dim)?;
    let kernel = rbf_kernel_median(&distances, m, kernel_floor)?;
    let eval = FunctionBatchEval {
        outputs,
        per_particle_loss: vec![S::zero(); m],
        loss_grads: grads,
        m,
        rows: 1,
        target_dim: dim,
        row_weights: vec![S::one()],
        total_weight: S::one(),
    };
    let phi = compute_phi_star(&eval, &kernel)?;
    if !all_finite(&phi) {
        return Err(Error::NonFinite("phi* in particle update".into()));
    }
    for (i, p) in particles.iter_mut().enumerate() {
        for (k, v) in p.iter_mut().enumerate() {
            *v = *v + step_size * phi[i * dim + k];
        }
    }
    Ok(SvgdDiagnostics {
        mean_loss: S::zero(),
        bandwidth: kernel.bandwidth,
        phi_norm: phi_norm(&phi),
    })
}

/// Reusable buffers for [`amortized_update_with`]; one per training loop.
/// The eta-sized gradient buffer is the expensive one.
#[derive(Debug, Default)]
pub struct AmortizedWorkspace<S: Scalar> {
    theta_grads: Vec<S>,
    eta_grad: Vec<S>,
}

impl<S: Scalar> AmortizedWorkspace<S> {
    pub fn new() -> Self {
        Self {
            theta_grads: Vec::new(),
            eta_grad: Vec::new(),
        }
    }
}

/// One amortized SVGD update of the generator parameters.
///
/// Draws `theta_i = G(z_i)`, evaluates them on the batch, forms `phi*`, and
/// backpropagates it — first through each sampled network to parameter
/// space, then through the generators to `eta` — where Adam applies the
/// negated direction (gradient ascent on the Stein objective).
pub fn amortized_update<S: Scalar>(
    bundle: &mut GeneratorBundle<S>,
    noise: &[Vec<S>],
    batch: &[Transition<S>],
    cfg: &SvgdConfig<S>,
    opt: &mut AdamState<S>,
) -> Result<SvgdDiagnostics<S>> {
    let tb = TransitionBatch::from_transitions(batch)?;
    amortized_update_weighted(bundle, noise, &tb, cfg, opt)
}

/// [`amortized_update`] over a pre-flattened, possibly weighted batch.
pub fn amortized_update_weighted<S: Scalar>(
    bundle: &mut GeneratorBundle<S>,
    noise: &[Vec<S>],
    batch: &TransitionBatch<S>,
    cfg: &SvgdConfig<S>,
    opt: &mut AdamState<S>,
) -> Result<SvgdDiagnostics<S>> {
    let mut ws = AmortizedWorkspace::new();
    amortized_update_with(bundle, noise, batch, cfg, opt, &mut ws)
}

/// [`amortized_update_weighted`] with caller-owned scratch buffers.
pub fn amortized_update_with<S: Scalar>(
    bundle: &mut GeneratorBundle<S>,
    noise: &[Vec<S>],
    batch: &TransitionBatch<S>,
    cfg: &SvgdConfig<S>,
    opt: &mut AdamState<S>,
    ws: &mut AmortizedWorkspace<S>,
) -> Result<SvgdDiagnostics<S>> {
    if noise.len() != cfg.particle_count {
        return Err(Error::DimensionMismatch(format!(
            "noise count {} != particle_count {}",
            noise.len(),
            cfg.particle_count
        )));
    }
    let m = noise.len();
    let spec = bundle.target_spec().clone();
    let p = spec.param_count();

    let gen_batch = bundle.generate_batch_traced(noise)?;
    let (eval, traces) = eval_thetas_on_batch(&spec, &gen_batch.thetas, m, batch, true)?;
    let traces = traces.expect("traces requested");

    let distances = pairwise_function_distance_weighted(
        &eval.outputs,
        m,
        eval.rows(),
        eval.target_dim(),
        &eval.row_weights,
        eval.total_weight,
    )?;
    let kernel = rbf_kernel_median(&distances, m, cfg.kernel_floor)?;
    let phi = compute_phi_star(&eval, &kernel)?;

    let mean_loss = eval.per_particle_loss.iter().copied().sum::<S>() / S::from_usize(m);
    let diagnostics = SvgdDiagnostics {
        mean_loss,
        bandwidth: kernel.bandwidth,
        phi_norm: phi_norm(&phi),
    };
    if !all_finite(&phi) {
        return Err(Error::NonFinite(format!(
            "phi* non-finite (mean_loss {}, bandwidth {}); update aborted",
            diagnostics.mean_loss, diagnostics.bandwidth
        )));
    }
    if cfg.step_size == S::zero() {
        return Ok(diagnostics);
    }

    // Pull phi* back through each sampled network: theta-space ascent
    // directions, one row per particle, written into disjoint slices.
    let block = eval.block();
    ws.theta_grads.resize(m * p, S::zero());
    ws.theta_grads
        .par_chunks_mut(p)
        .enumerate()
        .try_for_each(|(i, dst)| -> Result<()> {
            crate::diffcore::backward_batch_into(
                &spec,
                &gen_batch.thetas[i * p..(i + 1) * p],
                batch.inputs(),
                &traces[i],
                &phi[i * block..(i + 1) * block],
                dst,
            )?;
            Ok(())
        })?;

    // Chain rule into the generator parameters, then descend the negative.
    ws.eta_grad.resize(bundle.eta_len(), S::zero());
    bundle.backprop_theta_grads(&gen_batch, &ws.theta_grads, &mut ws.eta_grad)?;
    adam_step_from_ascent(opt, bundle.eta_mut(), &ws.eta_grad)?;
    Ok(diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Nonlinearity;
    use crate::hypergen::{sample_noise, GeneratorConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn transition_1d(x: f64, y: f64) -> Transition<f64> {
        Transition {
            state: vec![x],
            action: vec![],
            next_state: vec![y],
            external_reward: 0.0,
            done: false,
        }
    }

    #[test]
    fn identical_outputs_have_zero_distance() {
        let outputs = vec![1.0, 2.0, 1.0, 2.0]; // two particles, n=1, s=2
        let d = pairwise_function_distance(&outputs, 2, 1, 2).unwrap();
        assert_eq!(d, vec![0.0; 4]);
    }

    #[test]
    fn two_scalar_particles_distance_is_squared_gap() {
        let outputs = vec![0.0, 2.0];
        let d = pairwise_function_distance(&outputs, 2, 1, 1).unwrap();
        assert_eq!(d[1], 4.0);
        assert_eq!(d[2], 4.0);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn distance_matches_double_loop_brute_force() {
        let (m, n, s) = (4, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let outputs: Vec<f64> = (0..m * n * s).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let d = pairwise_function_distance(&outputs, m, n, s).unwrap();
        for i in 0..m {
            for j in 0..m {
                let mut acc = 0.0;
                for l in 0..n {
                    for k in 0..s {
                        let a = outputs[i * n * s + l * s + k];
                        let b = outputs[j * n * s + l * s + k];
                        acc += (a - b) * (a - b);
                    }
                }
                acc /= n as f64;
                assert!((d[i * m + j] - acc).abs() < 1e-12);
                assert!(d[i * m + j] == d[j * m + i]);
            }
        }
    }

    #[test]
    fn collapsed_particles_floor_the_bandwidth() {
        let d = vec![0.0; 9];
        let k = rbf_kernel_median(&d, 3, 1e-8).unwrap();
        assert_eq!(k.bandwidth, 1e-8);
        assert!(k.matrix.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn median_bandwidth_two_particles() {
        let d = vec![0.0, 4.0, 4.0, 0.0];
        let k = rbf_kernel_median(&d, 2, 1e-8).unwrap();
        assert_eq!(k.bandwidth, 4.0);
        let expected = (-1.0f64).exp();
        assert!((k.matrix[1] - expected).abs() < 1e-12);
        assert!((k.matrix[2] - expected).abs() < 1e-12);
    }

    #[test]
    fn kernel_diagonal_is_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 5;
        let mut d = vec![0.0; m * m];
        for i in 0..m {
            for j in (i + 1)..m {
                let v = rng.gen_range(0.0..3.0);
                d[i * m + j] = v;
                d[j * m + i] = v;
            }
        }
        let k = rbf_kernel_median(&d, m, 1e-8).unwrap();
        for i in 0..m {
            assert_eq!(k.matrix[i * m + i], 1.0);
        }
        assert!(k.matrix.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn single_particle_kernel_is_identity_with_floored_bandwidth() {
        let k = rbf_kernel_median(&[0.0], 1, 1e-8).unwrap();
        assert_eq!(k.matrix, vec![1.0]);
        assert_eq!(k.bandwidth, 1e-8);
    }

    #[test]
    fn kernel_is_invariant_under_particle_permutation() {
        let (m, n, s) = (4, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let outputs: Vec<f64> = (0..m * n * s).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let perm = [2usize, 0, 3, 1];
        let mut permuted = vec![0.0; outputs.len()];
        for (dst, &src) in perm.iter().enumerate() {
            permuted[dst * n * s..(dst + 1) * n * s]
                .copy_from_slice(&outputs[src * n * s..(src + 1) * n * s]);
        }
        let k = rbf_kernel_median(&pairwise_function_distance(&outputs, m, n, s).unwrap(), m, 1e-8).unwrap();
        let kp =
            rbf_kernel_median(&pairwise_function_distance(&permuted, m, n, s).unwrap(), m, 1e-8).unwrap();
        for i in 0..m {
            for j in 0..m {
                let orig = k.matrix[perm[i] * m + perm[j]];
                assert!((kp.matrix[i * m + j] - orig).abs() < 1e-14);
            }
        }
    }

    fn tiny_sample(seed: u64) -> DynamicsSample<f64> {
        let spec = MlpSpec::new(vec![1, 4, 1], Nonlinearity::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: Vec<f64> = (0..spec.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DynamicsSample::from_theta(spec, theta).unwrap()
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_grads() {
        let sample = tiny_sample(4);
        let x = 0.3;
        let y = sample.predict(&[x]).unwrap()[0];
        let eval = log_likelihood_grads(&[sample], &[transition_1d(x, y)]).unwrap();
        assert_eq!(eval.per_particle_loss, vec![0.0]);
        assert!(eval.loss_grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn scalar_loss_and_gradient_are_analytic() {
        // Identity net: prediction w*x + b with w=1, b=0 at x=1 gives 1;
        // target 0 -> loss 1, d(log p)/d(output) = -2.
        let spec = MlpSpec::new(vec![1, 1], Nonlinearity::Identity).unwrap();
        let sample = DynamicsSample::from_theta(spec, vec![1.0, 0.0]).unwrap();
        let eval = log_likelihood_grads(&[sample], &[transition_1d(1.0, 0.0)]).unwrap();
        assert_eq!(eval.per_particle_loss, vec![1.0]);
        assert_eq!(eval.loss_grads, vec![-2.0]);
    }

    #[test]
    fn loss_grads_match_finite_differences_of_log_likelihood() {
        let samples = vec![tiny_sample(5), tiny_sample(6)];
        let batch: Vec<Transition<f64>> = vec![transition_1d(0.1, 0.5), transition_1d(-0.4, -0.2)];
        let eval = log_likelihood_grads(&samples, &batch).unwrap();
        // Perturb outputs directly: log p = -sum_l (out_l - y_l)^2.
        let h = 1e-6;
        for i in 0..eval.num_particles() {
            for l in 0..eval.rows() {
                let idx = i * eval.block() + l;
                let out = eval.outputs[idx];
                let y = batch[l].next_state[0];
                let logp = |o: f64| -((o - y) * (o - y));
                let fd = (logp(out + h) - logp(out - h)) / (2.0 * h);
                let rel = (eval.loss_grads[idx] - fd).abs() / fd.abs().max(1e-3);
                assert!(rel < 1e-6, "particle {i} row {l}: {} vs {fd}", eval.loss_grads[idx]);
            }
        }
    }

    #[test]
    fn single_particle_phi_star_is_the_loglik_gradient() {
        let sample = tiny_sample(7);
        let batch = vec![transition_1d(0.2, 1.0), transition_1d(-0.7, -0.3)];
        let eval = log_likelihood_grads(&[sample], &batch).unwrap();
        let kernel = rbf_kernel_median(&[0.0], 1, 1e-8).unwrap();
        let phi = compute_phi_star(&eval, &kernel).unwrap();
        for (p, g) in phi.iter().zip(&eval.loss_grads) {
            assert!((p - g).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_particles_average_their_gradients_without_repulsion() {
        let sample = tiny_sample(8);
        let batch = vec![transition_1d(0.2, 0.9)];
        let eval = log_likelihood_grads(&[sample.clone(), sample], &batch).unwrap();
        let d = pairwise_function_distance(&eval.outputs, 2, 1, 1).unwrap();
        let kernel = rbf_kernel_median(&d, 2, 1e-8).unwrap();
        let phi = compute_phi_star(&eval, &kernel).unwrap();
        // Repulsion cancels by symmetry; phi equals the (shared) gradient.
        for (p, g) in phi.iter().zip(&eval.loss_grads) {
            assert!((p - g).abs() < 1e-10);
        }
    }

    #[test]
    fn phi_star_matches_term_by_term_brute_force() {
        let samples = vec![tiny_sample(9), tiny_sample(10), tiny_sample(11)];
        let batch = vec![
            transition_1d(0.1, 0.4),
            transition_1d(-0.5, 0.2),
            transition_1d(0.8, -0.6),
            transition_1d(0.0, 0.0),
        ];
        let (m, n, s) = (3usize, 4usize, 1usize);
        let eval = log_likelihood_grads(&samples, &batch).unwrap();
        let d = pairwise_function_distance(&eval.outputs, m, n, s).unwrap();
        let kernel = rbf_kernel_median(&d, m, 1e-8).unwrap();
        let phi = compute_phi_star(&eval, &kernel).unwrap();

        // Literal transcription of the empirical direction, term by term.
        let block = n * s;
        let h = kernel.bandwidth;
        for i in 0..m {
            for l in 0..n {
                for k in 0..s {
                    let mut acc = 0.0;
                    for ell in 0..m {
                        let kli = kernel.matrix[ell * m + i];
                        let g = eval.loss_grads[ell * block + l * s + k];
                        let fl = eval.outputs[ell * block + l * s + k];
                        let fi = eval.outputs[i * block + l * s + k];
                        let repulse = kli * (-2.0 / (n as f64 * h)) * (fl - fi);
                        acc += kli * g + repulse;
                    }
                    acc /= m as f64;
                    let got = phi[i * block + l * s + k];
                    assert!((got - acc).abs() < 1e-10, "i={i} l={l} k={k}: {got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn phi_star_is_permutation_equivariant() {
        let samples = vec![tiny_sample(12), tiny_sample(13), tiny_sample(14)];
        let batch = vec![transition_1d(0.3, 0.1), transition_1d(-0.2, 0.6)];
        let eval = log_likelihood_grads(&samples, &batch).unwrap();
        let d = pairwise_function_distance(&eval.outputs, 3, 2, 1).unwrap();
        let kernel = rbf_kernel_median(&d, 3, 1e-8).unwrap();
        let phi = compute_phi_star(&eval, &kernel).unwrap();

        let perm = [1usize, 2, 0];
        let permuted: Vec<DynamicsSample<f64>> = perm.iter().map(|&i| samples[i].clone()).collect();
        let eval_p = log_likelihood_grads(&permuted, &batch).unwrap();
        let d_p = pairwise_function_distance(&eval_p.outputs, 3, 2, 1).unwrap();
        let kernel_p = rbf_kernel_median(&d_p, 3, 1e-8).unwrap();
        let phi_p = compute_phi_star(&eval_p, &kernel_p).unwrap();
        let block = 2;
        for (dst, &src) in perm.iter().enumerate() {
            for k in 0..block {
                assert!((phi_p[dst * block + k] - phi[src * block + k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn phi_star_vanishes_at_a_coincident_interpolating_fit() {
        let sample = tiny_sample(15);
        let x = 0.4;
        let y = sample.predict(&[x]).unwrap()[0];
        let batch = vec![transition_1d(x, y)];
        let eval = log_likelihood_grads(&[sample.clone(), sample.clone(), sample], &batch).unwrap();
        let d = pairwise_function_distance(&eval.outputs, 3, 1, 1).unwrap();
        let kernel = rbf_kernel_median(&d, 3, 1e-8).unwrap();
        let phi = compute_phi_star(&eval, &kernel).unwrap();
        assert!(phi.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn single_particle_update_is_gradient_ascent_toward_the_mode() {
        // Target N(0,1): score is -x. One particle from 3.0 must approach 0
        // monotonically.
        let mut particles = vec![vec![3.0f64]];
        let mut last = 3.0;
        for _ in 0..200 {
            let grads = vec![vec![-particles[0][0]]];
            particle_update(&mut particles, &grads, 0.1, 1e-8).unwrap();
            let x = particles[0][0];
            assert!(x < last && x > -0.01, "x={x} last={last}");
            last = x;
        }
        assert!(last.abs() < 0.01);
    }

    #[test]
    fn zero_step_size_leaves_eta_unchanged() {
        let target = MlpSpec::new(vec![1, 3, 1], Nonlinearity::Tanh).unwrap();
        let config = GeneratorConfig {
            noise_dim: 2,
            hidden_widths: vec![4],
            ..GeneratorConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut bundle = GeneratorBundle::<f64>::init(target, &config, &mut rng).unwrap();
        let before = bundle.eta().to_vec();
        let noise = sample_noise::<f64>(3, bundle.noise_len(), 0).unwrap();
        let batch = vec![transition_1d(0.0, 1.0)];
        let cfg = SvgdConfig {
            step_size: 0.0,
            particle_count: 3,
            kernel_floor: 1e-8,
        };
        let mut opt = AdamState::with_defaults(bundle.eta_len(), 1e-2, 0.0).unwrap();
        amortized_update(&mut bundle, &noise, &batch, &cfg, &mut opt).unwrap();
        assert_eq!(bundle.eta(), before.as_slice());
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn non_finite_phi_aborts_without_touching_eta() {
        let target = MlpSpec::new(vec![1, 1], Nonlinearity::Identity).unwrap();
        let config = GeneratorConfig {
            noise_dim: 1,
            hidden_widths: vec![2],
            ..GeneratorConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut bundle = GeneratorBundle::<f64>::init(target, &config, &mut rng).unwrap();
        let before = bundle.eta().to_vec();
        let noise = sample_noise::<f64>(2, bundle.noise_len(), 1).unwrap();
        // A non-finite target drives the loss gradient to a NaN/Inf phi*.
        let batch = vec![transition_1d(1.0, f64::INFINITY)];
        let cfg = SvgdConfig {
            step_size: 1.0,
            particle_count: 2,
            kernel_floor: 1e-8,
        };
        let mut opt = AdamState::with_defaults(bundle.eta_len(), 1e-2, 0.0).unwrap();
        let err = amortized_update(&mut bundle, &noise, &batch, &cfg, &mut opt);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(bundle.eta(), before.as_slice());
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn weighted_batch_equals_expanded_batch() {
        // Two copies of a transition must behave exactly like weight 2.
        let target = MlpSpec::new(vec![1, 3, 1], Nonlinearity::Tanh).unwrap();
        let config = GeneratorConfig {
            noise_dim: 2,
            hidden_widths: vec![4],
            ..GeneratorConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let bundle0 = GeneratorBundle::<f64>::init(target, &config, &mut rng).unwrap();
        let noise = sample_noise::<f64>(3, bundle0.noise_len(), 2).unwrap();
        let cfg = SvgdConfig {
            step_size: 1.0,
            particle_count: 3,
            kernel_floor: 1e-8,
        };

        let expanded = vec![
            transition_1d(0.2, 0.7),
            transition_1d(0.2, 0.7),
            transition_1d(-0.5, 0.1),
        ];
        let mut b1 = bundle0.clone();
        let mut opt1 = AdamState::with_defaults(b1.eta_len(), 1e-2, 0.0).unwrap();
        let d1 = amortized_update(&mut b1, &noise, &expanded, &cfg, &mut opt1).unwrap();

        let dedup = vec![transition_1d(0.2, 0.7), transition_1d(-0.5, 0.1)];
        let tb = TransitionBatch::from_transitions_weighted(&dedup, &[2.0, 1.0]).unwrap();
        let mut b2 = bundle0.clone();
        let mut opt2 = AdamState::with_defaults(b2.eta_len(), 1e-2, 0.0).unwrap();
        let d2 = amortized_update_weighted(&mut b2, &noise, &tb, &cfg, &mut opt2).unwrap();

        assert!((d1.mean_loss - d2.mean_loss).abs() < 1e-12);
        assert!((d1.bandwidth - d2.bandwidth).abs() < 1e-12);
        for (a, b) in b1.eta().iter().zip(b2.eta()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
