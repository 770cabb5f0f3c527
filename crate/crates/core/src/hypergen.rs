//! Layer-wise weight generator for dynamics networks.
//!
//! A [`GeneratorBundle`] holds one small MLP per parameterized layer of the
//! target network. Every generator maps a Gaussian noise vector `z` to the
//! flat parameter block of its layer; concatenating the blocks yields a full
//! dynamics network. Drawing many `z` gives an arbitrarily large ensemble
//! from a single set of generator weights.
//!
//! In `Shared` mode one `z` feeds every generator, which is what couples the
//! generated layers. `Independent` mode gives each generator its own slice
//! of a longer noise vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{forward_batch, BatchTrace, MlpSpec, Nonlinearity, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSharing {
    /// One noise vector drives every layer generator (couples layers).
    Shared,
    /// Each layer generator consumes its own `d`-wide slice of the noise.
    Independent,
}

/// Construction parameters for a [`GeneratorBundle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Noise dimensionality `d`.
    pub noise_dim: usize,
    /// Hidden widths of every layer generator.
    pub hidden_widths: Vec<usize>,
    pub nonlinearity: Nonlinearity,
    /// Multiplier on the output layer after fan-in init. Keeps freshly
    /// sampled dynamics networks small but non-degenerate.
    pub output_scale: f64,
    pub noise_sharing: NoiseSharing,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            noise_dim: 32,
            hidden_widths: vec![64, 64],
            nonlinearity: Nonlinearity::Relu,
            output_scale: 0.1,
            noise_sharing: NoiseSharing::Shared,
        }
    }
}

/// One sampled dynamics network: flat parameters plus the noise that
/// produced them. Regenerating from `source_noise` with the same bundle
/// reproduces `theta` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DynamicsSample<S: Scalar> {
    target_spec: MlpSpec,
    theta: Tensor<S>,
    source_noise: Vec<S>,
}

impl<S: Scalar> DynamicsSample<S> {
    /// Wrap explicit parameters as a sample (fixed-ensemble members).
    pub fn from_theta(target_spec: MlpSpec, theta: Vec<S>) -> Result<Self> {
        if theta.len() != target_spec.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "theta length {} != target param count {}",
                theta.len(),
                target_spec.param_count()
            )));
        }
        let len = theta.len();
        Ok(Self {
            target_spec,
            theta: Tensor::new(theta, vec![len])?,
            source_noise: Vec::new(),
        })
    }

    #[inline]
    pub fn theta(&self) -> &[S] {
        self.theta.data()
    }

    #[inline]
    pub fn theta_mut(&mut self) -> &mut [S] {
        self.theta.data_mut()
    }

    #[inline]
    pub fn source_noise(&self) -> &[S] {
        &self.source_noise
    }

    #[inline]
    pub fn target_spec(&self) -> &MlpSpec {
        &self.target_spec
    }

    /// Parameters of target layer `j`.
    pub fn theta_layer(&self, j: usize) -> &[S] {
        let start = self.target_spec.layer_param_offset(j);
        &self.theta.data()[start..start + self.target_spec.layer_param_count(j)]
    }

    /// Evaluate the sampled dynamics network on one input.
    pub fn predict(&self, input: &[S]) -> Result<Vec<S>> {
        crate::diffcore::forward(&self.target_spec, self.theta.data(), input)
    }

    /// Evaluate on a `(n, input_dim)` row-major batch.
    pub fn predict_batch_into(&self, inputs: &[S], n: usize, out: &mut Vec<S>) -> Result<()> {
        crate::diffcore::forward_batch_into(&self.target_spec, self.theta.data(), inputs, n, out)
    }
}

/// `count` i.i.d. standard-normal vectors of dimension `d`, deterministic in
/// the seed.
pub fn sample_noise<S: Scalar>(count: usize, d: usize, rng_seed: u64) -> Result<Vec<Vec<S>>> {
    if count == 0 {
        return Err(Error::InvalidArgument("noise count must be >= 1".into()));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("noise dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(sample_noise_with(&mut rng, count, d))
}

/// Same as [`sample_noise`] but drawing from a caller-owned stream.
pub fn sample_noise_with<S: Scalar, R: Rng + ?Sized>(rng: &mut R, count: usize, d: usize) -> Vec<Vec<S>> {
    (0..count)
        .map(|_| (0..d).map(|_| S::standard_normal(rng)).collect())
        .collect()
}

/// The per-layer generator stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GeneratorBundle<S: Scalar> {
    target_spec: MlpSpec,
    noise_dim: usize,
    noise_sharing: NoiseSharing,
    gen_specs: Vec<MlpSpec>,
    /// Flat concatenation of every generator's parameters.
    eta: Vec<S>,
    /// Start of generator `j`'s block in `eta`.
    offsets: Vec<usize>,
}

impl<S: Scalar> GeneratorBundle<S> {
    /// Build a bundle with fan-in-scaled uniform init; the output layer of
    /// each generator is additionally scaled by `config.output_scale`.
    pub fn init<R: Rng + ?Sized>(target_spec: MlpSpec, config: &GeneratorConfig, rng: &mut R) -> Result<Self> {
        if config.noise_dim == 0 {
            return Err(Error::InvalidArgument("noise_dim must be >= 1".into()));
        }
        let mut gen_specs = Vec::with_capacity(target_spec.num_layers());
        for j in 0..target_spec.num_layers() {
            let mut widths = vec![config.noise_dim];
            widths.extend_from_slice(&config.hidden_widths);
            widths.push(target_spec.layer_param_count(j));
            gen_specs.push(MlpSpec::new(widths, config.nonlinearity)?);
        }
        let mut eta = Vec::new();
        let mut offsets = Vec::with_capacity(gen_specs.len());
        let scale = S::from_f64(config.output_scale);
        for spec in &gen_specs {
            offsets.push(eta.len());
            for j in 0..spec.num_layers() {
                let (fan_in, fan_out) = spec.layer_dims(j);
                let bound = S::from_f64(1.0 / (fan_in as f64).sqrt());
                let layer_scale = if j + 1 == spec.num_layers() { scale } else { S::one() };
                for _ in 0..fan_in * fan_out + fan_out {
                    let u = S::from_f64(rng.gen_range(-1.0..1.0));
                    eta.push(layer_scale * bound * u);
                }
            }
        }
        Ok(Self {
            target_spec,
            noise_dim: config.noise_dim,
            noise_sharing: config.noise_sharing,
            gen_specs,
            eta,
            offsets,
        })
    }

    /// Bundle with explicitly provided generator parameters (tests and
    /// direct-parameterization setups).
    pub fn from_parts(
        target_spec: MlpSpec,
        noise_dim: usize,
        noise_sharing: NoiseSharing,
        gen_specs: Vec<MlpSpec>,
        eta: Vec<S>,
    ) -> Result<Self> {
        if gen_specs.len() != target_spec.num_layers() {
            return Err(Error::DimensionMismatch(format!(
                "{} generators for {} target layers",
                gen_specs.len(),
                target_spec.num_layers()
            )));
        }
        let mut offsets = Vec::with_capacity(gen_specs.len());
        let mut total = 0;
        for (j, spec) in gen_specs.iter().enumerate() {
            if spec.input_dim() != noise_dim {
                return Err(Error::DimensionMismatch(format!(
                    "generator {j} input {} != noise_dim {noise_dim}",
                    spec.input_dim()
                )));
            }
            if spec.output_dim() != target_spec.layer_param_count(j) {
                return Err(Error::DimensionMismatch(format!(
                    "generator {j} output {} != layer param count {}",
                    spec.output_dim(),
                    target_spec.layer_param_count(j)
                )));
            }
            offsets.push(total);
            total += spec.param_count();
        }
        if eta.len() != total {
            return Err(Error::DimensionMismatch(format!(
                "eta length {} != total generator params {total}",
                eta.len()
            )));
        }
        Ok(Self {
            target_spec,
            noise_dim,
            noise_sharing,
            gen_specs,
            eta,
            offsets,
        })
    }

    #[inline]
    pub fn target_spec(&self) -> &MlpSpec {
        &self.target_spec
    }

    #[inline]
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    #[inline]
    pub fn noise_sharing(&self) -> NoiseSharing {
        self.noise_sharing
    }

    #[inline]
    pub fn num_generators(&self) -> usize {
        self.gen_specs.len()
    }

    /// Spec and parameters of layer generator `j`.
    pub fn layer_generator(&self, j: usize) -> (&MlpSpec, &[S]) {
        let spec = &self.gen_specs[j];
        let start = self.offsets[j];
        (spec, &self.eta[start..start + spec.param_count()])
    }

    #[inline]
    pub fn eta(&self) -> &[S] {
        &self.eta
    }

    #[inline]
    pub fn eta_mut(&mut self) -> &mut [S] {
        &mut self.eta
    }

    #[inline]
    pub fn eta_len(&self) -> usize {
        self.eta.len()
    }

    /// Length of one noise vector accepted by [`Self::generate`]: `d` in
    /// shared mode, `d * N` in independent mode.
    pub fn noise_len(&self) -> usize {
        match self.noise_sharing {
            NoiseSharing::Shared => self.noise_dim,
            NoiseSharing::Independent => self.noise_dim * self.gen_specs.len(),
        }
    }

    /// Noise slice consumed by generator `j`.
    #[inline]
    fn noise_slice<'z>(&self, z: &'z [S], j: usize) -> &'z [S] {
        match self.noise_sharing {
            NoiseSharing::Shared => z,
            NoiseSharing::Independent => &z[j * self.noise_dim..(j + 1) * self.noise_dim],
        }
    }

    /// Deterministically map one noise vector to a full dynamics network.
    pub fn generate(&self, z: &[S]) -> Result<DynamicsSample<S>> {
        if z.len() != self.noise_len() {
            return Err(Error::DimensionMismatch(format!(
                "noise length {} != expected {}",
                z.len(),
                self.noise_len()
            )));
        }
        let mut theta = vec![S::zero(); self.target_spec.param_count()];
        for j in 0..self.gen_specs.len() {
            let (spec, params) = self.layer_generator(j);
            let zj = self.noise_slice(z, j);
            let out = crate::diffcore::forward(spec, params, zj)?;
            let start = self.target_spec.layer_param_offset(j);
            theta[start..start + out.len()].copy_from_slice(&out);
        }
        Ok(DynamicsSample {
            target_spec: self.target_spec.clone(),
            theta: Tensor::new(theta, vec![self.target_spec.param_count()])?,
            source_noise: z.to_vec(),
        })
    }

    /// Generate `m` samples at once, keeping the forward traces needed to
    /// backpropagate parameter-space gradients into `eta`.
    pub fn generate_batch_traced(&self, zs: &[Vec<S>]) -> Result<GeneratedBatch<S>> {
        let m = zs.len();
        if m == 0 {
            return Err(Error::InvalidArgument("need at least one noise vector".into()));
        }
        for z in zs {
            if z.len() != self.noise_len() {
                return Err(Error::DimensionMismatch(format!(
                    "noise length {} != expected {}",
                    z.len(),
                    self.noise_len()
                )));
            }
        }
        let p_total = self.target_spec.param_count();
        let mut thetas = vec![S::zero(); m * p_total];
        let mut traces = Vec::with_capacity(self.gen_specs.len());
        let mut gen_inputs = Vec::with_capacity(self.gen_specs.len());
        for j in 0..self.gen_specs.len() {
            let (spec, params) = self.layer_generator(j);
            let mut inputs = Vec::with_capacity(m * self.noise_dim);
            for z in zs {
                inputs.extend_from_slice(self.noise_slice(z, j));
            }
            let trace = forward_batch(spec, params, &inputs, m)?;
            let p_j = spec.output_dim();
            let start = self.target_spec.layer_param_offset(j);
            for (i, row) in trace.outputs().chunks_exact(p_j).enumerate() {
                thetas[i * p_total + start..i * p_total + start + p_j].copy_from_slice(row);
            }
            traces.push(trace);
            gen_inputs.push(inputs);
        }
        Ok(GeneratedBatch {
            thetas,
            traces,
            gen_inputs,
        })
    }

    /// Write `d(sum_i <theta_i, theta_grads_i>)/d(eta)` into `grad`
    /// (overwrite) given the traces from [`Self::generate_batch_traced`].
    /// Generators backpropagate in parallel into disjoint slices of `grad`,
    /// so the result is deterministic.
    ///
    /// `theta_grads` is `(m, target_param_count)` row-major; `grad` must have
    /// `eta_len()` entries.
    pub fn backprop_theta_grads(
        &self,
        batch: &GeneratedBatch<S>,
        theta_grads: &[S],
        grad: &mut [S],
    ) -> Result<()> {
        use rayon::prelude::*;
        let p_total = self.target_spec.param_count();
        let m = batch.traces[0].batch_size();
        if theta_grads.len() != m * p_total {
            return Err(Error::DimensionMismatch("theta_grads shape".into()));
        }
        if grad.len() != self.eta_len() {
            return Err(Error::DimensionMismatch("eta grad length".into()));
        }
        let mut slices: Vec<&mut [S]> = Vec::with_capacity(self.gen_specs.len());
        let mut rest = grad;
        for spec in &self.gen_specs {
            let (head, tail) = rest.split_at_mut(spec.param_count());
            slices.push(head);
            rest = tail;
        }
        slices
            .into_par_iter()
            .enumerate()
            .try_for_each(|(j, dst)| -> Result<()> {
                let (spec, params) = self.layer_generator(j);
                let p_j = spec.output_dim();
                let start = self.target_spec.layer_param_offset(j);
                let mut out_grads = vec![S::zero(); m * p_j];
                for i in 0..m {
                    out_grads[i * p_j..(i + 1) * p_j].copy_from_slice(
                        &theta_grads[i * p_total + start..i * p_total + start + p_j],
                    );
                }
                crate::diffcore::backward_batch_into(
                    spec,
                    params,
                    &batch.gen_inputs[j],
                    &batch.traces[j],
                    &out_grads,
                    dst,
                )?;
                Ok(())
            })
    }

    /// Batched traceless generation: one GEMM per generator for the whole
    /// ensemble instead of one matvec per sample.
    pub fn generate_batch(&self, zs: &[Vec<S>]) -> Result<Vec<DynamicsSample<S>>> {
        let m = zs.len();
        if m == 0 {
            return Err(Error::InvalidArgument("need at least one noise vector".into()));
        }
        for z in zs {
            if z.len() != self.noise_len() {
                return Err(Error::DimensionMismatch(format!(
                    "noise length {} != expected {}",
                    z.len(),
                    self.noise_len()
                )));
            }
        }
        let p_total = self.target_spec.param_count();
        let mut thetas = vec![S::zero(); m * p_total];
        let mut out = Vec::new();
        let mut inputs = Vec::new();
        for j in 0..self.gen_specs.len() {
            let (spec, params) = self.layer_generator(j);
            inputs.clear();
            for z in zs {
                inputs.extend_from_slice(self.noise_slice(z, j));
            }
            crate::diffcore::forward_batch_into(spec, params, &inputs, m, &mut out)?;
            let p_j = spec.output_dim();
            let start = self.target_spec.layer_param_offset(j);
            for (i, row) in out.chunks_exact(p_j).enumerate() {
                thetas[i * p_total + start..i * p_total + start + p_j].copy_from_slice(row);
            }
        }
        zs.iter()
            .enumerate()
            .map(|(i, z)| {
                Ok(DynamicsSample {
                    target_spec: self.target_spec.clone(),
                    theta: Tensor::new(
                        thetas[i * p_total..(i + 1) * p_total].to_vec(),
                        vec![p_total],
                    )?,
                    source_noise: z.clone(),
                })
            })
            .collect()
    }

    /// Draw `m` fresh samples; deterministic in the seed, ordered by draw.
    pub fn sample_ensemble(&self, m: usize, rng_seed: u64) -> Result<Vec<DynamicsSample<S>>> {
        let zs = sample_noise::<S>(m, self.noise_len(), rng_seed)?;
        self.generate_batch(&zs)
    }

    /// Same as [`Self::sample_ensemble`] but from a caller-owned stream.
    pub fn sample_ensemble_with<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<DynamicsSample<S>>> {
        if m == 0 {
            return Err(Error::InvalidArgument("ensemble size must be >= 1".into()));
        }
        let zs = sample_noise_with::<S, R>(rng, m, self.noise_len());
        self.generate_batch(&zs)
    }

    /// JSON checkpoint (bit-exact round trip for finite values).
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Flat binary checkpoint: a JSON header with the specs followed by the
    /// raw little-endian `eta` array.
    pub fn to_binary(&self) -> Result<Vec<u8>> {
        #[derive(Serialize)]
        struct Header<'a> {
            target_spec: &'a MlpSpec,
            noise_dim: usize,
            noise_sharing: NoiseSharing,
            gen_specs: &'a [MlpSpec],
            eta_len: usize,
            byte_width: usize,
        }
        let header = serde_json::to_vec(&Header {
            target_spec: &self.target_spec,
            noise_dim: self.noise_dim,
            noise_sharing: self.noise_sharing,
            gen_specs: &self.gen_specs,
            eta_len: self.eta.len(),
            byte_width: S::BYTE_WIDTH,
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + self.eta.len() * S::BYTE_WIDTH);
        out.extend_from_slice(b"SVGDGEN1");
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for &v in &self.eta {
            v.write_le_bytes(&mut out);
        }
        Ok(out)
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            target_spec: MlpSpec,
            noise_dim: usize,
            noise_sharing: NoiseSharing,
            gen_specs: Vec<MlpSpec>,
            eta_len: usize,
            byte_width: usize,
        }
        let fail = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 16 || &bytes[..8] != b"SVGDGEN1" {
            return Err(fail("bad magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize.checked_add(header_len).ok_or_else(|| fail("bad header length"))?;
        if bytes.len() < header_end {
            return Err(fail("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if header.byte_width != S::BYTE_WIDTH {
            return Err(fail("scalar width mismatch"));
        }
        let body = &bytes[header_end..];
        if body.len() != header.eta_len * S::BYTE_WIDTH {
            return Err(fail("truncated parameter block"));
        }
        let eta: Vec<S> = body.chunks_exact(S::BYTE_WIDTH).map(S::from_le_bytes).collect();
        Self::from_parts(
            header.target_spec,
            header.noise_dim,
            header.noise_sharing,
            header.gen_specs,
            eta,
        )
    }
}

/// Output of [`GeneratorBundle::generate_batch_traced`].
pub struct GeneratedBatch<S: Scalar> {
    /// `(m, target_param_count)` row-major.
    pub thetas: Vec<S>,
    traces: Vec<BatchTrace<S>>,
    gen_inputs: Vec<Vec<S>>,
}

impl<S: Scalar> GeneratedBatch<S> {
    #[inline]
    pub fn num_samples(&self) -> usize {
        self.traces[0].batch_size()
    }

    pub fn theta(&self, i: usize, p_total: usize) -> &[S] {
        &self.thetas[i * p_total..(i + 1) * p_total]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain_like_bundle(seed: u64) -> GeneratorBundle<f64> {
        let target = MlpSpec::new(vec![3, 5, 4, 2], Nonlinearity::Tanh).unwrap();
        let config = GeneratorConfig {
            noise_dim: 4,
            hidden_widths: vec![6, 6],
            ..GeneratorConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GeneratorBundle::init(target, &config, &mut rng).unwrap()
    }

    #[test]
    fn sample_noise_is_deterministic_in_seed() {
        let a = sample_noise::<f64>(3, 32, 99).unwrap();
        let b = sample_noise::<f64>(3, 32, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|z| z.len() == 32));
    }

    #[test]
    fn sample_noise_mean_is_near_zero() {
        let zs = sample_noise::<f64>(10_000, 4, 7).unwrap();
        for coord in 0..4 {
            let mean = zs.iter().map(|z| z[coord]).sum::<f64>() / zs.len() as f64;
            assert!(mean.abs() < 0.05, "coordinate {coord} mean {mean}");
        }
    }

    #[test]
    fn sample_noise_single_scalar() {
        let zs = sample_noise::<f64>(1, 1, 0).unwrap();
        assert_eq!(zs.len(), 1);
        assert_eq!(zs[0].len(), 1);
    }

    #[test]
    fn sample_noise_rejects_zero_count() {
        assert!(sample_noise::<f64>(0, 4, 0).is_err());
    }

    #[test]
    fn zero_generators_produce_zero_dynamics() {
        let target = MlpSpec::new(vec![2, 3, 1], Nonlinearity::Tanh).unwrap();
        let config = GeneratorConfig {
            noise_dim: 4,
            hidden_widths: vec![5],
            ..GeneratorConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bundle = GeneratorBundle::init(target, &config, &mut rng).unwrap();
        bundle.eta_mut().fill(0.0);
        let z = sample_noise::<f64>(1, bundle.noise_len(), 1).unwrap().remove(0);
        let sample = bundle.generate(&z).unwrap();
        assert!(sample.theta().iter().all(|&t| t == 0.0));
        let out = sample.predict(&[0.7, -0.3]).unwrap();
        assert!(out.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn generate_is_bit_deterministic() {
        let bundle = chain_like_bundle(5);
        let z = sample_noise::<f64>(1, bundle.noise_len(), 2).unwrap().remove(0);
        let a = bundle.generate(&z).unwrap();
        let b = bundle.generate(&z).unwrap();
        assert_eq!(a.theta(), b.theta());
    }

    #[test]
    fn batched_generation_is_bit_identical_to_single() {
        let bundle = chain_like_bundle(20);
        let zs = sample_noise::<f64>(5, bundle.noise_len(), 21).unwrap();
        let batched = bundle.generate_batch(&zs).unwrap();
        for (z, sample) in zs.iter().zip(&batched) {
            let single = bundle.generate(z).unwrap();
            assert_eq!(single.theta(), sample.theta());
        }
    }

    #[test]
    fn regenerating_from_source_noise_reproduces_theta() {
        let bundle = chain_like_bundle(6);
        let sample = bundle.sample_ensemble(1, 3).unwrap().remove(0);
        let again = bundle.generate(sample.source_noise()).unwrap();
        assert_eq!(sample.theta(), again.theta());
    }

    #[test]
    fn shared_noise_couples_all_target_layers() {
        let bundle = chain_like_bundle(7);
        assert_eq!(bundle.noise_sharing(), NoiseSharing::Shared);
        let z = sample_noise::<f64>(1, bundle.noise_len(), 4).unwrap().remove(0);
        let base = bundle.generate(&z).unwrap();
        let mut z2 = z.clone();
        z2[0] += 0.5;
        let perturbed = bundle.generate(&z2).unwrap();
        for j in 0..bundle.target_spec().num_layers() {
            let delta: f64 = base
                .theta_layer(j)
                .iter()
                .zip(perturbed.theta_layer(j))
                .map(|(a, b)| (a - b).abs())
                .sum();
            assert!(delta > 0.0, "layer {j} did not respond to shared noise");
        }
    }

    #[test]
    fn independent_mode_uses_per_generator_slices() {
        let target = MlpSpec::new(vec![2, 3, 1], Nonlinearity::Tanh).unwrap();
        let config = GeneratorConfig {
            noise_dim: 4,
            hidden_widths: vec![5],
            noise_sharing: NoiseSharing::Independent,
            ..GeneratorConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bundle = GeneratorBundle::init(target, &config, &mut rng).unwrap();
        assert_eq!(bundle.noise_len(), 8);
        let z = sample_noise::<f64>(1, 8, 9).unwrap().remove(0);
        let base = bundle.generate(&z).unwrap();
        // Perturbing the second slice must leave the first layer untouched.
        let mut z2 = z.clone();
        z2[5] += 0.5;
        let perturbed = bundle.generate(&z2).unwrap();
        assert_eq!(base.theta_layer(0), perturbed.theta_layer(0));
        assert_ne!(base.theta_layer(1), perturbed.theta_layer(1));
    }

    #[test]
    fn ensemble_samples_are_pairwise_distinct() {
        let bundle = chain_like_bundle(8);
        let samples = bundle.sample_ensemble(5, 11).unwrap();
        assert_eq!(samples.len(), 5);
        for i in 0..samples.len() {
            for j in (i + 1)..samples.len() {
                let dist: f64 = samples[i]
                    .theta()
                    .iter()
                    .zip(samples[j].theta())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert!(dist > 0.0, "samples {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn singleton_ensemble() {
        let bundle = chain_like_bundle(9);
        let samples = bundle.sample_ensemble(1, 0).unwrap();
        assert_eq!(samples.len(), 1);
    }

    #[test]
    fn supplement_scale_ensemble_shapes() {
        // m = 32 samples from z ~ N(0^32, 1^32).
        let target = MlpSpec::new(vec![4, 8, 2], Nonlinearity::Relu).unwrap();
        let config = GeneratorConfig::default();
        assert_eq!(config.noise_dim, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bundle = GeneratorBundle::<f64>::init(target.clone(), &config, &mut rng).unwrap();
        let samples = bundle.sample_ensemble(32, 1).unwrap();
        assert_eq!(samples.len(), 32);
        for s in &samples {
            assert_eq!(s.theta().len(), target.param_count());
            assert_eq!(s.source_noise().len(), 32);
        }
    }

    #[test]
    fn layer_shapes_conform_to_target() {
        let bundle = chain_like_bundle(10);
        let sample = bundle.sample_ensemble(1, 5).unwrap().remove(0);
        for j in 0..bundle.target_spec().num_layers() {
            let (fan_in, fan_out) = bundle.target_spec().layer_dims(j);
            assert_eq!(sample.theta_layer(j).len(), fan_in * fan_out + fan_out);
            let (gspec, _) = bundle.layer_generator(j);
            assert_eq!(gspec.input_dim(), bundle.noise_dim());
            assert_eq!(gspec.output_dim(), fan_in * fan_out + fan_out);
        }
    }

    #[test]
    fn noise_dimension_mismatch_is_rejected() {
        let bundle = chain_like_bundle(11);
        let z = vec![0.0; bundle.noise_len() + 1];
        assert!(bundle.generate(&z).is_err());
    }

    #[test]
    fn eta_gradient_matches_finite_differences() {
        let target = MlpSpec::new(vec![2, 3, 2], Nonlinearity::Tanh).unwrap();
        let config = GeneratorConfig {
            noise_dim: 3,
            hidden_widths: vec![4],
            output_scale: 1.0,
            ..GeneratorConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bundle = GeneratorBundle::init(target, &config, &mut rng).unwrap();
        let zs = sample_noise::<f64>(2, bundle.noise_len(), 6).unwrap();
        // Scalar objective: sum_i <theta_i, w_i> for fixed pseudo-random w.
        let p_total = bundle.target_spec().param_count();
        let w: Vec<f64> = (0..2 * p_total)
            .map(|k| ((k * 2654435761) % 97) as f64 / 97.0 - 0.5)
            .collect();

        let batch = bundle.generate_batch_traced(&zs).unwrap();
        let mut grad = vec![0.0; bundle.eta_len()];
        bundle.backprop_theta_grads(&batch, &w, &mut grad).unwrap();

        let objective = |b: &GeneratorBundle<f64>| -> f64 {
            let batch = b.generate_batch_traced(&zs).unwrap();
            batch.thetas.iter().zip(&w).map(|(t, wi)| t * wi).sum()
        };
        let h = 1e-6;
        let mut max_rel: f64 = 0.0;
        for k in 0..bundle.eta_len() {
            let orig = bundle.eta()[k];
            bundle.eta_mut()[k] = orig + h;
            let plus = objective(&bundle);
            bundle.eta_mut()[k] = orig - h;
            let minus = objective(&bundle);
            bundle.eta_mut()[k] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-3);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn shared_noise_map_is_locally_lipschitz() {
        let bundle = chain_like_bundle(12);
        let z = sample_noise::<f64>(1, bundle.noise_len(), 13).unwrap().remove(0);
        let base = bundle.generate(&z).unwrap();
        // Frobenius bound on the local Jacobian from finite differences.
        let h = 1e-4;
        let mut frob_sq = 0.0;
        for k in 0..z.len() {
            let mut zp = z.clone();
            zp[k] += h;
            let sp = bundle.generate(&zp).unwrap();
            for (a, b) in sp.theta().iter().zip(base.theta()) {
                let col = (a - b) / h;
                frob_sq += col * col;
            }
        }
        let lipschitz = frob_sq.sqrt() + 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let delta: Vec<f64> = (0..z.len()).map(|_| 1e-6 * rng.gen_range(-1.0..1.0f64)).collect();
        let z2: Vec<f64> = z.iter().zip(&delta).map(|(a, d)| a + d).collect();
        let moved = bundle.generate(&z2).unwrap();
        let dist: f64 = moved
            .theta()
            .iter()
            .zip(base.theta())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let delta_norm: f64 = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        assert!(
            dist <= lipschitz * delta_norm * 1.01,
            "dist {dist} exceeds Lipschitz bound {}",
            lipschitz * delta_norm
        );
    }

    #[test]
    fn json_and_binary_checkpoints_round_trip_bit_exact() {
        let bundle = chain_like_bundle(15);
        let json = bundle.to_json().unwrap();
        let restored = GeneratorBundle::<f64>::from_json(&json).unwrap();
        assert_eq!(bundle, restored);

        let bin = bundle.to_binary().unwrap();
        let restored = GeneratorBundle::<f64>::from_binary(&bin).unwrap();
        assert_eq!(bundle, restored);

        // A different scalar width must be rejected, not reinterpreted.
        assert!(GeneratorBundle::<f32>::from_binary(&bin).is_err());
    }
}
