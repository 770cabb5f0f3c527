//! Intrinsic rewards for pure exploration.
//!
//! The headline signal is the population variance of next-state predictions
//! across sampled dynamics networks — epistemic uncertainty read off the
//! posterior samples. Two baselines share the interface: *disagreement*
//! (the same variance over a fixed ensemble) and an ICM-style prediction
//! error against the observed next state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergen::{DynamicsSample, GeneratorBundle};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Predictive variance over fresh generator samples.
    PosteriorVariance,
    /// The same variance over a fixed ensemble.
    EnsembleDisagreement,
    /// Squared error between prediction and the observed next state.
    PredictionError,
    /// Always zero (ablation).
    None,
}

/// Which intrinsic reward to compute and with how many model samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    /// Model samples per evaluation; >= 2 for variance rewards.
    pub sample_count: usize,
    /// Divide rewards by a running standard deviation estimate.
    pub normalize: bool,
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            RewardKind::PosteriorVariance | RewardKind::EnsembleDisagreement => {
                if self.sample_count < 2 {
                    return Err(Error::InvalidArgument(
                        "variance rewards need at least 2 model samples".into(),
                    ));
                }
            }
            RewardKind::PredictionError => {
                if self.sample_count < 1 {
                    return Err(Error::InvalidArgument(
                        "prediction error needs at least 1 model".into(),
                    ));
                }
            }
            RewardKind::None => {}
        }
        Ok(())
    }
}

/// Population variance of `m` prediction rows around their mean, summed over
/// state dimensions:
///
/// `r = (1/m) sum_i || p_i - (1/m) sum_l p_l ||^2`
pub fn variance_reward<S: Scalar>(predictions: &[S], m: usize, s: usize) -> Result<S> {
    if m < 2 {
        return Err(Error::InvalidArgument("variance needs at least 2 predictions".into()));
    }
    if predictions.len() != m * s {
        return Err(Error::DimensionMismatch(format!(
            "predictions length {} != {m} x {s}",
            predictions.len()
        )));
    }
    // Center on the first row before averaging. Mathematically a no-op
    // (variance is translation invariant); numerically it makes identical
    // rows give exactly zero.
    let inv_m = S::one() / S::from_usize(m);
    let first = &predictions[..s];
    let mut mean = vec![S::zero(); s];
    for row in predictions.chunks_exact(s) {
        for ((acc, &v), &f) in mean.iter_mut().zip(row).zip(first) {
            *acc += v - f;
        }
    }
    for v in mean.iter_mut() {
        *v = *v * inv_m;
    }
    let mut total = S::zero();
    for row in predictions.chunks_exact(s) {
        for ((&v, &mu), &f) in row.iter().zip(&mean).zip(first) {
            let d = (v - f) - mu;
            total += d * d;
        }
    }
    Ok(total * inv_m)
}

/// Squared L2 error between a prediction and the observed next state.
pub fn prediction_error_reward<S: Scalar>(prediction: &[S], observed_next: &[S]) -> Result<S> {
    if prediction.len() != observed_next.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction length {} != observed length {}",
            prediction.len(),
            observed_next.len()
        )));
    }
    Ok(prediction
        .iter()
        .zip(observed_next)
        .map(|(&p, &o)| (p - o) * (p - o))
        .sum())
}

/// Where the models for a reward evaluation come from. `Generator` resamples
/// fresh networks on every call, which is the semantic difference between
/// the posterior-variance reward and a fixed-ensemble disagreement.
pub enum ModelSet<'a, S: Scalar> {
    Fixed(&'a [DynamicsSample<S>]),
    Generator { bundle: &'a GeneratorBundle<S>, count: usize },
}

impl<'a, S: Scalar> ModelSet<'a, S> {
    fn predictions<R: Rng + ?Sized>(&self, input: &[S], count: usize, rng: &mut R) -> Result<(Vec<S>, usize)> {
        match self {
            ModelSet::Fixed(samples) => {
                if samples.is_empty() {
                    return Err(Error::InvalidArgument("empty model set".into()));
                }
                let take = samples.len().min(count.max(1));
                let s = samples[0].target_spec().output_dim();
                let mut out = Vec::with_capacity(take * s);
                for sample in &samples[..take] {
                    out.extend(sample.predict(input)?);
                }
                Ok((out, take))
            }
            ModelSet::Generator { bundle, count: m } => {
                let take = (*m).min(count.max(1)).max(1);
                let samples = bundle.sample_ensemble_with(take, rng)?;
                let s = bundle.target_spec().output_dim();
                let mut out = Vec::with_capacity(take * s);
                for sample in &samples {
                    out.extend(sample.predict(input)?);
                }
                Ok((out, take))
            }
        }
    }
}

/// Dispatch the configured intrinsic reward for one `(s, a)` query.
///
/// `observed_next` is required only for the prediction-error reward; the
/// prediction compared against it is the mean over the model set.
pub fn reward_for_transition<S: Scalar, R: Rng + ?Sized>(
    models: &ModelSet<'_, S>,
    spec: &RewardSpec,
    model_input: &[S],
    observed_next: Option<&[S]>,
    rng: &mut R,
) -> Result<S> {
    spec.validate()?;
    match spec.kind {
        RewardKind::None => Ok(S::zero()),
        RewardKind::PosteriorVariance | RewardKind::EnsembleDisagreement => {
            let (preds, m) = models.predictions(model_input, spec.sample_count, rng)?;
            let s = preds.len() / m;
            variance_reward(&preds, m, s)
        }
        RewardKind::PredictionError => {
            let observed = observed_next.ok_or_else(|| {
                Error::InvalidArgument("prediction_error requires observed_next".into())
            })?;
            let (preds, m) = models.predictions(model_input, spec.sample_count, rng)?;
            let s = preds.len() / m;
            let inv_m = S::one() / S::from_usize(m);
            let mut mean = vec![S::zero(); s];
            for row in preds.chunks_exact(s) {
                for (acc, &v) in mean.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            for v in mean.iter_mut() {
                *v = *v * inv_m;
            }
            prediction_error_reward(&mean, observed)
        }
    }
}

/// Running standard-deviation normalizer (Welford). Division only — rewards
/// stay nonnegative.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RewardNormalizer<S: Scalar> {
    count: u64,
    mean: S,
    m2: S,
}

impl<S: Scalar> Default for RewardNormalizer<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> RewardNormalizer<S> {
    pub fn new() -> Self {
        Self {
            count: 0,
            mean: S::zero(),
            m2: S::zero(),
        }
    }

    pub fn std(&self) -> S {
        if self.count < 2 {
            return S::zero();
        }
        (self.m2 / S::from_f64((self.count - 1) as f64)).sqrt()
    }

    /// Update the running moments and return the normalized value.
    pub fn normalize(&mut self, value: S) -> S {
        self.count += 1;
        let delta = value - self.mean;
        self.mean = self.mean + delta / S::from_f64(self.count as f64);
        self.m2 = self.m2 + delta * (value - self.mean);
        let std = self.std();
        if std > S::from_f64(1e-12) {
            value / std
        } else {
            value
        }
    }
}
