//! Adaptive sensing control with gradient-norm importance resampling.
//!
//! A device starts from `b_min` fresh samples and keeps acquiring one sample
//! at a time while the variance reduction it could obtain by resampling the
//! current batch up to `b_max` stays below an adaptive threshold `theta_bar`.
//! The batch is then resampled with probabilities proportional to the
//! per-sample gradient norms, and each drawn gradient carries the correction
//! `(1/b) / q_i` so the weighted mean stays an unbiased estimate of the plain
//! mean of the `b` acquired gradients.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use crate::batch::GradientBatch;
use crate::dataset::SampleStream;
use crate::error::{Error, Result};
use crate::nn::{self, Model};

/// Unbiased sample variance (denominator `n - 1`).
pub fn sample_variance(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid(format!("sample variance needs at least 2 values, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    Ok(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
}

/// Sampling distribution `q_i ∝ norm_i`. All-zero norms fall back to uniform.
pub fn importance_weights(norms: &[f64]) -> Result<Vec<f64>> {
    if norms.is_empty() {
        return Err(Error::invalid("importance weights of an empty batch"));
    }
    if norms.iter().any(|n| !n.is_finite() || *n < 0.0) {
        return Err(Error::invalid("gradient norms must be finite and nonnegative"));
    }
    let total: f64 = norms.iter().sum();
    if total == 0.0 {
        let u = 1.0 / norms.len() as f64;
        return Ok(vec![u; norms.len()]);
    }
    Ok(norms.iter().map(|n| n / total).collect())
}

/// Draw `b_bar` rows i.i.d. from `q ∝ ‖g_i‖` with replacement and attach the
/// correction `(1/b) / q_i` to each drawn row.
pub fn resample_to<R: Rng + ?Sized>(batch: &GradientBatch, b_bar: usize, rng: &mut R) -> Result<GradientBatch> {
    if batch.is_upsampled() {
        return Err(Error::invalid("batch has already been resampled"));
    }
    if batch.is_empty() || b_bar == 0 {
        return Err(Error::invalid("resampling needs a nonempty batch and b_bar >= 1"));
    }
    let q = importance_weights(batch.norms())?;
    let b = batch.len() as f64;
    let picker = WeightedIndex::new(&q).map_err(|e| Error::invalid(format!("degenerate sampling distribution: {e}")))?;
    let dim = batch.dim();
    let mut grads = Vec::with_capacity(b_bar * dim);
    let mut norms = Vec::with_capacity(b_bar);
    let mut weights = Vec::with_capacity(b_bar);
    for _ in 0..b_bar {
        let i = picker.sample(rng);
        grads.extend_from_slice(batch.grad(i));
        norms.push(batch.norms()[i]);
        weights.push(correction(b, q[i]));
    }
    Ok(GradientBatch::resampled(dim, grads, norms, weights, batch.raw_count()))
}

/// `p_i / q_i` with the uniform original distribution `p_i = 1/b`.
fn correction(b: f64, q: f64) -> f64 {
    let w = 1.0 / (b * q);
    // Uniform q gives exactly 1; keep it bit-exact for the plain-mean path.
    if (w - 1.0).abs() < 4.0 * f64::EPSILON {
        1.0
    } else {
        w
    }
}

/// Predicted variance reduction after upsampling a batch of `b` norms to
/// `b_bar`: `(b / b_bar) · S(norms)`.
pub fn expected_variance_reduction(norms: &[f64], b_bar: usize) -> Result<f64> {
    if b_bar == 0 {
        return Err(Error::invalid("b_bar must be positive"));
    }
    let b = norms.len();
    Ok(b as f64 / b_bar as f64 * sample_variance(norms)?)
}

/// Exact reduction in the variance of a single-draw gradient estimator when
/// draws follow `q` instead of the uniform distribution, scaled by `b / b_bar`.
///
/// Computed from the gradient vectors themselves, not from the norms, so it is
/// an independent route to the bound [`expected_variance_reduction`].
pub fn realized_variance_reduction(batch: &GradientBatch, q: &[f64], b_bar: usize) -> Result<f64> {
    let b = batch.len();
    if q.len() != b {
        return Err(Error::DimensionMismatch {
            context: "sampling distribution",
            expected: b,
            got: q.len(),
        });
    }
    if b == 0 || b_bar == 0 {
        return Err(Error::invalid("empty batch or b_bar"));
    }
    let bf = b as f64;
    let mean = batch.mean();
    let mean_sq: f64 = mean.iter().map(|m| m * m).sum();
    let mut second_uniform = 0.0;
    let mut second_q = 0.0;
    for (row, &qi) in batch.rows().zip(q) {
        let sq: f64 = row.iter().map(|g| g * g).sum();
        second_uniform += sq / bf;
        if sq > 0.0 {
            if qi <= 0.0 {
                return Err(Error::invalid("q must be positive wherever the gradient is nonzero"));
            }
            second_q += sq / (bf * bf * qi);
        }
    }
    let var_uniform = second_uniform - mean_sq;
    let var_q = second_q - mean_sq;
    Ok(bf / b_bar as f64 * (var_uniform - var_q))
}

/// Second and fourth central moments of the gradient-norm distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub mu2: f64,
    pub mu4: f64,
}

impl MomentEstimate {
    pub fn new(mu2: f64, mu4: f64) -> Result<Self> {
        if !(mu2 >= 0.0) || !(mu4 >= mu2 * mu2) || !mu4.is_finite() {
            return Err(Error::invalid("moments must satisfy mu2 >= 0 and mu4 >= mu2^2"));
        }
        Ok(Self { mu2, mu4 })
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("moments of an empty sample"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mu2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mu4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        Self::new(mu2, mu4.max(mu2 * mu2))
    }
}

/// Closed-form mean and variance of the upsampled variance reduction.
pub fn moment_prediction(est: MomentEstimate, b: usize, b_bar: usize) -> Result<(f64, f64)> {
    if b < 2 || b_bar == 0 {
        return Err(Error::invalid("moment prediction needs b >= 2 and b_bar >= 1"));
    }
    let (b, bb) = (b as f64, b_bar as f64);
    let mean = (b - 1.0) / bb * est.mu2;
    let var = est.mu4 / bb - (b - 3.0) * est.mu2 * est.mu2 / ((b - 1.0) * bb);
    Ok((mean, var))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingControllerState {
    pub theta_bar: f64,
    pub alpha: f64,
    pub b_min: usize,
    pub b_max: usize,
}

impl SensingControllerState {
    pub fn new(theta_bar: f64, alpha: f64, b_min: usize, b_max: usize) -> Result<Self> {
        let s = Self {
            theta_bar,
            alpha,
            b_min,
            b_max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b_min == 0 || self.b_min > self.b_max {
            return Err(Error::invalid(format!(
                "need 1 <= b_min <= b_max, got b_min={} b_max={}",
                self.b_min, self.b_max
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha must lie in [0, 1]"));
        }
        if !(self.theta_bar >= 0.0) {
            return Err(Error::invalid("theta_bar must be nonnegative"));
        }
        Ok(())
    }
}

/// Source of one fresh per-sample gradient at a time.
pub trait Acquire {
    fn dim(&self) -> usize;
    fn acquire(&mut self) -> Result<Vec<f64>>;
}

/// Acquires real samples from a stream and differentiates them.
pub struct LiveAcquirer<'a> {
    model: &'a Model,
    stream: &'a mut SampleStream,
    buf: Vec<f64>,
}

impl<'a> LiveAcquirer<'a> {
    pub fn new(model: &'a Model, stream: &'a mut SampleStream) -> Self {
        Self {
            buf: vec![0.0; model.dim()],
            model,
            stream,
        }
    }
}

impl Acquire for LiveAcquirer<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn acquire(&mut self) -> Result<Vec<f64>> {
        let sample = self.stream.draw_one()?;
        Ok(nn::sample_gradient(self.model, &sample, &mut self.buf)?.to_vec())
    }
}

/// Running mean and variance of the norms seen so far.
#[derive(Debug, Default, Clone, Copy)]
struct RunningVariance {
    n: usize,
    mean: f64,
    m2: f64,
}

impl RunningVariance {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Sample variance; zero until two values have been seen.
    fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Collected {
    pub batch: GradientBatch,
    pub state: SensingControllerState,
    /// Sample variance of the acquired norms at the stopping point.
    pub theta: f64,
}

/// Acquire adaptively, then resample to `b_max`.
///
/// Acquisition continues while `b < b_max` and `b·θ/b_max < θ̄`.
pub fn adaptive_collect<A: Acquire + ?Sized, R: Rng + ?Sized>(
    acq: &mut A,
    state: SensingControllerState,
    rng: &mut R,
) -> Result<Collected> {
    state.validate()?;
    let mut batch = GradientBatch::empty(acq.dim());
    let mut stats = RunningVariance::default();
    for _ in 0..state.b_min {
        batch.push(&acq.acquire()?)?;
        stats.push(*batch.norms().last().expect("just pushed"));
    }
    let mut theta = stats.variance();
    let bb = state.b_max as f64;
    while batch.len() < state.b_max && (batch.len() as f64 * theta / bb) < state.theta_bar {
        batch.push(&acq.acquire()?)?;
        stats.push(*batch.norms().last().expect("just pushed"));
        theta = stats.variance();
    }
    let batch = resample_to(&batch, state.b_max, rng)?;
    let next = SensingControllerState {
        theta_bar: state.alpha * theta + (1.0 - state.alpha) * state.theta_bar,
        ..state
    };
    Ok(Collected {
        batch,
        state: next,
        theta,
    })
}

/// Baseline sensing: exactly `b` samples, no resampling.
pub fn fixed_collect<A: Acquire + ?Sized>(acq: &mut A, b: usize) -> Result<GradientBatch> {
    if b == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut batch = GradientBatch::empty(acq.dim());
    for _ in 0..b {
        batch.push(&acq.acquire()?)?;
    }
    Ok(batch)
}
