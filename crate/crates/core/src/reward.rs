//! Linear Bradley-Terry reward model over feature comparisons.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{self, Real};
use crate::types::{feature_comparison, FeatureVector, PreferenceDataset, PreferenceExample};

/// Linear reward `r(x, y) = θ · φ(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardParams<T> {
    pub theta: FeatureVector<T>,
}

impl<T: Real> RewardParams<T> {
    pub fn new(theta: FeatureVector<T>) -> Self {
        Self { theta }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(FeatureVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }

    pub fn score(&self, phi: &[T]) -> T {
        scalar::dot(&self.theta, phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredComparison<T> {
    pub example_id: usize,
    pub margin: T,
    pub probability: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zeros,
    Seeded(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    pub l2_coeff: f64,
    pub grad_tolerance: f64,
    pub init: Init,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            max_steps: 2000,
            l2_coeff: 1e-4,
            grad_tolerance: 1e-8,
            init: Init::Zeros,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.max_steps > 0
            && self.l2_coeff >= 0.0
            && self.grad_tolerance > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("train config out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Reward of one feature vector.
pub fn reward<T: Real>(params: &RewardParams<T>, phi: &FeatureVector<T>) -> Result<T> {
    phi.check_dim(params.dim())?;
    Ok(params.score(phi))
}

pub fn bt_probability<T: Real>(params: &RewardParams<T>, example: &PreferenceExample<T>) -> Result<ScoredComparison<T>> {
    example.phi_w.check_dim(params.dim())?;
    let margin = params.score(&feature_comparison(example));
    Ok(ScoredComparison {
        example_id: example.id,
        margin,
        probability: scalar::sigmoid(margin),
    })
}

fn check_data<T: Real>(params: &RewardParams<T>, data: &PreferenceDataset<T>) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: data.dim(),
        });
    }
    Ok(())
}

/// Mean log-likelihood over precomputed comparisons, stable log-sigmoid form.
pub(crate) fn mean_log_likelihood<T: Real>(theta: &[T], comparisons: &[FeatureVector<T>]) -> T {
    let total: T = comparisons
        .iter()
        .map(|c| scalar::log_sigmoid(scalar::dot(theta, c)))
        .sum();
    total / T::from_usize_lossy(comparisons.len())
}

/// Mean of `(1 - σ(u_i)) Δφ_i`.
pub(crate) fn mean_gradient<T: Real>(theta: &[T], comparisons: &[FeatureVector<T>]) -> Vec<T> {
    let mut grad = vec![T::zero(); theta.len()];
    for c in comparisons {
        let weight = T::one() - scalar::sigmoid(scalar::dot(theta, c));
        scalar::axpy(weight, c, &mut grad);
    }
    let n = T::from_usize_lossy(comparisons.len());
    grad.iter_mut().for_each(|g| *g /= n);
    grad
}

/// `(1/N) Σ log σ(θ·Δφ_i)`.
pub fn log_likelihood<T: Real>(params: &RewardParams<T>, data: &PreferenceDataset<T>) -> Result<T> {
    check_data(params, data)?;
    Ok(mean_log_likelihood(&params.theta, &data.comparisons()))
}

/// `(1/N) Σ [u_i - log(e^{u_i} + 1)]`; the softplus keeps large positive margins finite.
pub fn reformulated_log_likelihood<T: Real>(params: &RewardParams<T>, data: &PreferenceDataset<T>) -> Result<T> {
    check_data(params, data)?;
    let total: T = data
        .comparisons()
        .iter()
        .map(|c| {
            let u = params.score(c);
            u - scalar::softplus(u)
        })
        .sum();
    Ok(total / T::from_usize_lossy(data.len()))
}

/// Per-example term of the reformulated likelihood.
pub fn reformulated_term<T: Real>(u: T) -> T {
    u - scalar::softplus(u)
}

/// Gradient of the unregularized mean log-likelihood.
pub fn log_likelihood_gradient<T: Real>(params: &RewardParams<T>, data: &PreferenceDataset<T>) -> Result<FeatureVector<T>> {
    check_data(params, data)?;
    Ok(FeatureVector::from_vec_unchecked(mean_gradient(
        &params.theta,
        &data.comparisons(),
    )))
}

/// Gradient of `L(θ) - l2 ‖θ‖²`.
pub fn regularized_gradient<T: Real>(
    params: &RewardParams<T>,
    data: &PreferenceDataset<T>,
    l2_coeff: T,
) -> Result<FeatureVector<T>> {
    let mut g = log_likelihood_gradient(params, data)?.into_vec();
    scalar::axpy(-(T::lit(2.0) * l2_coeff), &params.theta, &mut g);
    Ok(FeatureVector::from_vec_unchecked(g))
}

fn regularized_objective<T: Real>(theta: &[T], comparisons: &[FeatureVector<T>], l2: T) -> T {
    mean_log_likelihood(theta, comparisons) - l2 * scalar::norm_sq(theta)
}

/// Outcome of [`train_reward_traced`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary<T> {
    pub params: RewardParams<T>,
    pub steps: usize,
    pub objective: T,
    pub log_likelihood: T,
    pub grad_norm: T,
    /// Regularized objective after each accepted step, starting with the initial value.
    pub objective_trace: Vec<T>,
}

fn initial_theta<T: Real>(dim: usize, init: Init) -> Vec<T> {
    match init {
        Init::Zeros => vec![T::zero(); dim],
        Init::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 0.01).expect("valid normal");
            (0..dim).map(|_| T::lit(normal.sample(&mut rng))).collect()
        }
    }
}

/// Full-batch gradient ascent on the regularized log-likelihood.
pub fn train_reward<T: Real>(data: &PreferenceDataset<T>, config: &TrainConfig) -> Result<RewardParams<T>> {
    Ok(train_reward_traced(data, config)?.params)
}

/// [`train_reward`] with the objective trace kept.
///
/// A trial step that lowers the objective is retried at half the step size; the step
/// size doubles back toward the configured rate after each accepted step.
pub fn train_reward_traced<T: Real>(data: &PreferenceDataset<T>, config: &TrainConfig) -> Result<TrainSummary<T>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let comparisons = data.comparisons();
    let l2 = T::lit(config.l2_coeff);
    let base_rate = T::lit(config.learning_rate);
    let mut theta = initial_theta::<T>(data.dim(), config.init);
    let mut objective = regularized_objective(&theta, &comparisons, l2);
    if !objective.is_finite() {
        return Err(Error::NonFinite("initial reward objective".into()));
    }
    let mut trace = vec![objective];
    let mut rate = base_rate;
    let mut steps = 0;
    let mut grad_norm;
    loop {
        let mut grad = mean_gradient(&theta, &comparisons);
        scalar::axpy(-(T::lit(2.0) * l2), &theta, &mut grad);
        grad_norm = scalar::norm(&grad);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite("reward gradient".into()));
        }
        if steps >= config.max_steps || grad_norm <= T::lit(config.grad_tolerance) {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = theta.clone();
            scalar::axpy(rate, &grad, &mut trial);
            let value = regularized_objective(&trial, &comparisons, l2);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "reward objective at step {steps} (learning rate too large?)"
                )));
            }
            if value >= objective {
                theta = trial;
                objective = value;
                accepted = true;
                break;
            }
            rate = rate / T::lit(2.0);
        }
        if !accepted {
            break;
        }
        steps += 1;
        trace.push(objective);
        rate = (rate * T::lit(2.0)).min(base_rate);
    }
    let ll = mean_log_likelihood(&theta, &comparisons);
    Ok(TrainSummary {
        params: RewardParams::new(FeatureVector::from_vec_unchecked(theta)),
        steps,
        objective,
        log_likelihood: ll,
        grad_norm,
        objective_trace: trace,
    })
}
