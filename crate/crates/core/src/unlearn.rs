//! Negative-gradient unlearning of an explanation set from the reward model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{mean_gradient, mean_log_likelihood, RewardParams};
use crate::scalar::{self, Real};
use crate::types::{FeatureVector, PreferenceDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnConfig {
    /// Step size α. `None` picks [`stable_learning_rate`] for the subset being unlearned.
    pub learning_rate: Option<f64>,
    pub max_steps: usize,
    /// Stop once the unlearn-set mean log-likelihood is at or below this.
    pub target_likelihood: f64,
    /// Stop if the retained-set mean log-likelihood drops below this.
    pub guard_set_floor: Option<f64>,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            learning_rate: None,
            max_steps: 500,
            target_likelihood: 0.5f64.ln(),
            guard_set_floor: None,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = self.learning_rate.map_or(true, |a| a >= 0.0 && a.is_finite());
        if !rate_ok || self.max_steps == 0 || self.target_likelihood.is_nan() {
            return Err(Error::InvalidConfig(format!("unlearn config out of range: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    MaxSteps,
    GuardTripped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlearnStep<T> {
    pub step: usize,
    pub unlearn_log_likelihood: T,
    pub retained_log_likelihood: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnTrace<T> {
    /// Step 0 records the starting parameters.
    pub steps: Vec<UnlearnStep<T>>,
    pub final_params: RewardParams<T>,
    pub learning_rate: T,
    pub stop_reason: StopReason,
}

/// `4 / λ̄`, where `λ̄` bounds the largest eigenvalue of `(1/n) Σ Δφ Δφᵀ` by its
/// largest absolute row sum. The mean log-likelihood Hessian is bounded by `λ̄ / 4`,
/// so this step never increases the likelihood.
pub fn stable_learning_rate<T: Real>(subset: &PreferenceDataset<T>) -> T {
    let comparisons = subset.comparisons();
    let d = subset.dim();
    let n = T::from_usize_lossy(comparisons.len().max(1));
    let mut second = vec![T::zero(); d * d];
    for c in &comparisons {
        for i in 0..d {
            for j in 0..d {
                second[i * d + j] += c[i] * c[j];
            }
        }
    }
    let bound = (0..d)
        .map(|i| (0..d).map(|j| second[i * d + j].abs()).sum::<T>() / n)
        .fold(T::zero(), T::max);
    if bound > T::zero() {
        T::lit(4.0) / bound
    } else {
        T::one()
    }
}

/// Iterates `θ ← θ − α ∇L(θ, subset)` from `theta0`, with `L` the mean log-likelihood.
pub fn unlearn_reward<T: Real>(
    theta0: &RewardParams<T>,
    unlearn_subset: &PreferenceDataset<T>,
    config: &UnlearnConfig,
    retained: Option<&PreferenceDataset<T>>,
) -> Result<UnlearnTrace<T>> {
    config.validate()?;
    if unlearn_subset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if unlearn_subset.dim() != theta0.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta0.dim(),
            found: unlearn_subset.dim(),
        });
    }
    let forget = unlearn_subset.comparisons();
    let keep = retained.map(|r| r.comparisons());
    let alpha = config
        .learning_rate
        .map(T::lit)
        .unwrap_or_else(|| stable_learning_rate(unlearn_subset));
    let target = T::lit(config.target_likelihood);
    let floor = config.guard_set_floor.map(T::lit);

    let record = |step: usize, theta: &[T]| UnlearnStep {
        step,
        unlearn_log_likelihood: mean_log_likelihood(theta, &forget),
        retained_log_likelihood: keep.as_ref().map(|k| mean_log_likelihood(theta, k)),
    };

    let mut theta = theta0.theta.as_slice().to_vec();
    let mut steps = vec![record(0, &theta)];
    let mut stop_reason = StopReason::MaxSteps;
    for step in 1..=config.max_steps {
        let grad = mean_gradient(&theta, &forget);
        scalar::axpy(-alpha, &grad, &mut theta);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("unlearned parameters at step {step}")));
        }
        let entry = record(step, &theta);
        steps.push(entry);
        if entry.unlearn_log_likelihood <= target {
            stop_reason = StopReason::TargetReached;
            break;
        }
        if let (Some(floor), Some(ll)) = (floor, entry.retained_log_likelihood) {
            if ll < floor {
                stop_reason = StopReason::GuardTripped;
                break;
            }
        }
    }
    Ok(UnlearnTrace {
        steps,
        final_params: RewardParams::new(FeatureVector::new(theta)?),
        learning_rate: alpha,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(points: &[&[f64]]) -> PreferenceDataset<f64> {
        PreferenceDataset::from_comparisons(points.iter().map(|p| FeatureVector::new(p.to_vec()).unwrap()).collect())
            .unwrap()
    }

    #[test]
    fn one_step_hand_example() {
        let theta0 = RewardParams::new(FeatureVector::new(vec![0.0]).unwrap());
        let cfg = UnlearnConfig {
            learning_rate: Some(1.0),
            max_steps: 1,
            ..UnlearnConfig::default()
        };
        let trace = unlearn_reward(&theta0, &data(&[&[1.0]]), &cfg, None).unwrap();
        assert_eq!(trace.final_params.theta.as_slice(), &[-0.5]);
        assert_eq!(trace.steps.len(), 2);
    }

    #[test]
    fn zero_rate_is_identity() {
        let theta0 = RewardParams::new(FeatureVector::new(vec![0.3, -1.2]).unwrap());
        let cfg = UnlearnConfig {
            learning_rate: Some(0.0),
            max_steps: 5,
            ..UnlearnConfig::default()
        };
        let trace = unlearn_reward(&theta0, &data(&[&[1.0, 2.0]]), &cfg, None).unwrap();
        assert_eq!(trace.final_params, theta0);
    }

    #[test]
    fn guard_trips() {
        let theta0 = RewardParams::new(FeatureVector::new(vec![2.0]).unwrap());
        let cfg = UnlearnConfig {
            learning_rate: Some(1.0),
            max_steps: 100,
            target_likelihood: f64::NEG_INFINITY,
            guard_set_floor: Some(-0.3),
        };
        let keep = data(&[&[1.0]]);
        let trace = unlearn_reward(&theta0, &data(&[&[1.0]]), &cfg, Some(&keep)).unwrap();
        assert_eq!(trace.stop_reason, StopReason::GuardTripped);
    }

    #[test]
    fn empty_and_mismatch_rejected() {
        let theta0 = RewardParams::new(FeatureVector::new(vec![0.0, 0.0]).unwrap());
        assert!(matches!(
            unlearn_reward(&theta0, &data(&[&[1.0]]), &UnlearnConfig::default(), None),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn divergent_rate_reports_non_finite() {
        let theta0 = RewardParams::new(FeatureVector::new(vec![0.0]).unwrap());
        let cfg = UnlearnConfig {
            learning_rate: Some(1e308),
            max_steps: 10,
            target_likelihood: f64::NEG_INFINITY,
            guard_set_floor: None,
        };
        assert!(matches!(
            unlearn_reward(&theta0, &data(&[&[1e10]]), &cfg, None),
            Err(Error::NonFinite(_))
        ));
    }
}
