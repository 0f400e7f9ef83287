//! Softmax policies over per-prompt candidate sets: the closed-form KL-regularized
//! RLHF policy, the split-objective fine-tune, and judge-based win rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim;
use crate::reward::RewardParams;
use crate::scalar::{self, Real};
use crate::types::{FeatureVector, ValidationItem, ValidationSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", try_from = "RawPolicy<T>")]
pub enum CandidatePolicy<T> {
    /// Explicit distribution per item id.
    Tabular { probs: BTreeMap<usize, Vec<T>> },
    /// `π_w(y|x) ∝ exp(w · φ(x, y))`, shared across prompts.
    Parametric { w: FeatureVector<T> },
}

// Internally tagged content is buffered, which loses integer parsing of map keys.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RawPolicy<T> {
    Tabular { probs: BTreeMap<String, Vec<T>> },
    Parametric { w: FeatureVector<T> },
}

impl<T> TryFrom<RawPolicy<T>> for CandidatePolicy<T> {
    type Error = String;

    fn try_from(raw: RawPolicy<T>) -> std::result::Result<Self, String> {
        Ok(match raw {
            RawPolicy::Parametric { w } => CandidatePolicy::Parametric { w },
            RawPolicy::Tabular { probs } => CandidatePolicy::Tabular {
                probs: probs
                    .into_iter()
                    .map(|(k, v)| k.parse().map(|id| (id, v)).map_err(|_| format!("item id `{k}` is not an integer")))
                    .collect::<std::result::Result<_, _>>()?,
            },
        })
    }
}

impl<T: Real> CandidatePolicy<T> {
    /// Baseline policy from each item's `sft_probs`, uniform where absent.
    pub fn sft(items: &ValidationSet<T>) -> Self {
        let probs = items
            .items()
            .iter()
            .map(|item| (item.id, sft_distribution(item)))
            .collect();
        CandidatePolicy::Tabular { probs }
    }
}

fn sft_distribution<T: Real>(item: &ValidationItem<T>) -> Vec<T> {
    let n = item.num_candidates();
    match &item.sft_probs {
        Some(p) => {
            let total: T = p.iter().copied().sum();
            p.iter().map(|&x| x / total).collect()
        }
        None => vec![T::one() / T::from_usize_lossy(n); n],
    }
}

fn logits<T: Real>(w: &[T], item: &ValidationItem<T>) -> Vec<T> {
    item.candidate_features.iter().map(|phi| scalar::dot(w, phi)).collect()
}

/// Per-item distribution over candidates.
pub fn policy_probs<T: Real>(policy: &CandidatePolicy<T>, item: &ValidationItem<T>) -> Result<Vec<T>> {
    match policy {
        CandidatePolicy::Tabular { probs } => {
            let p = probs.get(&item.id).ok_or(Error::UnknownItem(item.id))?;
            if p.len() != item.num_candidates() {
                return Err(Error::DimensionMismatch {
                    expected: item.num_candidates(),
                    found: p.len(),
                });
            }
            Ok(p.clone())
        }
        CandidatePolicy::Parametric { w } => {
            item.check_dim(w.dim())?;
            Ok(scalar::softmax(&logits(w, item)))
        }
    }
}

/// `Σ p_i log(p_i / q_i)` with `0 log 0 = 0`.
pub fn kl_divergence<T: Real>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    let mut total = T::zero();
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > T::zero() {
            if qi <= T::zero() {
                return Err(Error::SupportViolation { index: i });
            }
            total += pi * (pi.ln() - qi.ln());
        }
    }
    Ok(total)
}

/// Exact maximizer of `E_π[r] − β KL(π ‖ π_SFT)` per item:
/// `π_0(y|x) ∝ π_SFT(y|x) exp(r(x, y) / β)`.
pub fn rlhf_policy<T: Real>(
    theta0: &RewardParams<T>,
    sft: &CandidatePolicy<T>,
    beta: T,
    items: &ValidationSet<T>,
) -> Result<CandidatePolicy<T>> {
    if !(beta > T::zero()) || !beta.is_finite() {
        return Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")));
    }
    let mut probs = BTreeMap::new();
    for item in items.items() {
        item.check_dim(theta0.dim())?;
        let base = policy_probs(sft, item)?;
        let scores: Vec<T> = base
            .iter()
            .zip(&item.candidate_features)
            .map(|(&p, phi)| {
                if p > T::zero() {
                    p.ln() + theta0.score(phi) / beta
                } else {
                    T::neg_infinity()
                }
            })
            .collect();
        probs.insert(item.id, scalar::softmax(&scores));
    }
    Ok(CandidatePolicy::Tabular { probs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Weight of the KL guard on satisfactory prompts.
    pub beta_bar: f64,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub grad_tolerance: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            beta_bar: 1.0,
            learning_rate: 10.0,
            max_steps: 1000,
            grad_tolerance: 1e-8,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta_bar >= 0.0
            && self.beta_bar.is_finite()
            && self.learning_rate > 0.0
            && self.max_steps > 0
            && self.grad_tolerance > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("finetune config out of range: {self:?}")));
        }
        Ok(())
    }
}

struct PromptTerm<'a, T> {
    item: &'a ValidationItem<T>,
    /// Unlearned reward per candidate (unsatisfactory prompts).
    rewards: Vec<T>,
    /// `log π_0` per candidate (satisfactory prompts).
    log_ref: Vec<T>,
}

/// Precomputed pieces of the fine-tuning objective.
struct SplitObjective<'a, T> {
    unsat: Vec<PromptTerm<'a, T>>,
    sat: Vec<PromptTerm<'a, T>>,
    beta_bar: T,
    dim: usize,
}

impl<'a, T: Real> SplitObjective<'a, T> {
    fn new(
        items: &'a ValidationSet<T>,
        theta_u: &RewardParams<T>,
        pi0: &CandidatePolicy<T>,
        beta_bar: T,
    ) -> Result<Self> {
        if !items.all_labeled() {
            return Err(Error::InvalidConfig("fine-tuning needs every item labeled".into()));
        }
        let mut unsat = Vec::new();
        let mut sat = Vec::new();
        for item in items.items() {
            item.check_dim(theta_u.dim())?;
            if item.is_unsatisfactory() {
                let rewards = item.candidate_features.iter().map(|phi| theta_u.score(phi)).collect();
                unsat.push(PromptTerm {
                    item,
                    rewards,
                    log_ref: Vec::new(),
                });
            } else {
                let reference = policy_probs(pi0, item)?;
                if let Some(i) = reference.iter().position(|&p| !(p > T::zero())) {
                    // π_w has full support, so KL(π_w ‖ π_0) is infinite here.
                    return Err(Error::SupportViolation { index: i });
                }
                sat.push(PromptTerm {
                    item,
                    rewards: Vec::new(),
                    log_ref: reference.iter().map(|p| p.ln()).collect(),
                });
            }
        }
        Ok(Self {
            unsat,
            sat,
            beta_bar,
            dim: theta_u.dim(),
        })
    }

    fn value(&self, w: &[T]) -> T {
        let mut reward_term = T::zero();
        for term in &self.unsat {
            let p = scalar::softmax(&logits(w, term.item));
            reward_term += scalar::dot(&p, &term.rewards);
        }
        if !self.unsat.is_empty() {
            reward_term /= T::from_usize_lossy(self.unsat.len());
        }
        let mut kl_term = T::zero();
        if self.beta_bar != T::zero() {
            for term in &self.sat {
                let z = logits(w, term.item);
                let p = scalar::softmax(&z);
                let log_p = log_softmax(&z);
                kl_term += p
                    .iter()
                    .zip(log_p.iter().zip(&term.log_ref))
                    .map(|(&pi, (&lp, &lq))| if pi > T::zero() { pi * (lp - lq) } else { T::zero() })
                    .sum::<T>();
            }
            if !self.sat.is_empty() {
                kl_term /= T::from_usize_lossy(self.sat.len());
            }
        }
        reward_term - self.beta_bar * kl_term
    }

    /// `∇ E_π[r] = Cov_π(r, φ)` and `∇ KL(π ‖ π_0) = Cov_π(log π − log π_0, φ)`.
    fn gradient(&self, w: &[T]) -> Vec<T> {
        let mut grad = vec![T::zero(); self.dim];
        if !self.unsat.is_empty() {
            let scale = T::one() / T::from_usize_lossy(self.unsat.len());
            for term in &self.unsat {
                let p = scalar::softmax(&logits(w, term.item));
                covariance_into(&p, &term.rewards, &term.item.candidate_features, scale, &mut grad);
            }
        }
        if self.beta_bar != T::zero() && !self.sat.is_empty() {
            let scale = -self.beta_bar / T::from_usize_lossy(self.sat.len());
            for term in &self.sat {
                let z = logits(w, term.item);
                let p = scalar::softmax(&z);
                let log_p = log_softmax(&z);
                let diff: Vec<T> = log_p.iter().zip(&term.log_ref).map(|(&a, &b)| a - b).collect();
                covariance_into(&p, &diff, &term.item.candidate_features, scale, &mut grad);
            }
        }
        grad
    }
}

fn log_softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    z.iter().map(|&v| v - lse).collect()
}

/// `out += scale · Σ_y p_y (f_y − E_p f) φ_y`
fn covariance_into<T: Real>(p: &[T], f: &[T], features: &[FeatureVector<T>], scale: T, out: &mut [T]) {
    let mean = scalar::dot(p, f);
    for ((&py, &fy), phi) in p.iter().zip(f).zip(features) {
        scalar::axpy(scale * py * (fy - mean), phi, out);
    }
}

/// Mean expected unlearned reward over unsatisfactory prompts minus `β̄` times the
/// mean `KL(π_w ‖ π_0)` over satisfactory prompts. Exact expectations.
pub fn finetune_objective<T: Real>(
    w: &FeatureVector<T>,
    items: &ValidationSet<T>,
    theta_u: &RewardParams<T>,
    pi0: &CandidatePolicy<T>,
    config: &FinetuneConfig,
) -> Result<T> {
    w.check_dim(theta_u.dim())?;
    let obj = SplitObjective::new(items, theta_u, pi0, T::lit(config.beta_bar))?;
    Ok(obj.value(w))
}

/// Analytic gradient of [`finetune_objective`] with respect to `w`.
pub fn finetune_gradient<T: Real>(
    w: &FeatureVector<T>,
    items: &ValidationSet<T>,
    theta_u: &RewardParams<T>,
    pi0: &CandidatePolicy<T>,
    config: &FinetuneConfig,
) -> Result<FeatureVector<T>> {
    w.check_dim(theta_u.dim())?;
    let obj = SplitObjective::new(items, theta_u, pi0, T::lit(config.beta_bar))?;
    FeatureVector::new(obj.gradient(w))
}

/// Parametric weights closest to `target` in mean `KL(target ‖ π_w)` over `items`.
pub fn fit_parametric<T: Real>(
    target: &CandidatePolicy<T>,
    items: &ValidationSet<T>,
    dim: usize,
    config: &FinetuneConfig,
) -> Result<FeatureVector<T>> {
    let refs: Vec<Vec<T>> = items
        .items()
        .iter()
        .map(|item| {
            item.check_dim(dim)?;
            policy_probs(target, item)
        })
        .collect::<Result<_>>()?;
    let n = T::from_usize_lossy(items.len().max(1));
    // Maximize −KL(target ‖ π_w) up to the constant target entropy: mean Σ q log π_w.
    let value = |w: &[T]| {
        let total: T = items
            .items()
            .iter()
            .zip(&refs)
            .map(|(item, q)| {
                let lp = log_softmax(&logits(w, item));
                q.iter()
                    .zip(&lp)
                    .map(|(&qi, &l)| if qi > T::zero() { qi * l } else { T::zero() })
                    .sum::<T>()
            })
            .sum();
        total / n
    };
    let grad = |w: &[T]| {
        let mut g = vec![T::zero(); dim];
        for (item, q) in items.items().iter().zip(&refs) {
            let p = scalar::softmax(&logits(w, item));
            for ((&qi, &pi), phi) in q.iter().zip(&p).zip(&item.candidate_features) {
                scalar::axpy((qi - pi) / n, phi, &mut g);
            }
        }
        g
    };
    let out = optim::gradient_ascent(
        "policy fit",
        vec![T::zero(); dim],
        T::lit(config.learning_rate),
        config.max_steps.max(2000),
        T::lit(config.grad_tolerance),
        value,
        grad,
    )?;
    FeatureVector::new(out.x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSummary<T> {
    pub initial_w: FeatureVector<T>,
    pub policy: CandidatePolicy<T>,
    pub steps: usize,
    pub objective_trace: Vec<T>,
    pub grad_norm: T,
}

/// Fits a parametric start to `pi0`, then ascends [`finetune_objective`].
pub fn finetune_policy<T: Real>(
    items: &ValidationSet<T>,
    theta_u: &RewardParams<T>,
    pi0: &CandidatePolicy<T>,
    config: &FinetuneConfig,
) -> Result<CandidatePolicy<T>> {
    Ok(finetune_policy_traced(items, theta_u, pi0, config)?.policy)
}

pub fn finetune_policy_traced<T: Real>(
    items: &ValidationSet<T>,
    theta_u: &RewardParams<T>,
    pi0: &CandidatePolicy<T>,
    config: &FinetuneConfig,
) -> Result<FinetuneSummary<T>> {
    config.validate()?;
    let obj = SplitObjective::new(items, theta_u, pi0, T::lit(config.beta_bar))?;
    let initial_w = fit_parametric(pi0, items, theta_u.dim(), config)?;
    let out = optim::gradient_ascent(
        "fine-tune",
        initial_w.as_slice().to_vec(),
        T::lit(config.learning_rate),
        config.max_steps,
        T::lit(config.grad_tolerance),
        |w| obj.value(w),
        |w| obj.gradient(w),
    )?;
    Ok(FinetuneSummary {
        initial_w,
        policy: CandidatePolicy::Parametric {
            w: FeatureVector::new(out.x)?,
        },
        steps: out.steps,
        objective_trace: out.trace,
        grad_norm: out.grad_norm,
    })
}

/// Mean `KL(π ‖ π_0)` over `items`.
pub fn mean_kl<T: Real>(policy: &CandidatePolicy<T>, pi0: &CandidatePolicy<T>, items: &ValidationSet<T>) -> Result<T> {
    if items.is_empty() {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    for item in items.items() {
        total += kl_divergence(&policy_probs(policy, item)?, &policy_probs(pi0, item)?)?;
    }
    Ok(total / T::from_usize_lossy(items.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    /// `(wins_a + ties / 2) / n`; 0.5 when there are no prompts.
    pub win_rate_a: f64,
}

/// Index each policy would answer with: its most probable candidate, lowest index on ties.
pub fn selected_candidate<T: Real>(policy: &CandidatePolicy<T>, item: &ValidationItem<T>) -> Result<usize> {
    let p = policy_probs(policy, item)?;
    scalar::argmax(&p).ok_or(Error::UnknownItem(item.id))
}

/// Judge-scored head-to-head over `items`.
pub fn evaluate_win_rate<T: Real>(
    policy_a: &CandidatePolicy<T>,
    policy_b: &CandidatePolicy<T>,
    items: &ValidationSet<T>,
    judge: &RewardParams<T>,
) -> Result<WinRateReport> {
    let scores = items
        .items()
        .iter()
        .map(|item| {
            item.check_dim(judge.dim())?;
            let a = selected_candidate(policy_a, item)?;
            let b = selected_candidate(policy_b, item)?;
            Ok((
                judge.score(&item.candidate_features[a]),
                judge.score(&item.candidate_features[b]),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(tally(&scores))
}

/// Win-rate bookkeeping over per-prompt `(score_a, score_b)` pairs.
pub fn tally<T: Real>(scores: &[(T, T)]) -> WinRateReport {
    let (mut wins_a, mut wins_b, mut ties) = (0, 0, 0);
    for &(a, b) in scores {
        if a > b {
            wins_a += 1;
        } else if b > a {
            wins_b += 1;
        } else {
            ties += 1;
        }
    }
    let n = scores.len();
    let win_rate_a = if n == 0 {
        0.5
    } else {
        (wins_a as f64 + 0.5 * ties as f64) / n as f64
    };
    WinRateReport {
        wins_a,
        wins_b,
        ties,
        win_rate_a,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Label;

    fn fv(v: &[f64]) -> FeatureVector<f64> {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn item(id: usize, cands: &[&[f64]], label: Option<Label>) -> ValidationItem<f64> {
        ValidationItem {
            id,
            candidate_features: cands.iter().map(|c| fv(c)).collect(),
            generated_index: 0,
            score: 0.0,
            label,
            sft_probs: None,
        }
    }

    #[test]
    fn probs_examples() {
        let it = item(0, &[&[1.0], &[1.0], &[1.0]], None);
        let p = policy_probs(&CandidatePolicy::Parametric { w: fv(&[2.0]) }, &it).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

        let it = item(0, &[&[1000.0], &[0.0]], None);
        let p = policy_probs(&CandidatePolicy::Parametric { w: fv(&[1.0]) }, &it).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] >= 0.0);

        let tab = CandidatePolicy::Tabular {
            probs: BTreeMap::from([(0, vec![0.2, 0.8])]),
        };
        assert_eq!(policy_probs(&tab, &it).unwrap(), vec![0.2, 0.8]);
        assert!(matches!(
            policy_probs(&tab, &item(9, &[&[0.0]], None)),
            Err(Error::UnknownItem(9))
        ));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::SupportViolation { index: 1 })
        ));
    }

    #[test]
    fn rlhf_policy_two_candidates() {
        let items = ValidationSet::new(vec![item(0, &[&[1.0], &[0.0]], None)]);
        let sft = CandidatePolicy::sft(&items);
        let pi0 = rlhf_policy(&RewardParams::new(fv(&[1.0])), &sft, 1.0, &items).unwrap();
        let p = policy_probs(&pi0, &items.items()[0]).unwrap();
        let e = 1f64.exp();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.731).abs() < 1e-3);
        assert!(rlhf_policy(&RewardParams::new(fv(&[1.0])), &sft, 0.0, &items).is_err());
    }

    #[test]
    fn objective_examples() {
        let items = ValidationSet::new(vec![item(0, &[&[2.0], &[0.0]], Some(Label::Unsatisfactory))]);
        let theta = RewardParams::new(fv(&[1.0]));
        let pi0 = CandidatePolicy::sft(&items);
        let cfg = FinetuneConfig {
            beta_bar: 0.0,
            ..FinetuneConfig::default()
        };
        let v = finetune_objective(&fv(&[0.0]), &items, &theta, &pi0, &cfg).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn objective_requires_labels() {
        let items = ValidationSet::new(vec![item(0, &[&[2.0], &[0.0]], None)]);
        let theta = RewardParams::new(fv(&[1.0]));
        let pi0 = CandidatePolicy::sft(&items);
        assert!(finetune_objective(&fv(&[0.0]), &items, &theta, &pi0, &FinetuneConfig::default()).is_err());
    }

    #[test]
    fn win_rate_examples() {
        assert_eq!(tally(&[(1.0, 0.0), (2.0, 3.0)]).win_rate_a, 0.5);
        let r = tally(&[(1.0, 1.0), (2.0, 2.0)]);
        assert_eq!((r.ties, r.win_rate_a), (2, 0.5));
        assert_eq!(tally::<f64>(&[]).win_rate_a, 0.5);
    }

    #[test]
    fn policy_serialization_format() {
        let p = CandidatePolicy::Parametric { w: fv(&[1.5, -2.0]) };
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"kind":"parametric","w":[1.5,-2.0]}"#);
        let t: CandidatePolicy<f64> = CandidatePolicy::Tabular {
            probs: BTreeMap::from([(3, vec![0.25, 0.75])]),
        };
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"kind":"tabular","probs":{"3":[0.25,0.75]}}"#);
        assert_eq!(serde_json::from_str::<CandidatePolicy<f64>>(&s).unwrap(), t);
    }
}
