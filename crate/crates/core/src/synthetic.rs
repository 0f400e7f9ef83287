//! Seeded synthetic worlds: a true linear reward, preference data with a planted
//! block of misleading comparisons, and validation prompts whose candidate sets
//! expose the resulting reward-model flaw.
//!
//! Geometry: `t` is the true-reward direction, and `v`, `h` are unit directions
//! orthogonal to it and to each other. Misleading comparisons prefer responses that
//! are heavy in `v` and slightly worse under `t`, so a reward model trained on them
//! rewards `v`. Every validation prompt has a good candidate along `t`, with true score
//! at least half its quality, plus random fillers. Some prompts also offer an "exploit"
//! heavy in `v`, which the flawed model prefers and the true reward dislikes; there the
//! good candidate also carries a neutral style component along `h`. The other prompts
//! may offer a "decoy" heavy in `h` but worse under `t`, so a policy that over-learns
//! the style from the exploit prompts starts choosing decoys elsewhere.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::RewardParams;
use crate::scalar::{self, Real};
use crate::types::{FeatureVector, PreferenceDataset, ValidationItem, ValidationSet};

/// Named random sub-streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Eval = 3,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub dim: usize,
    pub num_examples: usize,
    /// Validation prompts.
    pub num_prompts: usize,
    /// Extra prompts from the same distribution, never used for training or tuning.
    pub num_heldout: usize,
    pub candidates: usize,
    /// Fraction of preference examples that are planted misleading comparisons.
    pub misleading_fraction: f64,
    /// Standard deviation of isotropic feature noise.
    pub noise: f64,
    /// `v` coefficient of misleading comparisons.
    pub misleading_strength: f64,
    /// `v` coefficient of exploit and decoy candidates.
    pub exploit_strength: f64,
    /// Probability that a prompt offers an exploit candidate.
    pub exploit_rate: f64,
    /// Probability that a prompt without an exploit candidate offers a decoy.
    pub decoy_rate: f64,
    /// `h` coefficient of good candidates in exploit prompts; decoys carry 1.5 times this.
    pub style_strength: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            num_examples: 500,
            num_prompts: 100,
            num_heldout: 100,
            candidates: 4,
            misleading_fraction: 0.15,
            noise: 0.3,
            misleading_strength: 3.0,
            exploit_strength: 6.0,
            exploit_rate: 0.5,
            decoy_rate: 0.8,
            style_strength: 2.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        let ok = self.dim >= 3
            && self.num_examples >= 1
            && self.num_prompts >= 1
            && self.candidates >= 2
            && (0.0..1.0).contains(&self.misleading_fraction)
            && self.noise >= 0.0
            && self.noise.is_finite()
            && self.misleading_strength > 0.0
            && self.misleading_strength.is_finite()
            && self.exploit_strength > 0.0
            && self.exploit_strength.is_finite()
            && unit(self.exploit_rate)
            && unit(self.decoy_rate)
            && self.style_strength >= 0.0
            && self.style_strength.is_finite();
        if !ok {
            return Err(Error::InvalidConfig(format!("world config out of range: {self:?}")));
        }
        Ok(())
    }

    pub fn misleading_count(&self) -> usize {
        (self.misleading_fraction * self.num_examples as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld<T> {
    pub dataset: PreferenceDataset<T>,
    /// Candidate sets with placeholder `generated_index` 0 and its true score; the
    /// pipeline regenerates both from the trained policy.
    pub validation: ValidationSet<T>,
    pub heldout: ValidationSet<T>,
    pub true_reward: RewardParams<T>,
    /// Unit direction `v` that the planted comparisons reward.
    pub misleading_direction: FeatureVector<T>,
    /// Ascending.
    pub planted_misleading_ids: Vec<usize>,
}

struct Sampler<'a, R> {
    rng: &'a mut R,
    dim: usize,
    noise: f64,
}

impl<R: Rng> Sampler<'_, R> {
    fn gaussian(&mut self, scale: f64) -> Vec<f64> {
        (0..self.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut *self.rng);
                scale * z
            })
            .collect::<Vec<f64>>()
    }

    /// `Σ c_k dir_k` plus isotropic noise.
    fn around(&mut self, dirs: &[(f64, &[f64])]) -> Vec<f64> {
        let mut x = self.gaussian(self.noise);
        for &(c, dir) in dirs {
            scalar::axpy(c, dir, &mut x);
        }
        x
    }

    /// [`Sampler::around`], redrawn until the true score reaches `floor`.
    fn good(&mut self, dirs: &[(f64, &[f64])], t: &[f64], floor: f64) -> Vec<f64> {
        loop {
            let x = self.around(dirs);
            if scalar::dot(&x, t) >= floor {
                return x;
            }
        }
    }
}

fn unit(mut x: Vec<f64>) -> Vec<f64> {
    let n = scalar::norm(&x);
    x.iter_mut().for_each(|v| *v /= n);
    x
}

/// Gram-Schmidt step against unit vectors `basis`.
fn orthogonal(mut x: Vec<f64>, basis: &[&[f64]]) -> Vec<f64> {
    for b in basis {
        let proj = scalar::dot(&x, b);
        scalar::axpy(-proj, b, &mut x);
    }
    unit(x)
}

struct Directions<'a> {
    t: &'a [f64],
    v: &'a [f64],
    h: &'a [f64],
}

fn convert<T: Real>(x: &[f64]) -> FeatureVector<T> {
    FeatureVector::from_vec_unchecked(x.iter().map(|&v| T::lit(v)).collect())
}

/// Deterministic in `(config, seed)`. Dataset and validation prompts come from the
/// data stream, held-out prompts from the eval stream.
pub fn generate_synthetic_world<T: Real>(config: &WorldConfig, seed: u64) -> Result<SyntheticWorld<T>> {
    config.validate()?;
    let d = config.dim;
    let mut rng = rng_for(seed, Stream::Data);
    let mut s = Sampler {
        rng: &mut rng,
        dim: d,
        noise: config.noise,
    };

    let t = unit(s.gaussian(1.0));
    let v = orthogonal(s.gaussian(1.0), &[&t]);
    let h = orthogonal(s.gaussian(1.0), &[&t, &v]);
    let dirs = Directions { t: &t, v: &v, h: &h };

    let n = config.num_examples;
    let mut planted = index::sample(s.rng, n, config.misleading_count()).into_vec();
    planted.sort_unstable();
    let mut is_planted = vec![false; n];
    planted.iter().for_each(|&i| is_planted[i] = true);

    let strength = config.misleading_strength;
    let mut pairs = Vec::with_capacity(n);
    for &misleading in &is_planted {
        let delta = if misleading {
            loop {
                let x = s.around(&[(strength, &v), (-0.5, &t)]);
                if scalar::dot(&x, &t) < -0.05 {
                    break x;
                }
            }
        } else {
            loop {
                let mut x = s.gaussian(1.0);
                let m = scalar::dot(&x, &t);
                if m.abs() >= 0.05 {
                    if m < 0.0 {
                        x.iter_mut().for_each(|c| *c = -*c);
                    }
                    break x;
                }
            }
        };
        let phi_l = s.gaussian(0.5);
        let phi_w: Vec<f64> = phi_l.iter().zip(&delta).map(|(a, b)| a + b).collect();
        pairs.push((convert::<T>(&phi_w), convert::<T>(&phi_l)));
    }
    let dataset = PreferenceDataset::from_pairs(pairs)?;

    let validation = prompts(&mut s, config, &dirs, config.num_prompts);
    let mut eval_rng = rng_for(seed, Stream::Eval);
    let mut e = Sampler {
        rng: &mut eval_rng,
        dim: d,
        noise: config.noise,
    };
    let heldout = prompts(&mut e, config, &dirs, config.num_heldout);

    Ok(SyntheticWorld {
        dataset,
        validation: ValidationSet::new(validation),
        heldout: ValidationSet::new(heldout),
        true_reward: RewardParams::new(convert(&t)),
        misleading_direction: convert(&v),
        planted_misleading_ids: planted,
    })
}

fn prompts<T: Real, R: Rng>(
    s: &mut Sampler<'_, R>,
    config: &WorldConfig,
    dirs: &Directions<'_>,
    count: usize,
) -> Vec<ValidationItem<T>> {
    let Directions { t, v, h } = *dirs;
    let strength = config.exploit_strength;
    let style = config.style_strength;
    (0..count)
        .map(|k| {
            let mut cands: Vec<Vec<f64>> = Vec::with_capacity(config.candidates);
            let quality = s.rng.random_range(0.5..1.5);
            if s.rng.random_bool(config.exploit_rate) {
                cands.push(s.good(&[(quality, t), (style, h)], t, 0.5 * quality));
                cands.push(s.around(&[(strength, v), (-0.5, t)]));
            } else {
                cands.push(s.good(&[(quality, t)], t, 0.5 * quality));
                if cands.len() < config.candidates && s.rng.random_bool(config.decoy_rate) {
                    cands.push(s.around(&[(1.5 * style, h), (-0.2, t)]));
                }
            }
            while cands.len() < config.candidates {
                let x = s.gaussian(0.7);
                cands.push(x);
            }
            cands.shuffle(s.rng);
            let candidate_features: Vec<FeatureVector<T>> = cands.iter().map(|c| convert(c)).collect();
            let score = T::lit(scalar::dot(&cands[0], t));
            ValidationItem {
                id: k,
                candidate_features,
                generated_index: 0,
                score,
                label: None,
                sft_probs: None,
            }
        })
        .collect()
}
