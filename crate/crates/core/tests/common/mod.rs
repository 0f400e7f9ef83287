#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlhf_explain::{FeatureVector, Label, PreferenceDataset, ValidationItem, ValidationSet};

pub fn fv(v: &[f64]) -> FeatureVector<f64> {
    FeatureVector::new(v.to_vec()).unwrap()
}

pub fn comparisons(points: &[&[f64]]) -> PreferenceDataset<f64> {
    PreferenceDataset::from_comparisons(points.iter().map(|p| fv(p)).collect()).unwrap()
}

pub fn line(points: &[f64]) -> PreferenceDataset<f64> {
    PreferenceDataset::from_comparisons(points.iter().map(|&p| fv(&[p])).collect()).unwrap()
}

pub fn item(id: usize, candidates: &[&[f64]], label: Option<Label>) -> ValidationItem<f64> {
    ValidationItem {
        id,
        candidate_features: candidates.iter().map(|c| fv(c)).collect(),
        generated_index: 0,
        score: 0.0,
        label,
        sft_probs: None,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_dataset(rng: &mut impl Rng, n: usize, dim: usize, scale: f64) -> PreferenceDataset<f64> {
    let pairs = (0..n)
        .map(|_| (fv(&uniform_vec(rng, dim, scale)), fv(&uniform_vec(rng, dim, scale))))
        .collect();
    PreferenceDataset::from_pairs(pairs).unwrap()
}

/// Labeled prompts with `k` candidates each; every third prompt is unsatisfactory.
pub fn random_items(rng: &mut impl Rng, prompts: usize, k: usize, dim: usize) -> ValidationSet<f64> {
    let items = (0..prompts)
        .map(|id| ValidationItem {
            id,
            candidate_features: (0..k).map(|_| fv(&uniform_vec(rng, dim, 1.0))).collect(),
            generated_index: 0,
            score: 0.0,
            label: Some(if id % 3 == 0 {
                Label::Unsatisfactory
            } else {
                Label::Satisfactory
            }),
            sft_probs: None,
        })
        .collect();
    ValidationSet::new(items)
}

/// Uniform draw from the probability simplex.
pub fn simplex_sample(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn combine(omega: &[f64], points: &[FeatureVector<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; points[0].dim()];
    for (w, p) in omega.iter().zip(points) {
        for (o, x) in out.iter_mut().zip(p.as_slice()) {
            *o += w * x;
        }
    }
    out
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
    dist(a, b) / scale
}
