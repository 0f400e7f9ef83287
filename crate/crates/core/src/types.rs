//! Feature vectors, preference data, validation prompts and the threshold partition.

use std::collections::BTreeMap;
use std::ops::{Deref, Index};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::scalar::Real;

/// A point in the `d`-dimensional feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector<T> {
    values: Vec<T>,
}

impl<T: Real> FeatureVector<T> {
    /// Wraps `values`, rejecting non-finite entries.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature entry {bad}")));
        }
        Ok(Self { values })
    }

    pub(crate) fn from_vec_unchecked(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![T::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn scaled(&self, a: T) -> Self {
        Self {
            values: self.values.iter().map(|&v| v * a).collect(),
        }
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

impl<T> Deref for FeatureVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.values
    }
}

impl<T> Index<usize> for FeatureVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

/// One training triple `(x, y_w, y_l)` held as its two response features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceExample<T> {
    pub id: usize,
    pub phi_w: FeatureVector<T>,
    pub phi_l: FeatureVector<T>,
}

impl<T: Real> PreferenceExample<T> {
    pub fn new(id: usize, phi_w: FeatureVector<T>, phi_l: FeatureVector<T>) -> Result<Self> {
        phi_l.check_dim(phi_w.dim())?;
        Ok(Self { id, phi_w, phi_l })
    }

    pub fn dim(&self) -> usize {
        self.phi_w.dim()
    }
}

/// `phi_w - phi_l`, the comparison every geometric routine operates on.
pub fn feature_comparison<T: Real>(example: &PreferenceExample<T>) -> FeatureVector<T> {
    FeatureVector::from_vec_unchecked(
        example
            .phi_w
            .iter()
            .zip(example.phi_l.iter())
            .map(|(&w, &l)| w - l)
            .collect(),
    )
}

/// Ordered, non-empty set of preference examples sharing one dimension.
/// Ids equal positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset<T> {
    examples: Vec<PreferenceExample<T>>,
    dim: usize,
}

impl<T: Real> PreferenceDataset<T> {
    /// Builds a dataset from `(phi_w, phi_l)` pairs, assigning ids by position.
    pub fn from_pairs(pairs: Vec<(FeatureVector<T>, FeatureVector<T>)>) -> Result<Self> {
        let first = pairs.first().ok_or(Error::EmptyDataset)?;
        let dim = first.0.dim();
        let mut examples = Vec::with_capacity(pairs.len());
        for (id, (w, l)) in pairs.into_iter().enumerate() {
            w.check_dim(dim)?;
            examples.push(PreferenceExample::new(id, w, l)?);
        }
        Ok(Self { examples, dim })
    }

    /// Builds a dataset whose winner features are the given comparisons and loser features are zero.
    pub fn from_comparisons(comparisons: Vec<FeatureVector<T>>) -> Result<Self> {
        let dim = comparisons.first().ok_or(Error::EmptyDataset)?.dim();
        Self::from_pairs(
            comparisons
                .into_iter()
                .map(|c| (c, FeatureVector::zeros(dim)))
                .collect(),
        )
    }

    pub fn examples(&self) -> &[PreferenceExample<T>] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, id: usize) -> Option<&PreferenceExample<T>> {
        self.examples.get(id)
    }

    /// `Δφ` for every example, in id order.
    pub fn comparisons(&self) -> Vec<FeatureVector<T>> {
        self.examples.iter().map(feature_comparison).collect()
    }

    /// New dataset holding the examples with the given ids, re-indexed from zero in the given order.
    pub fn subset(&self, ids: &[usize]) -> Result<Self> {
        let pairs = ids
            .iter()
            .map(|&id| {
                self.get(id)
                    .map(|e| (e.phi_w.clone(), e.phi_l.clone()))
                    .ok_or(Error::UnknownItem(id))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(pairs)
    }

    /// Examples whose id is not in `remove`, re-indexed from zero.
    pub fn without(&self, remove: &[usize]) -> Result<Self> {
        let keep: Vec<usize> = (0..self.len()).filter(|i| !remove.contains(i)).collect();
        if keep.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.subset(&keep)
    }

    /// Same dataset with every feature multiplied by `a`.
    pub fn scaled(&self, a: T) -> Self {
        Self {
            examples: self
                .examples
                .iter()
                .map(|e| PreferenceExample {
                    id: e.id,
                    phi_w: e.phi_w.scaled(a),
                    phi_l: e.phi_l.scaled(a),
                })
                .collect(),
            dim: self.dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "sat")]
    Satisfactory,
    #[serde(rename = "unsat")]
    Unsatisfactory,
}

/// A validation prompt with its enumerated candidate responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationItem<T> {
    pub id: usize,
    pub candidate_features: Vec<FeatureVector<T>>,
    pub generated_index: usize,
    pub score: T,
    pub label: Option<Label>,
    /// Baseline policy over candidates; `None` means uniform.
    pub sft_probs: Option<Vec<T>>,
}

impl<T: Real> ValidationItem<T> {
    pub fn num_candidates(&self) -> usize {
        self.candidate_features.len()
    }

    /// Feature of the response the base policy produced.
    pub fn generated_feature(&self) -> &FeatureVector<T> {
        &self.candidate_features[self.generated_index]
    }

    pub fn is_unsatisfactory(&self) -> bool {
        self.label == Some(Label::Unsatisfactory)
    }

    pub fn is_satisfactory(&self) -> bool {
        self.label == Some(Label::Satisfactory)
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        self.candidate_features
            .iter()
            .try_for_each(|c| c.check_dim(dim))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSet<T> {
    items: Vec<ValidationItem<T>>,
    unsatisfactory_count: usize,
}

impl<T: Real> ValidationSet<T> {
    pub fn new(items: Vec<ValidationItem<T>>) -> Self {
        let unsatisfactory_count = items.iter().filter(|i| i.is_unsatisfactory()).count();
        Self {
            items,
            unsatisfactory_count,
        }
    }

    pub fn items(&self) -> &[ValidationItem<T>] {
        &self.items
    }

    pub fn into_items(self) -> Vec<ValidationItem<T>> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn unsatisfactory_count(&self) -> usize {
        self.unsatisfactory_count
    }

    pub fn find(&self, id: usize) -> Option<&ValidationItem<T>> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn unsatisfactory(&self) -> Self {
        self.filtered(|i| i.is_unsatisfactory())
    }

    pub fn satisfactory(&self) -> Self {
        self.filtered(|i| i.is_satisfactory())
    }

    fn filtered(&self, keep: impl Fn(&ValidationItem<T>) -> bool) -> Self {
        Self::new(self.items.iter().filter(|i| keep(i)).cloned().collect())
    }

    pub fn all_labeled(&self) -> bool {
        self.items.iter().all(|i| i.label.is_some())
    }
}

/// Labels items scoring strictly below `threshold` as unsatisfactory, the rest satisfactory.
pub fn partition_by_threshold<T: Real>(items: &ValidationSet<T>, threshold: T) -> Result<ValidationSet<T>> {
    if !threshold.is_finite() {
        return Err(Error::NonFinite(format!("threshold {threshold}")));
    }
    let mut out = Vec::with_capacity(items.len());
    for item in items.items() {
        if !item.score.is_finite() {
            return Err(Error::NonFinite(format!("score of item {}", item.id)));
        }
        let mut item = item.clone();
        item.label = Some(if item.score < threshold {
            Label::Unsatisfactory
        } else {
            Label::Satisfactory
        });
        out.push(item);
    }
    Ok(ValidationSet::new(out))
}

#[derive(Debug, Serialize, Deserialize)]
struct PreferenceRecord<T> {
    phi_w: Vec<T>,
    phi_l: Vec<T>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ValidationRecord<T> {
    candidates: Vec<Vec<T>>,
    generated_index: usize,
    score: T,
    #[serde(default)]
    label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sft: Option<Vec<T>>,
}

fn finite_at<T: Real>(values: Vec<T>, line: usize) -> Result<FeatureVector<T>> {
    FeatureVector::new(values).map_err(|e| Error::Malformed {
        line,
        message: e.to_string(),
    })
}

fn expect_dim(found: usize, expected: usize, line: usize) -> Result<()> {
    if found != expected {
        return Err(Error::DimensionMismatchAt {
            line,
            expected,
            found,
        });
    }
    Ok(())
}

/// Parses preference records; ids follow record order and the dimension comes from the first record.
pub fn parse_preference_dataset<T: Real + DeserializeOwned>(text: &str) -> Result<PreferenceDataset<T>> {
    let mut dim = None;
    let mut pairs = Vec::new();
    for (line, record) in io::records::<PreferenceRecord<T>>(text) {
        let record = record?;
        let d = *dim.get_or_insert(record.phi_w.len());
        if d == 0 {
            return Err(Error::Malformed {
                line,
                message: "empty feature vector".into(),
            });
        }
        expect_dim(record.phi_w.len(), d, line)?;
        expect_dim(record.phi_l.len(), d, line)?;
        pairs.push((finite_at(record.phi_w, line)?, finite_at(record.phi_l, line)?));
    }
    PreferenceDataset::from_pairs(pairs)
}

pub fn load_preference_dataset<T: Real + DeserializeOwned>(path: impl AsRef<Path>) -> Result<PreferenceDataset<T>> {
    parse_preference_dataset(&io::read_to_string(path.as_ref())?)
}

/// Parses validation records; labels may be absent.
pub fn parse_validation_set<T: Real + DeserializeOwned>(text: &str) -> Result<ValidationSet<T>> {
    let mut dim = None;
    let mut items = Vec::new();
    for (line, record) in io::records::<ValidationRecord<T>>(text) {
        let record = record?;
        if record.candidates.is_empty() {
            return Err(Error::OutOfRange {
                line,
                message: "item has no candidates".into(),
            });
        }
        let d = *dim.get_or_insert(record.candidates[0].len());
        let mut candidates = Vec::with_capacity(record.candidates.len());
        for c in record.candidates {
            expect_dim(c.len(), d, line)?;
            candidates.push(finite_at(c, line)?);
        }
        if record.generated_index >= candidates.len() {
            return Err(Error::OutOfRange {
                line,
                message: format!(
                    "generated_index {} with {} candidates",
                    record.generated_index,
                    candidates.len()
                ),
            });
        }
        if let Some(sft) = &record.sft {
            if sft.len() != candidates.len() || sft.iter().any(|p| !p.is_finite() || *p < T::zero()) {
                return Err(Error::OutOfRange {
                    line,
                    message: "sft probabilities must be non-negative, one per candidate".into(),
                });
            }
        }
        items.push(ValidationItem {
            id: items.len(),
            candidate_features: candidates,
            generated_index: record.generated_index,
            score: record.score,
            label: record.label,
            sft_probs: record.sft,
        });
    }
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(ValidationSet::new(items))
}

pub fn load_validation_set<T: Real + DeserializeOwned>(path: impl AsRef<Path>) -> Result<ValidationSet<T>> {
    parse_validation_set(&io::read_to_string(path.as_ref())?)
}

pub fn write_preference_dataset<T: Real + Serialize>(data: &PreferenceDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let records = data.examples().iter().map(|e| PreferenceRecord {
        phi_w: e.phi_w.as_slice().to_vec(),
        phi_l: e.phi_l.as_slice().to_vec(),
    });
    io::write_jsonl(path.as_ref(), records)
}

pub fn write_validation_set<T: Real + Serialize>(set: &ValidationSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let records = set.items().iter().map(|i| ValidationRecord {
        candidates: i.candidate_features.iter().map(|c| c.as_slice().to_vec()).collect(),
        generated_index: i.generated_index,
        score: i.score,
        label: i.label,
        sft: i.sft_probs.clone(),
    });
    io::write_jsonl(path.as_ref(), records)
}

/// Counts of items by label, keyed `"sat"`, `"unsat"`, `"unlabeled"`.
pub fn label_counts<T: Real>(set: &ValidationSet<T>) -> BTreeMap<&'static str, usize> {
    let mut counts = BTreeMap::new();
    for item in set.items() {
        let key = match item.label {
            Some(Label::Satisfactory) => "sat",
            Some(Label::Unsatisfactory) => "unsat",
            None => "unlabeled",
        };
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector<f64> {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn item(id: usize, score: f64) -> ValidationItem<f64> {
        ValidationItem {
            id,
            candidate_features: vec![fv(&[0.0])],
            generated_index: 0,
            score,
            label: None,
            sft_probs: None,
        }
    }

    #[test]
    fn comparison_arithmetic() {
        let e = PreferenceExample::new(0, fv(&[1.0, 2.0]), fv(&[1.0, 2.0])).unwrap();
        assert_eq!(feature_comparison(&e).as_slice(), &[0.0, 0.0]);
        let e = PreferenceExample::new(0, fv(&[3.0, 0.0]), fv(&[1.0, 1.0])).unwrap();
        assert_eq!(feature_comparison(&e).as_slice(), &[2.0, -1.0]);
    }

    #[test]
    fn comparisons_cover_dataset() {
        let data = PreferenceDataset::from_comparisons(vec![fv(&[1.0]), fv(&[2.0]), fv(&[3.0])]).unwrap();
        assert_eq!(data.comparisons().len(), data.len());
    }

    #[test]
    fn non_finite_features_rejected() {
        assert!(FeatureVector::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn partition_uses_strict_threshold() {
        let set = ValidationSet::new(vec![item(0, -0.5), item(1, 0.1), item(2, 0.4)]);
        let out = partition_by_threshold(&set, -0.30).unwrap();
        let labels: Vec<_> = out.items().iter().map(|i| i.label.unwrap()).collect();
        assert_eq!(
            labels,
            vec![Label::Unsatisfactory, Label::Satisfactory, Label::Satisfactory]
        );
        assert_eq!(out.unsatisfactory_count(), 1);

        let low = partition_by_threshold(&set, -10.0).unwrap();
        assert_eq!(low.unsatisfactory_count(), 0);

        let tie = partition_by_threshold(&ValidationSet::new(vec![item(0, 0.1)]), 0.1).unwrap();
        assert_eq!(tie.items()[0].label, Some(Label::Satisfactory));
    }

    #[test]
    fn partition_rejects_non_finite_score() {
        let set = ValidationSet::new(vec![item(0, f64::NAN)]);
        assert!(matches!(partition_by_threshold(&set, 0.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn parse_three_records() {
        let text = "{\"phi_w\":[1,2,3,4],\"phi_l\":[0,0,0,0]}\n\
                    {\"phi_w\":[1,2,3,4],\"phi_l\":[1,0,0,0]}\n\
                    {\"phi_w\":[0.5,2,3,4],\"phi_l\":[0,0,0,1e-3]}\n";
        let data: PreferenceDataset<f64> = parse_preference_dataset(text).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.dim(), 4);
        assert_eq!(data.examples()[2].id, 2);
    }

    #[test]
    fn parse_dimension_mismatch_reports_line() {
        let text = "{\"phi_w\":[1,2,3,4],\"phi_l\":[0,0,0,0]}\n{\"phi_w\":[1,2,3],\"phi_l\":[0,0,0]}\n";
        let err = parse_preference_dataset::<f64>(text).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatchAt { line: 2, expected: 4, found: 3 }));
    }

    #[test]
    fn parse_empty_and_malformed() {
        assert!(matches!(parse_preference_dataset::<f64>(""), Err(Error::EmptyDataset)));
        let err = parse_preference_dataset::<f64>("{\"phi_w\":[1]}\n").unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 1, .. }));
    }

    #[test]
    fn parse_validation_items() {
        let text = "{\"candidates\":[[1,0],[0,1]],\"generated_index\":1,\"score\":0.2,\"label\":\"unsat\"}\n\
                    {\"candidates\":[[1,0]],\"generated_index\":0,\"score\":0.9,\"label\":null}\n";
        let set: ValidationSet<f64> = parse_validation_set(text).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.unsatisfactory_count(), 1);
        assert_eq!(set.items()[1].num_candidates(), 1);

        let bad = "{\"candidates\":[[1,0]],\"generated_index\":3,\"score\":0.2}\n";
        assert!(matches!(
            parse_validation_set::<f64>(bad),
            Err(Error::OutOfRange { line: 1, .. })
        ));
    }
}
