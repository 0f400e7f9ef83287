//! Greedy explanation sets: rank training comparisons by distance to the projected
//! feature and grow a prefix until its hull contains that feature.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hull::{self, GramMatrix, SimplexWeights, SolverConfig, SubProblem};
use crate::scalar::{self, Real};
use crate::types::{FeatureVector, PreferenceDataset, ValidationSet};

/// Weights below this are dropped when pruning.
pub const PRUNE_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation<T> {
    pub query_id: usize,
    /// Example ids in insertion order.
    pub selected_ids: Vec<usize>,
    pub weights: SimplexWeights<T>,
    pub projected: FeatureVector<T>,
    pub projection_distance: T,
    /// `Σ_{i∈S} ‖Δφ_i − φ̂‖`
    pub objective: T,
    /// Loop passes; equals the prefix length before pruning.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainerConfig {
    pub solver: SolverConfig,
    /// `None` allows the whole dataset.
    pub max_subset: Option<usize>,
    pub pruning: bool,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            max_subset: None,
            pruning: true,
        }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_subset == Some(0) {
            return Err(Error::InvalidConfig("max_subset must be at least 1".into()));
        }
        self.solver.validate()
    }
}

fn rank_comparisons<T: Real>(phi_hat: &[T], comparisons: &[FeatureVector<T>]) -> Vec<usize> {
    let dists: Vec<T> = comparisons.iter().map(|c| scalar::dist_sq(c, phi_hat)).collect();
    let mut order: Vec<usize> = (0..comparisons.len()).collect();
    order.sort_by(|&a, &b| {
        dists[a]
            .partial_cmp(&dists[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Example ids sorted by `‖Δφ_i − φ̂‖`, ascending, ties by id.
pub fn rank_by_distance<T: Real>(phi_hat: &FeatureVector<T>, data: &PreferenceDataset<T>) -> Result<Vec<usize>> {
    phi_hat.check_dim(data.dim())?;
    Ok(rank_comparisons(phi_hat, &data.comparisons()))
}

/// Comparisons and their Gram matrix, built once per dataset and shared across queries.
pub struct ExplainContext<'a, T> {
    data: &'a PreferenceDataset<T>,
    comparisons: Vec<FeatureVector<T>>,
    gram: GramMatrix<T>,
}

impl<'a, T: Real> ExplainContext<'a, T> {
    pub fn new(data: &'a PreferenceDataset<T>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let comparisons = data.comparisons();
        let gram = GramMatrix::new(&comparisons);
        Ok(Self {
            data,
            comparisons,
            gram,
        })
    }

    pub fn comparisons(&self) -> &[FeatureVector<T>] {
        &self.comparisons
    }

    pub fn explain(&self, query_id: usize, query: &FeatureVector<T>, config: &ExplainerConfig) -> Result<Explanation<T>> {
        config.validate()?;
        query.check_dim(self.data.dim())?;
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("query {query_id}")));
        }
        let n = self.comparisons.len();
        let all: Vec<usize> = (0..n).collect();
        let full = hull::project_subset(&self.comparisons, &self.gram, &all, query, &config.solver);
        if !full.converged {
            return Err(Error::NotConverged {
                iterations: full.iterations,
            });
        }
        let phi_hat = full.projected;
        let order = rank_comparisons(&phi_hat, &self.comparisons);
        let limit = config.max_subset.unwrap_or(n).min(n);

        let mut feasible_len = None;
        for k in 1..=limit {
            let prefix = &order[..k];
            let subset: Vec<FeatureVector<T>> = prefix.iter().map(|&i| self.comparisons[i].clone()).collect();
            let tol = hull::feasibility_tolerance(&subset, &config.solver);
            let result = hull::project_subset(&self.comparisons, &self.gram, prefix, &phi_hat, &config.solver);
            if hull::decide_membership(result, tol)?.is_some() {
                feasible_len = Some(k);
                break;
            }
        }
        let Some(iterations) = feasible_len else {
            return Err(if limit < n {
                Error::SubsetLimit { limit }
            } else {
                Error::ToleranceFault
            });
        };

        let mut selected: Vec<usize> = order[..iterations].to_vec();
        let mut weights =
            hull::closest_decomposition_in(&self.comparisons, &self.gram, &selected, &phi_hat, &config.solver)?;

        if config.pruning {
            let keep: Vec<usize> = (0..selected.len())
                .filter(|&k| weights.as_slice()[k] >= T::lit(PRUNE_THRESHOLD))
                .collect();
            if keep.len() < selected.len() {
                let kept_ids: Vec<usize> = keep.iter().map(|&k| selected[k]).collect();
                let mut kept_w: Vec<T> = keep.iter().map(|&k| weights.as_slice()[k]).collect();
                let total: T = kept_w.iter().copied().sum();
                kept_w.iter_mut().for_each(|w| *w /= total);
                if kept_ids.len() > 1 {
                    let sub = SubProblem::new(&self.comparisons, &self.gram, &kept_ids, &phi_hat, None);
                    sub.refine(&mut kept_w);
                }
                selected = kept_ids;
                weights = SimplexWeights::from_raw(kept_w);
            }
        }

        let objective = selected
            .iter()
            .map(|&i| scalar::dist(&self.comparisons[i], &phi_hat))
            .sum();
        Ok(Explanation {
            query_id,
            selected_ids: selected,
            weights,
            projection_distance: full.distance,
            projected: phi_hat,
            objective,
            iterations,
        })
    }
}

/// Explains one query feature against the whole dataset.
pub fn explain<T: Real>(
    query: &FeatureVector<T>,
    data: &PreferenceDataset<T>,
    config: &ExplainerConfig,
) -> Result<Explanation<T>> {
    ExplainContext::new(data)?.explain(0, query, config)
}

/// One explanation per item (using its generated response feature), plus the sorted
/// union of all selected ids. Callers pass only the unsatisfactory items.
pub fn explain_batch<T: Real>(
    unsat: &ValidationSet<T>,
    data: &PreferenceDataset<T>,
    config: &ExplainerConfig,
) -> Result<(Vec<Explanation<T>>, Vec<usize>)> {
    if unsat.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let ctx = ExplainContext::new(data)?;
    let mut explanations = Vec::with_capacity(unsat.len());
    for item in unsat.items() {
        item.check_dim(data.dim())?;
        explanations.push(ctx.explain(item.id, item.generated_feature(), config)?);
    }
    let mut union: Vec<usize> = explanations
        .iter()
        .flat_map(|e| e.selected_ids.iter().copied())
        .collect();
    union.sort_unstable();
    union.dedup();
    Ok((explanations, union))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector<f64> {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn line(points: &[f64]) -> PreferenceDataset<f64> {
        PreferenceDataset::from_comparisons(points.iter().map(|&p| fv(&[p])).collect()).unwrap()
    }

    #[test]
    fn rank_examples() {
        let data = line(&[0.0, 5.0]);
        assert_eq!(rank_by_distance(&fv(&[1.0]), &data).unwrap(), vec![0, 1]);
        let data = line(&[2.0, 0.0]);
        assert_eq!(rank_by_distance(&fv(&[1.0]), &data).unwrap(), vec![0, 1]);
        let data = line(&[4.0, 3.0, 9.0]);
        assert_eq!(rank_by_distance(&fv(&[3.0]), &data).unwrap()[0], 1);
    }

    #[test]
    fn explains_interval_midpoint() {
        let data = line(&[-1.0, 3.0, 5.0]);
        let e = explain(&fv(&[1.0]), &data, &ExplainerConfig::default()).unwrap();
        assert!((e.projected[0] - 1.0).abs() < 1e-12);
        assert_eq!(e.selected_ids, vec![0, 1]);
        assert_eq!(e.iterations, 2);
        assert!((e.weights.as_slice()[0] - 0.5).abs() < 1e-9);
        assert!((e.objective - 4.0).abs() < 1e-9);
    }

    #[test]
    fn exact_match_is_singleton() {
        let data = line(&[-1.0, 3.0, 5.0]);
        let e = explain(&fv(&[3.0]), &data, &ExplainerConfig::default()).unwrap();
        assert_eq!(e.selected_ids, vec![1]);
        assert_eq!(e.weights.as_slice(), &[1.0]);
        assert_eq!(e.iterations, 1);
    }

    #[test]
    fn outside_query_projects_to_endpoint() {
        let data = line(&[0.0, 2.0]);
        let e = explain(&fv(&[5.0]), &data, &ExplainerConfig::default()).unwrap();
        assert!((e.projected[0] - 2.0).abs() < 1e-12);
        assert!((e.projection_distance - 3.0).abs() < 1e-12);
        assert_eq!(e.selected_ids, vec![1]);
        assert_eq!(e.weights.as_slice(), &[1.0]);
    }

    #[test]
    fn subset_limit_error() {
        let data = line(&[-1.0, 3.0, 5.0]);
        let cfg = ExplainerConfig {
            max_subset: Some(1),
            ..ExplainerConfig::default()
        };
        assert!(matches!(
            explain(&fv(&[1.0]), &data, &cfg),
            Err(Error::SubsetLimit { limit: 1 })
        ));
    }

    #[test]
    fn non_finite_query_rejected() {
        let data = line(&[0.0, 1.0]);
        let q = FeatureVector::from_vec_unchecked(vec![f64::NAN]);
        assert!(matches!(
            explain(&q, &data, &ExplainerConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }
}
