//! Exhaustive and finite-difference reference computations for small instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hull::{self, GramMatrix, SolverConfig};
use crate::linalg;
use crate::reward::{train_reward, RewardParams, TrainConfig};
use crate::scalar::{self, Real};
use crate::types::{FeatureVector, PreferenceDataset};

/// Largest dataset [`brute_force_min_subset`] will enumerate.
pub const ORACLE_CAP: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult<T> {
    /// Ascending ids.
    pub optimal_subset: Vec<usize>,
    pub optimal_objective: T,
    pub feasible_count: usize,
    pub exhaustive: bool,
}

fn mask_ids(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|&i| mask & (1 << i) != 0).collect()
}

/// Minimum of `Σ_{i∈S} ‖Δφ_i − φ̂‖` over every non-empty subset whose hull contains
/// `phi_hat` (membership as in [`hull::hull_membership`]). Ties go to the
/// lexicographically smallest id list.
pub fn brute_force_min_subset<T: Real>(
    phi_hat: &FeatureVector<T>,
    data: &PreferenceDataset<T>,
    config: &SolverConfig,
) -> Result<OracleResult<T>> {
    config.validate()?;
    let n = data.len();
    if n > ORACLE_CAP {
        return Err(Error::OracleCap { cap: ORACLE_CAP, n });
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    phi_hat.check_dim(data.dim())?;
    let comparisons = data.comparisons();
    let gram = GramMatrix::new(&comparisons);
    let dists: Vec<T> = comparisons.iter().map(|c| scalar::dist(c, phi_hat)).collect();

    let mut best: Option<(T, Vec<usize>)> = None;
    let mut feasible_count = 0;
    for mask in 1..(1u32 << n) {
        let ids = mask_ids(mask, n);
        if !subset_contains(&comparisons, &gram, &ids, phi_hat, config)? {
            continue;
        }
        feasible_count += 1;
        let objective: T = ids.iter().map(|&i| dists[i]).sum();
        let better = match &best {
            None => true,
            Some((b, b_ids)) => objective < *b || (objective == *b && ids < *b_ids),
        };
        if better {
            best = Some((objective, ids));
        }
    }
    let (optimal_objective, optimal_subset) = best.ok_or(Error::ToleranceFault)?;
    Ok(OracleResult {
        optimal_subset,
        optimal_objective,
        feasible_count,
        exhaustive: true,
    })
}

fn subset_contains<T: Real>(
    comparisons: &[FeatureVector<T>],
    gram: &GramMatrix<T>,
    ids: &[usize],
    target: &[T],
    config: &SolverConfig,
) -> Result<bool> {
    let points: Vec<FeatureVector<T>> = ids.iter().map(|&i| comparisons[i].clone()).collect();
    let tol = hull::feasibility_tolerance(&points, config);
    let result = hull::project_subset(comparisons, gram, ids, target, config);
    Ok(hull::decide_membership(result, tol)?.is_some())
}

/// Whether the hull of the given examples contains `phi_hat`, judged exactly as the
/// brute-force enumeration judges each subset.
pub fn subset_is_feasible<T: Real>(
    phi_hat: &FeatureVector<T>,
    data: &PreferenceDataset<T>,
    ids: &[usize],
    config: &SolverConfig,
) -> Result<bool> {
    if ids.is_empty() {
        return Ok(false);
    }
    phi_hat.check_dim(data.dim())?;
    if let Some(&bad) = ids.iter().find(|&&i| i >= data.len()) {
        return Err(Error::UnknownItem(bad));
    }
    let comparisons = data.comparisons();
    let gram = GramMatrix::new(&comparisons);
    subset_contains(&comparisons, &gram, ids, phi_hat, config)
}

/// Euclidean distance from `target` to the hull of `points`, computed without the
/// iterative solver: the nearest hull point lies in the relative interior of a face
/// spanned by at most `d + 1` affinely independent points, so every such subset is
/// projected onto its affine hull and the candidates with non-negative barycentric
/// weights are compared. Exponential in `d`; meant for `d ≤ 3` and a dozen points.
pub fn hull_distance_by_faces<T: Real>(target: &[T], points: &[FeatureVector<T>]) -> Result<T> {
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    points.iter().try_for_each(|p| p.check_dim(target.len()))?;
    let max_size = (target.len() + 1).min(points.len());
    let mut best = T::infinity();
    let mut subset = Vec::with_capacity(max_size);
    faces(points.len(), max_size, 0, &mut subset, &mut |ids| {
        if let Some(d) = affine_face_distance(target, points, ids) {
            best = best.min(d);
        }
    });
    Ok(best)
}

fn faces(n: usize, max_size: usize, start: usize, current: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    for i in start..n {
        current.push(i);
        visit(current);
        if current.len() < max_size {
            faces(n, max_size, i + 1, current, visit);
        }
        current.pop();
    }
}

/// Distance to the projection of `target` onto the affine hull of `points[ids]`, if
/// that projection has non-negative barycentric weights.
fn affine_face_distance<T: Real>(target: &[T], points: &[FeatureVector<T>], ids: &[usize]) -> Option<T> {
    let k = ids.len();
    if k == 1 {
        return Some(scalar::dist(&points[ids[0]], target));
    }
    // Parametrize p_0 + Σ_j c_j (p_j − p_0), j = 1..k−1, and solve the normal equations.
    let base = &points[ids[0]];
    let edges: Vec<Vec<T>> = ids[1..]
        .iter()
        .map(|&i| points[i].iter().zip(base.iter()).map(|(&a, &b)| a - b).collect())
        .collect();
    let rhs_vec: Vec<T> = target.iter().zip(base.iter()).map(|(&a, &b)| a - b).collect();
    let m = k - 1;
    let mut gram = vec![T::zero(); m * m];
    let mut rhs = vec![T::zero(); m];
    for a in 0..m {
        for b in 0..m {
            gram[a * m + b] = scalar::dot(&edges[a], &edges[b]);
        }
        rhs[a] = scalar::dot(&edges[a], &rhs_vec);
    }
    let coeffs = linalg::solve(gram, m, rhs, T::lit(1e-10))?;
    let first = T::one() - coeffs.iter().copied().sum::<T>();
    let slack = T::lit(-1e-12);
    if first < slack || coeffs.iter().any(|&c| c < slack) {
        return None;
    }
    let mut point = base.as_slice().to_vec();
    for (c, e) in coeffs.iter().zip(&edges) {
        scalar::axpy(*c, e, &mut point);
    }
    Some(scalar::dist(&point, target))
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h` per coordinate.
pub fn finite_difference_gradient<T: Real>(
    mut f: impl FnMut(&FeatureVector<T>) -> T,
    at: &FeatureVector<T>,
    h: T,
) -> Result<FeatureVector<T>> {
    if !(h > T::zero()) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {h}")));
    }
    let mut grad = Vec::with_capacity(at.dim());
    let mut x = at.as_slice().to_vec();
    for i in 0..at.dim() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&FeatureVector::from_vec_unchecked(x.clone()));
        x[i] = orig - h;
        let down = f(&FeatureVector::from_vec_unchecked(x.clone()));
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("function value near coordinate {i}")));
        }
        grad.push((up - down) / (T::lit(2.0) * h));
    }
    FeatureVector::new(grad)
}

/// Trains from scratch on the dataset with `remove_ids` dropped.
pub fn retrain_oracle<T: Real>(
    data: &PreferenceDataset<T>,
    remove_ids: &[usize],
    config: &TrainConfig,
) -> Result<RewardParams<T>> {
    train_reward(&data.without(remove_ids)?, config)
}
