//! Simplex-constrained least squares: projection onto the convex hull of feature
//! comparisons, hull membership, and the closest convex decomposition.
//!
//! All three share one solver for
//!
//! ```text
//! minimize  ‖Σ ω_i p_i − t‖² + Σ ω_i c_i   subject to  ω ≥ 0, Σ ω_i = 1
//! ```
//!
//! Projected gradient with the fixed step `1/L` (`L` bounded through Gram row sums)
//! drives the weights toward the optimal face; an active-set phase then solves the
//! equality-constrained problem on the support exactly, adding KKT violators and
//! dropping coordinates that leave the simplex. Every accepted iterate lowers the
//! objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::{self, Real};
use crate::types::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullProblem<T> {
    pub comparisons: Vec<FeatureVector<T>>,
    pub target: FeatureVector<T>,
}

impl<T: Real> HullProblem<T> {
    pub fn new(comparisons: Vec<FeatureVector<T>>, target: FeatureVector<T>) -> Result<Self> {
        validate_points(&comparisons, &target)?;
        Ok(Self { comparisons, target })
    }
}

fn validate_points<T: Real>(comparisons: &[FeatureVector<T>], target: &FeatureVector<T>) -> Result<()> {
    if comparisons.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hull target".into()));
    }
    comparisons.iter().try_for_each(|c| c.check_dim(target.dim()))
}

/// Convex-combination weights: non-negative, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights<T> {
    omega: Vec<T>,
}

impl<T: Real> SimplexWeights<T> {
    /// Clamps float-noise negatives to zero and renormalizes.
    pub fn from_raw(mut omega: Vec<T>) -> Self {
        for w in &mut omega {
            if *w < T::zero() || !w.is_finite() {
                *w = T::zero();
            }
        }
        let total: T = omega.iter().copied().sum();
        if total > T::zero() {
            omega.iter_mut().for_each(|w| *w /= total);
        } else if !omega.is_empty() {
            omega[0] = T::one();
        }
        Self { omega }
    }

    pub fn indicator(len: usize, at: usize) -> Self {
        let mut omega = vec![T::zero(); len];
        omega[at] = T::one();
        Self { omega }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.omega
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// `Σ ω_i p_i`.
    pub fn combine(&self, points: &[FeatureVector<T>]) -> Vec<T> {
        let dim = points.first().map_or(0, |p| p.dim());
        let mut out = vec![T::zero(); dim];
        for (&w, p) in self.omega.iter().zip(points) {
            if w != T::zero() {
                scalar::axpy(w, p, &mut out);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult<T> {
    pub projected: FeatureVector<T>,
    pub weights: SimplexWeights<T>,
    pub distance: T,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// `None` selects `max(50 · n · d, 10_000)`.
    pub max_iterations: Option<usize>,
    /// Projected-gradient stopping threshold on the per-iteration decrease of the
    /// squared distance, relative to the squared median comparison norm.
    pub stationarity_tolerance: f64,
    /// Membership tolerance on the hull distance, relative to the median comparison norm.
    pub feasibility_epsilon: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: None,
            stationarity_tolerance: 1e-10,
            feasibility_epsilon: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn max_iterations_for(&self, n: usize, dim: usize) -> usize {
        self.max_iterations
            .unwrap_or_else(|| (50 * n * dim).max(10_000))
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == Some(0)
            || !(self.stationarity_tolerance > 0.0)
            || !(self.feasibility_epsilon > 0.0)
        {
            return Err(Error::InvalidConfig(format!("solver config out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Euclidean projection onto the probability simplex by sort-and-threshold.
pub fn simplex_projection<T: Real>(v: &[T]) -> SimplexWeights<T> {
    SimplexWeights {
        omega: project_to_simplex(v),
    }
}

fn project_to_simplex<T: Real>(v: &[T]) -> Vec<T> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite input"));
    let mut cumulative = T::zero();
    let mut tau = T::zero();
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - T::one()) / T::from_usize_lossy(j + 1);
        if u - candidate > T::zero() {
            tau = candidate;
        }
    }
    v.iter().map(|&x| (x - tau).max(T::zero())).collect()
}

/// Symmetric Gram matrix `Q_ij = ⟨p_i, p_j⟩`, computed once and shared by sub-problems.
#[derive(Debug, Clone)]
pub struct GramMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> GramMatrix<T> {
    pub fn new(points: &[FeatureVector<T>]) -> Self {
        let n = points.len();
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let v = scalar::dot(&points[i], &points[j]);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }
}

/// Median Euclidean norm of `points`, falling back to the largest norm and then to 1.
pub fn median_norm<T: Real>(points: &[FeatureVector<T>]) -> T {
    let norms: Vec<T> = points.iter().map(|p| scalar::norm(p)).collect();
    if norms.is_empty() {
        return T::one();
    }
    let med = scalar::median(&norms);
    if med > T::zero() {
        return med;
    }
    let max = norms.iter().copied().fold(T::zero(), T::max);
    if max > T::zero() {
        max
    } else {
        T::one()
    }
}

/// Solver outcome before it is packaged as a [`ProjectionResult`].
#[derive(Debug, Clone)]
pub(crate) struct Solution<T> {
    pub omega: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<T>,
}

/// One simplex QP over a subset of a shared point set.
pub(crate) struct SubProblem<'a, T> {
    points: Vec<&'a [T]>,
    gram: &'a GramMatrix<T>,
    map: Vec<usize>,
    target: &'a [T],
    cost: Option<Vec<T>>,
    scale: T,
}

impl<'a, T: Real> SubProblem<'a, T> {
    /// `idx` selects rows of `all` (and of `gram`, which must be built from `all`).
    pub fn new(
        all: &'a [FeatureVector<T>],
        gram: &'a GramMatrix<T>,
        idx: &[usize],
        target: &'a [T],
        cost: Option<Vec<T>>,
    ) -> Self {
        let points: Vec<&[T]> = idx.iter().map(|&i| all[i].as_slice()).collect();
        let scale = {
            let subset: Vec<FeatureVector<T>> = idx.iter().map(|&i| all[i].clone()).collect();
            median_norm(&subset)
        };
        Self {
            points,
            gram,
            map: idx.to_vec(),
            target,
            cost,
            scale,
        }
    }

    fn n(&self) -> usize {
        self.points.len()
    }

    fn dim(&self) -> usize {
        self.target.len()
    }

    #[inline]
    fn q(&self, i: usize, j: usize) -> T {
        self.gram.get(self.map[i], self.map[j])
    }

    fn cost_at(&self, i: usize) -> T {
        self.cost.as_ref().map_or(T::zero(), |c| c[i])
    }

    /// `Σ ω_i p_i − t`
    fn residual(&self, omega: &[T]) -> Vec<T> {
        let mut r: Vec<T> = self.target.iter().map(|&t| -t).collect();
        for (&w, p) in omega.iter().zip(&self.points) {
            if w != T::zero() {
                scalar::axpy(w, p, &mut r);
            }
        }
        r
    }

    fn objective(&self, omega: &[T]) -> T {
        let linear = match &self.cost {
            Some(c) => scalar::dot(c, omega),
            None => T::zero(),
        };
        scalar::norm_sq(&self.residual(omega)) + linear
    }

    fn gradient(&self, residual: &[T]) -> Vec<T> {
        let two = T::lit(2.0);
        (0..self.n())
            .map(|i| two * scalar::dot(self.points[i], residual) + self.cost_at(i))
            .collect()
    }

    /// Lipschitz bound of the gradient: `2 · min(max row sum |Q|, ‖Q‖_F)`.
    fn lipschitz(&self) -> T {
        let n = self.n();
        let mut max_row = T::zero();
        let mut frob = T::zero();
        for i in 0..n {
            let mut row = T::zero();
            for j in 0..n {
                let v = self.q(i, j);
                row += v.abs();
                frob += v * v;
            }
            max_row = max_row.max(row);
        }
        T::lit(2.0) * max_row.min(frob.sqrt())
    }

    fn start_vertex(&self) -> usize {
        let mut best = 0;
        let mut best_val = T::infinity();
        for i in 0..self.n() {
            let v = scalar::dist_sq(self.points[i], self.target) + self.cost_at(i);
            if v < best_val {
                best = i;
                best_val = v;
            }
        }
        best
    }

    pub fn solve(&self, config: &SolverConfig, warm_start: Option<Vec<T>>) -> Solution<T> {
        let n = self.n();
        if n == 1 {
            return Solution {
                omega: vec![T::one()],
                iterations: 0,
                converged: true,
                trace: vec![self.objective(&[T::one()])],
            };
        }
        let mut omega = warm_start.unwrap_or_else(|| {
            let mut w = vec![T::zero(); n];
            w[self.start_vertex()] = T::one();
            w
        });
        let mut value = self.objective(&omega);
        let mut trace = vec![value];
        let lipschitz = self.lipschitz();
        if lipschitz <= T::zero() {
            // Every point coincides with the origin; only the linear cost matters.
            let mut best = 0;
            for i in 1..n {
                if self.cost_at(i) < self.cost_at(best) {
                    best = i;
                }
            }
            let mut w = vec![T::zero(); n];
            w[best] = T::one();
            let v = self.objective(&w);
            trace.push(v);
            return Solution {
                omega: w,
                iterations: 1,
                converged: true,
                trace,
            };
        }
        let step = T::one() / lipschitz;
        let stationary = T::lit(config.stationarity_tolerance) * self.scale * self.scale;
        let max_iterations = config.max_iterations_for(n, self.dim());
        let finisher_budget = 20 * (n + self.dim()) + 100;
        let mut iterations = 0;

        while iterations < max_iterations {
            let grad = self.gradient(&self.residual(&omega));
            let stepped: Vec<T> = omega.iter().zip(&grad).map(|(&w, &g)| w - step * g).collect();
            let next = project_to_simplex(&stepped);
            let next_value = self.objective(&next);
            iterations += 1;
            if !(next_value <= value) {
                break;
            }
            let decrease = value - next_value;
            omega = next;
            value = next_value;
            trace.push(value);
            if decrease <= stationary {
                break;
            }
            if iterations % 25 == 0 {
                let mut trial = omega.clone();
                let (used, ok) = self.active_set(&mut trial, finisher_budget);
                iterations += used;
                let trial_value = self.objective(&trial);
                if ok && trial_value <= value + self.rounding_slack(value) {
                    if trial_value <= value {
                        trace.push(trial_value);
                    }
                    return Solution {
                        omega: trial,
                        iterations,
                        converged: true,
                        trace,
                    };
                }
            }
        }
        let mut finished = omega.clone();
        let (used, ok) = self.active_set(&mut finished, finisher_budget);
        iterations += used;
        let finished_value = self.objective(&finished);
        let slack = if ok { self.rounding_slack(value) } else { T::zero() };
        if finished_value <= value + slack {
            omega = finished;
            if finished_value <= value {
                trace.push(finished_value);
            }
        }
        Solution {
            omega,
            iterations,
            converged: ok,
            trace,
        }
    }

    /// Objective differences below this are rounding noise, so a KKT-certified
    /// finisher result is kept even when it evaluates marginally higher.
    fn rounding_slack(&self, value: T) -> T {
        T::lit(1e-12) * (value + self.scale * self.scale)
    }

    /// Active-set polish of `omega` restricted to this sub-problem's points; keeps
    /// the input unless the residual shrinks or stays equal.
    pub fn refine(&self, omega: &mut [T]) {
        let before = scalar::norm(&self.residual(omega));
        let mut trial = omega.to_vec();
        self.active_set(&mut trial, 20 * (self.n() + self.dim()) + 100);
        if scalar::norm(&self.residual(&trial)) <= before {
            omega.copy_from_slice(&trial);
        }
    }

    /// Carathéodory reduction: removes one point from an affinely dependent support
    /// without moving `Σ ω_i p_i` and without raising the linear cost.
    fn reduce_support(&self, active: &mut Vec<usize>, omega: &mut [T], tol: T) -> bool {
        let d = self.dim();
        let cols: Vec<usize> = if active.len() > d + 1 {
            active[..d + 2].to_vec()
        } else {
            active.clone()
        };
        if cols.len() < 2 {
            return false;
        }
        let mut rows: Vec<Vec<T>> = (0..d)
            .map(|k| cols.iter().map(|&i| self.points[i][k] / self.scale).collect())
            .collect();
        rows.push(vec![T::one(); cols.len()]);
        let Some(mut z) = linalg::null_vector(&rows, tol) else {
            return false;
        };
        let cz: T = cols.iter().zip(&z).map(|(&i, &zi)| self.cost_at(i) * zi).sum();
        if cz > T::zero() {
            z.iter_mut().for_each(|v| *v = -*v);
        }
        let mut t = T::infinity();
        let mut hit = None;
        for (k, &i) in cols.iter().enumerate() {
            if z[k] < T::zero() {
                let ratio = omega[i] / -z[k];
                if ratio < t {
                    t = ratio;
                    hit = Some(i);
                }
            }
        }
        let Some(hit) = hit else { return false };
        for (k, &i) in cols.iter().enumerate() {
            omega[i] += t * z[k];
        }
        omega[hit] = T::zero();
        active.retain(|&i| {
            if omega[i] <= T::zero() {
                omega[i] = T::zero();
                false
            } else {
                true
            }
        });
        true
    }

    /// Minimizer over the affine hull of the support: solves
    /// `[2Q  −1; 1ᵀ 0] [w; ν] = [2Pᵀt − c; 1]` in units scaled by the median norm.
    fn affine_minimizer(&self, active: &[usize]) -> Option<Vec<T>> {
        let k = active.len();
        let m = k + 1;
        let s2 = self.scale * self.scale;
        let two = T::lit(2.0);
        let mut a = vec![T::zero(); m * m];
        let mut b = vec![T::zero(); m];
        for (r, &i) in active.iter().enumerate() {
            for (c, &j) in active.iter().enumerate() {
                a[r * m + c] = two * self.q(i, j) / s2;
            }
            a[r * m + k] = -T::one();
            a[k * m + r] = T::one();
            b[r] = (two * scalar::dot(self.points[i], self.target) - self.cost_at(i)) / s2;
        }
        b[k] = T::one();
        let sol = linalg::solve(a, m, b, T::lit(1e-13))?;
        let w = sol[..k].to_vec();
        if w.iter().all(|v| v.is_finite()) {
            Some(w)
        } else {
            None
        }
    }

    /// Primal active-set iterations from `omega`. Returns the iterations used and
    /// whether the KKT conditions hold at exit. `omega` is only overwritten with an
    /// iterate whose objective does not exceed the starting one.
    fn active_set(&self, omega: &mut [T], budget: usize) -> (usize, bool) {
        let n = self.n();
        let start_value = self.objective(omega);
        let mut w = omega.to_vec();
        let mut active: Vec<usize> = (0..n).filter(|&i| w[i] > T::zero()).collect();
        let mut iterations = 0;
        let null_tol = T::lit(1e-10);
        while active.len() > self.dim() + 1 && self.reduce_support(&mut active, &mut w, null_tol) {}
        let mut ok = false;
        let mut last_added: Option<usize> = None;
        'major: while iterations < budget {
            loop {
                iterations += 1;
                if iterations > budget || active.is_empty() {
                    break 'major;
                }
                let sol = match self.affine_minimizer(&active) {
                    Some(sol) => sol,
                    None => {
                        if self.reduce_support(&mut active, &mut w, null_tol)
                            || self.reduce_support(&mut active, &mut w, T::lit(1e-7))
                        {
                            continue;
                        }
                        break 'major;
                    }
                };
                if sol.iter().all(|&v| v > T::zero()) {
                    for (k, &i) in active.iter().enumerate() {
                        w[i] = sol[k];
                    }
                    break;
                }
                let mut t = T::one();
                let mut hit = None;
                for (k, &i) in active.iter().enumerate() {
                    if sol[k] <= T::zero() {
                        let ratio = w[i] / (w[i] - sol[k]);
                        if ratio < t {
                            t = ratio;
                            hit = Some(i);
                        }
                    }
                }
                if t <= T::zero() && hit.is_some() && hit == last_added {
                    // The point just added cannot enter; numerically stalled.
                    w[hit.unwrap()] = T::zero();
                    active.retain(|&i| Some(i) != hit);
                    break 'major;
                }
                for (k, &i) in active.iter().enumerate() {
                    w[i] = w[i] + t * (sol[k] - w[i]);
                }
                if let Some(h) = hit {
                    w[h] = T::zero();
                }
                active.retain(|&i| {
                    if w[i] <= T::zero() {
                        w[i] = T::zero();
                        false
                    } else {
                        true
                    }
                });
            }

            let residual = self.residual(&w);
            let grad = self.gradient(&residual);
            let mass: T = active.iter().map(|&i| w[i]).sum();
            let nu: T = active.iter().map(|&i| w[i] * grad[i]).sum::<T>() / mass;
            let pmax = self
                .points
                .iter()
                .map(|p| scalar::norm(p))
                .fold(T::zero(), T::max)
                + scalar::norm(self.target);
            let cmax = self
                .cost
                .as_ref()
                .map_or(T::zero(), |c| c.iter().copied().fold(T::zero(), |m, v| m.max(v.abs())));
            // Residuals below `1e-13 · scale` are rounding noise; their gradients carry no signal.
            let tol = T::lit(1e-11) * (T::lit(2.0) * scalar::norm(&residual) * pmax + cmax)
                + T::lit(2e-13) * self.scale * pmax
                + T::min_positive_value();
            let mut candidate: Option<(usize, T)> = None;
            for i in 0..n {
                if w[i] > T::zero() || active.contains(&i) {
                    continue;
                }
                if grad[i] < nu - tol && candidate.map_or(true, |(_, g)| grad[i] < g) {
                    candidate = Some((i, grad[i]));
                }
            }
            match candidate {
                Some((j, _)) => {
                    active.push(j);
                    last_added = Some(j);
                }
                None => {
                    ok = true;
                    break;
                }
            }
        }
        let value = self.objective(&w);
        let slack = T::lit(1e-14) * (T::one() + start_value.abs());
        if value <= start_value + slack && w.iter().all(|v| v.is_finite()) {
            let total: T = w.iter().copied().sum();
            for (o, v) in omega.iter_mut().zip(&w) {
                *o = *v / total;
            }
        } else {
            ok = false;
        }
        (iterations, ok)
    }
}

fn package<T: Real>(points: &[&[T]], target: &[T], sol: Solution<T>) -> ProjectionResult<T> {
    let weights = SimplexWeights::from_raw(sol.omega);
    let mut projected = vec![T::zero(); target.len()];
    for (&w, p) in weights.as_slice().iter().zip(points) {
        if w != T::zero() {
            scalar::axpy(w, p, &mut projected);
        }
    }
    let distance = scalar::dist(&projected, target);
    ProjectionResult {
        projected: FeatureVector::from_vec_unchecked(projected),
        weights,
        distance,
        iterations: sol.iterations,
        converged: sol.converged,
    }
}

/// Projection of `target` onto the hull of `all[idx]`, reusing a shared Gram matrix.
pub(crate) fn project_subset<T: Real>(
    all: &[FeatureVector<T>],
    gram: &GramMatrix<T>,
    idx: &[usize],
    target: &[T],
    config: &SolverConfig,
) -> ProjectionResult<T> {
    let sub = SubProblem::new(all, gram, idx, target, None);
    let sol = sub.solve(config, None);
    package(&sub.points, target, sol)
}

/// Minimizes `‖Σ ω Δφ − target‖²` over the simplex.
pub fn project_onto_hull<T: Real>(problem: &HullProblem<T>, config: &SolverConfig) -> Result<ProjectionResult<T>> {
    Ok(project_onto_hull_traced(problem, config)?.0)
}

/// [`project_onto_hull`] plus the objective value after each accepted iterate.
pub fn project_onto_hull_traced<T: Real>(
    problem: &HullProblem<T>,
    config: &SolverConfig,
) -> Result<(ProjectionResult<T>, Vec<T>)> {
    validate_points(&problem.comparisons, &problem.target)?;
    config.validate()?;
    let gram = GramMatrix::new(&problem.comparisons);
    let idx: Vec<usize> = (0..problem.comparisons.len()).collect();
    let sub = SubProblem::new(&problem.comparisons, &gram, &idx, &problem.target, None);
    let sol = sub.solve(config, None);
    let trace = sol.trace.clone();
    Ok((package(&sub.points, &problem.target, sol), trace))
}

/// Absolute membership tolerance for a point set.
pub fn feasibility_tolerance<T: Real>(comparisons: &[FeatureVector<T>], config: &SolverConfig) -> T {
    T::lit(config.feasibility_epsilon) * median_norm(comparisons)
}

/// Weights reconstructing `target` when it lies within the feasibility tolerance of
/// the hull, `None` otherwise.
pub fn hull_membership<T: Real>(
    target: &FeatureVector<T>,
    comparisons: &[FeatureVector<T>],
    config: &SolverConfig,
) -> Result<Option<SimplexWeights<T>>> {
    let problem = HullProblem::new(comparisons.to_vec(), target.clone())?;
    let result = project_onto_hull(&problem, config)?;
    let tol = feasibility_tolerance(comparisons, config);
    decide_membership(result, tol)
}

pub(crate) fn decide_membership<T: Real>(result: ProjectionResult<T>, tol: T) -> Result<Option<SimplexWeights<T>>> {
    if result.distance <= tol {
        Ok(Some(result.weights))
    } else if result.converged {
        Ok(None)
    } else {
        Err(Error::NotConverged {
            iterations: result.iterations,
        })
    }
}

/// Among decompositions of `target` within the feasibility tolerance, one minimizing
/// `Σ ω_i ‖Δφ_i − target‖²`.
///
/// The weighted cost enters as a penalty `μ Σ ω_i d_i²` with `μ` decreasing by decades
/// from 1 until the penalized minimizer is feasible; the winning support is then
/// re-solved without penalty so the weights reconstruct the target exactly on it.
/// Identical comparisons pool their weight on the lowest index.
pub fn closest_decomposition<T: Real>(
    target: &FeatureVector<T>,
    comparisons: &[FeatureVector<T>],
    config: &SolverConfig,
) -> Result<SimplexWeights<T>> {
    validate_points(comparisons, target)?;
    config.validate()?;
    let gram = GramMatrix::new(comparisons);
    let idx: Vec<usize> = (0..comparisons.len()).collect();
    closest_decomposition_in(comparisons, &gram, &idx, target, config)
}

pub(crate) fn closest_decomposition_in<T: Real>(
    all: &[FeatureVector<T>],
    gram: &GramMatrix<T>,
    idx: &[usize],
    target: &[T],
    config: &SolverConfig,
) -> Result<SimplexWeights<T>> {
    let subset: Vec<FeatureVector<T>> = idx.iter().map(|&i| all[i].clone()).collect();
    let tol = feasibility_tolerance(&subset, config);
    let plain = project_subset(all, gram, idx, target, config);
    if plain.distance > tol {
        return Err(Error::Infeasible {
            distance: plain.distance.as_f64(),
            tolerance: tol.as_f64(),
        });
    }
    let costs: Vec<T> = subset.iter().map(|p| scalar::dist_sq(p, target)).collect();

    let mut chosen: Option<Vec<T>> = None;
    let mut mu = T::one();
    for _ in 0..16 {
        let scaled: Vec<T> = costs.iter().map(|&c| mu * c).collect();
        let sub = SubProblem::new(all, gram, idx, target, Some(scaled));
        let sol = sub.solve(config, None);
        let result = package(&sub.points, target, sol);
        if result.distance <= tol {
            chosen = Some(result.weights.as_slice().to_vec());
            break;
        }
        mu = mu / T::lit(10.0);
    }
    let mut omega = chosen.unwrap_or_else(|| plain.weights.as_slice().to_vec());

    // Exact re-solve on the support so the weights reconstruct the target to rounding.
    let support: Vec<usize> = (0..omega.len()).filter(|&k| omega[k] > T::zero()).collect();
    if support.len() > 1 {
        let global: Vec<usize> = support.iter().map(|&k| idx[k]).collect();
        let sub = SubProblem::new(all, gram, &global, target, None);
        let mut warm: Vec<T> = support.iter().map(|&k| omega[k]).collect();
        sub.refine(&mut warm);
        omega.iter_mut().for_each(|w| *w = T::zero());
        for (k, &s) in support.iter().enumerate() {
            omega[s] = warm[k];
        }
    }

    for i in 0..subset.len() {
        if omega[i] == T::zero() {
            continue;
        }
        if let Some(first) = (0..i).find(|&j| subset[j].as_slice() == subset[i].as_slice()) {
            let w = omega[i];
            omega[first] += w;
            omega[i] = T::zero();
        }
    }
    Ok(SimplexWeights::from_raw(omega))
}
