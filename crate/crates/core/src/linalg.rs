//! Small dense kernels used by the active-set phase of the hull solver.

use crate::scalar::Real;

/// Solves `a x = b` for square row-major `a` (n × n) by Gaussian elimination with
/// partial pivoting. Returns `None` when a pivot falls below `rel_tol` times the
/// largest entry of `a`.
pub fn solve<T: Real>(mut a: Vec<T>, n: usize, mut b: Vec<T>, rel_tol: T) -> Option<Vec<T>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if scale == T::zero() {
        return None;
    }
    let tol = rel_tol * scale;
    for col in 0..n {
        let (pivot, best) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .fold((col, T::neg_infinity()), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= tol {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for r in col + 1..n {
            let factor = a[r * n + col] / diag;
            if factor == T::zero() {
                continue;
            }
            for k in col..n {
                let v = a[col * n + k];
                a[r * n + k] -= factor * v;
            }
            let v = b[col];
            b[r] -= factor * v;
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for k in r + 1..n {
            acc -= a[r * n + k] * x[k];
        }
        x[r] = acc / a[r * n + r];
    }
    Some(x)
}

/// A non-zero `z` with `m z = 0`, or `None` when the columns of `m` are numerically
/// independent. `m` is given as rows of equal length; entries should be O(1).
pub fn null_vector<T: Real>(rows: &[Vec<T>], tol: T) -> Option<Vec<T>> {
    let cols = rows.first()?.len();
    let mut m: Vec<Vec<T>> = rows.to_vec();
    let nrows = m.len();
    let mut pivot_cols: Vec<usize> = Vec::new();
    for col in 0..cols {
        let rank = pivot_cols.len();
        let best = (rank..nrows)
            .map(|r| (r, m[r][col].abs()))
            .fold(None, |acc: Option<(usize, T)>, x| match acc {
                Some(a) if a.1 >= x.1 => Some(a),
                _ => Some(x),
            });
        match best {
            Some((r, v)) if v > tol => {
                m.swap(rank, r);
                let p = m[rank][col];
                for k in 0..cols {
                    m[rank][k] /= p;
                }
                for other in 0..nrows {
                    if other != rank {
                        let f = m[other][col];
                        if f != T::zero() {
                            for k in 0..cols {
                                let v = m[rank][k];
                                m[other][k] -= f * v;
                            }
                        }
                    }
                }
                pivot_cols.push(col);
            }
            _ => {
                let mut z = vec![T::zero(); cols];
                z[col] = T::one();
                for (r, &pc) in pivot_cols.iter().enumerate() {
                    z[pc] = -m[r][col];
                }
                return Some(z);
            }
        }
    }
    None
}
