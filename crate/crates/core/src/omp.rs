//! Orthogonal matching pursuit, the greedy baseline for active user detection.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// A freshly orthogonalized column shorter than this fraction of its
/// original norm is treated as lying in the span of the selected atoms.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmpConfig {
    pub max_atoms: usize,
    pub residual_tol: f64,
    /// Binarization cut applied before Hamming evaluation.
    pub threshold: f64,
}

impl OmpConfig {
    /// `⌈1.5ρN⌉` atoms, no residual stop, threshold one half.
    pub fn for_sparsity(rho: f64, n: usize) -> Self {
        // The small offset keeps ⌈1.5 · 0.1 · 2000⌉ at 300 despite rounding.
        Self {
            max_atoms: (1.5 * rho * n as f64 - 1e-9).ceil() as usize,
            residual_tol: 0.0,
            threshold: 0.5,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.max_atoms > m {
            return Err(Error::param(format!(
                "max_atoms = {} exceeds the {m} available measurements",
                self.max_atoms
            )));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::param("residual_tol must be nonnegative"));
        }
        if !self.threshold.is_finite() {
            return Err(Error::param("threshold must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpResult {
    pub x_hat: Array1<f64>,
    /// Selected columns in order of selection.
    pub support: Vec<usize>,
    /// Residual norm before the first and after every iteration.
    pub residual_norms: Vec<f64>,
    /// Set when a selected submatrix was numerically rank deficient and the
    /// coefficients came from a pseudo-inverse.
    pub rank_deficient: bool,
}

/// Incremental QR of the selected columns, kept while they stay independent.
struct Factor {
    q: Vec<Array1<f64>>,
    // Column k of R, upper part only.
    r: Vec<Vec<f64>>,
    qty: Vec<f64>,
}

impl Factor {
    /// Modified Gram-Schmidt with one reorthogonalization pass. Returns
    /// `false` when the column is dependent on the current basis.
    fn push(&mut self, column: ArrayView1<f64>, y: ArrayView1<f64>) -> bool {
        let mut v = column.to_owned();
        let original = v.dot(&v).sqrt();
        let mut coeffs = vec![0.0; self.q.len()];
        for _ in 0..2 {
            for (c, qi) in coeffs.iter_mut().zip(&self.q) {
                let proj = qi.dot(&v);
                v.scaled_add(-proj, qi);
                *c += proj;
            }
        }
        let norm = v.dot(&v).sqrt();
        if !(norm > RANK_TOLERANCE * original) {
            return false;
        }
        v /= norm;
        coeffs.push(norm);
        self.qty.push(v.dot(&y));
        self.q.push(v);
        self.r.push(coeffs);
        true
    }

    fn solve(&self) -> Vec<f64> {
        let k = self.q.len();
        let mut x = self.qty.clone();
        for i in (0..k).rev() {
            for c in i + 1..k {
                x[i] -= self.r[c][i] * x[c];
            }
            x[i] /= self.r[i][i];
        }
        x
    }
}

fn pseudo_solve(a: ArrayView2<f64>, support: &[usize], y: ArrayView1<f64>) -> Result<Vec<f64>> {
    let sub = DMatrix::from_fn(a.nrows(), support.len(), |i, k| a[(i, support[k])]);
    let rhs = DVector::from_iterator(y.len(), y.iter().copied());
    let svd = sub.svd(true, true);
    let eps = f64::EPSILON * a.nrows().max(support.len()) as f64 * svd.singular_values.max();
    let x = svd
        .solve(&rhs, eps)
        .map_err(|e| Error::Internal(format!("pseudo-inverse failed: {e}")))?;
    Ok(x.iter().copied().collect())
}

pub fn omp(a: ArrayView2<f64>, y: ArrayView1<f64>, config: &OmpConfig) -> Result<OmpResult> {
    let (m, n) = a.dim();
    if y.len() != m {
        return Err(Error::param(format!(
            "y has length {} but A has {m} rows",
            y.len()
        )));
    }
    config.validate(m)?;
    let mut factor = Factor {
        q: Vec::new(),
        r: Vec::new(),
        qty: Vec::new(),
    };
    let mut selected = vec![false; n];
    let mut support = Vec::new();
    let mut coeffs: Vec<f64> = Vec::new();
    let mut rank_deficient = false;
    let mut residual = y.to_owned();
    let mut residual_norms = vec![residual.dot(&residual).sqrt()];

    while support.len() < config.max_atoms && *residual_norms.last().unwrap() > config.residual_tol
    {
        // Row-wise accumulation keeps memory access contiguous.
        let mut corr = Array1::<f64>::zeros(n);
        for (row, &rm) in a.rows().into_iter().zip(residual.iter()) {
            corr.scaled_add(rm, &row);
        }
        let best = corr.iter().enumerate().filter(|(i, _)| !selected[*i]).fold(
            None,
            |acc: Option<(usize, f64)>, (i, c)| match acc {
                Some((_, b)) if b >= c.abs() => acc,
                _ => Some((i, c.abs())),
            },
        );
        let Some((k, c)) = best else { break };
        if c == 0.0 {
            break;
        }
        selected[k] = true;
        support.push(k);
        if !rank_deficient && factor.push(a.column(k), y) {
            // The new basis vector removes its share of the residual.
            let q = factor.q.last().unwrap();
            let proj = q.dot(&residual);
            residual.scaled_add(-proj, q);
        } else {
            rank_deficient = true;
            coeffs = pseudo_solve(a, &support, y)?;
            residual = y.to_owned();
            for (&col, &x) in support.iter().zip(&coeffs) {
                residual.scaled_add(-x, &a.column(col));
            }
        }
        residual_norms.push(residual.dot(&residual).sqrt());
    }

    if !rank_deficient {
        coeffs = factor.solve();
    }
    let mut x_hat = Array1::zeros(n);
    for (&col, &x) in support.iter().zip(&coeffs) {
        x_hat[col] = x;
    }
    Ok(OmpResult {
        x_hat,
        support,
        residual_norms,
        rank_deficient,
    })
}

/// `1` where the entry is strictly above the threshold, else `0`.
pub fn binarize(x: ArrayView1<f64>, threshold: f64) -> Array1<f64> {
    x.mapv(|v| if v > threshold { 1.0 } else { 0.0 })
}

/// Stacks per-channel systems sharing one unknown vector into a single
/// system with `J·M` rows.
pub fn stack_channels(
    matrices: &[Array2<f64>],
    observations: &[Array1<f64>],
) -> Result<(Array2<f64>, Array1<f64>)> {
    if matrices.is_empty() || matrices.len() != observations.len() {
        return Err(Error::param("need one observation vector per matrix"));
    }
    let n = matrices[0].ncols();
    let rows: usize = matrices.iter().map(|a| a.nrows()).sum();
    let mut a = Array2::zeros((rows, n));
    let mut y = Array1::zeros(rows);
    let mut offset = 0;
    for (aj, yj) in matrices.iter().zip(observations) {
        if aj.ncols() != n || aj.nrows() != yj.len() {
            return Err(Error::param("inconsistent channel dimensions"));
        }
        let m = aj.nrows();
        a.slice_mut(s![offset..offset + m, ..]).assign(aj);
        y.slice_mut(s![offset..offset + m]).assign(yj);
        offset += m;
    }
    debug_assert_eq!(a.len_of(Axis(0)), offset);
    Ok((a, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_matrix, MatrixKind};
    use approx::assert_relative_eq;
    use ndarray::array;

    fn cfg(max_atoms: usize) -> OmpConfig {
        OmpConfig {
            max_atoms,
            residual_tol: 1e-9,
            threshold: 0.5,
        }
    }

    #[test]
    fn one_sparse_exact() {
        let a = generate_matrix(30, 80, MatrixKind::GaussianRaw, 1).unwrap();
        let y = a.column(17).to_owned() * 3.0;
        let r = omp(a.view(), y.view(), &cfg(10)).unwrap();
        assert_eq!(r.support, vec![17]);
        assert_relative_eq!(r.x_hat[17], 3.0, epsilon = 1e-10);
        assert_eq!(r.residual_norms.len(), 2);
        assert!(!r.rank_deficient);
    }

    #[test]
    fn zero_observation() {
        let a = generate_matrix(10, 20, MatrixKind::GaussianRaw, 2).unwrap();
        let r = omp(a.view(), Array1::zeros(10).view(), &cfg(5)).unwrap();
        assert!(r.support.is_empty());
        assert!(r.x_hat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_column_triggers_pseudo_solve() {
        let mut a = generate_matrix(6, 4, MatrixKind::GaussianRaw, 3).unwrap();
        let c0 = a.column(0).to_owned();
        a.column_mut(1).assign(&c0);
        let y = &c0 * 2.0 + a.column(2).to_owned() * 0.3;
        let r = omp(
            a.view(),
            y.view(),
            &OmpConfig {
                max_atoms: 4,
                residual_tol: 0.0,
                threshold: 0.5,
            },
        )
        .unwrap();
        let mut sorted = r.support.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), r.support.len());
        assert!(r.rank_deficient);
        assert!(r.residual_norms.last().unwrap() < &1e-9);
    }

    #[test]
    fn max_atoms_cannot_exceed_rows() {
        let a = generate_matrix(5, 10, MatrixKind::GaussianRaw, 4).unwrap();
        assert!(omp(a.view(), Array1::zeros(5).view(), &cfg(6)).is_err());
    }

    #[test]
    fn default_budget() {
        assert_eq!(OmpConfig::for_sparsity(0.1, 2000).max_atoms, 300);
        assert_eq!(OmpConfig::for_sparsity(0.1, 2001).max_atoms, 301);
    }

    #[test]
    fn binarize_is_strict() {
        assert_eq!(binarize(array![0.9, 0.1].view(), 0.5), array![1.0, 0.0]);
        assert_eq!(binarize(array![0.5, 0.5].view(), 0.5), array![0.0, 0.0]);
    }

    #[test]
    fn stacking_preserves_products() {
        let a1 = generate_matrix(3, 5, MatrixKind::GaussianRaw, 5).unwrap();
        let a2 = generate_matrix(4, 5, MatrixKind::GaussianRaw, 6).unwrap();
        let x = array![1.0, 0.0, 0.0, 1.0, 0.0];
        let (a, y) = stack_channels(&[a1.clone(), a2.clone()], &[a1.dot(&x), a2.dot(&x)]).unwrap();
        assert_eq!(a.dim(), (7, 5));
        for (u, v) in a.dot(&x).iter().zip(y.iter()) {
            assert_relative_eq!(u, v, epsilon = 1e-14);
        }
    }
}
