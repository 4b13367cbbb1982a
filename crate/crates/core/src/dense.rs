//! Thin helpers over `nalgebra` for the small dense problems that appear in
//! Rayleigh–Ritz steps, Gram matrices and regularized normal equations.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

/// Eigenpairs of a symmetric matrix, columns of the second item are the
/// eigenvectors; order as returned by the decomposition.
pub(crate) fn symmetric_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Solves `m x = b` for symmetric positive definite `m`; `None` when the
/// Cholesky factorization fails.
pub(crate) fn cholesky_solve(m: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    m.cholesky().map(|c| c.solve(b))
}

/// Solves a general square system with partial-pivoting LU.
pub(crate) fn lu_solve(m: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    m.lu().solve(b)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(y: &mut [f64], t: f64, x: &[f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += t * b;
    }
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    num_traits::Float::sqrt(dot(a, a))
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Orthonormalizes `vectors` in place by two passes of modified
/// Gram–Schmidt against `fixed` and each other; returns false if a vector
/// collapses.
pub(crate) fn orthonormalize(vectors: &mut [Vec<f64>], fixed: &[Vec<f64>]) -> bool {
    for idx in 0..vectors.len() {
        for _ in 0..2 {
            for f in fixed {
                let c = dot(&vectors[idx], f);
                axpy(&mut vectors[idx], -c, f);
            }
            for prev in 0..idx {
                let (head, tail) = vectors.split_at_mut(idx);
                let c = dot(&tail[0], &head[prev]);
                axpy(&mut tail[0], -c, &head[prev]);
            }
        }
        let nrm = norm2(&vectors[idx]);
        if !(nrm > 1e-300) {
            return false;
        }
        for v in vectors[idx].iter_mut() {
            *v /= nrm;
        }
    }
    true
}
