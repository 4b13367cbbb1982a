//! Compressed-row operators, banded LU, a Jacobi-preconditioned CG fallback,
//! shift-invert subspace iteration for the eigenvalues of smallest modulus,
//! and assembly of the discrete Schrödinger and clamped squared operators.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense;
use crate::error::{Error, Result};
use crate::mesh::{Field, Grid};

/// An eigenvalue counts as zero when `|λ| ≤ KERNEL_TOLERANCE · ‖A‖∞`.
pub const KERNEL_TOLERANCE: f64 = 1e-6;

/// Relative residual bound every linear solve must meet.
pub const SOLVE_CONTRACT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseOperator {
    /// Builds an operator from `(row, col, value)` triplets. Duplicates are
    /// summed and exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut rows = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet out of range");
            if let (Some(&lr), Some(&lc)) = (rows.last(), col_idx.last()) {
                if lr == r && lc == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            col_idx.push(c);
            values.push(v);
        }
        let mut keep_cols = Vec::with_capacity(col_idx.len());
        let mut keep_vals = Vec::with_capacity(values.len());
        for ((r, c), v) in rows.into_iter().zip(col_idx).zip(values) {
            if v != 0.0 {
                row_ptr[r + 1] += 1;
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut op = SparseOperator {
            nrows,
            ncols,
            row_ptr,
            col_idx: keep_cols,
            values: keep_vals,
            symmetric: false,
        };
        op.symmetric = op.symmetry_defect() <= 1e-14;
        op
    }

    pub fn identity(dim: usize) -> Self {
        SparseOperator::from_triplets(dim, dim, (0..dim).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Square dimension (number of rows).
    pub fn dim(&self) -> usize {
        self.nrows
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn to_triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    /// Largest `|a_ij − a_ji| / max(1, |a_ij|)`; infinite for rectangular operators.
    pub fn symmetry_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                let t = self.get(c, r);
                worst = worst.max((v - t).abs() / v.abs().max(1.0));
            }
        }
        worst
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (r, out) in y.iter_mut().enumerate().take(self.nrows) {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *out = s;
        }
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * xr;
            }
        }
        y
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|r| self.get(r, r)).collect()
    }

    /// `(lower, upper)` bandwidths.
    pub fn bandwidth(&self) -> (usize, usize) {
        let mut lo = 0;
        let mut up = 0;
        for r in 0..self.nrows {
            for (c, _) in self.row(r) {
                if c < r {
                    lo = lo.max(r - c);
                } else {
                    up = up.max(c - r);
                }
            }
        }
        (lo, up)
    }

    /// `self + shift·I` for a square operator.
    pub fn shifted(&self, shift: f64) -> SparseOperator {
        let mut t = self.to_triplets();
        t.extend((0..self.nrows).map(|i| (i, i, shift)));
        SparseOperator::from_triplets(self.nrows, self.ncols, t)
    }

    fn contract_bound(&self, x: &[f64], b: &[f64]) -> f64 {
        SOLVE_CONTRACT * (self.norm_inf() * dense::norm_inf(x) + dense::norm_inf(b))
    }

    /// `‖Ax − b‖∞`
    pub fn residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = self.matvec(x);
        ax.iter().zip(b).fold(0.0, |m, (p, q)| m.max((p - q).abs()))
    }
}

/// Banded LU factorization with partial pivoting. Immutable after
/// construction, so one factorization can serve concurrent solves.
#[derive(Debug, Clone)]
pub struct Factorization {
    op: Arc<SparseOperator>,
    n: usize,
    kl: usize,
    width: usize,
    band: Vec<f64>,
    lower: Vec<f64>,
    pivots: Vec<usize>,
}

impl Factorization {
    /// Factorizes `op`; pivots below the kernel tolerance are reported as a
    /// singularity naming the number of such pivots.
    pub fn new(op: Arc<SparseOperator>) -> Result<Factorization> {
        Factorization::with_pivot_floor(op, KERNEL_TOLERANCE)
    }

    /// Factorizes `op`, failing only when a pivot falls below
    /// `floor · ‖A‖∞`. Used for deliberately shifted operators.
    pub fn with_pivot_floor(op: Arc<SparseOperator>, floor: f64) -> Result<Factorization> {
        if op.nrows != op.ncols {
            return Err(Error::invalid("sparse", "factorization needs a square operator"));
        }
        let n = op.nrows;
        let (kl, ku) = op.bandwidth();
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for r in 0..n {
            for (c, v) in op.row(r) {
                band[r * width + (c + kl - r)] = v;
            }
        }
        let mut lower = vec![0.0; n * kl.max(1)];
        let mut pivots = vec![0usize; n];
        let scale = op.norm_inf();
        let mut near_null = 0;
        let mut exact_zero = false;
        let idx = |r: usize, c: usize| r * width + (c + kl - r);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = band[idx(k, k)].abs();
            for r in k + 1..=last_row {
                let v = band[idx(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            pivots[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    band.swap(idx(k, c), idx(p, c));
                }
            }
            let piv = band[idx(k, k)];
            if piv.abs() <= floor * scale {
                near_null += 1;
                exact_zero = true;
                if piv == 0.0 {
                    continue;
                }
            }
            for r in k + 1..=last_row {
                let l = band[idx(r, k)] / piv;
                lower[k * kl.max(1) + (r - k - 1)] = l;
                band[idx(r, k)] = 0.0;
                if l != 0.0 {
                    let src = idx(k, k + 1);
                    let dst = idx(r, k + 1);
                    let len = last_col - k;
                    for t in 0..len {
                        band[dst + t] -= l * band[src + t];
                    }
                }
            }
        }
        if exact_zero {
            return Err(Error::Singular { near_null });
        }
        Ok(Factorization {
            op,
            n,
            kl,
            width,
            band,
            lower,
            pivots,
        })
    }

    pub fn operator(&self) -> &Arc<SparseOperator> {
        &self.op
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let kl = self.kl;
        let w = self.width;
        let mut y = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                y.swap(k, p);
            }
            let yk = y[k];
            if yk != 0.0 {
                let last = (k + kl).min(n - 1);
                for r in k + 1..=last {
                    y[r] -= self.lower[k * kl.max(1) + (r - k - 1)] * yk;
                }
            }
        }
        let ku_total = w - 1 - kl;
        for k in (0..n).rev() {
            let base = k * w + kl;
            let last = (k + ku_total).min(n - 1);
            let mut s = y[k];
            for c in k + 1..=last {
                s -= self.band[base + (c - k)] * y[c];
            }
            y[k] = s / self.band[base];
        }
        y
    }

    /// Solves `A x = b`, refining once if needed, and enforces the residual
    /// contract.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::LengthMismatch {
                module: "sparse",
                expected: self.n,
                got: b.len(),
            });
        }
        let mut x = self.raw_solve(b);
        for _ in 0..2 {
            let bound = self.op.contract_bound(&x, b);
            let ax = self.op.matvec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
            let res = dense::norm_inf(&r);
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::Singular { near_null: 1 });
            }
            if res <= bound * 1e-3 {
                return Ok(x);
            }
            let dx = self.raw_solve(&r);
            dense::axpy(&mut x, 1.0, &dx);
        }
        let res = self.op.residual(&x, b);
        let bound = self.op.contract_bound(&x, b);
        if res <= bound {
            Ok(x)
        } else {
            Err(Error::ResidualContract { residual: res, bound })
        }
    }
}

/// Jacobi-preconditioned conjugate gradients for symmetric definite
/// operators of either sign. Meets the same residual contract as the direct
/// solver or reports failure.
pub fn pcg(op: &SparseOperator, b: &[f64], max_iter: usize) -> Result<Vec<f64>> {
    let n = op.dim();
    let diag = op.diagonal();
    let sign = if diag.iter().all(|&d| d < 0.0) { -1.0 } else { 1.0 };
    if diag.iter().any(|&d| sign * d <= 0.0) {
        return Err(Error::invalid("sparse", "CG needs a definite diagonal"));
    }
    let rhs: Vec<f64> = b.iter().map(|v| sign * v).collect();
    let apply = |x: &[f64]| -> Vec<f64> { op.matvec(x).into_iter().map(|v| sign * v).collect() };
    let mut x = vec![0.0; n];
    let mut r = rhs.clone();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / (sign * d)).collect();
    let mut p = z.clone();
    let mut rz = dense::dot(&r, &z);
    let scale = op.norm_inf();
    for _ in 0..max_iter {
        if dense::norm_inf(&r) <= 1e-3 * SOLVE_CONTRACT * (scale * dense::norm_inf(&x) + dense::norm_inf(b)) {
            break;
        }
        let ap = apply(&p);
        let pap = dense::dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Singular { near_null: 1 });
        }
        let alpha = rz / pap;
        dense::axpy(&mut x, alpha, &p);
        dense::axpy(&mut r, -alpha, &ap);
        for ((zi, ri), d) in z.iter_mut().zip(&r).zip(&diag) {
            *zi = ri / (sign * d);
        }
        let rz_new = dense::dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    let res = op.residual(&x, b);
    let bound = op.contract_bound(&x, b);
    if res <= bound {
        Ok(x)
    } else {
        Err(Error::ResidualContract { residual: res, bound })
    }
}

/// Default memory budget for band storage before switching to CG.
pub const DIRECT_MEMORY_LIMIT: usize = 512 << 20;

/// Direct banded factorization, or CG when the band would not fit in the
/// memory budget.
#[derive(Debug, Clone)]
pub enum LinearSolver {
    Direct(Factorization),
    Iterative(Arc<SparseOperator>),
}

impl LinearSolver {
    pub fn new(op: Arc<SparseOperator>) -> Result<LinearSolver> {
        LinearSolver::with_limit(op, DIRECT_MEMORY_LIMIT)
    }

    pub fn with_limit(op: Arc<SparseOperator>, bytes: usize) -> Result<LinearSolver> {
        LinearSolver::build(op, bytes, KERNEL_TOLERANCE)
    }

    /// Direct solver for an operator shifted away from a known kernel.
    pub fn shifted(op: Arc<SparseOperator>, pivot_floor: f64) -> Result<LinearSolver> {
        LinearSolver::build(op, DIRECT_MEMORY_LIMIT, pivot_floor)
    }

    fn build(op: Arc<SparseOperator>, bytes: usize, floor: f64) -> Result<LinearSolver> {
        let (kl, ku) = op.bandwidth();
        let need = op.dim() * (2 * kl + ku + 1 + kl) * 8;
        if need <= bytes || !op.is_symmetric() {
            Ok(LinearSolver::Direct(Factorization::with_pivot_floor(op, floor)?))
        } else {
            Ok(LinearSolver::Iterative(op))
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            LinearSolver::Direct(f) => f.solve(b),
            LinearSolver::Iterative(op) => pcg(op, b, 20 * op.dim()),
        }
    }

    pub fn operator(&self) -> &Arc<SparseOperator> {
        match self {
            LinearSolver::Direct(f) => f.operator(),
            LinearSolver::Iterative(op) => op,
        }
    }
}

/// One-shot solve with a fresh factorization.
pub fn solve(op: &SparseOperator, b: &[f64]) -> Result<Vec<f64>> {
    LinearSolver::new(Arc::new(op.clone()))?.solve(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// The `k` eigenpairs of smallest modulus of a symmetric operator.
pub fn smallest_eigenpairs(op: &SparseOperator, k: usize, tol: f64) -> Result<Vec<EigenPair>> {
    smallest_eigenpairs_deflated(op, k, tol, &[])
}

/// Like [`smallest_eigenpairs`] but restricted to the orthogonal complement
/// of the orthonormal vectors in `deflate`.
pub fn smallest_eigenpairs_deflated(
    op: &SparseOperator,
    k: usize,
    tol: f64,
    deflate: &[Vec<f64>],
) -> Result<Vec<EigenPair>> {
    let dim = op.dim();
    if !op.is_symmetric() {
        return Err(Error::invalid("sparse", "eigen solver needs a symmetric operator"));
    }
    let free = dim.saturating_sub(deflate.len());
    if k == 0 || free == 0 {
        return Ok(Vec::new());
    }
    let k = k.min(free);
    let p = (2 * k + 4).min(free);
    let scale = op.norm_inf();
    // A small shift keeps the factorization regular when the operator has an
    // exact kernel; it is far below the kernel tolerance.
    let sigma = core::f64::consts::FRAC_1_SQRT_2 * 1e-7 * scale;
    let shifted = Factorization::with_pivot_floor(Arc::new(op.shifted(-sigma)), 1e-14)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x005e_ed0f_e16e);
    let mut block: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..dim).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();
    dense::orthonormalize(&mut block, deflate);

    let max_iter = 400;
    let mut worst = f64::INFINITY;
    for _ in 0..max_iter {
        let mut next = Vec::with_capacity(p);
        for v in &block {
            next.push(shifted.raw_solve(v));
        }
        if !dense::orthonormalize(&mut next, deflate) {
            return Err(Error::EigenNonConvergence {
                iterations: 0,
                residual: f64::INFINITY,
            });
        }
        let av: Vec<Vec<f64>> = next.iter().map(|v| op.matvec(v)).collect();
        let h = DMatrix::from_fn(p, p, |i, j| dense::dot(&next[i], &av[j]));
        let (vals, vecs) = dense::symmetric_eigen(h);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| vals[a].abs().partial_cmp(&vals[b].abs()).unwrap());
        let mut ritz = Vec::with_capacity(p);
        let mut ritz_av = Vec::with_capacity(p);
        for &c in &order {
            let mut x = vec![0.0; dim];
            let mut ax = vec![0.0; dim];
            for i in 0..p {
                let w = vecs[(i, c)];
                dense::axpy(&mut x, w, &next[i]);
                dense::axpy(&mut ax, w, &av[i]);
            }
            ritz.push(x);
            ritz_av.push(ax);
        }
        worst = 0.0;
        for (i, &c) in order.iter().enumerate().take(k) {
            let lambda = vals[c];
            let r: Vec<f64> = ritz_av[i]
                .iter()
                .zip(&ritz[i])
                .map(|(a, x)| a - lambda * x)
                .collect();
            worst = worst.max(dense::norm2(&r));
        }
        block = ritz;
        if worst <= tol * scale {
            dense::orthonormalize(&mut block, deflate);
            return Ok(order
                .iter()
                .take(k)
                .zip(block)
                .map(|(&c, vector)| EigenPair {
                    value: vals[c],
                    vector,
                })
                .collect());
        }
    }
    Err(Error::EigenNonConvergence {
        iterations: max_iter,
        residual: worst / scale,
    })
}

/// `Δ_h + diag(q)` on interior nodes with the boundary values eliminated.
pub fn assemble_schrodinger(q: &Field) -> SparseOperator {
    let grid = q.grid();
    let n = grid.n();
    let m = n - 2;
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut t = Vec::with_capacity(5 * m * m);
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let r = grid.interior_index(i, j);
            t.push((r, r, -4.0 * inv_h2 + q.at(i, j)));
            if i > 1 {
                t.push((r, r - 1, inv_h2));
            }
            if i < n - 2 {
                t.push((r, r + 1, inv_h2));
            }
            if j > 1 {
                t.push((r, r - m, inv_h2));
            }
            if j < n - 2 {
                t.push((r, r + m, inv_h2));
            }
        }
    }
    SparseOperator::from_triplets(m * m, m * m, t)
}

/// Nodes kept free in the clamped space: at least three layers away from the
/// boundary. Fields vanishing on the outer three layers have zero trace and
/// zero three-point normal derivative exactly.
pub const CLAMPED_LAYERS: usize = 3;

pub fn clamped_len(grid: &Grid) -> usize {
    let m = grid.n() - 2 * CLAMPED_LAYERS;
    m * m
}

pub fn clamped_index(grid: &Grid, i: usize, j: usize) -> usize {
    let m = grid.n() - 2 * CLAMPED_LAYERS;
    (j - CLAMPED_LAYERS) * m + (i - CLAMPED_LAYERS)
}

pub fn clamped_node(grid: &Grid, k: usize) -> (usize, usize) {
    let m = grid.n() - 2 * CLAMPED_LAYERS;
    (k % m + CLAMPED_LAYERS, k / m + CLAMPED_LAYERS)
}

/// `Δ_h + diag(q)` restricted to the clamped space, mapping into all
/// interior nodes (rows in interior ordering, columns in clamped ordering).
pub fn assemble_clamped_restriction(q: &Field) -> SparseOperator {
    let grid = q.grid();
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let lo = CLAMPED_LAYERS;
    let hi = n - 1 - CLAMPED_LAYERS;
    let mut t = Vec::new();
    for j in lo..=hi {
        for i in lo..=hi {
            let c = clamped_index(grid, i, j);
            t.push((grid.interior_index(i, j), c, -4.0 * inv_h2 + q.at(i, j)));
            t.push((grid.interior_index(i - 1, j), c, inv_h2));
            t.push((grid.interior_index(i + 1, j), c, inv_h2));
            t.push((grid.interior_index(i, j - 1), c, inv_h2));
            t.push((grid.interior_index(i, j + 1), c, inv_h2));
        }
    }
    SparseOperator::from_triplets(grid.interior_len(), clamped_len(grid), t)
}

/// The squared operator `Aᵀ A` for the clamped restriction `A`; deep inside
/// the square this is the 13-point stencil of `(Δ_h + q)²`.
pub fn assemble_bilaplacian_clamped(q: &Field) -> SparseOperator {
    let a = assemble_clamped_restriction(q);
    let mut cols_of_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); a.nrows()];
    for (r, c, v) in a.to_triplets() {
        cols_of_row[r].push((c, v));
    }
    let mut t = Vec::new();
    for entries in &cols_of_row {
        for &(ca, va) in entries {
            for &(cb, vb) in entries {
                if ca <= cb {
                    t.push((ca, cb, va * vb));
                }
            }
        }
    }
    let upper = SparseOperator::from_triplets(a.ncols(), a.ncols(), t);
    let mut full = Vec::with_capacity(2 * upper.nnz());
    for (r, c, v) in upper.to_triplets() {
        full.push((r, c, v));
        if r != c {
            full.push((c, r, v));
        }
    }
    SparseOperator::from_triplets(a.ncols(), a.ncols(), full)
}
