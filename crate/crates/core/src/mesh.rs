//! Uniform tensor grid on the unit square, nodal fields, boundary traces and
//! the discrete calculus shared by every solver.
//!
//! Node `(i, j)` sits at `(i·h, j·h)` and is stored at index `j·n + i`.
//! Boundary nodes are listed counterclockwise starting at the origin.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::{Add, Mul, Neg, Sub};

use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, PartialEq, Eq)]
pub struct Grid {
    n: usize,
    boundary_order: Vec<usize>,
    boundary_slot: Vec<Option<usize>>,
}

impl Grid {
    pub fn new(n: usize) -> Result<Arc<Grid>> {
        if n < 9 {
            return Err(Error::GridTooSmall(n));
        }
        let mut order = Vec::with_capacity(4 * (n - 1));
        for i in 0..n - 1 {
            order.push(i);
        }
        for j in 0..n - 1 {
            order.push(j * n + n - 1);
        }
        for i in (1..n).rev() {
            order.push((n - 1) * n + i);
        }
        for j in (1..n).rev() {
            order.push(j * n);
        }
        let mut slot = vec![None; n * n];
        for (p, &k) in order.iter().enumerate() {
            slot[k] = Some(p);
        }
        Ok(Arc::new(Grid {
            n,
            boundary_order: order,
            boundary_slot: slot,
        }))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    pub fn node_count(&self) -> usize {
        self.n * self.n
    }

    pub fn boundary_len(&self) -> usize {
        4 * (self.n - 1)
    }

    pub fn interior_len(&self) -> usize {
        (self.n - 2) * (self.n - 2)
    }

    pub fn boundary_order(&self) -> &[usize] {
        &self.boundary_order
    }

    /// Position of a node in the boundary order, if it is a boundary node.
    pub fn boundary_slot(&self, node: usize) -> Option<usize> {
        self.boundary_slot[node]
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn coords(&self, node: usize) -> (usize, usize) {
        (node % self.n, node / self.n)
    }

    /// Physical coordinate of grid line `i`; exact at both ends.
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 / (self.n - 1) as f64
    }

    pub fn position(&self, node: usize) -> (f64, f64) {
        let (i, j) = self.coords(node);
        (self.coord(i), self.coord(j))
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.n - 1 || j == self.n - 1
    }

    /// Distance (in nodes) to the nearest boundary line.
    pub fn layer(&self, i: usize, j: usize) -> usize {
        let m = self.n - 1;
        i.min(j).min(m - i).min(m - j)
    }

    /// Index of an interior node in the unknown vector of a Dirichlet problem.
    pub fn interior_index(&self, i: usize, j: usize) -> usize {
        (j - 1) * (self.n - 2) + (i - 1)
    }

    pub fn interior_node(&self, k: usize) -> (usize, usize) {
        let m = self.n - 2;
        (k % m + 1, k / m + 1)
    }

    /// Arclength coordinate of the `p`-th boundary node (perimeter 4).
    pub fn arclength(&self, p: usize) -> f64 {
        p as f64 * self.h()
    }

    pub(crate) fn same(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
        Arc::ptr_eq(a, b) || a.n == b.n
    }
}

fn check_finite(values: &[f64], module: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { module })
    }
}

/// Real values on every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.node_count() {
            return Err(Error::LengthMismatch {
                module: "mesh",
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        check_finite(&values, "mesh")?;
        Ok(Field {
            grid: grid.clone(),
            values,
        })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Field {
        Field::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Field {
        Field {
            grid: grid.clone(),
            values: vec![c; grid.node_count()],
        }
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(grid: &Arc<Grid>, mut f: impl FnMut(f64, f64) -> f64) -> Field {
        let n = grid.n();
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                values.push(f(grid.coord(i), grid.coord(j)));
            }
        }
        Field {
            grid: grid.clone(),
            values,
        }
    }

    /// Builds a field from interior unknowns and Dirichlet values.
    pub fn from_interior(trace: &BoundaryField, interior: &[f64]) -> Field {
        let grid = trace.grid();
        let mut u = trace.embed();
        let m = grid.n() - 2;
        for (k, &v) in interior.iter().enumerate() {
            let (i, j) = (k % m + 1, k / m + 1);
            u.values[grid.index(i, j)] = v;
        }
        u
    }

    pub fn from_interior_zero(grid: &Arc<Grid>, interior: &[f64]) -> Field {
        Field::from_interior(&BoundaryField::zeros(grid), interior)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.index(i, j);
        self.values[k] = v;
    }

    /// Interior values in unknown ordering.
    pub fn interior(&self) -> Vec<f64> {
        let n = self.grid.n();
        let mut out = Vec::with_capacity(self.grid.interior_len());
        for j in 1..n - 1 {
            out.extend_from_slice(&self.values[j * n + 1..j * n + n - 1]);
        }
        out
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if Grid::same(&self.grid, &other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch { module: "mesh" })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert!(Grid::same(&self.grid, &other.grid));
        Field {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, t: f64) -> Field {
        self.map(|v| t * v)
    }

    /// `self += t·x`
    pub fn axpy(&mut self, t: f64, x: &Field) {
        for (a, b) in self.values.iter_mut().zip(&x.values) {
            *a += t * b;
        }
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sup norm over interior nodes only.
    pub fn interior_norm_inf(&self) -> f64 {
        let n = self.grid.n();
        let mut m: f64 = 0.0;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                m = m.max(self.at(i, j).abs());
            }
        }
        m
    }

    /// Sup of the function, its first difference quotients and its second
    /// difference quotients (including the mixed one).
    pub fn surrogate_norm(&self) -> f64 {
        let n = self.grid.n();
        let h = self.grid.h();
        let u = |i: usize, j: usize| self.values[j * n + i];
        let mut m = self.norm_inf();
        for j in 0..n {
            for i in 0..n {
                if i + 1 < n {
                    m = m.max(((u(i + 1, j) - u(i, j)) / h).abs());
                }
                if j + 1 < n {
                    m = m.max(((u(i, j + 1) - u(i, j)) / h).abs());
                }
                if i + 2 < n {
                    m = m.max(((u(i + 2, j) - 2.0 * u(i + 1, j) + u(i, j)) / (h * h)).abs());
                }
                if j + 2 < n {
                    m = m.max(((u(i, j + 2) - 2.0 * u(i, j + 1) + u(i, j)) / (h * h)).abs());
                }
                if i + 1 < n && j + 1 < n {
                    let d = u(i + 1, j + 1) - u(i + 1, j) - u(i, j + 1) + u(i, j);
                    m = m.max((d / (h * h)).abs());
                }
            }
        }
        m
    }

    /// Discrete H¹ norm: trapezoid L² norm plus L² norm of first differences.
    pub fn h1_norm(&self) -> f64 {
        let n = self.grid.n();
        let h = self.grid.h();
        let l2 = inner_domain(self, self).unwrap_or(0.0);
        let mut grad = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i + 1 < n {
                    let d = (self.at(i + 1, j) - self.at(i, j)) / h;
                    grad += d * d * h * h * edge_weight(j, n);
                }
                if j + 1 < n {
                    let d = (self.at(i, j + 1) - self.at(i, j)) / h;
                    grad += d * d * h * h * edge_weight(i, n);
                }
            }
        }
        (l2 + grad).sqrt()
    }

    /// Content hash of the values (FNV-1a over the bit patterns).
    pub fn content_hash(&self) -> u64 {
        fnv1a(self.grid.n() as u64, &self.values)
    }
}

fn edge_weight(k: usize, n: usize) -> f64 {
    if k == 0 || k == n - 1 {
        0.5
    } else {
        1.0
    }
}

pub(crate) fn fnv1a(seed: u64, values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<&Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        rhs.scale(self)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.map(|v| -v)
    }
}

/// Real values on the boundary nodes, in boundary order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl BoundaryField {
    pub fn new(grid: &Arc<Grid>, values: Vec<f64>) -> Result<BoundaryField> {
        if values.len() != grid.boundary_len() {
            return Err(Error::LengthMismatch {
                module: "mesh",
                expected: grid.boundary_len(),
                got: values.len(),
            });
        }
        check_finite(&values, "mesh")?;
        Ok(BoundaryField {
            grid: grid.clone(),
            values,
        })
    }

    pub fn zeros(grid: &Arc<Grid>) -> BoundaryField {
        BoundaryField::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> BoundaryField {
        BoundaryField {
            grid: grid.clone(),
            values: vec![c; grid.boundary_len()],
        }
    }

    /// Samples `f(x, y)` at the boundary nodes.
    pub fn from_fn(grid: &Arc<Grid>, mut f: impl FnMut(f64, f64) -> f64) -> BoundaryField {
        let values = grid
            .boundary_order()
            .iter()
            .map(|&k| {
                let (x, y) = grid.position(k);
                f(x, y)
            })
            .collect();
        BoundaryField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Field equal to `self` on the boundary and zero inside.
    pub fn embed(&self) -> Field {
        let mut u = Field::zeros(&self.grid);
        for (p, &k) in self.grid.boundary_order().iter().enumerate() {
            u.values[k] = self.values[p];
        }
        u
    }

    pub fn check_same_grid(&self, other: &BoundaryField) -> Result<()> {
        if Grid::same(&self.grid, &other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch { module: "mesh" })
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> BoundaryField {
        BoundaryField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &BoundaryField, f: impl Fn(f64, f64) -> f64) -> BoundaryField {
        debug_assert!(Grid::same(&self.grid, &other.grid));
        BoundaryField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, t: f64) -> BoundaryField {
        self.map(|v| t * v)
    }

    pub fn axpy(&mut self, t: f64, x: &BoundaryField) {
        for (a, b) in self.values.iter_mut().zip(&x.values) {
            *a += t * b;
        }
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// L²(∂Ω) norm with the boundary trapezoid rule.
    pub fn norm_l2(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.h()).sqrt()
    }

    /// Sup of the values and of tangential difference quotients up to
    /// `order` (at most 2) along the closed boundary loop.
    pub fn surrogate_norm(&self, order: usize) -> f64 {
        let h = self.grid.h();
        let len = self.values.len();
        let v = |p: usize| self.values[p % len];
        let mut m = self.norm_inf();
        for p in 0..len {
            if order >= 1 {
                m = m.max(((v(p + 1) - v(p)) / h).abs());
            }
            if order >= 2 {
                m = m.max(((v(p + 2) - 2.0 * v(p + 1) + v(p)) / (h * h)).abs());
            }
        }
        m
    }

    pub fn content_hash(&self) -> u64 {
        fnv1a(self.grid.n() as u64 ^ 0xb0, &self.values)
    }
}

impl Add for &BoundaryField {
    type Output = BoundaryField;
    fn add(self, rhs: &BoundaryField) -> BoundaryField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &BoundaryField {
    type Output = BoundaryField;
    fn sub(self, rhs: &BoundaryField) -> BoundaryField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<&BoundaryField> for f64 {
    type Output = BoundaryField;
    fn mul(self, rhs: &BoundaryField) -> BoundaryField {
        rhs.scale(self)
    }
}

/// Five-point Laplacian at interior nodes; zero on the boundary.
pub fn laplacian(u: &Field) -> Field {
    let grid = u.grid();
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let v = u.values();
    let mut out = vec![0.0; n * n];
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let k = j * n + i;
            out[k] = (v[k - 1] + v[k + 1] + v[k - n] + v[k + n] - 4.0 * v[k]) * inv_h2;
        }
    }
    Field {
        grid: grid.clone(),
        values: out,
    }
}

pub fn trace(u: &Field) -> BoundaryField {
    let grid = u.grid();
    BoundaryField {
        grid: grid.clone(),
        values: grid
            .boundary_order()
            .iter()
            .map(|&k| u.values()[k])
            .collect(),
    }
}

/// Inward unit steps `(di, dj)` from a boundary node, one per edge it lies on.
pub(crate) fn inward_steps(n: usize, i: usize, j: usize) -> ([(isize, isize); 2], usize) {
    let mut steps = [(0, 0); 2];
    let mut count = 0;
    let mut push = |s: (isize, isize)| {
        steps[count] = s;
        count += 1;
    };
    if j == 0 {
        push((0, 1));
    }
    if j == n - 1 {
        push((0, -1));
    }
    if i == 0 {
        push((1, 0));
    }
    if i == n - 1 {
        push((-1, 0));
    }
    (steps, count)
}

/// Outward normal derivative by the one-sided three-point stencil; corner
/// nodes average the stencils of their two edges.
pub fn normal_derivative(u: &Field) -> BoundaryField {
    let grid = u.grid();
    let n = grid.n();
    let h = grid.h();
    let values = grid
        .boundary_order()
        .iter()
        .map(|&k| {
            let (i, j) = grid.coords(k);
            let (steps, count) = inward_steps(n, i, j);
            let mut sum = 0.0;
            for &(di, dj) in &steps[..count] {
                let at = |s: isize| {
                    let ii = (i as isize + s * di) as usize;
                    let jj = (j as isize + s * dj) as usize;
                    u.at(ii, jj)
                };
                sum += (3.0 * at(0) - 4.0 * at(1) + at(2)) / (2.0 * h);
            }
            sum / count as f64
        })
        .collect();
    BoundaryField {
        grid: grid.clone(),
        values,
    }
}

/// Two-point flux derivative `-u(inward neighbour)/h` of a field that vanishes
/// on the boundary; zero at corners. Summation by parts against the
/// five-point Laplacian is exact with this boundary term.
pub fn flux_derivative(u: &Field) -> BoundaryField {
    let grid = u.grid();
    let n = grid.n();
    let h = grid.h();
    let values = grid
        .boundary_order()
        .iter()
        .map(|&k| {
            let (i, j) = grid.coords(k);
            let (steps, count) = inward_steps(n, i, j);
            if count != 1 {
                return 0.0;
            }
            let (di, dj) = steps[0];
            let ii = (i as isize + di) as usize;
            let jj = (j as isize + dj) as usize;
            (u.at(i, j) - u.at(ii, jj)) / h
        })
        .collect();
    BoundaryField {
        grid: grid.clone(),
        values,
    }
}

/// Composite trapezoid rule for `∫_Ω f g`.
pub fn inner_domain(f: &Field, g: &Field) -> Result<f64> {
    f.check_same_grid(g)?;
    let n = f.grid().n();
    let h = f.grid().h();
    let mut s = 0.0;
    for j in 0..n {
        let wj = edge_weight(j, n);
        let mut row = 0.0;
        for i in 0..n {
            let k = j * n + i;
            row += edge_weight(i, n) * f.values[k] * g.values[k];
        }
        s += wj * row;
    }
    Ok(s * h * h)
}

/// Trapezoid rule for `∫_∂Ω f g dS` along the closed boundary loop.
pub fn inner_boundary(f: &BoundaryField, g: &BoundaryField) -> Result<f64> {
    f.check_same_grid(g)?;
    let s: f64 = f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum();
    Ok(s * f.grid.h())
}

/// The first `count` real Fourier modes in arclength, orthonormal in
/// `L²(∂Ω)`: the constant, then cosine/sine pairs of increasing frequency.
pub fn fourier_basis(grid: &Arc<Grid>, count: usize) -> Vec<BoundaryField> {
    let len = grid.boundary_len();
    let mut out = Vec::with_capacity(count);
    for m in 0..count {
        let values = (0..len)
            .map(|p| {
                let s = grid.arclength(p);
                if m == 0 {
                    0.5
                } else {
                    let k = m.div_ceil(2) as f64;
                    let arg = 2.0 * PI * k * s / 4.0;
                    if m % 2 == 1 {
                        arg.cos() / 2.0.sqrt()
                    } else {
                        arg.sin() / 2.0.sqrt()
                    }
                }
            })
            .collect();
        out.push(BoundaryField {
            grid: grid.clone(),
            values,
        });
    }
    out
}
