//! Solutions of the linearized equation with a prescribed value at a node,
//! and approximation of local solutions on a sub-rectangle by global ones.

use alloc::sync::Arc;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math for no_std builds
use num_traits::Float;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::{BoundaryField, Field};
use crate::schrodinger::SchrodingerSolver;
use crate::sparse::{LinearSolver, SparseOperator};

/// Default penalty weight relative to the trace of the basis Gram matrix.
pub const DEFAULT_PENALTY: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PointValue {
    pub field: Field,
    pub achieved: f64,
    pub coefficients: Vec<f64>,
    /// L² norm of the boundary datum.
    pub boundary_norm: f64,
    /// Interior residual of the linearized equation.
    pub residual: f64,
}

fn gram_trace(basis: &[BoundaryField]) -> f64 {
    basis.iter().map(|b| b.norm_l2().powi(2)).sum()
}

fn combine(grid: &Arc<crate::Grid>, basis: &[BoundaryField], c: &[f64]) -> BoundaryField {
    let mut g = BoundaryField::zeros(grid);
    for (b, &ci) in basis.iter().zip(c) {
        g.axpy(ci, b);
    }
    g
}

fn checked_solution(solver: &SchrodingerSolver, g: &BoundaryField) -> Result<(Field, f64)> {
    let u = solver.dirichlet(g)?;
    let residual = solver.residual(&u, &Field::zeros(g.grid()));
    if residual > 1e-9 * u.norm_inf().max(1.0) {
        return Err(Error::Postcondition {
            module: "runge",
            what: "linearized residual of the returned field",
            value: residual,
        });
    }
    Ok((u, residual))
}

/// Minimizes `(v_g(x₀) − target)² + μ‖c‖²` over coefficients `c` of the
/// boundary datum `g = Σ cᵢ fᵢ`, then rescales the minimizer so the value at
/// the node is met exactly. `penalty` is relative to the Gram trace of the
/// basis (default [`DEFAULT_PENALTY`]).
pub fn point_value_solution(
    q: &Field,
    node: usize,
    target: f64,
    basis: &[BoundaryField],
    penalty: Option<f64>,
) -> Result<PointValue> {
    let solver = SchrodingerSolver::new(q)?;
    point_value_with(&solver, node, target, basis, penalty)
}

pub fn point_value_with(
    solver: &SchrodingerSolver,
    node: usize,
    target: f64,
    basis: &[BoundaryField],
    penalty: Option<f64>,
) -> Result<PointValue> {
    let grid = solver.potential().grid().clone();
    if node >= grid.node_count() {
        return Err(Error::invalid("runge", "node outside the grid"));
    }
    if !target.is_finite() {
        return Err(Error::NonFinite { module: "runge" });
    }
    if basis.is_empty() {
        return Err(Error::invalid("runge", "empty boundary basis"));
    }
    let zero = || PointValue {
        field: Field::zeros(&grid),
        achieved: 0.0,
        coefficients: alloc::vec![0.0; basis.len()],
        boundary_norm: 0.0,
        residual: 0.0,
    };
    if target == 0.0 {
        return Ok(zero());
    }
    let mu = penalty.unwrap_or(DEFAULT_PENALTY) * gram_trace(basis);
    let mut response = Vec::with_capacity(basis.len());
    for f in basis {
        response.push(solver.dirichlet(f)?.values()[node]);
    }
    let rr: f64 = response.iter().map(|r| r * r).sum();
    // the penalized minimizer is a multiple of the response vector
    let t = target / (rr + mu);
    let mut c: Vec<f64> = response.iter().map(|r| r * t).collect();
    let penalized = rr * t;
    if rr < mu {
        return Err(Error::Postcondition {
            module: "runge",
            what: "node value unreachable within the coefficient budget",
            value: penalized,
        });
    }
    let rescale = target / penalized;
    for ci in c.iter_mut() {
        *ci *= rescale;
    }
    let g = combine(&grid, basis, &c);
    let (field, residual) = checked_solution(solver, &g)?;
    let achieved = field.values()[node];
    if (achieved - target).abs() > 1e-6 * target.abs() {
        return Err(Error::Postcondition {
            module: "runge",
            what: "node value missed",
            value: achieved,
        });
    }
    Ok(PointValue {
        boundary_norm: g.norm_l2(),
        field,
        achieved,
        coefficients: c,
        residual,
    })
}

/// Inclusive node rectangle `i0..=i1 × j0..=j1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRect {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl NodeRect {
    pub fn new(i0: usize, i1: usize, j0: usize, j1: usize) -> NodeRect {
        NodeRect { i0, i1, j0, j1 }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.i0..=self.i1).contains(&i) && (self.j0..=self.j1).contains(&j)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.j0..=self.j1).flat_map(move |j| (self.i0..=self.i1).map(move |i| (i, j)))
    }

    fn is_interior(&self, i: usize, j: usize) -> bool {
        i > self.i0 && i < self.i1 && j > self.j0 && j < self.j1
    }

    /// Rejects rectangles that leave the grid, are degenerate, or cut the
    /// square into pieces.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.i1 >= n || self.j1 >= n || self.i0 + 2 > self.i1 || self.j0 + 2 > self.j1 {
            return Err(Error::invalid("runge", "subdomain must be a rectangle of at least 3x3 nodes"));
        }
        if (self.i0 == 0 && self.i1 == n - 1) || (self.j0 == 0 && self.j1 == n - 1) {
            return Err(Error::invalid("runge", "subdomain complement is not connected"));
        }
        Ok(())
    }
}

/// Solves `Δ_h u + q u = 0` on the interior nodes of `rect` with `u = data`
/// on its edges. The result is zero outside the rectangle.
pub fn local_dirichlet(q: &Field, rect: NodeRect, data: impl Fn(f64, f64) -> f64) -> Result<Field> {
    let grid = q.grid().clone();
    rect.validate(grid.n())?;
    let mi = rect.i1 - rect.i0 - 1;
    let mj = rect.j1 - rect.j0 - 1;
    let idx = |i: usize, j: usize| (j - rect.j0 - 1) * mi + (i - rect.i0 - 1);
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut out = Field::zeros(&grid);
    for (i, j) in rect.nodes() {
        if !rect.is_interior(i, j) {
            out.set(i, j, data(grid.coord(i), grid.coord(j)));
        }
    }
    let mut t = Vec::new();
    let mut b = alloc::vec![0.0; mi * mj];
    for j in rect.j0 + 1..rect.j1 {
        for i in rect.i0 + 1..rect.i1 {
            let r = idx(i, j);
            t.push((r, r, -4.0 * inv_h2 + q.at(i, j)));
            for (a, c) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                if rect.is_interior(a, c) {
                    t.push((r, idx(a, c), inv_h2));
                } else {
                    b[r] -= inv_h2 * out.at(a, c);
                }
            }
        }
    }
    let op = Arc::new(SparseOperator::from_triplets(mi * mj, mi * mj, t));
    let x = LinearSolver::new(op)?.solve(&b)?;
    for j in rect.j0 + 1..rect.j1 {
        for i in rect.i0 + 1..rect.i1 {
            out.set(i, j, x[idx(i, j)]);
        }
    }
    Ok(out)
}

/// Largest residual of `Δ_h u + q u` over the interior nodes of `rect`.
pub fn local_residual(q: &Field, rect: NodeRect, u: &Field) -> f64 {
    let grid = u.grid();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut worst: f64 = 0.0;
    for (i, j) in rect.nodes() {
        if rect.is_interior(i, j) {
            let lap = (u.at(i - 1, j) + u.at(i + 1, j) + u.at(i, j - 1) + u.at(i, j + 1) - 4.0 * u.at(i, j)) * inv_h2;
            worst = worst.max((lap + q.at(i, j) * u.at(i, j)).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct RungeResult {
    /// Global solution of the linearized equation.
    pub field: Field,
    /// Sup error over the rectangle.
    pub sup_error: f64,
    /// Discrete L² error over the rectangle.
    pub l2_error: f64,
    /// Euclidean norm of the boundary coefficients.
    pub norm: f64,
    pub coefficients: Vec<f64>,
    /// Tikhonov parameter of the selected candidate.
    pub lambda: f64,
}

/// Global solutions for one basis restricted to a rectangle, with their
/// singular value decomposition.
#[derive(Debug, Clone)]
pub struct RungeProblem {
    solver: SchrodingerSolver,
    basis: Vec<BoundaryField>,
    rect: NodeRect,
    /// Rectangle nodes by basis element.
    responses: DMatrix<f64>,
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v_t: DMatrix<f64>,
}

/// Number of Tikhonov parameters tried per decade.
const PER_DECADE: usize = 4;
const DECADES: usize = 16;

impl RungeProblem {
    pub fn new(q: &Field, rect: NodeRect, basis: &[BoundaryField]) -> Result<RungeProblem> {
        let grid = q.grid().clone();
        rect.validate(grid.n())?;
        if basis.is_empty() {
            return Err(Error::invalid("runge", "empty boundary basis"));
        }
        let solver = SchrodingerSolver::new(q)?;
        let nodes: Vec<(usize, usize)> = rect.nodes().collect();
        let mut responses = DMatrix::zeros(nodes.len(), basis.len());
        for (k, f) in basis.iter().enumerate() {
            let v = solver.dirichlet(f)?;
            for (r, &(i, j)) in nodes.iter().enumerate() {
                responses[(r, k)] = v.at(i, j);
            }
        }
        let svd = responses.clone().svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            return Err(Error::invalid("runge", "singular value decomposition failed"));
        };
        Ok(RungeProblem {
            solver,
            basis: basis.to_vec(),
            rect,
            responses,
            u,
            sigma: svd.singular_values,
            v_t,
        })
    }

    pub fn rect(&self) -> NodeRect {
        self.rect
    }

    fn coefficients(&self, proj: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let smax = self.sigma.max();
        let mut c = DVector::zeros(self.basis.len());
        for k in 0..self.sigma.len() {
            let s = self.sigma[k];
            // λ = 0 is the truncated pseudo-inverse
            let filt = if lambda > 0.0 {
                s / (s * s + lambda)
            } else if s > 1e-13 * smax {
                1.0 / s
            } else {
                0.0
            };
            c += self.v_t.row(k).transpose() * (filt * proj[k]);
        }
        c
    }

    /// Best global approximation of `target` on the rectangle with
    /// coefficient norm at most `budget`.
    ///
    /// Candidates are points of the Tikhonov path on a fixed parameter grid
    /// (plus the zero datum); among those within budget the one with the
    /// smallest sup error is returned, so the error is nonincreasing in the
    /// budget.
    pub fn approximate(&self, target: &Field, budget: f64) -> Result<RungeResult> {
        target.check_same_grid(self.solver.potential())?;
        if !(budget >= 0.0) {
            return Err(Error::invalid("runge", "budget must be non-negative"));
        }
        let q = self.solver.potential();
        let res = local_residual(q, self.rect, target);
        let scale = self.rect.nodes().fold(0.0_f64, |m, (i, j)| m.max(target.at(i, j).abs()));
        if res > 1e-8 * scale.max(1.0) {
            return Err(Error::NotASolution {
                module: "runge",
                equation: "linearized on the subdomain",
                residual: res,
            });
        }
        let b = DVector::from_iterator(self.responses.nrows(), self.rect.nodes().map(|(i, j)| target.at(i, j)));
        let proj = self.u.transpose() * &b;
        let smax2 = self.sigma.max().powi(2);
        let mut lambdas = alloc::vec![f64::INFINITY, 0.0];
        for k in 0..=PER_DECADE * DECADES {
            lambdas.push(smax2 * 10f64.powf(-(k as f64) / PER_DECADE as f64));
        }
        let h2 = self.solver.potential().grid().h().powi(2);
        let mut best: Option<(f64, f64, f64, DVector<f64>, f64)> = None;
        for &lambda in &lambdas {
            let c = if lambda.is_infinite() {
                DVector::zeros(self.basis.len())
            } else {
                self.coefficients(&proj, lambda)
            };
            let norm = c.norm();
            if norm > budget {
                continue;
            }
            let err = &self.responses * &c - &b;
            let sup = err.amax();
            let l2 = (err.norm_squared() * h2).sqrt();
            if best.as_ref().is_none_or(|bst| sup < bst.0) {
                best = Some((sup, l2, norm, c, lambda));
            }
        }
        let (sup_error, l2_error, norm, c, lambda) = best.expect("the zero datum is always within budget");
        let coefficients: Vec<f64> = c.iter().copied().collect();
        let g = combine(q.grid(), &self.basis, &coefficients);
        let (field, _) = checked_solution(&self.solver, &g)?;
        Ok(RungeResult {
            field,
            sup_error,
            l2_error,
            norm,
            coefficients,
            lambda,
        })
    }

    /// Error-versus-budget curve; budgets are processed in the given order.
    pub fn budget_curve(&self, target: &Field, budgets: &[f64]) -> Result<Vec<RungeResult>> {
        budgets.iter().map(|&b| self.approximate(target, b)).collect()
    }
}

pub fn runge_approximate(
    q: &Field,
    rect: NodeRect,
    target: &Field,
    budget: f64,
    basis: &[BoundaryField],
) -> Result<RungeResult> {
    RungeProblem::new(q, rect, basis)?.approximate(target, budget)
}
