//! The linear Schrödinger problem `Δu + qu = F`, `u = f` on the boundary,
//! including potentials with a Dirichlet kernel. For such potentials the
//! boundary datum is corrected by a finite-rank term drawn from the Neumann
//! traces of the kernel, and the solution is made orthogonal to the kernel.

use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // float math for no_std builds
use num_traits::Float;

use crate::dense;
use crate::error::{Error, Result};
use crate::mesh::{
    flux_derivative, inner_boundary, inner_domain, laplacian, normal_derivative, BoundaryField,
    Field,
};
use crate::sparse::{
    assemble_schrodinger, smallest_eigenpairs, LinearSolver, SparseOperator, KERNEL_TOLERANCE,
};

/// Residual tolerance of eigenpairs used for kernel detection, relative to `‖A‖∞`.
const EIGEN_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
pub struct KernelBasis {
    q: Field,
    psi: Vec<Field>,
    neumann_traces: Vec<BoundaryField>,
    flux_traces: Vec<BoundaryField>,
    orthonormal: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    gap: f64,
}

impl KernelBasis {
    pub fn dimension(&self) -> usize {
        self.psi.len()
    }

    pub fn potential(&self) -> &Field {
        &self.q
    }

    /// Kernel fields, scaled so that their Neumann traces are orthonormal.
    pub fn psi(&self) -> &[Field] {
        &self.psi
    }

    pub fn neumann_traces(&self) -> &[BoundaryField] {
        &self.neumann_traces
    }

    /// Eigenvalues classified as zero.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Smallest modulus among the eigenvalues not classified as zero.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    /// Largest deviation of the Neumann-trace Gram matrix from the identity.
    pub fn gram_defect(&self) -> f64 {
        let m = self.dimension();
        let mut worst: f64 = 0.0;
        for a in 0..m {
            for b in 0..m {
                let g = inner_boundary(&self.neumann_traces[a], &self.neumann_traces[b]).unwrap_or(f64::NAN);
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// Removes the `L²(Ω)` projection onto the kernel from interior values.
    pub fn project_off(&self, interior: &mut [f64]) {
        for e in &self.orthonormal {
            let c = dense::dot(interior, e);
            dense::axpy(interior, -c, e);
        }
    }

    /// `L²(Ω)`-orthogonal projection of a field onto the kernel.
    pub fn projection(&self, u: &Field) -> Field {
        let x = u.interior();
        let mut out = alloc::vec![0.0; x.len()];
        for e in &self.orthonormal {
            let c = dense::dot(&x, e);
            dense::axpy(&mut out, c, e);
        }
        Field::from_interior_zero(u.grid(), &out)
    }
}

/// Detects the Dirichlet kernel of `Δ_h + q`.
pub fn kernel_basis(q: &Field) -> Result<KernelBasis> {
    let op = assemble_schrodinger(q);
    kernel_basis_of(q, &op)
}

fn kernel_basis_of(q: &Field, op: &SparseOperator) -> Result<KernelBasis> {
    let dim = op.dim();
    let tol = KERNEL_TOLERANCE * op.norm_inf();
    let mut k = 4.min(dim);
    let pairs = loop {
        let pairs = smallest_eigenpairs(op, k, EIGEN_TOL)?;
        let zero = pairs.iter().filter(|p| p.value.abs() <= tol).count();
        if zero < k || k == dim {
            break pairs;
        }
        k = (2 * k).min(dim);
    };
    let gap = pairs
        .iter()
        .find(|p| p.value.abs() > tol)
        .map_or(f64::INFINITY, |p| p.value.abs());
    let kernel: Vec<_> = pairs.into_iter().filter(|p| p.value.abs() <= tol).collect();
    let grid = q.grid();
    let eigenvalues = kernel.iter().map(|p| p.value).collect();
    let orthonormal: Vec<Vec<f64>> = kernel.into_iter().map(|p| p.vector).collect();
    let mut psi: Vec<Field> = orthonormal
        .iter()
        .map(|v| Field::from_interior_zero(grid, v))
        .collect();
    let mut traces: Vec<BoundaryField> = psi.iter().map(normal_derivative).collect();
    for j in 0..psi.len() {
        for _ in 0..2 {
            for i in 0..j {
                let c = inner_boundary(&traces[j], &traces[i])?;
                let (ti, pi) = (traces[i].clone(), psi[i].clone());
                traces[j].axpy(-c, &ti);
                psi[j].axpy(-c, &pi);
            }
        }
        let nrm = traces[j].norm_l2();
        if !(nrm > 1e-12) {
            return Err(Error::Postcondition {
                module: "schrodinger",
                what: "kernel field with vanishing Neumann trace",
                value: nrm,
            });
        }
        traces[j] = traces[j].scale(1.0 / nrm);
        psi[j] = psi[j].scale(1.0 / nrm);
    }
    let flux_traces = psi.iter().map(flux_derivative).collect();
    Ok(KernelBasis {
        q: q.clone(),
        psi,
        neumann_traces: traces,
        flux_traces,
        orthonormal,
        eigenvalues,
        gap,
    })
}

/// The finite-rank boundary correction
/// `Σ_j (∫_Ω F ψ_j + ∫_∂Ω f ∂_ν ψ_j) ∂_ν ψ_j` evaluated with the grid
/// quadratures.
pub fn compute_phi(f_int: &Field, f: &BoundaryField, basis: &KernelBasis) -> Result<BoundaryField> {
    let mut phi = BoundaryField::zeros(f.grid());
    for (psi, dpsi) in basis.psi.iter().zip(&basis.neumann_traces) {
        let c = inner_domain(f_int, psi)? + inner_boundary(f, dpsi)?;
        phi.axpy(c, dpsi);
    }
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolveReport {
    /// `‖Δ_h u + qu − F‖∞` over interior nodes.
    pub residual: f64,
    /// Largest `|∫_Ω u ψ_j|`.
    pub kernel_overlap: f64,
    /// `‖u‖ / (‖F‖ + ‖f‖)` in the surrogate norms.
    pub stability_ratio: f64,
    /// Iterations of the kernel-deflated refinement (0 without kernel).
    pub deflation_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub u: Field,
    pub phi: BoundaryField,
    pub report: LinearSolveReport,
}

/// A factorized Schrödinger operator together with its kernel. Immutable
/// after construction; solves may share it.
#[derive(Debug, Clone)]
pub struct SchrodingerSolver {
    basis: KernelBasis,
    op: Arc<SparseOperator>,
    solver: LinearSolver,
    shift: f64,
    coupling: Option<DMatrix<f64>>,
}

impl SchrodingerSolver {
    pub fn new(q: &Field) -> Result<SchrodingerSolver> {
        if !q.is_finite() {
            return Err(Error::NonFinite { module: "schrodinger" });
        }
        let op = Arc::new(assemble_schrodinger(q));
        let basis = kernel_basis_of(q, &op)?;
        let m = basis.dimension();
        let (solver, shift, coupling) = if m == 0 {
            (LinearSolver::new(op.clone())?, 0.0, None)
        } else {
            let shift = 1e-3 * basis.gap.min(op.norm_inf());
            let shifted = Arc::new(op.shifted(-shift));
            // Coupling between the three-point Neumann traces and the flux
            // traces for which discrete summation by parts is exact.
            let mut mat = DMatrix::zeros(m, m);
            for j in 0..m {
                for k in 0..m {
                    mat[(j, k)] = inner_boundary(&basis.neumann_traces[k], &basis.flux_traces[j])?;
                }
            }
            let inv = mat.try_inverse().ok_or(Error::Singular { near_null: m })?;
            (LinearSolver::shifted(shifted, 1e-14)?, shift, Some(inv))
        };
        Ok(SchrodingerSolver {
            basis,
            op,
            solver,
            shift,
            coupling,
        })
    }

    pub fn basis(&self) -> &KernelBasis {
        &self.basis
    }

    pub fn potential(&self) -> &Field {
        &self.basis.q
    }

    pub fn operator(&self) -> &Arc<SparseOperator> {
        &self.op
    }

    pub fn is_resonant(&self) -> bool {
        self.basis.dimension() > 0
    }

    /// Boundary correction in the span of the kernel's Neumann traces that
    /// makes the discrete problem solvable. It agrees with [`compute_phi`]
    /// up to the quadrature error of the grid.
    pub fn boundary_correction(&self, f_int: &Field, f: &BoundaryField) -> Result<BoundaryField> {
        let mut phi = BoundaryField::zeros(f.grid());
        let Some(inv) = &self.coupling else {
            return Ok(phi);
        };
        let m = self.basis.dimension();
        let mut rhs = DVector::zeros(m);
        for j in 0..m {
            rhs[j] = inner_domain(f_int, &self.basis.psi[j])? + inner_boundary(f, &self.basis.flux_traces[j])?;
        }
        let c = inv * rhs;
        for k in 0..m {
            phi.axpy(c[k], &self.basis.neumann_traces[k]);
        }
        Ok(phi)
    }

    /// Solves `A x = b` for interior unknowns with `b` orthogonal to the
    /// kernel; the result is orthogonal to the kernel.
    pub fn solve_interior(&self, b: &[f64]) -> Result<(Vec<f64>, usize)> {
        if self.coupling.is_none() {
            return Ok((self.solver.solve(b)?, 0));
        }
        let mut rhs = b.to_vec();
        self.basis.project_off(&mut rhs);
        let mut x = alloc::vec![0.0; rhs.len()];
        let mut iterations = 0;
        // (A − sI) x = b − s x, restricted to the complement of the kernel.
        for it in 1..=40 {
            iterations = it;
            let mut r = rhs.clone();
            dense::axpy(&mut r, -self.shift, &x);
            let mut next = self.solver.solve(&r)?;
            self.basis.project_off(&mut next);
            let diff = next
                .iter()
                .zip(&x)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            x = next;
            if diff <= 1e-15 * dense::norm_inf(&x).max(1e-300) {
                break;
            }
        }
        Ok((x, iterations))
    }

    /// The canonical solution orthogonal to the kernel, with boundary value
    /// `f − Φ`.
    pub fn solve(&self, f_int: &Field, f: &BoundaryField) -> Result<LinearSolution> {
        f_int.check_same_grid(&self.basis.q)?;
        let phi = self.boundary_correction(f_int, f)?;
        let g = f - &phi;
        let lift = laplacian(&g.embed()).interior();
        let b: Vec<f64> = f_int
            .interior()
            .iter()
            .zip(&lift)
            .map(|(a, l)| a - l)
            .collect();
        let (x, deflation_iterations) = self.solve_interior(&b)?;
        let u = Field::from_interior(&g, &x);
        let report = self.report(&u, f_int, f, deflation_iterations)?;
        Ok(LinearSolution { u, phi, report })
    }

    fn report(&self, u: &Field, f_int: &Field, f: &BoundaryField, its: usize) -> Result<LinearSolveReport> {
        let residual = self.residual(u, f_int);
        let mut kernel_overlap: f64 = 0.0;
        for psi in &self.basis.psi {
            kernel_overlap = kernel_overlap.max(inner_domain(u, psi)?.abs());
        }
        let denom = f_int.norm_inf() + f.surrogate_norm(2);
        let stability_ratio = if denom > 0.0 { u.surrogate_norm() / denom } else { 0.0 };
        Ok(LinearSolveReport {
            residual,
            kernel_overlap,
            stability_ratio,
            deflation_iterations: its,
        })
    }

    /// `‖Δ_h u + qu − F‖∞` over interior nodes.
    pub fn residual(&self, u: &Field, f_int: &Field) -> f64 {
        let lap = laplacian(u);
        let q = &self.basis.q;
        let grid = u.grid();
        let n = grid.n();
        let mut worst: f64 = 0.0;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let r = lap.at(i, j) + q.at(i, j) * u.at(i, j) - f_int.at(i, j);
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    /// Well-posed Dirichlet problem `Δ_h u + qu = 0`, `u = f`.
    pub fn dirichlet(&self, f: &BoundaryField) -> Result<Field> {
        if self.is_resonant() {
            return Err(Error::ResonantPotential {
                dimension: self.basis.dimension(),
            });
        }
        let b: Vec<f64> = laplacian(&f.embed()).interior().iter().map(|v| -v).collect();
        let x = self.solver.solve(&b)?;
        Ok(Field::from_interior(f, &x))
    }

    /// Linearized Dirichlet-to-Neumann responses, expanded in an orthonormal
    /// boundary basis.
    pub fn dn_map(&self, basis: &[BoundaryField]) -> Result<DNMatrix> {
        let b = basis.len();
        let mut entries = alloc::vec![0.0; b * b];
        for (i, fi) in basis.iter().enumerate() {
            let resp = normal_derivative(&self.dirichlet(fi)?);
            for (j, fj) in basis.iter().enumerate() {
                entries[j * b + i] = inner_boundary(&resp, fj)?;
            }
        }
        Ok(DNMatrix {
            basis: basis.to_vec(),
            entries,
            potential_hash: self.basis.q.content_hash(),
        })
    }
}

pub fn gq_solve(q: &Field, f_int: &Field, f: &BoundaryField) -> Result<LinearSolution> {
    SchrodingerSolver::new(q)?.solve(f_int, f)
}

pub fn dirichlet_solve(q: &Field, f: &BoundaryField) -> Result<Field> {
    SchrodingerSolver::new(q)?.dirichlet(f)
}

pub fn dn_map(q: &Field, basis: &[BoundaryField]) -> Result<DNMatrix> {
    SchrodingerSolver::new(q)?.dn_map(basis)
}

/// Pairings `⟨Λ f_i, f_j⟩` of boundary responses against a boundary basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DNMatrix {
    pub basis: Vec<BoundaryField>,
    /// Row-major, entry `(j, i)` is `⟨Λ f_i, f_j⟩`.
    pub entries: Vec<f64>,
    /// Content hash of the potential (or of the reference data) the responses belong to.
    pub potential_hash: u64,
}

impl DNMatrix {
    pub fn size(&self) -> usize {
        self.basis.len()
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.entries[j * self.size() + i]
    }

    pub fn symmetry_defect(&self) -> f64 {
        let b = self.size();
        let mut worst: f64 = 0.0;
        for j in 0..b {
            for i in 0..b {
                worst = worst.max((self.get(j, i) - self.get(i, j)).abs());
            }
        }
        worst
    }

    pub fn difference(&self, other: &DNMatrix) -> Result<DNMatrix> {
        if self.size() != other.size() {
            return Err(Error::LengthMismatch {
                module: "schrodinger",
                expected: self.size(),
                got: other.size(),
            });
        }
        Ok(DNMatrix {
            basis: self.basis.clone(),
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a - b)
                .collect(),
            potential_hash: self.potential_hash ^ other.potential_hash.rotate_left(1),
        })
    }

    /// Frobenius norm of the entries.
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
