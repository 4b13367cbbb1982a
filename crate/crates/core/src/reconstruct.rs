//! Reconstruction pipelines: boundary oracles, first-order linearization
//! (potential recovery from linearized DN data and the sweep along the
//! reachable set), and higher-order linearization identities.

use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // float math for no_std builds
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cauchy::cauchy_pair;
use crate::error::{Error, Result};
use crate::mesh::{
    flux_derivative, inner_boundary, inner_domain, laplacian, normal_derivative, trace, BoundaryField, Field,
    Grid,
};
use crate::nonlinearity::Nonlinearity;
use crate::runge::point_value_with;
use crate::schrodinger::{DNMatrix, SchrodingerSolver};
use crate::solution_map::{newton_solve, pde_residual, SolutionMap};
use crate::sparse::{assemble_schrodinger, LinearSolver};

// ---------------------------------------------------------------------------
// Oracles

/// Boundary measurements of one (unknown) equation: Neumann data for
/// Dirichlet data near a reference solution.
pub trait DnOracle {
    fn grid(&self) -> &Arc<Grid>;
    fn neumann(&self, f: &BoundaryField) -> Result<BoundaryField>;
    /// Standard deviation of the additive noise on each Neumann value.
    fn noise(&self) -> f64 {
        0.0
    }
}

/// Simulated measurements of `Δu + a(x, u) = 0` near a known solution,
/// solved by chord Newton with the Jacobian frozen at that solution.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    a: Nonlinearity,
    anchor: Field,
    jacobian: LinearSolver,
    noise: f64,
    seed: u64,
}

const CHORD_MAX: usize = 40;

impl SimulatedOracle {
    pub fn new(a: &Nonlinearity, anchor: &Field, noise: f64, seed: u64) -> Result<SimulatedOracle> {
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(Error::invalid("reconstruct", "noise level must be a finite non-negative number"));
        }
        let res = pde_residual(a, anchor)?;
        if res > 1e-8 * anchor.norm_inf().max(1.0) {
            return Err(Error::NotASolution {
                module: "reconstruct",
                equation: "oracle",
                residual: res,
            });
        }
        let q = a.eval(anchor, 1)?;
        let jacobian = LinearSolver::new(Arc::new(assemble_schrodinger(&q)))?;
        Ok(SimulatedOracle {
            a: a.clone(),
            anchor: anchor.clone(),
            jacobian,
            noise,
            seed,
        })
    }

    /// Clean oracle for a linear equation around the zero solution.
    pub fn linear(q: &Field) -> Result<SimulatedOracle> {
        SimulatedOracle::new(&Nonlinearity::linear(q.clone()), &Field::zeros(q.grid()), 0.0, 0)
    }

    pub fn with_noise(mut self, noise: f64, seed: u64) -> SimulatedOracle {
        self.noise = noise;
        self.seed = seed;
        self
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.a
    }

    pub fn anchor(&self) -> &Field {
        &self.anchor
    }

    /// The solution with Dirichlet data `f` near the anchor.
    pub fn solve(&self, f: &BoundaryField) -> Result<Field> {
        let grid = self.anchor.grid().clone();
        let mut u = self.anchor.clone();
        for (p, &k) in grid.boundary_order().iter().enumerate() {
            u.values_mut()[k] = f.values()[p];
        }
        let mut best = f64::INFINITY;
        for _ in 0..CHORD_MAX {
            let lap = laplacian(&u);
            let au = self.a.eval(&u, 0)?;
            let defect = (&lap + &au).interior();
            let res = crate::dense::norm_inf(&defect);
            let scale = u.norm_inf().max(1.0);
            if res <= 1e-11 * scale {
                return Ok(u);
            }
            if !(res < 0.9 * best) && res <= 1e-9 * scale {
                // round-off floor of the residual
                return Ok(u);
            }
            if !(res < 2.0 * best) {
                break;
            }
            best = best.min(res);
            let rhs: Vec<f64> = defect.iter().map(|d| -d).collect();
            let step = self.jacobian.solve(&rhs)?;
            u.axpy(1.0, &Field::from_interior_zero(&grid, &step));
        }
        Ok(newton_solve(&self.a, f, &self.anchor)?.0)
    }
}

impl DnOracle for SimulatedOracle {
    fn grid(&self) -> &Arc<Grid> {
        self.anchor.grid()
    }

    fn neumann(&self, f: &BoundaryField) -> Result<BoundaryField> {
        let mut out = normal_derivative(&self.solve(f)?);
        if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ f.content_hash());
            for v in out.values_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += self.noise * z;
            }
        }
        Ok(out)
    }

    fn noise(&self) -> f64 {
        self.noise
    }
}

/// `⟨N(f_i), f_j⟩` for a linear oracle.
pub fn oracle_dn_matrix(oracle: &dyn DnOracle, basis: &[BoundaryField]) -> Result<DNMatrix> {
    let b = basis.len();
    let mut entries = alloc::vec![0.0; b * b];
    let mut hash = 0u64;
    for (i, fi) in basis.iter().enumerate() {
        let resp = oracle.neumann(fi)?;
        hash = hash.rotate_left(5) ^ resp.content_hash();
        for (j, fj) in basis.iter().enumerate() {
            entries[j * b + i] = inner_boundary(&resp, fj)?;
        }
    }
    Ok(DNMatrix {
        basis: basis.to_vec(),
        entries,
        potential_hash: hash,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedDn {
    pub matrix: DNMatrix,
    /// Richardson estimate of the remaining difference error in the entries.
    pub error_estimate: f64,
}

/// Linearized DN matrix at the solution with Dirichlet data `base`: central
/// differences of the oracle with steps `ε` and `ε/2`, combined by one
/// Richardson step.
pub fn linearized_dn(
    oracle: &dyn DnOracle,
    base: &BoundaryField,
    basis: &[BoundaryField],
    eps: f64,
) -> Result<LinearizedDn> {
    if !(eps > 0.0) {
        return Err(Error::invalid("reconstruct", "difference step must be positive"));
    }
    let b = basis.len();
    let mut entries = alloc::vec![0.0; b * b];
    let mut error_estimate: f64 = 0.0;
    let central = |fi: &BoundaryField, e: f64| -> Result<BoundaryField> {
        let mut plus = base.clone();
        plus.axpy(e, fi);
        let mut minus = base.clone();
        minus.axpy(-e, fi);
        Ok((&oracle.neumann(&plus)? - &oracle.neumann(&minus)?).scale(0.5 / e))
    };
    for (i, fi) in basis.iter().enumerate() {
        let coarse = central(fi, eps)?;
        let fine = central(fi, 0.5 * eps)?;
        let extrapolated = (&fine.scale(4.0) - &coarse).scale(1.0 / 3.0);
        let gap = &fine - &coarse;
        for (j, fj) in basis.iter().enumerate() {
            entries[j * b + i] = inner_boundary(&extrapolated, fj)?;
            error_estimate = error_estimate.max(inner_boundary(&gap, fj)?.abs() / 3.0);
        }
    }
    Ok(LinearizedDn {
        matrix: DNMatrix {
            basis: basis.to_vec(),
            entries,
            potential_hash: base.content_hash(),
        },
        error_estimate,
    })
}

// ---------------------------------------------------------------------------
// Linear inversion

/// Bilinear hat functions on a coarse `m × m` lattice over the square.
#[derive(Debug, Clone)]
struct CoarseBasis {
    m: usize,
    /// For each fine node, the (parameter, weight) pairs with nonzero weight.
    weights: Vec<Vec<(usize, f64)>>,
}

impl CoarseBasis {
    fn new(grid: &Grid, m: usize) -> CoarseBasis {
        let hc = 1.0 / (m - 1) as f64;
        let axis = |t: f64| -> [(usize, f64); 2] {
            let s = (t / hc).min((m - 1) as f64);
            let k = (s.floor() as usize).min(m - 2);
            let r = s - k as f64;
            [(k, 1.0 - r), (k + 1, r)]
        };
        let weights = (0..grid.node_count())
            .map(|node| {
                let (x, y) = grid.position(node);
                let mut w = Vec::with_capacity(4);
                for (kx, wx) in axis(x) {
                    for (ky, wy) in axis(y) {
                        if wx * wy != 0.0 {
                            w.push((ky * m + kx, wx * wy));
                        }
                    }
                }
                w
            })
            .collect();
        CoarseBasis { m, weights }
    }

    fn len(&self) -> usize {
        self.m * self.m
    }

    fn evaluate(&self, grid: &Arc<Grid>, c: &DVector<f64>) -> Field {
        let values = self
            .weights
            .iter()
            .map(|w| w.iter().map(|&(p, wt)| wt * c[p]).sum())
            .collect();
        Field::new(grid, values).expect("coarse coefficients are finite")
    }

    /// Graph Laplacian of the lattice, the discrete gradient penalty.
    fn penalty(&self) -> DMatrix<f64> {
        let m = self.m;
        let mut l = DMatrix::zeros(m * m, m * m);
        for j in 0..m {
            for i in 0..m {
                let p = j * m + i;
                for q in [(i + 1 < m).then(|| p + 1), (j + 1 < m).then(|| p + m)].into_iter().flatten() {
                    l[(p, p)] += 1.0;
                    l[(q, q)] += 1.0;
                    l[(p, q)] -= 1.0;
                    l[(q, p)] -= 1.0;
                }
            }
        }
        l
    }
}

/// Solutions for a boundary basis together with the adjoint fields of the
/// Neumann measurement, for one reference potential.
///
/// With `σ_j` the adjoint field of `z ↦ ⟨∂_ν z, f_j⟩` (scaled by `1/h²`),
/// a potential perturbation `δ` changes the pairing by
/// `⟨(Λ_q − Λ_{q+δ}) f_i, f_j⟩ = h² Σ σ_j δ v_i + O(δ²)` over interior nodes;
/// `σ_j` agrees with `v_j` away from the boundary layer.
#[derive(Debug, Clone)]
pub struct ProductModel {
    solver: SchrodingerSolver,
    basis: Vec<BoundaryField>,
    solutions: Vec<Field>,
    adjoints: Vec<Vec<f64>>,
}

impl ProductModel {
    pub fn new(q_ref: &Field, basis: &[BoundaryField]) -> Result<ProductModel> {
        let solver = SchrodingerSolver::new(q_ref)?;
        ProductModel::with_solver(solver, basis)
    }

    pub fn with_solver(solver: SchrodingerSolver, basis: &[BoundaryField]) -> Result<ProductModel> {
        if solver.is_resonant() {
            return Err(Error::ResonantPotential {
                dimension: solver.basis().dimension(),
            });
        }
        if basis.is_empty() {
            return Err(Error::invalid("reconstruct", "empty boundary basis"));
        }
        let grid = solver.potential().grid().clone();
        let mut solutions = Vec::with_capacity(basis.len());
        for f in basis {
            solutions.push(solver.dirichlet(f)?);
        }
        let functionals = measurement_functionals(&grid, basis)?;
        let inv_h2 = 1.0 / (grid.h() * grid.h());
        let mut adjoints = Vec::with_capacity(basis.len());
        for c in functionals {
            let (rho, _) = solver.solve_interior(&c)?;
            adjoints.push(rho.iter().map(|r| r * inv_h2).collect());
        }
        Ok(ProductModel {
            solver,
            basis: basis.to_vec(),
            solutions,
            adjoints,
        })
    }

    pub fn solutions(&self) -> &[Field] {
        &self.solutions
    }

    /// Adjoint field `σ_j` as a field vanishing on the boundary.
    pub fn adjoint(&self, j: usize) -> Field {
        Field::from_interior_zero(self.solver.potential().grid(), &self.adjoints[j])
    }

    pub fn solver(&self) -> &SchrodingerSolver {
        &self.solver
    }
}

/// Interior coefficient vectors of `z ↦ ⟨∂_ν z, f_j⟩` for fields `z` that
/// vanish on the boundary (only the two layers next to it contribute).
fn measurement_functionals(grid: &Arc<Grid>, basis: &[BoundaryField]) -> Result<Vec<Vec<f64>>> {
    let n = grid.n();
    let mut out = alloc::vec![alloc::vec![0.0; grid.interior_len()]; basis.len()];
    let mut unit = Field::zeros(grid);
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            if grid.layer(i, j) > 2 {
                continue;
            }
            unit.set(i, j, 1.0);
            let resp = normal_derivative(&unit);
            unit.set(i, j, 0.0);
            let k = grid.interior_index(i, j);
            for (b, f) in basis.iter().enumerate() {
                out[b][k] = inner_boundary(&resp, f)?;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionOptions {
    /// Coarse lattice size per side for the unknown.
    pub coarse: usize,
    /// Fixed regularization weight (relative to the trace ratio of the
    /// normal matrix and the penalty); `None` picks it from the L-curve.
    pub reg: Option<f64>,
}

impl Default for InversionOptions {
    fn default() -> Self {
        InversionOptions { coarse: 17, reg: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LCurvePoint {
    pub reg: f64,
    pub residual: f64,
    pub seminorm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialRecovery {
    pub field: Field,
    /// Absolute regularization weight used.
    pub reg: f64,
    pub effective_rank: usize,
    pub unknowns: usize,
    /// Relative data misfit `‖K c − d‖ / ‖d‖`.
    pub misfit: f64,
    pub lcurve: Vec<LCurvePoint>,
}

impl PotentialRecovery {
    /// True when the forward matrix has fewer independent directions than
    /// the data basis size.
    pub fn rank_deficient(&self, basis_size: usize) -> bool {
        self.effective_rank < basis_size.min(self.unknowns)
    }
}

const LCURVE_POINTS: usize = 10;

/// Tikhonov least squares `min ‖K c − d‖² + reg·cᵀ L c` with the weight either
/// fixed or taken at the corner of a 10-point logarithmic L-curve.
fn regularized_solve(
    k: &DMatrix<f64>,
    d: &DVector<f64>,
    coarse: &CoarseBasis,
    reg: Option<f64>,
) -> (DVector<f64>, f64, usize, f64, Vec<LCurvePoint>) {
    let p = coarse.len();
    let ktk = k.transpose() * k;
    let ktd = k.transpose() * d;
    let l = coarse.penalty();
    let (eig, _) = crate::dense::symmetric_eigen(ktk.clone());
    let emax = eig.iter().fold(0.0_f64, |m, &v| m.max(v));
    let rank = eig.iter().filter(|&&v| v > 1e-12 * emax).count();
    let dn = d.norm();
    if dn == 0.0 || emax == 0.0 {
        return (DVector::zeros(p), 0.0, rank, 0.0, Vec::new());
    }
    let scale = ktk.trace() / l.trace();
    let ridge = 1e-14 * ktk.trace() / p as f64;
    let solve = |w: f64| -> DVector<f64> {
        let mut m = &ktk + &l * w;
        for i in 0..p {
            m[(i, i)] += ridge;
        }
        crate::dense::cholesky_solve(m.clone(), &ktd)
            .or_else(|| crate::dense::lu_solve(m, &ktd))
            .unwrap_or_else(|| DVector::zeros(p))
    };
    let point = |w: f64, c: &DVector<f64>| LCurvePoint {
        reg: w,
        residual: (k * c - d).norm(),
        seminorm: c.dot(&(&l * c)).max(0.0).sqrt(),
    };
    if let Some(r) = reg {
        let w = r * scale;
        let c = solve(w);
        let pt = point(w, &c);
        return (c, w, rank, pt.residual / dn, alloc::vec![pt]);
    }
    let mut curve = Vec::with_capacity(LCURVE_POINTS);
    let mut sols = Vec::with_capacity(LCURVE_POINTS);
    for i in 0..LCURVE_POINTS {
        let w = scale * 10f64.powi(-(i as i32) - 1);
        let c = solve(w);
        curve.push(point(w, &c));
        sols.push(c);
    }
    let logs: Vec<(f64, f64)> = curve
        .iter()
        .map(|pt| (pt.residual.max(1e-300).ln(), pt.seminorm.max(1e-300).ln()))
        .collect();
    let mut best = (LCURVE_POINTS / 2, f64::NEG_INFINITY);
    for i in 1..LCURVE_POINTS - 1 {
        let (a, b, c) = (logs[i - 1], logs[i], logs[i + 1]);
        let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        let lab = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let lbc = ((c.0 - b.0).powi(2) + (c.1 - b.1).powi(2)).sqrt();
        let lac = ((c.0 - a.0).powi(2) + (c.1 - a.1).powi(2)).sqrt();
        let denom = lab * lbc * lac;
        // corners bend towards the origin, which is a clockwise turn here
        let kappa = if denom > 0.0 { -2.0 * cross / denom } else { 0.0 };
        if kappa > best.1 {
            best = (i, kappa);
        }
    }
    let i = best.0;
    let misfit = curve[i].residual / dn;
    (sols[i].clone(), curve[i].reg, rank, misfit, curve)
}

fn check_same_basis(a: &DNMatrix, b: &DNMatrix) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::LengthMismatch {
            module: "reconstruct",
            expected: a.size(),
            got: b.size(),
        });
    }
    if a.basis != b.basis {
        return Err(Error::invalid("reconstruct", "DN matrices use different boundary bases"));
    }
    Ok(())
}

/// Recovers `δq = q_B − q_A` from `⟨(Λ_A − Λ_B) f_i, f_j⟩ ≈ ∫ δq v_i v_j`,
/// linearized at `q_ref` (one of the two potentials), with a coarse
/// bilinear unknown and a gradient penalty.
pub fn recover_potential_difference(
    dn_a: &DNMatrix,
    dn_b: &DNMatrix,
    q_ref: &Field,
    opts: InversionOptions,
) -> Result<PotentialRecovery> {
    check_same_basis(dn_a, dn_b)?;
    let model = ProductModel::new(q_ref, &dn_a.basis)?;
    recover_with_model(dn_a, dn_b, &model, opts)
}

pub fn recover_with_model(
    dn_a: &DNMatrix,
    dn_b: &DNMatrix,
    model: &ProductModel,
    opts: InversionOptions,
) -> Result<PotentialRecovery> {
    check_same_basis(dn_a, dn_b)?;
    if model.basis != dn_a.basis {
        return Err(Error::invalid("reconstruct", "model and DN data use different boundary bases"));
    }
    let b = dn_a.size();
    let data: Vec<f64> = dn_a.entries.iter().zip(&dn_b.entries).map(|(x, y)| x - y).collect();
    let mut rows = Vec::with_capacity(b * b);
    for j in 0..b {
        for i in 0..b {
            rows.push((i, j));
        }
    }
    let products = |&(i, j): &(usize, usize)| -> Vec<f64> {
        let v = model.solutions[i].interior();
        v.iter().zip(&model.adjoints[j]).map(|(a, s)| a * s).collect()
    };
    solve_product_system(model.solver.potential().grid(), &rows, products, &data, opts)
}

fn solve_product_system<R>(
    grid: &Arc<Grid>,
    rows: &[R],
    products: impl Fn(&R) -> Vec<f64>,
    data: &[f64],
    opts: InversionOptions,
) -> Result<PotentialRecovery> {
    if opts.coarse < 2 {
        return Err(Error::invalid("reconstruct", "coarse lattice needs at least 2 nodes per side"));
    }
    if data.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite { module: "reconstruct" });
    }
    let coarse = CoarseBasis::new(grid, opts.coarse);
    let h2 = grid.h() * grid.h();
    let n = grid.n();
    let interior_nodes: Vec<usize> = (0..grid.interior_len())
        .map(|k| {
            let (i, j) = grid.interior_node(k);
            j * n + i
        })
        .collect();
    let mut k = DMatrix::zeros(rows.len(), coarse.len());
    for (r, row) in rows.iter().enumerate() {
        let prod = products(row);
        for (idx, &node) in interior_nodes.iter().enumerate() {
            let w = h2 * prod[idx];
            if w == 0.0 {
                continue;
            }
            for &(p, wt) in &coarse.weights[node] {
                k[(r, p)] += w * wt;
            }
        }
    }
    let d = DVector::from_column_slice(data);
    let (c, reg, effective_rank, misfit, lcurve) = regularized_solve(&k, &d, &coarse, opts.reg);
    Ok(PotentialRecovery {
        field: coarse.evaluate(grid, &c),
        reg,
        effective_rank,
        unknowns: coarse.len(),
        misfit,
        lcurve,
    })
}

/// Pairing values `h² Σ δq v_i σ_j` for a known difference, the model side of
/// the linearized identity.
pub fn pairing_values(model: &ProductModel, delta: &Field) -> Vec<f64> {
    let grid = model.solver.potential().grid();
    let h2 = grid.h() * grid.h();
    let d = delta.interior();
    let b = model.basis.len();
    let mut out = alloc::vec![0.0; b * b];
    for j in 0..b {
        for i in 0..b {
            let v = model.solutions[i].interior();
            out[j * b + i] = h2
                * v.iter()
                    .zip(&model.adjoints[j])
                    .zip(&d)
                    .map(|((a, s), q)| a * s * q)
                    .sum::<f64>();
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Gauge and sweep

/// `φ = w₂ − w₁` for the solution `w₂` of the known equation with the
/// Dirichlet data of `w₁`; its Neumann data must match the oracle's.
pub fn recover_gauge_phi(oracle: &dyn DnOracle, a2: &Nonlinearity, w1: &Field) -> Result<Field> {
    let f = trace(w1);
    let measured = oracle.neumann(&f)?;
    let (w2, _) = newton_solve(a2, &f, w1)?;
    let mismatch = (&normal_derivative(&w2) - &measured).norm_inf();
    let tol = 1e-6 + 5.0 * oracle.noise();
    if mismatch > tol {
        return Err(Error::Hypothesis {
            module: "reconstruct",
            what: "Neumann data of the known equation do not match the measurements",
            defect: mismatch,
        });
    }
    Ok(&w2 - w1)
}

/// Recovered `∂_u a(x, w(x) + λ)` on a grid of offsets `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachableSlice {
    pub lambdas: Vec<f64>,
    pub values: Vec<Field>,
    /// `coverage[l][node]`: the sweep reached `w(node) + lambdas[l]`.
    pub coverage: Vec<Vec<bool>>,
}

impl ReachableSlice {
    pub fn zero_index(&self) -> usize {
        self.lambdas.iter().position(|&l| l == 0.0).expect("offset grid contains zero")
    }

    /// Nodes covered at every offset.
    pub fn fully_covered(&self, node: usize) -> bool {
        self.coverage.iter().all(|c| c[node])
    }

    /// Fraction of interior nodes covered at every offset.
    pub fn interior_coverage(&self, grid: &Grid) -> f64 {
        let n = grid.n();
        let mut hit = 0;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                if self.fully_covered(j * n + i) {
                    hit += 1;
                }
            }
        }
        hit as f64 / grid.interior_len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub basis_size: usize,
    pub lambda_max: f64,
    /// Offsets per side: the grid is `λ_max · l / lambda_steps`.
    pub lambda_steps: usize,
    /// Sweep parameters per side.
    pub sweep_steps: usize,
    /// Margin by which the sweep overshoots `λ_max`.
    pub overshoot: f64,
    pub eps: f64,
    pub inversion: InversionOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            basis_size: 24,
            lambda_max: 0.1,
            lambda_steps: 5,
            sweep_steps: 5,
            overshoot: 1.15,
            eps: 1e-2,
            inversion: InversionOptions::default(),
        }
    }
}

/// One point of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSample {
    pub t: f64,
    /// `u_t − w` at every node, integrated from the recovered potentials.
    pub offset: Field,
    /// The same offset from the known equation (through the gauge), for
    /// comparison.
    pub known_offset: Field,
    /// Recovered `∂_u a(x, u_t(x))`.
    pub potential: Field,
    pub recovery: PotentialRecovery,
    pub dn_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub phi: Field,
    pub w: Field,
    /// Linearized solution (value 4 at the center) generating the sweep.
    pub direction: Field,
    pub samples: Vec<SweepSample>,
    pub slice: ReachableSlice,
}

/// First-order linearization sweep: recovers `∂_u a₁(x, w₁(x) + λ)` for the
/// oracle's equation from linearized DN data along `u_{1,t}` with Dirichlet
/// data `w₁ + t v`. The known equation `a₂` supplies the gauge, the sweep
/// direction and the reference potential at the base solution; positions
/// along the sweep come from the recovered potentials alone.
pub fn first_linearization_scan(
    oracle: &dyn DnOracle,
    a2: &Nonlinearity,
    w1: &Field,
    opts: SweepOptions,
) -> Result<SweepResult> {
    if !(opts.lambda_max > 0.0) || opts.lambda_steps == 0 || opts.sweep_steps == 0 {
        return Err(Error::invalid("reconstruct", "sweep needs a positive range and step counts"));
    }
    let grid = w1.grid().clone();
    let phi = recover_gauge_phi(oracle, a2, w1)?;
    let w2 = w1 + &phi;
    let basis = crate::mesh::fourier_basis(&grid, opts.basis_size);

    // sweep direction: a linearized solution with value 4 at the center,
    // generated by constant Dirichlet data so that it keeps one sign
    let q0 = a2.eval(&w2, 1)?;
    let lin0 = SchrodingerSolver::new(&q0)?;
    let c = (grid.n() - 1) / 2;
    let center = grid.index(c, c);
    let constant = [BoundaryField::constant(&grid, 0.5)];
    let direction = point_value_with(&lin0, center, 4.0, &constant, None)?.field;
    let mut reach = f64::INFINITY;
    for j in 1..grid.n() - 1 {
        for i in 1..grid.n() - 1 {
            reach = reach.min(direction.at(i, j).abs());
        }
    }
    if !(reach > 0.0) {
        return Err(Error::NoCoverage);
    }
    let t_max = opts.overshoot * opts.lambda_max / reach;
    let g = trace(&direction);

    // one reference model at the base solution for the whole sweep
    let model = ProductModel::with_solver(lin0, &basis)?;
    let dn_ref = model.solver().dn_map(&basis)?;
    let mut samples = Vec::with_capacity(2 * opts.sweep_steps + 1);
    let mut tangents = Vec::with_capacity(2 * opts.sweep_steps + 1);
    for s in 0..=2 * opts.sweep_steps {
        let t = t_max * (s as f64 - opts.sweep_steps as f64) / opts.sweep_steps as f64;
        let mut f = trace(w1);
        f.axpy(t, &g);
        let lin_a = linearized_dn(oracle, &f, &basis, opts.eps)?;
        // δ = q_ref − q_t
        let recovery = recover_with_model(&lin_a.matrix, &dn_ref, &model, opts.inversion)?;
        let potential = &q0 - &recovery.field;
        tangents.push(SchrodingerSolver::new(&potential)?.dirichlet(&g)?);
        let known = if s == opts.sweep_steps { w2.clone() } else { newton_solve(a2, &f, &w2)?.0 };
        samples.push(SweepSample {
            t,
            offset: Field::zeros(&grid),
            known_offset: &known - &w2,
            potential,
            recovery,
            dn_error: lin_a.error_estimate,
        });
    }
    // positions from d/dt u_t = v_t, the linearized solution for the
    // recovered potential, by the trapezoid rule outwards from t = 0
    let mid = opts.sweep_steps;
    for s in (0..mid).rev().chain(mid + 1..=2 * mid) {
        let prev = if s < mid { s + 1 } else { s - 1 };
        let dt = samples[s].t - samples[prev].t;
        let mut z = samples[prev].offset.clone();
        z.axpy(0.5 * dt, &tangents[prev]);
        z.axpy(0.5 * dt, &tangents[s]);
        samples[s].offset = z;
    }
    let offsets: Vec<Field> = samples.iter().map(|s| s.offset.clone()).collect();
    let potentials: Vec<Field> = samples.iter().map(|s| s.potential.clone()).collect();
    let slice = regrid_sweep(&grid, &offsets, &potentials, opts.lambda_max, opts.lambda_steps);
    Ok(SweepResult {
        phi,
        w: w1.clone(),
        direction,
        samples,
        slice,
    })
}

/// Per node, interpolates the sampled (offset, potential) pairs onto the
/// offset grid; nodes whose offsets are not strictly monotone in `t` are
/// masked except where a sample hits the offset exactly.
pub fn regrid_sweep(
    grid: &Arc<Grid>,
    offsets: &[Field],
    potentials: &[Field],
    lambda_max: f64,
    steps: usize,
) -> ReachableSlice {
    let lambdas: Vec<f64> = (0..=2 * steps)
        .map(|l| lambda_max * (l as f64 - steps as f64) / steps as f64)
        .collect();
    let nodes = grid.node_count();
    let mut values = alloc::vec![alloc::vec![0.0; nodes]; lambdas.len()];
    let mut coverage = alloc::vec![alloc::vec![false; nodes]; lambdas.len()];
    let mut z = Vec::with_capacity(offsets.len());
    let mut p = Vec::with_capacity(offsets.len());
    for node in 0..nodes {
        z.clear();
        p.clear();
        for (o, q) in offsets.iter().zip(potentials) {
            z.push(o.values()[node]);
            p.push(q.values()[node]);
        }
        let increasing = z.windows(2).all(|w| w[1] > w[0]);
        let decreasing = z.windows(2).all(|w| w[1] < w[0]);
        for (l, &lam) in lambdas.iter().enumerate() {
            if let Some(k) = z.iter().position(|&zz| zz == lam) {
                values[l][node] = p[k];
                coverage[l][node] = true;
                continue;
            }
            if !(increasing || decreasing) {
                continue;
            }
            for k in 0..z.len().saturating_sub(1) {
                let (z0, z1) = (z[k], z[k + 1]);
                if (z0 - lam) * (z1 - lam) <= 0.0 {
                    let r = (lam - z0) / (z1 - z0);
                    values[l][node] = p[k] + r * (p[k + 1] - p[k]);
                    coverage[l][node] = true;
                    break;
                }
            }
        }
    }
    ReachableSlice {
        lambdas,
        values: values
            .into_iter()
            .map(|v| Field::new(grid, v).expect("interpolated values are finite"))
            .collect(),
        coverage,
    }
}

/// `â(x, w(x) + λ) = −Δ_h w(x) + ∫₀^λ ∂_u a(x, w(x) + s) ds` with the
/// integral taken by the trapezoid rule over the slice's offset grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledNonlinearity {
    pub base: Field,
    pub slice: ReachableSlice,
}

pub fn assemble_nonlinearity(slice: &ReachableSlice, w: &Field) -> AssembledNonlinearity {
    AssembledNonlinearity {
        base: -&laplacian(w),
        slice: slice.clone(),
    }
}

impl AssembledNonlinearity {
    /// Value at `(node, w(node) + λ)`; `λ` need not lie on the grid.
    pub fn value(&self, node: usize, lambda: f64) -> Result<f64> {
        let lams = &self.slice.lambdas;
        let z0 = self.slice.zero_index();
        let (lo, hi) = (lams[0], lams[lams.len() - 1]);
        if !(lambda >= lo && lambda <= hi) {
            return Err(Error::Uncovered { node, offset: lambda });
        }
        let val = |l: usize| -> Result<f64> {
            if self.slice.coverage[l][node] {
                Ok(self.slice.values[l].values()[node])
            } else {
                Err(Error::Uncovered {
                    node,
                    offset: lams[l],
                })
            }
        };
        let mut acc = 0.0;
        let mut l = z0;
        if lambda >= 0.0 {
            while l + 1 < lams.len() && lams[l + 1] <= lambda {
                acc += 0.5 * (lams[l + 1] - lams[l]) * (val(l)? + val(l + 1)?);
                l += 1;
            }
            if lams[l] < lambda {
                let r = (lambda - lams[l]) / (lams[l + 1] - lams[l]);
                let (a, b) = (val(l)?, val(l + 1)?);
                let end = a + r * (b - a);
                acc += 0.5 * (lambda - lams[l]) * (a + end);
            }
        } else {
            while l > 0 && lams[l - 1] >= lambda {
                acc -= 0.5 * (lams[l] - lams[l - 1]) * (val(l)? + val(l - 1)?);
                l -= 1;
            }
            if lams[l] > lambda {
                let r = (lams[l] - lambda) / (lams[l] - lams[l - 1]);
                let (a, b) = (val(l)?, val(l - 1)?);
                let end = a + r * (b - a);
                acc -= 0.5 * (lams[l] - lambda) * (a + end);
            }
        }
        Ok(self.base.values()[node] + acc)
    }
}

/// Sup over covered interior nodes and grid offsets of `|â − a|`, divided by
/// the sup of `|a|` over the same set. Returns `(relative error, nodes used)`.
pub fn tube_error(assembled: &AssembledNonlinearity, truth: &Nonlinearity, w: &Field) -> Result<(f64, usize)> {
    let grid = w.grid();
    let n = grid.n();
    let mut worst: f64 = 0.0;
    let mut size: f64 = 0.0;
    let mut used = 0;
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let node = j * n + i;
            if !assembled.slice.fully_covered(node) {
                continue;
            }
            used += 1;
            for &lam in &assembled.slice.lambdas {
                let exact = truth.value_at(node, w.values()[node] + lam, 0);
                let got = assembled.value(node, lam)?;
                worst = worst.max((got - exact).abs());
                size = size.max(exact.abs());
            }
        }
    }
    if used == 0 {
        return Err(Error::NoCoverage);
    }
    Ok((if size > 0.0 { worst / size } else { worst }, used))
}

// ---------------------------------------------------------------------------
// Higher-order linearization

#[derive(Debug, Clone, PartialEq)]
pub struct DividedDifference {
    /// Mixed central difference with step `ε`.
    pub value: Field,
    /// Richardson combination of the steps `ε` and `ε/2`.
    pub extrapolated: Field,
    /// Estimated sup error of `value`.
    pub error_estimate: f64,
    /// Halving from `ε/2` to `ε/4` no longer reduced the difference: the
    /// result sits at the solver's noise floor.
    pub noise_limited: bool,
    /// Differences with steps `ε`, `ε/2` and `ε/4`.
    pub levels: Vec<Field>,
}

pub const MAX_DIFFERENCE_ORDER: usize = 5;

fn mixed_difference(k: usize, eps: f64, mut eval: impl FnMut(&[f64]) -> Result<Field>) -> Result<Field> {
    let mut acc: Option<Field> = None;
    let mut coeffs = alloc::vec![0.0; k];
    for mask in 0..(1usize << k) {
        let mut sign = 1.0;
        for (m, c) in coeffs.iter_mut().enumerate() {
            if mask >> m & 1 == 1 {
                *c = eps;
            } else {
                *c = -eps;
                sign = -sign;
            }
        }
        let u = eval(&coeffs)?;
        match &mut acc {
            None => acc = Some(u.scale(sign)),
            Some(a) => a.axpy(sign, &u),
        }
    }
    Ok(acc.expect("at least one corner").scale(1.0 / (2.0 * eps).powi(k as i32)))
}

fn difference_levels(
    k: usize,
    eps: f64,
    mut eval: impl FnMut(&[f64]) -> Result<Field>,
) -> Result<DividedDifference> {
    if k == 0 || k > MAX_DIFFERENCE_ORDER {
        return Err(Error::invalid("reconstruct", "difference order must be between 1 and 5"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("reconstruct", "difference step must be positive"));
    }
    let d1 = mixed_difference(k, eps, &mut eval)?;
    let d2 = mixed_difference(k, 0.5 * eps, &mut eval)?;
    let d4 = mixed_difference(k, 0.25 * eps, &mut eval)?;
    let g12 = (&d2 - &d1).norm_inf();
    let g24 = (&d4 - &d2).norm_inf();
    Ok(DividedDifference {
        extrapolated: (&d2.scale(4.0) - &d1).scale(1.0 / 3.0),
        value: d1.clone(),
        error_estimate: 4.0 * g12 / 3.0,
        noise_limited: g24 > 0.5 * g12,
        levels: alloc::vec![d1, d2, d4],
    })
}

/// `D^k S_{a,w}(0; v₁, …, v_k)` by mixed central differences of
/// `(ε₁, …, ε_k) ↦ S(Σ εᵢ vᵢ)`.
pub fn divided_difference_solution(
    a: &Nonlinearity,
    w: &Field,
    directions: &[Field],
    eps: f64,
) -> Result<DividedDifference> {
    let map = SolutionMap::new(a, w)?;
    divided_difference_with(&map, directions, eps)
}

pub fn divided_difference_with(map: &SolutionMap, directions: &[Field], eps: f64) -> Result<DividedDifference> {
    let grid = map.base().grid().clone();
    difference_levels(directions.len(), eps, |c| {
        let mut v = Field::zeros(&grid);
        for (d, &ci) in directions.iter().zip(c) {
            v.axpy(ci, d);
        }
        Ok(map.apply(&v)?.0)
    })
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn check_lower_derivatives(a1: &Nonlinearity, a2: &Nonlinearity, w1: &Field, w2: &Field, k: usize) -> Result<()> {
    for l in 1..k {
        let d = &a1.eval(w1, l)? - &a2.eval(w2, l)?;
        let defect = d.norm_inf();
        if defect > 1e-10 {
            return Err(Error::Hypothesis {
                module: "reconstruct",
                what: "lower-order derivatives of the two nonlinearities differ",
                defect,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub order: usize,
    /// `(1/k!) ∫ (∂_u^k a₁(x, w₁) − ∂_u^k a₂(x, w₂)) v₁ ⋯ v_{k+1}` by the
    /// trapezoid rule.
    pub interior: f64,
    /// The same quantity from boundary data of
    /// `f = D^k u₁ − D^k u₂`: `−(1/k!) ⟨D f, v_{k+1}⟩_{∂Ω}` with the flux
    /// derivative `D`, exact under summation by parts.
    pub boundary: f64,
    /// `‖f|∂Ω‖∞` and `‖∂_ν f‖∞`.
    pub cauchy_trace: f64,
    pub cauchy_neumann: f64,
    /// Interior sup of `Δ_h f + q f − (∂_u^k a₂ − ∂_u^k a₁) v₁ ⋯ v_k`.
    pub pde_residual: f64,
    /// Richardson gap of that residual between the steps `ε` and `ε/2`,
    /// plus the floor carried in from the residuals of the corner solves.
    pub pde_error_estimate: f64,
    /// Richardson error estimate of the divided difference.
    pub difference_error: f64,
    pub f: Field,
}

/// Integral identity for two nonlinearities whose derivatives of order
/// `1..k−1` agree at their base solutions. The second family of solutions
/// shares the Dirichlet data of the first.
pub fn higher_order_identity(
    a1: &Nonlinearity,
    a2: &Nonlinearity,
    w1: &Field,
    w2: &Field,
    k: usize,
    solutions: &[Field],
    eps: f64,
) -> Result<IdentityReport> {
    if solutions.len() != k + 1 {
        return Err(Error::LengthMismatch {
            module: "reconstruct",
            expected: k + 1,
            got: solutions.len(),
        });
    }
    if k < 1 {
        return Err(Error::invalid("reconstruct", "identity order must be at least 1"));
    }
    w1.check_same_grid(w2)?;
    check_lower_derivatives(a1, a2, w1, w2, k)?;
    let map = SolutionMap::new(a1, w1)?;
    let res2 = pde_residual(a2, w2)?;
    if res2 > 1e-8 * w2.norm_inf().max(1.0) {
        return Err(Error::NotASolution {
            module: "reconstruct",
            equation: "second nonlinearity",
            residual: res2,
        });
    }
    if (&trace(w1) - &trace(w2)).norm_inf() > 1e-10 {
        return Err(Error::Hypothesis {
            module: "reconstruct",
            what: "base solutions have different Dirichlet data",
            defect: (&trace(w1) - &trace(w2)).norm_inf(),
        });
    }
    for v in solutions {
        let r = map.linear_residual(v);
        if r > 1e-9 * v.norm_inf().max(1.0) {
            return Err(Error::NotASolution {
                module: "reconstruct",
                equation: "common linearized",
                residual: r,
            });
        }
    }
    let grid = w1.grid().clone();
    let dirs = &solutions[..k];
    let shift = w1 - w2;
    let mut corner_residuals = Vec::with_capacity(3 << k);
    let diff = difference_levels(k, eps, |c| {
        let mut v = Field::zeros(&grid);
        for (d, &ci) in dirs.iter().zip(c) {
            v.axpy(ci, d);
        }
        let u1 = map.apply(&v)?.0;
        let start = &u1 - &shift;
        let u2 = newton_solve(a2, &trace(&u1), &start)?.0;
        corner_residuals.push(pde_residual(a1, &u1)? + pde_residual(a2, &u2)?);
        Ok(&u1 - &u2)
    })?;
    let f = diff.extrapolated.clone();
    let kf = factorial(k);
    let dk = &a1.eval(w1, k)? - &a2.eval(w2, k)?;
    let mut prod = dk.clone();
    for v in dirs {
        prod = prod.zip_map(v, |a, b| a * b);
    }
    let interior = inner_domain(&prod, &solutions[k])? / kf;
    let boundary = -inner_boundary(&flux_derivative(&f), &trace(&solutions[k]))? / kf;
    let q = map.potential();
    let residual = |g: &Field| &(&laplacian(g) + &g.zip_map(q, |a, b| a * b)) + &prod;
    let pde = residual(&f).interior_norm_inf();
    // solver residuals of the corners enter each level divided by (2ε)^k,
    // and the extrapolation weighs the levels by 4/3 and 1/3
    let floor = |level: usize, step: f64| {
        let n = 1usize << k;
        corner_residuals[level * n..(level + 1) * n].iter().sum::<f64>() / (2.0 * step).powi(k as i32)
    };
    let noise = (4.0 * floor(1, 0.5 * eps) + floor(0, eps)) / 3.0;
    let gap = (&residual(&diff.levels[1]) - &residual(&diff.levels[0])).interior_norm_inf();
    let pde_bound = 4.0 * gap / 3.0 + noise;
    let pair = cauchy_pair(&f);
    Ok(IdentityReport {
        order: k,
        interior,
        boundary,
        cauchy_trace: pair.dirichlet.norm_inf(),
        cauchy_neumann: pair.neumann.norm_inf(),
        pde_residual: pde,
        pde_error_estimate: pde_bound,
        difference_error: diff.error_estimate,
        f,
    })
}

/// Options for the k-th order recovery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorOptions {
    pub basis_size: usize,
    pub eps: f64,
    pub inversion: InversionOptions,
}

impl Default for TaylorOptions {
    fn default() -> Self {
        TaylorOptions {
            basis_size: 24,
            eps: 1e-2,
            inversion: InversionOptions::default(),
        }
    }
}

/// Recovers `δ = ∂_u^k a₁(·, w₁) − ∂_u^k a₂(·, w₂)` from k-th mixed
/// differences of two oracles around the common Dirichlet data `base`, with
/// `q_common` the shared linearization. Requires the lower-order terms of
/// the k-th derivative of the solution map to vanish (e.g. `a_i = q_i u^k`
/// around zero).
pub fn recover_kth_taylor(
    oracle1: &dyn DnOracle,
    oracle2: &dyn DnOracle,
    base: &BoundaryField,
    q_common: &Field,
    k: usize,
    opts: TaylorOptions,
) -> Result<PotentialRecovery> {
    if !(2..=MAX_DIFFERENCE_ORDER).contains(&k) {
        return Err(Error::invalid("reconstruct", "Taylor order must be between 2 and 5"));
    }
    let grid = q_common.grid().clone();
    let basis = crate::mesh::fourier_basis(&grid, opts.basis_size);
    let model = ProductModel::new(q_common, &basis)?;
    let b = basis.len();
    // nondecreasing multi-indices
    let mut multis: Vec<Vec<usize>> = alloc::vec![Vec::new()];
    for _ in 0..k {
        let mut next = Vec::new();
        for m in &multis {
            let start = m.last().copied().unwrap_or(0);
            for i in start..b {
                let mut e = m.clone();
                e.push(i);
                next.push(e);
            }
        }
        multis = next;
    }
    let mut rows = Vec::with_capacity(multis.len() * b);
    let mut data = Vec::with_capacity(multis.len() * b);
    for m in &multis {
        let diff = |oracle: &dyn DnOracle| -> Result<BoundaryField> {
            let field = mixed_difference(k, opts.eps, |c| {
                let mut f = base.clone();
                for (&i, &ci) in m.iter().zip(c) {
                    f.axpy(ci, &basis[i]);
                }
                Ok(oracle.neumann(&f)?.embed())
            })?;
            Ok(trace(&field))
        };
        let d = &diff(oracle1)? - &diff(oracle2)?;
        for (j, fj) in basis.iter().enumerate() {
            rows.push((m.clone(), j));
            data.push(inner_boundary(&d, fj)?);
        }
    }
    // ⟨D^k(N₁ − N₂), f_j⟩ = −h² Σ σ_j δ Π v
    let products = |(m, j): &(Vec<usize>, usize)| -> Vec<f64> {
        let mut p: Vec<f64> = model.adjoints[*j].iter().map(|s| -s).collect();
        for &i in m {
            for (x, v) in p.iter_mut().zip(model.solutions[i].interior()) {
                *x *= v;
            }
        }
        p
    };
    solve_product_system(&grid, &rows, products, &data, opts.inversion)
}

/// Relative discrete L² error `‖got − want‖ / ‖want‖` by the trapezoid rule.
pub fn relative_l2_error(got: &Field, want: &Field) -> Result<f64> {
    let d = got - want;
    let num = inner_domain(&d, &d)?.sqrt();
    let den = inner_domain(want, want)?.sqrt();
    Ok(if den > 0.0 { num / den } else { num })
}
