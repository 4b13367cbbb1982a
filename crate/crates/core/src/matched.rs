//! The second solution map: given a solution of the first equation near
//! `w₁`, produce the solution of the second equation near `w₂` with the same
//! Cauchy data.
//!
//! Both the projection `P` onto the range of `Δ_h + q` over fields with zero
//! Cauchy data and its inverse `G` come from one least-squares problem over
//! the clamped space (fields vanishing on the outer three node layers):
//! `y* = argmin ‖A y − u‖`, `P(u) = A y*`, `G(z) = y*` for `z` in the range.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::cauchy::cauchy_pair;
use crate::error::{Error, Result};
use crate::mesh::{laplacian, Field};
use crate::nonlinearity::Nonlinearity;
use crate::solution_map::{fit_rate, pde_residual, SolutionMap, SolveReport, PICARD_MAX, RATE_WINDOW};
use crate::sparse::{
    assemble_bilaplacian_clamped, assemble_clamped_restriction, clamped_len, clamped_node, LinearSolver,
    SparseOperator,
};

/// Factored clamped fourth-order problem for one potential.
#[derive(Debug, Clone)]
pub struct ClampedSolver {
    q: Field,
    restriction: Arc<SparseOperator>,
    normal: LinearSolver,
}

impl ClampedSolver {
    pub fn new(q: &Field) -> Result<ClampedSolver> {
        if !q.is_finite() {
            return Err(Error::NonFinite { module: "matched" });
        }
        let restriction = Arc::new(assemble_clamped_restriction(q));
        let normal = LinearSolver::new(Arc::new(assemble_bilaplacian_clamped(q)))?;
        Ok(ClampedSolver {
            q: q.clone(),
            restriction,
            normal,
        })
    }

    pub fn potential(&self) -> &Field {
        &self.q
    }

    /// Clamped coefficients of the least-squares fit to the interior of `u`.
    fn fit(&self, u: &Field) -> Result<Vec<f64>> {
        u.check_same_grid(&self.q)?;
        let rhs = self.restriction.matvec_transpose(&u.interior());
        self.normal.solve(&rhs)
    }

    fn embed(&self, y: &[f64]) -> Field {
        let grid = self.q.grid();
        let mut out = Field::zeros(grid);
        for (k, &v) in y.iter().enumerate() {
            let (i, j) = clamped_node(grid, k);
            out.set(i, j, v);
        }
        out
    }

    fn image(&self, y: &[f64]) -> Field {
        Field::from_interior_zero(self.q.grid(), &self.restriction.matvec(y))
    }

    /// `P(u) = (Δ_h + q) y` for the clamped `y` solving the normal equations;
    /// zero on the boundary.
    pub fn project(&self, u: &Field) -> Result<Field> {
        let y = self.fit(u)?;
        Ok(self.image(&y))
    }

    /// The clamped `y` with `(Δ_h + q) y = z`; `z` must lie in the range of
    /// the projection.
    pub fn inverse(&self, z: &Field) -> Result<Field> {
        let y = self.fit(z)?;
        let defect = crate::dense::norm_inf(
            &self
                .image(&y)
                .interior()
                .iter()
                .zip(z.interior())
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        if defect > 1e-6 * z.interior_norm_inf() {
            return Err(Error::Hypothesis {
                module: "matched",
                what: "right-hand side outside the range of the clamped operator",
                defect,
            });
        }
        Ok(self.embed(&y))
    }

    /// `G(P(u))` without the range check (the argument is in the range by
    /// construction).
    pub fn inverse_of_projection(&self, u: &Field) -> Result<Field> {
        Ok(self.embed(&self.fit(u)?))
    }

    pub fn dimension(&self) -> usize {
        clamped_len(self.q.grid())
    }
}

pub fn clamped_projection(q: &Field, u: &Field) -> Result<Field> {
    ClampedSolver::new(q)?.project(u)
}

pub fn zero_cauchy_inverse(q: &Field, z: &Field) -> Result<Field> {
    ClampedSolver::new(q)?.inverse(z)
}

/// The matched map `v ↦ u₂` for two nonlinearities with base solutions of
/// equal Cauchy data.
#[derive(Debug, Clone)]
pub struct MatchedMap {
    first: SolutionMap,
    a2: Nonlinearity,
    w2: Field,
    /// `w₁ − w₂`; zero Cauchy data.
    offset: Field,
    /// `(Δ_h + q₂)(w₁ − w₂)`
    offset_image: Field,
    clamped: ClampedSolver,
}

impl MatchedMap {
    pub fn new(a1: &Nonlinearity, a2: &Nonlinearity, w1: &Field, w2: &Field) -> Result<MatchedMap> {
        w1.check_same_grid(w2)?;
        let res = pde_residual(a2, w2)?;
        if res > 1e-8 * w2.norm_inf().max(1.0) {
            return Err(Error::NotASolution {
                module: "matched",
                equation: "second nonlinearity",
                residual: res,
            });
        }
        let first = SolutionMap::new(a1, w1)?;
        let mismatch = cauchy_pair(w1).max_deviation(&cauchy_pair(w2));
        if mismatch > 1e-10 * w1.norm_inf().max(1.0) {
            return Err(Error::Hypothesis {
                module: "matched",
                what: "base solutions have different Cauchy data",
                defect: mismatch,
            });
        }
        let q2 = a2.eval(w2, 1)?;
        let clamped = ClampedSolver::new(&q2)?;
        let offset = w1 - w2;
        let offset_image = &laplacian(&offset) + &offset.zip_map(&q2, |a, b| a * b);
        Ok(MatchedMap {
            first,
            a2: a2.clone(),
            w2: w2.clone(),
            offset,
            offset_image,
            clamped,
        })
    }

    pub fn first_map(&self) -> &SolutionMap {
        &self.first
    }

    pub fn second_base(&self) -> &Field {
        &self.w2
    }

    pub fn clamped(&self) -> &ClampedSolver {
        &self.clamped
    }

    /// `q₂ r + a₂(u₁ − r) − a₁(u₁) − (Δ_h + q₂)(w₁ − w₂)` at `r = (w₁ − w₂) + y`;
    /// the clamped increment `y` solves `(Δ_h + q₂) y = P(this)`.
    fn forcing(&self, u1: &Field, a1u1: &Field, y: &Field) -> Result<Field> {
        let q2 = self.clamped.potential();
        let r = &self.offset + y;
        let a2u = self.a2.eval(&(u1 - &r), 0)?;
        let lin = r.zip_map(q2, |a, b| a * b);
        Ok(&(&(&lin + &a2u) - a1u1) - &self.offset_image)
    }

    /// Solution of the second equation with the Cauchy data of `S_{a₁}(v)`.
    pub fn apply(&self, v: &Field) -> Result<(Field, SolveReport)> {
        let (u1, _) = self.first.apply(v)?;
        self.match_solution(&u1, v.surrogate_norm())
    }

    /// Runs the fixed point for a given solution `u₁` of the first equation.
    pub fn match_solution(&self, u1: &Field, size: f64) -> Result<(Field, SolveReport)> {
        let a1u1 = self.first.nonlinearity().eval(u1, 0)?;
        let diverged = |rate| Error::DeltaTooLarge { module: "matched", rate };
        let mut y = Field::zeros(u1.grid());
        let mut updates = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        for it in 1..=PICARD_MAX {
            iterations = it;
            let next = match self.forcing(u1, &a1u1, &y) {
                Ok(f) => self.clamped.inverse_of_projection(&f)?,
                Err(Error::NonFinite { .. }) => return Err(diverged(f64::INFINITY)),
                Err(e) => return Err(e),
            };
            if !next.is_finite() {
                return Err(diverged(f64::INFINITY));
            }
            let d = (&next - &y).norm_inf();
            let scale = y.norm_inf().max(1.0);
            y = next;
            updates.push(d);
            if d <= 1e-12 * scale {
                converged = true;
                break;
            }
            if updates.len() > RATE_WINDOW {
                if let Some(rate) = fit_rate(&updates, 1e-14 * scale) {
                    if rate >= 0.9 {
                        return Err(diverged(rate));
                    }
                }
            }
        }
        if !converged {
            return Err(Error::FixedPointNonConvergence {
                module: "matched",
                update: *updates.last().unwrap_or(&f64::INFINITY),
            });
        }
        let scale = y.norm_inf().max(1.0);
        let rate = fit_rate(&updates, 1e-14 * scale).unwrap_or(0.0);
        let r = &self.offset + &y;
        let u2 = u1 - &r;
        let residual = pde_residual(&self.a2, &u2)?;
        if residual > 1e-7 * u2.norm_inf().max(1.0) {
            return Err(Error::Hypothesis {
                module: "matched",
                what: "no solution of the second equation shares these Cauchy data",
                defect: residual,
            });
        }
        let mismatch = cauchy_pair(&u2).max_deviation(&cauchy_pair(u1));
        if mismatch > 1e-8 * u1.norm_inf().max(1.0) {
            return Err(Error::Postcondition {
                module: "matched",
                what: "Cauchy data of the matched solution",
                value: mismatch,
            });
        }
        Ok((
            u2,
            SolveReport {
                iterations,
                final_update_norm: *updates.last().unwrap_or(&0.0),
                contraction_rate: rate,
                residual,
                delta_used: size,
                bound_ratio: if size > 0.0 { y.surrogate_norm() / size } else { 0.0 },
                history: updates,
            },
        ))
    }

    /// Symmetric difference quotient `(T(t v) − T(−t v)) / 2t`.
    pub fn derivative_at_zero(&self, v: &Field, t: f64) -> Result<Field> {
        if !(t >= 1e-8) {
            return Err(Error::StepTooSmall(t));
        }
        let plus = self.apply(&v.scale(t))?.0;
        let minus = self.apply(&v.scale(-t))?.0;
        Ok((&plus - &minus).scale(0.5 / t))
    }
}

pub fn matched_solution(
    a1: &Nonlinearity,
    a2: &Nonlinearity,
    w1: &Field,
    w2: &Field,
    v: &Field,
) -> Result<(Field, SolveReport)> {
    MatchedMap::new(a1, a2, w1, w2)?.apply(v)
}
