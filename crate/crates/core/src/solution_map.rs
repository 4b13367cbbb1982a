//! Nonlinear solves around a fixed solution `w` of `Δw + a(x, w) = 0`:
//! damped Newton, the quadratic remainder, the Picard correction `Q(v)`,
//! the solution map `v ↦ w + v + Q(v)`, its inverse and its derivative.

use alloc::sync::Arc;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math for no_std builds
use num_traits::Float;

use crate::error::{Error, Result};
use crate::mesh::{laplacian, trace, BoundaryField, Field};
use crate::nonlinearity::Nonlinearity;
use crate::schrodinger::SchrodingerSolver;
use crate::sparse::{assemble_schrodinger, LinearSolver};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_update_norm: f64,
    /// Geometric fit of successive update norms (0 when the iteration stops
    /// before two updates above round-off are available).
    pub contraction_rate: f64,
    /// Residual of the target equation, recomputed from the output.
    pub residual: f64,
    /// Size of the input the solver was run at.
    pub delta_used: f64,
    /// Ratio recorded for the relevant a-priori bound (e.g. `‖Q(v)‖/‖v‖²`).
    pub bound_ratio: f64,
    /// Update norms (Picard) or residual norms (Newton) per iteration.
    pub history: Vec<f64>,
}

/// Interior sup of `Δ_h u + a(x, u)`.
pub fn pde_residual(a: &Nonlinearity, u: &Field) -> Result<f64> {
    let lap = laplacian(u);
    let au = a.eval(u, 0)?;
    Ok(interior_sup(&(&lap + &au)))
}

pub(crate) fn interior_sup(f: &Field) -> f64 {
    f.interior_norm_inf()
}

fn pde_defect(a: &Nonlinearity, u: &Field) -> Result<Vec<f64>> {
    let lap = laplacian(u);
    let au = a.eval(u, 0)?;
    Ok((&lap + &au).interior())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    /// Converged when `‖Δ_h u + a(u)‖∞ ≤ tolerance · max(1, ‖u‖∞)`.
    pub tolerance: f64,
    /// Keep the Jacobian of the first iterate while it still reduces the
    /// residual by half per step.
    pub reuse_jacobian: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iterations: 50,
            tolerance: 1e-10,
            reuse_jacobian: false,
        }
    }
}

/// Damped Newton for `Δ_h u + a(x, u) = 0`, `u = f` on the boundary.
pub fn newton_solve(a: &Nonlinearity, f: &BoundaryField, u0: &Field) -> Result<(Field, SolveReport)> {
    newton_solve_with(a, f, u0, NewtonOptions::default())
}

pub fn newton_solve_with(
    a: &Nonlinearity,
    f: &BoundaryField,
    u0: &Field,
    opts: NewtonOptions,
) -> Result<(Field, SolveReport)> {
    if !u0.is_finite() {
        return Err(Error::NonFinite { module: "solution_map" });
    }
    u0.check_same_grid(&f.embed())?;
    let grid = u0.grid().clone();
    let mut u = u0.clone();
    for (p, &k) in grid.boundary_order().iter().enumerate() {
        u.values_mut()[k] = f.values()[p];
    }
    let mut defect = pde_defect(a, &u)?;
    let mut history = Vec::new();
    let mut jacobian: Option<LinearSolver> = None;
    let mut last_update = 0.0;
    let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for it in 0..=opts.max_iterations {
        let res = crate::dense::norm_inf(&defect);
        history.push(res);
        if res <= opts.tolerance * u.norm_inf().max(1.0) {
            return Ok((
                u.clone(),
                SolveReport {
                    iterations: it,
                    final_update_norm: last_update,
                    contraction_rate: newton_rate(&history),
                    residual: pde_residual(a, &u)?,
                    delta_used: 0.0,
                    bound_ratio: 0.0,
                    history,
                },
            ));
        }
        if it == opts.max_iterations {
            break;
        }
        let stale = match (&jacobian, history.len()) {
            (None, _) => true,
            (Some(_), l) if l >= 2 => !opts.reuse_jacobian || history[l - 1] > 0.5 * history[l - 2],
            _ => true,
        };
        if stale {
            let q = a.eval(&u, 1)?;
            let op = Arc::new(assemble_schrodinger(&q));
            jacobian = Some(LinearSolver::new(op).map_err(|e| match e {
                Error::Singular { .. } => Error::SingularJacobian { iteration: it },
                other => other,
            })?);
        }
        let rhs: Vec<f64> = defect.iter().map(|v| -v).collect();
        let step = jacobian
            .as_ref()
            .expect("jacobian set above")
            .solve(&rhs)
            .map_err(|e| match e {
                Error::Singular { .. } | Error::ResidualContract { .. } => Error::SingularJacobian { iteration: it },
                other => other,
            })?;
        let merit = norm2(&defect);
        let step_field = Field::from_interior_zero(&grid, &step);
        let mut lambda = 1.0;
        let (mut best_u, mut best_defect) = (None, None);
        for _ in 0..12 {
            let mut trial = u.clone();
            trial.axpy(lambda, &step_field);
            if !trial.is_finite() {
                lambda *= 0.5;
                continue;
            }
            let d = pde_defect(a, &trial)?;
            let ok = norm2(&d) <= (1.0 - 1e-4 * lambda) * merit;
            best_u = Some(trial);
            best_defect = Some(d);
            if ok {
                break;
            }
            lambda *= 0.5;
        }
        let (Some(nu), Some(nd)) = (best_u, best_defect) else {
            return Err(Error::NewtonNonConvergence {
                iterations: it,
                residual: res,
            });
        };
        last_update = lambda * crate::dense::norm_inf(&step);
        u = nu;
        defect = nd;
    }
    Err(Error::NewtonNonConvergence {
        iterations: opts.max_iterations,
        residual: *history.last().unwrap_or(&f64::INFINITY),
    })
}

fn newton_rate(history: &[f64]) -> f64 {
    if history.len() < 2 || history[0] == 0.0 {
        return 0.0;
    }
    let k = history.len() - 1;
    (history[k] / history[0]).max(0.0).powf(1.0 / k as f64)
}

/// `R(h) = ∫₀¹ [∂_u a(x, w + t h) − ∂_u a(x, w)] h dt`
pub fn remainder(a: &Nonlinearity, w: &Field, h: &Field) -> Result<Field> {
    a.remainder(w, h)
}

pub(crate) const PICARD_MAX: usize = 200;
pub(crate) const RATE_WINDOW: usize = 5;

/// Geometric fit of the ratios between successive update norms over the
/// first few updates above the round-off floor.
pub(crate) fn fit_rate(updates: &[f64], floor: f64) -> Option<f64> {
    let usable: Vec<f64> = updates.iter().copied().take_while(|&d| d > floor).collect();
    if usable.len() < 2 {
        return None;
    }
    let take = usable.len().min(RATE_WINDOW + 1);
    let first = usable[0];
    let last = usable[take - 1];
    Some((last / first).powf(1.0 / (take - 1) as f64))
}

/// The solution map around a fixed solution `w` of `Δw + a(x, w) = 0`.
#[derive(Debug, Clone)]
pub struct SolutionMap {
    a: Nonlinearity,
    w: Field,
    q: Field,
    lin: SchrodingerSolver,
}

impl SolutionMap {
    /// Checks that `w` solves the equation and prepares the linearized
    /// solver at `w`.
    pub fn new(a: &Nonlinearity, w: &Field) -> Result<SolutionMap> {
        let res = pde_residual(a, w)?;
        if res > 1e-8 * w.norm_inf().max(1.0) {
            return Err(Error::NotASolution {
                module: "solution_map",
                equation: "semilinear",
                residual: res,
            });
        }
        let q = a.eval(w, 1)?;
        let lin = SchrodingerSolver::new(&q)?;
        Ok(SolutionMap {
            a: a.clone(),
            w: w.clone(),
            q,
            lin,
        })
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.a
    }

    pub fn base(&self) -> &Field {
        &self.w
    }

    /// `∂_u a(x, w(x))`
    pub fn potential(&self) -> &Field {
        &self.q
    }

    pub fn linear_solver(&self) -> &SchrodingerSolver {
        &self.lin
    }

    /// Interior sup of `Δ_h v + q v`.
    pub fn linear_residual(&self, v: &Field) -> f64 {
        self.lin.residual(v, &Field::zeros(v.grid()))
    }

    /// Solution of the linearized equation with the given boundary data
    /// (corrected by the kernel term when the linearization is resonant).
    pub fn linear_solution(&self, f: &BoundaryField) -> Result<Field> {
        Ok(self.lin.solve(&Field::zeros(f.grid()), f)?.u)
    }

    fn contraction_step(&self, v: &Field, r: &Field) -> Result<Field> {
        let rem = self.a.remainder(&self.w, &(v + r))?;
        let zero = BoundaryField::zeros(v.grid());
        Ok(-&self.lin.solve(&rem, &zero)?.u)
    }

    /// The correction `Q(v)`: the fixed point of `r ↦ −G(R(v + r), 0)`,
    /// iterated from `start` (zero by default).
    pub fn correction(&self, v: &Field, start: Option<&Field>) -> Result<(Field, SolveReport)> {
        v.check_same_grid(&self.w)?;
        let mut r = match start {
            Some(s) => s.clone(),
            None => Field::zeros(v.grid()),
        };
        let mut updates = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        for it in 1..=PICARD_MAX {
            iterations = it;
            let next = match self.contraction_step(v, &r) {
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::DeltaTooLarge {
                        module: "solution_map",
                        rate: f64::INFINITY,
                    })
                }
                other => other?,
            };
            if !next.is_finite() {
                return Err(Error::DeltaTooLarge {
                    module: "solution_map",
                    rate: f64::INFINITY,
                });
            }
            let d = (&next - &r).norm_inf();
            let scale = r.norm_inf().max(1.0);
            r = next;
            updates.push(d);
            if d <= 1e-12 * scale {
                converged = true;
                break;
            }
            if updates.len() > RATE_WINDOW {
                if let Some(rate) = fit_rate(&updates, 1e-14 * scale) {
                    if rate >= 0.9 {
                        return Err(Error::DeltaTooLarge {
                            module: "solution_map",
                            rate,
                        });
                    }
                }
            }
        }
        let scale = r.norm_inf().max(1.0);
        if !converged {
            return Err(Error::FixedPointNonConvergence {
                module: "solution_map",
                update: *updates.last().unwrap_or(&f64::INFINITY),
            });
        }
        let rate = fit_rate(&updates, 1e-14 * scale).unwrap_or(0.0);
        let residual = {
            let rem = self.a.remainder(&self.w, &(v + &r))?;
            self.lin.residual(&r, &-&rem)
        };
        let vn = v.surrogate_norm();
        Ok((
            r.clone(),
            SolveReport {
                iterations,
                final_update_norm: *updates.last().unwrap_or(&0.0),
                contraction_rate: rate,
                residual,
                delta_used: vn,
                bound_ratio: if vn > 0.0 { r.surrogate_norm() / (vn * vn) } else { 0.0 },
                history: updates,
            },
        ))
    }

    /// `S(v) = w + v + Q(v)` for a solution `v` of the linearized equation.
    pub fn apply(&self, v: &Field) -> Result<(Field, SolveReport)> {
        let lr = self.linear_residual(v);
        if lr > 1e-9 * v.norm_inf().max(1.0) {
            return Err(Error::NotASolution {
                module: "solution_map",
                equation: "linearized",
                residual: lr,
            });
        }
        let (r, mut report) = self.correction(v, None)?;
        let u = &(&self.w + v) + &r;
        report.residual = pde_residual(&self.a, &u)?;
        if report.residual > 1e-8 * u.norm_inf().max(1.0) {
            return Err(Error::Postcondition {
                module: "solution_map",
                what: "residual of the solution map output",
                value: report.residual,
            });
        }
        report.bound_ratio = {
            let vn = v.surrogate_norm();
            if vn > 0.0 { r.surrogate_norm() / (vn * vn) } else { 0.0 }
        };
        Ok((u, report))
    }

    /// Recovers `v` from a solution `u` near `w`:
    /// `v = P(u − w) + G(0, (u − w)|∂Ω)` with `P` the projection onto the
    /// kernel. Verifies the round trip `S(v) = u`.
    pub fn invert(&self, u: &Field) -> Result<Field> {
        let res = pde_residual(&self.a, u)?;
        if res > 1e-8 * u.norm_inf().max(1.0) {
            return Err(Error::NotASolution {
                module: "solution_map",
                equation: "semilinear",
                residual: res,
            });
        }
        let d = u - &self.w;
        let zero = Field::zeros(u.grid());
        let mut v = self.lin.basis().projection(&d);
        v = &v + &self.lin.solve(&zero, &trace(&d))?.u;
        let (back, _) = self.apply(&v).map_err(|e| match e {
            Error::DeltaTooLarge { rate, .. } => Error::DeltaTooLarge {
                module: "solution_map",
                rate,
            },
            other => other,
        })?;
        let mismatch = (&back - u).norm_inf();
        if mismatch > 1e-7 * u.norm_inf().max(1.0) {
            return Err(Error::Postcondition {
                module: "solution_map",
                what: "input is outside the range near w",
                value: mismatch,
            });
        }
        Ok(v)
    }

    /// Symmetric difference quotient `(S(v + t h) − S(v − t h)) / 2t`.
    pub fn derivative(&self, v: &Field, h: &Field, t: f64) -> Result<Field> {
        if !(t >= 1e-8) {
            return Err(Error::StepTooSmall(t));
        }
        let plus = self.apply(&(v + &h.scale(t)))?.0;
        let minus = self.apply(&(v - &h.scale(t)))?.0;
        Ok((&plus - &minus).scale(0.5 / t))
    }

    /// Largest radius `0.5·2^{-k}` at which the correction along `direction`
    /// contracts at rate at most one half.
    pub fn adaptive_delta(&self, direction: &Field) -> Result<f64> {
        let nrm = direction.surrogate_norm();
        if nrm == 0.0 {
            return Err(Error::invalid("solution_map", "zero direction"));
        }
        let unit = direction.scale(1.0 / nrm);
        let mut delta = 0.5;
        for _ in 0..40 {
            match self.correction(&unit.scale(delta), None) {
                Ok((_, rep)) if rep.contraction_rate <= 0.5 => return Ok(delta),
                Ok(_) | Err(Error::DeltaTooLarge { .. }) | Err(Error::FixedPointNonConvergence { .. }) => {}
                Err(e) => return Err(e),
            }
            delta *= 0.5;
        }
        Err(Error::DeltaTooLarge {
            module: "solution_map",
            rate: 1.0,
        })
    }
}

pub fn fixed_point_correction(a: &Nonlinearity, w: &Field, v: &Field) -> Result<(Field, SolveReport)> {
    SolutionMap::new(a, w)?.correction(v, None)
}

pub fn solution_map(a: &Nonlinearity, w: &Field, v: &Field) -> Result<(Field, SolveReport)> {
    SolutionMap::new(a, w)?.apply(v)
}

pub fn inverse_solution_map(a: &Nonlinearity, w: &Field, u: &Field) -> Result<Field> {
    SolutionMap::new(a, w)?.invert(u)
}

pub fn ds_derivative(a: &Nonlinearity, w: &Field, v: &Field, h: &Field, t: f64) -> Result<Field> {
    SolutionMap::new(a, w)?.derivative(v, h, t)
}
