//! Cauchy data of solutions, sampling of local Cauchy-data sets, and the
//! empirical stability ratios that compare interior differences with
//! boundary differences.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{laplacian, normal_derivative, trace, BoundaryField, Field};
use crate::nonlinearity::Nonlinearity;
use crate::solution_map::{pde_residual, SolutionMap};

#[derive(Debug, Clone, PartialEq)]
pub struct CauchyPair {
    pub dirichlet: BoundaryField,
    pub neumann: BoundaryField,
}

impl CauchyPair {
    /// Boundary surrogate norm of the difference: second order for the
    /// Dirichlet part, first order for the Neumann part.
    pub fn distance(&self, other: &CauchyPair) -> f64 {
        (&self.dirichlet - &other.dirichlet).surrogate_norm(2)
            + (&self.neumann - &other.neumann).surrogate_norm(1)
    }

    /// Largest pointwise deviation of either component.
    pub fn max_deviation(&self, other: &CauchyPair) -> f64 {
        (&self.dirichlet - &other.dirichlet)
            .norm_inf()
            .max((&self.neumann - &other.neumann).norm_inf())
    }
}

pub fn cauchy_pair(u: &Field) -> CauchyPair {
    CauchyPair {
        dirichlet: trace(u),
        neumann: normal_derivative(u),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauchyEntry {
    pub pair: CauchyPair,
    /// Boundary datum of the linearized solution that generated the entry.
    pub datum: BoundaryField,
    /// Surrogate norm of `u − w`.
    pub distance: f64,
    pub solution: Field,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauchySample {
    pub delta: f64,
    pub entries: Vec<CauchyEntry>,
    /// Draws rejected because the correction did not contract or the
    /// solution left the ball.
    pub skipped: usize,
}

/// Per-sample random stream, independent of how many draws earlier samples used.
pub(crate) fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Samples `count` solutions within surrogate distance `δ` of `w`, each
/// generated by the solution map from a random linearized solution.
pub fn sample_cauchy_set(
    a: &Nonlinearity,
    w: &Field,
    delta: f64,
    basis: &[BoundaryField],
    count: usize,
    seed: u64,
) -> Result<CauchySample> {
    let map = SolutionMap::new(a, w)?;
    sample_with_map(&map, delta, basis, count, seed)
}

pub fn sample_with_map(
    map: &SolutionMap,
    delta: f64,
    basis: &[BoundaryField],
    count: usize,
    seed: u64,
) -> Result<CauchySample> {
    if !(delta >= 0.0) {
        return Err(Error::invalid("cauchy", "radius must be non-negative"));
    }
    let grid = map.base().grid().clone();
    let mut entries = Vec::with_capacity(count);
    let mut skipped = 0;
    for s in 0..count {
        let mut rng = sample_rng(seed, s as u64);
        let mut datum = BoundaryField::zeros(&grid);
        for f in basis {
            datum.axpy(rng.random::<f64>() * 2.0 - 1.0, f);
        }
        let v = map.linear_solution(&datum)?;
        let nv = v.surrogate_norm();
        // aim at a random radius in [δ/10, δ/2] so the correction keeps the
        // solution inside the ball
        let target = delta * (0.1 + 0.4 * rng.random::<f64>());
        let scale = if nv > 0.0 { target / nv } else { 0.0 };
        let v = v.scale(scale);
        let datum = datum.scale(scale);
        let u = match map.apply(&v) {
            Ok((u, _)) => u,
            Err(Error::DeltaTooLarge { .. } | Error::FixedPointNonConvergence { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let distance = (&u - map.base()).surrogate_norm();
        if distance > delta {
            skipped += 1;
            continue;
        }
        entries.push(CauchyEntry {
            pair: cauchy_pair(&u),
            datum,
            distance,
            solution: u,
        });
    }
    Ok(CauchySample {
        delta,
        entries,
        skipped,
    })
}

fn residual_field(q: &Field, u: &Field) -> f64 {
    let lap = laplacian(u);
    (&lap + &u.zip_map(q, |a, b| a * b)).interior_norm_inf()
}

/// `‖u‖ / (‖u|∂Ω‖ + ‖∂_ν u‖ + ‖Δ_h u + qu‖∞)` in surrogate norms;
/// infinite when the denominator vanishes but the numerator does not.
pub fn stability_ratio_linear(q: &Field, u: &Field) -> Result<f64> {
    q.check_same_grid(u)?;
    let num = u.surrogate_norm();
    let den = trace(u).surrogate_norm(2) + normal_derivative(u).surrogate_norm(1) + residual_field(q, u);
    Ok(ratio(num, den))
}

fn ratio(num: f64, den: f64) -> f64 {
    if den < 1e-14 {
        if num > 1e-10 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        num / den
    }
}

/// Numerator and denominator of the semilinear stability ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioParts {
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

/// `‖u − u₀‖ / ‖Cauchy data of u − u₀‖` for two solutions of the same
/// equation. Returns 0 for identical inputs and an infinite ratio if the
/// Cauchy data agree while the solutions differ.
pub fn stability_ratio_semilinear(a: &Nonlinearity, u: &Field, u0: &Field) -> Result<f64> {
    Ok(stability_parts(a, u, u0)?.ratio)
}

pub fn stability_parts(a: &Nonlinearity, u: &Field, u0: &Field) -> Result<RatioParts> {
    u.check_same_grid(u0)?;
    for f in [u, u0] {
        let r = pde_residual(a, f)?;
        if r > 1e-8 * f.norm_inf().max(1.0) {
            return Err(Error::NotASolution {
                module: "cauchy",
                equation: "semilinear",
                residual: r,
            });
        }
    }
    let d = u - u0;
    let numerator = d.surrogate_norm();
    let denominator = trace(&d).surrogate_norm(2) + normal_derivative(&d).surrogate_norm(1);
    Ok(RatioParts {
        numerator,
        denominator,
        ratio: ratio(numerator, denominator),
    })
}

/// `‖u‖ / (‖u|∂Ω‖ + ‖Δ_h u + qu‖∞ + ‖u‖_{H¹})`, the quantity bounded by the
/// interior estimate for the linear equation.
pub fn interior_estimate_ratio(q: &Field, u: &Field) -> Result<f64> {
    q.check_same_grid(u)?;
    let num = u.surrogate_norm();
    let den = trace(u).surrogate_norm(2) + residual_field(q, u) + u.h1_norm();
    Ok(ratio(num, den))
}

/// A grid constant fitted on a calibration ensemble and checked on a
/// validation ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConstantFit {
    pub constant: f64,
    pub validation_max: f64,
    /// Whether the validation maximum lies within ±20% of the fitted constant.
    pub stable: bool,
}

/// Fits the constant as the maximum ratio over the first half of `ratios`
/// and checks the second half against it.
pub fn fit_grid_constant(ratios: &[f64]) -> GridConstantFit {
    let half = ratios.len() / 2;
    let constant = ratios[..half].iter().copied().fold(0.0, f64::max);
    let validation_max = ratios[half..].iter().copied().fold(0.0, f64::max);
    let stable = validation_max <= 1.2 * constant && validation_max >= 0.8 * constant;
    GridConstantFit {
        constant,
        validation_max,
        stable,
    }
}

/// One row of a stability ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleRow {
    pub sample: usize,
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
    /// Largest sup norm of the two solutions compared.
    pub m: f64,
}

/// Compares consecutive pairs of sampled solutions of one equation.
pub fn semilinear_ensemble(a: &Nonlinearity, sample: &CauchySample) -> Result<Vec<EnsembleRow>> {
    let mut rows = Vec::new();
    for (k, pair) in sample.entries.windows(2).enumerate() {
        let (u, u0) = (&pair[1].solution, &pair[0].solution);
        let p = stability_parts(a, u, u0)?;
        rows.push(EnsembleRow {
            sample: k,
            numerator: p.numerator,
            denominator: p.denominator,
            ratio: p.ratio,
            m: u.norm_inf().max(u0.norm_inf()),
        });
    }
    Ok(rows)
}
