mod common;

use std::sync::Arc;

use common::{discrete_eigenvalue, grid, interior_bump, max_abs_diff};
use semilinear_core::mesh::{fourier_basis, inner_domain, trace};
use semilinear_core::nonlinearity::{Coefficient, Nonlinearity, Term};
use semilinear_core::schrodinger::SchrodingerSolver;
use semilinear_core::solution_map::{newton_solve, pde_residual, remainder, SolutionMap};
use semilinear_core::{BoundaryField, Error, Field, Grid};

fn power(c: f64, m: u32) -> Term {
    Term::power(Coefficient::Constant(c), m)
}

fn poly(terms: &[(f64, u32)]) -> Nonlinearity {
    Nonlinearity::new(terms.iter().map(|&(c, m)| power(c, m)).collect()).unwrap()
}

/// `u + 0.3u²` with `w` solving the boundary value problem for data 0.1.
fn quadratic_setup(n: usize) -> (Arc<Grid>, Nonlinearity, Field) {
    let g = grid(n);
    let a = poly(&[(1.0, 1), (0.3, 2)]);
    let (w, _) = newton_solve(&a, &BoundaryField::constant(&g, 0.1), &Field::zeros(&g)).unwrap();
    (g, a, w)
}

fn slope(ts: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

#[test]
fn newton_linear_problem_takes_one_step() {
    let g = grid(33);
    let f = BoundaryField::from_fn(&g, |x, y| (2.0 * x).sin() + y);
    let (u, rep) = newton_solve(&Nonlinearity::zero(), &f, &Field::zeros(&g)).unwrap();
    assert_eq!(rep.iterations, 1);
    assert_eq!(trace(&u), f);
}

#[test]
fn newton_cubic_examples() {
    let g = grid(33);
    let a = poly(&[(-1.0, 3)]);
    let start = interior_bump(&g, 0.4);
    let (u, _) = newton_solve(&a, &BoundaryField::zeros(&g), &start).unwrap();
    assert!(u.norm_inf() < 1e-8);

    let f = fourier_basis(&g, 3)[1].scale(0.5);
    let harmonic = semilinear_core::schrodinger::dirichlet_solve(&Field::zeros(&g), &f).unwrap();
    let (u, rep) = newton_solve(&a, &f, &harmonic).unwrap();
    assert_eq!(trace(&u), f);
    assert!(rep.residual <= 1e-10 * u.norm_inf().max(1.0));

    // a large datum from zero: several steps, quadratic once in the local regime
    let big = f.scale(8.0);
    let (u, rep) = newton_solve(&a, &big, &Field::zeros(&g)).unwrap();
    assert_eq!(trace(&u), big);
    let h: Vec<f64> = rep.history.iter().copied().filter(|&r| r > 1e-11).collect();
    assert!(h.len() >= 3, "{:?}", rep.history);
    let best = h
        .windows(3)
        .map(|w| (w[2] / w[1]).ln() / (w[1] / w[0]).ln())
        .fold(0.0, f64::max);
    assert!(best > 1.6, "order {best}, history {:?}", rep.history);
}

#[test]
fn newton_reports_singular_jacobian() {
    let n = 17;
    let g = grid(n);
    let a = Nonlinearity::linear(Field::constant(&g, discrete_eigenvalue(n, 1, 1)));
    let f = BoundaryField::from_fn(&g, |x, _| x);
    assert_eq!(
        newton_solve(&a, &f, &Field::zeros(&g)).unwrap_err(),
        Error::SingularJacobian { iteration: 0 }
    );
}

#[test]
fn correction_examples() {
    let (g, a, w) = quadratic_setup(33);
    let map = SolutionMap::new(&a, &w).unwrap();
    let (r, _) = map.correction(&Field::zeros(&g), None).unwrap();
    assert_eq!(r.norm_inf(), 0.0);

    let q = Field::from_fn(&g, |x, y| x - y - 1.0);
    let lin = SolutionMap::new(&Nonlinearity::linear(q), &Field::zeros(&g)).unwrap();
    let v = lin.linear_solution(&fourier_basis(&g, 5)[4]).unwrap();
    assert_eq!(lin.correction(&v, None).unwrap().0.norm_inf(), 0.0);
}

#[test]
fn correction_scales_quadratically_or_cubically() {
    let ts = [0.0125, 0.025, 0.05, 0.1];
    let (g, a, w) = quadratic_setup(33);
    let map = SolutionMap::new(&a, &w).unwrap();
    let v = map.linear_solution(&fourier_basis(&g, 4)[2]).unwrap();
    let ys: Vec<f64> = ts.iter().map(|&t| map.correction(&v.scale(t), None).unwrap().0.norm_inf()).collect();
    let s2 = slope(&ts, &ys);
    assert!((s2 - 2.0).abs() <= 0.15, "slope {s2}");

    let cubic = poly(&[(-1.0, 3)]);
    let map = SolutionMap::new(&cubic, &Field::zeros(&g)).unwrap();
    let v = Field::from_fn(&g, |x, _| x);
    let ys: Vec<f64> = ts.iter().map(|&t| map.correction(&v.scale(t), None).unwrap().0.norm_inf()).collect();
    let s3 = slope(&ts, &ys);
    assert!((s3 - 3.0).abs() <= 0.15, "slope {s3}");
}

#[test]
fn correction_satisfies_its_equation() {
    let (g, a, w) = quadratic_setup(33);
    let map = SolutionMap::new(&a, &w).unwrap();
    let v = map.linear_solution(&fourier_basis(&g, 6)[5].scale(0.2)).unwrap();
    let (r, rep) = map.correction(&v, None).unwrap();
    let rem = remainder(&a, &w, &(&v + &r)).unwrap();
    let res = map.linear_solver().residual(&r, &rem.scale(-1.0));
    assert!(res <= 1e-9 && rep.residual <= 1e-9);
    // no kernel: the correction vanishes on the boundary
    assert_eq!(trace(&r).norm_inf(), 0.0);
}

#[test]
fn correction_on_resonant_linearization() {
    let n = 33;
    let g = grid(n);
    let lam = discrete_eigenvalue(n, 1, 1);
    let a = poly(&[(lam, 1), (0.5, 2)]);
    let map = SolutionMap::new(&a, &Field::zeros(&g)).unwrap();
    let solver = map.linear_solver();
    assert_eq!(solver.basis().dimension(), 1);
    let v = map.linear_solution(&fourier_basis(&g, 4)[3].scale(0.1)).unwrap();
    let (r, rep) = map.correction(&v, None).unwrap();
    let psi = &solver.basis().psi()[0];
    assert!(inner_domain(&r, psi).unwrap().abs() < 1e-8);
    assert!(rep.residual <= 1e-9);
    // trace of the correction is the kernel boundary term of R(v + r)
    let rem = remainder(&a, &Field::zeros(&g), &(&v + &r)).unwrap();
    let phi = solver.boundary_correction(&rem, &BoundaryField::zeros(&g)).unwrap();
    assert!(max_abs_diff(trace(&r).values(), phi.values()) < 1e-14);
    assert!(trace(&r).norm_inf() > 0.0);
}

#[test]
fn contraction_at_adaptive_delta_and_uniqueness() {
    let (g, a, w) = quadratic_setup(33);
    let map = SolutionMap::new(&a, &w).unwrap();
    let dir = map.linear_solution(&fourier_basis(&g, 4)[1]).unwrap();
    let delta = map.adaptive_delta(&dir).unwrap();
    let v = dir.scale(delta / dir.surrogate_norm());
    let (r1, rep) = map.correction(&v, None).unwrap();
    assert!(rep.contraction_rate <= 0.5);
    let start = interior_bump(&g, 0.3).scale(0.05);
    let (r2, _) = map.correction(&v, Some(&start)).unwrap();
    assert!(max_abs_diff(r1.values(), r2.values()) <= 1e-9);
}

#[test]
fn oversized_input_is_rejected() {
    let g = grid(17);
    let a = poly(&[(-1.0, 1), (4.0, 2), (3.0, 3)]);
    let map = SolutionMap::new(&a, &Field::zeros(&g)).unwrap();
    let v = map.linear_solution(&BoundaryField::constant(&g, 30.0)).unwrap();
    let out = map.correction(&v, None);
    assert!(
        matches!(out, Err(Error::DeltaTooLarge { .. }) | Err(Error::FixedPointNonConvergence { .. })),
        "{out:?}"
    );
}

#[test]
fn solution_map_examples() {
    let (g, a, w) = quadratic_setup(33);
    let map = SolutionMap::new(&a, &w).unwrap();
    assert_eq!(map.apply(&Field::zeros(&g)).unwrap().0, w);

    let q = Field::from_fn(&g, |x, y| x * y - 2.0);
    let lin = SolutionMap::new(&Nonlinearity::linear(q), &Field::zeros(&g)).unwrap();
    let v = lin.linear_solution(&fourier_basis(&g, 3)[2]).unwrap();
    assert_eq!(lin.apply(&v).unwrap().0, v);

    // Newton oracle for the same boundary value problem
    let sq = poly(&[(1.0, 2)]);
    let (w2, _) = newton_solve(&sq, &BoundaryField::constant(&g, 0.1), &Field::zeros(&g)).unwrap();
    let map = SolutionMap::new(&sq, &w2).unwrap();
    let v = map.linear_solution(&fourier_basis(&g, 5)[3].scale(0.05)).unwrap();
    let (u, rep) = map.apply(&v).unwrap();
    assert!(rep.residual <= 1e-8);
    let (oracle, _) = newton_solve(&sq, &trace(&u), &w2).unwrap();
    assert!(max_abs_diff(u.values(), oracle.values()) <= 1e-7);

    let not_linear = Field::from_fn(&g, |x, y| x * x + y);
    assert!(matches!(map.apply(&not_linear), Err(Error::NotASolution { .. })));
}

#[test]
fn inverse_examples() {
    let (g, a, w) = quadratic_setup(33);
    let map = SolutionMap::new(&a, &w).unwrap();
    assert!(map.invert(&w).unwrap().norm_inf() < 1e-12);

    let q = Field::from_fn(&g, |x, y| x * y - 2.0);
    let lin = SolutionMap::new(&Nonlinearity::linear(q), &Field::zeros(&g)).unwrap();
    let u = lin.linear_solution(&fourier_basis(&g, 3)[2]).unwrap();
    assert!(max_abs_diff(lin.invert(&u).unwrap().values(), u.values()) < 1e-12);

    let v = map.linear_solution(&fourier_basis(&g, 5)[4].scale(0.05)).unwrap();
    let (u, _) = map.apply(&v).unwrap();
    let back = map.invert(&u).unwrap();
    let (u2, _) = map.apply(&back).unwrap();
    assert!(max_abs_diff(u2.values(), u.values()) <= 1e-7);
    assert!(max_abs_diff(back.values(), v.values()) <= 1e-9);
}

#[test]
fn derivative_examples() {
    let (g, a, w) = quadratic_setup(33);
    let map = SolutionMap::new(&a, &w).unwrap();
    let h = map.linear_solution(&fourier_basis(&g, 4)[3]).unwrap();
    let zero = Field::zeros(&g);
    let err = |t: f64| max_abs_diff(map.derivative(&zero, &h, t).unwrap().values(), h.values());
    let (e1, e2) = (err(0.1), err(0.05));
    assert!((e1 / e2 - 4.0).abs() < 0.5, "{e1} {e2}");
    assert!(matches!(map.derivative(&zero, &h, 1e-9), Err(Error::StepTooSmall(_))));

    let q = Field::from_fn(&g, |x, y| x * y - 2.0);
    let lin = SolutionMap::new(&Nonlinearity::linear(q), &Field::zeros(&g)).unwrap();
    let v = lin.linear_solution(&fourier_basis(&g, 3)[1]).unwrap();
    let hl = lin.linear_solution(&fourier_basis(&g, 3)[2]).unwrap();
    let d = lin.derivative(&v, &hl, 0.3).unwrap();
    assert!(max_abs_diff(d.values(), hl.values()) < 1e-12);

    // step halving at a nonzero base point: Richardson differences shrink by 4
    let v = h.scale(0.1);
    let d = |t: f64| map.derivative(&v, &h, t).unwrap();
    let (d1, d2, d3) = (d(0.08), d(0.04), d(0.02));
    let ratio = max_abs_diff(d1.values(), d2.values()) / max_abs_diff(d2.values(), d3.values());
    assert!((ratio - 4.0).abs() < 0.5, "{ratio}");
    // the derivative solves the equation linearized at S(v)
    let (sv, _) = map.apply(&v).unwrap();
    let qv = a.eval(&sv, 1).unwrap();
    let solver = SchrodingerSolver::new(&qv).unwrap();
    let res = |f: &Field| solver.residual(f, &zero);
    assert!(res(&d3) < res(&d1) && res(&d3) < 1e-3, "{} {}", res(&d1), res(&d3));
}

#[test]
fn derivative_is_onto_the_perturbed_linearization() {
    let (g, a, w) = quadratic_setup(33);
    let map = SolutionMap::new(&a, &w).unwrap();
    let v = map.linear_solution(&fourier_basis(&g, 4)[1].scale(0.1)).unwrap();
    let (sv, _) = map.apply(&v).unwrap();
    let shifted = SolutionMap::new(&a, &sv).unwrap();
    let target = shifted.linear_solution(&fourier_basis(&g, 6)[5]).unwrap();
    // preimage along s ↦ S_{S(v)}(s·target), mapped back through the inverse
    let s = 1e-3;
    let up = map.invert(&shifted.apply(&target.scale(s)).unwrap().0).unwrap();
    let down = map.invert(&shifted.apply(&target.scale(-s)).unwrap().0).unwrap();
    let h = (&up - &down).scale(0.5 / s);
    let image = map.derivative(&v, &h, 1e-3).unwrap();
    assert!(max_abs_diff(image.values(), target.values()) <= 1e-4);
}

#[test]
fn map_rejects_non_solution_base() {
    let g = grid(17);
    let a = poly(&[(1.0, 2)]);
    let w = Field::from_fn(&g, |x, _| x);
    assert!(matches!(SolutionMap::new(&a, &w), Err(Error::NotASolution { .. })));
    assert!(pde_residual(&a, &w).unwrap() > 0.0);
}
