mod common;

use std::sync::Arc;

use common::{grid, interior_bump, max_abs_diff};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semilinear_core::cauchy::cauchy_pair;
use semilinear_core::matched::{clamped_projection, zero_cauchy_inverse, ClampedSolver, MatchedMap};
use semilinear_core::mesh::{fourier_basis, laplacian, normal_derivative, trace};
use semilinear_core::nonlinearity::{gauge_transform, Coefficient, Nonlinearity, Term};
use semilinear_core::schrodinger::dirichlet_solve;
use semilinear_core::solution_map::{newton_solve, pde_residual, SolutionMap};
use semilinear_core::{BoundaryField, Error, Field, Grid};

fn apply_operator(q: &Field, y: &Field) -> Field {
    let lap = laplacian(y);
    let mut out = &lap + &y.zip_map(q, |a, b| a * b);
    let g = y.grid().clone();
    for &k in g.boundary_order() {
        out.values_mut()[k] = 0.0;
    }
    out
}

fn random_field(g: &Arc<Grid>, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Field::new(g, (0..g.node_count()).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap()
}

fn potential(g: &Arc<Grid>) -> Field {
    Field::from_fn(g, |x, y| 2.0 + x - y * y)
}

#[test]
fn projection_fixes_its_range() {
    let g = grid(33);
    let q = potential(&g);
    let y0 = interior_bump(&g, 0.3);
    let uz = apply_operator(&q, &y0);
    let p = clamped_projection(&q, &uz).unwrap();
    assert!(max_abs_diff(p.values(), uz.values()) <= 1e-8 * uz.norm_inf());
}

#[test]
fn projection_kills_linearized_solutions() {
    let g = grid(33);
    let q = potential(&g);
    let u = dirichlet_solve(&q, &BoundaryField::from_fn(&g, |x, y| (x + 2.0 * y).cos())).unwrap();
    let p = clamped_projection(&q, &u).unwrap();
    assert!(p.norm_inf() <= 1e-8, "{}", p.norm_inf());
}

#[test]
fn projection_is_idempotent_and_linear() {
    let g = grid(33);
    let q = potential(&g);
    let s = ClampedSolver::new(&q).unwrap();
    assert_eq!(s.dimension(), 27 * 27);
    for seed in 0..4 {
        let u = random_field(&g, seed);
        let v = random_field(&g, seed + 100);
        let pu = s.project(&u).unwrap();
        let ppu = s.project(&pu).unwrap();
        assert!(max_abs_diff(ppu.values(), pu.values()) <= 1e-8 * u.norm_inf());
        let comb = s.project(&(&u.scale(2.0) - &v)).unwrap();
        let sep = &pu.scale(2.0) - &s.project(&v).unwrap();
        assert!(max_abs_diff(comb.values(), sep.values()) <= 1e-10 * pu.norm_inf().max(1.0));
        // the projection is orthogonal on interior values
        let res: Vec<f64> = u.interior().iter().zip(pu.interior()).map(|(a, b)| a - b).collect();
        let dot: f64 = res.iter().zip(pu.interior()).map(|(a, b)| a * b).sum();
        assert!(dot.abs() <= 1e-8 * pu.interior().iter().map(|x| x * x).sum::<f64>().max(1.0));
    }
}

#[test]
fn inverse_examples() {
    let g = grid(33);
    let q = potential(&g);
    let s = ClampedSolver::new(&q).unwrap();
    assert_eq!(s.inverse(&Field::zeros(&g)).unwrap(), Field::zeros(&g));

    let z = s.project(&random_field(&g, 7)).unwrap();
    let y = s.inverse(&z).unwrap();
    assert_eq!(trace(&y).norm_inf(), 0.0);
    assert_eq!(normal_derivative(&y).norm_inf(), 0.0);
    let back = apply_operator(&q, &y);
    assert!(max_abs_diff(back.values(), z.values()) <= 1e-8 * z.norm_inf());

    let y0 = interior_bump(&g, 0.35).scale(3.0);
    let round = zero_cauchy_inverse(&q, &apply_operator(&q, &y0)).unwrap();
    assert!(max_abs_diff(round.values(), y0.values()) <= 1e-7);
}

#[test]
fn inverse_rejects_data_outside_the_range() {
    let g = grid(33);
    let q = potential(&g);
    let z = dirichlet_solve(&q, &BoundaryField::constant(&g, 1.0)).unwrap();
    let mut z = z;
    for &k in g.boundary_order() {
        z.values_mut()[k] = 0.0;
    }
    assert!(matches!(zero_cauchy_inverse(&q, &z), Err(Error::Hypothesis { .. })));
}

fn square() -> Nonlinearity {
    Nonlinearity::new(vec![Term::power(Coefficient::Constant(1.0), 2)]).unwrap()
}

struct GaugeCase {
    g: Arc<Grid>,
    a1: Nonlinearity,
    a2: Nonlinearity,
    w1: Field,
    phi: Field,
}

fn gauge_case(n: usize) -> GaugeCase {
    let g = grid(n);
    let a1 = square();
    let (w1, _) = newton_solve(&a1, &BoundaryField::from_fn(&g, |x, y| 0.2 * x + 0.1 * y), &Field::zeros(&g)).unwrap();
    let phi = interior_bump(&g, 0.3).scale(0.4);
    let a2 = gauge_transform(&a1, &phi).unwrap();
    GaugeCase { g, a1, a2, w1, phi }
}

fn random_linearized(map: &SolutionMap, seed: u64, size: f64) -> Field {
    let g = map.base().grid().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = BoundaryField::zeros(&g);
    for b in fourier_basis(&g, 7) {
        f.axpy(rng.random::<f64>() * 2.0 - 1.0, &b);
    }
    let v = map.linear_solution(&f).unwrap();
    v.scale(size / v.surrogate_norm())
}

#[test]
fn identical_equations_give_the_first_solution() {
    let c = gauge_case(33);
    let m = MatchedMap::new(&c.a1, &c.a1, &c.w1, &c.w1).unwrap();
    let v = random_linearized(m.first_map(), 1, 0.1);
    let (u2, rep) = m.apply(&v).unwrap();
    let (u1, _) = m.first_map().apply(&v).unwrap();
    assert_eq!(u2, u1);
    assert_eq!(rep.iterations, 1);
}

#[test]
fn gauge_related_equations_shift_by_the_gauge() {
    let c = gauge_case(33);
    let w2 = &c.w1 - &c.phi;
    let m = MatchedMap::new(&c.a1, &c.a2, &c.w1, &w2).unwrap();
    let mut shifts = Vec::new();
    for seed in 0..10 {
        let v = random_linearized(m.first_map(), seed, 0.2);
        let (u2, rep) = m.apply(&v).unwrap();
        let (u1, _) = m.first_map().apply(&v).unwrap();
        let expected = &u1 - &c.phi;
        assert!(max_abs_diff(u2.values(), expected.values()) <= 1e-7);
        assert!(rep.residual <= 1e-7);
        assert!(pde_residual(&c.a2, &u2).unwrap() <= 1e-7);
        assert!(cauchy_pair(&u2).max_deviation(&cauchy_pair(&u1)) <= 1e-8);
        shifts.push(&u2 - &u1);
    }
    let base = &w2 - &c.w1;
    let spread = shifts.iter().map(|s| max_abs_diff(s.values(), base.values())).fold(0.0, f64::max);
    assert!(spread <= 1e-5, "{spread}");
}

#[test]
fn derivative_at_zero_is_the_identity() {
    let c = gauge_case(33);
    let w2 = &c.w1 - &c.phi;
    let m = MatchedMap::new(&c.a1, &c.a2, &c.w1, &w2).unwrap();
    let v = random_linearized(m.first_map(), 3, 1.0);
    let errs: Vec<f64> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&t| {
            let d = m.derivative_at_zero(&v, t).unwrap();
            max_abs_diff(d.values(), v.values())
        })
        .collect();
    for k in 0..2 {
        let ratio = errs[k] / errs[k + 1];
        assert!((3.0..5.0).contains(&ratio), "errors {errs:?}");
    }
    assert!(m.derivative_at_zero(&v, 1e-9).is_err());
}

#[test]
fn non_matching_equation_is_a_hypothesis_violation() {
    let c = gauge_case(33);
    let g = c.g.clone();
    // a₁ + 5 b(x)(z − w₁)²: same base solution and linearization, different
    // Cauchy data away from it
    let b = interior_bump(&g, 0.3).scale(5.0);
    let extra = Nonlinearity::new(vec![
        Term::power(Coefficient::Field(b.clone()), 2),
        Term::power(Coefficient::Field(b.zip_map(&c.w1, |s, w| -2.0 * s * w)), 1),
        Term::power(Coefficient::Field(b.zip_map(&c.w1, |s, w| s * w * w)), 0),
    ])
    .unwrap();
    let mut perturbed = c.a1.clone();
    for t in extra.terms() {
        perturbed = perturbed.with_term(t.clone()).unwrap();
    }
    let a2 = gauge_transform(&perturbed, &c.phi).unwrap();
    let w2 = &c.w1 - &c.phi;
    let m = MatchedMap::new(&c.a1, &a2, &c.w1, &w2).unwrap();
    let v = random_linearized(m.first_map(), 5, 0.5);
    assert!(matches!(m.apply(&v), Err(Error::Hypothesis { .. })));
}

#[test]
fn base_solutions_must_share_cauchy_data() {
    let c = gauge_case(33);
    let (w2, _) = newton_solve(&c.a2, &BoundaryField::constant(&c.g, 0.05), &Field::zeros(&c.g)).unwrap();
    assert!(matches!(
        MatchedMap::new(&c.a1, &c.a2, &c.w1, &w2),
        Err(Error::Hypothesis { .. })
    ));
    assert!(matches!(
        MatchedMap::new(&c.a1, &c.a2, &c.w1, &c.w1),
        Err(Error::NotASolution { .. })
    ));
}
