mod common;

use common::{grid, interior_bump};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semilinear_core::cauchy::{
    cauchy_pair, fit_grid_constant, interior_estimate_ratio, sample_cauchy_set, semilinear_ensemble,
    stability_ratio_linear, stability_ratio_semilinear,
};
use semilinear_core::mesh::{fourier_basis, inner_boundary};
use semilinear_core::nonlinearity::{gauge_transform, Coefficient, Nonlinearity, Term};
use semilinear_core::schrodinger::{dirichlet_solve, dn_map, gq_solve};
use semilinear_core::solution_map::newton_solve;
use semilinear_core::{BoundaryField, Error, Field};

fn cubic() -> Nonlinearity {
    Nonlinearity::new(vec![Term::power(Coefficient::Constant(-1.0), 3)]).unwrap()
}

fn random_datum(g: &std::sync::Arc<semilinear_core::Grid>, modes: usize, rng: &mut ChaCha8Rng) -> BoundaryField {
    let mut f = BoundaryField::zeros(g);
    for b in fourier_basis(g, modes) {
        f.axpy(rng.random::<f64>() * 2.0 - 1.0, &b);
    }
    f
}

#[test]
fn pair_of_constant_and_linear_function() {
    let g = grid(17);
    let p = cauchy_pair(&Field::constant(&g, 2.5));
    assert!(p.dirichlet.values().iter().all(|&v| v == 2.5));
    assert!(p.neumann.norm_inf() < 1e-12);

    let p = cauchy_pair(&Field::from_fn(&g, |x, _| x));
    assert_eq!(p.dirichlet, BoundaryField::from_fn(&g, |x, _| x));
    let n = g.n();
    let order = g.boundary_order();
    for (slot, &node) in order.iter().enumerate() {
        let (i, j) = g.coords(node);
        let corner = (i == 0 || i == n - 1) && (j == 0 || j == n - 1);
        let v = p.neumann.values()[slot];
        if corner {
            continue;
        }
        if i == n - 1 {
            assert!((v - 1.0).abs() < 1e-12);
        } else if i == 0 {
            assert!((v + 1.0).abs() < 1e-12);
        } else {
            assert!(v.abs() < 1e-12);
        }
    }
}

#[test]
fn gauge_equivalent_solutions_share_cauchy_data() {
    let g = grid(33);
    let a = cubic().with_term(Term::power(Coefficient::Constant(0.5), 1)).unwrap();
    let phi = interior_bump(&g, 0.3).scale(0.2);
    let ta = gauge_transform(&a, &phi).unwrap();
    let f = BoundaryField::from_fn(&g, |x, y| 0.3 * (x + 2.0 * y).sin());
    let (u, _) = newton_solve(&a, &f, &Field::zeros(&g)).unwrap();
    // Newton on the transformed equation accepts the shifted solution as is
    let (ut, rep) = newton_solve(&ta, &f, &(&u - &phi)).unwrap();
    assert!(rep.iterations <= 1, "{rep:?}");
    let dev = cauchy_pair(&u).max_deviation(&cauchy_pair(&ut));
    assert!(dev <= 1e-12, "deviation {dev}");
    // and an independent solve from zero lands on the same solution
    let (cold, _) = newton_solve(&ta, &f, &Field::zeros(&g)).unwrap();
    assert!((&cold - &ut).norm_inf() < 1e-9);
}

#[test]
fn zero_radius_sample_is_the_base_pair() {
    let g = grid(17);
    let a = cubic();
    let f = BoundaryField::from_fn(&g, |x, _| 0.2 * x);
    let (w, _) = newton_solve(&a, &f, &Field::zeros(&g)).unwrap();
    let s = sample_cauchy_set(&a, &w, 0.0, &fourier_basis(&g, 5), 1, 7).unwrap();
    assert_eq!(s.entries.len(), 1);
    assert_eq!(s.entries[0].pair, cauchy_pair(&w));
    assert_eq!(s.entries[0].distance, 0.0);
}

#[test]
fn linear_samples_match_the_dn_matrix() {
    let g = grid(33);
    let q = Field::from_fn(&g, |x, y| 1.0 + x * y);
    let a = Nonlinearity::linear(q.clone());
    let basis = fourier_basis(&g, 7);
    let dn = dn_map(&q, &basis).unwrap();
    let s = sample_cauchy_set(&a, &Field::zeros(&g), 0.5, &basis, 12, 3).unwrap();
    assert_eq!(s.entries.len() + s.skipped, 12);
    assert!(!s.entries.is_empty());
    for e in &s.entries {
        assert_eq!(e.pair.dirichlet, e.datum);
        let c: Vec<f64> = basis.iter().map(|b| inner_boundary(&e.datum, b).unwrap()).collect();
        for (j, fj) in basis.iter().enumerate() {
            let got = inner_boundary(&e.pair.neumann, fj).unwrap();
            let want: f64 = c.iter().enumerate().map(|(i, ci)| ci * dn.get(j, i)).sum();
            assert!((got - want).abs() <= 1e-9, "mode {j}: {got} vs {want}");
        }
    }
}

#[test]
fn sampled_distances_respect_the_radius() {
    let g = grid(17);
    let a = cubic();
    for (delta, seed) in [(0.05, 1), (0.5, 2), (3.0, 3)] {
        let s = sample_cauchy_set(&a, &Field::zeros(&g), delta, &fourier_basis(&g, 5), 10, seed).unwrap();
        assert_eq!(s.entries.len() + s.skipped, 10);
        for e in &s.entries {
            assert!(e.distance <= delta);
            assert_eq!(e.distance, e.solution.surrogate_norm());
        }
    }
    assert!(sample_cauchy_set(&a, &Field::zeros(&g), -1.0, &fourier_basis(&g, 3), 1, 0).is_err());
}

#[test]
fn sampling_is_deterministic_per_index() {
    let g = grid(17);
    let a = cubic();
    let basis = fourier_basis(&g, 5);
    let s4 = sample_cauchy_set(&a, &Field::zeros(&g), 0.4, &basis, 4, 11).unwrap();
    let s2 = sample_cauchy_set(&a, &Field::zeros(&g), 0.4, &basis, 2, 11).unwrap();
    assert_eq!(s4, sample_cauchy_set(&a, &Field::zeros(&g), 0.4, &basis, 4, 11).unwrap());
    assert_eq!(s2.entries[..], s4.entries[..2]);
}

#[test]
fn linear_ratio_is_finite_and_homogeneous() {
    let g = grid(17);
    let q = Field::from_fn(&g, |x, _| 2.0 + x);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let u = Field::new(&g, (0..g.node_count()).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let r = stability_ratio_linear(&q, &u).unwrap();
        assert!(r.is_finite() && r > 0.0);
        assert_eq!(stability_ratio_linear(&q, &u.scale(4.0)).unwrap(), r);
        let r3 = stability_ratio_linear(&q, &u.scale(-3.0)).unwrap();
        assert!((r3 - r).abs() <= 1e-14 * r);
    }
    assert_eq!(stability_ratio_linear(&q, &Field::zeros(&g)).unwrap(), 0.0);
}

#[test]
fn linear_ratio_is_bounded_over_solutions() {
    let g = grid(33);
    let q = Field::from_fn(&g, |x, y| 3.0 * x * y);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ratios = Vec::new();
    for _ in 0..100 {
        let f = random_datum(&g, 9, &mut rng).scale(10.0);
        let u = dirichlet_solve(&q, &f).unwrap();
        ratios.push(stability_ratio_linear(&q, &u).unwrap());
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[50];
    let max = ratios[99];
    assert!(max.is_finite());
    // recorded spread of the 100-sample ensemble
    assert!(max <= 3.0 * median, "max {max}, median {median}");
}

#[test]
fn semilinear_ratio_of_identical_solutions_is_zero() {
    let g = grid(17);
    let a = cubic();
    let (u, _) = newton_solve(&a, &BoundaryField::from_fn(&g, |x, y| 0.3 * x * y), &Field::zeros(&g)).unwrap();
    assert_eq!(stability_ratio_semilinear(&a, &u, &u).unwrap(), 0.0);
}

#[test]
fn semilinear_ratio_rejects_gauge_pair() {
    let g = grid(17);
    let a = cubic();
    let phi = interior_bump(&g, 0.3).scale(0.5);
    let (u, _) = newton_solve(&a, &BoundaryField::from_fn(&g, |x, _| 0.3 * x), &Field::zeros(&g)).unwrap();
    let shifted = &u - &phi;
    // the pair shares Cauchy data but solves a different equation
    assert!(cauchy_pair(&u).max_deviation(&cauchy_pair(&shifted)) < 1e-12);
    assert!(matches!(
        stability_ratio_semilinear(&a, &shifted, &u),
        Err(Error::NotASolution { .. })
    ));
}

#[test]
fn cubic_ensemble_has_finite_ratios() {
    let g = grid(17);
    let a = cubic();
    let basis = fourier_basis(&g, 7);
    let s = sample_cauchy_set(&a, &Field::zeros(&g), 2.0, &basis, 51, 21).unwrap();
    assert_eq!(s.skipped, 0);
    let rows = semilinear_ensemble(&a, &s).unwrap();
    assert_eq!(rows.len(), 50);
    for r in &rows {
        assert!(r.ratio.is_finite() && r.ratio > 0.0);
        assert!(r.m > 0.0);
    }
    let max = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    assert!(max < 10.0, "max ratio {max}");
}

#[test]
fn close_cauchy_data_means_close_solutions() {
    let g = grid(17);
    let a = cubic();
    let basis = fourier_basis(&g, 5);
    let mut s = sample_cauchy_set(&a, &Field::zeros(&g), 1.0, &basis, 12, 4).unwrap();
    // repeat draws so that some pairs coincide
    let again = sample_cauchy_set(&a, &Field::zeros(&g), 1.0, &basis, 4, 4).unwrap();
    s.entries.extend(again.entries);
    let mut close = 0;
    for (k, e) in s.entries.iter().enumerate() {
        for f in &s.entries[k + 1..] {
            let d = e.pair.distance(&f.pair);
            if d <= 1e-10 {
                close += 1;
                assert!((&e.solution - &f.solution).surrogate_norm() <= 1e-6);
            } else {
                let r = stability_ratio_semilinear(&a, &e.solution, &f.solution).unwrap();
                assert!(r.is_finite());
            }
        }
    }
    assert!(close >= 4);
}

#[test]
fn interior_estimate_constant_is_stable() {
    let g = grid(33);
    let q = Field::from_fn(&g, |x, y| 5.0 * (x - y));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut ratios = Vec::new();
    for _ in 0..100 {
        let f = random_datum(&g, 9, &mut rng);
        let src = Field::from_fn(&g, |x, y| (3.0 * x + y).cos()).scale(rng.random::<f64>());
        let u = gq_solve(&q, &src, &f).unwrap().u;
        ratios.push(interior_estimate_ratio(&q, &u).unwrap());
    }
    let fit = fit_grid_constant(&ratios);
    assert!(fit.constant.is_finite() && fit.constant > 0.0);
    assert!(fit.stable, "{fit:?}");
}
