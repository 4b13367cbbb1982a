#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use semilinear_core::{Field, Grid};

pub fn grid(n: usize) -> Arc<Grid> {
    Grid::new(n).unwrap()
}

/// Smallest eigenvalue of the negative five-point Dirichlet Laplacian.
pub fn discrete_eigenvalue(n: usize, j: usize, k: usize) -> f64 {
    let h = 1.0 / (n - 1) as f64;
    let s = |m: usize| (m as f64 * PI * h / 2.0).sin().powi(2);
    4.0 / (h * h) * (s(j) + s(k))
}

pub fn sine_mode(g: &Arc<Grid>, j: usize, k: usize) -> Field {
    Field::from_fn(g, |x, y| (j as f64 * PI * x).sin() * (k as f64 * PI * y).sin())
}

/// Smooth bump vanishing on the outer `layers` node layers of the grid.
pub fn interior_bump(g: &Arc<Grid>, radius: f64) -> Field {
    Field::from_fn(g, |x, y| {
        let b = |t: f64| {
            let s = (t - 0.5) / radius;
            if s.abs() < 1.0 {
                (1.0 - s * s).powi(3)
            } else {
                0.0
            }
        };
        b(x) * b(y)
    })
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
