//! Closed-form nonlinearities `a(x, z) = Σ c_k(x) g_k(z)` with exact
//! z-derivatives, and the gauge transform `Δφ(x) + a(x, z + φ(x))`.

use alloc::vec::Vec;

#[allow(unused_imports)] // float math for no_std builds
use num_traits::Float;

use crate::error::{Error, Result};
use crate::mesh::{laplacian, normal_derivative, trace, Field};

pub const MAX_ORDER: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    Field(Field),
}

impl Coefficient {
    fn at(&self, node: usize) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Field(f) => f.values()[node],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TermKind {
    /// `z^m`, `m ≤ 6`
    Power(u32),
    /// `sin(ωz)`
    Sine(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: Coefficient,
    pub kind: TermKind,
}

impl Term {
    pub fn power(coeff: Coefficient, m: u32) -> Term {
        Term {
            coeff,
            kind: TermKind::Power(m),
        }
    }

    pub fn sine(coeff: Coefficient, omega: f64) -> Term {
        Term {
            coeff,
            kind: TermKind::Sine(omega),
        }
    }
}

/// `d^l/dz^l` of the term's profile at `z`.
fn profile(kind: TermKind, z: f64, l: usize) -> f64 {
    match kind {
        TermKind::Power(m) => {
            let m = m as usize;
            if l > m {
                return 0.0;
            }
            let mut c = 1.0;
            for k in 0..l {
                c *= (m - k) as f64;
            }
            c * z.powi((m - l) as i32)
        }
        TermKind::Sine(w) => {
            let arg = w * z;
            let d = match l % 4 {
                0 => arg.sin(),
                1 => arg.cos(),
                2 => -arg.sin(),
                _ => -arg.cos(),
            };
            w.powi(l as i32) * d
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Gauge {
    shift: Field,
    laplacian: Field,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nonlinearity {
    terms: Vec<Term>,
    gauge: Option<Gauge>,
}

// Gauss–Legendre nodes and weights on [0, 1].
const GL_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_W: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

impl Nonlinearity {
    pub fn new(terms: Vec<Term>) -> Result<Nonlinearity> {
        for t in &terms {
            match t.kind {
                TermKind::Power(m) if m as usize > MAX_ORDER => {
                    return Err(Error::invalid("nonlinearity", "power exponent above 6"));
                }
                TermKind::Sine(w) if !w.is_finite() => {
                    return Err(Error::NonFinite { module: "nonlinearity" });
                }
                _ => {}
            }
            if let Coefficient::Constant(c) = t.coeff {
                if !c.is_finite() {
                    return Err(Error::NonFinite { module: "nonlinearity" });
                }
            }
        }
        Ok(Nonlinearity { terms, gauge: None })
    }

    /// The linear nonlinearity `a(x, z) = q(x) z`.
    pub fn linear(q: Field) -> Nonlinearity {
        Nonlinearity {
            terms: alloc::vec![Term::power(Coefficient::Field(q), 1)],
            gauge: None,
        }
    }

    pub fn zero() -> Nonlinearity {
        Nonlinearity {
            terms: Vec::new(),
            gauge: None,
        }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn gauge_shift(&self) -> Option<&Field> {
        self.gauge.as_ref().map(|g| &g.shift)
    }

    /// Adds a term; the gauge (if any) applies to it as well.
    pub fn with_term(mut self, term: Term) -> Result<Nonlinearity> {
        let base = Nonlinearity::new(alloc::vec![term])?;
        self.terms.extend(base.terms);
        Ok(self)
    }

    fn shift_at(&self, node: usize) -> f64 {
        self.gauge.as_ref().map_or(0.0, |g| g.shift.values()[node])
    }

    /// `∂_z^l a(x_node, z)` including the gauge composition.
    pub fn value_at(&self, node: usize, z: f64, l: usize) -> f64 {
        let zz = z + self.shift_at(node);
        let mut s = 0.0;
        if l == 0 {
            if let Some(g) = &self.gauge {
                s += g.laplacian.values()[node];
            }
        }
        for t in &self.terms {
            let c = t.coeff.at(node);
            if c != 0.0 {
                s += c * profile(t.kind, zz, l);
            }
        }
        s
    }

    /// Pointwise `∂_z^l a(x, z(x))`.
    pub fn eval(&self, z: &Field, l: usize) -> Result<Field> {
        if l > MAX_ORDER {
            return Err(Error::OrderTooHigh(l));
        }
        self.check_grids(z)?;
        let values = (0..z.values().len())
            .map(|k| self.value_at(k, z.values()[k], l))
            .collect();
        Field::new(z.grid(), values)
    }

    fn check_grids(&self, z: &Field) -> Result<()> {
        for t in &self.terms {
            if let Coefficient::Field(f) = &t.coeff {
                f.check_same_grid(z)?;
            }
        }
        if let Some(g) = &self.gauge {
            g.shift.check_same_grid(z)?;
        }
        Ok(())
    }

    /// `∫₀¹ [∂_z a(x, w + t h) − ∂_z a(x, w)] h dt`, evaluated exactly for
    /// powers and by Gauss–Legendre quadrature in cancellation-free form for
    /// sines.
    pub fn remainder(&self, w: &Field, h: &Field) -> Result<Field> {
        self.check_grids(w)?;
        w.check_same_grid(h)?;
        let values = (0..w.values().len())
            .map(|k| {
                let ww = w.values()[k] + self.shift_at(k);
                let hh = h.values()[k];
                let mut s = 0.0;
                for t in &self.terms {
                    let c = t.coeff.at(k);
                    if c == 0.0 {
                        continue;
                    }
                    s += c * match t.kind {
                        TermKind::Power(m) => power_remainder(m, ww, hh),
                        TermKind::Sine(om) => sine_remainder(om, ww, hh),
                    };
                }
                s
            })
            .collect();
        Field::new(w.grid(), values)
    }
}

/// `(w+h)^m − w^m − m w^{m−1} h = Σ_{j≥2} C(m,j) w^{m−j} h^j`
fn power_remainder(m: u32, w: f64, h: f64) -> f64 {
    let m = m as usize;
    let mut s = 0.0;
    let mut binom = 1.0;
    for j in 1..=m {
        binom = binom * (m + 1 - j) as f64 / j as f64;
        if j >= 2 {
            s += binom * w.powi((m - j) as i32) * h.powi(j as i32);
        }
    }
    s
}

/// `∫₀¹ ω [cos(ω(w+th)) − cos(ωw)] h dt` with the difference of cosines
/// written as a product of sines.
fn sine_remainder(omega: f64, w: f64, h: f64) -> f64 {
    let mut s = 0.0;
    for side in [-1.0, 1.0] {
        for (x, wt) in GL_X.iter().zip(GL_W) {
            let t = 0.5 * (1.0 + side * x);
            let b = omega * t * h;
            let diff = -2.0 * (omega * w + 0.5 * b).sin() * (0.5 * b).sin();
            s += 0.5 * wt * omega * diff * h;
        }
    }
    s
}

/// Composes `a` with the gauge shift `φ`: `Δφ(x) + a(x, z + φ(x))`. The
/// shift must have vanishing trace and normal derivative.
pub fn gauge_transform(a: &Nonlinearity, phi: &Field) -> Result<Nonlinearity> {
    let scale = phi.norm_inf().max(1.0);
    let defect = trace(phi).norm_inf().max(normal_derivative(phi).norm_inf());
    if defect > 1e-12 * scale {
        return Err(Error::GaugeCauchyData { defect });
    }
    a.check_grids(phi)?;
    let lap = laplacian(phi);
    let gauge = match &a.gauge {
        None => Gauge {
            shift: phi.clone(),
            laplacian: lap,
        },
        Some(g) => Gauge {
            shift: &g.shift + phi,
            laplacian: &g.laplacian + &lap,
        },
    };
    Ok(Nonlinearity {
        terms: a.terms.clone(),
        gauge: Some(gauge),
    })
}
