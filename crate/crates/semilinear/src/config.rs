//! JSON experiment configuration and its resolution into core objects.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use semilinear_core::mesh::fourier_basis;
use semilinear_core::nonlinearity::{gauge_transform, Coefficient, Nonlinearity, Term};
use semilinear_core::{BoundaryField, Field, Grid};

use crate::error::{CliError, CliResult};

/// A scalar coefficient or the name of an entry in the `fields` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldRef {
    Constant(f64),
    Name(String),
}

impl Default for FieldRef {
    fn default() -> Self {
        FieldRef::Constant(0.0)
    }
}

/// Analytic fields on the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant(f64),
    /// `c + cx·x + cy·y`
    Affine {
        c: f64,
        #[serde(default)]
        cx: f64,
        #[serde(default)]
        cy: f64,
    },
    /// `amplitude · b(x) b(y)` with `b(t) = (1 − ((t − c)/r)²)³` inside the radius.
    Bump {
        center: [f64; 2],
        radius: f64,
        amplitude: f64,
    },
    /// `amplitude · exp(−|x − c|² / width)`
    Gaussian {
        center: [f64; 2],
        width: f64,
        amplitude: f64,
    },
    /// `amplitude · sin(jπx) sin(kπy)`
    SineMode {
        j: u32,
        k: u32,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// The constant equal to the `(j, k)` Dirichlet eigenvalue of the
    /// negative five-point Laplacian: a resonant potential.
    Eigenvalue { j: u32, k: u32 },
    Sum(Vec<FieldRef>),
    Scaled { field: FieldRef, factor: f64 },
    /// Field CSV or JSON file, relative to the configuration file.
    File(PathBuf),
}

fn one() -> f64 {
    1.0
}

/// Dirichlet data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    Constant(f64),
    Affine {
        c: f64,
        #[serde(default)]
        cx: f64,
        #[serde(default)]
        cy: f64,
    },
    /// Coefficients in the orthonormal Fourier boundary basis.
    Modes(Vec<f64>),
}

impl Default for BoundarySpec {
    fn default() -> Self {
        BoundarySpec::Constant(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermSpec {
    Power { m: u32, coeff: FieldRef },
    Sine { omega: f64, coeff: FieldRef },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySpec {
    pub terms: Vec<TermSpec>,
    /// `"none"` or a field name: the nonlinearity is gauge-transformed by it.
    #[serde(default = "no_gauge")]
    pub gauge: String,
}

fn no_gauge() -> String {
    "none".into()
}

impl NonlinearitySpec {
    pub fn linear(q: FieldRef) -> Self {
        NonlinearitySpec {
            terms: vec![TermSpec::Power { m: 1, coeff: q }],
            gauge: no_gauge(),
        }
    }

    pub fn quadratic() -> Self {
        NonlinearitySpec {
            terms: vec![
                TermSpec::Power {
                    m: 1,
                    coeff: FieldRef::Constant(1.0),
                },
                TermSpec::Power {
                    m: 2,
                    coeff: FieldRef::Constant(0.3),
                },
            ],
            gauge: no_gauge(),
        }
    }

    pub fn minus_cubic() -> Self {
        NonlinearitySpec {
            terms: vec![TermSpec::Power {
                m: 3,
                coeff: FieldRef::Constant(-1.0),
            }],
            gauge: no_gauge(),
        }
    }

    /// True when every term is `q(x)·u` (no gauge): the equation is linear
    /// and homogeneous.
    pub fn is_linear(&self) -> bool {
        self.gauge == "none" && self.terms.iter().all(|t| matches!(t, TermSpec::Power { m: 1, .. }))
    }
}

// --- per-command sections ---------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardConfig {
    pub nonlinearity: NonlinearitySpec,
    pub boundary: BoundarySpec,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig {
            nonlinearity: NonlinearitySpec::quadratic(),
            boundary: BoundarySpec::Constant(0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub potential: FieldRef,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            potential: FieldRef::Constant(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolmapConfig {
    pub nonlinearity: NonlinearitySpec,
    pub base: BoundarySpec,
    pub direction: BoundarySpec,
    pub steps: Vec<f64>,
}

impl Default for SolmapConfig {
    fn default() -> Self {
        SolmapConfig {
            nonlinearity: NonlinearitySpec::minus_cubic(),
            base: BoundarySpec::Constant(0.0),
            direction: BoundarySpec::Affine {
                c: 0.0,
                cx: 1.0,
                cy: 0.0,
            },
            steps: vec![0.0125, 0.025, 0.05, 0.1],
        }
    }
}

/// The second equation of the matched map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SecondEquation {
    /// The first equation gauge-transformed by this field.
    Gauge(FieldRef),
    /// An explicit nonlinearity; its base solution is the Newton solution
    /// with the first base's Dirichlet data.
    Nonlinearity(NonlinearitySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchedConfig {
    pub first: NonlinearitySpec,
    pub second: SecondEquation,
    pub base: BoundarySpec,
    pub samples: usize,
    /// Surrogate norm of the random linearized inputs.
    pub size: f64,
    pub modes: usize,
}

impl Default for MatchedConfig {
    fn default() -> Self {
        MatchedConfig {
            first: NonlinearitySpec {
                terms: vec![TermSpec::Power {
                    m: 2,
                    coeff: FieldRef::Constant(1.0),
                }],
                gauge: no_gauge(),
            },
            second: SecondEquation::Gauge(FieldRef::Name("gauge".into())),
            base: BoundarySpec::Affine {
                c: 0.0,
                cx: 0.2,
                cy: 0.1,
            },
            samples: 10,
            size: 0.2,
            modes: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnConfig {
    pub potential: FieldRef,
    pub modes: usize,
}

impl Default for DnConfig {
    fn default() -> Self {
        DnConfig {
            potential: FieldRef::Constant(1.0),
            modes: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructLinearConfig {
    pub reference: FieldRef,
    pub perturbation: FieldRef,
    pub modes: usize,
    pub coarse: usize,
    /// Fixed relative regularization weight; the L-curve is used when absent.
    pub reg: Option<f64>,
    pub noise: f64,
}

impl Default for ReconstructLinearConfig {
    fn default() -> Self {
        ReconstructLinearConfig {
            reference: FieldRef::Constant(1.0),
            perturbation: FieldRef::Name("bump".into()),
            modes: 32,
            coarse: 17,
            reg: None,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSweepConfig {
    /// The equation behind the measurements.
    pub truth: NonlinearitySpec,
    /// The known equation used for the gauge and the reference potential.
    pub known: NonlinearitySpec,
    pub base: BoundarySpec,
    pub lambda_max: f64,
    pub lambda_steps: usize,
    pub sweep_steps: usize,
    pub modes: usize,
    pub coarse: usize,
    pub eps: f64,
    pub noise: f64,
}

impl Default for ReconstructSweepConfig {
    fn default() -> Self {
        ReconstructSweepConfig {
            truth: NonlinearitySpec::quadratic(),
            known: NonlinearitySpec::quadratic(),
            base: BoundarySpec::Affine {
                c: 0.0,
                cx: 0.1,
                cy: -0.05,
            },
            lambda_max: 0.1,
            lambda_steps: 5,
            sweep_steps: 5,
            modes: 24,
            coarse: 17,
            eps: 1e-2,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolinConfig {
    pub q1: FieldRef,
    pub q2: FieldRef,
    pub k: usize,
    /// Boundary basis indices of the `k + 1` linearized solutions.
    pub directions: Vec<usize>,
    /// Factor applied to each boundary basis function.
    pub scale: f64,
    pub eps: f64,
    /// Also recover `∂^k a₁ − ∂^k a₂` from the oracles.
    pub taylor: bool,
    pub modes: usize,
    pub coarse: usize,
}

impl Default for HolinConfig {
    fn default() -> Self {
        HolinConfig {
            q1: FieldRef::Name("shifted".into()),
            q2: FieldRef::Constant(1.0),
            k: 2,
            directions: vec![0, 2, 4],
            scale: 2.0,
            eps: 1e-2,
            taylor: false,
            modes: 24,
            coarse: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RungeConfig {
    pub potential: FieldRef,
    pub target: f64,
    /// Number of random interior nodes for point values.
    pub nodes: usize,
    pub point_modes: usize,
    /// Node rectangle `[i0, i1, j0, j1]` of the subdomain.
    pub rect: [usize; 4],
    /// Center of the logarithmic singularity outside the subdomain.
    pub singularity: [f64; 2],
    pub budgets: Vec<f64>,
    pub modes: usize,
}

impl Default for RungeConfig {
    fn default() -> Self {
        RungeConfig {
            potential: FieldRef::Constant(0.0),
            target: 4.0,
            nodes: 10,
            point_modes: 9,
            rect: [8, 24, 8, 24],
            singularity: [0.85, 0.5],
            budgets: vec![0.0, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5],
            modes: 33,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub nonlinearity: NonlinearitySpec,
    pub base: BoundarySpec,
    pub delta: f64,
    pub samples: usize,
    pub modes: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            nonlinearity: NonlinearitySpec::minus_cubic(),
            base: BoundarySpec::Constant(0.0),
            delta: 2.0,
            samples: 101,
            modes: 7,
        }
    }
}

// --- top level -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid: usize,
    pub seed: u64,
    pub fields: BTreeMap<String, FieldSpec>,
    pub forward: ForwardConfig,
    pub kernel: KernelConfig,
    pub solmap: SolmapConfig,
    pub matched: MatchedConfig,
    pub dn: DnConfig,
    pub reconstruct_linear: ReconstructLinearConfig,
    pub reconstruct_sweep: ReconstructSweepConfig,
    pub holin: HolinConfig,
    pub runge: RungeConfig,
    pub stability: StabilityConfig,
    /// Directory that relative file references resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        let mut fields = BTreeMap::new();
        fields.insert(
            "bump".into(),
            FieldSpec::Bump {
                center: [0.5, 0.5],
                radius: 0.3,
                amplitude: 0.5,
            },
        );
        fields.insert(
            "gauge".into(),
            FieldSpec::Bump {
                center: [0.5, 0.5],
                radius: 0.3,
                amplitude: 0.4,
            },
        );
        fields.insert(
            "off_center".into(),
            FieldSpec::Gaussian {
                center: [0.4, 0.65],
                width: 0.02,
                amplitude: 1.0,
            },
        );
        fields.insert(
            "shifted".into(),
            FieldSpec::Sum(vec![FieldRef::Constant(1.0), FieldRef::Name("off_center".into())]),
        );
        Config {
            grid: 33,
            seed: 0,
            fields,
            forward: ForwardConfig::default(),
            kernel: KernelConfig::default(),
            solmap: SolmapConfig::default(),
            matched: MatchedConfig::default(),
            dn: DnConfig::default(),
            reconstruct_linear: ReconstructLinearConfig::default(),
            reconstruct_sweep: ReconstructSweepConfig::default(),
            holin: HolinConfig::default(),
            runge: RungeConfig::default(),
            stability: StabilityConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> CliResult<Config> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Config::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Canonical JSON text, the input of the configuration hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    pub fn make_grid(&self) -> CliResult<Arc<Grid>> {
        Grid::new(self.grid).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn field(&self, grid: &Arc<Grid>, r: &FieldRef) -> CliResult<Field> {
        self.field_at_depth(grid, r, 0)
    }

    fn field_at_depth(&self, grid: &Arc<Grid>, r: &FieldRef, depth: usize) -> CliResult<Field> {
        if depth > 16 {
            return Err(CliError::Config("field references nest too deeply".into()));
        }
        match r {
            FieldRef::Constant(c) => Ok(Field::constant(grid, *c)),
            FieldRef::Name(name) => {
                let spec = self
                    .fields
                    .get(name)
                    .ok_or_else(|| CliError::Config(format!("unknown field reference {name:?}")))?;
                self.build_field(grid, spec, depth + 1)
            }
        }
    }

    fn build_field(&self, grid: &Arc<Grid>, spec: &FieldSpec, depth: usize) -> CliResult<Field> {
        let field = match spec {
            FieldSpec::Constant(c) => Field::constant(grid, *c),
            FieldSpec::Affine { c, cx, cy } => Field::from_fn(grid, |x, y| c + cx * x + cy * y),
            FieldSpec::Bump {
                center,
                radius,
                amplitude,
            } => {
                if radius.is_nan() || *radius <= 0.0 {
                    return Err(CliError::Config("bump radius must be positive".into()));
                }
                let b = |t: f64, c: f64| {
                    let s = (t - c) / radius;
                    if s.abs() < 1.0 {
                        (1.0 - s * s).powi(3)
                    } else {
                        0.0
                    }
                };
                Field::from_fn(grid, |x, y| amplitude * b(x, center[0]) * b(y, center[1]))
            }
            FieldSpec::Gaussian {
                center,
                width,
                amplitude,
            } => {
                if width.is_nan() || *width <= 0.0 {
                    return Err(CliError::Config("gaussian width must be positive".into()));
                }
                Field::from_fn(grid, |x, y| {
                    amplitude * (-((x - center[0]).powi(2) + (y - center[1]).powi(2)) / width).exp()
                })
            }
            FieldSpec::SineMode { j, k, amplitude } => Field::from_fn(grid, |x, y| {
                amplitude * (*j as f64 * PI * x).sin() * (*k as f64 * PI * y).sin()
            }),
            FieldSpec::Eigenvalue { j, k } => Field::constant(grid, discrete_eigenvalue(grid, *j, *k)?),
            FieldSpec::Sum(parts) => {
                let mut acc = Field::zeros(grid);
                for p in parts {
                    acc.axpy(1.0, &self.field_at_depth(grid, p, depth)?);
                }
                acc
            }
            FieldSpec::Scaled { field, factor } => self.field_at_depth(grid, field, depth)?.scale(*factor),
            FieldSpec::File(path) => crate::io::read_field_file(grid, &self.base_dir.join(path))?,
        };
        if !field.is_finite() {
            return Err(CliError::Config("field evaluates to non-finite values".into()));
        }
        Ok(field)
    }

    pub fn boundary(&self, grid: &Arc<Grid>, spec: &BoundarySpec) -> CliResult<BoundaryField> {
        Ok(match spec {
            BoundarySpec::Constant(c) => BoundaryField::constant(grid, *c),
            BoundarySpec::Affine { c, cx, cy } => BoundaryField::from_fn(grid, |x, y| c + cx * x + cy * y),
            BoundarySpec::Modes(coeffs) => {
                let basis = fourier_basis(grid, coeffs.len());
                let mut f = BoundaryField::zeros(grid);
                for (c, b) in coeffs.iter().zip(&basis) {
                    f.axpy(*c, b);
                }
                f
            }
        })
    }

    fn coefficient(&self, grid: &Arc<Grid>, r: &FieldRef) -> CliResult<Coefficient> {
        Ok(match r {
            FieldRef::Constant(c) => Coefficient::Constant(*c),
            FieldRef::Name(_) => Coefficient::Field(self.field(grid, r)?),
        })
    }

    pub fn nonlinearity(&self, grid: &Arc<Grid>, spec: &NonlinearitySpec) -> CliResult<Nonlinearity> {
        let mut terms = Vec::with_capacity(spec.terms.len());
        for t in &spec.terms {
            terms.push(match t {
                TermSpec::Power { m, coeff } => Term::power(self.coefficient(grid, coeff)?, *m),
                TermSpec::Sine { omega, coeff } => Term::sine(self.coefficient(grid, coeff)?, *omega),
            });
        }
        let a = Nonlinearity::new(terms).map_err(|e| CliError::Config(e.to_string()))?;
        if spec.gauge == "none" {
            return Ok(a);
        }
        let phi = self.field(grid, &FieldRef::Name(spec.gauge.clone()))?;
        gauge_transform(&a, &phi).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// `(j, k)` eigenvalue of the negative five-point Dirichlet Laplacian.
pub fn discrete_eigenvalue(grid: &Grid, j: u32, k: u32) -> CliResult<f64> {
    let m = grid.n() as u32 - 1;
    if j == 0 || k == 0 || j >= m || k >= m {
        return Err(CliError::Config(format!("eigenvalue index ({j}, {k}) out of range")));
    }
    let h = grid.h();
    let s = |i: u32| (i as f64 * PI * h / 2.0).sin().powi(2);
    Ok(4.0 / (h * h) * (s(j) + s(k)))
}
