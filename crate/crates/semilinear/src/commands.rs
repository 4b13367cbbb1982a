//! One function per subcommand. Each writes its artifacts through the
//! [`Context`] and returns a JSON summary that also goes to `report.json`.

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use semilinear_core::cauchy::{cauchy_pair, fit_grid_constant, sample_cauchy_set, semilinear_ensemble};
use semilinear_core::matched::MatchedMap;
use semilinear_core::mesh::{fourier_basis, normal_derivative, trace};
use semilinear_core::nonlinearity::{gauge_transform, Coefficient, Nonlinearity, Term};
use semilinear_core::reconstruct::{
    assemble_nonlinearity, first_linearization_scan, higher_order_identity, oracle_dn_matrix,
    recover_kth_taylor, recover_potential_difference, relative_l2_error, tube_error, InversionOptions,
    SimulatedOracle, SweepOptions, TaylorOptions,
};
use semilinear_core::runge::{local_dirichlet, point_value_solution, NodeRect, RungeProblem};
use semilinear_core::schrodinger::{dirichlet_solve, dn_map, kernel_basis};
use semilinear_core::solution_map::{newton_solve, pde_residual, SolutionMap};
use semilinear_core::sparse::assemble_schrodinger;
use semilinear_core::{BoundaryField, Field, Grid};

use crate::config::{Config, FieldRef, SecondEquation, TermSpec};
use crate::error::{CliError, CliResult};
use crate::io::{self, ReportJson, Table};

/// Output directory, the files written so far and the run's generator.
pub struct Context<'a> {
    pub cfg: &'a Config,
    pub grid: Arc<Grid>,
    pub rng: ChaCha8Rng,
    out: PathBuf,
    outputs: Vec<String>,
}

impl<'a> Context<'a> {
    pub fn new(cfg: &'a Config, out: PathBuf) -> CliResult<Context<'a>> {
        Ok(Context {
            grid: cfg.make_grid()?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            out,
            outputs: Vec::new(),
        })
    }

    /// Path of an output file, recorded for the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    fn field(&self, r: &FieldRef) -> CliResult<Field> {
        self.cfg.field(&self.grid, r)
    }

    fn report(&mut self, summary: Value) -> CliResult<Value> {
        let path = self.file("report.json");
        io::write_json(&path, &summary)?;
        Ok(summary)
    }
}

fn newton_from_zero(a: &Nonlinearity, f: &BoundaryField) -> CliResult<Field> {
    Ok(newton_solve(a, f, &Field::zeros(f.grid()))?.0)
}

/// Least-squares slope of `ln y` against `ln t`.
pub fn loglog_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn max_abs_diff(a: &Field, b: &Field) -> f64 {
    a.values().iter().zip(b.values()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn random_datum(basis: &[BoundaryField], rng: &mut ChaCha8Rng) -> BoundaryField {
    let mut f = BoundaryField::zeros(basis[0].grid());
    for b in basis {
        f.axpy(rng.random::<f64>() * 2.0 - 1.0, b);
    }
    f
}

// --- forward and linear theory -----------------------------------------------

pub fn forward(ctx: &mut Context) -> CliResult<Value> {
    let spec = &ctx.cfg.forward;
    let f = ctx.cfg.boundary(&ctx.grid, &spec.boundary)?;
    let a = ctx.cfg.nonlinearity(&ctx.grid, &spec.nonlinearity)?;
    let (u, method, newton) = if spec.nonlinearity.is_linear() {
        let mut q = Field::zeros(&ctx.grid);
        for t in &spec.nonlinearity.terms {
            if let TermSpec::Power { coeff, .. } = t {
                q.axpy(1.0, &ctx.field(coeff)?);
            }
        }
        (dirichlet_solve(&q, &f)?, "dirichlet", None)
    } else {
        let (u, rep) = newton_solve(&a, &f, &Field::zeros(&ctx.grid))?;
        (u, "newton", Some(ReportJson::from(&rep)))
    };
    io::write_field_csv(&ctx.file("solution.csv"), &u)?;
    io::write_boundary_csv(&ctx.file("neumann.csv"), &normal_derivative(&u))?;
    let summary = json!({
        "method": method,
        "residual": pde_residual(&a, &u)?,
        "sup_norm": u.norm_inf(),
        "newton": newton,
    });
    ctx.report(summary)
}

pub fn kernel(ctx: &mut Context) -> CliResult<Value> {
    let q = ctx.field(&ctx.cfg.kernel.potential.clone())?;
    let kb = kernel_basis(&q)?;
    for (k, (psi, dpsi)) in kb.psi().iter().zip(kb.neumann_traces()).enumerate() {
        io::write_field_csv(&ctx.file(&format!("psi_{k}.csv")), psi)?;
        io::write_boundary_csv(&ctx.file(&format!("psi_{k}_neumann.csv")), dpsi)?;
    }
    io::write_triplets_csv(&ctx.file("operator.csv"), &assemble_schrodinger(&q))?;
    let summary = json!({
        "dimension": kb.dimension(),
        "eigenvalues": kb.eigenvalues(),
        "gap": kb.gap(),
        "gram_defect": kb.gram_defect(),
    });
    ctx.report(summary)
}

pub fn dn(ctx: &mut Context) -> CliResult<Value> {
    let spec = ctx.cfg.dn.clone();
    let q = ctx.field(&spec.potential)?;
    let m = dn_map(&q, &fourier_basis(&ctx.grid, spec.modes))?;
    io::write_dn_csv(&ctx.file("dn.csv"), &m)?;
    let summary = json!({
        "basis_size": m.size(),
        "symmetry_defect": m.symmetry_defect(),
        "norm": m.norm(),
    });
    ctx.report(summary)
}

// --- solution map ----------------------------------------------------------

pub fn solmap(ctx: &mut Context) -> CliResult<Value> {
    let spec = ctx.cfg.solmap.clone();
    let a = ctx.cfg.nonlinearity(&ctx.grid, &spec.nonlinearity)?;
    let w = newton_from_zero(&a, &ctx.cfg.boundary(&ctx.grid, &spec.base)?)?;
    let map = SolutionMap::new(&a, &w)?;
    let v = map.linear_solution(&ctx.cfg.boundary(&ctx.grid, &spec.direction)?)?;
    if v.norm_inf() == 0.0 {
        return Err(CliError::Config("solmap direction is zero".into()));
    }

    let mut table = Table::new(&["t", "remainder_norm", "rate"]);
    for &t in &spec.steps {
        let (r, rep) = map.correction(&v.scale(t), None)?;
        table.push(vec![t, r.norm_inf(), rep.contraction_rate]);
    }
    io::write_table_csv(&ctx.file("slopes.csv"), &table)?;
    let norms = table.column("remainder_norm").unwrap_or_default();
    let exponent = if norms.iter().all(|&y| y > 0.0) && spec.steps.len() >= 2 {
        Some(loglog_slope(&spec.steps, &norms))
    } else {
        None
    };

    // contraction and uniqueness at the adaptive radius
    let delta = map.adaptive_delta(&v)?;
    let vd = v.scale(delta / v.surrogate_norm());
    let (r1, rep) = map.correction(&vd, None)?;
    let start = Field::from_fn(&ctx.grid, |x, y| {
        0.05 * delta * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
    });
    let (r2, _) = map.correction(&vd, Some(&start))?;

    // round trip through the inverse, and the derivative at zero
    let (u, _) = map.apply(&vd)?;
    let back = map.invert(&u)?;
    let (u2, _) = map.apply(&back)?;
    let zero = Field::zeros(&ctx.grid);
    let unit = v.scale(1.0 / v.surrogate_norm());
    let derr = |t: f64| -> CliResult<f64> { Ok(max_abs_diff(&map.derivative(&zero, &unit, t)?, &unit)) };
    let (e1, e2) = (derr(0.1)?, derr(0.05)?);

    let summary = json!({
        "exponent": exponent,
        "adaptive_delta": delta,
        "contraction_rate": rep.contraction_rate,
        "uniqueness_gap": max_abs_diff(&r1, &r2),
        "round_trip": max_abs_diff(&u2, &u),
        "derivative_errors": [e1, e2],
        "halving_ratio": if e2 > 0.0 { Some(e1 / e2) } else { None },
        "correction": ReportJson::from(&rep),
    });
    ctx.report(summary)
}

// --- matched map -----------------------------------------------------------

pub fn matched(ctx: &mut Context) -> CliResult<Value> {
    let spec = ctx.cfg.matched.clone();
    let a1 = ctx.cfg.nonlinearity(&ctx.grid, &spec.first)?;
    let w1 = newton_from_zero(&a1, &ctx.cfg.boundary(&ctx.grid, &spec.base)?)?;
    let (a2, w2) = match &spec.second {
        SecondEquation::Gauge(phi) => {
            let phi = ctx.field(phi)?;
            (gauge_transform(&a1, &phi)?, &w1 - &phi)
        }
        SecondEquation::Nonlinearity(s) => {
            let a2 = ctx.cfg.nonlinearity(&ctx.grid, s)?;
            let w2 = newton_solve(&a2, &trace(&w1), &w1)?.0;
            (a2, w2)
        }
    };
    let m = MatchedMap::new(&a1, &a2, &w1, &w2)?;
    let basis = fourier_basis(&ctx.grid, spec.modes);

    let mut table = Table::new(&["sample", "cauchy_deviation", "residual", "iterations", "contraction_rate"]);
    let (mut worst_dev, mut worst_res) = (0.0_f64, 0.0_f64);
    for s in 0..spec.samples {
        let v = m.first_map().linear_solution(&random_datum(&basis, &mut ctx.rng))?;
        let v = v.scale(spec.size / v.surrogate_norm());
        let (u1, _) = m.first_map().apply(&v)?;
        let (u2, rep) = m.match_solution(&u1, spec.size)?;
        let dev = cauchy_pair(&u2).max_deviation(&cauchy_pair(&u1));
        let res = pde_residual(&a2, &u2)?;
        worst_dev = worst_dev.max(dev);
        worst_res = worst_res.max(res);
        table.push(vec![s as f64, dev, res, rep.iterations as f64, rep.contraction_rate]);
    }
    io::write_table_csv(&ctx.file("samples.csv"), &table)?;

    let z = Field::new(
        &ctx.grid,
        (0..ctx.grid.node_count()).map(|_| ctx.rng.random::<f64>() - 0.5).collect(),
    )
    .map_err(CliError::Core)?;
    let p = m.clamped().project(&z)?;
    let pp = m.clamped().project(&p)?;
    let summary = json!({
        "samples": spec.samples,
        "max_cauchy_deviation": worst_dev,
        "max_residual": worst_res,
        "projection_idempotence": max_abs_diff(&pp, &p) / z.norm_inf().max(1.0),
        "base_shift": (&w2 - &w1).norm_inf(),
    });
    ctx.report(summary)
}

// --- reconstruction --------------------------------------------------------

pub fn reconstruct_linear(ctx: &mut Context) -> CliResult<Value> {
    let spec = ctx.cfg.reconstruct_linear.clone();
    let qa = ctx.field(&spec.reference)?;
    let truth = ctx.field(&spec.perturbation)?;
    let qb = &qa + &truth;
    let basis = fourier_basis(&ctx.grid, spec.modes);
    let known = SimulatedOracle::linear(&qa)?;
    let measured = SimulatedOracle::linear(&qb)?.with_noise(spec.noise, ctx.rng.next_u64());
    let dna = oracle_dn_matrix(&known, &basis)?;
    let dnb = oracle_dn_matrix(&measured, &basis)?;
    let opts = InversionOptions {
        coarse: spec.coarse,
        reg: spec.reg,
    };
    let rec = recover_potential_difference(&dna, &dnb, &qa, opts)?;
    io::write_field_csv(&ctx.file("recovered.csv"), &rec.field)?;
    io::write_field_csv(&ctx.file("truth.csv"), &truth)?;
    let mut lcurve = Table::new(&["reg", "residual", "seminorm"]);
    for p in &rec.lcurve {
        lcurve.push(vec![p.reg, p.residual, p.seminorm]);
    }
    io::write_table_csv(&ctx.file("lcurve.csv"), &lcurve)?;
    let error = if truth.norm_inf() > 0.0 {
        Some(relative_l2_error(&rec.field, &truth)?)
    } else {
        None
    };
    let summary = json!({
        "relative_l2_error": error,
        "reg": rec.reg,
        "effective_rank": rec.effective_rank,
        "unknowns": rec.unknowns,
        "rank_deficient": rec.rank_deficient(spec.modes),
        "misfit": rec.misfit,
        "noise": spec.noise,
    });
    ctx.report(summary)
}

pub fn reconstruct_sweep(ctx: &mut Context) -> CliResult<Value> {
    let spec = ctx.cfg.reconstruct_sweep.clone();
    let truth = ctx.cfg.nonlinearity(&ctx.grid, &spec.truth)?;
    let known = ctx.cfg.nonlinearity(&ctx.grid, &spec.known)?;
    let w1 = newton_from_zero(&truth, &ctx.cfg.boundary(&ctx.grid, &spec.base)?)?;
    let oracle = SimulatedOracle::new(&truth, &w1, spec.noise, ctx.rng.next_u64())?;
    let opts = SweepOptions {
        basis_size: spec.modes,
        lambda_max: spec.lambda_max,
        lambda_steps: spec.lambda_steps,
        sweep_steps: spec.sweep_steps,
        eps: spec.eps,
        inversion: InversionOptions {
            coarse: spec.coarse,
            reg: None,
        },
        ..SweepOptions::default()
    };
    let res = first_linearization_scan(&oracle, &known, &w1, opts)?;
    io::write_field_csv(&ctx.file("phi.csv"), &res.phi)?;

    // one row per node and offset; uncovered entries are left out
    let n = ctx.grid.n();
    let mut slice = Table::new(&["i", "j", "lambda", "derivative", "nonlinearity"]);
    let asm = assemble_nonlinearity(&res.slice, &w1);
    for (l, &lam) in res.slice.lambdas.iter().enumerate() {
        for node in 0..ctx.grid.node_count() {
            if !res.slice.coverage[l][node] {
                continue;
            }
            let (i, j) = (node % n, node / n);
            let value = asm.value(node, lam).unwrap_or(f64::NAN);
            slice.push(vec![i as f64, j as f64, lam, res.slice.values[l].values()[node], value]);
        }
    }
    io::write_table_csv(&ctx.file("slice.csv"), &slice)?;
    let mut sweep = Table::new(&["t", "dn_error", "reg", "offset_gap"]);
    for s in &res.samples {
        sweep.push(vec![s.t, s.dn_error, s.recovery.reg, max_abs_diff(&s.offset, &s.known_offset)]);
    }
    io::write_table_csv(&ctx.file("sweep.csv"), &sweep)?;

    let (err, used) = tube_error(&asm, &truth, &w1)?;
    let (gauge_err, _) = tube_error(&asm, &gauge_transform(&known, &res.phi)?, &w1)?;
    let summary = json!({
        "tube_error": err,
        "tube_error_gauge": gauge_err,
        "nodes_used": used,
        "coverage": res.slice.interior_coverage(&ctx.grid),
        "phi_norm": res.phi.norm_inf(),
        "lambdas": res.slice.lambdas,
    });
    ctx.report(summary)
}

fn monomial(q: &Field, k: usize) -> CliResult<Nonlinearity> {
    Ok(Nonlinearity::new(vec![Term::power(Coefficient::Field(q.clone()), k as u32)])?)
}

pub fn holin(ctx: &mut Context) -> CliResult<Value> {
    let spec = ctx.cfg.holin.clone();
    let k = spec.k;
    if spec.directions.len() != k + 1 {
        return Err(CliError::Config(format!("holin needs {} directions for order {k}", k + 1)));
    }
    let (q1, q2) = (ctx.field(&spec.q1)?, ctx.field(&spec.q2)?);
    let (a1, a2) = (monomial(&q1, k)?, monomial(&q2, k)?);
    let zero = Field::zeros(&ctx.grid);
    let top = spec.directions.iter().copied().max().unwrap_or(0);
    let basis = fourier_basis(&ctx.grid, top + 1);
    let map = SolutionMap::new(&a1, &zero)?;
    let mut dirs = Vec::with_capacity(k + 1);
    for &d in &spec.directions {
        dirs.push(map.linear_solution(&basis[d].scale(spec.scale))?);
    }
    let r = higher_order_identity(&a1, &a2, &zero, &zero, k, &dirs, spec.eps)?;
    io::write_field_csv(&ctx.file("difference.csv"), &r.f)?;

    let mut prod = &q1 - &q2;
    for d in &dirs[..k] {
        prod = prod.zip_map(d, |a, b| a * b);
    }
    let direct = semilinear_core::mesh::inner_domain(&prod, &dirs[k])?;

    let taylor = if spec.taylor {
        let o1 = SimulatedOracle::new(&a1, &zero, 0.0, 0)?;
        let o2 = SimulatedOracle::new(&a2, &zero, 0.0, 0)?;
        let opts = TaylorOptions {
            basis_size: spec.modes,
            eps: spec.eps,
            inversion: InversionOptions {
                coarse: spec.coarse,
                reg: None,
            },
        };
        let rec = recover_kth_taylor(&o1, &o2, &BoundaryField::zeros(&ctx.grid), &zero, k, opts)?;
        io::write_field_csv(&ctx.file("taylor.csv"), &rec.field)?;
        let kf: f64 = (1..=k).map(|i| i as f64).product();
        let want = (&q1 - &q2).scale(kf);
        let err = if want.norm_inf() > 0.0 {
            Some(relative_l2_error(&rec.field, &want)?)
        } else {
            None
        };
        Some(json!({ "relative_l2_error": err, "reg": rec.reg, "sup_norm": rec.field.norm_inf() }))
    } else {
        None
    };

    let summary = json!({
        "order": r.order,
        "interior": r.interior,
        "boundary": r.boundary,
        "direct": direct,
        "cauchy_trace": r.cauchy_trace,
        "cauchy_neumann": r.cauchy_neumann,
        "pde_residual": r.pde_residual,
        "pde_error_estimate": r.pde_error_estimate,
        "difference_error": r.difference_error,
        "taylor": taylor,
    });
    ctx.report(summary)
}

// --- runge and stability ---------------------------------------------------

pub fn runge(ctx: &mut Context) -> CliResult<Value> {
    let spec = ctx.cfg.runge.clone();
    let q = ctx.field(&spec.potential)?;
    let n = ctx.grid.n();
    let basis = fourier_basis(&ctx.grid, spec.point_modes);
    let mut points = Table::new(&["i", "j", "achieved", "error", "boundary_norm", "residual"]);
    let mut worst = 0.0_f64;
    for _ in 0..spec.nodes {
        let i = ctx.rng.random_range(1..n - 1);
        let j = ctx.rng.random_range(1..n - 1);
        let pv = point_value_solution(&q, ctx.grid.index(i, j), spec.target, &basis, None)?;
        let err = (pv.achieved - spec.target).abs();
        worst = worst.max(err);
        points.push(vec![i as f64, j as f64, pv.achieved, err, pv.boundary_norm, pv.residual]);
    }
    io::write_table_csv(&ctx.file("point_values.csv"), &points)?;

    let [i0, i1, j0, j1] = spec.rect;
    let rect = NodeRect::new(i0, i1, j0, j1);
    rect.validate(n)?;
    let [sx, sy] = spec.singularity;
    let target = local_dirichlet(&q, rect, |x, y| ((x - sx).powi(2) + (y - sy).powi(2)).ln())?;
    let problem = RungeProblem::new(&q, rect, &fourier_basis(&ctx.grid, spec.modes))?;
    let curve = problem.budget_curve(&target, &spec.budgets)?;
    let mut budget = Table::new(&["budget", "sup_error", "norm", "lambda"]);
    for (r, &b) in curve.iter().zip(&spec.budgets) {
        budget.push(vec![b, r.sup_error, r.norm, r.lambda]);
    }
    io::write_table_csv(&ctx.file("budget.csv"), &budget)?;
    let monotone = curve.windows(2).all(|w| w[1].sup_error <= w[0].sup_error);
    let summary = json!({
        "max_point_error": worst,
        "point_tolerance": 1e-6 * spec.target.abs(),
        "monotone": monotone,
        "sup_errors": curve.iter().map(|r| r.sup_error).collect::<Vec<_>>(),
    });
    ctx.report(summary)
}

/// A pair counts as a violation when its Cauchy data agree to round-off
/// but the solutions differ.
pub const VIOLATION_DENOMINATOR: f64 = 1e-12;
pub const VIOLATION_NUMERATOR: f64 = 1e-6;

pub fn stability(ctx: &mut Context) -> CliResult<Value> {
    let spec = ctx.cfg.stability.clone();
    let a = ctx.cfg.nonlinearity(&ctx.grid, &spec.nonlinearity)?;
    let w = newton_from_zero(&a, &ctx.cfg.boundary(&ctx.grid, &spec.base)?)?;
    let basis = fourier_basis(&ctx.grid, spec.modes);
    let sample = sample_cauchy_set(&a, &w, spec.delta, &basis, spec.samples, ctx.rng.next_u64())?;
    let rows = semilinear_ensemble(&a, &sample)?;
    let mut table = Table::new(&["sample", "numerator", "denominator", "ratio", "m"]);
    let mut violations = 0;
    for r in &rows {
        if r.denominator < VIOLATION_DENOMINATOR && r.numerator > VIOLATION_NUMERATOR {
            violations += 1;
        }
        table.push(vec![r.sample as f64, r.numerator, r.denominator, r.ratio, r.m]);
    }
    io::write_table_csv(&ctx.file("ratios.csv"), &table)?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let fit = (ratios.len() >= 2).then(|| fit_grid_constant(&ratios));
    let summary = json!({
        "pairs": rows.len(),
        "skipped": sample.skipped,
        "violations": violations,
        "max_ratio": ratios.iter().copied().fold(0.0, f64::max),
        "fitted_constant": fit.as_ref().map(|f| f.constant),
        "validation_max": fit.as_ref().map(|f| f.validation_max),
        "stable": fit.as_ref().map(|f| f.stable),
    });
    ctx.report(summary)
}
