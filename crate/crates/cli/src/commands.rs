//! The subcommands. Each reads its blocks from the configuration, writes
//! artifacts into the output directory and records named checks.

use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use serde::Serialize;
use serde_json::json;

use harnack_core::barrier::{admissible_kappa, lattice_points, random_points, residual_scan, BarrierParams};
use harnack_core::harnack::{
    fit_harnack_constant, garofalo_with_exponent, harnack_exponent, pair_diagnostics_csv, sample_pairs, GridSolution,
    HarnackForm, HarnackOptions, KernelSolution, PairLaw, SolutionEval,
};
use harnack_core::kernel::{
    explicit_kernel_a0, explicit_kernel_samples, fit_bound_constants, fit_with_holdout, numerical_kernel_row,
    samples_csv, EnvelopeForm, FitOptions, KernelEstimate, KernelSample, SampleLaw, Side,
};
use harnack_core::mc::{simulate_density, PathConfig, Reflection};
use harnack_core::measure::{
    ball_volume, volume_envelope,
    doubling_ratio_scan, envelope_constants, envelope_ratio_range, local_volume_bounds, random_doubling_samples,
    random_volume_samples, scaling_defect,
};
use harnack_core::report::{csv_table, fmt_f64};
use harnack_core::rng::{log_uniform, seeded};
use harnack_core::uniqueness::{compare_histogram, Datum};
use harnack_core::{
    build_grid, CrossStencil, Grid, HalfSpacePoint, OperatorParams, OuterBoundary, Scheme, SolutionField, Solver,
    SolverConfig, TimeMethod, Trajectory,
};

use crate::config::Config;
use crate::output::OutputDir;
use crate::ConfigError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub struct RunContext<'a> {
    pub cfg: &'a Config,
    pub seed: u64,
    pub out: OutputDir,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl<'a> RunContext<'a> {
    pub fn new(cfg: &'a Config, seed: u64, out: OutputDir) -> Self {
        Self { cfg, seed, out, checks: Vec::new(), warnings: Vec::new() }
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.to_string(), passed, detail });
    }

    fn warn(&mut self, message: String) {
        self.warnings.push(message);
    }
}

fn config_err<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| anyhow::Error::new(ConfigError(format!("{e:#}"))))
}

pub fn params(cfg: &Config) -> Result<OperatorParams> {
    config_err((|| {
        let n = cfg.usize("params.N", 1)?;
        let c = cfg.f64("params.c", 0.0)?;
        let a = cfg.list("params.a", &vec![0.0; n])?;
        Ok(OperatorParams::new(n, c, &a)?)
    })())
}

pub fn grid(cfg: &Config, params: &OperatorParams) -> Result<Arc<Grid>> {
    config_err((|| {
        let g = build_grid(
            params,
            cfg.f64("grid.x_extent", 3.0)?,
            cfg.f64("grid.y_extent", 4.0)?,
            cfg.usize("grid.n_x", 48)?,
            cfg.usize("grid.n_y", 64)?,
        )?;
        Ok(Arc::new(g))
    })())
}

pub fn solver_config(cfg: &Config) -> Result<SolverConfig> {
    config_err((|| {
        let d = SolverConfig::default();
        let scheme = match cfg.choice("solver.scheme", "fully_implicit", &["fully_implicit", "imex"])?.as_str() {
            "imex" => Scheme::ImplicitAxialExplicitCross,
            _ => Scheme::FullyImplicit,
        };
        let time_method = match cfg.choice("solver.time", "crank_nicolson", &["crank_nicolson", "backward_euler"])?.as_str() {
            "backward_euler" => TimeMethod::BackwardEuler,
            _ => TimeMethod::CrankNicolson,
        };
        let cross_stencil = match cfg.choice("solver.stencil", "monotone", &["monotone", "centered"])?.as_str() {
            "centered" => CrossStencil::Centered,
            _ => CrossStencil::Monotone,
        };
        let outer = match cfg.choice("solver.outer", "neumann", &["neumann", "dirichlet"])?.as_str() {
            "dirichlet" => OuterBoundary::ZeroDirichlet,
            _ => OuterBoundary::Neumann,
        };
        let sc = SolverConfig {
            horizon: cfg.f64("solver.horizon", 1.0)?,
            dt: cfg.f64("solver.dt", 0.01)?,
            scheme,
            time_method,
            cross_stencil,
            outer,
            tolerance: cfg.f64("solver.tolerance", d.tolerance)?,
            max_iterations: cfg.usize("solver.max_iterations", d.max_iterations)?,
            rannacher_steps: cfg.usize("solver.rannacher_steps", d.rannacher_steps)?,
        };
        sc.validate()?;
        Ok(sc)
    })())
}

fn point(cfg: &Config, prefix: &str, n: usize, y_default: f64) -> Result<HalfSpacePoint> {
    config_err((|| {
        let x = cfg.list(&format!("{prefix}_x"), &vec![0.0; n])?;
        let y = cfg.f64(&format!("{prefix}_y"), y_default)?;
        Ok(HalfSpacePoint::new(x, y)?)
    })())
    .and_then(|p| {
        if p.x.len() != n {
            return Err(anyhow::Error::new(ConfigError(format!("`{prefix}_x` must have {n} entries"))));
        }
        Ok(p)
    })
}

pub fn datum(cfg: &Config, n: usize) -> Result<Datum> {
    let kind = config_err(cfg.choice("datum.kind", "bump", &["zero", "bump", "clipped_bump"]))?;
    let center = point(cfg, "datum.center", n, 1.0)?;
    config_err((|| {
        let width = cfg.f64("datum.width", 0.3)?;
        let amplitude = cfg.f64("datum.amplitude", 1.0)?;
        Ok(match kind.as_str() {
            "zero" => Datum::Zero,
            "clipped_bump" => Datum::ClippedBump { center, width, amplitude, offset: cfg.f64("datum.offset", 1.0)? },
            _ => Datum::Bump { center, width, amplitude },
        })
    })())
}

fn snapshot_times(cfg: &Config, horizon: f64) -> Result<Vec<f64>> {
    let k = config_err(cfg.usize("solver.snapshots", 20))?.max(1);
    Ok((1..=k).map(|i| horizon * i as f64 / k as f64).collect())
}

fn field_csv(u: &SolutionField) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    u.write_csv(&mut buf)?;
    Ok(buf)
}

pub fn solve(ctx: &mut RunContext) -> Result<()> {
    let p = params(ctx.cfg)?;
    let g = grid(ctx.cfg, &p)?;
    let sc = solver_config(ctx.cfg)?;
    let datum = datum(ctx.cfg, p.dim_x())?;
    let u0 = datum.field(g.clone());
    let times = snapshot_times(ctx.cfg, sc.horizon)?;
    let mut solver = Solver::new(g.clone(), &p, &sc)?;
    let monotone = solver.operator().is_monotone();
    if !monotone {
        ctx.warn("discrete operator is not monotone; positivity is not guaranteed".into());
    }
    let traj = solver.solve_at(&u0, &times)?;
    let last = traj.last();
    let rows: Vec<Vec<f64>> = traj.snapshots.iter().map(|s| vec![s.t, s.weighted_integral(), s.min(), s.max()]).collect();
    ctx.out.write("snapshots.csv", csv_table(&["t", "mass", "min", "max"], &rows).as_bytes())?;
    ctx.out.write("solution.csv", &field_csv(last)?)?;
    let mut bin = Vec::new();
    last.write_binary(&mut bin)?;
    ctx.out.write("solution.bin", &bin)?;
    let m0 = u0.weighted_integral();
    let m1 = last.weighted_integral();
    let stats = &solver.stats;
    ctx.out.write_json(
        "solve.json",
        &json!({
            "t": last.t,
            "mass_initial": m0,
            "mass_final": m1,
            "min": last.min(),
            "max": last.max(),
            "neumann_residual": harnack_core::weighted_neumann_residual(last),
            "outer_flux": harnack_core::solver::outer_boundary_flux(last),
            "monotone_operator": monotone,
            "steps": stats.steps,
            "iterations": stats.iterations,
            "max_linear_residual": stats.max_residual,
        }),
    )?;
    ctx.check("finite", traj.is_finite(), format!("{} snapshots", traj.snapshots.len()));
    if p.is_uncoupled() && sc.outer == OuterBoundary::Neumann {
        let rel = (m1 - m0).abs() / m0.abs().max(f64::MIN_POSITIVE);
        ctx.check("mass_conserved", rel <= 1e-10 || (m0 == 0.0 && m1 == 0.0), format!("relative drift {}", fmt_f64(rel)));
    }
    if u0.max() <= 0.0 && monotone && sc.time_method == TimeMethod::BackwardEuler {
        let top = traj.snapshots.iter().map(|s| s.max()).fold(f64::NEG_INFINITY, f64::max);
        ctx.check("max_principle", top <= 1e-12, format!("max {}", fmt_f64(top)));
    }
    Ok(())
}

fn envelope_form(cfg: &Config) -> Result<EnvelopeForm> {
    let f = config_err(cfg.choice("kernel.form", "weight", &["weight", "volume", "one_sided_1", "one_sided_2"]))?;
    Ok(match f.as_str() {
        "volume" => EnvelopeForm::Volume,
        "one_sided_1" => EnvelopeForm::OneSided(1),
        "one_sided_2" => EnvelopeForm::OneSided(2),
        _ => EnvelopeForm::Weight,
    })
}

fn fit_options(cfg: &Config) -> Result<FitOptions> {
    let d = FitOptions::default();
    config_err((|| {
        Ok(FitOptions {
            k_min: cfg.f64("kernel.k_min", d.k_min)?,
            k_max: cfg.f64("kernel.k_max", d.k_max)?,
            k_points: cfg.usize("kernel.k_points", d.k_points)?,
            lower_floor: cfg.f64("kernel.lower_floor", d.lower_floor)?,
            held_out_rtol: cfg.f64("kernel.held_out_rtol", d.held_out_rtol)?,
        })
    })())
}

fn row_samples(row: &SolutionField, source: &HalfSpacePoint, stride: usize) -> Vec<KernelSample> {
    let g = &row.grid;
    (0..g.len())
        .step_by(stride.max(1))
        .filter(|&i| row.values[i] > 0.0)
        .map(|i| KernelSample { t: row.t, z1: source.clone(), z2: g.point(i), p: row.values[i] })
        .collect()
}

/// Cells sharing the source cell's `x` column, bottom to top.
fn slice_cells(g: &Grid, source: &HalfSpacePoint) -> Result<Vec<usize>> {
    let idx = g.locate(source).with_context(|| format!("source {source:?} lies outside the grid"))?;
    let col = idx / g.n_y();
    Ok((0..g.n_y()).map(|j| g.index(col, j)).collect())
}

fn write_slice(
    out: &mut OutputDir,
    row: &SolutionField,
    source: &HalfSpacePoint,
    est: &KernelEstimate,
    p: &OperatorParams,
) -> Result<()> {
    let g = &row.grid;
    let mut rows = Vec::new();
    for i in slice_cells(g, source)? {
        let z2 = g.point(i);
        rows.push(vec![
            z2.y,
            row.values[i],
            est.envelope(row.t, source, &z2, p, Side::Lower)?,
            est.envelope(row.t, source, &z2, p, Side::Upper)?,
        ]);
    }
    out.write("kernel_slice.csv", csv_table(&["y2", "p", "lower", "upper"], &rows).as_bytes())?;
    Ok(())
}

pub fn kernel(ctx: &mut RunContext) -> Result<()> {
    let p = params(ctx.cfg)?;
    let g = grid(ctx.cfg, &p)?;
    let sc = solver_config(ctx.cfg)?;
    let t = config_err(ctx.cfg.f64("kernel.t", 0.25))?;
    let source = point(ctx.cfg, "kernel.source", p.dim_x(), 1.0)?;
    let form = envelope_form(ctx.cfg)?;
    let opts = fit_options(ctx.cfg)?;
    let stride = config_err(ctx.cfg.usize("kernel.stride", 1))?;
    let row = numerical_kernel_row(t, &source, &p, g.clone(), &sc)?;
    let src_cell = g.point(g.locate(&source).context("source outside grid")?);
    if src_cell.dist_sq(&source) > 0.0 {
        ctx.warn(format!("kernel source moved to the cell centre {src_cell:?}"));
    }
    let samples = row_samples(&row, &src_cell, stride);
    let est = fit_bound_constants(&samples, &p, form, &opts)?;
    write_slice(&mut ctx.out, &row, &src_cell, &est, &p)?;
    ctx.out.write("kernel_row.csv", &field_csv(&row)?)?;
    let mass = row.weighted_integral();
    let mut summary = json!({
        "t": t,
        "source": src_cell,
        "mass": mass,
        "min": row.min(),
        "estimate": est,
    });
    if p.is_uncoupled() {
        let max = row.max();
        let mut worst = 0.0f64;
        for i in 0..g.len() {
            let exact = explicit_kernel_a0(t, &src_cell, &g.point(i), &p)?;
            if exact >= 1e-3 * max {
                worst = worst.max((row.values[i] - exact).abs() / exact);
            }
        }
        summary["closed_form_max_rel_error"] = json!(worst);
        ctx.check("closed_form_2pct", worst <= 0.02, format!("max relative error {}", fmt_f64(worst)));
    }
    ctx.out.write_json("kernel.json", &summary)?;
    ctx.check("nonnegative", row.min() >= -1e-12 * row.max(), format!("min {}", fmt_f64(row.min())));
    if sc.outer == OuterBoundary::Neumann {
        ctx.check("unit_mass", (mass - 1.0).abs() <= 1e-8, format!("mass {}", fmt_f64(mass)));
    }
    ctx.check("envelope_fit", est.violation_count == 0, format!("{} fitting violations", est.violation_count));
    Ok(())
}

fn sample_law(cfg: &Config) -> Result<SampleLaw> {
    let d = SampleLaw::default();
    config_err((|| {
        Ok(SampleLaw {
            t_min: cfg.f64("kernel.t_min", d.t_min)?,
            t_max: cfg.f64("kernel.t_max", d.t_max)?,
            x_extent: cfg.f64("kernel.x_extent", d.x_extent)?,
            y_min: cfg.f64("kernel.y_min", d.y_min)?,
            y_max: cfg.f64("kernel.y_max", d.y_max)?,
        })
    })())
}

pub fn fit_bounds(ctx: &mut RunContext) -> Result<()> {
    let p = params(ctx.cfg)?;
    let form = envelope_form(ctx.cfg)?;
    let opts = fit_options(ctx.cfg)?;
    let law = sample_law(ctx.cfg)?;
    let samples = if p.is_uncoupled() {
        let n = config_err(ctx.cfg.usize("kernel.samples", 4000))?;
        explicit_kernel_samples(&p, &law, n, ctx.seed)?
    } else {
        let g = grid(ctx.cfg, &p)?;
        let sc = solver_config(ctx.cfg)?;
        let n_sources = config_err(ctx.cfg.usize("kernel.sources", 3))?.max(1);
        let stride = config_err(ctx.cfg.usize("kernel.stride", 7))?;
        let mut rng = seeded(ctx.seed, 7);
        let mut all = Vec::new();
        for k in 0..n_sources {
            let z = law.draw_point(&mut rng, p.dim_x());
            let z = g.point(g.locate(&z).context("source outside grid")?);
            let t = if n_sources == 1 { law.t_max } else { log_uniform(&mut rng, law.t_min, law.t_max) };
            let row = numerical_kernel_row(t, &z, &p, g.clone(), &sc)?;
            if k == 0 {
                ctx.out.write("kernel_row.csv", &field_csv(&row)?)?;
            }
            let floor = 1e-10 * row.max();
            all.extend(row_samples(&row, &z, stride).into_iter().filter(|s| s.p > floor));
        }
        all
    };
    let est = fit_with_holdout(&samples, &p, form, &opts, ctx.seed)?;
    ctx.out.write("kernel_samples.csv", samples_csv(&samples).as_bytes())?;
    ctx.out.write_json("kernel_estimate.json", &est)?;
    if est.held_out_strict_violations > 0 && est.held_out_violations == 0 {
        ctx.warn(format!("{} held-out samples exceed the envelope within the relative tolerance", est.held_out_strict_violations));
    }
    ctx.check("fitting_set", est.violation_count == 0, format!("{} violations on {} samples", est.violation_count, est.n_samples));
    let held_detail = format!(
        "{} violations (strict {}) on {} held-out samples",
        est.held_out_violations, est.held_out_strict_violations, est.n_held_out
    );
    if p.is_uncoupled() {
        ctx.check("held_out", est.held_out_violations == 0, held_detail);
    } else if est.held_out_violations > 0 {
        ctx.warn(format!("held-out samples outside the fitted envelope: {held_detail}"));
    }
    if p.is_uncoupled() {
        ctx.check("k_up_range", (4.0..=4.6).contains(&est.k_up), format!("k_up = {}", fmt_f64(est.k_up)));
    }
    Ok(())
}

fn pair_law(cfg: &Config) -> Result<PairLaw> {
    config_err((|| {
        Ok(PairLaw {
            t_min: cfg.f64("harnack.t_min", 0.01)?,
            horizon: cfg.f64("harnack.horizon", 1.0)?,
            x_extent: cfg.f64("harnack.x_extent", 2.0)?,
            y_min: cfg.f64("harnack.y_min", 0.01)?,
            y_max: cfg.f64("harnack.y_max", 3.0)?,
        })
    })())
}

fn harnack_plot(
    out: &mut OutputDir,
    u: &dyn SolutionEval,
    pairs: &[harnack_core::harnack::PairSample],
    exponent: f64,
    constant: f64,
    rate: f64,
) -> Result<()> {
    let rows: Vec<Vec<f64>> = pairs
        .iter()
        .filter_map(|q| {
            let early = u.ln_eval(q.s, &q.z2)?;
            let late = u.ln_eval(q.t, &q.z1)?;
            let gap = q.z1.dist_sq(&q.z2) / (q.t - q.s);
            Some(vec![gap, constant.ln() + exponent * (q.t / q.s).ln() + rate * gap - (early - late)])
        })
        .collect();
    out.write("harnack_pairs.csv", csv_table(&["gap", "margin"], &rows).as_bytes())?;
    Ok(())
}

pub fn harnack(ctx: &mut RunContext, garofalo: bool) -> Result<()> {
    let p = params(ctx.cfg)?;
    let law = pair_law(ctx.cfg)?;
    let n_fit = config_err(ctx.cfg.usize("harnack.pairs", 4000))?;
    let n_held = config_err(ctx.cfg.usize("harnack.held_out", 4000))?;
    let fit = sample_pairs(&law, p.dim_x(), n_fit, ctx.seed);
    let held = sample_pairs(&law, p.dim_x(), n_held, ctx.seed.wrapping_add(1));
    let solution = config_err(ctx.cfg.choice("harnack.solution", if p.is_uncoupled() { "kernel" } else { "grid" }, &["kernel", "grid"]))?;
    let traj: Trajectory;
    let kernel_u: KernelSolution;
    let grid_u: GridSolution;
    let u: &dyn SolutionEval = if solution == "kernel" {
        if !p.is_uncoupled() {
            return Err(ConfigError("harnack.solution = kernel needs a = 0".into()).into());
        }
        kernel_u = KernelSolution::new(&p, point(ctx.cfg, "harnack.source", p.dim_x(), 1.0)?);
        &kernel_u
    } else {
        let g = grid(ctx.cfg, &p)?;
        let sc = solver_config(ctx.cfg)?;
        if law.horizon > sc.horizon {
            return Err(ConfigError("harnack.horizon exceeds solver.horizon".into()).into());
        }
        let d = datum(ctx.cfg, p.dim_x())?;
        let u0 = d.field(g.clone());
        if u0.min() < 0.0 {
            return Err(ConfigError("the Harnack datum must be non-negative".into()).into());
        }
        let mut times = snapshot_times(ctx.cfg, sc.horizon)?;
        times.retain(|&t| t > 0.0);
        traj = Solver::new(g, &p, &sc)?.solve_at(&u0, &times)?;
        grid_u = GridSolution::new(&traj, config_err(ctx.cfg.f64("harnack.rel_floor", 1e-8))?);
        &grid_u
    };
    if garofalo {
        if !p.is_uncoupled() || p.c() < 0.0 {
            return Err(ConfigError("--garofalo needs a = 0 and c >= 0".into()).into());
        }
        let exponent = config_err(ctx.cfg.f64("harnack.exponent", harnack_exponent(&p)))?;
        let all: Vec<_> = fit.iter().chain(&held).cloned().collect();
        let r = garofalo_with_exponent(u, &all, exponent);
        ctx.out.write_json("sharp_harnack.json", &r)?;
        harnack_plot(&mut ctx.out, u, &all, exponent, 1.0, 0.25)?;
        ctx.check("sharp_inequality", r.violations == 0, format!("{} violations on {} pairs", r.violations, r.evaluated));
        return Ok(());
    }
    let form = match config_err(ctx.cfg.choice("harnack.form", "shared", &["shared", "no_time_factor"]))?.as_str() {
        "no_time_factor" => HarnackForm::NoTimeFactor,
        _ => HarnackForm::Shared,
    };
    let d = HarnackOptions::default();
    let opts = HarnackOptions {
        c_min: d.c_min,
        c_max: config_err(ctx.cfg.f64("harnack.c_max", d.c_max))?,
        form,
        held_out_rtol: config_err(ctx.cfg.f64("harnack.held_out_rtol", d.held_out_rtol))?,
    };
    let report = fit_harnack_constant(u, &fit, &held, &p, &opts)?;
    if p.is_uncoupled() && p.c() >= 0.0 {
        let sharp = garofalo_with_exponent(u, &held, harnack_exponent(&p));
        if sharp.violations > 0 {
            ctx.warn(format!("{} held-out pairs violate the sharp constant-one form", sharp.violations));
        }
        ctx.out.write_json("harnack.json", &json!({"fit": report, "sharp_form": sharp}))?;
    } else {
        ctx.out.write_json("harnack.json", &json!({"fit": report}))?;
    }
    ctx.out.write("harnack_diagnostics.csv", pair_diagnostics_csv(u, &held, &p, report.constant).as_bytes())?;
    let e = if form == HarnackForm::Shared { report.exponent } else { 0.0 };
    harnack_plot(&mut ctx.out, u, &held, e, report.constant, report.constant)?;
    if report.excluded_pairs > 0 {
        ctx.warn(format!("{} pairs fell below the evaluation floor and were excluded", report.excluded_pairs));
    }
    if report.held_out_strict_violations > 0 && report.held_out_violations == 0 {
        ctx.warn(format!("{} held-out pairs exceed the bound within the relative tolerance", report.held_out_strict_violations));
    }
    ctx.check("finite_constant", report.constant.is_finite(), format!("C = {}", fmt_f64(report.constant)));
    ctx.check(
        "held_out",
        report.held_out_violations == 0,
        format!(
            "{} violations (strict {}) on {} held-out pairs",
            report.held_out_violations, report.held_out_strict_violations, report.n_held_out
        ),
    );
    Ok(())
}

pub fn barrier(ctx: &mut RunContext) -> Result<()> {
    let p = params(ctx.cfg)?;
    let kappa = config_err(ctx.cfg.f64("barrier.kappa", 0.125))?;
    let alpha = match config_err(ctx.cfg.opt_f64("barrier.alpha"))? {
        Some(a) => a,
        None => BarrierParams::minimal_alpha(&p, kappa, 1.0),
    };
    let bp = config_err((|| {
        Ok(BarrierParams::new(alpha, kappa, ctx.cfg.f64("barrier.delta", 1.0)?, ctx.cfg.f64("barrier.beta", 0.1)?)?)
    })())?;
    let radius = config_err(ctx.cfg.f64("barrier.radius", 4.0))?;
    let n = config_err(ctx.cfg.usize("barrier.points", 10_000))?;
    let layout = config_err(ctx.cfg.choice("barrier.layout", "lattice", &["lattice", "random"]))?;
    let points = if layout == "random" {
        random_points(&bp, p.dim_x(), radius, n, ctx.seed)
    } else {
        lattice_points(&bp, p.dim_x(), radius, n)
    };
    let scan = residual_scan(&points, &bp, &p)?;
    let admissible = admissible_kappa(&p).1;
    if kappa > admissible {
        ctx.warn(format!("kappa = {kappa} exceeds the admissible bound {admissible}"));
    }
    ctx.out.write("barrier_residual.csv", csv_table(&["t", "norm_z", "residual"], &scan.plot_rows()).as_bytes())?;
    ctx.out.write("barrier_scan.csv", scan.to_csv(p.dim_x()).as_bytes())?;
    ctx.out.write_json(
        "barrier.json",
        &json!({
            "barrier": bp,
            "kappa_admissible_max": admissible,
            "points": scan.samples.len(),
            "min_normalized_residual": scan.min_normalized,
            "negative_points": scan.negative,
        }),
    )?;
    ctx.check(
        "supersolution",
        scan.is_supersolution(),
        format!("{} of {} points below -1e-12 v; min residual/v {}", scan.negative, scan.samples.len(), fmt_f64(scan.min_normalized)),
    );
    Ok(())
}

pub fn volume(ctx: &mut RunContext) -> Result<()> {
    let p = params(ctx.cfg)?;
    let n = config_err(ctx.cfg.usize("volume.samples", 10_000))?;
    let r0 = config_err(ctx.cfg.f64("volume.r0", 1.0))?;
    let big_r0 = config_err(ctx.cfg.f64("volume.big_r0", 10.0))?;
    let doubling = doubling_ratio_scan(&p, &random_doubling_samples(n, ctx.seed))?;
    let local = random_volume_samples(r0, big_r0, n, ctx.seed);
    let (c1, c2) = local_volume_bounds(&p, r0, big_r0, &local)?;
    let wide = random_volume_samples(1e3, 1e3, n, ctx.seed.wrapping_add(1));
    let (lo, hi) = envelope_ratio_range(&p, &wide)?;
    let (c_lo, c_hi) = envelope_constants(&p);
    let mut rows = Vec::with_capacity(wide.len());
    for s in &wide {
        let z0 = HalfSpacePoint::on_axis(p.dim_x(), s.y0);
        let exact = ball_volume(&z0, s.r, &p)?;
        let env = volume_envelope(&z0, s.r, &p)?;
        rows.push(vec![s.y0, s.r, exact, env, exact / env]);
    }
    ctx.out.write("volume.csv", csv_table(&["y0", "r", "V_exact", "V_envelope", "ratio"], &rows).as_bytes())?;
    let mut rng = seeded(ctx.seed, 9);
    let scaling = (0..n)
        .map(|_| {
            let y0 = log_uniform(&mut rng, 1e-3, 1e2);
            let r = log_uniform(&mut rng, 1e-3, 1e2);
            let lambda = log_uniform(&mut rng, 1e-3, 1e3);
            scaling_defect(&p, y0, r, lambda)
        })
        .fold(0.0f64, f64::max);
    ctx.out.write_json(
        "volume.json",
        &json!({
            "doubling": doubling,
            "local_bounds": {"C1": c1, "C2": c2, "r0": r0, "R0": big_r0},
            "envelope_ratio": {"min": lo, "max": hi, "bound_low": c_lo, "bound_high": c_hi},
            "scaling_max_defect": scaling,
        }),
    )?;
    ctx.check("scaling_identity", scaling <= 1e-12, format!("max defect {}", fmt_f64(scaling)));
    ctx.check(
        "envelope_ratio",
        lo >= c_lo * (1.0 - 1e-12) && hi <= c_hi * (1.0 + 1e-12),
        format!("[{}, {}] within [{}, {}]", fmt_f64(lo), fmt_f64(hi), fmt_f64(c_lo), fmt_f64(c_hi)),
    );
    Ok(())
}

pub fn mc(ctx: &mut RunContext) -> Result<()> {
    let p = params(ctx.cfg)?;
    let g = grid(ctx.cfg, &p)?;
    let sc = solver_config(ctx.cfg)?;
    let t = config_err(ctx.cfg.f64("mc.t", 0.25))?;
    let source = point(ctx.cfg, "mc.source", p.dim_x(), 1.0)?;
    let n_paths = config_err(ctx.cfg.usize("mc.paths", 1_000_000))?;
    let mut paths = PathConfig::for_horizon(t, n_paths, ctx.seed);
    paths.dt = config_err(ctx.cfg.f64("mc.dt", paths.dt))?;
    paths.chunk = config_err(ctx.cfg.usize("mc.chunk", paths.chunk))?;
    paths.reflection = match config_err(ctx.cfg.choice("mc.reflection", "reflect", &["reflect", "exact"]))?.as_str() {
        "exact" => Reflection::ExactBessel,
        _ => Reflection::ReflectAtZero,
    };
    let min_hits = config_err(ctx.cfg.u64("mc.min_hits", 10_000))?;
    let bins = config_err((|| {
        let n_x = ctx.cfg.usize("mc.n_x", (g.n_x() / 2).max(1))?;
        let n_y = ctx.cfg.usize("mc.n_y", (g.n_y() / 4).max(1))?;
        Ok(build_grid(&p, g.x_extent(), g.y_extent(), n_x, n_y)?)
    })())?;
    let bins = Arc::new(bins);
    let src_cell = g.point(g.locate(&source).context("source outside grid")?);
    let row = numerical_kernel_row(t, &src_cell, &p, g.clone(), &sc)?
        .coarsen(bins.clone())
        .map_err(|err| ConfigError(format!("mc.n_x/mc.n_y must divide grid.n_x/grid.n_y: {err}")))?;
    let hist = simulate_density(&src_cell, t, &p, &paths, bins.clone())?;
    let cmp = compare_histogram(&hist, &row, min_hits)?;
    let g = bins;
    let rows: Vec<Vec<f64>> = (0..g.len())
        .map(|i| {
            let z = g.point(i);
            let mut r = z.x.clone();
            r.extend([z.y, hist.density[i], row.values[i], hist.counts[i] as f64]);
            r
        })
        .collect();
    let mut header: Vec<String> = (1..=p.dim_x()).map(|k| format!("x{k}")).collect();
    header.extend(["y", "density", "solver", "hits"].map(String::from));
    let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    ctx.out.write("mc_density.csv", csv_table(&h, &rows).as_bytes())?;
    ctx.out.write_json(
        "mc.json",
        &json!({"comparison": cmp, "paths": paths, "mass_in_window": hist.mass(), "mass_std_error": hist.mass_std_error()}),
    )?;
    if cmp.cells_compared < 10 {
        ctx.warn(format!("only {} cells reached {min_hits} hits", cmp.cells_compared));
    }
    if cmp.cells_compared == 0 {
        bail!("no cell reached {min_hits} hits; raise mc.paths or lower mc.min_hits");
    }
    ctx.check(
        "well_populated_7pct",
        cmp.max_rel_deviation <= 0.07,
        format!("max relative deviation {} over {} cells", fmt_f64(cmp.max_rel_deviation), cmp.cells_compared),
    );
    Ok(())
}
