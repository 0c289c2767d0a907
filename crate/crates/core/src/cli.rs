//! Batch entry points: `solve`, `verify`, `mms`, `decay`, each driven by one
//! TOML config.
//!
//! Exit codes: 0 success, 1 scientific failure, 2 usage or validation error.
//! Outputs carry no timings or host details, so reruns are byte-identical.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{Resolved, RunConfig};
use crate::error::Error;
use crate::fields::{fit_decay, reconstruct, DecayQuantity, DecayReport, UnitsLedger};
use crate::geometry::End;
use crate::grid::{self, GridField, GridSummary, StripGrid};
use crate::oracle::{self, Isometry, Study};
use crate::singular::Vortex;
use crate::solver::{newton_run, FieldSolution, Problem, SolveStatus};
use crate::verify::{diagnose, Check, Diagnostics};

/// Worker-count override; unset means one worker per core.
pub const WORKERS_ENV: &str = "CYLVORTEX_WORKERS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cylvortex", version, about = "Self-dual Chern-Simons vortices on asymptotically flat cylinders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve and write fields, convergence log and summary.
    Solve { config: PathBuf },
    /// Solve and run the invariant suite.
    Verify { config: PathBuf },
    /// Manufactured-solution convergence study.
    Mms { config: PathBuf },
    /// Solve and fit the exponential tails on both ends.
    Decay { config: PathBuf },
}

/// A run that stopped early.
#[derive(Debug)]
struct Stop {
    code: i32,
    message: String,
}

fn usage(e: impl std::fmt::Display) -> Stop {
    Stop {
        code: EXIT_USAGE,
        message: e.to_string(),
    }
}

fn failure(e: impl std::fmt::Display) -> Stop {
    Stop {
        code: EXIT_FAILURE,
        message: e.to_string(),
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> Stop {
    failure(format!("cannot write {}: {e}", path.display()))
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let workers = match workers_from_env() {
        Ok(w) => w,
        Err(stop) => {
            eprintln!("error: {}", stop.message);
            return stop.code;
        }
    };
    let result = grid::with_workers(workers, || match &cli.command {
        Command::Solve { config } => cmd_solve(config),
        Command::Verify { config } => cmd_verify(config),
        Command::Mms { config } => cmd_mms(config),
        Command::Decay { config } => cmd_decay(config),
    });
    match result {
        Ok(code) => code,
        Err(stop) => {
            eprintln!("error: {}", stop.message);
            stop.code
        }
    }
}

fn workers_from_env() -> Result<Option<usize>, Stop> {
    match std::env::var(WORKERS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(usage(format!("{WORKERS_ENV} must be a positive integer, got {s:?}"))),
        },
        Err(e) => Err(usage(format!("{WORKERS_ENV}: {e}"))),
    }
}

/// Load, validate and build the problem; every failure here is exit 2.
fn setup(path: &Path) -> Result<(Resolved, Problem, PathBuf), Stop> {
    let config = RunConfig::load(path).map_err(usage)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolved = config.resolve(&base).map_err(usage)?;
    let problem = Problem::new(
        resolved.grid,
        resolved.metric.clone(),
        &resolved.vortices,
        resolved.config.problem,
    )
    .map_err(usage)?;
    let out = base.join(&resolved.config.outputs.out_dir);
    fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
    let marker = out.join("failed");
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| io(&marker, e))?;
    }
    Ok((resolved, problem, out))
}

fn write(path: &Path, text: &str) -> Result<(), Stop> {
    fs::write(path, text).map_err(|e| io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Stop> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io(path, e))?;
    text.push('\n');
    write(path, &text)
}

fn write_field(out: &Path, name: &str, grid: &StripGrid, f: &GridField) -> Result<(), Stop> {
    let path = out.join(name);
    let file = fs::File::create(&path).map_err(|e| io(&path, e))?;
    grid::write_field_csv(std::io::BufWriter::new(file), grid, f).map_err(|e| io(&path, e))
}

fn mark_failed(out: &Path, reason: &str) -> Result<(), Stop> {
    write(&out.join("failed"), &format!("{reason}\n"))
}

#[derive(Debug, Serialize)]
struct MetricInfo {
    t_flat: f64,
    alpha: f64,
    end_start_plus: f64,
    end_start_minus: f64,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    command: &'a str,
    status: Option<SolveStatus>,
    error: Option<String>,
    config: &'a RunConfig,
    grid: GridSummary,
    metric: MetricInfo,
    /// Centres after snapping to cell centres.
    vortices: &'a [Vortex],
    epsilon1: f64,
    vortex_number: u32,
    iterations: Option<usize>,
    residual_inf: Option<f64>,
    threshold: Option<f64>,
    energy_trace: Option<&'a [f64]>,
    flux: Option<f64>,
    energy: Option<f64>,
    decay: Option<&'a [DecayReport]>,
    invariants: Option<&'a [Check]>,
    warnings: &'a [String],
}

struct Solved {
    resolved: Resolved,
    problem: Problem,
    out: PathBuf,
    solution: FieldSolution,
    diagnostics: Diagnostics,
}

fn summary<'a>(
    command: &'a str,
    resolved: &'a Resolved,
    problem: &'a Problem,
    solution: Option<&'a FieldSolution>,
    diagnostics: Option<&'a Diagnostics>,
    error: Option<String>,
) -> Summary<'a> {
    let m = &problem.metric;
    Summary {
        command,
        status: solution.map(|s| s.status),
        error,
        config: &resolved.config,
        grid: problem.grid.summary(),
        metric: MetricInfo {
            t_flat: m.t_flat,
            alpha: m.alpha,
            end_start_plus: m.end_start(End::Plus),
            end_start_minus: m.end_start(End::Minus),
        },
        vortices: problem.vortices.centers(),
        epsilon1: problem.singular.epsilon1,
        vortex_number: problem.vortex_number(),
        iterations: solution.map(|s| s.iterations),
        residual_inf: solution.map(|s| s.residual_inf),
        threshold: solution.map(|s| s.threshold),
        energy_trace: solution.map(|s| s.energy_trace.as_slice()),
        flux: diagnostics.map(|d| d.flux),
        energy: diagnostics.map(|d| d.energy),
        decay: diagnostics.map(|d| d.decay.as_slice()),
        invariants: diagnostics.map(|d| d.checks.as_slice()),
        warnings: &problem.warnings,
    }
}

/// Shared front half of `solve`, `verify` and `decay`: solve, dump, log and
/// summarize. A failed solve leaves partial artifacts and a `failed` marker.
fn solve_stage(command: &str, path: &Path) -> Result<Solved, Stop> {
    let (resolved, problem, out) = setup(path)?;
    for w in &problem.warnings {
        eprintln!("warning: {w}");
    }
    let cfg = &resolved.config;
    let solution = match newton_run(&problem, &cfg.solver, None) {
        Ok(s) => s,
        Err(e) => {
            let reason = e.to_string();
            write_json(
                &out.join("summary.json"),
                &summary(command, &resolved, &problem, None, None, Some(reason.clone())),
            )?;
            mark_failed(&out, &reason)?;
            return Err(failure(reason));
        }
    };
    let mut log = solution.log_lines().join("\n");
    log.push('\n');
    write(&out.join("convergence.log"), &log)?;
    write_json(&out.join("grid.json"), &problem.grid.summary())?;
    if cfg.outputs.dump_fields {
        write_field(&out, "w.csv", &problem.grid, &solution.w)?;
        write_field(&out, "u.csv", &problem.grid, &solution.u)?;
        write_field(&out, "ubar.csv", &problem.grid, &problem.ubar)?;
    }
    if !solution.converged() {
        let reason = format!(
            "solver stopped ({:?}) after {} steps with residual_inf {:.3e} (threshold {:.3e})",
            solution.status, solution.iterations, solution.residual_inf, solution.threshold
        );
        write_json(
            &out.join("summary.json"),
            &summary(command, &resolved, &problem, Some(&solution), None, Some(reason.clone())),
        )?;
        mark_failed(&out, &reason)?;
        return Err(failure(reason));
    }
    let units = UnitsLedger::new(cfg.sign);
    let (_, diagnostics) = diagnose(&problem, &solution, &units, &cfg.decay, &cfg.verify).map_err(failure)?;
    write_json(
        &out.join("summary.json"),
        &summary(command, &resolved, &problem, Some(&solution), Some(&diagnostics), None),
    )?;
    Ok(Solved {
        resolved,
        problem,
        out,
        solution,
        diagnostics,
    })
}

fn cmd_solve(path: &Path) -> Result<i32, Stop> {
    let s = solve_stage("solve", path)?;
    println!(
        "converged in {} steps: residual_inf {:.3e}, flux {:.9}, energy {:.9}",
        s.solution.iterations, s.solution.residual_inf, s.diagnostics.flux, s.diagnostics.energy
    );
    Ok(EXIT_OK)
}

/// Solve the image configuration under `iso` and compare node by node.
fn paired(s: &Solved, iso: Isometry) -> Result<Check, Stop> {
    let p = &s.problem;
    let name = match iso {
        Isometry::ThetaShift(_) => "symmetry_theta_shift",
        _ => "symmetry_t_reflection",
    };
    let image = iso.map_vortices(&p.vortices, &p.metric).map_err(failure)?;
    let q = Problem::new(p.grid, p.metric.clone(), &image, p.options).map_err(failure)?;
    let other = newton_run(&q, &s.resolved.config.solver, None).map_err(failure)?;
    let descent = other.energy_trace.windows(2).all(|w| w[1] <= w[0]);
    if !other.converged() {
        return Ok(Check::new(name, false, format!("image solve stopped ({:?})", other.status)));
    }
    let dev = oracle::symmetry_check(&p.grid, &p.metric, &s.solution.w, &other.w, iso).map_err(failure)?;
    let tol = s.resolved.config.verify.symmetry_tol;
    Ok(Check::new(
        name,
        dev < tol && descent,
        format!(
            "max |w − w∘ι| = {dev:.3e} (tol {tol:e}); image solve energy {}",
            if descent { "nonincreasing" } else { "increased" }
        ),
    ))
}

fn cmd_verify(path: &Path) -> Result<i32, Stop> {
    let mut s = match solve_stage("verify", path) {
        Ok(s) => s,
        Err(stop) if stop.code == EXIT_FAILURE => {
            eprintln!("invariant failed: converged");
            return Err(stop);
        }
        Err(stop) => return Err(stop),
    };
    let cfg = s.resolved.config.clone();
    let mut extra = Vec::new();
    if cfg.verify.symmetry && s.problem.vortex_number() > 0 {
        let g = &s.problem.grid;
        if g.n_theta % 2 == 0 {
            extra.push(paired(&s, Isometry::ThetaShift(std::f64::consts::PI))?);
        } else {
            eprintln!("note: odd n_theta, θ-shift by π is not a grid permutation; skipped");
        }
        // A self-comparison is free and tells whether t ↦ −t is an isometry.
        match oracle::symmetry_check(g, &s.problem.metric, &s.solution.w, &s.solution.w, Isometry::TReflection) {
            Ok(_) => extra.push(paired(&s, Isometry::TReflection)?),
            Err(Error::Isometry(why)) => eprintln!("note: t-reflection skipped: {why}"),
            Err(e) => return Err(failure(e)),
        }
    }
    s.diagnostics.checks.extend(extra);
    let resolved = &s.resolved;
    write_json(
        &s.out.join("summary.json"),
        &summary("verify", resolved, &s.problem, Some(&s.solution), Some(&s.diagnostics), None),
    )?;
    #[derive(Serialize)]
    struct Report<'a> {
        pass: bool,
        config: &'a RunConfig,
        invariants: &'a [Check],
    }
    let pass = s.diagnostics.all_pass();
    write_json(
        &s.out.join("report.json"),
        &Report {
            pass,
            config: &resolved.config,
            invariants: &s.diagnostics.checks,
        },
    )?;
    for c in &s.diagnostics.checks {
        println!("{} {}: {}", if c.pass { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    if pass {
        Ok(EXIT_OK)
    } else {
        let failing = s.diagnostics.failing().join(", ");
        mark_failed(&s.out, &format!("invariants failed: {failing}"))?;
        eprintln!("invariant failed: {failing}");
        Ok(EXIT_FAILURE)
    }
}

fn cmd_mms(path: &Path) -> Result<i32, Stop> {
    let config = RunConfig::load(path).map_err(usage)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolved = config.resolve(&base).map_err(usage)?;
    let cfg = &resolved.config;
    let case = oracle::named_case(&cfg.mms.case).map_err(usage)?;
    let band = cfg.mms.order_band;
    if !(band[0] < band[1]) {
        return Err(usage(format!("mms.order_band must be increasing, got {band:?}")));
    }
    let grids = cfg
        .mms
        .grids
        .iter()
        .map(|&[n_t, n_theta]| StripGrid::new(cfg.grid.half_length, n_t, n_theta))
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    oracle::check_chain(&grids).map_err(usage)?;
    let out = base.join(&cfg.outputs.out_dir);
    fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
    let study: Study = oracle::convergence_study(&case, &resolved.metric, &grids, cfg.problem, &cfg.solver)
        .map_err(|e| match e {
            Error::Vortex(_) | Error::Grid(_) | Error::Study(_) => usage(e),
            e => failure(e),
        })?;
    let pass = study.passes(band);
    write(&out.join("mms.csv"), &study.to_csv())?;
    #[derive(Serialize)]
    struct MmsSummary<'a> {
        pass: bool,
        exact: bool,
        order_band: [f64; 2],
        config: &'a RunConfig,
        study: &'a Study,
    }
    write_json(
        &out.join("mms.json"),
        &MmsSummary {
            pass,
            exact: study.is_exact(),
            order_band: band,
            config: cfg,
            study: &study,
        },
    )?;
    print!("{}", study.to_csv());
    if pass {
        println!("pass: {}", if study.is_exact() { "exact on every grid" } else { "orders within band" });
        Ok(EXIT_OK)
    } else {
        println!("FAIL: observed orders outside [{}, {}]", band[0], band[1]);
        Ok(EXIT_FAILURE)
    }
}

fn cmd_decay(path: &Path) -> Result<i32, Stop> {
    let s = solve_stage("decay", path)?;
    let cfg = &s.resolved.config;
    let units = UnitsLedger::new(cfg.sign);
    let fields = reconstruct(&s.solution, &s.problem, &units).map_err(failure)?;
    let mut reports = Vec::new();
    let mut problems = Vec::new();
    for end in End::BOTH {
        for q in [DecayQuantity::W, DecayQuantity::GradW] {
            match fit_decay(&s.problem, &fields, &s.solution.w, end, q, None, &cfg.decay) {
                Ok(r) => {
                    if !(r.b_fit > cfg.verify.min_rate) {
                        problems.push(format!(
                            "{} end, {q:?}: rate {:.4} does not exceed {}",
                            end.name(),
                            r.b_fit,
                            cfg.verify.min_rate
                        ));
                    }
                    if r.truncated {
                        problems.push(format!(
                            "{} end, {q:?}: the tail never reached the floor {:e} before T − 1; \
                             the strip is too short for the asymptotic regime, lengthen T",
                            end.name(),
                            cfg.decay.floor
                        ));
                    }
                    reports.push(r);
                }
                Err(e) => problems.push(format!(
                    "{} end, {q:?}: {e}; shrink the window (raise decay.floor or lower decay.r_min / decay.min_points) or lengthen T",
                    end.name()
                )),
            }
        }
    }
    #[derive(Serialize)]
    struct DecaySummary<'a> {
        pass: bool,
        config: &'a RunConfig,
        reports: &'a [DecayReport],
        problems: &'a [String],
    }
    let pass = problems.is_empty();
    write_json(
        &s.out.join("decay.json"),
        &DecaySummary {
            pass,
            config: cfg,
            reports: &reports,
            problems: &problems,
        },
    )?;
    for r in &reports {
        println!(
            "{} {:?}: b {:.4}, a {:.4e}, r² {:.5}, window |t| ∈ [{:.3}, {:.3}] ({} rows)",
            r.end.name(),
            r.quantity,
            r.b_fit,
            r.a_fit,
            r.r_squared,
            r.window[0],
            r.window[1],
            r.points
        );
    }
    if pass {
        Ok(EXIT_OK)
    } else {
        for p in &problems {
            eprintln!("decay: {p}");
        }
        mark_failed(&s.out, &problems.join("\n"))?;
        Ok(EXIT_FAILURE)
    }
}
