use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::krylov::{bicgstab, KrylovOptions};
use super::problem::{energy, energy_change, linear_coefficient, residual, Problem};
use crate::error::{Error, Result};
use crate::grid::{self, GridField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Converged when `‖F‖∞ ≤ tol_residual_inf · (1 + ‖h‖∞)`.
    pub tol_residual_inf: f64,
    pub max_newton: usize,
    pub max_linesearch_halvings: usize,
    pub krylov: KrylovOptions,
    pub fallback_descent_steps: usize,
    /// Sufficient-decrease constant on `Σ F²`.
    pub armijo: f64,
    /// Steps that push `max u` above this are rejected.
    pub max_u: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_residual_inf: 1e-10,
            max_newton: 60,
            max_linesearch_halvings: 30,
            krylov: KrylovOptions::default(),
            fallback_descent_steps: 200,
            armijo: 1e-4,
            max_u: 50.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol_residual_inf > 0.0
            && self.max_newton > 0
            && self.max_linesearch_halvings > 0
            && self.krylov.tol > 0.0
            && self.krylov.max_iter > 0
            && self.fallback_descent_steps > 0
            && self.armijo > 0.0
            && self.armijo < 0.5
            && self.max_u > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("solver options must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Newton,
    Descent,
}

/// One accepted step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iteration: usize,
    pub kind: StepKind,
    pub residual_inf: f64,
    pub energy: f64,
    pub step_length: f64,
    pub krylov_iterations: usize,
}

impl fmt::Display for StepLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            StepKind::Newton => "newton",
            StepKind::Descent => "descent",
        };
        write!(
            f,
            "step {:>3} {:<7} residual_inf {:.6e} energy {:.12e} step {:.6e} krylov {}",
            self.iteration, kind, self.residual_inf, self.energy, self.step_length, self.krylov_iterations
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxNewton,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub u: GridField,
    pub w: GridField,
    pub residual_inf: f64,
    /// The threshold `residual_inf` was tested against.
    pub threshold: f64,
    pub iterations: usize,
    /// `E(u)` before the first step and after every accepted step.
    pub energy_trace: Vec<f64>,
    pub log: Vec<StepLog>,
    pub status: SolveStatus,
    pub notes: Vec<String>,
}

impl FieldSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn log_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = Vec::new();
        lines.extend(self.log.iter().map(|s| s.to_string()));
        lines.extend(self.notes.iter().map(|n| format!("note {n}")));
        lines.push(format!(
            "status {:?} residual_inf {:.6e} threshold {:.6e} iterations {}",
            self.status, self.residual_inf, self.threshold, self.iterations
        ));
        lines
    }
}

fn sum_sq(f: &GridField) -> f64 {
    grid::dot(f, f)
}

fn interior_mask(problem: &Problem, f: GridField) -> GridField {
    let mut f = f;
    let (n, nt) = (problem.grid.n_theta, problem.grid.n_t);
    f.values[..n].iter_mut().for_each(|x| *x = 0.0);
    f.values[(nt - 1) * n..].iter_mut().for_each(|x| *x = 0.0);
    f
}

/// Jacobi diagonal of `Δ₀ʰ − λ c` (negative everywhere since `c ≥ −1/8`
/// pulls it at most by `λ/8`, far below the stencil diagonal on any usable
/// grid; guarded anyway).
fn scaled_system(problem: &Problem, u: &GridField) -> (GridField, GridField) {
    let g = &problem.grid;
    let lc = linear_coefficient(problem, u).zip_map(&problem.lambda, |c, l| c * l);
    let stencil = -2.0 / (g.dt * g.dt) - 2.0 / (g.dtheta * g.dtheta);
    let inv = GridField::from_fn(g, |i, j| {
        if i == 0 || i + 1 == g.n_t {
            return 0.0;
        }
        let d = stencil - lc.get(i, j);
        if d.abs() < 1e-3 * stencil.abs() {
            1.0 / stencil
        } else {
            1.0 / d
        }
    });
    (lc, inv)
}

fn apply_scaled(problem: &Problem, lc: &GridField, v: &GridField) -> GridField {
    let g = &problem.grid;
    let mut out = grid::laplacian_chart(g, v).expect("shape checked");
    let (n, nt) = (g.n_theta, g.n_t);
    out.values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        if i == 0 || i + 1 == nt {
            return;
        }
        for (j, x) in row.iter_mut().enumerate() {
            let k = i * n + j;
            *x -= lc.values[k] * v.values[k];
        }
    });
    out
}

struct State {
    u: GridField,
    f: GridField,
    merit: f64,
    energy: f64,
}

impl State {
    fn residual_inf(&self) -> f64 {
        self.f.max_abs()
    }
}

enum Attempt {
    Accepted { step: f64 },
    Rejected(String),
}

/// Backtracking on `d`: accept the first `s = 2^{-k}` with sufficient
/// decrease of `Σ F²`, `max u ≤ max_u` and `E` not increasing.
fn line_search(
    problem: &Problem,
    opts: &SolverOptions,
    state: &mut State,
    d: &GridField,
    need_merit: bool,
) -> Result<Attempt> {
    let mut step = 1.0;
    for _ in 0..=opts.max_linesearch_halvings {
        let trial_d = d.map(|x| step * x);
        let trial = state.u.zip_map(&trial_d, |a, b| a + b);
        if trial.max() <= opts.max_u && trial.max_abs().is_finite() {
            let f = residual(problem, &trial)?;
            let merit = sum_sq(&f);
            let merit_ok = !need_merit || merit <= (1.0 - 2.0 * opts.armijo * step) * state.merit;
            if merit_ok {
                let de = energy_change(problem, &state.u, &trial_d)?;
                if de <= 0.0 {
                    state.u = trial;
                    state.f = f;
                    state.merit = merit;
                    state.energy += de;
                    return Ok(Attempt::Accepted { step });
                }
            }
        }
        step *= 0.5;
    }
    Ok(Attempt::Rejected(format!(
        "line search exhausted {} halvings",
        opts.max_linesearch_halvings
    )))
}

/// Damped Newton from `init` (zero when `None`). Never fails on
/// non-convergence; the status says what happened.
pub fn newton_run(problem: &Problem, options: &SolverOptions, init: Option<&GridField>) -> Result<FieldSolution> {
    options.validate()?;
    let grid = &problem.grid;
    let u0 = match init {
        Some(u) => {
            u.check_shape(grid)?;
            u.check_finite()?;
            interior_mask(problem, u.clone())
        }
        None => problem.zeros(),
    };
    let f0 = residual(problem, &u0)?;
    let mut state = State {
        merit: sum_sq(&f0),
        f: f0,
        energy: energy(problem, &u0)?,
        u: u0,
    };
    let threshold = options.tol_residual_inf * (1.0 + problem.h_src.max_abs());
    let mut trace = vec![state.energy];
    let mut log = Vec::new();
    let mut notes = Vec::new();
    let mut fallback_used = false;
    let mut iterations = 0;
    let mut status = SolveStatus::MaxNewton;

    while iterations < options.max_newton {
        if state.residual_inf() <= threshold {
            status = SolveStatus::Converged;
            break;
        }
        iterations += 1;
        let (lc, inv) = scaled_system(problem, &state.u);
        let rhs = state.f.zip_map(&problem.lambda, |f, l| -f * l);
        let rhs = interior_mask(problem, rhs);
        let kry = bicgstab(|v| apply_scaled(problem, &lc, v), &inv, &rhs, &options.krylov);
        let usable = kry.x.max_abs().is_finite() && (kry.converged || kry.relative_residual < 0.5);
        let attempt = if usable {
            line_search(problem, options, &mut state, &kry.x, true)?
        } else {
            Attempt::Rejected(format!(
                "krylov {} after {} iterations (relative residual {:.3e})",
                if kry.breakdown { "breakdown" } else { "stagnation" },
                kry.iterations,
                kry.relative_residual
            ))
        };
        match attempt {
            Attempt::Accepted { step } => {
                trace.push(state.energy);
                log.push(StepLog {
                    iteration: iterations,
                    kind: StepKind::Newton,
                    residual_inf: state.residual_inf(),
                    energy: state.energy,
                    step_length: step,
                    krylov_iterations: kry.iterations,
                });
            }
            Attempt::Rejected(reason) => {
                notes.push(format!("newton step {iterations}: {reason}"));
                if fallback_used {
                    status = SolveStatus::Stalled;
                    break;
                }
                fallback_used = true;
                descent(problem, options, &mut state, iterations, &mut trace, &mut log)?;
            }
        }
    }
    if status == SolveStatus::MaxNewton && state.residual_inf() <= threshold {
        status = SolveStatus::Converged;
    }
    let w = problem.ubar.zip_map(&state.u, |a, b| a + b);
    Ok(FieldSolution {
        residual_inf: state.residual_inf(),
        threshold,
        iterations,
        energy_trace: trace,
        log,
        status,
        notes,
        w,
        u: state.u,
    })
}

/// Preconditioned steepest descent on `E`: direction `λ F / |diag|`, which
/// is a positive multiple of `−∇E` node by node.
fn descent(
    problem: &Problem,
    options: &SolverOptions,
    state: &mut State,
    iteration: usize,
    trace: &mut Vec<f64>,
    log: &mut Vec<StepLog>,
) -> Result<()> {
    for _ in 0..options.fallback_descent_steps {
        let (_, inv) = scaled_system(problem, &state.u);
        let d = GridField {
            n_t: state.f.n_t,
            n_theta: state.f.n_theta,
            values: state
                .f
                .values
                .iter()
                .zip(&problem.lambda.values)
                .zip(&inv.values)
                .map(|((f, l), m)| f * l * m.abs())
                .collect(),
        };
        let d = interior_mask(problem, d);
        if d.max_abs() == 0.0 {
            break;
        }
        match line_search(problem, options, state, &d, false)? {
            Attempt::Accepted { step } => {
                trace.push(state.energy);
                log.push(StepLog {
                    iteration,
                    kind: StepKind::Descent,
                    residual_inf: state.residual_inf(),
                    energy: state.energy,
                    step_length: step,
                    krylov_iterations: 0,
                });
            }
            Attempt::Rejected(_) => break,
        }
    }
    Ok(())
}

/// As [`newton_run`], but a run that does not converge is an error.
pub fn newton_solve(problem: &Problem, options: &SolverOptions, init: Option<&GridField>) -> Result<FieldSolution> {
    let sol = newton_run(problem, options, init)?;
    match sol.status {
        SolveStatus::Converged => Ok(sol),
        SolveStatus::MaxNewton => Err(Error::SolverFailed {
            iterations: sol.iterations,
            residual: sol.residual_inf,
            reason: "maximum Newton iterations reached".into(),
        }),
        SolveStatus::Stalled => Err(Error::SolverFailed {
            iterations: sol.iterations,
            residual: sol.residual_inf,
            reason: sol.notes.last().cloned().unwrap_or_default(),
        }),
    }
}
