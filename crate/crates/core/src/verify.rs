//! Invariant suite run on a solved configuration.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config::VerifyConfig;
use crate::error::Result;
use crate::fields::{
    fit_decay, reconstruct, total_energy, total_flux, DecayOptions, DecayQuantity, DecayReport,
    PhysicalFields, UnitsLedger,
};
use crate::geometry::End;
use crate::grid::GridField;
use crate::solver::{FieldSolution, Problem};

/// `|w|` at or below this is indistinguishable from zero after a converged
/// solve (far-field values are round-off around the Dirichlet data).
pub const ROUNDOFF: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativityReport {
    /// Nodes outside vortex cells with `w ≥ 0`.
    pub nonnegative: usize,
    /// Of those, nodes on rows where `w` is resolvable above round-off.
    pub resolvable_violations: usize,
    pub max_w: f64,
}

/// Nodes of the cells that hold a vortex centre.
fn vortex_cell_nodes(problem: &Problem) -> Vec<(usize, usize)> {
    let g = &problem.grid;
    let mut out = Vec::new();
    for v in problem.vortices.centers() {
        let i = ((v.at.t + g.half_length) / g.dt).floor() as usize;
        let j = (v.at.theta / g.dtheta).floor() as usize;
        for (a, b) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            out.push(((i + a).min(g.n_t - 1), (j + b) % g.n_theta));
        }
    }
    out
}

/// Strict negativity of `w` off the vortex cells, demanded on every row whose
/// largest `|w|` is above round-off; on the remaining rows `|w|` must stay at
/// round-off.
pub fn negativity(problem: &Problem, w: &GridField) -> NegativityReport {
    let g = &problem.grid;
    let skip = vortex_cell_nodes(problem);
    let mut nonnegative = 0;
    let mut resolvable_violations = 0;
    let mut max_w = f64::NEG_INFINITY;
    for i in 0..g.n_t {
        let row_scale = w.row(i).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        for j in 0..g.n_theta {
            if skip.contains(&(i, j)) {
                continue;
            }
            let x = w.get(i, j);
            max_w = max_w.max(x);
            if x >= 0.0 {
                nonnegative += 1;
                if row_scale > ROUNDOFF || x > ROUNDOFF {
                    resolvable_violations += 1;
                }
            }
        }
    }
    NegativityReport {
        nonnegative,
        resolvable_violations,
        max_w,
    }
}

/// Largest `|w| / (a_bound e^{-b r_e})` over the fit window.
pub fn envelope_ratio(problem: &Problem, w: &GridField, report: &DecayReport) -> Result<f64> {
    let g = &problem.grid;
    let mut worst = 0.0_f64;
    for i in 0..g.n_t {
        let t = g.t(i);
        let on_end = match report.end {
            End::Plus => t >= report.window[0] - 1e-12 && t <= report.window[1] + 1e-12,
            End::Minus => -t >= report.window[0] - 1e-12 && -t <= report.window[1] + 1e-12,
        };
        if !on_end {
            continue;
        }
        let r = problem.metric.end_radius_on(t, report.end)?;
        let bound = report.a_bound * (-report.b_fit * r).exp();
        for &x in w.row(i) {
            worst = worst.max(x.abs() / bound);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub vortex_number: u32,
    pub flux: f64,
    pub energy: f64,
    pub residual_inf: f64,
    pub decay: Vec<DecayReport>,
    pub decay_errors: Vec<String>,
    pub negativity: NegativityReport,
    pub checks: Vec<Check>,
}

impl Diagnostics {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }
}

/// Flux, energy, decay fits and the pointwise invariants of a converged
/// solve. Symmetry pairs need extra solves and are added by the caller.
pub fn diagnose(
    problem: &Problem,
    solution: &FieldSolution,
    units: &UnitsLedger,
    decay: &DecayOptions,
    tol: &VerifyConfig,
) -> Result<(PhysicalFields, Diagnostics)> {
    let fields = reconstruct(solution, problem, units)?;
    let n = problem.vortex_number();
    let flux = total_flux(&fields, problem)?;
    let energy = total_energy(&fields, problem)?;
    let quantum = 2.0 * PI * n as f64;
    let mut checks = Vec::new();

    checks.push(Check::new(
        "converged",
        solution.converged(),
        format!("residual_inf {:.3e} vs {:.3e}", solution.residual_inf, solution.threshold),
    ));
    let rises = solution.energy_trace.windows(2).filter(|w| w[1] > w[0]).count();
    checks.push(Check::new(
        "energy_descent",
        rises == 0,
        format!("{} accepted steps, {rises} increases", solution.energy_trace.len() - 1),
    ));
    if n == 0 {
        checks.push(Check::new("flux", flux == 0.0, format!("flux {flux:e}")));
        checks.push(Check::new("energy", energy == 0.0, format!("energy {energy:e}")));
    } else {
        let fe = (flux.abs() - quantum).abs() / quantum;
        checks.push(Check::new(
            "flux",
            fe < tol.flux_tol,
            format!("flux {flux:.10} vs -sign 2πN = {:.10} (rel {fe:.3e})", -units.sign * quantum),
        ));
        let ee = (energy - quantum).abs() / quantum;
        checks.push(Check::new(
            "energy",
            ee < tol.energy_tol,
            format!("energy {energy:.10} vs 2πN (rel {ee:.3e}); energy − |flux| = {:.3e}", energy - flux.abs()),
        ));
    }
    let sign = units.sign;
    let ledger_bad = (0..problem.grid.len())
        .filter(|&k| sign * fields.ftilde12.values[k] > ROUNDOFF || sign * fields.a0.values[k] < -ROUNDOFF)
        .count();
    let t00_bad = fields.t00.values.iter().filter(|&&x| x < 0.0).count();
    checks.push(Check::new(
        "sign_ledger",
        ledger_bad == 0 && t00_bad == 0,
        format!("{ledger_bad} nodes with sign·F̃ > 0 or sign·A₀ < 0 beyond round-off, {t00_bad} with T₀₀ < 0"),
    ));
    let neg = negativity(problem, &solution.w);
    checks.push(Check::new(
        "negativity",
        neg.resolvable_violations == 0,
        format!(
            "{} nodes with w ≥ 0 outside vortex cells, {} where w is resolvable; max w {:.3e}",
            neg.nonnegative, neg.resolvable_violations, neg.max_w
        ),
    ));

    let mut reports = Vec::new();
    let mut errors = Vec::new();
    if n > 0 {
        for end in End::BOTH {
            for q in [DecayQuantity::W, DecayQuantity::GradW] {
                match fit_decay(problem, &fields, &solution.w, end, q, None, decay) {
                    Ok(r) => reports.push(r),
                    Err(e) => errors.push(format!("{} end, {q:?}: {e}", end.name())),
                }
            }
        }
        let mut detail = Vec::new();
        let mut ok = errors.is_empty();
        for r in &reports {
            let good = r.b_fit > tol.min_rate && r.r_squared > tol.min_r_squared && !r.truncated;
            ok &= good;
            detail.push(format!(
                "{} {:?}: b {:.4} r² {:.5} window [{:.3}, {:.3}]{}",
                r.end.name(),
                r.quantity,
                r.b_fit,
                r.r_squared,
                r.window[0],
                r.window[1],
                if r.truncated { " truncated at T − 1: lengthen the strip" } else { "" }
            ));
        }
        detail.extend(errors.iter().cloned());
        checks.push(Check::new("decay", ok, detail.join("; ")));
        let mut worst = 0.0_f64;
        for r in reports.iter().filter(|r| r.quantity == DecayQuantity::W) {
            worst = worst.max(envelope_ratio(problem, &solution.w, r)?);
        }
        checks.push(Check::new(
            "envelope",
            errors.is_empty() && worst <= 1.0 + 1e-12,
            format!("max |w| / (a e^(-b r_e)) on the fit windows = {worst:.6}"),
        ));
    }
    Ok((
        fields,
        Diagnostics {
            vortex_number: n,
            flux,
            energy,
            residual_inf: solution.residual_inf,
            decay: reports,
            decay_errors: errors,
            negativity: neg,
            checks,
        },
    ))
}
