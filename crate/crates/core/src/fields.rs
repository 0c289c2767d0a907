//! Physical observables rebuilt from a converged `w`, and their diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::End;
use crate::grid::{self, GridField};
use crate::solver::{FieldSolution, Problem};

/// Bogomolnyi branch. `Upper` is the sign `+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    #[default]
    Upper,
    Lower,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Upper => 1.0,
            Branch::Lower => -1.0,
        }
    }
}

/// Frozen units: `e = v = 1`, `κ = 2 e² v²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitsLedger {
    pub e: f64,
    pub v: f64,
    pub kappa: f64,
    pub sign: f64,
}

impl UnitsLedger {
    pub fn new(branch: Branch) -> Self {
        Self {
            e: 1.0,
            v: 1.0,
            kappa: 2.0,
            sign: branch.sign(),
        }
    }
}

impl Default for UnitsLedger {
    fn default() -> Self {
        Self::new(Branch::Upper)
    }
}

#[derive(Debug, Clone)]
pub struct PhysicalFields {
    /// `|φ|² = e^w`
    pub phi_sq: GridField,
    pub ftilde12: GridField,
    pub a0: GridField,
    /// `G^{ij} D_iφ (D_jφ)*`
    pub kinetic: GridField,
    /// `e² A₀² |φ|²`
    pub electric: GridField,
    pub potential_density: GridField,
    pub t00: GridField,
    /// `|∇w|_g = |∇₀w| / √λ`
    pub grad_w: GridField,
}

/// Chart gradient of `w`: closed form for `ū` plus sixth-order differences of `u`.
pub fn grad_w_chart(problem: &Problem, u: &GridField) -> Result<(GridField, GridField)> {
    let g = &problem.grid;
    let (ut, uth) = grid::gradient_chart6(g, u)?;
    let gt = GridField::from_fn(g, |i, j| problem.singular.grad_ubar(g.node(i, j)).0 + ut.get(i, j));
    let gth = GridField::from_fn(g, |i, j| problem.singular.grad_ubar(g.node(i, j)).1 + uth.get(i, j));
    Ok((gt, gth))
}

pub fn reconstruct(solution: &FieldSolution, problem: &Problem, units: &UnitsLedger) -> Result<PhysicalFields> {
    if !solution.converged() {
        return Err(Error::NotConverged);
    }
    let w = &solution.w;
    w.check_shape(&problem.grid)?;
    let sign = units.sign;
    let phi_sq = w.map(f64::exp);
    let ftilde12 = w.map(|w| sign * 0.5 * w.exp() * w.exp_m1());
    let a0 = w.map(|w| -sign * 0.5 * w.exp_m1());
    let potential_density = w.map(|w| 0.25 * w.exp() * w.exp_m1().powi(2));
    let electric = a0.zip_map(&phi_sq, |a, p| a * a * p);
    let (gt, gth) = grad_w_chart(problem, &solution.u)?;
    let grad_sq = gt.zip_map(&gth, |a, b| a * a + b * b);
    let grad_sq = grad_sq.zip_map(&problem.lambda, |g2, l| g2 / l);
    let kinetic = grad_sq.zip_map(&phi_sq, |g2, p| 0.5 * p * g2);
    let grad_w = grad_sq.map(f64::sqrt);
    let t00 = GridField::from_fn(&problem.grid, |i, j| {
        kinetic.get(i, j) + electric.get(i, j) + potential_density.get(i, j)
    });
    Ok(PhysicalFields {
        phi_sq,
        ftilde12,
        a0,
        kinetic,
        electric,
        potential_density,
        t00,
        grad_w,
    })
}

/// `∫ F̃₁₂ dV_g`
pub fn total_flux(fields: &PhysicalFields, problem: &Problem) -> Result<f64> {
    grid::integrate(&problem.grid, &problem.lambda, &fields.ftilde12)
}

/// `∫ T₀₀ dV_g`
pub fn total_energy(fields: &PhysicalFields, problem: &Problem) -> Result<f64> {
    grid::integrate(&problem.grid, &problem.lambda, &fields.t00)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayQuantity {
    W,
    GradW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecayOptions {
    /// Smallest end radius admitted into an automatic window.
    pub r_min: f64,
    /// Rows whose worst-case `|q|` falls below this are left out.
    pub floor: f64,
    pub min_points: usize,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self {
            r_min: 4.0,
            floor: 1e-10,
            min_points: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub end: End,
    pub quantity: DecayQuantity,
    /// `|t|` range actually fitted.
    pub window: [f64; 2],
    pub points: usize,
    pub a_fit: f64,
    pub b_fit: f64,
    /// Smallest `a` with `a e^{-b_fit r_e} ≥ max_θ |q|` on the window.
    pub a_bound: f64,
    pub r_squared: f64,
    /// The requested window was cut short where `q` reached the floor.
    pub shrunk: bool,
    /// The window hit `T − 1` before `q` reached the floor.
    pub truncated: bool,
}

/// Worst case over θ of `|q|` on every row.
fn row_max(q: &GridField) -> Vec<f64> {
    (0..q.n_t)
        .map(|i| q.row(i).iter().fold(0.0_f64, |m, x| m.max(x.abs())))
        .collect()
}

/// Least-squares fit of `ln max_θ|q|` against the end radius `r_e(t)`.
///
/// `window` is in `|t|`; `None` picks rows with `r_e ≥ r_min` and
/// `|q| ≥ floor` inside `[end start, T − 1]`.
pub fn fit_decay(
    problem: &Problem,
    fields: &PhysicalFields,
    w: &GridField,
    end: End,
    quantity: DecayQuantity,
    window: Option<[f64; 2]>,
    options: &DecayOptions,
) -> Result<DecayReport> {
    let g = &problem.grid;
    let metric = &problem.metric;
    let q = match quantity {
        DecayQuantity::W => w,
        DecayQuantity::GradW => &fields.grad_w,
    };
    let peaks = row_max(q);
    let start = match end {
        End::Plus => metric.end_start(End::Plus),
        End::Minus => -metric.end_start(End::Minus),
    };
    let limit = g.half_length - 1.0;
    let (lo, hi) = match window {
        Some([a, b]) => {
            if !(a < b) || a < start - 1e-12 || b > limit + 1e-12 {
                return Err(Error::Window(format!(
                    "window [{a}, {b}] must lie inside [{start}, {limit}] on the {} end",
                    end.name()
                )));
            }
            (a, b)
        }
        None => (start, limit),
    };
    // Rows on this end ordered outward.
    let rows: Vec<usize> = match end {
        End::Plus => (0..g.n_t).filter(|&i| g.t(i) >= lo - 1e-12 && g.t(i) <= hi + 1e-12).collect(),
        End::Minus => (0..g.n_t)
            .rev()
            .filter(|&i| -g.t(i) >= lo - 1e-12 && -g.t(i) <= hi + 1e-12)
            .collect(),
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut used = Vec::new();
    let mut shrunk = false;
    for &i in &rows {
        let r = metric.end_radius_on(g.t(i), end)?;
        if window.is_none() && r < options.r_min {
            continue;
        }
        if !(peaks[i] >= options.floor) {
            shrunk = true;
            break;
        }
        xs.push(r);
        ys.push(peaks[i].ln());
        used.push(i);
    }
    if xs.len() < options.min_points {
        return Err(Error::Window(format!(
            "only {} usable rows on the {} end (floor {:e}, window [{lo}, {hi}])",
            xs.len(),
            end.name(),
            options.floor
        )));
    }
    let truncated = !shrunk && window.is_none();
    let shrunk = shrunk && window.is_some();
    let n = xs.len() as f64;
    let mx = grid::pairwise_sum(&xs) / n;
    let my = grid::pairwise_sum(&ys) / n;
    let sxx = grid::pairwise_sum_by(0, xs.len(), &|k| (xs[k] - mx).powi(2));
    let sxy = grid::pairwise_sum_by(0, xs.len(), &|k| (xs[k] - mx) * (ys[k] - my));
    let syy = grid::pairwise_sum_by(0, xs.len(), &|k| (ys[k] - my).powi(2));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = grid::pairwise_sum_by(0, xs.len(), &|k| (ys[k] - intercept - slope * xs[k]).powi(2));
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { f64::NAN };
    let excess = (0..xs.len())
        .map(|k| ys[k] - intercept - slope * xs[k])
        .fold(f64::NEG_INFINITY, f64::max);
    let t_of = |i: usize| g.t(i).abs();
    Ok(DecayReport {
        end,
        quantity,
        window: [t_of(used[0]), t_of(*used.last().expect("nonempty"))],
        points: used.len(),
        a_fit: intercept.exp(),
        b_fit: -slope,
        a_bound: (intercept + excess).exp(),
        r_squared,
        shrunk,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_metric, MetricParams, Preset, StripPoint};
    use crate::grid::StripGrid;
    use crate::singular::{Vortex, VortexSet};
    use crate::solver::{newton_solve, ProblemOptions, SolverOptions};
    use std::f64::consts::PI;

    fn solve(vortices: &[(f64, f64, u32)], half: f64, n_t: usize, n_theta: usize) -> (Problem, FieldSolution) {
        let grid = StripGrid::new(half, n_t, n_theta).unwrap();
        let metric = make_metric(Preset::Neck, MetricParams::default()).unwrap();
        let set = VortexSet::new(vortices.iter().map(|&(t, th, m)| Vortex {
            at: StripPoint::new(t, th),
            multiplicity: m,
        }))
        .unwrap();
        let p = Problem::new(grid, metric, &set, ProblemOptions::default()).unwrap();
        let s = newton_solve(&p, &SolverOptions::default(), None).unwrap();
        (p, s)
    }

    #[test]
    fn vacuum_fields_vanish() {
        let (p, s) = solve(&[], 4.0, 65, 16);
        let f = reconstruct(&s, &p, &UnitsLedger::default()).unwrap();
        assert_eq!(f.ftilde12.max_abs(), 0.0);
        assert_eq!(f.a0.max_abs(), 0.0);
        assert_eq!(f.t00.max_abs(), 0.0);
        assert_eq!(total_flux(&f, &p).unwrap(), 0.0);
        assert_eq!(total_energy(&f, &p).unwrap(), 0.0);
    }

    #[test]
    fn substitution_at_minus_ln_two() {
        let (p, mut s) = solve(&[], 4.0, 65, 16);
        s.w = GridField::constant(&p.grid, -(2.0_f64.ln()));
        for branch in [Branch::Upper, Branch::Lower] {
            let units = UnitsLedger::new(branch);
            let f = reconstruct(&s, &p, &units).unwrap();
            assert!((f.ftilde12.get(3, 3) + units.sign / 8.0).abs() < 1e-15);
            assert!((f.a0.get(3, 3) - units.sign / 4.0).abs() < 1e-15);
            assert!((f.potential_density.get(3, 3) - 1.0 / 32.0).abs() < 1e-15);
            assert_eq!(f.electric.get(3, 3), f.potential_density.get(3, 3));
        }
    }

    #[test]
    fn non_converged_input_rejected() {
        let (p, mut s) = solve(&[], 4.0, 65, 16);
        s.status = crate::solver::SolveStatus::MaxNewton;
        assert!(matches!(
            reconstruct(&s, &p, &UnitsLedger::default()),
            Err(Error::NotConverged)
        ));
    }

    #[test]
    fn sign_ledger_and_flux() {
        let (p, s) = solve(&[(0.3, 2.0, 1)], 6.0, 257, 64);
        let units = UnitsLedger::default();
        let f = reconstruct(&s, &p, &units).unwrap();
        for k in 0..p.grid.len() {
            // Far-field w sits at round-off level around 0.
            assert!(units.sign * f.ftilde12.values[k] <= 1e-15);
            assert!(units.sign * f.a0.values[k] >= -1e-15);
            assert!(f.t00.values[k] >= 0.0);
        }
        for j in 0..p.grid.n_theta {
            assert!((f.phi_sq.get(0, j) - 1.0).abs() < 1e-12);
            assert!((f.phi_sq.get(p.grid.n_t - 1, j) - 1.0).abs() < 1e-12);
        }
        let flux = total_flux(&f, &p).unwrap();
        assert!((flux + 2.0 * PI).abs() < 0.02 * 2.0 * PI, "flux {flux}");
        let lower = reconstruct(&s, &p, &UnitsLedger::new(Branch::Lower)).unwrap();
        assert_eq!(total_flux(&lower, &p).unwrap(), -flux);
        let energy = total_energy(&f, &p).unwrap();
        assert!((energy - flux.abs()).abs() < 0.02 * flux.abs(), "energy {energy} flux {flux}");
    }

    /// Build `D_jφ = ∂_jφ − i e A_j φ` from `φ = e^{w/2} e^{iΘ}` with
    /// `e A_j = ∂_jΘ + ε_jk ∂_k ln|φ|` by sixth-order differences along a
    /// θ-loop away from the core, and compare `G^{ij} D_iφ (D_jφ)*` with the
    /// gauge-invariant kinetic density.
    #[test]
    fn kinetic_matches_gauge_explicit_covariant_derivative() {
        let (t0, th0) = (0.0, PI);
        let (p, s) = solve(&[(t0, th0, 1)], 6.0, 385, 192);
        let f = reconstruct(&s, &p, &UnitsLedger::default()).unwrap();
        let g = &p.grid;
        let center = p.vortices.centers()[0].at;
        let c6 = [-1.0 / 60.0, 3.0 / 20.0, -3.0 / 4.0, 0.0, 3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
        let i0 = (0..g.n_t).min_by(|&a, &b| (g.t(a) - center.t - 1.5).abs().total_cmp(&(g.t(b) - center.t - 1.5).abs())).unwrap();
        let theta_phase = |i: usize, j: usize| {
            let (dt, dth) = crate::geometry::chart_offset(g.node(i, j), center);
            dth.atan2(dt)
        };
        // φ as (re, im), with the phase taken continuously along each stencil.
        let phi = |i: usize, j: usize, base: f64| {
            let amp = (0.5 * s.w.get(i, j)).exp();
            let ph = base + crate::geometry::wrap_angle(theta_phase(i, j) - base);
            (amp * ph.cos(), amp * ph.sin(), ph)
        };
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for j in 0..g.n_theta {
            // Keep the stencil off the cut of the wrapped angle.
            if crate::geometry::wrap_angle(g.theta(j) - center.theta).abs() > PI - 0.5 {
                continue;
            }
            checked += 1;
            let base = theta_phase(i0, j);
            let (mut dt_phi, mut dth_phi) = ((0.0, 0.0), (0.0, 0.0));
            let (mut dt_th, mut dth_th, mut dt_l, mut dth_l) = (0.0, 0.0, 0.0, 0.0);
            for (k, c) in c6.iter().enumerate() {
                let off = k as isize - 3;
                let ii = (i0 as isize + off) as usize;
                let jj = (j as isize + off).rem_euclid(g.n_theta as isize) as usize;
                let (re, im, ph) = phi(ii, j, base);
                dt_phi.0 += c * re / g.dt;
                dt_phi.1 += c * im / g.dt;
                dt_th += c * ph / g.dt;
                dt_l += c * 0.5 * s.w.get(ii, j) / g.dt;
                let (re, im, ph) = phi(i0, jj, base);
                dth_phi.0 += c * re / g.dtheta;
                dth_phi.1 += c * im / g.dtheta;
                dth_th += c * ph / g.dtheta;
                dth_l += c * 0.5 * s.w.get(i0, jj) / g.dtheta;
            }
            // ε_12 = +1: eA_t = ∂_tΘ + ∂_θ ln|φ|, eA_θ = ∂_θΘ − ∂_t ln|φ|.
            let ea_t = dt_th + dth_l;
            let ea_th = dth_th - dt_l;
            let (re, im, _) = phi(i0, j, base);
            let d_t = (dt_phi.0 + ea_t * im, dt_phi.1 - ea_t * re);
            let d_th = (dth_phi.0 + ea_th * im, dth_phi.1 - ea_th * re);
            let direct = (d_t.0 * d_t.0 + d_t.1 * d_t.1 + d_th.0 * d_th.0 + d_th.1 * d_th.1) / p.lambda.get(i0, j);
            let rel = (direct - f.kinetic.get(i0, j)).abs() / f.kinetic.get(i0, j);
            worst = worst.max(rel);
        }
        assert!(checked > g.n_theta / 2);
        assert!(worst < 1e-6, "relative mismatch {worst}");
    }

    #[test]
    fn decay_fit_on_neck_end() {
        let (p, s) = solve(&[(0.0, 1.0, 1)], 8.0, 513, 64);
        let f = reconstruct(&s, &p, &UnitsLedger::default()).unwrap();
        for end in End::BOTH {
            let r = fit_decay(&p, &f, &s.w, end, DecayQuantity::W, None, &DecayOptions::default()).unwrap();
            assert!(r.b_fit > 0.8 && r.b_fit < 1.2, "{r:?}");
            assert!(r.r_squared > 0.99, "{r:?}");
            assert!(r.a_bound >= r.a_fit);
        }
    }

    #[test]
    fn decay_window_errors() {
        let (p, s) = solve(&[(0.0, 1.0, 1)], 8.0, 257, 32);
        let f = reconstruct(&s, &p, &UnitsLedger::default()).unwrap();
        let opts = DecayOptions::default();
        let outside = fit_decay(&p, &f, &s.w, End::Plus, DecayQuantity::W, Some([0.1, 7.5]), &opts);
        assert!(matches!(outside, Err(Error::Window(_))));
        // Deep in the far field w underflows; the report shrinks or refuses, never panics.
        match fit_decay(&p, &f, &s.w, End::Plus, DecayQuantity::W, Some([5.0, 7.0]), &opts) {
            Ok(r) => assert!(r.shrunk),
            Err(Error::Window(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }
}
