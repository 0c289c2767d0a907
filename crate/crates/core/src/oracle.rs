//! Independent checks: manufactured solutions, refinement studies and
//! isometry pairs.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CylinderMetric, StripPoint, TWO_PI};
use crate::grid::{GridField, StripGrid};
use crate::singular::{Vortex, VortexSet};
use crate::solver::{newton_solve, Problem, ProblemOptions, SolverOptions};

/// Closed-form `u*` with its chart Laplacian. Every family vanishes on
/// `t = ±T` for the `T` it is evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum StarField {
    Zero,
    /// `−A (e^{−t²/σ²} − e^{−T²/σ²}) (a + b cos(kθ − φ))`
    Gauss {
        amp: f64,
        sigma: f64,
        mean: f64,
        wave: f64,
        k: f64,
        phase: f64,
    },
    /// `−A cos(πt / 2T) (a + b sin(kθ))`
    Cosine { amp: f64, mean: f64, wave: f64, k: f64 },
}

impl StarField {
    /// `(u*, Δ₀u*)` at `(t, θ)` on the strip of half-length `half`.
    pub fn eval(&self, t: f64, theta: f64, half: f64) -> (f64, f64) {
        match *self {
            StarField::Zero => (0.0, 0.0),
            StarField::Gauss {
                amp,
                sigma,
                mean,
                wave,
                k,
                phase,
            } => {
                let s2 = sigma * sigma;
                let g = (-t * t / s2).exp();
                let g_t = g - (-half * half / s2).exp();
                let g_tt = (4.0 * t * t / (s2 * s2) - 2.0 / s2) * g;
                let c = (k * theta - phase).cos();
                let ang = mean + wave * c;
                let ang_tt = -wave * k * k * c;
                (-amp * g_t * ang, -amp * (g_tt * ang + g_t * ang_tt))
            }
            StarField::Cosine { amp, mean, wave, k } => {
                let q = PI / (2.0 * half);
                let c = (q * t).cos();
                let s = (k * theta).sin();
                let ang = mean + wave * s;
                (-amp * c * ang, -amp * (-q * q * c * ang - c * wave * k * k * s))
            }
        }
    }
}

/// A fixed manufactured case: the field plus the vortices of its base problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCase {
    pub name: String,
    pub field: StarField,
    pub vortices: Vec<Vortex>,
}

pub const CASE_NAMES: [&str; 5] = ["zero", "gauss-cos", "gauss-narrow", "cos-mode", "vortex-gauss"];

pub fn named_case(name: &str) -> Result<NamedCase> {
    let (field, vortices) = match name {
        "zero" => (StarField::Zero, vec![]),
        "gauss-cos" => (
            StarField::Gauss {
                amp: 0.3,
                sigma: 3.0,
                mean: 0.5,
                wave: 0.5,
                k: 1.0,
                phase: 0.0,
            },
            vec![],
        ),
        "gauss-narrow" => (
            StarField::Gauss {
                amp: 0.3,
                sigma: 1.0,
                mean: 0.5,
                wave: 0.5,
                k: 1.0,
                phase: 0.0,
            },
            vec![],
        ),
        "cos-mode" => (
            StarField::Cosine {
                amp: 0.2,
                mean: 1.0,
                wave: 0.5,
                k: 1.0,
            },
            vec![],
        ),
        "vortex-gauss" => (
            StarField::Gauss {
                amp: 0.2,
                sigma: 3.0,
                mean: 1.0,
                wave: 0.5,
                k: 1.0,
                phase: 1.0,
            },
            vec![Vortex {
                at: StripPoint::new(0.5, PI),
                multiplicity: 1,
            }],
        ),
        other => {
            return Err(Error::Study(format!(
                "unknown manufactured case {other:?}; known: {}",
                CASE_NAMES.join(", ")
            )))
        }
    };
    Ok(NamedCase {
        name: name.to_string(),
        field,
        vortices,
    })
}

#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    pub u_star: GridField,
    pub q_extra: GridField,
    /// The base problem with `h` replaced by `h + q_extra`.
    pub problem: Problem,
}

fn check_dirichlet(grid: &StripGrid, u: &GridField) -> Result<()> {
    for i in [0, grid.n_t - 1] {
        let worst = u.row(i).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if worst > 1e-12 {
            return Err(Error::Study(format!(
                "u_star must vanish on t = ±{}; found {worst:e} on row {i}",
                grid.half_length
            )));
        }
    }
    Ok(())
}

/// `q_extra = Δ_g u* − S e^{u*}(S e^{u*} − 1) − h` from the closed-form
/// Laplacian and the sampled `S`, `h`.
pub fn manufacture(problem: &Problem, field: &StarField) -> Result<ManufacturedCase> {
    let g = &problem.grid;
    let half = g.half_length;
    let u_star = GridField::from_fn(g, |i, j| field.eval(g.t(i), g.theta(j), half).0);
    u_star.check_finite()?;
    check_dirichlet(g, &u_star)?;
    let q_extra = GridField::from_fn(g, |i, j| {
        let (u, lap) = field.eval(g.t(i), g.theta(j), half);
        let a = problem.s.get(i, j) * u.exp();
        lap / problem.lambda.get(i, j) - a * (a - 1.0) - problem.h_src.get(i, j)
    });
    q_extra.check_finite()?;
    let mut modified = problem.clone();
    modified.h_src = problem.h_src.zip_map(&q_extra, |h, q| h + q);
    Ok(ManufacturedCase {
        u_star,
        q_extra,
        problem: modified,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub n_t: usize,
    pub n_theta: usize,
    pub half_length: f64,
    pub spacing: f64,
    pub max_error: f64,
    pub newton_iterations: usize,
    /// Against the previous (coarser) row.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub case: String,
    pub rows: Vec<StudyRow>,
}

impl Study {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_t,n_theta,T,max_error,order\n");
        for r in &self.rows {
            let order = r.order.map_or_else(String::new, |o| o.to_string());
            let _ = writeln!(out, "{},{},{},{},{}", r.n_t, r.n_theta, r.half_length, r.max_error, order);
        }
        out
    }

    /// Every error at round-off: nothing to estimate an order from.
    pub fn is_exact(&self) -> bool {
        self.rows.iter().all(|r| r.max_error <= 1e-13)
    }

    /// Exact, or every observed order inside `band` with errors decreasing.
    pub fn passes(&self, band: [f64; 2]) -> bool {
        if self.is_exact() {
            return true;
        }
        let monotone = self.rows.windows(2).all(|w| w[1].max_error < w[0].max_error);
        monotone
            && self.rows[1..]
                .iter()
                .all(|r| r.order.is_some_and(|o| o >= band[0] && o <= band[1]))
    }
}

/// Check that `grids` form a refinement chain: at least three, one
/// half-length, strictly finer in both directions.
pub fn check_chain(grids: &[StripGrid]) -> Result<()> {
    if grids.len() < 3 {
        return Err(Error::Study(format!(
            "a convergence study needs at least 3 grids, got {}",
            grids.len()
        )));
    }
    for w in grids.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.half_length != b.half_length {
            return Err(Error::Study(format!(
                "grids must share T: {} vs {}",
                a.half_length, b.half_length
            )));
        }
        if !(b.n_t > a.n_t && b.n_theta > a.n_theta) {
            return Err(Error::Study(format!(
                "grids must refine in both directions: {}x{} then {}x{}",
                a.n_t, a.n_theta, b.n_t, b.n_theta
            )));
        }
    }
    Ok(())
}

/// Solve the manufactured problem on every grid and compare with `u*` at
/// each grid's own nodes.
pub fn convergence_study(
    case: &NamedCase,
    metric: &CylinderMetric,
    grids: &[StripGrid],
    problem_options: ProblemOptions,
    solver_options: &SolverOptions,
) -> Result<Study> {
    check_chain(grids)?;
    let vortices = VortexSet::new(case.vortices.iter().copied())?;
    let mut rows: Vec<StudyRow> = Vec::with_capacity(grids.len());
    for grid in grids {
        let base = Problem::new(*grid, metric.clone(), &vortices, problem_options)?;
        let mms = manufacture(&base, &case.field)?;
        let sol = newton_solve(&mms.problem, solver_options, None)?;
        let max_error = sol.u.max_abs_diff(&mms.u_star);
        let spacing = grid.max_spacing();
        let order = rows.last().and_then(|prev: &StudyRow| {
            (prev.max_error > 0.0 && max_error > 0.0)
                .then(|| (prev.max_error / max_error).ln() / (prev.spacing / spacing).ln())
        });
        rows.push(StudyRow {
            n_t: grid.n_t,
            n_theta: grid.n_theta,
            half_length: grid.half_length,
            spacing,
            max_error,
            newton_iterations: sol.iterations,
            order,
        });
    }
    Ok(Study {
        case: case.name.clone(),
        rows,
    })
}

type NodeMap = Box<dyn Fn(usize, usize) -> (usize, usize)>;

/// Isometries of the preset metrics that map grid nodes onto grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Isometry {
    Identity,
    ThetaShift(f64),
    /// `t ↦ −t`
    TReflection,
    /// `t ↦ 2 t_c − t` about the throat `t_c = ln(m/2)`.
    WormholeReflection,
}

impl Isometry {
    fn reflection_centre(&self, metric: &CylinderMetric) -> f64 {
        match self {
            Isometry::WormholeReflection => metric.profile.throat(),
            _ => 0.0,
        }
    }

    pub fn map_point(&self, p: StripPoint, metric: &CylinderMetric) -> StripPoint {
        match *self {
            Isometry::Identity => p,
            Isometry::ThetaShift(d) => StripPoint::new(p.t, p.theta + d),
            Isometry::TReflection | Isometry::WormholeReflection => {
                StripPoint::new(2.0 * self.reflection_centre(metric) - p.t, p.theta)
            }
        }
    }

    pub fn map_vortices(&self, set: &VortexSet, metric: &CylinderMetric) -> Result<VortexSet> {
        VortexSet::new(set.centers().iter().map(|v| Vortex {
            at: self.map_point(v.at, metric),
            multiplicity: v.multiplicity,
        }))
    }

    /// Node `(i, j)` of the image, or an error when the isometry does not
    /// permute the grid or does not preserve the sampled metric.
    fn node_map(&self, grid: &StripGrid, metric: &CylinderMetric) -> Result<NodeMap> {
        let (nt, nth) = grid.shape();
        match *self {
            Isometry::Identity => Ok(Box::new(|i, j| (i, j))),
            Isometry::ThetaShift(d) => {
                let cells = d.rem_euclid(TWO_PI) / grid.dtheta;
                let k = cells.round();
                if (cells - k).abs() > 1e-9 {
                    return Err(Error::Isometry(format!(
                        "θ-shift {d} is not a multiple of the spacing {}",
                        grid.dtheta
                    )));
                }
                let k = k as usize % nth;
                Ok(Box::new(move |i, j| (i, (j + k) % nth)))
            }
            Isometry::TReflection | Isometry::WormholeReflection => {
                let c = self.reflection_centre(metric);
                if c.abs() > 1e-12 {
                    return Err(Error::Isometry(format!(
                        "reflection about t = {c} does not map [-T, T] onto itself"
                    )));
                }
                for i in 0..nt {
                    for j in 0..nth {
                        let a = metric.conformal_factor(grid.node(i, j))?;
                        let b = metric.conformal_factor(grid.node(nt - 1 - i, j))?;
                        if (a - b).abs() > 1e-12 * a.abs().max(b.abs()) {
                            return Err(Error::Isometry(format!(
                                "metric is not symmetric under t ↦ −t (λ = {a} vs {b} at row {i})"
                            )));
                        }
                    }
                }
                Ok(Box::new(move |i, j| (nt - 1 - i, j)))
            }
        }
    }
}

/// `max |w_a(p) − w_b(ι(p))|` over the nodes, where `w_b` solves the problem
/// whose vortices are the images of those of `w_a`.
pub fn symmetry_check(
    grid: &StripGrid,
    metric: &CylinderMetric,
    w_a: &GridField,
    w_b: &GridField,
    isometry: Isometry,
) -> Result<f64> {
    w_a.check_shape(grid)?;
    w_b.check_shape(grid)?;
    let map = isometry.node_map(grid, metric)?;
    let mut worst = 0.0_f64;
    for i in 0..grid.n_t {
        for j in 0..grid.n_theta {
            let (ii, jj) = map(i, j);
            worst = worst.max((w_a.get(i, j) - w_b.get(ii, jj)).abs());
        }
    }
    Ok(worst)
}
