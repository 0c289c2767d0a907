use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CylinderMetric;
use crate::grid::{self, GridField, StripGrid};
use crate::singular::{cutoff_radius, SingularData, VortexSet};

/// How the smooth source `h` is put on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SourceMode {
    /// `h = -λ⁻¹ Δ₀ʰ ū` with the grid stencil, except on the core nodes
    /// `ρ_k < core_fraction · ε₁` where the discrete point source `Δ₀ʰ ū`
    /// stays, rescaled so that each core carries exactly `4π m_k`. The
    /// discrete `w = ū + u` then does not depend on the choice of ū.
    #[default]
    GridConsistent,
    /// Closed-form `h` sampled at the nodes.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemOptions {
    /// Cutoff discs of radius `annulus_scale · ε₁`.
    pub annulus_scale: f64,
    pub source_mode: SourceMode,
    /// Core radius in units of the largest grid spacing. Tying it to the grid
    /// keeps the discrete point source self-similar under refinement. The
    /// core plus one spacing should stay inside `annulus_scale · ε₁ / 2`, or
    /// `w` picks up a dependence on the annulus.
    pub core_cells: f64,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        Self {
            annulus_scale: 1.0,
            source_mode: SourceMode::GridConsistent,
            core_cells: 1.0,
        }
    }
}

/// Everything the split equation `Δ_g u = S e^u (S e^u − 1) + h` needs.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: StripGrid,
    pub metric: CylinderMetric,
    /// Centres after snapping to cell centres.
    pub vortices: VortexSet,
    pub singular: SingularData,
    pub options: ProblemOptions,
    pub lambda: GridField,
    pub ubar: GridField,
    pub s: GridField,
    pub h_src: GridField,
    pub warnings: Vec<String>,
}

impl Problem {
    pub fn new(
        grid: StripGrid,
        metric: CylinderMetric,
        vortices: &VortexSet,
        options: ProblemOptions,
    ) -> Result<Self> {
        let lambda = grid::sample_metric(&grid, &metric)?;
        let vortices = vortices.snapped(&grid)?;
        let epsilon1 = cutoff_radius(&vortices, &grid)?;
        let singular = SingularData::new(vortices.clone(), epsilon1, options.annulus_scale)?;
        let core = options.core_cells * grid.max_spacing();
        let zone = 0.5 * options.annulus_scale * epsilon1;
        if options.source_mode == SourceMode::GridConsistent
            && !vortices.is_empty()
            && !(options.core_cells >= 0.75 && core < zone)
        {
            return Err(Error::Vortex(format!(
                "core radius {core:.4} ({} cells) must be at least 0.75 cells and below {zone:.4}",
                options.core_cells
            )));
        }
        let ubar = grid::sample(&grid, |p| singular.ubar(p))?;
        let s = ubar.map(f64::exp);
        let h_src = match options.source_mode {
            SourceMode::Analytic => {
                let chart = grid::sample(&grid, |p| singular.source_chart(p))?;
                chart.zip_map(&lambda, |c, l| c / l)
            }
            SourceMode::GridConsistent => {
                let lap = grid::laplacian_chart(&grid, &ubar)?;
                let owner = |i: usize, j: usize| {
                    let p = grid.node(i, j);
                    vortices
                        .centers()
                        .iter()
                        .position(|v| crate::geometry::chart_distance(p, v.at) < core)
                };
                // Discrete point-source strength of each core, rescaled to 4πm.
                let area = grid.dt * grid.dtheta;
                let mut strength = vec![0.0; vortices.centers().len()];
                for i in 1..grid.n_t - 1 {
                    for j in 0..grid.n_theta {
                        if let Some(k) = owner(i, j) {
                            strength[k] += lap.get(i, j) * area;
                        }
                    }
                }
                let mut boost = Vec::with_capacity(strength.len());
                for (v, d) in vortices.centers().iter().zip(&strength) {
                    if !(*d > 0.0) {
                        return Err(Error::Vortex(format!(
                            "core around {:?} holds no grid node; raise core_cells",
                            v.at
                        )));
                    }
                    boost.push(4.0 * std::f64::consts::PI * v.multiplicity as f64 / d - 1.0);
                }
                GridField::from_fn(&grid, |i, j| {
                    if i == 0 || i + 1 == grid.n_t {
                        return 0.0;
                    }
                    let scale = match owner(i, j) {
                        Some(k) => boost[k],
                        None => -1.0,
                    };
                    scale * lap.get(i, j) / lambda.get(i, j)
                })
            }
        };
        let mut warnings = metric.warnings.clone();
        warnings.extend(grid.aspect_warning());
        if options.source_mode == SourceMode::GridConsistent
            && !vortices.is_empty()
            && core + grid.max_spacing() > zone
        {
            warnings.push(format!(
                "core stencil reaches past the logarithmic zone (core {core:.4}, spacing {:.4}, zone {zone:.4})",
                grid.max_spacing(),
            ));
        }
        Ok(Self {
            grid,
            metric,
            vortices,
            singular,
            options,
            lambda,
            ubar,
            s,
            h_src,
            warnings,
        })
    }

    pub fn vortex_number(&self) -> u32 {
        self.vortices.total()
    }

    /// Zero field with the problem's shape.
    pub fn zeros(&self) -> GridField {
        GridField::zeros(&self.grid)
    }

    fn check(&self, u: &GridField) -> Result<()> {
        u.check_shape(&self.grid)?;
        let max_u = u.max();
        if max_u > 700.0 || max_u.is_nan() {
            return Err(Error::Diverged { max_u });
        }
        Ok(())
    }
}

/// `F(u) = Δ_g u − S e^u (S e^u − 1) − h` at interior nodes, zero on the
/// Dirichlet rows.
pub fn residual(problem: &Problem, u: &GridField) -> Result<GridField> {
    problem.check(u)?;
    let grid = &problem.grid;
    let mut f = grid::laplacian_chart(grid, u)?;
    let n = grid.n_theta;
    let nt = grid.n_t;
    f.values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            if i == 0 || i + 1 == nt {
                return;
            }
            for (j, v) in row.iter_mut().enumerate() {
                let k = i * n + j;
                let a = problem.s.values[k] * u.values[k].exp();
                *v = *v / problem.lambda.values[k] - a * (a - 1.0) - problem.h_src.values[k];
            }
        });
    Ok(f)
}

/// Coefficient `S e^u (2 S e^u − 1)` of the linearisation.
pub fn linear_coefficient(problem: &Problem, u: &GridField) -> GridField {
    u.zip_map(&problem.s, |u, s| {
        let a = s * u.exp();
        a * (2.0 * a - 1.0)
    })
}

/// Matrix-free `J v = Δ_g v − S e^u (2 S e^u − 1) v`.
pub fn jacobian_apply(problem: &Problem, u: &GridField, v: &GridField) -> Result<GridField> {
    problem.check(u)?;
    v.check_shape(&problem.grid)?;
    let coeff = linear_coefficient(problem, u);
    let grid = &problem.grid;
    let mut out = grid::laplacian_chart(grid, v)?;
    let (n, nt) = (grid.n_theta, grid.n_t);
    out.values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            if i == 0 || i + 1 == nt {
                return;
            }
            for (j, x) in row.iter_mut().enumerate() {
                let k = i * n + j;
                *x = *x / problem.lambda.values[k] - coeff.values[k] * v.values[k];
            }
        });
    Ok(out)
}

/// `E(u) = ∫ |∇u|² + (S e^u − 1)² + 2 h u dV_g`, the gradient term taken as
/// the chart Dirichlet energy.
pub fn energy(problem: &Problem, u: &GridField) -> Result<f64> {
    problem.check(u)?;
    let grid = &problem.grid;
    let dirichlet = grid::dirichlet_energy(grid, u)?;
    let n = grid.n_theta;
    let rest = grid::row_reduce(grid.n_t, |i| {
        let w = grid.row_weight(i);
        w * grid::pairwise_sum_by(0, n, &|j| {
            let k = i * n + j;
            let a = problem.s.values[k] * u.values[k].exp();
            problem.lambda.values[k]
                * ((a - 1.0).powi(2) + 2.0 * problem.h_src.values[k] * u.values[k])
        })
    });
    Ok(dirichlet + rest * grid.dt * grid.dtheta)
}

/// `E(u + d) − E(u)` evaluated without cancellation between the two
/// energies. `d` must vanish on the Dirichlet rows.
pub fn energy_change(problem: &Problem, u: &GridField, d: &GridField) -> Result<f64> {
    problem.check(u)?;
    let grid = &problem.grid;
    let lap = grid::laplacian_chart(grid, u)?;
    let quadratic = grid::dirichlet_energy(grid, d)?;
    let (n, nt) = (grid.n_theta, grid.n_t);
    let linear = grid::row_reduce(nt, |i| {
        if i == 0 || i + 1 == nt {
            return 0.0;
        }
        grid::pairwise_sum_by(0, n, &|j| {
            let k = i * n + j;
            let (uk, dk) = (u.values[k], d.values[k]);
            let a = problem.s.values[k] * uk.exp();
            let da = a * dk.exp_m1();
            let potential = da * (2.0 * a + da - 2.0);
            -2.0 * lap.values[k] * dk
                + problem.lambda.values[k] * (potential + 2.0 * problem.h_src.values[k] * dk)
        })
    });
    Ok(quadratic + linear * grid.dt * grid.dtheta)
}
