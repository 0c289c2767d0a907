#![allow(dead_code)]

use cylvortex::fields::{reconstruct, total_energy, total_flux, PhysicalFields, UnitsLedger};
use cylvortex::geometry::{make_metric, CylinderMetric, MetricParams, Preset, StripPoint};
use cylvortex::grid::StripGrid;
use cylvortex::singular::{Vortex, VortexSet};
use cylvortex::solver::{newton_run, FieldSolution, Problem, ProblemOptions, SolverOptions};

pub fn neck() -> CylinderMetric {
    make_metric(Preset::Neck, MetricParams::default()).unwrap()
}

pub fn wormhole(mass: f64) -> CylinderMetric {
    make_metric(Preset::Wormhole { mass }, MetricParams::default()).unwrap()
}

pub fn vortices(list: &[(f64, f64, u32)]) -> VortexSet {
    VortexSet::new(list.iter().map(|&(t, theta, m)| Vortex {
        at: StripPoint::new(t, theta),
        multiplicity: m,
    }))
    .unwrap()
}

/// `n` unit vortices spread over the throat region.
pub fn spread(n: u32) -> Vec<(f64, f64, u32)> {
    (0..n).map(|k| (0.7 * k as f64 - 0.3, 1.0 + 2.0 * k as f64, 1)).collect()
}

pub struct Run {
    pub problem: Problem,
    pub solution: FieldSolution,
}

impl Run {
    pub fn fields(&self) -> PhysicalFields {
        reconstruct(&self.solution, &self.problem, &UnitsLedger::default()).unwrap()
    }

    pub fn flux_energy(&self) -> (f64, f64) {
        let f = self.fields();
        (
            total_flux(&f, &self.problem).unwrap(),
            total_energy(&f, &self.problem).unwrap(),
        )
    }

    pub fn descends(&self) -> bool {
        self.solution.energy_trace.windows(2).all(|w| w[1] <= w[0])
    }
}

pub fn solve_with(
    metric: &CylinderMetric,
    half: f64,
    n_t: usize,
    n_theta: usize,
    set: &VortexSet,
    options: ProblemOptions,
) -> Run {
    let grid = StripGrid::new(half, n_t, n_theta).unwrap();
    let problem = Problem::new(grid, metric.clone(), set, options).unwrap();
    let solution = newton_run(&problem, &SolverOptions::default(), None).unwrap();
    Run { problem, solution }
}

pub fn solve(metric: &CylinderMetric, half: f64, n_t: usize, n_theta: usize, list: &[(f64, f64, u32)]) -> Run {
    solve_with(metric, half, n_t, n_theta, &vortices(list), ProblemOptions::default())
}
