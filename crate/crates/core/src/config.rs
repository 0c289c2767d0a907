//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Branch, DecayOptions};
use crate::geometry::{make_metric, CylinderMetric, MetricParams, Preset, StripPoint, Table};
use crate::grid::StripGrid;
use crate::singular::{Vortex, VortexSet};
use crate::solver::{ProblemOptions, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Neck,
    Wormhole,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub preset: PresetName,
    /// Wormhole mass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    /// `t,theta,lambda` CSV for tabulated metrics, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(default = "default_alpha_target")]
    pub alpha_target: f64,
    #[serde(default = "default_alpha_max")]
    pub alpha_max: f64,
}

fn default_alpha_target() -> f64 {
    MetricParams::default().alpha_target
}

fn default_alpha_max() -> f64 {
    MetricParams::default().alpha_max
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "T")]
    pub half_length: f64,
    pub n_t: usize,
    pub n_theta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VortexConfig {
    pub t: f64,
    pub theta: f64,
    #[serde(default = "one")]
    pub multiplicity: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dump_fields: bool,
    pub out_dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dump_fields: true,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmsConfig {
    pub case: String,
    /// `[n_t, n_theta]` per grid, coarse to fine; all share `grid.T`.
    pub grids: Vec<[usize; 2]>,
    pub order_band: [f64; 2],
}

impl Default for MmsConfig {
    fn default() -> Self {
        Self {
            case: "gauss-cos".into(),
            grids: vec![[128, 64], [256, 128], [512, 256]],
            order_band: [1.8, 2.2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Also solve the θ-shifted and (where the metric allows) reflected
    /// configurations and compare.
    pub symmetry: bool,
    pub symmetry_tol: f64,
    pub flux_tol: f64,
    pub energy_tol: f64,
    /// Fitted rates must exceed this.
    pub min_rate: f64,
    pub min_r_squared: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            symmetry: true,
            symmetry_tol: 1e-8,
            flux_tol: 0.01,
            energy_tol: 0.02,
            min_rate: 0.5,
            min_r_squared: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub metric: MetricConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub vortices: Vec<VortexConfig>,
    #[serde(default)]
    pub sign: Branch,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub problem: ProblemOptions,
    #[serde(default)]
    pub decay: DecayOptions,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub mms: MmsConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

/// A validated configuration with everything built.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub metric: CylinderMetric,
    pub grid: StripGrid,
    pub vortices: VortexSet,
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn metric_params(&self) -> MetricParams {
        MetricParams {
            alpha_target: self.metric.alpha_target,
            alpha_max: self.metric.alpha_max,
            required_half_length: Some(self.grid.half_length),
        }
    }

    pub fn vortex_set(&self) -> Result<VortexSet> {
        VortexSet::new(self.vortices.iter().map(|v| Vortex {
            at: StripPoint::new(v.t, v.theta),
            multiplicity: v.multiplicity,
        }))
    }

    /// Check every field before any compute and build the pieces.
    /// `base_dir` anchors relative paths.
    pub fn resolve(&self, base_dir: &Path) -> Result<Resolved> {
        let cfg = |m: String| Error::Config(m);
        self.solver.validate()?;
        let p = &self.problem;
        if !(p.annulus_scale > 0.0 && p.annulus_scale <= 1.0) {
            return Err(cfg(format!("problem.annulus_scale must lie in (0, 1], got {}", p.annulus_scale)));
        }
        let d = &self.decay;
        if !(d.r_min > 0.0 && d.floor > 0.0 && d.min_points >= 3) {
            return Err(cfg(format!("decay options out of range: {d:?}")));
        }
        let g = &self.grid;
        let grid = StripGrid::new(g.half_length, g.n_t, g.n_theta).map_err(|e| cfg(e.to_string()))?;
        for v in &self.vortices {
            if !(v.t.is_finite() && v.theta.is_finite()) {
                return Err(cfg(format!("vortex at ({}, {}) is not finite", v.t, v.theta)));
            }
            if v.multiplicity == 0 {
                return Err(cfg("vortex multiplicity must be at least 1".into()));
            }
            if v.t.abs() >= g.half_length {
                return Err(cfg(format!(
                    "vortex at t = {} lies outside the strip |t| < T = {}",
                    v.t, g.half_length
                )));
            }
        }
        let vortices = self.vortex_set().map_err(|e| cfg(e.to_string()))?;
        // Boundary clearance and pair separation against the grid.
        let snapped = vortices.snapped(&grid).map_err(|e| cfg(e.to_string()))?;
        crate::singular::cutoff_radius(&snapped, &grid).map_err(|e| cfg(e.to_string()))?;
        let preset = match self.metric.preset {
            PresetName::Neck => Preset::Neck,
            PresetName::Wormhole => Preset::Wormhole {
                mass: self
                    .metric
                    .mass
                    .ok_or_else(|| cfg("metric.mass is required for the wormhole preset".into()))?,
            },
            PresetName::Tabulated => {
                let rel = self
                    .metric
                    .table
                    .as_ref()
                    .ok_or_else(|| cfg("metric.table is required for the tabulated preset".into()))?;
                let path = base_dir.join(rel);
                Preset::Tabulated(Table::read_csv_path(&path).map_err(|e| cfg(format!("{}: {e}", path.display())))?)
            }
        };
        let metric = make_metric(preset, self.metric_params()).map_err(|e| cfg(e.to_string()))?;
        if self.verify.symmetry_tol <= 0.0 || self.verify.flux_tol <= 0.0 || self.verify.energy_tol <= 0.0 {
            return Err(cfg("verify tolerances must be positive".into()));
        }
        Ok(Resolved {
            config: self.clone(),
            metric,
            grid,
            vortices,
            base_dir: base_dir.to_path_buf(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [metric]
        preset = "neck"

        [grid]
        T = 6.0
        n_t = 97
        n_theta = 32
    "#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert!(c.vortices.is_empty());
        assert_eq!(c.solver, SolverOptions::default());
        assert_eq!(c.sign, Branch::Upper);
        assert_eq!(c.mms.grids.len(), 3);
        let r = c.resolve(Path::new(".")).unwrap();
        assert_eq!(r.grid.n_t, 97);
        // Round trip through the emitted form keeps every default.
        let again = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn boundary_clearance_enforced() {
        let text = format!("{MINIMAL}\n[[vortices]]\nt = 5.99\ntheta = 1.0\n");
        let c = RunConfig::from_toml(&text).unwrap();
        let err = c.resolve(Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("t = ±6"), "{err}");
    }

    #[test]
    fn wormhole_needs_mass() {
        let text = MINIMAL.replace("\"neck\"", "\"wormhole\"");
        let c = RunConfig::from_toml(&text).unwrap();
        assert!(c.resolve(Path::new(".")).is_err());
        let c = RunConfig::from_toml(&text.replace("[grid]", "mass = 1.0\n[grid]")).unwrap();
        assert!(c.resolve(Path::new(".")).is_ok());
    }
}
