//! Singular ansatz `ū` carrying the vortex sources.
//!
//! Around each centre `p_k` with multiplicity `m_k`,
//!
//! ```text
//! ū = Σ_k 2 m_k η(ρ_k / ε) ln(ρ_k / ε),    ρ_k = chart distance to p_k,
//! ```
//!
//! where `η` is a C³ smoothstep equal to 1 on `s ≤ 1/2` and 0 on `s ≥ 1`.
//! Inside `ρ_k ≤ ε/2` the ansatz is the exact chart logarithm, so
//! `Δ_g ū = 4π m_k δ_{p_k}` there; the smooth remainder `h = -Δ_g ū + 4πΣδ`
//! lives on the annuli `ε/2 < ρ_k < ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{chart_distance, chart_offset, CylinderMetric, StripPoint};
use crate::grid::StripGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vortex {
    pub at: StripPoint,
    pub multiplicity: u32,
}

/// Prescribed vortex centres with coincident points merged.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VortexSet {
    centers: Vec<Vortex>,
}

const COINCIDENT: f64 = 1e-12;

impl VortexSet {
    pub fn new(list: impl IntoIterator<Item = Vortex>) -> Result<Self> {
        let mut centers: Vec<Vortex> = Vec::new();
        for v in list {
            if v.multiplicity == 0 {
                return Err(Error::Vortex("multiplicity must be at least 1".into()));
            }
            if !(v.at.t.is_finite() && v.at.theta.is_finite()) {
                return Err(Error::Vortex(format!("non-finite centre {:?}", v.at)));
            }
            match centers
                .iter_mut()
                .find(|c| chart_distance(c.at, v.at) < COINCIDENT)
            {
                Some(c) => c.multiplicity += v.multiplicity,
                None => centers.push(v),
            }
        }
        Ok(Self { centers })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn centers(&self) -> &[Vortex] {
        &self.centers
    }

    /// Total vortex number `N = Σ m_k`.
    pub fn total(&self) -> u32 {
        self.centers.iter().map(|c| c.multiplicity).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Move every centre to its nearest cell centre, re-merging centres that
    /// land in the same cell.
    pub fn snapped(&self, grid: &StripGrid) -> Result<Self> {
        Self::new(self.centers.iter().map(|c| Vortex {
            at: grid.snap_to_cell(c.at),
            multiplicity: c.multiplicity,
        }))
    }

    /// Rotate every centre by `dtheta`.
    pub fn rotated(&self, dtheta: f64) -> Self {
        Self {
            centers: self
                .centers
                .iter()
                .map(|c| Vortex {
                    at: StripPoint::new(c.at.t, c.at.theta + dtheta),
                    multiplicity: c.multiplicity,
                })
                .collect(),
        }
    }
}

/// Cutoff radius: the smallest of 1, π/4, a quarter of every pairwise chart
/// distance and a quarter of every centre's clearance from the truncation.
/// Only checked against the grid when there is at least one vortex.
pub fn cutoff_radius(vortices: &VortexSet, grid: &StripGrid) -> Result<f64> {
    let half = grid.half_length;
    let mut eps = 1.0_f64.min(std::f64::consts::FRAC_PI_4);
    let cs = vortices.centers();
    for (k, a) in cs.iter().enumerate() {
        let clearance = half - a.at.t.abs();
        if clearance <= 0.0 {
            return Err(Error::Vortex(format!(
                "vortex at t = {} lies outside the truncated strip |t| < {half}",
                a.at.t
            )));
        }
        eps = eps.min(clearance / 4.0);
        for b in &cs[k + 1..] {
            eps = eps.min(chart_distance(a.at, b.at) / 4.0);
        }
    }
    let need = 4.0 * grid.max_spacing();
    if !cs.is_empty() && eps < need {
        let factor = need / eps;
        return Err(Error::Vortex(format!(
            "cutoff radius {eps:.4} is below 4 grid spacings ({need:.4}); move vortices \
             away from each other and from t = ±{half}, or refine the grid by a factor ≥ {factor:.2}"
        )));
    }
    Ok(eps)
}

/// Degree-7 smoothstep `S(x) = 35x⁴ − 84x⁵ + 70x⁶ − 20x⁷` on `[0, 1]` and its
/// first two derivatives.
fn smoothstep7(x: f64) -> (f64, f64, f64) {
    let x2 = x * x;
    let x3 = x2 * x;
    let v = x2 * x2 * (35.0 - 84.0 * x + 70.0 * x2 - 20.0 * x3);
    let d1 = 140.0 * x3 * (1.0 - x).powi(3);
    let d2 = 420.0 * x2 * (1.0 - x).powi(2) * (1.0 - 2.0 * x);
    (v, d1, d2)
}

/// Cutoff `η(s)` with derivatives in `s`.
pub fn eta(s: f64) -> (f64, f64, f64) {
    if s <= 0.5 {
        (1.0, 0.0, 0.0)
    } else if s >= 1.0 {
        (0.0, 0.0, 0.0)
    } else {
        let (v, d1, d2) = smoothstep7(2.0 * s - 1.0);
        (1.0 - v, -2.0 * d1, -4.0 * d2)
    }
}

/// ū together with `S = e^ū` and the annulus source, all closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularData {
    /// Cutoff radius from [`cutoff_radius`].
    pub epsilon1: f64,
    /// Disc radius actually used, `scale · ε₁`.
    pub radius: f64,
    pub vortices: VortexSet,
}

impl SingularData {
    /// `scale` shrinks the cutoff discs; any value in `(0, 1]` gives an
    /// admissible ū.
    pub fn new(vortices: VortexSet, epsilon1: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::Vortex(format!("annulus scale {scale} not in (0, 1]")));
        }
        Ok(Self {
            epsilon1,
            radius: scale * epsilon1,
            vortices,
        })
    }

    fn each(&self, p: StripPoint, mut f: impl FnMut(&Vortex, f64, f64, f64)) {
        for v in self.vortices.centers() {
            let (dt, dth) = chart_offset(p, v.at);
            let rho = dt.hypot(dth);
            if rho < self.radius {
                f(v, rho, dt, dth);
            }
        }
    }

    /// `ū(p)`; `-∞` exactly at a centre.
    pub fn ubar(&self, p: StripPoint) -> f64 {
        let mut total = 0.0;
        self.each(p, |v, rho, _, _| {
            let s = rho / self.radius;
            total += 2.0 * v.multiplicity as f64 * eta(s).0 * s.ln();
        });
        total
    }

    /// `S = e^ū ∈ [0, 1]`.
    pub fn s_factor(&self, p: StripPoint) -> f64 {
        self.ubar(p).exp()
    }

    /// Chart gradient `(∂_t ū, ∂_θ ū)`.
    pub fn grad_ubar(&self, p: StripPoint) -> (f64, f64) {
        let (mut gt, mut gth) = (0.0, 0.0);
        self.each(p, |v, rho, dt, dth| {
            let s = rho / self.radius;
            let (e, e1, _) = eta(s);
            let dpsi = 2.0 * v.multiplicity as f64 / self.radius * (e1 * s.ln() + e / s);
            gt += dpsi * dt / rho;
            gth += dpsi * dth / rho;
        });
        (gt, gth)
    }

    /// `λ h = -Δ₀ ū` away from the centres; zero off the annuli.
    pub fn source_chart(&self, p: StripPoint) -> f64 {
        let mut total = 0.0;
        self.each(p, |v, rho, _, _| {
            let s = rho / self.radius;
            if s > 0.5 {
                let (_, e1, e2) = eta(s);
                let ln = s.ln();
                let lap = 2.0 * v.multiplicity as f64 / (self.radius * self.radius)
                    * (e2 * ln + e1 * (2.0 + ln) / s);
                total -= lap;
            }
        });
        total
    }

    /// The smooth source `h = -Δ_g ū + 4π Σ m_k δ_{p_k}`.
    pub fn source(&self, metric: &CylinderMetric, p: StripPoint) -> Result<f64> {
        Ok(self.source_chart(p) / metric.conformal_factor(p)?)
    }

    /// Whether `p` lies inside some cutoff disc scaled by `fraction`.
    pub fn within(&self, p: StripPoint, fraction: f64) -> bool {
        self.vortices
            .centers()
            .iter()
            .any(|v| chart_distance(p, v.at) < fraction * self.radius)
    }
}
