//! The asymptotically flat cylinder in global isothermal coordinates.
//!
//! Every cylinder is modelled on the strip `R × [0, 2π)` with metric
//! `g = λ(t, θ) (dt² + dθ²)`. Each end `t → ±∞` is compared against a flat
//! end chart through the factor `λ_flat`; the ratio `λ / λ_flat` is bounded by
//! the reported flatness constant `alpha` beyond `t_flat`.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// Wrap an angle difference into `[-π, π]`.
#[inline]
pub fn wrap_angle(delta: f64) -> f64 {
    delta - TWO_PI * (delta / TWO_PI).round()
}

/// A point of the strip, angle reduced into `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripPoint {
    pub t: f64,
    pub theta: f64,
}

impl StripPoint {
    pub fn new(t: f64, theta: f64) -> Self {
        let mut theta = theta.rem_euclid(TWO_PI);
        if theta >= TWO_PI {
            theta = 0.0;
        }
        Self { t, theta }
    }
}

/// Chart displacement `(Δt, wrap(Δθ))` from `q` to `p`.
#[inline]
pub fn chart_offset(p: StripPoint, q: StripPoint) -> (f64, f64) {
    (p.t - q.t, wrap_angle(p.theta - q.theta))
}

/// θ-wrapped Euclidean distance in the isothermal chart.
#[inline]
pub fn chart_distance(p: StripPoint, q: StripPoint) -> f64 {
    let (dt, dth) = chart_offset(p, q);
    dt.hypot(dth)
}

/// One of the two asymptotic ends of the cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum End {
    Plus,
    Minus,
}

impl End {
    pub const BOTH: [End; 2] = [End::Plus, End::Minus];

    pub fn name(self) -> &'static str {
        match self {
            End::Plus => "plus",
            End::Minus => "minus",
        }
    }
}

/// Rotationally symmetric closed-form conformal factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Profile {
    /// `λ = e^{2t} (1 + (m/2) e^{-t})⁴`, the spatial Schwarzschild slice in
    /// isotropic form, with its throat at `t = ln(m/2)`.
    Wormhole { mass: f64 },
    /// `λ = cosh² t`.
    Neck,
}

impl Profile {
    pub fn lambda(self, t: f64) -> f64 {
        match self {
            Profile::Wormhole { mass } => {
                let q = 1.0 + 0.5 * mass * (-t).exp();
                (2.0 * t).exp() * q.powi(4)
            }
            Profile::Neck => t.cosh().powi(2),
        }
    }

    /// Axial position fixed by the end-swapping reflection.
    pub fn throat(self) -> f64 {
        match self {
            Profile::Wormhole { mass } => (0.5 * mass).ln(),
            Profile::Neck => 0.0,
        }
    }

    /// Image of `t` under the reflection swapping the two ends.
    pub fn reflect(self, t: f64) -> f64 {
        2.0 * self.throat() - t
    }

    pub fn lambda_flat(self, t: f64, end: End) -> f64 {
        match (self, end) {
            (Profile::Wormhole { .. }, End::Plus) => (2.0 * t).exp(),
            (Profile::Wormhole { .. }, End::Minus) => (2.0 * self.reflect(t)).exp(),
            (Profile::Neck, _) => 0.25 * (2.0 * t.abs()).exp(),
        }
    }

    pub fn end_radius(self, t: f64, end: End) -> f64 {
        match (self, end) {
            (Profile::Wormhole { mass }, End::Plus) => {
                t.exp() * (1.0 + 0.5 * mass * (-t).exp()).powi(2)
            }
            (Profile::Wormhole { .. }, End::Minus) => {
                self.end_radius(self.reflect(t), End::Plus)
            }
            (Profile::Neck, _) => t.cosh(),
        }
    }

    /// First `t` (plus end) or last `t` (minus end) beyond which
    /// `λ / λ_flat ≤ alpha_target`. The ratio decreases monotonically to 1
    /// away from the throat for both profiles.
    pub fn end_start(self, alpha_target: f64, end: End) -> f64 {
        let plus = match self {
            Profile::Wormhole { mass } => {
                let excess = alpha_target.powf(0.25) - 1.0;
                let t = if excess >= 1.0 {
                    self.throat()
                } else {
                    (0.5 * mass).ln() - excess.ln()
                };
                t.max(self.throat())
            }
            Profile::Neck => {
                let excess = alpha_target.sqrt() - 1.0;
                if excess >= 1.0 {
                    0.0
                } else {
                    -0.5 * excess.ln()
                }
            }
        };
        match end {
            End::Plus => plus,
            End::Minus => self.reflect(plus),
        }
    }
}

/// Samples of `λ` on a uniform `(t, θ)` lattice, θ-periodic with the
/// duplicate `θ = 2π` column omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub t0: f64,
    pub dt: f64,
    pub n_t: usize,
    pub n_theta: usize,
    /// Row-major, `t` outer.
    pub values: Vec<f64>,
}

impl Table {
    pub fn t_max(&self) -> f64 {
        self.t0 + self.dt * (self.n_t - 1) as f64
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_theta + (j % self.n_theta)]
    }

    /// θ-averaged profile at every tabulated `t`.
    pub fn theta_average(&self) -> Vec<f64> {
        self.values
            .chunks(self.n_theta)
            .map(|row| row.iter().sum::<f64>() / self.n_theta as f64)
            .collect()
    }

    /// Bilinear interpolation with periodic θ wrap.
    pub fn interpolate(&self, t: f64, theta: f64) -> Result<f64> {
        let tol = 1e-12 * self.dt;
        if t < self.t0 - tol || t > self.t_max() + tol {
            return Err(Error::OutOfRange {
                t,
                t_min: self.t0,
                t_max: self.t_max(),
            });
        }
        let x = ((t - self.t0) / self.dt).clamp(0.0, (self.n_t - 1) as f64);
        let mut i = x.floor() as usize;
        if i >= self.n_t - 1 {
            i = self.n_t - 2;
        }
        let fx = x - i as f64;
        let dth = TWO_PI / self.n_theta as f64;
        let y = theta.rem_euclid(TWO_PI) / dth;
        let j = (y.floor() as usize) % self.n_theta;
        let fy = y - y.floor();
        let v00 = self.at(i, j);
        let v01 = self.at(i, j + 1);
        let v10 = self.at(i + 1, j);
        let v11 = self.at(i + 1, j + 1);
        Ok((1.0 - fx) * ((1.0 - fy) * v00 + fy * v01) + fx * ((1.0 - fy) * v10 + fy * v11))
    }

    /// Sample a closed-form profile onto a table; used to build test metrics.
    pub fn from_fn(t0: f64, dt: f64, n_t: usize, n_theta: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let dth = TWO_PI / n_theta as f64;
        let mut values = Vec::with_capacity(n_t * n_theta);
        for i in 0..n_t {
            let t = t0 + dt * i as f64;
            for j in 0..n_theta {
                values.push(f(t, dth * j as f64));
            }
        }
        Self {
            t0,
            dt,
            n_t,
            n_theta,
            values,
        }
    }

    /// Read a `t,theta,lambda` CSV (row-major, uniform, θ-periodic).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Metric(format!("csv header: {e}")))?
            .clone();
        let names: Vec<&str> = headers.iter().collect();
        if names != ["t", "theta", "lambda"] {
            return Err(Error::Metric(format!(
                "expected header `t,theta,lambda`, found `{}`",
                names.join(",")
            )));
        }
        let mut rows: Vec<[f64; 3]> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Metric(format!("csv row {}: {e}", line + 2)))?;
            let mut row = [0.0; 3];
            for (k, slot) in row.iter_mut().enumerate() {
                let field = rec.get(k).ok_or_else(|| {
                    Error::Metric(format!("csv row {}: missing column {k}", line + 2))
                })?;
                *slot = field.parse().map_err(|_| {
                    Error::Metric(format!("csv row {}: cannot parse `{field}`", line + 2))
                })?;
            }
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Metric("empty table".into()));
        }
        let t0 = rows[0][0];
        let n_theta = rows.iter().take_while(|r| r[0] == t0).count();
        if n_theta < 2 || !rows.len().is_multiple_of(n_theta) {
            return Err(Error::Metric(format!(
                "{} rows do not form a grid with {n_theta} angles per t",
                rows.len()
            )));
        }
        let n_t = rows.len() / n_theta;
        if n_t < 2 {
            return Err(Error::Metric("table needs at least two t rows".into()));
        }
        let dt = rows[n_theta][0] - t0;
        if dt <= 0.0 {
            return Err(Error::Metric("t must increase between rows".into()));
        }
        let dth = TWO_PI / n_theta as f64;
        for (k, r) in rows.iter().enumerate() {
            let (i, j) = (k / n_theta, k % n_theta);
            let t = t0 + dt * i as f64;
            if (r[0] - t).abs() > 1e-9 * (1.0 + t.abs()) {
                return Err(Error::Metric(format!("row {}: t = {} is off the uniform grid", k + 2, r[0])));
            }
            if (r[1] - dth * j as f64).abs() > 1e-9 {
                return Err(Error::Metric(format!(
                    "row {}: theta = {} is off the periodic grid (last θ row must be omitted)",
                    k + 2,
                    r[1]
                )));
            }
        }
        Ok(Self {
            t0,
            dt,
            n_t,
            n_theta,
            values: rows.iter().map(|r| r[2]).collect(),
        })
    }
}

/// The metric families supported by [`make_metric`].
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Wormhole { mass: f64 },
    Neck,
    Tabulated(Table),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricParams {
    /// Flatness level that fixes where each end chart begins.
    pub alpha_target: f64,
    /// Tabulated metrics with a larger flatness constant are flagged.
    pub alpha_max: f64,
    /// Half-length of the strip that a tabulated metric must cover.
    pub required_half_length: Option<f64>,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            alpha_target: 1.5,
            alpha_max: 100.0,
            required_half_length: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CylinderMetric {
    pub preset: Preset,
    /// `λ / λ_flat ∈ [1/α, α]` for `|t| ≥ t_flat`.
    pub t_flat: f64,
    pub alpha: f64,
    /// Closed form that supplies the end charts: the preset itself, or the
    /// nearest closed form for tabulated data.
    pub profile: Profile,
    plus_start: f64,
    minus_start: f64,
    pub warnings: Vec<String>,
}

pub fn make_metric(preset: Preset, params: MetricParams) -> Result<CylinderMetric> {
    if !(params.alpha_target > 1.0) {
        return Err(Error::Metric(format!(
            "alpha_target must exceed 1, got {}",
            params.alpha_target
        )));
    }
    let profile = match &preset {
        Preset::Wormhole { mass } => {
            if !(*mass > 0.0 && mass.is_finite()) {
                return Err(Error::Metric(format!("wormhole mass must be positive, got {mass}")));
            }
            Profile::Wormhole { mass: *mass }
        }
        Preset::Neck => Profile::Neck,
        Preset::Tabulated(table) => {
            if let Some((k, v)) = table
                .values
                .iter()
                .enumerate()
                .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
            {
                return Err(Error::Metric(format!(
                    "nonpositive conformal factor {v} at t = {}, theta index {}",
                    table.t0 + table.dt * (k / table.n_theta) as f64,
                    k % table.n_theta
                )));
            }
            if let Some(half) = params.required_half_length {
                if table.t0 > -half + 1e-12 * table.dt || table.t_max() < half - 1e-12 * table.dt {
                    return Err(Error::Metric(format!(
                        "table covers [{}, {}] but the strip needs [{}, {}]",
                        table.t0,
                        table.t_max(),
                        -half,
                        half
                    )));
                }
            }
            nearest_profile(table)
        }
    };

    let mut plus_start = profile.end_start(params.alpha_target, End::Plus);
    let mut minus_start = profile.end_start(params.alpha_target, End::Minus);
    let mut warnings = Vec::new();

    let alpha = match &preset {
        Preset::Tabulated(table) => {
            // Ends cannot begin outside the data.
            plus_start = plus_start.min(table.t_max());
            minus_start = minus_start.max(table.t0);
            let t_flat = plus_start.max(-minus_start).max(0.0);
            let mut lo = f64::INFINITY;
            let mut hi = 0.0_f64;
            for (i, row) in table.values.chunks(table.n_theta).enumerate() {
                let t = table.t0 + table.dt * i as f64;
                let end = if t >= t_flat {
                    End::Plus
                } else if t <= -t_flat {
                    End::Minus
                } else {
                    continue;
                };
                let flat = profile.lambda_flat(t, end);
                for &v in row {
                    lo = lo.min(v / flat);
                    hi = hi.max(v / flat);
                }
            }
            if hi == 0.0 {
                1.0
            } else {
                hi.max(1.0 / lo)
            }
        }
        _ => {
            let t_flat = plus_start.max(-minus_start).max(0.0);
            let ratio = |t: f64, end| profile.lambda(t) / profile.lambda_flat(t, end);
            let r = [ratio(t_flat, End::Plus), ratio(-t_flat, End::Minus)];
            r.iter().fold(1.0_f64, |a, &x| a.max(x).max(1.0 / x))
        }
    };
    if alpha > params.alpha_max {
        warnings.push(format!(
            "flatness constant {alpha:.3} exceeds alpha_max = {}",
            params.alpha_max
        ));
    }

    Ok(CylinderMetric {
        preset,
        t_flat: plus_start.max(-minus_start).max(0.0),
        alpha,
        profile,
        plus_start,
        minus_start,
        warnings,
    })
}

/// Least-squares fit of `ln λ̄` to the closed-form families.
fn nearest_profile(table: &Table) -> Profile {
    let avg = table.theta_average();
    let ts: Vec<f64> = (0..table.n_t).map(|i| table.t0 + table.dt * i as f64).collect();
    let misfit = |p: Profile| -> f64 {
        ts.iter()
            .zip(&avg)
            .map(|(&t, &v)| (v.ln() - p.lambda(t).ln()).powi(2))
            .sum()
    };
    let mut best = (misfit(Profile::Neck), Profile::Neck);
    // Coarse log-scan over the mass followed by golden-section refinement.
    let (lo, hi) = (1e-3_f64.ln(), 1e3_f64.ln());
    let n = 240;
    let scan: Vec<(f64, f64)> = (0..=n)
        .map(|k| {
            let s = lo + (hi - lo) * k as f64 / n as f64;
            (s, misfit(Profile::Wormhole { mass: s.exp() }))
        })
        .collect();
    let k_min = scan
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let step = (hi - lo) / n as f64;
    let (mut a, mut b) = (scan[k_min].0 - step, scan[k_min].0 + step);
    let g = 0.5 * (5.0_f64.sqrt() - 1.0);
    let f = |s: f64| misfit(Profile::Wormhole { mass: s.exp() });
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let s = 0.5 * (a + b);
    let worm = f(s);
    if worm < best.0 {
        best = (worm, Profile::Wormhole { mass: s.exp() });
    }
    best.1
}

impl CylinderMetric {
    pub fn conformal_factor(&self, p: StripPoint) -> Result<f64> {
        match &self.preset {
            Preset::Tabulated(table) => table.interpolate(p.t, p.theta),
            _ => Ok(self.profile.lambda(p.t)),
        }
    }

    /// First (plus) or last (minus) `t` of the end chart.
    pub fn end_start(&self, end: End) -> f64 {
        match end {
            End::Plus => self.plus_start,
            End::Minus => self.minus_start,
        }
    }

    pub fn in_end(&self, t: f64, end: End) -> bool {
        match end {
            End::Plus => t >= self.plus_start,
            End::Minus => t <= self.minus_start,
        }
    }

    /// Whether the metric is defined on the strip `[-half, half]`.
    pub fn covers(&self, half: f64) -> bool {
        match &self.preset {
            Preset::Tabulated(t) => t.t0 <= -half + 1e-12 * t.dt && t.t_max() >= half - 1e-12 * t.dt,
            _ => true,
        }
    }

    /// Euclidean radius of the end chart at axial position `t`.
    pub fn end_radius(&self, t: f64) -> Result<f64> {
        let end = if t >= self.t_flat {
            End::Plus
        } else if t <= -self.t_flat {
            End::Minus
        } else {
            return Err(Error::NotInEnd {
                t,
                t_flat: self.t_flat,
            });
        };
        self.end_radius_on(t, end)
    }

    /// End radius measured on a specific end, valid beyond that end's start.
    pub fn end_radius_on(&self, t: f64, end: End) -> Result<f64> {
        if !self.in_end(t, end) {
            return Err(Error::NotInEnd {
                t,
                t_flat: self.end_start(end).abs(),
            });
        }
        match &self.preset {
            Preset::Tabulated(table) => {
                let start = self.end_start(end);
                let (a, b) = match end {
                    End::Plus => (start, t),
                    End::Minus => (t, start),
                };
                if b > table.t_max() + 1e-12 * table.dt || a < table.t0 - 1e-12 * table.dt {
                    return Err(Error::OutOfRange {
                        t,
                        t_min: table.t0,
                        t_max: table.t_max(),
                    });
                }
                let deviation = integrate_sqrt_profile(table, self.profile, a, b);
                Ok(self.profile.end_radius(t, end) + deviation)
            }
            _ => Ok(self.profile.end_radius(t, end)),
        }
    }
}

/// Trapezoid integral of `√λ̄ − √λ_fit` over `[a, b]`, the integrand linearly
/// interpolated between table rows. Adding it to the fitted closed-form radius
/// gives `r_e(start) + ∫ √λ̄` with the closed form's own offset preserved.
fn integrate_sqrt_profile(table: &Table, fit: Profile, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let root: Vec<f64> = table
        .theta_average()
        .iter()
        .enumerate()
        .map(|(i, v)| v.sqrt() - fit.lambda(table.t0 + table.dt * i as f64).sqrt())
        .collect();
    let eval = |t: f64| {
        let x = ((t - table.t0) / table.dt).clamp(0.0, (table.n_t - 1) as f64);
        let i = (x.floor() as usize).min(table.n_t - 2);
        let f = x - i as f64;
        (1.0 - f) * root[i] + f * root[i + 1]
    };
    let mut knots = vec![a];
    let first = ((a - table.t0) / table.dt).floor() as i64 + 1;
    let mut k = first.max(0) as usize;
    while k < table.n_t {
        let t = table.t0 + table.dt * k as f64;
        if t >= b {
            break;
        }
        if t > a {
            knots.push(t);
        }
        k += 1;
    }
    knots.push(b);
    knots
        .windows(2)
        .map(|w| 0.5 * (w[1] - w[0]) * (eval(w[0]) + eval(w[1])))
        .sum()
}
