//! Uniform tensor grid on the truncated strip `[-T, T] × [0, 2π)`.
//!
//! θ is periodic; the first and last `t` rows carry Dirichlet data. All sums
//! go through [`pairwise_sum`] over per-row partials, so results do not depend
//! on the number of worker threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CylinderMetric, StripPoint, TWO_PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripGrid {
    pub half_length: f64,
    pub n_t: usize,
    pub n_theta: usize,
    pub dt: f64,
    pub dtheta: f64,
}

impl StripGrid {
    pub fn new(half_length: f64, n_t: usize, n_theta: usize) -> Result<Self> {
        if !(half_length > 0.0 && half_length.is_finite()) {
            return Err(Error::Grid(format!("half length must be positive, got {half_length}")));
        }
        if n_t < 9 {
            return Err(Error::Grid(format!("n_t = {n_t} < 9")));
        }
        if n_theta < 8 || !n_theta.is_multiple_of(2) {
            return Err(Error::Grid(format!("n_theta = {n_theta} must be even and ≥ 8")));
        }
        Ok(Self {
            half_length,
            n_t,
            n_theta,
            dt: 2.0 * half_length / (n_t - 1) as f64,
            dtheta: TWO_PI / n_theta as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.n_t * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_t, self.n_theta)
    }

    pub fn t(&self, i: usize) -> f64 {
        -self.half_length + self.dt * i as f64
    }

    pub fn theta(&self, j: usize) -> f64 {
        self.dtheta * j as f64
    }

    pub fn node(&self, i: usize, j: usize) -> StripPoint {
        StripPoint::new(self.t(i), self.theta(j))
    }

    pub fn max_spacing(&self) -> f64 {
        self.dt.max(self.dtheta)
    }

    pub fn aspect_warning(&self) -> Option<String> {
        let ratio = self.dt / self.dtheta;
        (!(0.25..=4.0).contains(&ratio))
            .then(|| format!("spacing aspect ratio dt/dθ = {ratio:.3} outside [1/4, 4]"))
    }

    /// Nearest cell centre, half a spacing away from every node in both
    /// directions.
    pub fn snap_to_cell(&self, p: StripPoint) -> StripPoint {
        let x = (p.t + self.half_length) / self.dt - 0.5;
        let i = x.round().clamp(0.0, (self.n_t - 2) as f64);
        let y = p.theta / self.dtheta - 0.5;
        let j = y.round().rem_euclid(self.n_theta as f64);
        StripPoint::new(
            -self.half_length + (i + 0.5) * self.dt,
            (j + 0.5) * self.dtheta,
        )
    }

    /// Trapezoid weight of row `i` in `t`.
    pub fn row_weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n_t {
            0.5
        } else {
            1.0
        }
    }

    pub fn summary(&self) -> GridSummary {
        GridSummary {
            n_t: self.n_t,
            n_theta: self.n_theta,
            half_length: self.half_length,
            dt: self.dt,
            dtheta: self.dtheta,
        }
    }
}

/// Sidecar record accompanying every field dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub n_t: usize,
    pub n_theta: usize,
    pub half_length: f64,
    pub dt: f64,
    pub dtheta: f64,
}

/// Node values, row-major with `t` outer.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub n_t: usize,
    pub n_theta: usize,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: &StripGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &StripGrid, value: f64) -> Self {
        Self {
            n_t: grid.n_t,
            n_theta: grid.n_theta,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: &StripGrid, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let mut out = Self::zeros(grid);
        out.values
            .par_chunks_mut(grid.n_theta)
            .enumerate()
            .for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = f(i, j);
                }
            });
        out
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_t, self.n_theta)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_theta + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n_theta + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_theta..(i + 1) * self.n_theta]
    }

    pub fn check_shape(&self, grid: &StripGrid) -> Result<()> {
        if self.shape() != grid.shape() || self.values.len() != grid.len() {
            return Err(Error::Shape {
                expected: grid.shape(),
                got: self.shape(),
            });
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(Error::NonFinite {
                i_t: k / self.n_theta,
                i_theta: k % self.n_theta,
                value: self.values[k],
            }),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self {
            n_t: self.n_t,
            n_theta: self.n_theta,
            values: self.values.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            n_t: self.n_t,
            n_theta: self.n_theta,
            values: self
                .values
                .par_iter()
                .zip(other.values.par_iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Pairwise (tree) summation in a fixed order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Pairwise summation of `term(k)` for `k` in `lo..hi`, without allocating.
pub fn pairwise_sum_by(lo: usize, hi: usize, term: &impl Fn(usize) -> f64) -> f64 {
    match hi - lo {
        0 => 0.0,
        1 => term(lo),
        2 => term(lo) + term(lo + 1),
        n => {
            let mid = lo + n / 2;
            pairwise_sum_by(lo, mid, term) + pairwise_sum_by(mid, hi, term)
        }
    }
}

/// Sum `f(i, row)` over all rows: rows in parallel, combined by a fixed tree.
pub fn row_reduce(n_rows: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    let partials: Vec<f64> = (0..n_rows).into_par_iter().map(f).collect();
    pairwise_sum(&partials)
}

/// Unweighted inner product of two fields.
pub fn dot(a: &GridField, b: &GridField) -> f64 {
    let n = a.n_theta;
    row_reduce(a.n_t, |i| {
        let (x, y) = (&a.values[i * n..(i + 1) * n], &b.values[i * n..(i + 1) * n]);
        pairwise_sum_by(0, n, &|k| x[k] * y[k])
    })
}

/// Flat five-point Laplacian, periodic in θ. Boundary rows act as Dirichlet
/// data for their neighbours; the output vanishes on them.
pub fn laplacian_chart(grid: &StripGrid, f: &GridField) -> Result<GridField> {
    f.check_shape(grid)?;
    let (nt, nth) = grid.shape();
    let (it2, ith2) = (1.0 / (grid.dt * grid.dt), 1.0 / (grid.dtheta * grid.dtheta));
    let mut out = GridField::zeros(grid);
    out.values
        .par_chunks_mut(nth)
        .enumerate()
        .for_each(|(i, row)| {
            if i == 0 || i + 1 == nt {
                return;
            }
            let (up, mid, down) = (f.row(i + 1), f.row(i), f.row(i - 1));
            for j in 0..nth {
                let jl = if j == 0 { nth - 1 } else { j - 1 };
                let jr = if j + 1 == nth { 0 } else { j + 1 };
                row[j] = (up[j] - 2.0 * mid[j] + down[j]) * it2
                    + (mid[jr] - 2.0 * mid[j] + mid[jl]) * ith2;
            }
        });
    Ok(out)
}

/// `Δ_g f = λ⁻¹ Δ₀ f` with `lambda` the sampled conformal factor.
pub fn laplacian_apply(grid: &StripGrid, lambda: &GridField, f: &GridField) -> Result<GridField> {
    lambda.check_shape(grid)?;
    let mut lap = laplacian_chart(grid, f)?;
    lap.values
        .par_iter_mut()
        .zip(lambda.values.par_iter())
        .for_each(|(v, l)| *v /= l);
    Ok(lap)
}

/// `∫ f dV_g = Σ f λ w dt dθ`, trapezoid in `t`.
pub fn integrate(grid: &StripGrid, lambda: &GridField, f: &GridField) -> Result<f64> {
    f.check_shape(grid)?;
    lambda.check_shape(grid)?;
    let n = grid.n_theta;
    let s = row_reduce(grid.n_t, |i| {
        let terms: Vec<f64> = f.values[i * n..(i + 1) * n]
            .iter()
            .zip(&lambda.values[i * n..(i + 1) * n])
            .map(|(a, l)| a * l)
            .collect();
        grid.row_weight(i) * pairwise_sum(&terms)
    });
    Ok(s * grid.dt * grid.dtheta)
}

/// Chart integral `Σ f w dt dθ` (no metric weight).
pub fn integrate_chart(grid: &StripGrid, f: &GridField) -> Result<f64> {
    f.check_shape(grid)?;
    let n = grid.n_theta;
    let s = row_reduce(grid.n_t, |i| {
        grid.row_weight(i) * pairwise_sum(&f.values[i * n..(i + 1) * n])
    });
    Ok(s * grid.dt * grid.dtheta)
}

/// Edge-based Dirichlet energy `∫ |∇₀f|² dt dθ`. Its gradient at interior
/// nodes is exactly `-2 Δ₀ f dt dθ` with the five-point stencil.
pub fn dirichlet_energy(grid: &StripGrid, f: &GridField) -> Result<f64> {
    f.check_shape(grid)?;
    let (nt, nth) = grid.shape();
    let (it2, ith2) = (1.0 / (grid.dt * grid.dt), 1.0 / (grid.dtheta * grid.dtheta));
    let s = row_reduce(nt, |i| {
        let mid = f.row(i);
        let mut terms = Vec::with_capacity(2 * nth);
        if i + 1 < nt {
            let up = f.row(i + 1);
            terms.extend((0..nth).map(|j| (up[j] - mid[j]).powi(2) * it2));
        }
        let w = grid.row_weight(i);
        terms.extend((0..nth).map(|j| {
            let jr = if j + 1 == nth { 0 } else { j + 1 };
            w * (mid[jr] - mid[j]).powi(2) * ith2
        }));
        pairwise_sum(&terms)
    });
    Ok(s * grid.dt * grid.dtheta)
}

/// Second-order node gradient `(∂_t f, ∂_θ f)`: central differences inside,
/// one-sided on the boundary rows.
pub fn gradient_chart(grid: &StripGrid, f: &GridField) -> Result<(GridField, GridField)> {
    f.check_shape(grid)?;
    let (nt, nth) = grid.shape();
    let (h2t, h2th) = (0.5 / grid.dt, 0.5 / grid.dtheta);
    let ft = GridField::from_fn(grid, |i, j| {
        if i == 0 {
            (-3.0 * f.get(0, j) + 4.0 * f.get(1, j) - f.get(2, j)) * h2t
        } else if i + 1 == nt {
            (3.0 * f.get(nt - 1, j) - 4.0 * f.get(nt - 2, j) + f.get(nt - 3, j)) * h2t
        } else {
            (f.get(i + 1, j) - f.get(i - 1, j)) * h2t
        }
    });
    let fth = GridField::from_fn(grid, |i, j| {
        let jl = if j == 0 { nth - 1 } else { j - 1 };
        let jr = if j + 1 == nth { 0 } else { j + 1 };
        (f.get(i, jr) - f.get(i, jl)) * h2th
    });
    Ok((ft, fth))
}

/// Sixth-order central gradient, periodic in θ. Rows within three of a
/// boundary fall back to [`gradient_chart`].
pub fn gradient_chart6(grid: &StripGrid, f: &GridField) -> Result<(GridField, GridField)> {
    const C: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
    let (low_t, _) = gradient_chart(grid, f)?;
    let (nt, nth) = grid.shape();
    let ft = GridField::from_fn(grid, |i, j| {
        if i < 3 || i + 3 >= nt {
            return low_t.get(i, j);
        }
        C.iter()
            .enumerate()
            .map(|(k, c)| c * (f.get(i + k + 1, j) - f.get(i - k - 1, j)))
            .sum::<f64>()
            / grid.dt
    });
    let fth = GridField::from_fn(grid, |i, j| {
        C.iter()
            .enumerate()
            .map(|(k, c)| c * (f.get(i, (j + k + 1) % nth) - f.get(i, (j + nth - k - 1) % nth)))
            .sum::<f64>()
            / grid.dtheta
    });
    Ok((ft, fth))
}

/// Evaluate a pointwise sampler at every node.
pub fn sample(grid: &StripGrid, sampler: impl Fn(StripPoint) -> f64 + Sync) -> Result<GridField> {
    let field = GridField::from_fn(grid, |i, j| sampler(grid.node(i, j)));
    field.check_finite()?;
    Ok(field)
}

/// Conformal factor at every node.
pub fn sample_metric(grid: &StripGrid, metric: &CylinderMetric) -> Result<GridField> {
    if !metric.covers(grid.half_length) {
        return Err(Error::Metric(format!(
            "tabulated metric does not cover [-{0}, {0}]",
            grid.half_length
        )));
    }
    let field = GridField::from_fn(grid, |i, j| {
        metric.conformal_factor(grid.node(i, j)).unwrap_or(f64::NAN)
    });
    field.check_finite()?;
    if let Some(k) = field.values.iter().position(|v| *v <= 0.0) {
        return Err(Error::Metric(format!(
            "nonpositive conformal factor at node ({}, {})",
            k / grid.n_theta,
            k % grid.n_theta
        )));
    }
    Ok(field)
}

/// Write `t,theta,value` rows, `t` outer.
pub fn write_field_csv<W: Write>(mut out: W, grid: &StripGrid, field: &GridField) -> Result<()> {
    field.check_shape(grid)?;
    let mut buf = String::with_capacity(48 * grid.len() + 16);
    buf.push_str("t,theta,value\n");
    for i in 0..grid.n_t {
        for j in 0..grid.n_theta {
            use std::fmt::Write as _;
            let _ = writeln!(buf, "{},{},{}", grid.t(i), grid.theta(j), field.get(i, j));
        }
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

/// Run `f` on a dedicated pool with `workers` threads (`None`: rayon default).
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}
