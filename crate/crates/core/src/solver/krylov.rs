//! Right-preconditioned BiCGSTAB for the (possibly indefinite) Newton systems.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{dot, GridField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KrylovOptions {
    /// Relative residual target `‖b − Ax‖ ≤ tol ‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 4000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KrylovOutcome {
    pub x: GridField,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    pub breakdown: bool,
}

/// `y ← y + a x`
fn axpy(y: &mut GridField, a: f64, x: &GridField) {
    y.values
        .par_iter_mut()
        .zip(x.values.par_iter())
        .for_each(|(y, x)| *y += a * x);
}

fn scaled(x: &GridField, diag_inv: &GridField) -> GridField {
    x.zip_map(diag_inv, |a, m| a * m)
}

/// Solve `A x = b` from `x = 0`. `diag_inv` is the inverse Jacobi
/// preconditioner; entries of `b` that must stay zero (Dirichlet rows) stay
/// zero as long as `apply` and `diag_inv` preserve them.
pub fn bicgstab(
    apply: impl Fn(&GridField) -> GridField,
    diag_inv: &GridField,
    b: &GridField,
    opts: &KrylovOptions,
) -> KrylovOutcome {
    let b_norm = dot(b, b).sqrt();
    let mut x = GridField {
        n_t: b.n_t,
        n_theta: b.n_theta,
        values: vec![0.0; b.values.len()],
    };
    if b_norm == 0.0 {
        return KrylovOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            breakdown: false,
        };
    }
    let target = opts.tol * b_norm;
    let mut r = b.clone();
    let r_hat = b.clone();
    let mut p = x.clone();
    let mut v = x.clone();
    let (mut rho, mut alpha, mut omega) = (1.0_f64, 1.0_f64, 1.0_f64);
    let tiny = f64::MIN_POSITIVE.sqrt();

    let finish = |x: GridField, it: usize, r_norm: f64, converged: bool, breakdown: bool| KrylovOutcome {
        x,
        iterations: it,
        relative_residual: r_norm / b_norm,
        converged,
        breakdown,
    };

    let mut r_norm = b_norm;
    for it in 1..=opts.max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < tiny || !rho_new.is_finite() {
            return finish(x, it - 1, r_norm, false, true);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        // p ← r + β (p − ω v)
        p.values
            .par_iter_mut()
            .zip(r.values.par_iter().zip(v.values.par_iter()))
            .for_each(|(p, (r, v))| *p = r + beta * (*p - omega * v));
        let p_hat = scaled(&p, diag_inv);
        v = apply(&p_hat);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 || !denom.is_finite() {
            return finish(x, it, r_norm, false, true);
        }
        alpha = rho / denom;
        let mut s = r.clone();
        axpy(&mut s, -alpha, &v);
        let s_norm = dot(&s, &s).sqrt();
        if s_norm <= target {
            axpy(&mut x, alpha, &p_hat);
            return finish(x, it, s_norm, true, false);
        }
        let s_hat = scaled(&s, diag_inv);
        let t = apply(&s_hat);
        let tt = dot(&t, &t);
        if tt == 0.0 || !tt.is_finite() {
            return finish(x, it, r_norm, false, true);
        }
        omega = dot(&t, &s) / tt;
        axpy(&mut x, alpha, &p_hat);
        axpy(&mut x, omega, &s_hat);
        r = s;
        axpy(&mut r, -omega, &t);
        r_norm = dot(&r, &r).sqrt();
        if r_norm <= target {
            return finish(x, it, r_norm, true, false);
        }
        if omega == 0.0 {
            return finish(x, it, r_norm, false, true);
        }
    }
    finish(x, opts.max_iter, r_norm, false, false)
}
