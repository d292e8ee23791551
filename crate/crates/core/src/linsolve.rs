//! Linear solves for implicit diffusion: `(diag(a) - tau * Lap) w = b` with the
//! Neumann Laplacian.
//!
//! In 1D the system is tridiagonal and is solved directly (Thomas algorithm).
//! In 2D the operator is self-adjoint in the trapezoid-weighted inner product,
//! so Jacobi-preconditioned conjugate gradients run in that inner product.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::operators::laplacian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearSolver {
    /// Tridiagonal on 1D grids, conjugate gradients on 2D grids.
    Auto,
    DirectTridiagonal,
    IterativeSymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub solver: LinearSolver,
    /// Relative residual target for the iterative solver.
    pub tol: f64,
    /// Iteration cap; `None` means 10 times the node count.
    pub max_iter: Option<usize>,
}

/// Solves `a_i w_i - tau (Lap w)_i = b_i`. Returns the solution and the
/// number of iterations used (0 for the direct solver).
pub fn solve_shifted(
    a: &[f64],
    tau: f64,
    b: &Field,
    opts: &SolveOptions,
) -> Result<(Field, usize)> {
    let g = *b.grid();
    if a.len() != g.len() {
        return Err(Error::contract("diagonal length does not match the grid"));
    }
    let solver = match opts.solver {
        LinearSolver::Auto if g.dim() == 1 => LinearSolver::DirectTridiagonal,
        LinearSolver::Auto => LinearSolver::IterativeSymmetric,
        s => s,
    };
    match solver {
        LinearSolver::DirectTridiagonal => {
            if g.dim() != 1 {
                return Err(Error::contract("the tridiagonal solver only handles 1D grids"));
            }
            Ok((thomas(&g, a, tau, b.values()), 0))
        }
        _ => pcg(&g, a, tau, b, opts),
    }
}

fn thomas(g: &Grid, a: &[f64], tau: f64, b: &[f64]) -> Field {
    let n = g.nodes(0);
    let c = tau / (g.spacing(0) * g.spacing(0));
    let lower = |i: usize| if i == n - 1 { -2.0 * c } else { -c };
    let upper = |i: usize| if i == 0 { -2.0 * c } else { -c };
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut denom = a[0] + 2.0 * c;
    cp[0] = upper(0) / denom;
    dp[0] = b[0] / denom;
    for i in 1..n {
        denom = a[i] + 2.0 * c - lower(i) * cp[i - 1];
        if i < n - 1 {
            cp[i] = upper(i) / denom;
        }
        dp[i] = (b[i] - lower(i) * dp[i - 1]) / denom;
    }
    let mut x = dp;
    for i in (0..n - 1).rev() {
        x[i] -= cp[i] * x[i + 1];
    }
    Field::from_raw(*g, x)
}

fn pcg(g: &Grid, a: &[f64], tau: f64, b: &Field, opts: &SolveOptions) -> Result<(Field, usize)> {
    let w = g.trapezoid_weights();
    let dot = |x: &[f64], y: &[f64]| -> f64 {
        x.iter().zip(y).zip(&w).map(|((x, y), w)| w * x * y).sum()
    };
    let apply = |x: &Field| -> Vec<f64> {
        let lx = laplacian(x);
        x.values()
            .iter()
            .zip(lx.values())
            .zip(a)
            .map(|((x, l), a)| a * x - tau * l)
            .collect()
    };
    let lap_diag: f64 = (0..g.dim())
        .map(|ax| 2.0 / (g.spacing(ax) * g.spacing(ax)))
        .sum();
    let inv_diag: Vec<f64> = a.iter().map(|a| 1.0 / (a + tau * lap_diag)).collect();
    let max_iter = opts.max_iter.unwrap_or(10 * g.len());

    let bnorm = dot(b.values(), b.values()).sqrt();
    if bnorm == 0.0 {
        return Ok((Field::zeros(*g), 0));
    }
    let mut x: Vec<f64> = b.values().iter().zip(&inv_diag).map(|(b, d)| b * d).collect();
    let ax = apply(&Field::from_raw(*g, x.clone()));
    let mut r: Vec<f64> = b.values().iter().zip(&ax).map(|(b, y)| b - y).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt();
    let mut it = 0;
    while res > opts.tol * bnorm {
        if it >= max_iter {
            return Err(Error::SolverDivergence {
                residual: res / bnorm,
                iterations: it,
            });
        }
        let pf = Field::from_raw(*g, p);
        let ap = apply(&pf);
        p = pf.into_values();
        let alpha = rz / dot(&p, &ap);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..z.len() {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
        res = dot(&r, &r).sqrt();
        it += 1;
    }
    Ok((Field::from_raw(*g, x), it))
}
