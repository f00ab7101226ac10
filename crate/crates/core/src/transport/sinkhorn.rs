//! Entropic transport by log-domain Sinkhorn iterations.
//!
//! Dual potentials `f`, `g` are updated by log-sum-exp so that small `lambda`
//! does not underflow. Without a warm start, `lambda` is annealed down from
//! the cost scale. The final plan is projected onto the exact marginals by the
//! row/column capping and rank-one correction rounding step.

use rayon::prelude::*;

use super::{CostMatrix, Coupling};
use crate::error::{Error, Result};

const PARALLEL_MIN: usize = 1 << 16;
const CHECK_EVERY: usize = 10;

#[derive(Debug, Clone)]
pub struct SinkhornOptions {
    pub lambda: f64,
    pub max_iter: usize,
    /// L1 marginal violation at which iterations stop (before rounding).
    pub tol: f64,
    /// Anneal lambda from the cost scale when not warm-started.
    pub eps_scaling: bool,
}

impl SinkhornOptions {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            max_iter: 10_000,
            tol: 1e-9,
            eps_scaling: true,
        }
    }
}

/// Dual potentials, reusable as a warm start on a same-shaped problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornPotentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub coupling: Coupling,
    pub potentials: SinkhornPotentials,
    pub iterations: usize,
    /// L1 row-marginal violation before rounding.
    pub violation: f64,
}

pub fn solve_sinkhorn(cost: &CostMatrix, lambda: f64, max_iter: usize, tol: f64) -> Result<Coupling> {
    let opts = SinkhornOptions {
        lambda,
        max_iter,
        tol,
        eps_scaling: true,
    };
    solve_sinkhorn_with(cost, &opts, None).map(|s| s.coupling)
}

pub fn solve_sinkhorn_with(
    cost: &CostMatrix,
    opts: &SinkhornOptions,
    warm: Option<&SinkhornPotentials>,
) -> Result<SinkhornSolution> {
    let lambda = opts.lambda;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("sinkhorn lambda must be positive, got {lambda}")));
    }
    if opts.max_iter == 0 {
        return Err(Error::InvalidParameter("sinkhorn max_iter must be positive".into()));
    }
    let (n0, n1) = (cost.rows(), cost.cols());
    let c = cost.entries();
    let ct = transpose(c, n0, n1);
    let log_a = -(n0 as f64).ln();
    let log_b = -(n1 as f64).ln();

    let warm = warm.filter(|w| w.f.len() == n0 && w.g.len() == n1);
    let (mut f, mut g) = match warm {
        Some(w) => (w.f.clone(), w.g.clone()),
        None => (vec![0.0; n0], vec![0.0; n1]),
    };

    let mut stages = Vec::new();
    if warm.is_none() && opts.eps_scaling {
        let mut l = cost.max_entry();
        while l > 2.0 * lambda {
            stages.push(l);
            l *= 0.5;
        }
    }
    stages.push(lambda);

    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    let last = stages.len() - 1;
    for (s, &l) in stages.iter().enumerate() {
        let (tol, cap) = if s == last {
            (opts.tol, opts.max_iter)
        } else {
            (opts.tol.max(1e-4), opts.max_iter)
        };
        for it in 0..cap {
            lse_update(&mut f, &g, c, n1, l, log_a);
            lse_update(&mut g, &f, &ct, n0, l, log_b);
            iterations += 1;
            if (it + 1) % CHECK_EVERY == 0 || it + 1 == cap {
                violation = row_violation(&f, &g, c, n1, l, 1.0 / n0 as f64);
                if !violation.is_finite() {
                    return Err(Error::SinkhornUnderflow(lambda));
                }
                if violation <= tol {
                    break;
                }
            }
        }
    }
    if f.iter().chain(&g).any(|v| !v.is_finite()) {
        return Err(Error::SinkhornUnderflow(lambda));
    }
    if violation > opts.tol {
        log::warn!(
            "sinkhorn stopped at marginal violation {violation:.3e} after {iterations} iterations"
        );
    }

    let mut plan: Vec<f64> = vec![0.0; n0 * n1];
    for i in 0..n0 {
        for j in 0..n1 {
            plan[i * n1 + j] = ((f[i] + g[j] - c[i * n1 + j]) / lambda).exp();
        }
    }
    if plan.iter().all(|&v| v == 0.0) {
        return Err(Error::SinkhornUnderflow(lambda));
    }
    round_to_marginals(&mut plan, n0, n1);
    let coupling = Coupling::from_dense(
        &plan,
        n0,
        n1,
        cost.row_ids().to_vec(),
        cost.col_ids().to_vec(),
    )?;
    Ok(SinkhornSolution {
        coupling,
        potentials: SinkhornPotentials { f, g },
        iterations,
        violation,
    })
}

fn transpose(c: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; c.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = c[i * cols + j];
        }
    }
    t
}

/// `out_i = lambda * (log_mass - LSE_j((other_j - c_ij) / lambda))`.
fn lse_update(out: &mut [f64], other: &[f64], c: &[f64], width: usize, lambda: f64, log_mass: f64) {
    let row = |(i, o): (usize, &mut f64)| {
        let cr = &c[i * width..(i + 1) * width];
        let mut m = f64::NEG_INFINITY;
        for (oj, cj) in other.iter().zip(cr) {
            m = m.max((oj - cj) / lambda);
        }
        let s: f64 = other
            .iter()
            .zip(cr)
            .map(|(oj, cj)| ((oj - cj) / lambda - m).exp())
            .sum();
        *o = lambda * (log_mass - m - s.ln());
    };
    if out.len() * width >= PARALLEL_MIN {
        out.par_iter_mut().enumerate().for_each(row);
    } else {
        out.iter_mut().enumerate().for_each(row);
    }
}

fn row_violation(f: &[f64], g: &[f64], c: &[f64], n1: usize, lambda: f64, a: f64) -> f64 {
    let row = |i: usize| {
        let cr = &c[i * n1..(i + 1) * n1];
        let r: f64 = g
            .iter()
            .zip(cr)
            .map(|(gj, cj)| ((f[i] + gj - cj) / lambda).exp())
            .sum();
        (r - a).abs()
    };
    if f.len() * n1 >= PARALLEL_MIN {
        (0..f.len()).into_par_iter().map(row).collect::<Vec<_>>().iter().sum()
    } else {
        (0..f.len()).map(row).sum()
    }
}

/// Projects a positive plan onto the uniform marginals: cap rows, cap
/// columns, then add the rank-one correction of the remaining deficits.
fn round_to_marginals(plan: &mut [f64], n0: usize, n1: usize) {
    let a = 1.0 / n0 as f64;
    let b = 1.0 / n1 as f64;
    for row in plan.chunks_mut(n1) {
        let r: f64 = row.iter().sum();
        if r > a {
            let x = a / r;
            row.iter_mut().for_each(|v| *v *= x);
        }
    }
    let mut cols = vec![0.0; n1];
    for row in plan.chunks(n1) {
        for (s, v) in cols.iter_mut().zip(row) {
            *s += v;
        }
    }
    let y: Vec<f64> = cols.iter().map(|&s| if s > b { b / s } else { 1.0 }).collect();
    for row in plan.chunks_mut(n1) {
        for (v, yj) in row.iter_mut().zip(&y) {
            *v *= yj;
        }
    }
    let err_r: Vec<f64> = plan
        .chunks(n1)
        .map(|row| (a - row.iter().sum::<f64>()).max(0.0))
        .collect();
    let mut err_c = vec![b; n1];
    for row in plan.chunks(n1) {
        for (e, v) in err_c.iter_mut().zip(row) {
            *e -= v;
        }
    }
    err_c.iter_mut().for_each(|e| *e = e.max(0.0));
    let total: f64 = err_r.iter().sum();
    if total > 0.0 {
        for (row, er) in plan.chunks_mut(n1).zip(&err_r) {
            for (v, ec) in row.iter_mut().zip(&err_c) {
                *v += er * ec / total;
            }
        }
    }
}
