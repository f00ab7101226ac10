//! Blockwise coupling over a partitioning of both groups.
//!
//! Each block is an independent transport problem with uniform marginals over
//! its own members; the block couplings are scaled by `1/L` and stacked into
//! one sparse coupling indexed by position within each group.

use rayon::prelude::*;

use super::simplex::{solve_lp_with, LpBasis, LpOptions};
use super::sinkhorn::{solve_sinkhorn_with, SinkhornOptions, SinkhornPotentials};
use super::{transport_matrix, CostMatrix, Coupling};
use crate::clustering::{Centers, Mode};
use crate::data::{Dataset, Partitioning};
use crate::error::{Error, Result};

/// Which transport solver runs inside each block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverKind {
    Lp,
    Sinkhorn { lambda: f64 },
}

impl Default for SolverKind {
    fn default() -> Self {
        SolverKind::Lp
    }
}

/// One block's group-0 rows, group-1 columns and fixed transport matrix.
#[derive(Debug, Clone)]
pub struct BlockCosts {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub transport: CostMatrix,
}

#[derive(Debug, Clone)]
enum Warm {
    None,
    Lp(LpBasis),
    Sinkhorn(SinkhornPotentials),
}

/// Holds per-block transport matrices and solver warm starts across repeated
/// solves with changing clustering costs.
#[derive(Debug, Clone)]
pub struct PartitionedSolver {
    kind: SolverKind,
    blocks: Vec<BlockCosts>,
    warm: Vec<Warm>,
    /// Position of each dataset row within its group.
    position: Vec<usize>,
    row_ids: Vec<usize>,
    col_ids: Vec<usize>,
}

impl PartitionedSolver {
    pub fn new(ds: &Dataset, partitioning: &Partitioning, kind: SolverKind, mode: Mode) -> Result<Self> {
        if ds.n_groups() != 2 {
            return Err(Error::Unsupported(format!(
                "pairwise coupling needs two groups, dataset has {}",
                ds.n_groups()
            )));
        }
        if let SolverKind::Sinkhorn { lambda } = kind {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "sinkhorn lambda must be positive, got {lambda}"
                )));
            }
        }
        check_cover(ds, partitioning)?;
        let mut position = vec![0; ds.n()];
        for s in 0..2 {
            for (p, &i) in ds.group_index(s).iter().enumerate() {
                position[i] = p;
            }
        }
        let blocks: Vec<BlockCosts> = partitioning
            .blocks()
            .par_iter()
            .map(|b| BlockCosts {
                rows: b[0].clone(),
                cols: b[1].clone(),
                transport: transport_matrix(ds, &b[0], &b[1], mode),
            })
            .collect();
        Ok(Self {
            kind,
            warm: vec![Warm::None; blocks.len()],
            blocks,
            position,
            row_ids: ds.group_index(0).to_vec(),
            col_ids: ds.group_index(1).to_vec(),
        })
    }

    pub fn blocks(&self) -> &[BlockCosts] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    /// Solves every block with the cost returned by `block_cost(l, block)`
    /// and assembles the global coupling. Returns the coupling and its
    /// objective `sum gamma * cost`.
    pub fn solve<F>(&mut self, block_cost: F) -> Result<(Coupling, f64)>
    where
        F: Fn(usize, &BlockCosts) -> CostMatrix + Sync,
    {
        let kind = self.kind;
        let solved: Vec<Result<(Coupling, f64, Warm)>> = self
            .blocks
            .par_iter()
            .zip(self.warm.par_iter())
            .enumerate()
            .map(|(l, (block, warm))| {
                let cost = block_cost(l, block);
                solve_block(&cost, kind, warm).map_err(|e| Error::Block {
                    block: l,
                    source: Box::new(e),
                })
            })
            .collect();

        let n_blocks = self.blocks.len() as f64;
        let mut row_marginal = vec![0.0; self.row_ids.len()];
        let mut col_marginal = vec![0.0; self.col_ids.len()];
        let mut entries = Vec::new();
        let mut objective = 0.0;
        for (l, result) in solved.into_iter().enumerate() {
            let (coupling, obj, warm) = result?;
            self.warm[l] = warm;
            objective += obj / n_blocks;
            let block = &self.blocks[l];
            for &i in &block.rows {
                row_marginal[self.position[i]] = 1.0 / (n_blocks * block.rows.len() as f64);
            }
            for &j in &block.cols {
                col_marginal[self.position[j]] = 1.0 / (n_blocks * block.cols.len() as f64);
            }
            entries.extend(coupling.entries().iter().map(|&(i, j, g)| {
                (
                    self.position[block.rows[i]],
                    self.position[block.cols[j]],
                    g / n_blocks,
                )
            }));
        }
        let coupling = Coupling::new(
            self.row_ids.clone(),
            self.col_ids.clone(),
            row_marginal,
            col_marginal,
            entries,
        )?;
        Ok((coupling, objective))
    }
}

fn solve_block(cost: &CostMatrix, kind: SolverKind, warm: &Warm) -> Result<(Coupling, f64, Warm)> {
    match kind {
        SolverKind::Lp => {
            let basis = match warm {
                Warm::Lp(b) => Some(b),
                _ => None,
            };
            let sol = solve_lp_with(cost, &LpOptions::default(), basis)?;
            Ok((sol.coupling, sol.objective, Warm::Lp(sol.basis)))
        }
        SolverKind::Sinkhorn { lambda } => {
            let pots = match warm {
                Warm::Sinkhorn(p) => Some(p),
                _ => None,
            };
            let sol = solve_sinkhorn_with(cost, &SinkhornOptions::new(lambda), pots)?;
            let obj = sol.coupling.cost(cost);
            Ok((sol.coupling, obj, Warm::Sinkhorn(sol.potentials)))
        }
    }
}

fn check_cover(ds: &Dataset, partitioning: &Partitioning) -> Result<()> {
    for s in 0..2 {
        let mut seen = vec![false; ds.n()];
        let mut count = 0;
        for block in partitioning.blocks() {
            if block.len() < 2 || block[s].is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "partition block has no members of group {s}"
                )));
            }
            for &i in &block[s] {
                if i >= ds.n() || ds.groups()[i] != s || seen[i] {
                    return Err(Error::InvalidParameter(format!(
                        "partitioning does not cover group {s} exactly"
                    )));
                }
                seen[i] = true;
                count += 1;
            }
        }
        if count != ds.group_size(s) {
            return Err(Error::InvalidParameter(format!(
                "partitioning does not cover group {s} exactly"
            )));
        }
    }
    Ok(())
}

/// One-shot blockwise solve of the FCA cost `C + D` at `centers`.
pub fn solve_partitioned(
    ds: &Dataset,
    centers: &Centers,
    partitioning: &Partitioning,
    kind: SolverKind,
    mode: Mode,
) -> Result<Coupling> {
    let mut solver = PartitionedSolver::new(ds, partitioning, kind, mode)?;
    let (coupling, _) = solver.solve(|_, b| {
        let d = super::aligned_matrix(ds, &b.rows, &b.cols, centers, mode);
        b.transport.plus(&d).expect("same block indices")
    })?;
    Ok(coupling)
}
