//! Couplings between the two protected groups.
//!
//! The coupling problem is a transportation LP with uniform marginals
//! `1/n0` (rows, group 0) and `1/n1` (columns, group 1). It is solved exactly
//! by a transportation simplex, approximately by log-domain Sinkhorn, or
//! blockwise over a [`Partitioning`](crate::data::Partitioning).

mod partitioned;
mod simplex;
mod sinkhorn;

use std::io::Write;

use crate::clustering::{Centers, Mode};
use crate::data::Dataset;
use crate::error::{Error, Result};

pub use partitioned::{solve_partitioned, BlockCosts, PartitionedSolver, SolverKind};
pub use simplex::{solve_lp, solve_lp_with, LpBasis, LpOptions, LpSolution, Pricing};
pub use sinkhorn::{
    solve_sinkhorn, solve_sinkhorn_with, SinkhornOptions, SinkhornPotentials, SinkhornSolution,
};

/// Entries below this fraction of the total mass are not part of the support.
pub const MASS_EPS: f64 = 1e-12;

/// Dense row-major cost matrix between group-0 rows and group-1 columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Vec<f64>,
    rows: usize,
    cols: usize,
    row_ids: Vec<usize>,
    col_ids: Vec<usize>,
}

impl CostMatrix {
    pub fn new(
        entries: Vec<f64>,
        rows: usize,
        cols: usize,
        row_ids: Vec<usize>,
        col_ids: Vec<usize>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter("empty cost matrix".into()));
        }
        if entries.len() != rows * cols || row_ids.len() != rows || col_ids.len() != cols {
            return Err(Error::InvalidParameter(format!(
                "cost matrix shape mismatch: {} entries for {rows}x{cols}",
                entries.len()
            )));
        }
        if let Some(v) = entries.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "cost entries must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self {
            entries,
            rows,
            cols,
            row_ids,
            col_ids,
        })
    }

    /// Cost matrix with local indices as ids.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidParameter("ragged cost matrix".into()));
        }
        Self::new(
            rows.concat(),
            r,
            c,
            (0..r).collect(),
            (0..c).collect(),
        )
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        Self::new(entries, rows, cols, (0..rows).collect(), (0..cols).collect())
    }

    pub(crate) fn from_parts_unchecked(
        entries: Vec<f64>,
        rows: usize,
        cols: usize,
        row_ids: Vec<usize>,
        col_ids: Vec<usize>,
    ) -> Self {
        debug_assert_eq!(entries.len(), rows * cols);
        Self {
            entries,
            rows,
            cols,
            row_ids,
            col_ids,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[usize] {
        &self.col_ids
    }

    /// Entrywise sum; both matrices must index the same rows and columns.
    pub fn plus(&self, other: &CostMatrix) -> Result<CostMatrix> {
        if self.rows != other.rows
            || self.cols != other.cols
            || self.row_ids != other.row_ids
            || self.col_ids != other.col_ids
        {
            return Err(Error::InvalidParameter("cost matrices index different pairs".into()));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self::from_parts_unchecked(
            entries,
            self.rows,
            self.cols,
            self.row_ids.clone(),
            self.col_ids.clone(),
        ))
    }

    /// Adds `c` to every entry.
    pub fn shifted(&self, c: f64) -> Result<CostMatrix> {
        Self::new(
            self.entries.iter().map(|v| v + c).collect(),
            self.rows,
            self.cols,
            self.row_ids.clone(),
            self.col_ids.clone(),
        )
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }
}

/// A joint distribution over group-0 x group-1 pairs.
///
/// Entries are stored sparsely as `(row, col, mass)` with local indices,
/// sorted by `(row, col)`. `row_ids`/`col_ids` map local indices back to
/// dataset rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    rows: usize,
    cols: usize,
    row_ids: Vec<usize>,
    col_ids: Vec<usize>,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
    entries: Vec<(usize, usize, f64)>,
}

impl Coupling {
    pub fn new(
        row_ids: Vec<usize>,
        col_ids: Vec<usize>,
        row_marginal: Vec<f64>,
        col_marginal: Vec<f64>,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        let rows = row_ids.len();
        let cols = col_ids.len();
        if row_marginal.len() != rows || col_marginal.len() != cols {
            return Err(Error::InvalidParameter("marginal length mismatch".into()));
        }
        if entries
            .iter()
            .any(|&(i, j, g)| i >= rows || j >= cols || !(g.is_finite() && g >= 0.0))
        {
            return Err(Error::InvalidParameter("invalid coupling entry".into()));
        }
        entries.retain(|e| e.2 > 0.0);
        entries.sort_by_key(|&(i, j, _)| (i, j));
        Ok(Self {
            rows,
            cols,
            row_ids,
            col_ids,
            row_marginal,
            col_marginal,
            entries,
        })
    }

    /// Uniform-marginal coupling from a dense `rows x cols` matrix.
    pub fn from_dense(
        dense: &[f64],
        rows: usize,
        cols: usize,
        row_ids: Vec<usize>,
        col_ids: Vec<usize>,
    ) -> Result<Self> {
        let entries = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, dense[i * cols + j]))
            .collect();
        Self::new(
            row_ids,
            col_ids,
            vec![1.0 / rows as f64; rows],
            vec![1.0 / cols as f64; cols],
            entries,
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[usize] {
        &self.col_ids
    }

    /// Target row masses.
    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    /// Target column masses.
    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    /// All strictly positive entries.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }


    /// Entries above `MASS_EPS` times the total mass.
    pub fn support(&self) -> impl Iterator<Item = &(usize, usize, f64)> {
        let cut = MASS_EPS * self.total_mass();
        self.entries.iter().filter(move |e| e.2 > cut)
    }

    pub fn support_len(&self) -> usize {
        self.support().count()
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.rows];
        for &(i, _, g) in &self.entries {
            sums[i] += g;
        }
        sums
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for &(_, j, g) in &self.entries {
            sums[j] += g;
        }
        sums
    }

    /// Largest absolute deviation of any row or column sum from its target.
    pub fn marginal_violation(&self) -> f64 {
        let rows = self
            .row_sums()
            .iter()
            .zip(&self.row_marginal)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let cols = self
            .col_sums()
            .iter()
            .zip(&self.col_marginal)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        rows.max(cols)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.rows * self.cols];
        for &(i, j, g) in &self.entries {
            dense[i * self.cols + j] += g;
        }
        dense
    }

    /// `sum_ij gamma_ij cost_ij`.
    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        debug_assert_eq!((cost.rows, cost.cols), (self.rows, self.cols));
        self.entries.iter().map(|&(i, j, g)| g * cost.get(i, j)).sum()
    }

    /// Writes `i,j,gamma` triplets using dataset row ids.
    pub fn write_triplets<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "gamma"])?;
        for &(i, j, g) in self.support() {
            w.write_record(&[
                self.row_ids[i].to_string(),
                self.col_ids[j].to_string(),
                format!("{g:e}"),
            ])?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<coupling>".into(),
            source,
        })?;
        Ok(())
    }
}

/// `pi0 * x0 + pi1 * x1`, written into `out`.
#[inline]
pub(crate) fn align_into(out: &mut [f64], x0: &[f64], x1: &[f64], pi0: f64, pi1: f64) {
    for ((o, a), b) in out.iter_mut().zip(x0).zip(x1) {
        *o = pi0 * a + pi1 * b;
    }
}

/// Per-pair transport term between group-0 row `x0` and group-1 row `x1`.
///
/// K-means: `pi0 * pi1 * ||x0 - x1||^2`, the exact gap between
/// `pi0 ||x0 - mu||^2 + pi1 ||x1 - mu||^2` and `||T - mu||^2`.
/// K-median: `2 * pi0 * pi1 * ||x0 - x1||_1`, the triangle-inequality bound.
#[inline]
pub fn transport_term(x0: &[f64], x1: &[f64], pi0: f64, pi1: f64, mode: Mode) -> f64 {
    match mode {
        Mode::KMeans => pi0 * pi1 * crate::clustering::sq_dist(x0, x1),
        Mode::KMedian => 2.0 * pi0 * pi1 * crate::clustering::l1_dist(x0, x1),
    }
}

/// Transport matrix `C` and aligned-clustering matrix `D` over the full
/// group-0 x group-1 product.
pub fn build_cost_matrices(
    ds: &Dataset,
    centers: &Centers,
    mode: Mode,
) -> Result<(CostMatrix, CostMatrix)> {
    if ds.n_groups() != 2 {
        return Err(Error::Unsupported(format!(
            "cost matrices need two groups, dataset has {}",
            ds.n_groups()
        )));
    }
    let rows = ds.group_index(0).to_vec();
    let cols = ds.group_index(1).to_vec();
    Ok(block_cost_matrices(ds, &rows, &cols, centers, mode))
}

pub(crate) fn block_cost_matrices(
    ds: &Dataset,
    rows: &[usize],
    cols: &[usize],
    centers: &Centers,
    mode: Mode,
) -> (CostMatrix, CostMatrix) {
    let c = transport_matrix(ds, rows, cols, mode);
    let d = aligned_matrix(ds, rows, cols, centers, mode);
    (c, d)
}

pub(crate) fn transport_matrix(ds: &Dataset, rows: &[usize], cols: &[usize], mode: Mode) -> CostMatrix {
    let (pi0, pi1) = (ds.pi(0), ds.pi(1));
    let mut entries = Vec::with_capacity(rows.len() * cols.len());
    for &i in rows {
        let xi = ds.row(i);
        entries.extend(cols.iter().map(|&j| transport_term(xi, ds.row(j), pi0, pi1, mode)));
    }
    CostMatrix::from_parts_unchecked(entries, rows.len(), cols.len(), rows.to_vec(), cols.to_vec())
}

pub(crate) fn aligned_matrix(
    ds: &Dataset,
    rows: &[usize],
    cols: &[usize],
    centers: &Centers,
    mode: Mode,
) -> CostMatrix {
    use rayon::prelude::*;
    let (pi0, pi1) = (ds.pi(0), ds.pi(1));
    let ncols = cols.len();
    let mut entries = vec![0.0; rows.len() * ncols];
    let fill = |(r, out): (usize, &mut [f64])| {
        let xi = ds.row(rows[r]);
        let mut t = vec![0.0; ds.dim()];
        for (o, &j) in out.iter_mut().zip(cols) {
            align_into(&mut t, xi, ds.row(j), pi0, pi1);
            *o = centers.nearest(&t, mode).1;
        }
    };
    if rows.len() * ncols * centers.k() >= 1 << 16 {
        entries.par_chunks_mut(ncols).enumerate().for_each(fill);
    } else {
        entries.chunks_mut(ncols).enumerate().for_each(fill);
    }
    CostMatrix::from_parts_unchecked(entries, rows.len(), ncols, rows.to_vec(), cols.to_vec())
}
