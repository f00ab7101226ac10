//! Fairness-level control: pairs whose aligned cost is in the top `epsilon`
//! quantile form an exception set that is clustered without alignment.
//!
//! This module also hosts the alternating engine shared with plain FCA,
//! which is the `epsilon = 0` case (empty exception set).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeanspp_init, lloyd_weighted, Centers, LloydOptions, Mode, WeightedPoints};
use crate::data::{make_partitioning, Dataset, Partitioning};
use crate::error::{Error, Result};
use crate::fca::{Assignment, FcaConfig, FcaResult, IterationRecord};
use crate::metrics;
use crate::transport::{
    align_into, aligned_matrix, transport_term, BlockCosts, CostMatrix, Coupling, PartitionedSolver,
};

/// How the exception-set threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileRule {
    /// At most an `epsilon` share of candidate pairs, counted unweighted.
    Unweighted,
    /// At most `epsilon` of coupling mass.
    #[default]
    Mass,
}

/// The two per-pair costs mixed by the exception set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCost {
    /// Transport term plus distance from the aligned point to its nearest center.
    pub fca_cost: f64,
    /// `pi0 min_k d(x_i, mu_k) + pi1 min_k d(x_j, mu_k)`.
    pub kmeans_cost: f64,
}

pub fn pair_cost(x0: &[f64], x1: &[f64], centers: &Centers, pi0: f64, pi1: f64, mode: Mode) -> PairCost {
    let mut t = vec![0.0; x0.len()];
    align_into(&mut t, x0, x1, pi0, pi1);
    PairCost {
        fca_cost: transport_term(x0, x1, pi0, pi1, mode) + centers.nearest(&t, mode).1,
        kmeans_cost: pi0 * centers.nearest(x0, mode).1 + pi1 * centers.nearest(x1, mode).1,
    }
}

/// Aligned cost of a pair; the exception set holds the pairs where it is largest.
pub fn eta(x0: &[f64], x1: &[f64], centers: &Centers, pi0: f64, pi1: f64, mode: Mode) -> f64 {
    pair_cost(x0, x1, centers, pi0, pi1, mode).fca_cost
}

/// Picks `{v > t}` for the smallest threshold `t` keeping the selection
/// within budget: at most `floor(epsilon * N)` values when `masses` is
/// `None`, otherwise at most `epsilon` total mass. `epsilon >= 1` selects
/// everything. Returns the mask and threshold.
pub fn quantile_select(values: &[f64], masses: Option<&[f64]>, epsilon: f64) -> (Vec<bool>, f64) {
    let n = values.len();
    if n == 0 {
        return (Vec::new(), f64::INFINITY);
    }
    if epsilon >= 1.0 {
        return (vec![true; n], f64::NEG_INFINITY);
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = match masses {
        None => {
            let allowed = (epsilon * n as f64 + 1e-9).floor() as usize;
            if allowed == 0 {
                max
            } else if allowed >= n {
                f64::NEG_INFINITY
            } else {
                // The (allowed+1)-th largest value.
                let mut v = values.to_vec();
                let (_, nth, _) = v.select_nth_unstable_by(allowed, |a, b| b.total_cmp(a));
                *nth
            }
        }
        Some(m) => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
            let budget = epsilon + 1e-12;
            let mut acc = 0.0;
            let mut threshold = f64::NEG_INFINITY;
            let mut p = 0;
            while p < n {
                let v = values[order[p]];
                let mut q = p;
                let mut tie_mass = 0.0;
                while q < n && values[order[q]] == v {
                    tie_mass += m[order[q]];
                    q += 1;
                }
                if acc + tie_mass > budget {
                    threshold = v;
                    break;
                }
                acc += tie_mass;
                p = q;
            }
            threshold
        }
    };
    (values.iter().map(|&v| v > threshold).collect(), threshold)
}

/// Pairs exempted from alignment, stored per partition block.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceptionSet {
    epsilon: f64,
    eta_threshold: f64,
    rule: QuantileRule,
    masks: Vec<Vec<bool>>,
    block_cols: Vec<usize>,
    row_loc: Vec<(u32, u32)>,
    col_loc: Vec<(u32, u32)>,
    members: usize,
}

impl ExceptionSet {
    /// A single-block set over a `rows x cols` coupling from an explicit
    /// row-major mask.
    pub fn from_mask(rows: usize, cols: usize, mask: Vec<bool>, epsilon: f64) -> Result<Self> {
        if mask.len() != rows * cols {
            return Err(Error::InvalidParameter("mask does not match coupling shape".into()));
        }
        let layout = Layout {
            row_loc: (0..rows as u32).map(|r| (0, r)).collect(),
            col_loc: (0..cols as u32).map(|c| (0, c)).collect(),
            shapes: vec![(rows, cols)],
        };
        Ok(Self::from_masks(&layout, vec![mask], epsilon, f64::NAN, QuantileRule::Unweighted))
    }

    fn from_masks(layout: &Layout, masks: Vec<Vec<bool>>, epsilon: f64, eta_threshold: f64, rule: QuantileRule) -> Self {
        let members = masks.iter().map(|m| m.iter().filter(|&&b| b).count()).sum();
        Self {
            epsilon,
            eta_threshold,
            rule,
            block_cols: layout.shapes.iter().map(|s| s.1).collect(),
            masks,
            row_loc: layout.row_loc.clone(),
            col_loc: layout.col_loc.clone(),
            members,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn eta_threshold(&self) -> f64 {
        self.eta_threshold
    }

    pub fn rule(&self) -> QuantileRule {
        self.rule
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn candidates(&self) -> usize {
        self.masks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.members == 0
    }

    /// Unweighted share of candidate pairs in the set.
    pub fn fraction(&self) -> f64 {
        let c = self.candidates();
        if c == 0 {
            0.0
        } else {
            self.members as f64 / c as f64
        }
    }

    /// Whether coupling-local pair `(i, j)` is in the set; pairs from
    /// different blocks are never candidates.
    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        let (bi, r) = self.row_loc[i];
        let (bj, c) = self.col_loc[j];
        bi == bj && self.masks[bi as usize][r as usize * self.block_cols[bi as usize] + c as usize]
    }

    /// Coupling mass on the set.
    pub fn mass(&self, coupling: &Coupling) -> f64 {
        coupling
            .entries()
            .iter()
            .filter(|&&(i, j, _)| self.contains(i, j))
            .map(|e| e.2)
            .sum()
    }
}

/// Where each group-0 / group-1 position sits among the partition blocks.
#[derive(Debug, Clone)]
struct Layout {
    row_loc: Vec<(u32, u32)>,
    col_loc: Vec<(u32, u32)>,
    shapes: Vec<(usize, usize)>,
}

impl Layout {
    fn new(ds: &Dataset, blocks: &[BlockCosts]) -> Self {
        let mut position = vec![0u32; ds.n()];
        for s in 0..2 {
            for (p, &i) in ds.group_index(s).iter().enumerate() {
                position[i] = p as u32;
            }
        }
        let mut row_loc = vec![(0, 0); ds.group_size(0)];
        let mut col_loc = vec![(0, 0); ds.group_size(1)];
        for (b, block) in blocks.iter().enumerate() {
            for (r, &i) in block.rows.iter().enumerate() {
                row_loc[position[i] as usize] = (b as u32, r as u32);
            }
            for (c, &j) in block.cols.iter().enumerate() {
                col_loc[position[j] as usize] = (b as u32, c as u32);
            }
        }
        Self {
            row_loc,
            col_loc,
            shapes: blocks.iter().map(|b| (b.rows.len(), b.cols.len())).collect(),
        }
    }

    /// Per-block dense coupling masses; uniform product masses without a coupling.
    fn masses(&self, coupling: Option<&Coupling>) -> Vec<Vec<f64>> {
        let l = self.shapes.len() as f64;
        match coupling {
            None => self
                .shapes
                .iter()
                .map(|&(r, c)| vec![1.0 / (l * r as f64 * c as f64); r * c])
                .collect(),
            Some(g) => {
                let mut out: Vec<Vec<f64>> = self.shapes.iter().map(|&(r, c)| vec![0.0; r * c]).collect();
                for &(i, j, m) in g.entries() {
                    let (b, r) = self.row_loc[i];
                    let (b2, c) = self.col_loc[j];
                    if b == b2 {
                        out[b as usize][r as usize * self.shapes[b as usize].1 + c as usize] += m;
                    }
                }
                out
            }
        }
    }
}

/// Exception set over the blocks of `solver` from the aligned costs
/// `eta_blocks` (one row-major matrix per block).
fn select_exceptions(
    layout: &Layout,
    eta_blocks: &[Vec<f64>],
    epsilon: f64,
    rule: QuantileRule,
    coupling: Option<&Coupling>,
) -> ExceptionSet {
    let values: Vec<f64> = eta_blocks.concat();
    let masses = match rule {
        QuantileRule::Unweighted => None,
        QuantileRule::Mass => Some(layout.masses(coupling).concat()),
    };
    let (flat, threshold) = quantile_select(&values, masses.as_deref(), epsilon);
    let mut masks = Vec::with_capacity(eta_blocks.len());
    let mut start = 0;
    for block in eta_blocks {
        masks.push(flat[start..start + block.len()].to_vec());
        start += block.len();
    }
    ExceptionSet::from_masks(layout, masks, epsilon, threshold, rule)
}

/// Recomputes the exception set over the candidate pairs of `partitioning`
/// at `centers`. `coupling` supplies pair masses for [`QuantileRule::Mass`].
pub fn update_exception_set(
    ds: &Dataset,
    partitioning: &Partitioning,
    centers: &Centers,
    epsilon: f64,
    rule: QuantileRule,
    coupling: Option<&Coupling>,
    mode: Mode,
) -> Result<ExceptionSet> {
    check_epsilon(epsilon)?;
    let solver = PartitionedSolver::new(ds, partitioning, Default::default(), mode)?;
    let layout = Layout::new(ds, solver.blocks());
    let eta: Vec<Vec<f64>> = solver
        .blocks()
        .iter()
        .map(|b| {
            let d = aligned_matrix(ds, &b.rows, &b.cols, centers, mode);
            b.transport.entries().iter().zip(d.entries()).map(|(c, d)| c + d).collect()
        })
        .collect();
    Ok(select_exceptions(&layout, &eta, epsilon, rule, coupling))
}

/// Memberships where exception pairs send each endpoint to its own nearest
/// center and the remaining pairs share the aligned point's cluster.
/// `exceptions` uses coupling-local pair indices; `None` means no exceptions.
pub fn build_assignment_relaxed(
    ds: &Dataset,
    centers: &Centers,
    coupling: &Coupling,
    exceptions: Option<&ExceptionSet>,
    mode: Mode,
) -> Result<Assignment> {
    let k = centers.k();
    let (pi0, pi1) = (ds.pi(0), ds.pi(1));
    let raw: Option<Vec<usize>> = exceptions
        .filter(|w| !w.is_empty())
        .map(|_| (0..ds.n()).map(|i| centers.nearest(ds.row(i), mode).0).collect());
    let mut probs = vec![0.0; ds.n() * k];
    let mut t = vec![0.0; ds.dim()];
    let (rows, cols) = (coupling.row_ids(), coupling.col_ids());
    let (rm, cm) = (coupling.row_marginal(), coupling.col_marginal());
    for &(i, j, g) in coupling.entries() {
        let (a, b) = (rows[i], cols[j]);
        let (ka, kb) = match (&raw, exceptions) {
            (Some(raw), Some(w)) if w.contains(i, j) => (raw[a], raw[b]),
            _ => {
                align_into(&mut t, ds.row(a), ds.row(b), pi0, pi1);
                let kt = centers.nearest(&t, mode).0;
                (kt, kt)
            }
        };
        probs[a * k + ka] += g / rm[i];
        probs[b * k + kb] += g / cm[j];
    }
    for (row, chunk) in probs.chunks_mut(k).enumerate() {
        let mass: f64 = chunk.iter().sum();
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::InconsistentAssignment { row, mass });
        }
        chunk.iter_mut().for_each(|p| *p /= mass);
    }
    Assignment::new(probs, k)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    Ok(())
}

/// FCA with a fairness budget `epsilon`.
pub fn fit_fcac(ds: &Dataset, cfg: &FcaConfig, epsilon: f64) -> Result<FcaResult> {
    fit_engine(ds, cfg, epsilon)
}

pub(crate) fn fit_engine(ds: &Dataset, cfg: &FcaConfig, epsilon: f64) -> Result<FcaResult> {
    cfg.validate()?;
    check_epsilon(epsilon)?;
    if ds.n_groups() != 2 {
        return Err(Error::Unsupported(format!(
            "pairwise alignment needs two groups, dataset has {}; use the multi-group fit",
            ds.n_groups()
        )));
    }
    let mut best: Option<FcaResult> = None;
    for r in 0..cfg.restarts {
        let res = run_once(ds, cfg, epsilon, r)?;
        log::info!(
            "restart {r}: best cost {:.6} at iteration {}",
            res.best().cost,
            res.best_iter
        );
        if best.as_ref().is_none_or(|b| res.best().cost < b.best().cost) {
            best = Some(res);
        }
    }
    let best = best.expect("at least one restart");
    if let Some(rb) = metrics::ratio_bound(&best.assignment, ds.groups()) {
        if rb.lhs > rb.c * epsilon + 1e-6 {
            log::warn!(
                "count-ratio bound violated: {:.3e} > {:.3e} (eps {epsilon}, {:?} rule)",
                rb.lhs,
                rb.c * epsilon,
                cfg.quantile
            );
        }
    }
    Ok(best)
}

struct Best {
    centers: Centers,
    assignment: Assignment,
    labels: Vec<usize>,
    coupling: Coupling,
    exceptions: Option<ExceptionSet>,
    iter: usize,
    cost: f64,
}

fn run_once(ds: &Dataset, cfg: &FcaConfig, epsilon: f64, restart: usize) -> Result<FcaResult> {
    let seed = cfg.restart_seed(restart);
    let mode = cfg.mode;
    let control = epsilon > 0.0;
    let partitioning = match cfg.partition_m {
        Some(m) => make_partitioning(ds, m, seed)?,
        None => Partitioning::whole(ds),
    };
    let mut solver = PartitionedSolver::new(ds, &partitioning, cfg.solver, mode)?;
    let layout = Layout::new(ds, solver.blocks());
    let (pi0, pi1) = (ds.pi(0), ds.pi(1));
    let (g0, g1) = (ds.group_index(0).to_vec(), ds.group_index(1).to_vec());

    let raw = WeightedPoints::uniform(ds.points().to_vec(), ds.dim())?;
    let mut centers = kmeanspp_init(&raw, cfg.k, seed)?;
    let lloyd = LloydOptions { mode, ..cfg.lloyd };

    let mut aligned = aligned_blocks(ds, solver.blocks(), &centers, mode);
    let mut raw_dist = nearest_dists(ds, &centers, mode);
    let mut exceptions = if control {
        Some(select_exceptions(
            &layout,
            &eta_blocks(solver.blocks(), &aligned),
            epsilon,
            cfg.quantile,
            None,
        ))
    } else {
        None
    };

    let mut history = Vec::new();
    let mut best: Option<Best> = None;
    for iter in 0..cfg.max_outer_iter {
        let wrap = |e: Error| Error::Iteration {
            iter,
            source: Box::new(e),
        };

        // Phase 1: coupling under the mixed pair costs.
        let (coupling, _) = solver
            .solve(|l, b| {
                block_cost(b, &aligned[l], exceptions.as_ref().map(|w| &w.masks[l]), &raw_dist, pi0, pi1)
            })
            .map_err(wrap)?;

        // Phase 2: centers from aligned points and exception endpoints.
        let wp = phase2_points(ds, &coupling, exceptions.as_ref(), &g0, &g1, pi0, pi1).map_err(wrap)?;
        let fit = lloyd_weighted(&wp, &centers, &lloyd).map_err(wrap)?;
        let moved = fit.centers.max_displacement(&centers);
        centers = fit.centers;
        aligned = aligned_blocks(ds, solver.blocks(), &centers, mode);
        raw_dist = nearest_dists(ds, &centers, mode);

        // Phase 3: exception set at the new centers.
        if control {
            exceptions = Some(select_exceptions(
                &layout,
                &eta_blocks(solver.blocks(), &aligned),
                epsilon,
                cfg.quantile,
                Some(&coupling),
            ));
        }

        let assignment = build_assignment_relaxed(ds, &centers, &coupling, exceptions.as_ref(), mode).map_err(wrap)?;
        let labels = metrics::round_deterministic(&assignment);
        let cost = metrics::cost(ds, &centers, &labels, mode);
        let objective = mixed_objective(
            &coupling,
            &layout,
            solver.blocks(),
            &aligned,
            exceptions.as_ref(),
            &raw_dist,
            &g0,
            &g1,
            pi0,
            pi1,
        );
        let record = IterationRecord {
            iter,
            cost,
            balance: metrics::balance(&labels, ds.groups(), cfg.k),
            objective,
            fairness_gap: metrics::fairness_gap(&assignment, ds.groups()),
            exception_fraction: exceptions.as_ref().map_or(0.0, ExceptionSet::fraction),
            exception_mass: exceptions.as_ref().map_or(0.0, |w| w.mass(&coupling)),
        };
        log::debug!(
            "iter {iter}: cost {:.6} balance {:.4} objective {:.6} moved {moved:.3e}",
            record.cost,
            record.balance,
            record.objective
        );
        history.push(record);
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(Best {
                centers: centers.clone(),
                assignment,
                labels,
                coupling,
                exceptions: exceptions.clone(),
                iter,
                cost,
            });
        }
        if moved < cfg.center_tol {
            break;
        }
    }
    let b = best.expect("at least one outer iteration");
    Ok(FcaResult {
        centers: b.centers,
        assignment: b.assignment,
        labels: b.labels,
        coupling: b.coupling,
        history,
        best_iter: b.iter,
        exceptions: b.exceptions,
        restart,
    })
}

fn aligned_blocks(ds: &Dataset, blocks: &[BlockCosts], centers: &Centers, mode: Mode) -> Vec<Vec<f64>> {
    blocks
        .par_iter()
        .map(|b| aligned_matrix(ds, &b.rows, &b.cols, centers, mode).entries().to_vec())
        .collect()
}

fn eta_blocks(blocks: &[BlockCosts], aligned: &[Vec<f64>]) -> Vec<Vec<f64>> {
    blocks
        .iter()
        .zip(aligned)
        .map(|(b, d)| b.transport.entries().iter().zip(d).map(|(c, d)| c + d).collect())
        .collect()
}

fn nearest_dists(ds: &Dataset, centers: &Centers, mode: Mode) -> Vec<f64> {
    (0..ds.n()).map(|i| centers.nearest(ds.row(i), mode).1).collect()
}

fn block_cost(
    b: &BlockCosts,
    aligned: &[f64],
    mask: Option<&Vec<bool>>,
    raw_dist: &[f64],
    pi0: f64,
    pi1: f64,
) -> CostMatrix {
    let c = b.transport.entries();
    let entries: Vec<f64> = match mask {
        None => c.iter().zip(aligned).map(|(c, d)| c + d).collect(),
        Some(mask) => {
            let cols = b.cols.len();
            (0..c.len())
                .map(|e| {
                    if mask[e] {
                        pi0 * raw_dist[b.rows[e / cols]] + pi1 * raw_dist[b.cols[e % cols]]
                    } else {
                        c[e] + aligned[e]
                    }
                })
                .collect()
        }
    };
    CostMatrix::from_parts_unchecked(entries, b.rows.len(), b.cols.len(), b.rows.clone(), b.cols.clone())
}

fn phase2_points(
    ds: &Dataset,
    coupling: &Coupling,
    exceptions: Option<&ExceptionSet>,
    g0: &[usize],
    g1: &[usize],
    pi0: f64,
    pi1: f64,
) -> Result<WeightedPoints> {
    let d = ds.dim();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut raw_w = vec![0.0; ds.n()];
    let mut t = vec![0.0; d];
    for &(i, j, g) in coupling.support() {
        let (a, b) = (g0[i], g1[j]);
        if exceptions.is_some_and(|w| w.contains(i, j)) {
            raw_w[a] += pi0 * g;
            raw_w[b] += pi1 * g;
        } else {
            align_into(&mut t, ds.row(a), ds.row(b), pi0, pi1);
            points.extend_from_slice(&t);
            weights.push(g);
        }
    }
    for (i, &w) in raw_w.iter().enumerate() {
        if w > 0.0 {
            points.extend_from_slice(ds.row(i));
            weights.push(w);
        }
    }
    WeightedPoints::normalized(points, d, weights)
}

#[allow(clippy::too_many_arguments)]
fn mixed_objective(
    coupling: &Coupling,
    layout: &Layout,
    blocks: &[BlockCosts],
    aligned: &[Vec<f64>],
    exceptions: Option<&ExceptionSet>,
    raw_dist: &[f64],
    g0: &[usize],
    g1: &[usize],
    pi0: f64,
    pi1: f64,
) -> f64 {
    coupling
        .entries()
        .iter()
        .map(|&(i, j, g)| {
            if exceptions.is_some_and(|w| w.contains(i, j)) {
                return g * (pi0 * raw_dist[g0[i]] + pi1 * raw_dist[g1[j]]);
            }
            let (b, r) = layout.row_loc[i];
            let (_, c) = layout.col_loc[j];
            let e = r as usize * layout.shapes[b as usize].1 + c as usize;
            g * (blocks[b as usize].transport.entries()[e] + aligned[b as usize][e])
        })
        .sum()
}
