//! Three-group alignment through a multi-marginal coupling.
//!
//! Each partition block couples one member of every group at a time. The
//! block problem is an explicit LP over the `n0 x n1 x n2` tensor of tuples,
//! so block sizes are capped per group.

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use rayon::prelude::*;

use super::{fit_fca, Assignment, FcaConfig, FcaResult, IterationRecord};
use crate::clustering::{kmeanspp_init, lloyd_weighted, sq_dist, Centers, LloydOptions, Mode, WeightedPoints};
use crate::data::{make_partitioning_capped, Dataset};
use crate::error::{Error, Result};
use crate::metrics;

/// Largest number of protected groups handled.
pub const MAX_GROUPS: usize = 3;

/// A coupling over tuples holding one dataset row per group.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoupling {
    /// `(rows, mass)` with `rows[s]` from group `s`.
    pub tuples: Vec<(Vec<usize>, f64)>,
    /// Target mass of each dataset row.
    pub marginal: Vec<f64>,
}

impl MultiCoupling {
    pub fn total_mass(&self) -> f64 {
        self.tuples.iter().map(|t| t.1).sum()
    }

    /// Largest deviation of a row's coupled mass from its target.
    pub fn marginal_violation(&self) -> f64 {
        let mut got = vec![0.0; self.marginal.len()];
        for (rows, m) in &self.tuples {
            for &i in rows {
                got[i] += m;
            }
        }
        got.iter()
            .zip(&self.marginal)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Result of a multi-group fit.
#[derive(Debug, Clone)]
pub struct MultiFcaResult {
    pub centers: Centers,
    pub assignment: Assignment,
    pub labels: Vec<usize>,
    pub coupling: MultiCoupling,
    pub history: Vec<IterationRecord>,
    pub best_iter: usize,
    pub restart: usize,
}

impl MultiFcaResult {
    pub fn best(&self) -> &IterationRecord {
        &self.history[self.best_iter]
    }
}

impl From<FcaResult> for MultiFcaResult {
    fn from(r: FcaResult) -> Self {
        let n = r.assignment.n();
        let mut marginal = vec![0.0; n];
        for (i, &m) in r.coupling.row_ids().iter().zip(r.coupling.row_marginal()) {
            marginal[*i] = m;
        }
        for (j, &m) in r.coupling.col_ids().iter().zip(r.coupling.col_marginal()) {
            marginal[*j] = m;
        }
        let tuples = r
            .coupling
            .entries()
            .iter()
            .map(|&(i, j, g)| (vec![r.coupling.row_ids()[i], r.coupling.col_ids()[j]], g))
            .collect();
        Self {
            centers: r.centers,
            assignment: r.assignment,
            labels: r.labels,
            coupling: MultiCoupling { tuples, marginal },
            history: r.history,
            best_iter: r.best_iter,
            restart: r.restart,
        }
    }
}

/// `sum_s pi_s x_s` and `sum_s pi_s ||x_s - T||^2` for one tuple.
fn align_tuple(ds: &Dataset, rows: &[usize], pi: &[f64], t: &mut [f64]) -> f64 {
    t.iter_mut().for_each(|v| *v = 0.0);
    for (&i, &p) in rows.iter().zip(pi) {
        for (tv, x) in t.iter_mut().zip(ds.row(i)) {
            *tv += p * x;
        }
    }
    rows.iter().zip(pi).map(|(&i, &p)| p * sq_dist(ds.row(i), t)).sum()
}

/// Coupled objective `sum gamma (spread + min_k ||T - mu_k||^2)`.
pub fn multigroup_objective(ds: &Dataset, centers: &Centers, coupling: &MultiCoupling) -> f64 {
    let pi: Vec<f64> = (0..ds.n_groups()).map(|s| ds.pi(s)).collect();
    let mut t = vec![0.0; ds.dim()];
    coupling
        .tuples
        .iter()
        .map(|(rows, g)| {
            let spread = align_tuple(ds, rows, &pi, &mut t);
            g * (spread + centers.nearest(&t, Mode::KMeans).1)
        })
        .sum()
}

/// Optimal coupling of one three-group block under the tuple cost at
/// `centers`. `members[s]` lists the block's rows of group `s`; masses are
/// uniform within each group and sum to one.
pub fn solve_multigroup_block(ds: &Dataset, members: &[Vec<usize>], centers: &Centers) -> Result<Vec<(Vec<usize>, f64)>> {
    if members.len() != MAX_GROUPS || members.iter().any(Vec::is_empty) {
        return Err(Error::InvalidParameter("block needs members of all three groups".into()));
    }
    let pi: Vec<f64> = (0..MAX_GROUPS).map(|s| ds.pi(s)).collect();
    let (a, b, c) = (members[0].len(), members[1].len(), members[2].len());
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let mut vars = Vec::with_capacity(a * b * c);
    let mut t = vec![0.0; ds.dim()];
    for &i in &members[0] {
        for &j in &members[1] {
            for &k in &members[2] {
                let spread = align_tuple(ds, &[i, j, k], &pi, &mut t);
                let cost = spread + centers.nearest(&t, Mode::KMeans).1;
                vars.push(problem.add_var(cost, (0.0, f64::INFINITY)));
            }
        }
    }
    let idx = |x: usize, y: usize, z: usize| (x * b + y) * c + z;
    for x in 0..a {
        let mut e = LinearExpr::empty();
        for y in 0..b {
            for z in 0..c {
                e.add(vars[idx(x, y, z)], 1.0);
            }
        }
        problem.add_constraint(e, ComparisonOp::Eq, 1.0 / a as f64);
    }
    for y in 0..b {
        let mut e = LinearExpr::empty();
        for x in 0..a {
            for z in 0..c {
                e.add(vars[idx(x, y, z)], 1.0);
            }
        }
        problem.add_constraint(e, ComparisonOp::Eq, 1.0 / b as f64);
    }
    // The last group's final constraint is implied by the others.
    for z in 0..c.saturating_sub(1) {
        let mut e = LinearExpr::empty();
        for x in 0..a {
            for y in 0..b {
                e.add(vars[idx(x, y, z)], 1.0);
            }
        }
        problem.add_constraint(e, ComparisonOp::Eq, 1.0 / c as f64);
    }
    let solution = problem
        .solve()
        .map_err(|e| Error::LinearProgram(e.to_string()))?;
    let mut tuples = Vec::new();
    for x in 0..a {
        for y in 0..b {
            for z in 0..c {
                let g = solution[vars[idx(x, y, z)]];
                if g > 1e-12 {
                    tuples.push((vec![members[0][x], members[1][y], members[2][z]], g));
                }
            }
        }
    }
    Ok(tuples)
}

/// Fair clustering for two or three groups. Two groups run the pairwise
/// fit unchanged.
pub fn fit_fca_multigroup(ds: &Dataset, cfg: &FcaConfig) -> Result<MultiFcaResult> {
    match ds.n_groups() {
        2 => return fit_fca(ds, cfg).map(Into::into),
        3 => {}
        g => {
            return Err(Error::Unsupported(format!(
                "multi-group alignment supports at most {MAX_GROUPS} groups, dataset has {g}"
            )))
        }
    }
    if cfg.mode == Mode::KMedian {
        return Err(Error::Unsupported("K-median mode is only available for two groups".into()));
    }
    cfg.validate()?;
    let mut best: Option<MultiFcaResult> = None;
    for r in 0..cfg.restarts {
        let res = run_once(ds, cfg, r)?;
        if best.as_ref().is_none_or(|b| res.best().cost < b.best().cost) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn run_once(ds: &Dataset, cfg: &FcaConfig, restart: usize) -> Result<MultiFcaResult> {
    let seed = cfg.restart_seed(restart);
    let m = cfg.partition_m.unwrap_or(ds.n());
    let partitioning = make_partitioning_capped(ds, m, cfg.multigroup_block.max(1), seed)?;
    let n_blocks = partitioning.n_blocks() as f64;
    let mut marginal = vec![0.0; ds.n()];
    for block in partitioning.blocks() {
        for rows in block {
            for &i in rows {
                marginal[i] = 1.0 / (n_blocks * rows.len() as f64);
            }
        }
    }
    let pi: Vec<f64> = (0..MAX_GROUPS).map(|s| ds.pi(s)).collect();
    let raw = WeightedPoints::uniform(ds.points().to_vec(), ds.dim())?;
    let mut centers = kmeanspp_init(&raw, cfg.k, seed)?;
    let lloyd = LloydOptions {
        mode: Mode::KMeans,
        ..cfg.lloyd
    };

    struct Best {
        centers: Centers,
        assignment: Assignment,
        labels: Vec<usize>,
        coupling: MultiCoupling,
        iter: usize,
        cost: f64,
    }
    let mut best: Option<Best> = None;
    let mut history = Vec::new();
    for iter in 0..cfg.max_outer_iter {
        let wrap = |e: Error| Error::Iteration {
            iter,
            source: Box::new(e),
        };
        let solved: Vec<Result<Vec<(Vec<usize>, f64)>>> = partitioning
            .blocks()
            .par_iter()
            .enumerate()
            .map(|(l, block)| {
                solve_multigroup_block(ds, block, &centers).map_err(|e| Error::Block {
                    block: l,
                    source: Box::new(e),
                })
            })
            .collect();
        let mut tuples = Vec::new();
        for block in solved {
            tuples.extend(block.map_err(wrap)?.into_iter().map(|(rows, g)| (rows, g / n_blocks)));
        }
        let coupling = MultiCoupling {
            tuples,
            marginal: marginal.clone(),
        };

        let mut points = Vec::with_capacity(coupling.tuples.len() * ds.dim());
        let mut weights = Vec::with_capacity(coupling.tuples.len());
        let mut t = vec![0.0; ds.dim()];
        for (rows, g) in &coupling.tuples {
            align_tuple(ds, rows, &pi, &mut t);
            points.extend_from_slice(&t);
            weights.push(*g);
        }
        let wp = WeightedPoints::normalized(points, ds.dim(), weights).map_err(wrap)?;
        let fit = lloyd_weighted(&wp, &centers, &lloyd).map_err(wrap)?;
        let moved = fit.centers.max_displacement(&centers);
        centers = fit.centers;

        let assignment = tuple_assignment(ds, &centers, &coupling, &pi).map_err(wrap)?;
        let labels = metrics::round_deterministic(&assignment);
        let cost = metrics::cost(ds, &centers, &labels, Mode::KMeans);
        history.push(IterationRecord {
            iter,
            cost,
            balance: metrics::balance(&labels, ds.groups(), cfg.k),
            objective: multigroup_objective(ds, &centers, &coupling),
            fairness_gap: metrics::fairness_gap(&assignment, ds.groups()),
            exception_fraction: 0.0,
            exception_mass: 0.0,
        });
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(Best {
                centers: centers.clone(),
                assignment,
                labels,
                coupling,
                iter,
                cost,
            });
        }
        if moved < cfg.center_tol {
            break;
        }
    }
    let b = best.expect("at least one outer iteration");
    Ok(MultiFcaResult {
        centers: b.centers,
        assignment: b.assignment,
        labels: b.labels,
        coupling: b.coupling,
        history,
        best_iter: b.iter,
        restart,
    })
}

fn tuple_assignment(ds: &Dataset, centers: &Centers, coupling: &MultiCoupling, pi: &[f64]) -> Result<Assignment> {
    let k = centers.k();
    let mut probs = vec![0.0; ds.n() * k];
    let mut t = vec![0.0; ds.dim()];
    for (rows, g) in &coupling.tuples {
        align_tuple(ds, rows, pi, &mut t);
        let c = centers.nearest(&t, Mode::KMeans).0;
        for &i in rows {
            probs[i * k + c] += g / coupling.marginal[i];
        }
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triple_takes_all_mass() {
        let ds = Dataset::new(vec![0.0, 3.0, 6.0], 1, vec![0, 1, 2]).unwrap();
        let mu = Centers::new(vec![3.0], 1).unwrap();
        let tuples = solve_multigroup_block(&ds, &[vec![0], vec![1], vec![2]], &mu).unwrap();
        assert_eq!(tuples.len(), 1);
        assert!((tuples[0].1 - 1.0).abs() < 1e-9);
        let r = fit_fca_multigroup(&ds, &FcaConfig::new(1)).unwrap();
        for i in 0..3 {
            assert_eq!(r.assignment.row(i), &[1.0]);
        }
    }

    #[test]
    fn matching_triples_are_found() {
        // Three tight triples at 0, 10 and 20, one point per group each.
        let pts = vec![0.0, 10.0, 20.0, 20.1, 0.1, 10.1, 9.9, 19.9, -0.1];
        let groups = vec![0, 0, 0, 1, 1, 1, 2, 2, 2];
        let ds = Dataset::new(pts, 1, groups).unwrap();
        let mu = Centers::new(vec![0.0, 10.0, 20.0], 1).unwrap();
        let members: Vec<Vec<usize>> = (0..3).map(|s| ds.group_index(s).to_vec()).collect();
        let mut tuples = solve_multigroup_block(&ds, &members, &mu).unwrap();
        tuples.sort_by(|a, b| a.0.cmp(&b.0));
        let rows: Vec<Vec<usize>> = tuples.iter().map(|t| t.0.clone()).collect();
        assert_eq!(rows, vec![vec![0, 4, 8], vec![1, 5, 6], vec![2, 3, 7]]);
    }

    #[test]
    fn rejects_too_many_groups() {
        let ds = Dataset::new(vec![0.0, 1.0, 2.0, 3.0], 1, vec![0, 1, 2, 3]).unwrap();
        assert!(matches!(
            fit_fca_multigroup(&ds, &FcaConfig::new(1)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn rejects_kmedian_with_three_groups() {
        let ds = Dataset::new(vec![0.0, 1.0, 2.0], 1, vec![0, 1, 2]).unwrap();
        let cfg = FcaConfig {
            mode: Mode::KMedian,
            ..FcaConfig::new(1)
        };
        assert!(matches!(fit_fca_multigroup(&ds, &cfg), Err(Error::Unsupported(_))));
    }
}
