//! Fair clustering by alternating between a coupling of the two groups and
//! centers fitted on the aligned points.

mod multigroup;

use serde::{Deserialize, Serialize};

use crate::clustering::{Centers, LloydOptions, Mode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fcac::{self, ExceptionSet, QuantileRule};
use crate::transport::{align_into, transport_term, Coupling, SolverKind};

pub use multigroup::{
    MultiFcaResult,
    fit_fca_multigroup, multigroup_objective, solve_multigroup_block, MultiCoupling,
    MAX_GROUPS,
};

/// Row-stochastic cluster memberships, one row per dataset point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    probs: Vec<f64>,
    k: usize,
}

impl Assignment {
    pub fn new(probs: Vec<f64>, k: usize) -> Result<Self> {
        if k == 0 || probs.len() % k != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} probabilities do not form rows of {k}",
                probs.len()
            )));
        }
        for (i, row) in probs.chunks(k).enumerate() {
            let mass: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (mass - 1.0).abs() > 1e-8 {
                return Err(Error::InconsistentAssignment { row: i, mass });
            }
        }
        Ok(Self { probs, k })
    }

    pub fn one_hot(labels: &[usize], k: usize) -> Result<Self> {
        let mut probs = vec![0.0; labels.len() * k];
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::InvalidParameter(format!("label {l} out of range for K={k}")));
            }
            probs[i * k + l] = 1.0;
        }
        Self::new(probs, k)
    }

    pub fn n(&self) -> usize {
        self.probs.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.k..(i + 1) * self.k]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

#[derive(Debug, Clone)]
pub struct FcaConfig {
    pub k: usize,
    pub max_outer_iter: usize,
    pub center_tol: f64,
    pub solver: SolverKind,
    pub partition_m: Option<usize>,
    pub mode: Mode,
    pub seed: u64,
    pub restarts: usize,
    /// Inner Lloyd settings; its `mode` is overridden by `mode`.
    pub lloyd: LloydOptions,
    /// How the exception set threshold is picked (FCA-C only).
    pub quantile: QuantileRule,
    /// Per-group block cap for the multi-group tensor LP.
    pub multigroup_block: usize,
}

impl FcaConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_outer_iter: 100,
            center_tol: 1e-5,
            solver: SolverKind::Lp,
            partition_m: None,
            mode: Mode::KMeans,
            seed: 0,
            restarts: 1,
            lloyd: LloydOptions::default(),
            quantile: QuantileRule::default(),
            multigroup_block: 32,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if self.max_outer_iter == 0 {
            return Err(Error::InvalidParameter("max_outer_iter must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("restarts must be at least 1".into()));
        }
        if !(self.center_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("center_tol {}", self.center_tol)));
        }
        Ok(())
    }

    /// Seed of restart `r`; restart 0 uses `seed` itself.
    pub fn restart_seed(&self, r: usize) -> u64 {
        self.seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Metrics recorded after each outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Deterministic cost (squared L2, or L1 in K-median mode).
    pub cost: f64,
    pub balance: f64,
    /// Coupled objective at the iterate.
    pub objective: f64,
    pub fairness_gap: f64,
    /// Unweighted share of candidate pairs in the exception set.
    pub exception_fraction: f64,
    /// Coupling mass on the exception set.
    pub exception_mass: f64,
}

#[derive(Debug, Clone)]
pub struct FcaResult {
    pub centers: Centers,
    pub assignment: Assignment,
    /// Deterministic rounding of `assignment`.
    pub labels: Vec<usize>,
    pub coupling: Coupling,
    pub history: Vec<IterationRecord>,
    pub best_iter: usize,
    /// Exception set at `best_iter` (FCA-C only).
    pub exceptions: Option<ExceptionSet>,
    /// Which restart produced this result.
    pub restart: usize,
}

impl FcaResult {
    pub fn best(&self) -> &IterationRecord {
        &self.history[self.best_iter]
    }
}

/// `pi0 * x0 + pi1 * x1`.
pub fn alignment_map(x0: &[f64], x1: &[f64], pi0: f64, pi1: f64) -> Vec<f64> {
    let mut t = vec![0.0; x0.len()];
    align_into(&mut t, x0, x1, pi0, pi1);
    t
}

/// Fair assignment from a coupling: every coupled pair sends its mass,
/// scaled by each endpoint's marginal, to the cluster nearest its aligned
/// point.
pub fn build_assignment(ds: &Dataset, centers: &Centers, coupling: &Coupling, mode: Mode) -> Result<Assignment> {
    fcac::build_assignment_relaxed(ds, centers, coupling, None, mode)
}

/// Coupled objective `sum gamma (transport + min_k dist(T, mu_k))`.
pub fn coupling_objective(ds: &Dataset, centers: &Centers, coupling: &Coupling, mode: Mode) -> f64 {
    let (pi0, pi1) = (ds.pi(0), ds.pi(1));
    let mut t = vec![0.0; ds.dim()];
    coupling
        .entries()
        .iter()
        .map(|&(i, j, g)| {
            let (x0, x1) = (ds.row(coupling.row_ids()[i]), ds.row(coupling.col_ids()[j]));
            align_into(&mut t, x0, x1, pi0, pi1);
            g * (transport_term(x0, x1, pi0, pi1, mode) + centers.nearest(&t, mode).1)
        })
        .sum()
}

/// `(1/n) sum_i sum_k A_ik dist(x_i, mu_k)`.
pub fn assignment_cost(ds: &Dataset, centers: &Centers, a: &Assignment, mode: Mode) -> f64 {
    let total: f64 = (0..ds.n())
        .map(|i| {
            a.row(i)
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(k, p)| p * mode.dist(ds.row(i), centers.center(k)))
                .sum::<f64>()
        })
        .sum();
    total / ds.n() as f64
}

/// Matched-pair form of the clustering cost for equal-size groups:
/// `(1/n0) sum_pairs (||a - b||^2 / 4 + ||(a + b)/2 - mu_k||^2)`, where
/// `matching[p]` is the group-1 position matched to group-0 position `p` and
/// the pair is placed in cluster `pair_labels[p]`.
pub fn decomposed_cost(ds: &Dataset, centers: &Centers, matching: &[usize], pair_labels: &[usize]) -> f64 {
    let g0 = ds.group_index(0);
    let g1 = ds.group_index(1);
    let total: f64 = matching
        .iter()
        .zip(pair_labels)
        .enumerate()
        .map(|(p, (&q, &k))| {
            let (a, b) = (ds.row(g0[p]), ds.row(g1[q]));
            let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
            0.25 * crate::clustering::sq_dist(a, b) + crate::clustering::sq_dist(&mid, centers.center(k))
        })
        .sum();
    total / matching.len() as f64
}

/// Alternating minimization over couplings and centers.
pub fn fit_fca(ds: &Dataset, cfg: &FcaConfig) -> Result<FcaResult> {
    fcac::fit_engine(ds, cfg, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;
    use crate::transport::{build_cost_matrices, solve_lp};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alignment_examples() {
        assert_eq!(alignment_map(&[0.0, 0.0], &[2.0, 2.0], 0.5, 0.5), vec![1.0, 1.0]);
        assert_eq!(alignment_map(&[3.0], &[9.0], 1.0, 0.0), vec![3.0]);
        let t = alignment_map(&[1.0], &[4.0], 1.0 / 3.0, 2.0 / 3.0);
        assert!((t[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn permutation_coupling_gives_one_hot_rows() {
        let ds = Dataset::new(vec![0.0, 5.0, 0.2, 5.3], 1, vec![0, 0, 1, 1]).unwrap();
        let mu = Centers::new(vec![0.0, 5.0], 1).unwrap();
        let (c, d) = build_cost_matrices(&ds, &mu, Mode::KMeans).unwrap();
        let gamma = solve_lp(&c.plus(&d).unwrap()).unwrap();
        let a = build_assignment(&ds, &mu, &gamma, Mode::KMeans).unwrap();
        assert_eq!(a.probs(), &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn split_partner_mass_gives_split_row() {
        // Group-0 point 0 is coupled half to 10 (cluster 1) and half to -10 (cluster 0).
        let ds = Dataset::new(vec![0.0, 0.0, 10.0, -10.0], 1, vec![0, 0, 1, 1]).unwrap();
        let mu = Centers::new(vec![-5.0, 5.0], 1).unwrap();
        let gamma = Coupling::new(
            ds.group_index(0).to_vec(),
            ds.group_index(1).to_vec(),
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            vec![(0, 0, 0.25), (0, 1, 0.25), (1, 0, 0.25), (1, 1, 0.25)],
        )
        .unwrap();
        let a = build_assignment(&ds, &mu, &gamma, Mode::KMeans).unwrap();
        assert_eq!(a.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn inconsistent_coupling_is_rejected() {
        let ds = Dataset::new(vec![0.0, 1.0], 1, vec![0, 1]).unwrap();
        let mu = Centers::new(vec![0.5], 1).unwrap();
        let gamma = Coupling::new(vec![0], vec![1], vec![1.0], vec![1.0], vec![(0, 0, 0.5)]).unwrap();
        assert!(matches!(
            build_assignment(&ds, &mu, &gamma, Mode::KMeans),
            Err(Error::InconsistentAssignment { .. })
        ));
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Dataset, Centers, Coupling) {
        let n0 = rng.random_range(1..8);
        let n1 = rng.random_range(1..8);
        let d = rng.random_range(1..4);
        let pts: Vec<f64> = (0..(n0 + n1) * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let groups: Vec<usize> = (0..n0 + n1).map(|i| usize::from(i >= n0)).collect();
        let ds = Dataset::new(pts, d, groups).unwrap();
        let k = rng.random_range(1..4);
        let mu = Centers::new((0..k * d).map(|_| rng.random_range(-3.0..3.0)).collect(), d).unwrap();
        let vals: Vec<f64> = (0..n0 * n1).map(|_| rng.random_range(0.0..1.0)).collect();
        let cost = crate::transport::CostMatrix::from_fn(n0, n1, |i, j| vals[i * n1 + j]).unwrap();
        let opts = crate::transport::SinkhornOptions::new(rng.random_range(0.05..2.0));
        let gamma = crate::transport::solve_sinkhorn_with(&cost, &opts, None).unwrap().coupling;
        let gamma = Coupling::new(
            ds.group_index(0).to_vec(),
            ds.group_index(1).to_vec(),
            gamma.row_marginal().to_vec(),
            gamma.col_marginal().to_vec(),
            gamma.entries().to_vec(),
        )
        .unwrap();
        (ds, mu, gamma)
    }

    proptest! {
        #[test]
        fn objective_equals_assignment_cost(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ds, mu, gamma) = random_instance(&mut rng);
            let a = build_assignment(&ds, &mu, &gamma, Mode::KMeans).unwrap();
            let lhs = coupling_objective(&ds, &mu, &gamma, Mode::KMeans);
            let rhs = assignment_cost(&ds, &mu, &a, Mode::KMeans);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1e-12));
        }

        #[test]
        fn shared_pairs_give_equal_group_profiles(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ds, mu, gamma) = random_instance(&mut rng);
            let a = build_assignment(&ds, &mu, &gamma, Mode::KMeans).unwrap();
            prop_assert!(metrics::fairness_gap(&a, ds.groups()) <= 1e-6);
        }

        #[test]
        fn kmedian_bound_dominates_direct_cost(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ds, mu, gamma) = random_instance(&mut rng);
            let a = build_assignment(&ds, &mu, &gamma, Mode::KMedian).unwrap();
            let direct = assignment_cost(&ds, &mu, &a, Mode::KMedian);
            let bound = coupling_objective(&ds, &mu, &gamma, Mode::KMedian);
            prop_assert!(direct <= bound + 1e-12);
        }
    }
}
