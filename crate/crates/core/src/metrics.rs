//! Clustering utility and group-fairness measures.

use serde::{Deserialize, Serialize};

use crate::clustering::{l1_dist, sq_dist, Centers, Mode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fca::Assignment;

/// Argmax label per row; ties go to the lowest index.
pub fn round_deterministic(a: &Assignment) -> Vec<usize> {
    (0..a.n())
        .map(|i| {
            let row = a.row(i);
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Mean distance from each point to its labelled center: squared L2 for
/// `KMeans`, L1 for `KMedian`.
pub fn cost(ds: &Dataset, centers: &Centers, labels: &[usize], mode: Mode) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &k)| mode.dist(ds.row(i), centers.center(k)))
        .sum();
    total / ds.n() as f64
}

/// Per-cluster, per-group label counts: `counts[k][s]`.
pub fn cluster_counts(labels: &[usize], groups: &[usize], k: usize, n_groups: usize) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0; n_groups]; k];
    for (&l, &s) in labels.iter().zip(groups) {
        counts[l][s] += 1;
    }
    counts
}

/// Smallest two-way group-count ratio over non-empty clusters; a cluster
/// missing any group scores 0. With more than two groups the minimum runs
/// over every pair of groups.
pub fn balance(labels: &[usize], groups: &[usize], k: usize) -> f64 {
    let n_groups = groups.iter().max().map_or(0, |&g| g + 1);
    let mut bal = 1.0f64;
    for row in cluster_counts(labels, groups, k, n_groups) {
        if row.iter().all(|&c| c == 0) {
            continue;
        }
        let lo = *row.iter().min().expect("at least one group");
        let hi = *row.iter().max().expect("at least one group");
        bal = bal.min(lo as f64 / hi as f64);
    }
    bal
}

/// Ceiling on balance for proportionally fair clusterings.
pub fn balance_star(group_sizes: &[usize]) -> f64 {
    let lo = group_sizes.iter().copied().min().unwrap_or(0);
    let hi = group_sizes.iter().copied().max().unwrap_or(0);
    if hi == 0 {
        0.0
    } else {
        lo as f64 / hi as f64
    }
}

/// Mean membership per cluster within group `s`.
pub fn group_mean_membership(a: &Assignment, groups: &[usize], s: usize) -> Vec<f64> {
    let mut mean = vec![0.0; a.k()];
    let mut count = 0usize;
    for (i, &g) in groups.iter().enumerate() {
        if g == s {
            count += 1;
            for (m, p) in mean.iter_mut().zip(a.row(i)) {
                *m += p;
            }
        }
    }
    if count > 0 {
        mean.iter_mut().for_each(|m| *m /= count as f64);
    }
    mean
}

/// `sum_k |E_0 A_k - E_1 A_k|`; with more groups, the largest over pairs.
pub fn fairness_gap(a: &Assignment, groups: &[usize]) -> f64 {
    let n_groups = groups.iter().max().map_or(0, |&g| g + 1);
    let means: Vec<Vec<f64>> = (0..n_groups)
        .map(|s| group_mean_membership(a, groups, s))
        .collect();
    let mut gap = 0.0f64;
    for s in 0..n_groups {
        for t in s + 1..n_groups {
            let g: f64 = means[s].iter().zip(&means[t]).map(|(x, y)| (x - y).abs()).sum();
            gap = gap.max(g);
        }
    }
    gap
}

/// Deviation of per-cluster group ratios from the population ratio, and the
/// matching constant for the `c * epsilon` bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBound {
    /// `max_k |sum_0 A_k / sum_1 A_k - n0/n1|`.
    pub lhs: f64,
    /// `(n0/n1) * max_k 1 / E_1 A_k`.
    pub c: f64,
}

/// `None` when some cluster has no group-1 membership.
pub fn ratio_bound(a: &Assignment, groups: &[usize]) -> Option<RatioBound> {
    let (n0, n1) = groups.iter().fold((0usize, 0usize), |(a, b), &g| match g {
        0 => (a + 1, b),
        1 => (a, b + 1),
        _ => (a, b),
    });
    if n0 == 0 || n1 == 0 {
        return None;
    }
    let e0 = group_mean_membership(a, groups, 0);
    let e1 = group_mean_membership(a, groups, 1);
    if e1.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let ratio = n0 as f64 / n1 as f64;
    let mut lhs = 0.0f64;
    let mut inv = 0.0f64;
    for (p, q) in e0.iter().zip(&e1) {
        let sum0 = p * n0 as f64;
        let sum1 = q * n1 as f64;
        lhs = lhs.max((sum0 / sum1 - ratio).abs());
        inv = inv.max(1.0 / q);
    }
    Some(RatioBound { lhs, c: ratio * inv })
}

/// Mean silhouette coefficient with Euclidean distances. Points alone in
/// their cluster, or with zero intra and nearest distances, score 0.
pub fn silhouette(ds: &Dataset, labels: &[usize]) -> Result<f64> {
    let k = labels.iter().max().map_or(0, |&l| l + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::SilhouetteNeedsTwoClusters);
    }
    let n = ds.n();
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let xi = ds.row(i);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += sq_dist(xi, ds.row(j)).sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// `sup_x ||x||^2`.
pub fn norm_bound(ds: &Dataset) -> f64 {
    ds.squared_norm_bound()
}

/// Flat summary of one clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cost: f64,
    pub cost_l1: f64,
    pub balance: f64,
    pub balance_star: f64,
    pub fairness_gap: f64,
    pub silhouette: Option<f64>,
    #[serde(rename = "R")]
    pub r: f64,
}

impl MetricReport {
    pub fn compute(ds: &Dataset, centers: &Centers, a: &Assignment, with_silhouette: bool) -> Result<Self> {
        let labels = round_deterministic(a);
        let mut report = Self::from_labels(ds, centers, &labels, with_silhouette)?;
        report.fairness_gap = fairness_gap(a, ds.groups());
        Ok(report)
    }

    /// Metrics of a hard labelling; its fairness gap is that of the one-hot
    /// assignment.
    pub fn from_labels(ds: &Dataset, centers: &Centers, labels: &[usize], with_silhouette: bool) -> Result<Self> {
        let onehot = Assignment::one_hot(labels, centers.k())?;
        let silhouette = if with_silhouette && centers.k() >= 2 {
            Some(silhouette(ds, labels)?)
        } else {
            None
        };
        Ok(Self {
            cost: cost(ds, centers, labels, Mode::KMeans),
            cost_l1: labels
                .iter()
                .enumerate()
                .map(|(i, &k)| l1_dist(ds.row(i), centers.center(k)))
                .sum::<f64>()
                / ds.n() as f64,
            balance: balance(labels, ds.groups(), centers.k()),
            balance_star: balance_star(&ds.group_sizes()),
            fairness_gap: fairness_gap(&onehot, ds.groups()),
            silhouette,
            r: norm_bound(ds),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assignment(rows: &[&[f64]]) -> Assignment {
        let k = rows[0].len();
        Assignment::new(rows.concat(), k).unwrap()
    }

    #[test]
    fn rounding_picks_argmax_low_ties() {
        let a = assignment(&[&[0.2, 0.5, 0.3], &[0.5, 0.5, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(round_deterministic(&a), vec![1, 0, 2]);
    }

    #[test]
    fn cost_examples() {
        let ds = Dataset::new(vec![0.0, 1.0, 2.0, 3.0], 1, vec![0, 1, 0, 1]).unwrap();
        let on = Centers::new(vec![0.0, 1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(cost(&ds, &on, &[0, 1, 2, 3], Mode::KMeans), 0.0);
        let two = Dataset::new(vec![-2.0, 2.0], 1, vec![0, 1]).unwrap();
        let mid = Centers::new(vec![0.0], 1).unwrap();
        assert_eq!(cost(&two, &mid, &[0, 0], Mode::KMeans), 4.0);
    }

    #[test]
    fn balance_examples() {
        // Two clusters of one group-0 and two group-1 members.
        let groups = [0, 1, 1, 0, 1, 1];
        assert_eq!(balance(&[0, 0, 0, 1, 1, 1], &groups, 2), 0.5);
        assert_eq!(balance(&[0, 1, 1, 0, 0, 1], &[0, 1, 1, 0, 0, 0], 2), 0.0);
        // Empty cluster 2 is skipped.
        assert_eq!(balance(&[0, 0, 1, 1], &[0, 1, 0, 1], 3), 1.0);
    }

    #[test]
    fn proportional_balance_matches_group_ratio() {
        let (n0, n1) = (10_771usize, 21_790usize);
        let groups: Vec<usize> = (0..n0 + n1).map(|i| usize::from(i >= n0)).collect();
        let labels = vec![0; n0 + n1];
        let b = balance(&labels, &groups, 1);
        assert_eq!(b, balance_star(&[n0, n1]));
        assert!((b - 0.494).abs() < 5e-4);
    }

    #[test]
    fn fairness_gap_extremes() {
        let same = assignment(&[&[0.3, 0.7], &[0.3, 0.7]]);
        assert_eq!(fairness_gap(&same, &[0, 1]), 0.0);
        let split = assignment(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(fairness_gap(&split, &[0, 1]), 2.0);
    }

    #[test]
    fn silhouette_examples() {
        let ds = Dataset::new(vec![0.0, 0.1, 100.0, 100.1], 1, vec![0, 1, 0, 1]).unwrap();
        assert!(silhouette(&ds, &[0, 0, 1, 1]).unwrap() > 0.9);
        let flat = Dataset::new(vec![1.0; 4], 1, vec![0, 1, 0, 1]).unwrap();
        assert_eq!(silhouette(&flat, &[0, 0, 1, 1]).unwrap(), 0.0);
        let lone = Dataset::new(vec![0.0, 0.1, 50.0], 1, vec![0, 1, 0]).unwrap();
        let s = silhouette(&lone, &[0, 0, 1]).unwrap();
        // Two points at ~1 each, the singleton at 0.
        assert!((s - 2.0 / 3.0 * (1.0 - 0.1 / 49.95)).abs() < 1e-3);
        assert!(matches!(
            silhouette(&ds, &[0, 0, 0, 0]),
            Err(Error::SilhouetteNeedsTwoClusters)
        ));
    }

    #[test]
    fn ratio_bound_on_proportional_assignment() {
        let a = assignment(&[&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]]);
        let rb = ratio_bound(&a, &[0, 1, 1]).unwrap();
        assert!(rb.lhs.abs() < 1e-15);
        assert_eq!(rb.c, 0.5 * 2.0);
    }

    proptest! {
        #[test]
        fn balance_never_exceeds_star(labels in proptest::collection::vec(0usize..4, 2..60), seed in 0usize..1000) {
            let n = labels.len();
            let mut groups: Vec<usize> = (0..n).map(|i| (i * 7 + seed) % 3 % 2).collect();
            groups[0] = 0;
            groups[1] = 1;
            let star = balance_star(&[groups.iter().filter(|&&g| g == 0).count(), groups.iter().filter(|&&g| g == 1).count()]);
            prop_assert!(balance(&labels, &groups, 4) <= star + 1e-15);
        }

        #[test]
        fn cost_invariant_under_relabelling(labels in proptest::collection::vec(0usize..3, 1..30), perm_id in 0usize..6) {
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let perm = perms[perm_id];
            let n = labels.len();
            let pts: Vec<f64> = (0..n).map(|i| (i as f64 * 1.7).sin()).collect();
            let groups: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let mut groups = groups;
            if n == 1 { return Ok(()); }
            groups[1] = 1;
            let ds = Dataset::new(pts, 1, groups).unwrap();
            let mu = vec![-0.5, 0.1, 0.8];
            let mut permuted = vec![0.0; 3];
            for k in 0..3 { permuted[perm[k]] = mu[k]; }
            let c0 = Centers::new(mu, 1).unwrap();
            let c1 = Centers::new(permuted, 1).unwrap();
            let relabelled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
            prop_assert_eq!(cost(&ds, &c0, &labels, Mode::KMeans), cost(&ds, &c1, &relabelled, Mode::KMeans));
        }
    }
}
