//! Exhaustive references for tiny instances.

use crate::clustering::{Centers, Mode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics;
use crate::transport::CostMatrix;

/// Largest group size accepted by [`brute_force_fair_kmeans`].
pub const FAIR_KMEANS_MAX_N: usize = 5;
/// Largest cluster count accepted by [`brute_force_fair_kmeans`].
pub const FAIR_KMEANS_MAX_K: usize = 3;
/// Largest side accepted by [`brute_force_coupling`].
pub const COUPLING_MAX_N: usize = 7;

/// Optimal perfectly fair deterministic clustering of a tiny instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FairOptimum {
    pub cost: f64,
    /// `matching[a] = b` pairs the `a`-th member of group 0 with the
    /// `b`-th member of group 1.
    pub matching: Vec<usize>,
    /// Cluster of each pair, indexed like `matching`.
    pub pair_labels: Vec<usize>,
    pub centers: Centers,
}

/// Steps `p` to the next permutation in lexicographic order; false after
/// the last one.
fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Steps a base-`k` counter, most significant digit first.
fn next_labels(labels: &mut [usize], k: usize) -> bool {
    for l in labels.iter_mut().rev() {
        *l += 1;
        if *l < k {
            return true;
        }
        *l = 0;
    }
    false
}

/// Labels of every dataset row under a matching and pair labelling.
fn row_labels(ds: &Dataset, matching: &[usize], pair_labels: &[usize]) -> Vec<usize> {
    let g0 = ds.group_index(0);
    let g1 = ds.group_index(1);
    let mut labels = vec![0; ds.n()];
    for (a, &b) in matching.iter().enumerate() {
        labels[g0[a]] = pair_labels[a];
        labels[g1[b]] = pair_labels[a];
    }
    labels
}

/// Member means; an empty cluster sits at the first row, which never
/// affects the cost.
fn mean_centers(ds: &Dataset, labels: &[usize], k: usize) -> Centers {
    let d = ds.dim();
    let mut mu = vec![0.0; k * d];
    let mut count = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        count[l] += 1;
        for (m, x) in mu[l * d..(l + 1) * d].iter_mut().zip(ds.row(i)) {
            *m += x;
        }
    }
    for c in 0..k {
        let slot = &mut mu[c * d..(c + 1) * d];
        if count[c] == 0 {
            slot.copy_from_slice(ds.row(0));
        } else {
            slot.iter_mut().for_each(|m| *m /= count[c] as f64);
        }
    }
    Centers::new(mu, d).expect("finite means")
}

/// Enumerates every matching of the two groups and every assignment of
/// pairs to `k` clusters, with centers at member means. Ties keep the
/// lexicographically smallest `(matching, pair_labels)`.
pub fn brute_force_fair_kmeans(ds: &Dataset, k: usize) -> Result<FairOptimum> {
    if ds.n_groups() != 2 {
        return Err(Error::OracleCap(format!("needs two groups, got {}", ds.n_groups())));
    }
    let n0 = ds.group_size(0);
    if n0 != ds.group_size(1) {
        return Err(Error::OracleCap(format!(
            "needs equal group sizes, got {n0} and {}",
            ds.group_size(1)
        )));
    }
    if n0 > FAIR_KMEANS_MAX_N || k == 0 || k > FAIR_KMEANS_MAX_K {
        return Err(Error::OracleCap(format!(
            "group size {n0} and k {k} exceed caps {FAIR_KMEANS_MAX_N} and {FAIR_KMEANS_MAX_K}"
        )));
    }
    let mut matching: Vec<usize> = (0..n0).collect();
    let mut best: Option<FairOptimum> = None;
    loop {
        let mut pair_labels = vec![0; n0];
        loop {
            let labels = row_labels(ds, &matching, &pair_labels);
            let centers = mean_centers(ds, &labels, k);
            let cost = metrics::cost(ds, &centers, &labels, Mode::KMeans);
            if best.as_ref().is_none_or(|b| cost < b.cost) {
                best = Some(FairOptimum {
                    cost,
                    matching: matching.clone(),
                    pair_labels: pair_labels.clone(),
                    centers,
                });
            }
            if !next_labels(&mut pair_labels, k) {
                break;
            }
        }
        if !next_permutation(&mut matching) {
            break;
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Cheapest permutation of a square cost matrix; the objective is the mean
/// matched cost, i.e. the transport cost under uniform marginals.
pub fn brute_force_coupling(cost: &CostMatrix) -> Result<(f64, Vec<usize>)> {
    let n = cost.rows();
    if n != cost.cols() {
        return Err(Error::OracleCap(format!("needs a square matrix, got {n}x{}", cost.cols())));
    }
    if n == 0 || n > COUPLING_MAX_N {
        return Err(Error::OracleCap(format!("side {n} outside 1..={COUPLING_MAX_N}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (f64::INFINITY, perm.clone());
    loop {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
        let obj = total / n as f64;
        if obj < best.0 {
            best = (obj, perm.clone());
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best)
}
