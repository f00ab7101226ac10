//! Weighted K-means / K-median: kmeans++ seeding and Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PARALLEL_MIN: usize = 1 << 14;

/// Squared Euclidean K-means or L1 K-median.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    KMeans,
    KMedian,
}

impl Mode {
    /// Squared L2 for K-means, L1 for K-median.
    #[inline]
    pub fn dist(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Mode::KMeans => sq_dist(a, b),
            Mode::KMedian => l1_dist(a, b),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(Mode::KMeans),
            "kmedian" => Ok(Mode::KMedian),
            other => Err(Error::InvalidParameter(format!("unknown mode `{other}`"))),
        }
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn l1_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `K` centers stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centers {
    mu: Vec<f64>,
    d: usize,
}

impl Centers {
    pub fn new(mu: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 || mu.is_empty() || mu.len() % d != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} center coordinates do not form rows of dimension {d}",
                mu.len()
            )));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite center coordinate".into()));
        }
        Ok(Self { mu, d })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidParameter("ragged center rows".into()));
        }
        Self::new(rows.concat(), d)
    }

    pub fn k(&self) -> usize {
        self.mu.len() / self.d
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn center(&self, k: usize) -> &[f64] {
        &self.mu[k * self.d..(k + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mu
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.mu.chunks(self.d).map(<[f64]>::to_vec).collect()
    }

    /// Nearest center and its distance; ties go to the lowest index.
    #[inline]
    pub fn nearest(&self, x: &[f64], mode: Mode) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.mu.chunks(self.d).enumerate() {
            let dist = mode.dist(x, c);
            if dist < best.1 {
                best = (k, dist);
            }
        }
        best
    }

    /// Largest Euclidean distance between matching centers.
    pub fn max_displacement(&self, other: &Centers) -> f64 {
        self.mu
            .chunks(self.d)
            .zip(other.mu.chunks(other.d))
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Points with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPoints {
    points: Vec<f64>,
    d: usize,
    weights: Vec<f64>,
}

impl WeightedPoints {
    pub fn new(points: Vec<f64>, d: usize, weights: Vec<f64>) -> Result<Self> {
        if d == 0 || points.len() != weights.len() * d {
            return Err(Error::InvalidParameter(format!(
                "{} coordinates for {} weights of dimension {d}",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite point coordinate".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { points, d, weights })
    }

    /// Rescales positive weights to sum to one.
    pub fn normalized(points: Vec<f64>, d: usize, mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidParameter(format!("total weight {total}")));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(points, d, weights)
    }

    pub fn uniform(points: Vec<f64>, d: usize) -> Result<Self> {
        let m = if d == 0 { 0 } else { points.len() / d };
        if m == 0 {
            return Err(Error::InvalidParameter("no points".into()));
        }
        Self::new(points, d, vec![1.0 / m as f64; m])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Nearest-center index per point (ties to the lowest index).
pub fn assign_nearest(points: &[f64], d: usize, centers: &Centers, mode: Mode) -> Vec<usize> {
    let f = |x: &[f64]| centers.nearest(x, mode).0;
    if points.len() >= PARALLEL_MIN {
        points.par_chunks(d).map(f).collect()
    } else {
        points.chunks(d).map(f).collect()
    }
}

/// D^2 seeding weighted by point mass.
pub fn kmeanspp_init(wp: &WeightedPoints, k: usize, seed: u64) -> Result<Centers> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    let found = distinct_positive(wp, k);
    if found < k {
        return Err(Error::NotEnoughPoints { k, found });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(k * wp.d);
    let first = sample(&mut rng, wp.weights.iter().copied());
    chosen.extend_from_slice(wp.point(first));
    let mut d2: Vec<f64> = (0..wp.len())
        .map(|i| sq_dist(wp.point(i), wp.point(first)))
        .collect();
    for _ in 1..k {
        let next = sample(&mut rng, wp.weights.iter().zip(&d2).map(|(w, d)| w * d));
        let c = wp.point(next).to_vec();
        for (i, di) in d2.iter_mut().enumerate() {
            *di = di.min(sq_dist(wp.point(i), &c));
        }
        chosen.extend_from_slice(&c);
    }
    Centers::new(chosen, wp.d)
}

fn distinct_positive(wp: &WeightedPoints, cap: usize) -> usize {
    let mut seen: Vec<&[f64]> = Vec::new();
    for i in 0..wp.len() {
        if wp.weights[i] > 0.0 && !seen.iter().any(|p| *p == wp.point(i)) {
            seen.push(wp.point(i));
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

fn sample(rng: &mut ChaCha8Rng, mass: impl Iterator<Item = f64> + Clone) -> usize {
    let total: f64 = mass.clone().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, m) in mass.enumerate() {
        if m > 0.0 {
            acc += m;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Debug, Clone, Copy)]
pub struct LloydOptions {
    pub mode: Mode,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LloydOptions {
    fn default() -> Self {
        Self {
            mode: Mode::KMeans,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LloydResult {
    pub centers: Centers,
    /// Weighted objective at `centers`.
    pub objective: f64,
    pub labels: Vec<usize>,
    /// Objective after each assignment step, ending with the final one.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Weighted Lloyd iterations from `init`.
pub fn lloyd_weighted(wp: &WeightedPoints, init: &Centers, opts: &LloydOptions) -> Result<LloydResult> {
    if init.dim() != wp.d {
        return Err(Error::InvalidParameter(format!(
            "centers have dimension {}, points {}",
            init.dim(),
            wp.d
        )));
    }
    let mode = opts.mode;
    let mut centers = init.clone();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let (mut labels, mut contrib) = assign(wp, &centers, mode);
    trace.push(contrib.iter().sum());
    while iterations < opts.max_iter {
        iterations += 1;
        let next = update_centers(wp, &centers, &labels, &contrib, mode)?;
        let moved = next.max_displacement(&centers);
        centers = next;
        (labels, contrib) = assign(wp, &centers, mode);
        trace.push(contrib.iter().sum());
        if moved < opts.tol {
            break;
        }
    }
    let objective = *trace.last().expect("trace is never empty");
    Ok(LloydResult {
        centers,
        objective,
        labels,
        trace,
        iterations,
    })
}

/// kmeans++ followed by Lloyd.
pub fn weighted_kmeans(wp: &WeightedPoints, k: usize, opts: &LloydOptions, seed: u64) -> Result<LloydResult> {
    let init = kmeanspp_init(wp, k, seed)?;
    lloyd_weighted(wp, &init, opts)
}

/// Labels and per-point weighted distances.
fn assign(wp: &WeightedPoints, centers: &Centers, mode: Mode) -> (Vec<usize>, Vec<f64>) {
    let f = |(x, w): (&[f64], &f64)| {
        let (k, dist) = centers.nearest(x, mode);
        (k, w * dist)
    };
    if wp.points.len() >= PARALLEL_MIN {
        wp.points.par_chunks(wp.d).zip(wp.weights.par_iter()).map(f).unzip()
    } else {
        wp.points.chunks(wp.d).zip(wp.weights.iter()).map(f).unzip()
    }
}

fn update_centers(
    wp: &WeightedPoints,
    old: &Centers,
    labels: &[usize],
    contrib: &[f64],
    mode: Mode,
) -> Result<Centers> {
    let (k, d) = (old.k(), wp.d);
    let mut mass = vec![0.0; k];
    for (l, w) in labels.iter().zip(&wp.weights) {
        mass[*l] += w;
    }
    let mut mu = old.as_slice().to_vec();
    match mode {
        Mode::KMeans => {
            let mut sums = vec![0.0; k * d];
            for (i, &l) in labels.iter().enumerate() {
                let w = wp.weights[i];
                if w > 0.0 {
                    for (s, x) in sums[l * d..(l + 1) * d].iter_mut().zip(wp.point(i)) {
                        *s += w * x;
                    }
                }
            }
            for c in 0..k {
                if mass[c] > 0.0 {
                    for t in 0..d {
                        mu[c * d + t] = sums[c * d + t] / mass[c];
                    }
                }
            }
        }
        Mode::KMedian => {
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (i, &l) in labels.iter().enumerate() {
                if wp.weights[i] > 0.0 {
                    members[l].push(i);
                }
            }
            let mut column: Vec<(f64, f64)> = Vec::new();
            for c in 0..k {
                if mass[c] <= 0.0 {
                    continue;
                }
                for t in 0..d {
                    column.clear();
                    column.extend(members[c].iter().map(|&i| (wp.points[i * d + t], wp.weights[i])));
                    mu[c * d + t] = weighted_median(&mut column);
                }
            }
        }
    }

    // Empty clusters jump to the points contributing most to the objective.
    let mut taken = vec![false; wp.len()];
    for c in (0..k).filter(|&c| mass[c] <= 0.0) {
        let best = contrib
            .iter()
            .enumerate()
            .filter(|&(i, &v)| !taken[i] && v > 0.0)
            .fold(None, |acc: Option<(usize, f64)>, (i, &v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((i, v)),
            });
        if let Some((i, _)) = best {
            taken[i] = true;
            mu[c * d..(c + 1) * d].copy_from_slice(wp.point(i));
        }
    }
    Centers::new(mu, d)
}

/// Smallest value whose cumulative weight reaches half the total.
pub fn weighted_median(values: &mut [(f64, f64)]) -> f64 {
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = values.iter().map(|v| v.1).sum();
    let mut acc = 0.0;
    for &(v, w) in values.iter() {
        acc += w;
        if acc >= 0.5 * total {
            return v;
        }
    }
    values.last().map_or(0.0, |v| v.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wp(points: &[f64], d: usize) -> WeightedPoints {
        WeightedPoints::uniform(points.to_vec(), d).unwrap()
    }

    fn run(points: &WeightedPoints, init: &[f64], mode: Mode) -> LloydResult {
        let init = Centers::new(init.to_vec(), points.dim()).unwrap();
        lloyd_weighted(
            points,
            &init,
            &LloydOptions {
                mode,
                ..LloydOptions::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn single_center_is_weighted_mean() {
        let r = run(&wp(&[0.0, 2.0], 1), &[0.0], Mode::KMeans);
        assert_eq!(r.centers.as_slice(), &[1.0]);
        assert_eq!(r.objective, 1.0);
    }

    #[test]
    fn fixed_point_is_kept() {
        let r = run(&wp(&[0.0, 10.0], 1), &[0.0, 10.0], Mode::KMeans);
        assert_eq!(r.centers.as_slice(), &[0.0, 10.0]);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn four_points_two_clusters() {
        // Best contiguous split of {0,1,2,3}: {0,1} | {2,3}.
        let pts = wp(&[0.0, 1.0, 2.0, 3.0], 1);
        let mut best = f64::INFINITY;
        for cut in 1..4 {
            let (a, b) = ([0.0, 1.0, 2.0, 3.0][..cut].to_vec(), [0.0, 1.0, 2.0, 3.0][cut..].to_vec());
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (ma, mb) = (mean(&a), mean(&b));
            let cost = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>()
                + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>())
                / 4.0;
            best = best.min(cost);
        }
        let r = run(&pts, &[0.0, 3.0], Mode::KMeans);
        assert_eq!(r.centers.as_slice(), &[0.5, 2.5]);
        assert_eq!(r.objective, 0.25);
        assert_eq!(best, 0.25);
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let c = Centers::new(vec![-1.0, 1.0, 5.0], 1).unwrap();
        assert_eq!(c.nearest(&[0.0], Mode::KMeans).0, 0);
        assert_eq!(c.nearest(&[5.0], Mode::KMeans).0, 2);
    }

    #[test]
    fn metrics_can_disagree() {
        // (0,0) against (2,0) and (1.2,1.2): L2^2 4 vs 2.88, L1 2 vs 2.4.
        let c = Centers::new(vec![2.0, 0.0, 1.2, 1.2], 2).unwrap();
        let l2 = assign_nearest(&[0.0, 0.0], 2, &c, Mode::KMeans);
        let l1 = assign_nearest(&[0.0, 0.0], 2, &c, Mode::KMedian);
        assert_eq!((l2[0], l1[0]), (1, 0));
    }

    #[test]
    fn kmeanspp_single_center_is_a_data_point() {
        let pts = wp(&[3.0, 7.0, 11.0], 1);
        let c = kmeanspp_init(&pts, 1, 5).unwrap();
        assert!([3.0, 7.0, 11.0].contains(&c.as_slice()[0]));
    }

    #[test]
    fn kmeanspp_picks_far_point() {
        let pts = wp(&[0.0, 0.0, 1e6, 0.0], 2);
        for seed in 0..20 {
            let c = kmeanspp_init(&pts, 2, seed).unwrap();
            let mut xs = vec![c.center(0)[0], c.center(1)[0]];
            xs.sort_by(f64::total_cmp);
            assert_eq!(xs, vec![0.0, 1e6]);
        }
    }

    #[test]
    fn kmeanspp_is_deterministic() {
        let pts = wp(&(0..40).map(|i| (i * 37 % 17) as f64).collect::<Vec<_>>(), 2);
        assert_eq!(kmeanspp_init(&pts, 4, 9).unwrap(), kmeanspp_init(&pts, 4, 9).unwrap());
    }

    #[test]
    fn kmeanspp_needs_distinct_points() {
        let pts = WeightedPoints::new(vec![1.0, 1.0, 2.0], 1, vec![0.5, 0.5, 0.0]).unwrap();
        assert!(matches!(
            kmeanspp_init(&pts, 2, 0),
            Err(Error::NotEnoughPoints { k: 2, found: 1 })
        ));
    }

    #[test]
    fn empty_cluster_is_repaired() {
        let pts = wp(&[0.0, 1.0, 10.0, 11.0], 1);
        let r = run(&pts, &[0.0, 100.0], Mode::KMeans);
        assert_eq!(r.centers.as_slice(), &[0.5, 10.5]);
    }

    #[test]
    fn weighted_median_takes_lower_atom() {
        let mut v = vec![(3.0, 0.25), (1.0, 0.25), (2.0, 0.5)];
        assert_eq!(weighted_median(&mut v), 2.0);
        let mut v = vec![(1.0, 0.5), (4.0, 0.5)];
        assert_eq!(weighted_median(&mut v), 1.0);
    }

    #[test]
    fn rejects_unnormalized_weights() {
        assert!(WeightedPoints::new(vec![0.0, 1.0], 1, vec![0.5, 0.6]).is_err());
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
        (2usize..30, 1usize..4).prop_flat_map(|(m, k)| {
            (
                proptest::collection::vec(-10.0f64..10.0, m * 2),
                proptest::collection::vec(0.01f64..1.0, m),
                Just(k.min(m)),
            )
        })
    }

    proptest! {
        #[test]
        fn objective_never_increases((pts, w, k) in instance(), median in any::<bool>(), seed in 0u64..100) {
            let wp = WeightedPoints::normalized(pts, 2, w).unwrap();
            let mode = if median { Mode::KMedian } else { Mode::KMeans };
            let init = kmeanspp_init(&wp, k, seed).unwrap();
            let r = lloyd_weighted(&wp, &init, &LloydOptions { mode, ..LloydOptions::default() }).unwrap();
            for pair in r.trace.windows(2) {
                prop_assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0));
            }
        }

        #[test]
        fn mean_beats_grid(xs in proptest::collection::vec(-5.0f64..5.0, 1..12),
                           ws in proptest::collection::vec(0.01f64..1.0, 12)) {
            let w = ws[..xs.len()].to_vec();
            let wp = WeightedPoints::normalized(xs.clone(), 1, w).unwrap();
            let r = lloyd_weighted(&wp, &Centers::new(vec![0.0], 1).unwrap(),
                &LloydOptions { max_iter: 1, ..LloydOptions::default() }).unwrap();
            let mu = r.centers.as_slice()[0];
            let cost = |c: f64| xs.iter().zip(wp.weights()).map(|(x, w)| w * (x - c).powi(2)).sum::<f64>();
            for g in 0..=2000 {
                let c = -5.0 + g as f64 * 0.005;
                prop_assert!(cost(mu) <= cost(c) + 1e-12);
            }
        }

        #[test]
        fn median_beats_grid(xs in proptest::collection::vec(-5.0f64..5.0, 1..12),
                             ws in proptest::collection::vec(0.01f64..1.0, 12)) {
            let w = ws[..xs.len()].to_vec();
            let wp = WeightedPoints::normalized(xs.clone(), 1, w).unwrap();
            let r = lloyd_weighted(&wp, &Centers::new(vec![0.0], 1).unwrap(),
                &LloydOptions { mode: Mode::KMedian, max_iter: 1, ..LloydOptions::default() }).unwrap();
            let mu = r.centers.as_slice()[0];
            let cost = |c: f64| xs.iter().zip(wp.weights()).map(|(x, w)| w * (x - c).abs()).sum::<f64>();
            for g in 0..=2000 {
                let c = -5.0 + g as f64 * 0.005;
                prop_assert!(cost(mu) <= cost(c) + 1e-12);
            }
        }

        #[test]
        fn weight_scale_leaves_trajectory((pts, w, k) in instance(), exp in -8i32..8) {
            let a = WeightedPoints::normalized(pts.clone(), 2, w.clone()).unwrap();
            let scale = 2f64.powi(exp);
            let b = WeightedPoints::normalized(pts, 2, w.iter().map(|v| v * scale).collect()).unwrap();
            let init = kmeanspp_init(&a, k, 1).unwrap();
            prop_assert_eq!(&init, &kmeanspp_init(&b, k, 1).unwrap());
            let ra = lloyd_weighted(&a, &init, &LloydOptions::default()).unwrap();
            let rb = lloyd_weighted(&b, &init, &LloydOptions::default()).unwrap();
            prop_assert_eq!(ra.labels, rb.labels);
            prop_assert_eq!(ra.trace, rb.trace);
        }
    }
}
