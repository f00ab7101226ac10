//! Datasets with protected-group labels: CSV ingestion, standardization,
//! synthetic Gaussian mixtures and random per-group partitioning.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points in `R^d` with one protected-group label per point.
///
/// Rows are stored contiguously. Group labels are dense in `0..G` and every
/// group is non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
    d: usize,
    groups: Vec<usize>,
    group_index: Vec<Vec<usize>>,
    feature_names: Vec<String>,
    group_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from row-major `points` (n*d values) and labels.
    pub fn new(points: Vec<f64>, d: usize, groups: Vec<usize>) -> Result<Self> {
        let feature_names = (0..d).map(|c| format!("x{c}")).collect();
        let n_groups = groups.iter().copied().max().map_or(0, |g| g + 1);
        let group_names = (0..n_groups).map(|g| g.to_string()).collect();
        Self::with_names(points, d, groups, feature_names, group_names)
    }

    pub fn with_names(
        points: Vec<f64>,
        d: usize,
        groups: Vec<usize>,
        feature_names: Vec<String>,
        group_names: Vec<String>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDataset("feature dimension is zero".into()));
        }
        if points.len() != groups.len() * d {
            return Err(Error::InvalidDataset(format!(
                "{} coordinates for {} rows of dimension {d}",
                points.len(),
                groups.len()
            )));
        }
        if feature_names.len() != d {
            return Err(Error::InvalidDataset("feature name count != d".into()));
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite coordinate in row {}",
                pos / d
            )));
        }
        let n_groups = group_names.len();
        if n_groups < 2 {
            return Err(Error::TooFewGroups);
        }
        let mut group_index = vec![Vec::new(); n_groups];
        for (i, &g) in groups.iter().enumerate() {
            if g >= n_groups {
                return Err(Error::InvalidDataset(format!(
                    "group label {g} out of range 0..{n_groups}"
                )));
            }
            group_index[g].push(i);
        }
        if let Some(s) = group_index.iter().position(Vec::is_empty) {
            return Err(Error::EmptyGroup(s));
        }
        Ok(Self {
            points,
            d,
            groups,
            group_index,
            feature_names,
            group_names,
        })
    }

    pub fn n(&self) -> usize {
        self.groups.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_groups(&self) -> usize {
        self.group_index.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    /// Row indices of group `s`, in dataset order.
    pub fn group_index(&self, s: usize) -> &[usize] {
        &self.group_index[s]
    }

    pub fn group_size(&self, s: usize) -> usize {
        self.group_index[s].len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.group_index.iter().map(Vec::len).collect()
    }

    /// Population share `n_s / n` of group `s`.
    pub fn pi(&self, s: usize) -> f64 {
        self.group_size(s) as f64 / self.n() as f64
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    /// `sup_x ||x||^2` over the dataset.
    pub fn squared_norm_bound(&self) -> f64 {
        (0..self.n())
            .map(|i| self.row(i).iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// How to read a CSV file into a [`Dataset`].
#[derive(Debug, Clone, Default)]
pub struct CsvSpec {
    pub group_column: String,
    /// Feature columns; `None` takes every column except the group column.
    pub feature_columns: Option<Vec<String>>,
    /// Explicit raw value -> group label mapping. Without it, labels follow
    /// first-appearance order.
    pub group_map: Option<Vec<(String, usize)>>,
}

impl CsvSpec {
    pub fn new(group_column: impl Into<String>) -> Self {
        Self {
            group_column: group_column.into(),
            ..Self::default()
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, spec: &CsvSpec) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, spec)
}

/// Parses CSV text with a header row. Features are returned unscaled and in
/// file order.
pub fn read_csv<R: Read>(reader: R, spec: &CsvSpec) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let group_col = column(&spec.group_column)?;
    let feature_cols: Vec<usize> = match &spec.feature_columns {
        Some(names) => names.iter().map(|c| column(c)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&c| c != group_col).collect(),
    };
    if feature_cols.is_empty() {
        return Err(Error::InvalidDataset("no feature columns".into()));
    }

    let explicit: Option<HashMap<&str, usize>> = spec
        .group_map
        .as_ref()
        .map(|m| m.iter().map(|(k, v)| (k.as_str(), *v)).collect());
    let mut seen: Vec<String> = Vec::new();
    let mut points = Vec::new();
    let mut groups = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for &c in &feature_cols {
            let cell = record.get(c).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row,
                column: headers[c].clone(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumeric {
                    row,
                    column: headers[c].clone(),
                });
            }
            points.push(v);
        }
        let raw = record.get(group_col).unwrap_or("");
        let label = match &explicit {
            Some(map) => *map.get(raw).ok_or_else(|| {
                Error::InvalidDataset(format!("group value `{raw}` at row {row} is not mapped"))
            })?,
            None => match seen.iter().position(|s| s == raw) {
                Some(p) => p,
                None => {
                    seen.push(raw.to_string());
                    seen.len() - 1
                }
            },
        };
        groups.push(label);
    }

    let group_names = match &spec.group_map {
        Some(map) => {
            let g = map.iter().map(|(_, v)| v + 1).max().unwrap_or(0);
            let mut names = vec![String::new(); g];
            for (k, v) in map {
                names[*v] = k.clone();
            }
            names
        }
        None => seen,
    };
    if group_names.len() < 2 {
        return Err(Error::TooFewGroups);
    }
    let feature_names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    Dataset::with_names(
        points,
        feature_cols.len(),
        groups,
        feature_names,
        group_names,
    )
}

/// Standardizes every column to zero mean and unit population variance,
/// then optionally rescales each row to unit Euclidean norm.
///
/// Constant columns are dropped with a warning.
pub fn preprocess(ds: &Dataset, l2_normalize: bool) -> Result<Dataset> {
    let n = ds.n();
    if n < 2 {
        return Err(Error::InvalidDataset("need at least two rows".into()));
    }
    let d = ds.dim();
    let mut keep = Vec::with_capacity(d);
    let mut stats = Vec::with_capacity(d);
    for c in 0..d {
        let mean = (0..n).map(|i| ds.row(i)[c]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (ds.row(i)[c] - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = mean.abs().max(1.0);
        if var.sqrt() <= 1e-12 * scale {
            warn!("dropping constant column `{}`", ds.feature_names[c]);
            continue;
        }
        keep.push(c);
        stats.push((mean, var.sqrt()));
    }
    if keep.is_empty() {
        return Err(Error::AllColumnsConstant);
    }
    let d_new = keep.len();
    let mut points = Vec::with_capacity(n * d_new);
    for i in 0..n {
        let row = ds.row(i);
        let start = points.len();
        points.extend(
            keep.iter()
                .zip(&stats)
                .map(|(&c, &(mean, sd))| (row[c] - mean) / sd),
        );
        if l2_normalize {
            let out = &mut points[start..];
            let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                out.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    let feature_names = keep.iter().map(|&c| ds.feature_names[c].clone()).collect();
    Dataset::with_names(
        points,
        d_new,
        ds.groups.clone(),
        feature_names,
        ds.group_names.clone(),
    )
}

fn default_mean_range() -> (f64, f64) {
    (-20.0, 20.0)
}

fn default_sigma_range() -> (f64, f64) {
    (1.0, 3.0)
}

fn default_separation() -> f64 {
    1.0
}

/// Parameters of the two-group Gaussian mixture generator.
///
/// Components `0..J/2` generate group 0 and `J/2..J` generate group 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "J", alias = "j", alias = "components")]
    pub components: usize,
    /// Dirichlet concentration; a single value is broadcast to all components.
    #[serde(default)]
    pub dirichlet_alpha: Vec<f64>,
    #[serde(default = "default_mean_range")]
    pub mean_range: (f64, f64),
    #[serde(default = "default_sigma_range")]
    pub sigma_range: (f64, f64),
    #[serde(default = "default_separation")]
    pub min_mean_separation: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n: usize, d: usize, components: usize, seed: u64) -> Self {
        Self {
            n,
            d,
            components,
            dirichlet_alpha: vec![1.0],
            mean_range: default_mean_range(),
            sigma_range: default_sigma_range(),
            min_mean_separation: default_separation(),
            seed,
        }
    }

    fn alphas(&self) -> Result<Vec<f64>> {
        let alphas = match self.dirichlet_alpha.len() {
            0 => vec![1.0; self.components],
            1 => vec![self.dirichlet_alpha[0]; self.components],
            l if l == self.components => self.dirichlet_alpha.clone(),
            l => {
                return Err(Error::InvalidParameter(format!(
                    "{l} dirichlet weights for {} components",
                    self.components
                )))
            }
        };
        if alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::InvalidParameter(
                "dirichlet weights must be positive".into(),
            ));
        }
        Ok(alphas)
    }

    fn validate(&self) -> Result<()> {
        if self.components < 2 || self.components % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "component count must be even and >= 2, got {}",
                self.components
            )));
        }
        if self.n < self.components {
            return Err(Error::InvalidParameter(format!(
                "n = {} is smaller than the component count {}",
                self.n, self.components
            )));
        }
        if self.d == 0 {
            return Err(Error::InvalidParameter("d must be positive".into()));
        }
        let (lo, hi) = self.sigma_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma range ({lo}, {hi}) must lie in (0, inf)"
            )));
        }
        let (lo, hi) = self.mean_range;
        if !(hi > lo && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mean range ({lo}, {hi}) is empty"
            )));
        }
        if !(self.min_mean_separation > 0.0) {
            return Err(Error::InvalidParameter(
                "min_mean_separation must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic`]: the standardized dataset plus the
/// generating mixture.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Generating component of each row.
    pub components: Vec<usize>,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
}

const MEAN_ATTEMPTS: usize = 10_000;

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let alphas = spec.alphas()?;
    let j = spec.components;
    let d = spec.d;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut means: Vec<Vec<f64>> = Vec::with_capacity(j);
    let (lo, hi) = spec.mean_range;
    let mut attempts = 0;
    while means.len() < j {
        attempts += 1;
        if attempts > MEAN_ATTEMPTS {
            return Err(Error::MeanSamplingExhausted(MEAN_ATTEMPTS));
        }
        let cand: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi)).collect();
        let far_enough = means.iter().all(|m| {
            m.iter()
                .zip(&cand)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                >= spec.min_mean_separation
        });
        if far_enough {
            means.push(cand);
        }
    }
    let (slo, shi) = spec.sigma_range;
    let sigmas: Vec<f64> = (0..j)
        .map(|_| {
            if shi > slo {
                rng.random_range(slo..shi)
            } else {
                slo
            }
        })
        .collect();
    // Dirichlet draw as normalized Gamma(alpha_j, 1) variates.
    let mut weights = Vec::with_capacity(j);
    for &a in &alphas {
        let gamma = Gamma::new(a, 1.0)
            .map_err(|e| Error::InvalidParameter(format!("dirichlet alpha {a}: {e}")))?;
        weights.push(gamma.sample(&mut rng));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("degenerate dirichlet draw".into()));
    }
    weights.iter_mut().for_each(|w| *w /= total);

    let mut cumulative = Vec::with_capacity(j);
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut points = Vec::with_capacity(spec.n * d);
    let mut groups = Vec::with_capacity(spec.n);
    let mut components = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let u: f64 = rng.random::<f64>() * acc;
        let c = cumulative.partition_point(|&c| c <= u).min(j - 1);
        for m in &means[c] {
            let z: f64 = std_normal.sample(&mut rng);
            points.push(m + sigmas[c] * z);
        }
        components.push(c);
        groups.push(usize::from(c >= j / 2));
    }
    if !groups.contains(&0) || !groups.contains(&1) {
        return Err(Error::InvalidParameter(format!(
            "seed {} produced an empty protected group; choose another seed or a larger n",
            spec.seed
        )));
    }
    let raw = Dataset::new(points, d, groups)?;
    let dataset = preprocess(&raw, false)?;
    Ok(SyntheticData {
        dataset,
        components,
        weights,
        means,
        sigmas,
    })
}

/// A random split of every protected group into `L` blocks of near-equal
/// size. Block `l` pairs the `l`-th chunk of each group.
#[derive(Debug, Clone, PartialEq)]
pub struct Partitioning {
    /// `blocks[l][s]` lists the dataset rows of group `s` in block `l`.
    blocks: Vec<Vec<Vec<usize>>>,
    target_size: usize,
}

impl Partitioning {
    /// The trivial partitioning: one block holding every row.
    pub fn whole(ds: &Dataset) -> Self {
        let groups = (0..ds.n_groups())
            .map(|s| ds.group_index(s).to_vec())
            .collect();
        Self {
            blocks: vec![groups],
            target_size: ds.n(),
        }
    }

    /// Explicit blocks; `blocks[l][s]` lists group-`s` rows of block `l`.
    pub fn from_blocks(blocks: Vec<Vec<Vec<usize>>>) -> Self {
        let target_size = blocks
            .first()
            .map_or(0, |b| b.iter().map(Vec::len).sum());
        Self {
            blocks,
            target_size,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, l: usize) -> &[Vec<usize>] {
        &self.blocks[l]
    }

    pub fn blocks(&self) -> &[Vec<Vec<usize>>] {
        &self.blocks
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }
}

/// Splits each group into `L = max(1, round(n / m))` shuffled blocks.
///
/// `L` is capped by the smallest group size so no block is empty.
pub fn make_partitioning(ds: &Dataset, m: usize, seed: u64) -> Result<Partitioning> {
    make_partitioning_capped(ds, m, usize::MAX, seed)
}

/// Like [`make_partitioning`], but also raises `L` until no group
/// contributes more than `max_per_group` rows to a block.
pub fn make_partitioning_capped(
    ds: &Dataset,
    m: usize,
    max_per_group: usize,
    seed: u64,
) -> Result<Partitioning> {
    let n = ds.n();
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "partition size must be >= 2, got {m}"
        )));
    }
    if max_per_group == 0 {
        return Err(Error::InvalidParameter("block cap must be positive".into()));
    }
    let m = m.min(n);
    let mut l = ((n as f64 / m as f64).round() as usize).max(1);
    let largest = ds.group_sizes().into_iter().max().unwrap_or(1);
    l = l.max(largest.div_ceil(max_per_group));
    let smallest = ds.group_sizes().into_iter().min().unwrap_or(1);
    l = l.min(smallest);
    if l == 1 {
        // A single block keeps file order so it matches the unpartitioned problem.
        return Ok(Partitioning {
            target_size: m,
            ..Partitioning::whole(ds)
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = vec![Vec::with_capacity(ds.n_groups()); l];
    for s in 0..ds.n_groups() {
        let mut idx = ds.group_index(s).to_vec();
        idx.shuffle(&mut rng);
        let base = idx.len() / l;
        let extra = idx.len() % l;
        let mut start = 0;
        for (b, block) in blocks.iter_mut().enumerate() {
            let len = base + usize::from(b < extra);
            block.push(idx[start..start + len].to_vec());
            start += len;
        }
    }
    Ok(Partitioning {
        blocks,
        target_size: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_ds(text: &str, spec: &CsvSpec) -> Result<Dataset> {
        read_csv(text.as_bytes(), spec)
    }

    #[test]
    fn csv_maps_groups_in_first_appearance_order() {
        let ds = csv_ds("a,b,sex\n1,2,F\n3,4,M\n5,6,F\n", &CsvSpec::new("sex")).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.groups(), &[0, 1, 0]);
        assert_eq!(ds.row(1), &[3.0, 4.0]);
        assert_eq!(ds.group_names(), &["F".to_string(), "M".to_string()]);
    }

    #[test]
    fn csv_explicit_group_map() {
        let mut spec = CsvSpec::new("sex");
        spec.group_map = Some(vec![("M".into(), 0), ("F".into(), 1)]);
        let ds = csv_ds("a,sex\n1,F\n3,M\n", &spec).unwrap();
        assert_eq!(ds.groups(), &[1, 0]);
    }

    #[test]
    fn csv_blank_cell_is_an_error() {
        let err = csv_ds("a,b,sex\n1,,F\n3,4,M\n", &CsvSpec::new("sex")).unwrap_err();
        assert_eq!(err.to_string(), "non-numeric value at row 1, column b");
    }

    #[test]
    fn csv_single_group_is_an_error() {
        let err = csv_ds("a,sex\n1,F\n2,F\n", &CsvSpec::new("sex")).unwrap_err();
        assert_eq!(err.to_string(), "fewer than two protected groups");
    }

    #[test]
    fn csv_missing_column() {
        let err = csv_ds("a,sex\n1,F\n2,M\n", &CsvSpec::new("gender")).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "gender"));
    }

    #[test]
    fn csv_feature_selection() {
        let mut spec = CsvSpec::new("g");
        spec.feature_columns = Some(vec!["c".into()]);
        let ds = csv_ds("a,c,g\nx,1,0\ny,2,1\n", &spec).unwrap();
        assert_eq!(ds.dim(), 1);
        assert_eq!(ds.points(), &[1.0, 2.0]);
    }

    #[test]
    fn two_point_standardization() {
        let ds = Dataset::new(vec![1.0, 3.0], 1, vec![0, 1]).unwrap();
        let p = preprocess(&ds, false).unwrap();
        assert_eq!(p.points(), &[-1.0, 1.0]);
    }

    #[test]
    fn l2_normalization_of_a_345_row() {
        // Both columns have population variance 8, so the standardized
        // first row is (3, 4) / sqrt(8).
        let z = 7f64.sqrt();
        let ds = Dataset::new(
            vec![3.0, 4.0, -3.0, -4.0, z, 0.0, -z, 0.0],
            2,
            vec![0, 1, 0, 1],
        )
        .unwrap();
        let p = preprocess(&ds, true).unwrap();
        approx::assert_abs_diff_eq!(p.row(0)[0], 0.6, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(p.row(0)[1], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn constant_column_is_dropped() {
        let ds = Dataset::new(vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0], 2, vec![0, 1, 0]).unwrap();
        let p = preprocess(&ds, false).unwrap();
        assert_eq!(p.dim(), 1);
        assert_eq!(p.feature_names(), &["x0".to_string()]);
    }

    #[test]
    fn all_constant_columns_error() {
        let ds = Dataset::new(vec![1.0, 1.0], 1, vec![0, 1]).unwrap();
        assert!(matches!(preprocess(&ds, false), Err(Error::AllColumnsConstant)));
    }

    #[test]
    fn standardized_moments() {
        let spec = SyntheticSpec::new(500, 3, 4, 11);
        let ds = generate_synthetic(&spec).unwrap().dataset;
        for c in 0..ds.dim() {
            let col: Vec<f64> = (0..ds.n()).map(|i| ds.row(i)[c]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn synthetic_two_components_split_by_group() {
        let out = generate_synthetic(&SyntheticSpec::new(100, 2, 2, 3)).unwrap();
        for (i, &c) in out.components.iter().enumerate() {
            assert_eq!(out.dataset.groups()[i], c);
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::new(300, 2, 6, 42);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.components, b.components);
    }

    #[test]
    fn synthetic_rejects_odd_component_count() {
        assert!(generate_synthetic(&SyntheticSpec::new(100, 2, 3, 0)).is_err());
    }

    #[test]
    fn synthetic_mean_sampling_cap() {
        let mut spec = SyntheticSpec::new(100, 1, 10, 0);
        spec.mean_range = (0.0, 1.0);
        spec.min_mean_separation = 0.5;
        assert!(matches!(
            generate_synthetic(&spec),
            Err(Error::MeanSamplingExhausted(_))
        ));
    }

    fn sized(n0: usize, n1: usize) -> Dataset {
        let n = n0 + n1;
        let groups = (0..n).map(|i| usize::from(i >= n0)).collect();
        Dataset::new((0..n).map(|i| i as f64).collect(), 1, groups).unwrap()
    }

    fn sizes(p: &Partitioning, s: usize) -> Vec<usize> {
        p.blocks().iter().map(|b| b[s].len()).collect()
    }

    #[test]
    fn partition_arithmetic() {
        let p = make_partitioning(&sized(4, 6), 5, 0).unwrap();
        assert_eq!(p.n_blocks(), 2);
        assert_eq!(sizes(&p, 0), vec![2, 2]);
        assert_eq!(sizes(&p, 1), vec![3, 3]);
    }

    #[test]
    fn partition_remainder() {
        let p = make_partitioning(&sized(5, 5), 5, 1).unwrap();
        assert_eq!(p.n_blocks(), 2);
        assert_eq!(sizes(&p, 0), vec![3, 2]);
    }

    #[test]
    fn partition_degenerate_single_block() {
        let ds = sized(4, 6);
        let p = make_partitioning(&ds, 50, 1).unwrap();
        assert_eq!(p.n_blocks(), 1);
        let mut g0 = p.block(0)[0].clone();
        g0.sort_unstable();
        assert_eq!(g0, ds.group_index(0));
    }

    #[test]
    fn partition_cap_raises_block_count() {
        let p = make_partitioning_capped(&sized(30, 30), 1000, 8, 1).unwrap();
        assert_eq!(p.n_blocks(), 4);
        assert!(sizes(&p, 0).iter().all(|&s| s <= 8));
    }

    #[test]
    fn partition_rejects_tiny_m() {
        assert!(make_partitioning(&sized(3, 3), 1, 0).is_err());
    }
}
