//! Whole-pipeline checks of the perfectly fair fit.

use std::io::Write;

use fairalign::clustering::{weighted_kmeans, LloydOptions, Mode, WeightedPoints};
use fairalign::data::{generate_synthetic, load_csv, preprocess, CsvSpec, Dataset, SyntheticSpec};
use fairalign::fca::{fit_fca, FcaConfig};
use fairalign::metrics::{balance, cost, fairness_gap, group_mean_membership};

#[test]
fn duplicated_groups_reduce_to_plain_kmeans() {
    let m = 60;
    let half: Vec<f64> = (0..m)
        .flat_map(|i| {
            let t = i as f64;
            [(t * 1.7).sin() * 3.0 + (i % 3) as f64 * 4.0, (t * 0.9).cos() * 2.0]
        })
        .collect();
    let pts = [half.clone(), half].concat();
    let groups: Vec<usize> = (0..2 * m).map(|i| usize::from(i >= m)).collect();
    let ds = Dataset::new(pts, 2, groups).unwrap();
    let cfg = FcaConfig { seed: 11, ..FcaConfig::new(3) };
    let fit = fit_fca(&ds, &cfg).unwrap();

    let raw = WeightedPoints::uniform(ds.points().to_vec(), 2).unwrap();
    let km = weighted_kmeans(&raw, 3, &LloydOptions::default(), 11).unwrap();
    let plain = cost(&ds, &km.centers, &km.labels, Mode::KMeans);
    assert!((fit.best().cost - plain).abs() <= 1e-9 * plain.max(1.0), "{} vs {plain}", fit.best().cost);
    for i in 0..m {
        assert_eq!(fit.labels[i], fit.labels[m + i]);
    }
}

#[test]
fn four_by_four_toy_is_perfectly_balanced() {
    let pts = vec![
        0.0, 0.0, 0.5, 0.2, 6.0, 6.0, 6.3, 5.8, //
        0.2, 0.4, 5.5, 6.2, 6.1, 5.6, 0.1, -0.3,
    ];
    let ds = Dataset::new(pts, 2, vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
    let fit = fit_fca(&ds, &FcaConfig::new(2)).unwrap();
    assert_eq!(balance(&fit.labels, ds.groups(), 2), 1.0);
}

#[test]
fn best_iterate_is_the_cheapest_and_reported() {
    let ds = generate_synthetic(&SyntheticSpec::new(400, 2, 4, 8)).unwrap().dataset;
    let fit = fit_fca(&ds, &FcaConfig { seed: 2, ..FcaConfig::new(4) }).unwrap();
    let min = fit.history.iter().map(|r| r.cost).fold(f64::INFINITY, f64::min);
    assert_eq!(fit.best().cost, min);
    assert!(fit.best().cost <= fit.history[0].cost);
    let recomputed = cost(&ds, &fit.centers, &fit.labels, Mode::KMeans);
    assert!((recomputed - fit.best().cost).abs() < 1e-12);
}

#[test]
fn group_membership_profiles_match() {
    let ds = generate_synthetic(&SyntheticSpec::new(300, 3, 4, 21)).unwrap().dataset;
    let fit = fit_fca(&ds, &FcaConfig { seed: 5, ..FcaConfig::new(4) }).unwrap();
    let e0 = group_mean_membership(&fit.assignment, ds.groups(), 0);
    let e1 = group_mean_membership(&fit.assignment, ds.groups(), 1);
    for (a, b) in e0.iter().zip(&e1) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(fairness_gap(&fit.assignment, ds.groups()) < 1e-6);
}

#[test]
fn partitioned_cost_tracks_full_cost() {
    let ds = generate_synthetic(&SyntheticSpec::new(1000, 2, 4, 3)).unwrap().dataset;
    let full = fit_fca(&ds, &FcaConfig { seed: 1, ..FcaConfig::new(3) }).unwrap();
    let part = fit_fca(
        &ds,
        &FcaConfig {
            seed: 1,
            partition_m: Some(250),
            ..FcaConfig::new(3)
        },
    )
    .unwrap();
    let (a, b) = (full.best().cost, part.best().cost);
    assert!((a - b).abs() / a <= 0.05, "full {a} vs m=250 {b}");
}

#[test]
fn csv_to_fit() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "age,hours,sex").unwrap();
    for i in 0..40 {
        let sex = if i % 3 == 0 { "F" } else { "M" };
        writeln!(file, "{},{},{sex}", 20 + i, 30 + (i * 7) % 25).unwrap();
    }
    file.flush().unwrap();
    let raw = load_csv(file.path(), &CsvSpec::new("sex")).unwrap();
    assert_eq!(raw.group_names(), ["F", "M"]);
    let ds = preprocess(&raw, true).unwrap();
    let fit = fit_fca(&ds, &FcaConfig::new(2)).unwrap();
    assert_eq!(fit.labels.len(), 40);
    assert!(fit.best().fairness_gap < 1e-6);
}

#[test]
fn kmedian_fit_is_fair_on_unequal_groups() {
    let ds = generate_synthetic(&SyntheticSpec::new(150, 2, 4, 17)).unwrap().dataset;
    let cfg = FcaConfig {
        mode: Mode::KMedian,
        ..FcaConfig::new(3)
    };
    let fit = fit_fca(&ds, &cfg).unwrap();
    assert!(fit.best().fairness_gap < 1e-6);
}
