//! Budget bounds of the fairness-controlled fit on small synthetic mixtures.

use fairalign::data::{generate_synthetic, SyntheticSpec};
use fairalign::fca::FcaConfig;
use fairalign::fcac::{fit_fcac, QuantileRule};
use fairalign::metrics::ratio_bound;

#[test]
fn count_ratio_bound_holds_under_mass_rule() {
    let mut finite = 0;
    for seed in 1..=3 {
        let ds = generate_synthetic(&SyntheticSpec::new(1000, 2, 4, seed)).unwrap().dataset;
        for eps in [0.05, 0.1] {
            let cfg = FcaConfig { quantile: QuantileRule::Mass, ..FcaConfig::new(5) };
            let fit = fit_fcac(&ds, &cfg, eps).unwrap();
            if let Some(rb) = ratio_bound(&fit.assignment, ds.groups()) {
                finite += 1;
                assert!(rb.lhs <= rb.c * eps + 1e-6, "seed {seed} eps {eps}: {} > {}", rb.lhs, rb.c * eps);
            }
        }
    }
    assert!(finite >= 3, "only {finite} runs had every cluster reached by group 1");
}

#[test]
fn exception_mass_stays_within_budget() {
    let ds = generate_synthetic(&SyntheticSpec::new(600, 2, 4, 5)).unwrap().dataset;
    for eps in [0.1, 0.3, 0.6] {
        let fit = fit_fcac(&ds, &FcaConfig::new(4), eps).unwrap();
        for rec in &fit.history {
            assert!(rec.exception_mass <= eps + 1e-9, "eps {eps}: mass {}", rec.exception_mass);
            assert!(rec.fairness_gap <= 2.0 * eps + 1e-9);
        }
    }
}
