//! `verify`: randomized invariant checks with a pass/fail table.

use clap::{Args, ValueEnum};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairalign::clustering::{Centers, Mode};
use fairalign::data::Dataset;
use fairalign::fca::{assignment_cost, build_assignment, coupling_objective, decomposed_cost, fit_fca, FcaConfig};
use fairalign::metrics::{cost, fairness_gap};
use fairalign::oracle::{brute_force_coupling, brute_force_fair_kmeans};
use fairalign::transport::{solve_lp, solve_sinkhorn_with, CostMatrix, Coupling, SinkhornOptions};

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances per check.
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// Inject a fault to confirm the battery catches it.
    #[arg(long = "break", value_enum, hide = true)]
    fault: Option<Fault>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fault {
    Marginals,
    Objective,
    Oracle,
}

struct Check {
    name: &'static str,
    worst: f64,
    tol: f64,
    note: String,
}

impl Check {
    fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn two_groups(rng: &mut ChaCha8Rng, n0: usize, n1: usize, d: usize) -> Dataset {
    let pts: Vec<f64> = (0..(n0 + n1) * d).map(|_| rng.random_range(-5.0..5.0)).collect();
    let groups: Vec<usize> = (0..n0 + n1).map(|i| usize::from(i >= n0)).collect();
    Dataset::new(pts, d, groups).expect("valid random dataset")
}

fn random_cost(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CostMatrix {
    let vals: Vec<f64> = (0..r * c).map(|_| rng.random_range(0.0..10.0)).collect();
    CostMatrix::from_fn(r, c, |i, j| vals[i * c + j]).expect("finite costs")
}

fn random_centers(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Centers {
    Centers::new((0..k * d).map(|_| rng.random_range(-5.0..5.0)).collect(), d).expect("finite centers")
}

/// Marginal violation recomputed from the entries, independent of the
/// coupling's own bookkeeping.
fn violation(c: &Coupling, entries: &[(usize, usize, f64)]) -> f64 {
    let mut rows = vec![0.0; c.rows()];
    let mut cols = vec![0.0; c.cols()];
    for &(i, j, g) in entries {
        rows[i] += g;
        cols[j] += g;
    }
    let r = rows.iter().zip(c.row_marginal()).map(|(a, b)| (a - b).abs());
    let s = cols.iter().zip(c.col_marginal()).map(|(a, b)| (a - b).abs());
    r.chain(s).fold(0.0, f64::max)
}

fn decomposition(rng: &mut ChaCha8Rng, count: usize) -> Check {
    let mut worst = 0.0f64;
    for _ in 0..count {
        let n0 = rng.random_range(2..=12);
        let d = rng.random_range(1..=4);
        let k = rng.random_range(1..=4);
        let ds = two_groups(rng, n0, n0, d);
        let centers = random_centers(rng, k, d);
        let mut matching: Vec<usize> = (0..n0).collect();
        matching.shuffle(rng);
        let pair_labels: Vec<usize> = (0..n0).map(|_| rng.random_range(0..k)).collect();
        let mut labels = vec![0; 2 * n0];
        for (a, &b) in matching.iter().enumerate() {
            labels[a] = pair_labels[a];
            labels[n0 + b] = pair_labels[a];
        }
        let direct = cost(&ds, &centers, &labels, Mode::KMeans);
        worst = worst.max(rel(direct, decomposed_cost(&ds, &centers, &matching, &pair_labels)));
    }
    Check {
        name: "decomposition identity",
        worst,
        tol: 1e-9,
        note: "relative".into(),
    }
}

fn objective(rng: &mut ChaCha8Rng, count: usize, fault: Option<Fault>) -> Check {
    let mut worst = 0.0f64;
    for _ in 0..count {
        let (n0, n1) = (rng.random_range(1..=10), rng.random_range(1..=10));
        let d = rng.random_range(1..=3);
        let ds = two_groups(rng, n0, n1, d);
        let k = rng.random_range(1..=3);
        let centers = random_centers(rng, k, d);
        let c = random_cost(rng, n0, n1);
        let g = solve_sinkhorn_with(&c, &SinkhornOptions::new(rng.random_range(0.1..2.0)), None)
            .expect("sinkhorn on a small dense cost")
            .coupling;
        let gamma = Coupling::new(
            ds.group_index(0).to_vec(),
            ds.group_index(1).to_vec(),
            g.row_marginal().to_vec(),
            g.col_marginal().to_vec(),
            g.entries().to_vec(),
        )
        .expect("relabelled coupling");
        let mut obj = coupling_objective(&ds, &centers, &gamma, Mode::KMeans);
        if fault == Some(Fault::Objective) {
            obj *= 1.01;
        }
        let a = build_assignment(&ds, &centers, &gamma, Mode::KMeans).expect("consistent coupling");
        worst = worst.max(rel(obj, assignment_cost(&ds, &centers, &a, Mode::KMeans)));
    }
    Check {
        name: "coupling objective = assignment cost",
        worst,
        tol: 1e-9,
        note: "relative".into(),
    }
}

fn lp_vs_oracle(rng: &mut ChaCha8Rng, count: usize) -> Check {
    let mut worst = 0.0f64;
    let mut non_perm = 0;
    for _ in 0..count {
        let n = rng.random_range(1..=6);
        let c = random_cost(rng, n, n);
        let gamma = solve_lp(&c).expect("small LP");
        let (best, _) = brute_force_coupling(&c).expect("within oracle cap");
        worst = worst.max((gamma.cost(&c) - best).abs());
        if gamma.support_len() != n {
            non_perm += 1;
        }
    }
    Check {
        name: "LP objective = permutation oracle",
        worst: if non_perm > 0 { f64::INFINITY } else { worst },
        tol: 1e-9,
        note: format!("absolute; {non_perm} non-permutation vertices"),
    }
}

fn marginals(rng: &mut ChaCha8Rng, count: usize, fault: Option<Fault>) -> Check {
    let mut worst = 0.0f64;
    for _ in 0..count {
        let (r, c) = (rng.random_range(1..=15), rng.random_range(1..=15));
        let cost = random_cost(rng, r, c);
        for gamma in [
            solve_lp(&cost).expect("small LP"),
            solve_sinkhorn_with(&cost, &SinkhornOptions::new(0.5), None)
                .expect("small sinkhorn")
                .coupling,
        ] {
            let mut entries = gamma.entries().to_vec();
            if fault == Some(Fault::Marginals) {
                entries[0].2 += 1e-3;
            }
            worst = worst.max(violation(&gamma, &entries));
        }
    }
    Check {
        name: "coupling marginals (LP and Sinkhorn)",
        worst,
        tol: 1e-8,
        note: "max abs".into(),
    }
}

fn oracle(rng: &mut ChaCha8Rng, count: usize, fault: Option<Fault>) -> Check {
    let mut matched = 0;
    let mut beaten = false;
    for inst in 0..count {
        let ds = two_groups(rng, 3, 3, 1);
        let cfg = FcaConfig {
            restarts: 10,
            seed: inst as u64,
            ..FcaConfig::new(2)
        };
        let fit = fit_fca(&ds, &cfg).expect("tiny fit");
        let mut opt = brute_force_fair_kmeans(&ds, 2).expect("within oracle cap").cost;
        if fault == Some(Fault::Oracle) {
            opt *= 1.5;
        }
        let got = fit.best().cost;
        beaten |= got < opt - 1e-9;
        if rel(got, opt) <= 1e-6 {
            matched += 1;
        }
    }
    // Alternating minimization may stop at a local optimum, so a 90% match
    // rate is required; falling below the oracle is never allowed.
    let shortfall = 1.0 - matched as f64 / count.max(1) as f64;
    Check {
        name: "fair K-means = brute-force oracle",
        worst: if beaten { f64::INFINITY } else { shortfall },
        tol: 0.1,
        note: format!("{matched}/{count} matched; oracle beaten: {beaten}"),
    }
}

fn perfect_fairness(rng: &mut ChaCha8Rng, count: usize) -> Check {
    let mut worst = 0.0f64;
    for inst in 0..count {
        let (n0, n1) = (rng.random_range(5..=30), rng.random_range(5..=30));
        let ds = two_groups(rng, n0, n1, 2);
        let cfg = FcaConfig {
            seed: inst as u64,
            max_outer_iter: 20,
            ..FcaConfig::new(3)
        };
        let fit = fit_fca(&ds, &cfg).expect("small fit");
        worst = worst.max(fairness_gap(&fit.assignment, ds.groups()));
    }
    Check {
        name: "fair assignment gap",
        worst,
        tol: 1e-6,
        note: "sum over clusters".into(),
    }
}

/// Runs every check and prints the table; true when all pass.
pub fn run(args: &VerifyArgs) -> anyhow::Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let n = args.instances.max(1);
    let checks = [
        decomposition(&mut rng, n),
        objective(&mut rng, n, args.fault),
        lp_vs_oracle(&mut rng, n),
        marginals(&mut rng, n, args.fault),
        oracle(&mut rng, n, args.fault),
        perfect_fairness(&mut rng, n),
    ];
    println!("{:<40} {:>10} {:>10}  status  detail", "check", "worst", "tol");
    for c in &checks {
        let status = if c.passed() { "pass" } else { "FAIL" };
        println!("{:<40} {:>10.2e} {:>10.1e}  {status:<6}  {}", c.name, c.worst, c.tol, c.note);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    if failed.is_empty() {
        println!("all {} checks passed on {n} instances each (seed {})", checks.len(), args.seed);
        Ok(true)
    } else {
        eprintln!("failed: {}", failed.join(", "));
        Ok(false)
    }
}
