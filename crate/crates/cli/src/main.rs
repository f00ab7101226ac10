use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fairalign::clustering::Mode;
use fairalign::data::{generate_synthetic, load_csv, preprocess, CsvSpec, Dataset, SyntheticSpec};
use fairalign::fca::{fit_fca, fit_fca_multigroup, Assignment, FcaConfig, IterationRecord, MultiCoupling};
use fairalign::fcac::{fit_fcac, QuantileRule};
use fairalign::metrics::{ratio_bound, MetricReport};
use fairalign::transport::{Coupling, SolverKind};

mod verify;

/// Group-fair clustering by optimal-transport alignment.
#[derive(Debug, Parser)]
#[command(name = "fairalign", version)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a fair clustering and write result.json.
    Fit(FitArgs),
    /// Run the fairness-controlled fit over a grid of budgets.
    Sweep(SweepArgs),
    /// Check the decomposition, transport and oracle invariants on random instances.
    Verify(verify::VerifyArgs),
    /// Write a synthetic mixture to CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    /// Synthetic mixture, e.g. `n=2000,d=2,J=4`, or a TOML/JSON file.
    #[arg(long)]
    synthetic: Option<String>,
    /// Column holding the protected group.
    #[arg(long)]
    group: Option<String>,
    /// Comma-separated feature columns (default: all but the group column).
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    /// Scale every row to unit Euclidean norm after standardizing.
    #[arg(long)]
    l2_normalize: bool,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    k: usize,
    /// `lp` or `sinkhorn:<lambda>`.
    #[arg(long, default_value = "lp", value_parser = parse_solver)]
    solver: SolverKind,
    #[arg(long, default_value = "kmeans")]
    mode: Mode,
    /// Target block size for partitioned transport.
    #[arg(long)]
    partition_m: Option<usize>,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exception-set threshold rule: `unweighted` or `mass`.
    #[arg(long, default_value = "mass", value_parser = parse_quantile)]
    quantile: QuantileRule,
    /// Directory for output files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Fairness budget in [0, 1]; omit for perfectly fair clustering.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Also write the coupling support to coupling.csv.
    #[arg(long)]
    export_coupling: bool,
    /// Also write per-point cluster probabilities to assignment.csv.
    #[arg(long)]
    export_assignment: bool,
    /// Include the silhouette score (quadratic in n).
    #[arg(long)]
    silhouette: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated budgets (default 0.10, 0.15, ..., 0.90).
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Write 0 in the runtime column so repeated runs give identical files.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Mixture spec, e.g. `n=2000,d=2,J=4,seed=1`, or a TOML/JSON file.
    #[arg(long)]
    synthetic: String,
    #[arg(long)]
    output: PathBuf,
}

/// Bad flag combinations found after parsing; exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_solver(s: &str) -> Result<SolverKind, String> {
    match s.split_once(':') {
        None if s == "lp" => Ok(SolverKind::Lp),
        Some(("sinkhorn", lambda)) => {
            let lambda: f64 = lambda.parse().map_err(|e| format!("bad lambda {lambda:?}: {e}"))?;
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(format!("lambda must be positive, got {lambda}"));
            }
            Ok(SolverKind::Sinkhorn { lambda })
        }
        _ => Err(format!("expected `lp` or `sinkhorn:<lambda>`, got {s:?}")),
    }
}

fn parse_quantile(s: &str) -> Result<QuantileRule, String> {
    match s {
        "unweighted" => Ok(QuantileRule::Unweighted),
        "mass" => Ok(QuantileRule::Mass),
        _ => Err(format!("expected `unweighted` or `mass`, got {s:?}")),
    }
}

fn solver_name(kind: SolverKind) -> String {
    match kind {
        SolverKind::Lp => "lp".into(),
        SolverKind::Sinkhorn { lambda } => format!("sinkhorn:{lambda}"),
    }
}

fn parse_range(v: &str) -> anyhow::Result<(f64, f64)> {
    let (lo, hi) = v
        .split_once(':')
        .with_context(|| format!("range {v:?} should look like lo:hi"))?;
    Ok((lo.parse()?, hi.parse()?))
}

/// Reads `key=value` pairs or a TOML/JSON file. `seed` falls back to
/// `default_seed` when the spec does not set one.
fn parse_synthetic(spec: &str, default_seed: u64) -> anyhow::Result<SyntheticSpec> {
    let path = Path::new(spec);
    let ext = path.extension().and_then(|e| e.to_str());
    if matches!(ext, Some("toml" | "json")) {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(if ext == Some("toml") {
            toml::from_str(&text)?
        } else {
            serde_json::from_str(&text)?
        });
    }
    let mut out = SyntheticSpec::new(0, 0, 0, default_seed);
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| usage(format!("synthetic entry {part:?} is not key=value")))?;
        let value = value.trim();
        match key.trim() {
            "n" => out.n = value.parse()?,
            "d" => out.d = value.parse()?,
            "J" | "j" | "components" => out.components = value.parse()?,
            "seed" => out.seed = value.parse()?,
            "alpha" | "dirichlet_alpha" => {
                out.dirichlet_alpha = value.split(':').map(str::parse).collect::<Result<_, _>>()?
            }
            "mean_range" => out.mean_range = parse_range(value)?,
            "sigma_range" => out.sigma_range = parse_range(value)?,
            "sep" | "min_mean_separation" => out.min_mean_separation = value.parse()?,
            other => return Err(usage(format!("unknown synthetic key {other:?}"))),
        }
    }
    Ok(out)
}

fn load_data(args: &DataArgs, seed: u64) -> anyhow::Result<Dataset> {
    let ds = match (&args.input, &args.synthetic) {
        (Some(path), None) => {
            let group = args
                .group
                .clone()
                .ok_or_else(|| usage("--group is required with --input"))?;
            let spec = CsvSpec {
                feature_columns: args.features.clone(),
                ..CsvSpec::new(group)
            };
            let raw = load_csv(path, &spec)?;
            log::info!("loaded {} rows, {} features from {}", raw.n(), raw.dim(), path.display());
            preprocess(&raw, args.l2_normalize)?
        }
        (None, Some(spec)) => {
            let ds = generate_synthetic(&parse_synthetic(spec, seed)?)?.dataset;
            if args.l2_normalize {
                preprocess(&ds, true)?
            } else {
                ds
            }
        }
        _ => return Err(usage("exactly one of --input and --synthetic is required")),
    };
    Ok(ds)
}

fn config(m: &ModelArgs) -> FcaConfig {
    FcaConfig {
        max_outer_iter: m.max_iter,
        solver: m.solver,
        partition_m: m.partition_m,
        mode: m.mode,
        seed: m.seed,
        restarts: m.restarts,
        quantile: m.quantile,
        ..FcaConfig::new(m.k)
    }
}

enum FittedCoupling {
    Pair(Coupling),
    Multi(MultiCoupling),
}

struct Fitted {
    centers: fairalign::clustering::Centers,
    assignment: Assignment,
    labels: Vec<usize>,
    history: Vec<IterationRecord>,
    best_iter: usize,
    restart: usize,
    coupling: FittedCoupling,
}

fn fit(ds: &Dataset, cfg: &FcaConfig, epsilon: Option<f64>) -> anyhow::Result<Fitted> {
    if let Some(eps) = epsilon {
        if ds.n_groups() != 2 {
            return Err(usage("--epsilon needs exactly two groups"));
        }
        let r = fit_fcac(ds, cfg, eps)?;
        return Ok(Fitted {
            centers: r.centers,
            assignment: r.assignment,
            labels: r.labels,
            history: r.history,
            best_iter: r.best_iter,
            restart: r.restart,
            coupling: FittedCoupling::Pair(r.coupling),
        });
    }
    if ds.n_groups() == 2 {
        let r = fit_fca(ds, cfg)?;
        return Ok(Fitted {
            centers: r.centers,
            assignment: r.assignment,
            labels: r.labels,
            history: r.history,
            best_iter: r.best_iter,
            restart: r.restart,
            coupling: FittedCoupling::Pair(r.coupling),
        });
    }
    let r = fit_fca_multigroup(ds, cfg)?;
    Ok(Fitted {
        centers: r.centers,
        assignment: r.assignment,
        labels: r.labels,
        history: r.history,
        best_iter: r.best_iter,
        restart: r.restart,
        coupling: FittedCoupling::Multi(r.coupling),
    })
}

#[derive(Serialize)]
struct FitOutput<'a> {
    k: usize,
    epsilon: Option<f64>,
    solver: String,
    mode: Mode,
    seed: u64,
    restarts: usize,
    partition_m: Option<usize>,
    n: usize,
    d: usize,
    group_sizes: Vec<usize>,
    group_names: &'a [String],
    feature_names: &'a [String],
    metrics: MetricReport,
    best_iter: usize,
    best_restart: usize,
    runtime_ms: u128,
    centers: Vec<Vec<f64>>,
    labels: &'a [usize],
    history: &'a [IterationRecord],
}

fn print_metrics(m: &MetricReport) {
    println!("cost          {:.3}", m.cost);
    println!("balance       {:.3}  (max {:.3})", m.balance, m.balance_star);
    println!("fairness gap  {:.3}", m.fairness_gap);
    if let Some(s) = m.silhouette {
        println!("silhouette    {s:.3}");
    }
}

fn cmd_fit(args: &FitArgs) -> anyhow::Result<()> {
    let ds = load_data(&args.data, args.model.seed)?;
    let cfg = config(&args.model);
    let start = Instant::now();
    let fitted = fit(&ds, &cfg, args.epsilon)?;
    let runtime_ms = start.elapsed().as_millis();
    let mut metrics = MetricReport::compute(&ds, &fitted.centers, &fitted.assignment, args.silhouette)?;
    if cfg.mode == Mode::KMedian {
        // Report the cost the model optimizes; cost_l1 carries it too.
        metrics.cost = metrics.cost_l1;
    }

    fs::create_dir_all(&args.model.out).with_context(|| format!("creating {}", args.model.out.display()))?;
    let out = FitOutput {
        k: cfg.k,
        epsilon: args.epsilon,
        solver: solver_name(cfg.solver),
        mode: cfg.mode,
        seed: cfg.seed,
        restarts: cfg.restarts,
        partition_m: cfg.partition_m,
        n: ds.n(),
        d: ds.dim(),
        group_sizes: ds.group_sizes(),
        group_names: ds.group_names(),
        feature_names: ds.feature_names(),
        metrics: metrics.clone(),
        best_iter: fitted.best_iter,
        best_restart: fitted.restart,
        runtime_ms,
        centers: fitted.centers.to_rows(),
        labels: &fitted.labels,
        history: &fitted.history,
    };
    let path = args.model.out.join("result.json");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &out)?;

    if args.export_coupling {
        let path = args.model.out.join("coupling.csv");
        let file = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        match &fitted.coupling {
            FittedCoupling::Pair(c) => c.write_triplets(file)?,
            FittedCoupling::Multi(c) => write_tuples(c, ds.n_groups(), file)?,
        }
    }
    if args.export_assignment {
        let path = args.model.out.join("assignment.csv");
        write_assignment(&fitted.assignment, File::create(&path)?)?;
    }
    print_metrics(&metrics);
    println!("wrote {}", path.display());
    Ok(())
}

fn write_tuples<W: Write>(c: &MultiCoupling, groups: usize, out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..groups).map(|s| format!("i{s}")).collect();
    header.push("gamma".into());
    w.write_record(&header)?;
    for (rows, g) in &c.tuples {
        let mut rec: Vec<String> = rows.iter().map(ToString::to_string).collect();
        rec.push(format!("{g:e}"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_assignment<W: Write>(a: &Assignment, out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..a.k()).map(|k| format!("p{k}")))?;
    for i in 0..a.n() {
        w.write_record(a.row(i).iter().map(|p| format!("{p:e}")))?;
    }
    w.flush()?;
    Ok(())
}

fn default_grid() -> Vec<f64> {
    (2..=18).map(|i| i as f64 / 20.0).collect()
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let ds = load_data(&args.data, args.model.seed)?;
    if ds.n_groups() != 2 {
        return Err(usage("sweep needs exactly two groups"));
    }
    let grid = args.grid.clone().unwrap_or_else(default_grid);
    if let Some(e) = grid.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(usage(format!("grid value {e} is outside [0, 1]")));
    }
    let cfg = config(&args.model);
    fs::create_dir_all(&args.model.out)?;
    let path = args.model.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "epsilon",
        "cost",
        "balance",
        "fairness_gap",
        "prop42_bound_lhs",
        "prop42_bound_rhs",
        "runtime_ms",
    ])?;
    println!("{:>8} {:>8} {:>8} {:>8}", "epsilon", "cost", "balance", "gap");
    for &eps in &grid {
        let start = Instant::now();
        let fit = fit_fcac(&ds, &cfg, eps)?;
        let ms = if args.no_timing { 0 } else { start.elapsed().as_millis() };
        let best = fit.best();
        let (lhs, rhs) = match ratio_bound(&fit.assignment, ds.groups()) {
            Some(rb) => (rb.lhs, rb.c * eps),
            None => (f64::INFINITY, f64::INFINITY),
        };
        w.write_record(&[
            eps.to_string(),
            best.cost.to_string(),
            best.balance.to_string(),
            best.fairness_gap.to_string(),
            lhs.to_string(),
            rhs.to_string(),
            ms.to_string(),
        ])?;
        println!("{eps:>8.2} {:>8.3} {:>8.3} {:>8.3}", best.cost, best.balance, best.fairness_gap);
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> anyhow::Result<()> {
    let data = generate_synthetic(&parse_synthetic(&args.synthetic, 0)?)?;
    let ds = &data.dataset;
    let mut w = csv::Writer::from_path(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    header.extend(["group".into(), "component".into()]);
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.groups()[i].to_string());
        rec.push(data.components[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    println!("wrote {} rows to {}", ds.n(), args.output.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a)?,
        Command::Sweep(a) => cmd_sweep(a)?,
        Command::Generate(a) => cmd_generate(a)?,
        Command::Verify(a) => {
            if !verify::run(a)? {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
