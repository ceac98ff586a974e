//! Command-line harness for nested-expectation estimators.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 when some sweep
//! cells failed but the rest completed (their records are still written).

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nestquad::harness::{
    allocate, cost_exponent, fit_loglog_slope, lambda0_grid_search, read_csv, run_sweep,
    summarize, write_csv, write_csv_to, BudgetCell, EstimatorKind, HarnessError, RunRecord,
    SweepSpec,
};
use nestquad::problems::ProblemId;
use nestquad::sampling::PointSource;

#[derive(Parser)]
#[command(
    name = "nestquad",
    about = "Nested-expectation estimators: single estimates, convergence sweeps, rate fits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one estimator once and print the estimate.
    Estimate(EstimateArgs),
    /// Run a replicated sweep over a budget grid and write a CSV.
    Sweep(SweepArgs),
    /// Fit log-log error-vs-cost slopes from a sweep CSV.
    Fit(FitArgs),
    /// Per-cell mean error and quantiles from a sweep CSV.
    Summarize(SummarizeArgs),
    /// Grid-search lambda0 pairs on a pilot budget.
    Grid(GridArgs),
}

#[derive(Args)]
struct ProblemArgs {
    /// Problem id: synthetic | finance | evppi | gp-lookahead
    #[arg(long)]
    problem: String,
    /// Dimension for the synthetic problem.
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Instance seed for the gp-lookahead problem.
    #[arg(long, default_value_t = 0)]
    gp_seed: u64,
}

impl ProblemArgs {
    fn id(&self) -> Result<ProblemId, String> {
        ProblemId::parse_cli(&self.problem, self.d, self.gp_seed)
            .ok_or_else(|| format!("unknown problem '{}'", self.problem))
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Estimator: nkq | nmc | nqmc | mlmc | mlkq
    #[arg(long)]
    estimator: String,
    /// Inner samples (N, or N_0 for multilevel estimators).
    #[arg(long)]
    n: usize,
    /// Outer samples (T, or T_0 for multilevel estimators).
    #[arg(long)]
    t: usize,
    /// Level count for multilevel estimators.
    #[arg(long, default_value_t = 5)]
    levels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use scrambled Sobol points instead of i.i.d. sampling.
    #[arg(long)]
    qmc: bool,
    #[arg(long)]
    lambda0_x: Option<f64>,
    #[arg(long)]
    lambda0_theta: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep config; command-line flags override its fields.
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 0)]
    gp_seed: u64,
    /// Comma-separated estimators, e.g. "nkq,nmc".
    #[arg(long)]
    estimator: Option<String>,
    /// Comma-separated target error levels, e.g. "0.1,0.05,0.02".
    #[arg(long)]
    delta_grid: Option<String>,
    /// Comma-separated target g-evaluation costs, e.g. "1e3,1e4".
    #[arg(long)]
    cost_grid: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    #[arg(long)]
    qmc: bool,
    #[arg(long)]
    lambda0_x: Option<f64>,
    #[arg(long)]
    lambda0_theta: Option<f64>,
    /// Rayon worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// Sweep CSV produced by `nestquad sweep`.
    #[arg(long)]
    input: std::path::PathBuf,
    /// Restrict to one problem id string (as recorded in the CSV).
    #[arg(long)]
    problem: Option<String>,
    /// Restrict to one estimator label.
    #[arg(long)]
    estimator: Option<String>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    input: std::path::PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Pilot sample sizes.
    #[arg(long, default_value_t = 32)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    t: usize,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    qmc: bool,
    /// Write the pilot records (lambda0 columns identify grid points).
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::Grid(args) => cmd_grid(args),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| format!("bad {what} entry '{v}'")))
        .collect()
}

fn cmd_estimate(args: EstimateArgs) -> Result<ExitCode, String> {
    let estimator = EstimatorKind::parse(&args.estimator)
        .ok_or_else(|| format!("unknown estimator '{}'", args.estimator))?;
    let qmc = args.qmc || args.estimator.eq_ignore_ascii_case("nqmc");
    let problem = args.problem.id()?.build();
    let cell = match estimator {
        EstimatorKind::Mlmc | EstimatorKind::Mlkq => {
            BudgetCell::Levels { n0: args.n, t0: args.t, levels: args.levels }
        }
        _ => BudgetCell::Explicit { n: args.n, t: args.t },
    };
    let alloc = allocate(&problem, estimator, cell, args.levels, args.levels)
        .map_err(|e| e.to_string())?;
    let spec = SweepSpec {
        problem: args.problem.id()?,
        estimators: vec![estimator],
        point_source: if qmc { PointSource::Qmc } else { PointSource::Iid },
        budget: vec![cell],
        replicates: 1,
        base_seed: args.seed,
        lambda0_x: args.lambda0_x,
        lambda0_theta: args.lambda0_theta,
        mlmc_levels: args.levels,
        mlkq_levels: args.levels,
    };
    let (records, err) = run_sweep(&spec);
    if let Some(e) = err {
        return Err(e.to_string());
    }
    let r = &records[0];
    println!(
        "problem={} estimator={} source={} cost={} estimate={:.9}{} (planned cost {})",
        r.problem,
        r.estimator,
        r.point_source,
        r.cost,
        r.estimate,
        r.abs_error.map(|e| format!(" abs_error={e:.3e}")).unwrap_or_default(),
        alloc.planned_cost(),
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode, String> {
    if let Some(w) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    let mut spec: SweepSpec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
            serde_json::from_str(&text).map_err(|e| format!("config parse: {e}"))?
        }
        None => SweepSpec {
            problem: ProblemId::Synthetic { d: 1 },
            estimators: Vec::new(),
            point_source: PointSource::Iid,
            budget: Vec::new(),
            replicates: 1,
            base_seed: 0,
            lambda0_x: None,
            lambda0_theta: None,
            mlmc_levels: 5,
            mlkq_levels: 3,
        },
    };
    // flags override config-file fields
    if let Some(p) = &args.problem {
        spec.problem = ProblemId::parse_cli(p, args.d.unwrap_or(1), args.gp_seed)
            .ok_or_else(|| format!("unknown problem '{p}'"))?;
    }
    if let Some(list) = &args.estimator {
        spec.estimators = list
            .split(',')
            .map(|e| {
                EstimatorKind::parse(e.trim()).ok_or_else(|| format!("unknown estimator '{e}'"))
            })
            .collect::<Result<_, _>>()?;
        if list.split(',').any(|e| e.trim().eq_ignore_ascii_case("nqmc")) {
            spec.point_source = PointSource::Qmc;
        }
    }
    if let Some(deltas) = &args.delta_grid {
        spec.budget = parse_list::<f64>(deltas, "delta")?
            .into_iter()
            .map(|delta| BudgetCell::Delta { delta })
            .collect();
    }
    if let Some(costs) = &args.cost_grid {
        spec.budget.extend(
            parse_list::<f64>(costs, "cost")?.into_iter().map(|cost| BudgetCell::Cost { cost }),
        );
    }
    if let Some(r) = args.replicates {
        spec.replicates = r;
    }
    if let Some(s) = args.seed {
        spec.base_seed = s;
    }
    if args.qmc {
        spec.point_source = PointSource::Qmc;
    }
    if args.lambda0_x.is_some() {
        spec.lambda0_x = args.lambda0_x;
    }
    if args.lambda0_theta.is_some() {
        spec.lambda0_theta = args.lambda0_theta;
    }
    spec.validate().map_err(|e| e.to_string())?;

    let (records, err) = run_sweep(&spec);
    match &args.out {
        Some(path) => write_csv(path, &records).map_err(|e| e.to_string())?,
        None => write_csv_to(std::io::stdout().lock(), &records).map_err(|e| e.to_string())?,
    }
    eprintln!("{} records written", records.len());
    match err {
        None => Ok(ExitCode::SUCCESS),
        Some(HarnessError::PartialFailure { failed, total, first }) => {
            eprintln!("partial failure: {failed}/{total} cells failed; first: {first}");
            Ok(ExitCode::from(3))
        }
        Some(e) => Err(e.to_string()),
    }
}

fn grouped<'a>(
    records: &'a [RunRecord],
    problem: &Option<String>,
    estimator: &Option<String>,
) -> std::collections::BTreeMap<(String, String, String), Vec<&'a RunRecord>> {
    let mut groups: std::collections::BTreeMap<(String, String, String), Vec<&RunRecord>> =
        std::collections::BTreeMap::new();
    for r in records {
        if let Some(p) = problem {
            if &r.problem != p {
                continue;
            }
        }
        if let Some(e) = estimator {
            if &r.estimator != e {
                continue;
            }
        }
        groups
            .entry((r.problem.clone(), r.estimator.clone(), r.point_source.clone()))
            .or_default()
            .push(r);
    }
    groups
}

fn cmd_fit(args: FitArgs) -> Result<ExitCode, String> {
    let records = read_csv(&args.input).map_err(|e| e.to_string())?;
    let groups = grouped(&records, &args.problem, &args.estimator);
    if groups.is_empty() {
        return Err("no matching records".into());
    }
    for ((problem, estimator, source), rs) in groups {
        // mean abs error per distinct cost
        let mut cells: std::collections::BTreeMap<u64, (f64, usize)> =
            std::collections::BTreeMap::new();
        for r in &rs {
            if let Some(e) = r.abs_error {
                let entry = cells.entry(r.cost).or_insert((0.0, 0));
                entry.0 += e;
                entry.1 += 1;
            }
        }
        if cells.len() < 2 {
            println!("{problem} {estimator}/{source}: need >= 2 costs with known truth to fit");
            continue;
        }
        let costs: Vec<f64> = cells.keys().map(|c| *c as f64).collect();
        let errors: Vec<f64> = cells.values().map(|(s, n)| s / *n as f64).collect();
        match fit_loglog_slope(&costs, &errors) {
            Ok(slope) => println!(
                "{problem} {estimator}/{source}: slope={slope:.4} (error ~ cost^slope), cost exponent r-hat={:.3}",
                cost_exponent(slope)
            ),
            Err(e) => println!("{problem} {estimator}/{source}: {e}"),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_summarize(args: SummarizeArgs) -> Result<ExitCode, String> {
    let records = read_csv(&args.input).map_err(|e| e.to_string())?;
    println!(
        "{:<14} {:<6} {:<4} {:>7} {:>7} {:>10} {:>12} {:>12} {:>12} {:>9} {:>5}",
        "problem", "est", "src", "N", "T", "cost", "mean_err", "q25", "q75", "wall_ms", "reps"
    );
    for s in summarize(&records) {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<14} {:<6} {:<4} {:>7} {:>7} {:>10.0} {:>12} {:>12} {:>12} {:>9.1} {:>5}",
            s.problem,
            s.estimator,
            s.point_source,
            s.n,
            s.t,
            s.mean_cost,
            fmt(s.mean_abs_error),
            fmt(s.q25_abs_error),
            fmt(s.q75_abs_error),
            s.mean_wall_millis,
            s.replicates
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_grid(args: GridArgs) -> Result<ExitCode, String> {
    let source = if args.qmc { PointSource::Qmc } else { PointSource::Iid };
    let sel =
        lambda0_grid_search(&args.problem.id()?, args.n, args.t, source, args.replicates, args.seed)
            .map_err(|e| e.to_string())?;
    println!("lambda0_x lambda0_theta score");
    for (lx, lt, score) in &sel.table {
        println!("{lx:<9} {lt:<13} {score:.6e}");
    }
    println!("selected: lambda0_x={} lambda0_theta={}", sel.lambda0_x, sel.lambda0_theta);
    if let Some(path) = &args.out {
        write_csv(path, &sel.records).map_err(|e| e.to_string())?;
    }
    Ok(ExitCode::SUCCESS)
}
