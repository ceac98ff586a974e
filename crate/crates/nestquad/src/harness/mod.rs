//! Convergence-study harness: replicated estimator sweeps over budget
//! grids, CSV persistence, per-cell summaries and log-log rate fits.
//!
//! Cost is counted in g-evaluations, audited by a counter wrapped around
//! each problem's g. Replicates run concurrently; records are emitted in a
//! deterministic order (estimator, cell, replicate) regardless of
//! scheduling, and every record carries the seed that reproduces it.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::baselines::{mlkq, mlmc, nmc, MlConfig};
use crate::nested::{nkq, NkqConfig};
use crate::problems::{NestedProblem, ProblemId};
use crate::sampling::{split_seed, PointSource};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid sweep: {0}")]
    BadSpec(String),
    #[error("fit needs positive costs/errors and at least two distinct costs")]
    BadFitInput,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{failed} of {total} cells failed; first error: {first}")]
    PartialFailure { failed: usize, total: usize, first: String },
}

/// Estimator selector. The point source is carried separately, matching the
/// CSV schema; `nmc` with QMC points is the NQMC estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Nkq,
    Nmc,
    Mlmc,
    Mlkq,
}

impl EstimatorKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nkq" => Some(EstimatorKind::Nkq),
            "nmc" => Some(EstimatorKind::Nmc),
            "nqmc" => Some(EstimatorKind::Nmc),
            "mlmc" => Some(EstimatorKind::Mlmc),
            "mlkq" => Some(EstimatorKind::Mlkq),
            _ => None,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Nkq => "nkq",
            EstimatorKind::Nmc => "nmc",
            EstimatorKind::Mlmc => "mlmc",
            EstimatorKind::Mlkq => "mlkq",
        }
    }
}

/// One budget cell: either a target error level delta (mapped to sample
/// sizes through each estimator's theoretical allocation), a target
/// g-evaluation cost, or explicit sizes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum BudgetCell {
    Explicit { n: usize, t: usize },
    Levels { n0: usize, t0: usize, levels: usize },
    Delta { delta: f64 },
    Cost { cost: f64 },
}

/// Resolved sample sizes for one (estimator, cell) pair.
#[derive(Debug, Clone)]
pub enum Allocation {
    SingleLevel { n: usize, t: usize },
    MultiLevel(MlConfig),
}

impl Allocation {
    pub fn planned_cost(&self) -> usize {
        match self {
            Allocation::SingleLevel { n, t } => n * t,
            Allocation::MultiLevel(cfg) => cfg.total_cost(),
        }
    }
}

/// Map a budget cell to sample sizes for `estimator` on `problem`:
/// nested quadrature takes N = ceil(delta^-ex), T = ceil(delta^-et) with the
/// problem's exponents; nested MC takes N = ceil(delta^-1), T = N^2; the
/// multilevel estimators size their level ladders so the total cost matches
/// the estimator's theoretical cost at that delta.
pub fn allocate(
    problem: &NestedProblem,
    estimator: EstimatorKind,
    cell: BudgetCell,
    mlmc_levels: usize,
    mlkq_levels: usize,
) -> Result<Allocation, HarnessError> {
    let (ex, et) = problem.delta_exponents;
    let delta = match cell {
        BudgetCell::Explicit { n, t } => {
            return match estimator {
                EstimatorKind::Nkq | EstimatorKind::Nmc => Ok(Allocation::SingleLevel { n, t }),
                EstimatorKind::Mlmc => Ok(Allocation::MultiLevel(
                    MlConfig::geometric(n, t, mlmc_levels)
                        .map_err(|e| HarnessError::BadSpec(e.to_string()))?,
                )),
                EstimatorKind::Mlkq => Ok(Allocation::MultiLevel(
                    MlConfig::mlkq_allocation(
                        n * t,
                        mlkq_levels,
                        problem.d_x,
                        problem.s_x,
                        problem.d_theta,
                        problem.s_theta,
                    )
                    .map_err(|e| HarnessError::BadSpec(e.to_string()))?,
                )),
            };
        }
        BudgetCell::Levels { n0, t0, levels } => {
            let cfg = match estimator {
                EstimatorKind::Mlkq => {
                    let base = MlConfig::geometric(n0, t0, levels)
                        .map_err(|e| HarnessError::BadSpec(e.to_string()))?;
                    MlConfig::mlkq_allocation(
                        base.total_cost(),
                        levels,
                        problem.d_x,
                        problem.s_x,
                        problem.d_theta,
                        problem.s_theta,
                    )
                    .map_err(|e| HarnessError::BadSpec(e.to_string()))?
                }
                _ => MlConfig::geometric(n0, t0, levels)
                    .map_err(|e| HarnessError::BadSpec(e.to_string()))?,
            };
            return Ok(Allocation::MultiLevel(cfg));
        }
        BudgetCell::Delta { delta } => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(HarnessError::BadSpec(format!("delta {delta} not in (0,1)")));
            }
            delta
        }
        BudgetCell::Cost { cost } => {
            if cost < 4.0 {
                return Err(HarnessError::BadSpec(format!("cost {cost} too small")));
            }
            // invert each estimator's theoretical cost(delta)
            match estimator {
                EstimatorKind::Nkq => cost.powf(-1.0 / (ex + et)),
                EstimatorKind::Nmc => cost.powf(-1.0 / 3.0),
                EstimatorKind::Mlmc => cost.powf(-1.0 / 2.0),
                EstimatorKind::Mlkq => {
                    let cexp = 1.0
                        + problem.d_x as f64 / (2.0 * problem.s_x)
                        + problem.d_theta as f64 / (2.0 * problem.s_theta);
                    cost.powf(-1.0 / cexp)
                }
            }
        }
    };
    match estimator {
        EstimatorKind::Nkq => Ok(Allocation::SingleLevel {
            n: delta.powf(-ex).ceil() as usize,
            t: delta.powf(-et).ceil() as usize,
        }),
        EstimatorKind::Nmc => {
            let n = delta.recip().ceil() as usize;
            Ok(Allocation::SingleLevel { n, t: n * n })
        }
        EstimatorKind::Mlmc => {
            // N_l = 4 * 2^l, T_0 scaled so the ladder cost is ~delta^-2
            let budget = delta.powi(-2);
            let n0 = 4usize;
            let unit: f64 = (0..=mlmc_levels)
                .map(|l| n0 as f64 * 0.5f64.powi(l as i32))
                .sum();
            let t0 = ((budget / unit).round() as usize).max(1);
            Ok(Allocation::MultiLevel(
                MlConfig::geometric(n0, t0, mlmc_levels)
                    .map_err(|e| HarnessError::BadSpec(e.to_string()))?,
            ))
        }
        EstimatorKind::Mlkq => {
            let cexp = 1.0
                + problem.d_x as f64 / (2.0 * problem.s_x)
                + problem.d_theta as f64 / (2.0 * problem.s_theta);
            let budget = delta.powf(-cexp).round() as usize;
            Ok(Allocation::MultiLevel(
                MlConfig::mlkq_allocation(
                    budget.max(16),
                    mlkq_levels,
                    problem.d_x,
                    problem.s_x,
                    problem.d_theta,
                    problem.s_theta,
                )
                .map_err(|e| HarnessError::BadSpec(e.to_string()))?,
            ))
        }
    }
}

/// A replicated sweep over (estimator, budget-cell) pairs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SweepSpec {
    pub problem: ProblemId,
    pub estimators: Vec<EstimatorKind>,
    pub point_source: PointSource,
    pub budget: Vec<BudgetCell>,
    pub replicates: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub lambda0_x: Option<f64>,
    #[serde(default)]
    pub lambda0_theta: Option<f64>,
    #[serde(default = "default_mlmc_levels")]
    pub mlmc_levels: usize,
    #[serde(default = "default_mlkq_levels")]
    pub mlkq_levels: usize,
}

fn default_mlmc_levels() -> usize {
    5
}

fn default_mlkq_levels() -> usize {
    3
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.budget.is_empty() {
            return Err(HarnessError::BadSpec("budget grid is empty".into()));
        }
        if self.estimators.is_empty() {
            return Err(HarnessError::BadSpec("estimator list is empty".into()));
        }
        if self.replicates == 0 {
            return Err(HarnessError::BadSpec("replicates must be >= 1".into()));
        }
        Ok(())
    }
}

/// One replicate's outcome; the CSV row schema.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunRecord {
    pub problem: String,
    pub estimator: String,
    pub point_source: String,
    pub cost: u64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "L")]
    pub l: Option<usize>,
    pub replicate: usize,
    pub seed: u64,
    pub estimate: f64,
    pub abs_error: Option<f64>,
    pub wall_millis: f64,
    pub lambda0_x: f64,
    pub lambda0_theta: f64,
}

/// Deterministic per-job seed: base seed split by a cell/replicate stream id.
fn job_seed(base: u64, estimator_idx: usize, cell_idx: usize, replicate: usize) -> u64 {
    let stream = ((estimator_idx as u64) << 48) | ((cell_idx as u64) << 32) | replicate as u64;
    split_seed(base, stream)
}

/// Run one replicate and return its record.
fn run_one(
    problem: &NestedProblem,
    estimator: EstimatorKind,
    source: PointSource,
    alloc: &Allocation,
    lambda0: (f64, f64),
    replicate: usize,
    seed: u64,
) -> Result<RunRecord, String> {
    let counter = Arc::new(AtomicU64::new(0));
    let counted = problem.clone().with_counter(counter.clone());
    let start = Instant::now();
    let estimate = match (estimator, alloc) {
        (EstimatorKind::Nkq, Allocation::SingleLevel { n, t }) => {
            let mut cfg = NkqConfig::new(*n, *t, seed).with_source(source);
            cfg.lambda0_x = Some(lambda0.0);
            cfg.lambda0_theta = Some(lambda0.1);
            nkq(&counted, &cfg).map_err(|e| e.to_string())?.estimate
        }
        (EstimatorKind::Nmc, Allocation::SingleLevel { n, t }) => {
            nmc(&counted, *n, *t, source, seed).map_err(|e| e.to_string())?
        }
        (EstimatorKind::Mlmc, Allocation::MultiLevel(cfg)) => {
            mlmc(&counted, cfg, seed).map_err(|e| e.to_string())?
        }
        (EstimatorKind::Mlkq, Allocation::MultiLevel(cfg)) => {
            mlkq(&counted, cfg, lambda0, seed).map_err(|e| e.to_string())?
        }
        _ => return Err("estimator/allocation mismatch".into()),
    };
    let wall_millis = start.elapsed().as_secs_f64() * 1e3;
    let cost = counter.load(Ordering::Relaxed);
    let (n, t, l) = match alloc {
        Allocation::SingleLevel { n, t } => (*n, *t, None),
        Allocation::MultiLevel(cfg) => (cfg.n_levels[0], cfg.t_levels[0], Some(cfg.levels())),
    };
    Ok(RunRecord {
        problem: problem.name.clone(),
        estimator: estimator.label().to_string(),
        point_source: match source {
            PointSource::Iid => "iid".to_string(),
            PointSource::Qmc => "qmc".to_string(),
        },
        cost,
        n,
        t,
        l,
        replicate,
        seed,
        estimate,
        abs_error: problem.true_value.map(|tv| (estimate - tv).abs()),
        wall_millis,
        lambda0_x: lambda0.0,
        lambda0_theta: lambda0.1,
    })
}

/// Execute a sweep. Cells run their replicates in parallel; failed cells are
/// skipped (reported in the returned error) while the rest of the sweep
/// continues. Output order is deterministic.
pub fn run_sweep(spec: &SweepSpec) -> (Vec<RunRecord>, Option<HarnessError>) {
    if let Err(e) = spec.validate() {
        return (Vec::new(), Some(e));
    }
    let problem = spec.problem.build();
    let lambda0 = (
        spec.lambda0_x.unwrap_or(problem.default_lambda0.0),
        spec.lambda0_theta.unwrap_or(problem.default_lambda0.1),
    );

    struct Job {
        estimator_idx: usize,
        estimator: EstimatorKind,
        cell_idx: usize,
        alloc: Allocation,
        replicate: usize,
        seed: u64,
    }
    let mut jobs = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    let mut total_cells = 0;
    for (ei, &estimator) in spec.estimators.iter().enumerate() {
        for (ci, &cell) in spec.budget.iter().enumerate() {
            total_cells += 1;
            match allocate(&problem, estimator, cell, spec.mlmc_levels, spec.mlkq_levels) {
                Ok(alloc) => {
                    for r in 0..spec.replicates {
                        jobs.push(Job {
                            estimator_idx: ei,
                            estimator,
                            cell_idx: ci,
                            alloc: alloc.clone(),
                            replicate: r,
                            seed: job_seed(spec.base_seed, ei, ci, r),
                        });
                    }
                }
                Err(e) => failures.push(format!("{}/{ci}: {e}", estimator.label())),
            }
        }
    }

    let results: Vec<(usize, usize, usize, Result<RunRecord, String>)> = jobs
        .par_iter()
        .map(|job| {
            (
                job.estimator_idx,
                job.cell_idx,
                job.replicate,
                run_one(
                    &problem,
                    job.estimator,
                    spec.point_source,
                    &job.alloc,
                    lambda0,
                    job.replicate,
                    job.seed,
                ),
            )
        })
        .collect();

    let mut ordered: Vec<_> = results.into_iter().collect();
    ordered.sort_by_key(|(e, c, r, _)| (*e, *c, *r));
    let mut records = Vec::with_capacity(ordered.len());
    for (_, _, _, res) in ordered {
        match res {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(e),
        }
    }
    let err = if failures.is_empty() {
        None
    } else {
        Some(HarnessError::PartialFailure {
            failed: failures.len(),
            total: total_cells * spec.replicates,
            first: failures[0].clone(),
        })
    };
    (records, err)
}

/// Ordinary least-squares slope of log(error) on log(cost). The cost
/// exponent r-hat customary in rate reports (cost proportional to
/// delta^-r) is `-1/slope`, see [`cost_exponent`].
///
/// ```
/// use nestquad::harness::{cost_exponent, fit_loglog_slope};
///
/// let slope = fit_loglog_slope(&[1.0, 10.0], &[1.0, 0.1]).unwrap();
/// assert!((slope + 1.0).abs() < 1e-12);
/// assert!((cost_exponent(slope) - 1.0).abs() < 1e-12);
/// ```
pub fn fit_loglog_slope(costs: &[f64], errors: &[f64]) -> Result<f64, HarnessError> {
    if costs.len() != errors.len() || costs.len() < 2 {
        return Err(HarnessError::BadFitInput);
    }
    if costs.iter().chain(errors.iter()).any(|v| v.is_nan() || *v <= 0.0) {
        return Err(HarnessError::BadFitInput);
    }
    let xs: Vec<f64> = costs.iter().map(|c| c.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::BadFitInput);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Cost exponent r-hat such that cost ~ delta^-r, from an error-vs-cost
/// slope: error ~ cost^slope implies r = -1/slope.
pub fn cost_exponent(slope: f64) -> f64 {
    -1.0 / slope
}

/// Per-cell summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub problem: String,
    pub estimator: String,
    pub point_source: String,
    pub n: usize,
    pub t: usize,
    pub mean_cost: f64,
    pub mean_abs_error: Option<f64>,
    pub q25_abs_error: Option<f64>,
    pub q75_abs_error: Option<f64>,
    pub mean_estimate: f64,
    pub mean_wall_millis: f64,
    pub replicates: usize,
}

/// Linear-interpolation (type 7) quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Group records by (problem, estimator, point source, N, T) and summarize
/// each cell: mean absolute error with 25%/75% quantiles, mean estimate,
/// mean wall time. Cells are returned in a stable sorted order.
pub fn summarize(records: &[RunRecord]) -> Vec<CellSummary> {
    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(String, String, String, usize, usize), Vec<&RunRecord>> =
        BTreeMap::new();
    for r in records {
        cells
            .entry((
                r.problem.clone(),
                r.estimator.clone(),
                r.point_source.clone(),
                r.n,
                r.t,
            ))
            .or_default()
            .push(r);
    }
    cells
        .into_iter()
        .map(|((problem, estimator, point_source, n, t), rs)| {
            let count = rs.len();
            let mean =
                |f: &dyn Fn(&RunRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / count as f64;
            let mut errs: Vec<f64> = rs.iter().filter_map(|r| r.abs_error).collect();
            errs.sort_by(f64::total_cmp);
            let (me, q25, q75) = if errs.len() == count {
                (
                    Some(errs.iter().sum::<f64>() / count as f64),
                    Some(quantile_sorted(&errs, 0.25)),
                    Some(quantile_sorted(&errs, 0.75)),
                )
            } else {
                (None, None, None)
            };
            CellSummary {
                problem,
                estimator,
                point_source,
                n,
                t,
                mean_cost: mean(&|r| r.cost as f64),
                mean_abs_error: me,
                q25_abs_error: q25,
                q75_abs_error: q75,
                mean_estimate: mean(&|r| r.estimate),
                mean_wall_millis: mean(&|r| r.wall_millis),
                replicates: count,
            }
        })
        .collect()
}

/// Write records as CSV (headers: problem, estimator, point_source, cost,
/// N, T, L, replicate, seed, estimate, abs_error, wall_millis, lambda0_x,
/// lambda0_theta).
pub fn write_csv<P: AsRef<Path>>(path: P, records: &[RunRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_to<W: Write>(out: W, records: &[RunRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Vec<RunRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Result of the lambda0 grid search.
#[derive(Debug, Clone)]
pub struct GridSelection {
    pub lambda0_x: f64,
    pub lambda0_theta: f64,
    /// (lambda0_x, lambda0_theta, score) for every grid pair; the score is
    /// the mean absolute error when the problem's truth is known, else the
    /// mean leave-one-out residual of the stage-II values.
    pub table: Vec<(f64, f64, f64)>,
    pub records: Vec<RunRecord>,
}

/// The documented lambda0 grid.
pub const LAMBDA0_GRID: [f64; 3] = [0.01, 0.1, 1.0];

/// Grid-search the (lambda0_X, lambda0_Theta) pair on a pilot budget:
/// runs `replicates` nested-quadrature replicates per pair and picks the
/// pair minimizing mean absolute error against the truth when available,
/// else a stage-II leave-one-out residual. All pilot runs are returned as
/// records (their lambda0 columns identify the grid point).
pub fn lambda0_grid_search(
    problem_id: &ProblemId,
    n: usize,
    t: usize,
    source: PointSource,
    replicates: usize,
    base_seed: u64,
) -> Result<GridSelection, HarnessError> {
    let problem = problem_id.build();
    let mut table = Vec::new();
    let mut records = Vec::new();
    let mut best = (f64::INFINITY, LAMBDA0_GRID[0], LAMBDA0_GRID[0]);
    for (i, &lx) in LAMBDA0_GRID.iter().enumerate() {
        for (j, &lt) in LAMBDA0_GRID.iter().enumerate() {
            let mut score = 0.0;
            for r in 0..replicates {
                let seed = job_seed(base_seed, i, j, r);
                let counter = Arc::new(AtomicU64::new(0));
                let counted = problem.clone().with_counter(counter.clone());
                let mut cfg = NkqConfig::new(n, t, seed).with_source(source);
                cfg.lambda0_x = Some(lx);
                cfg.lambda0_theta = Some(lt);
                let start = Instant::now();
                let res = nkq(&counted, &cfg).map_err(|e| HarnessError::BadSpec(e.to_string()))?;
                score += match problem.true_value {
                    Some(tv) => (res.estimate - tv).abs(),
                    None => stage2_loo_residual(&res),
                };
                records.push(RunRecord {
                    problem: problem.name.clone(),
                    estimator: "nkq".into(),
                    point_source: match source {
                        PointSource::Iid => "iid".into(),
                        PointSource::Qmc => "qmc".into(),
                    },
                    cost: counter.load(Ordering::Relaxed),
                    n,
                    t,
                    l: None,
                    replicate: r,
                    seed,
                    estimate: res.estimate,
                    abs_error: problem.true_value.map(|tv| (res.estimate - tv).abs()),
                    wall_millis: start.elapsed().as_secs_f64() * 1e3,
                    lambda0_x: lx,
                    lambda0_theta: lt,
                });
            }
            score /= replicates as f64;
            table.push((lx, lt, score));
            if score < best.0 {
                best = (score, lx, lt);
            }
        }
    }
    Ok(GridSelection { lambda0_x: best.1, lambda0_theta: best.2, table, records })
}

/// Leave-one-out proxy when no truth is known: hold out each stage-I value
/// in turn and predict it from the remaining ones with the uniform-weight
/// mean, measuring the spread the stage-II rule has to fit.
fn stage2_loo_residual(result: &crate::nested::NkqResult) -> f64 {
    let vals = &result.targets[0].stage1_values;
    let t = vals.len() as f64;
    if t < 2.0 {
        return 0.0;
    }
    let sum: f64 = vals.iter().sum();
    vals.iter()
        .map(|v| {
            let rest = (sum - v) / (t - 1.0);
            (v - rest).abs()
        })
        .sum::<f64>()
        / t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemId;

    fn tiny_spec() -> SweepSpec {
        SweepSpec {
            problem: ProblemId::Synthetic { d: 1 },
            estimators: vec![EstimatorKind::Nmc],
            point_source: PointSource::Iid,
            budget: vec![BudgetCell::Explicit { n: 4, t: 9 }],
            replicates: 2,
            base_seed: 11,
            lambda0_x: None,
            lambda0_theta: None,
            mlmc_levels: 5,
            mlkq_levels: 3,
        }
    }

    #[test]
    fn sweep_is_deterministic_with_distinct_seeds() {
        let spec = tiny_spec();
        let (a, err_a) = run_sweep(&spec);
        let (b, _) = run_sweep(&spec);
        assert!(err_a.is_none());
        assert_eq!(a.len(), 2);
        assert_ne!(a[0].seed, a[1].seed);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.estimate, y.estimate);
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.cost, y.cost);
        }
    }

    #[test]
    fn empty_estimator_list_is_rejected() {
        let mut spec = tiny_spec();
        spec.estimators.clear();
        let (records, err) = run_sweep(&spec);
        assert!(records.is_empty());
        assert!(matches!(err, Some(HarnessError::BadSpec(_))));
    }

    #[test]
    fn nmc_cost_audit_matches_formula() {
        let spec = tiny_spec();
        let (records, _) = run_sweep(&spec);
        for r in &records {
            assert_eq!(r.cost, 4 * 9);
        }
    }

    #[test]
    fn nkq_cost_audit_matches_formula() {
        let mut spec = tiny_spec();
        spec.estimators = vec![EstimatorKind::Nkq];
        spec.budget = vec![BudgetCell::Explicit { n: 8, t: 6 }];
        let (records, err) = run_sweep(&spec);
        assert!(err.is_none());
        for r in &records {
            assert_eq!(r.cost, 8 * 6);
        }
    }

    #[test]
    fn multilevel_cost_audit_matches_ladder() {
        let mut spec = tiny_spec();
        spec.estimators = vec![EstimatorKind::Mlmc];
        spec.budget = vec![BudgetCell::Levels { n0: 4, t0: 32, levels: 2 }];
        let (records, err) = run_sweep(&spec);
        assert!(err.is_none(), "{err:?}");
        let cfg = MlConfig::geometric(4, 32, 2).unwrap();
        for r in &records {
            assert_eq!(r.cost as usize, cfg.total_cost());
            assert_eq!(r.l, Some(2));
        }
    }

    #[test]
    fn seed_audit_reruns_reproduce_cells() {
        let mut spec = tiny_spec();
        spec.estimators = vec![EstimatorKind::Nkq];
        spec.budget = vec![BudgetCell::Explicit { n: 8, t: 8 }];
        let (records, _) = run_sweep(&spec);
        let problem = spec.problem.build();
        for r in &records {
            let mut cfg = NkqConfig::new(r.n, r.t, r.seed);
            cfg.lambda0_x = Some(r.lambda0_x);
            cfg.lambda0_theta = Some(r.lambda0_theta);
            let again = nkq(&problem, &cfg).unwrap().estimate;
            assert_eq!(again, r.estimate);
        }
    }

    #[test]
    fn fit_examples() {
        let s = fit_loglog_slope(&[1.0, 10.0], &[1.0, 0.1]).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
        assert!((cost_exponent(s) - 1.0).abs() < 1e-12);
        let s0 = fit_loglog_slope(&[1.0, 10.0, 100.0], &[0.5, 0.5, 0.5]).unwrap();
        assert!(s0.abs() < 1e-12);
        assert!(fit_loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(fit_loglog_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
        assert!(fit_loglog_slope(&[1.0, 1.0], &[0.5, 0.2]).is_err());
    }

    #[test]
    fn quantile_convention_examples() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&sorted, 0.25), 1.75);
        assert_eq!(quantile_sorted(&sorted, 0.75), 3.25);
        assert_eq!(quantile_sorted(&[5.0], 0.25), 5.0);
    }

    #[test]
    fn summarize_cells() {
        let spec = tiny_spec();
        let (records, _) = run_sweep(&spec);
        let summaries = summarize(&records);
        assert_eq!(summaries.len(), 1);
        let s = &summaries[0];
        assert_eq!(s.replicates, 2);
        assert!(s.mean_abs_error.is_some());
        assert!(s.q25_abs_error.unwrap() <= s.q75_abs_error.unwrap());
        // single-record cell: quantiles equal the value
        let one = summarize(&records[..1]);
        assert_eq!(one[0].q25_abs_error, one[0].q75_abs_error);
        assert_eq!(one[0].q25_abs_error, records[0].abs_error);
    }

    #[test]
    fn csv_round_trip() {
        let spec = tiny_spec();
        let (records, _) = run_sweep(&spec);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        write_csv(&path, &records).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn delta_allocation_follows_problem_exponents() {
        let p = ProblemId::Synthetic { d: 1 }.build();
        // synthetic: exponents (1/2, 1/2): delta = 0.01 -> N = T = 10
        match allocate(&p, EstimatorKind::Nkq, BudgetCell::Delta { delta: 0.01 }, 5, 3).unwrap() {
            Allocation::SingleLevel { n, t } => {
                assert_eq!(n, 10);
                assert_eq!(t, 10);
            }
            other => panic!("{other:?}"),
        }
        match allocate(&p, EstimatorKind::Nmc, BudgetCell::Delta { delta: 0.1 }, 5, 3).unwrap() {
            Allocation::SingleLevel { n, t } => {
                assert_eq!(n, 10);
                assert_eq!(t, 100);
            }
            other => panic!("{other:?}"),
        }
        // cost cells land near the requested budget
        match allocate(&p, EstimatorKind::Nkq, BudgetCell::Cost { cost: 10_000.0 }, 5, 3).unwrap() {
            Allocation::SingleLevel { n, t } => {
                assert!((n * t) as f64 >= 9_000.0 && (n * t) as f64 <= 13_000.0);
            }
            other => panic!("{other:?}"),
        }
        match allocate(&p, EstimatorKind::Mlmc, BudgetCell::Cost { cost: 10_000.0 }, 5, 3).unwrap()
        {
            Allocation::MultiLevel(cfg) => {
                let c = cfg.total_cost() as f64;
                assert!(c > 6_000.0 && c < 16_000.0, "cost {c}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_search_covers_the_grid() {
        let sel = lambda0_grid_search(
            &ProblemId::Synthetic { d: 1 },
            16,
            16,
            PointSource::Iid,
            3,
            5,
        )
        .unwrap();
        assert_eq!(sel.table.len(), 9);
        assert!(LAMBDA0_GRID.contains(&sel.lambda0_x));
        assert!(LAMBDA0_GRID.contains(&sel.lambda0_theta));
        assert_eq!(sel.records.len(), 27);
        // every record carries its grid pair in the lambda0 columns
        assert!(sel.records.iter().any(|r| r.lambda0_x == 1.0));
    }
}
