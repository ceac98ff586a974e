//! Baseline estimators: nested Monte Carlo (with i.i.d. or scrambled-Sobol
//! points), the antithetic multilevel Monte Carlo construction, and the
//! multilevel variant of nested kernel quadrature.
//!
//! Seed streams are layered so that level 0 of either multilevel estimator
//! reproduces its single-level counterpart bit for bit on the same seed:
//! level l draws from `split_seed(seed, l)` and `split_seed(seed, 0)` is
//! the seed itself.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::embeddings::kme;
use crate::kernels::{median_heuristic, KernelSpec};
use crate::nested::{column_mean, nkq, EstimateError, NkqConfig, RuleWeights};
use crate::problems::NestedProblem;
use crate::quadrature::{kq_weights, mlkq_theta_schedule, reg_schedule, schedule_smoothness};
use crate::sampling::{apply_transform, base_points, split_seed, PointSource};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("multilevel config invalid: {0}")]
    BadLevels(String),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("sampling failure at level {level}, outer point {t}: {source}")]
    Sampling {
        level: usize,
        t: usize,
        #[source]
        source: crate::sampling::SampleError,
    },
}

/// Per-level sample counts for the multilevel estimators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlConfig {
    /// Inner counts N_0 < N_1 < ... < N_L.
    pub n_levels: Vec<usize>,
    /// Outer counts T_0, ..., T_L (each >= 1).
    pub t_levels: Vec<usize>,
}

impl MlConfig {
    pub fn new(n_levels: Vec<usize>, t_levels: Vec<usize>) -> Result<Self, BaselineError> {
        if n_levels.is_empty() || n_levels.len() != t_levels.len() {
            return Err(BaselineError::BadLevels(
                "need equal, nonzero level counts for N and T".into(),
            ));
        }
        if t_levels.contains(&0) || n_levels[0] == 0 {
            return Err(BaselineError::BadLevels("all T_l and N_0 must be >= 1".into()));
        }
        for l in 1..n_levels.len() {
            if n_levels[l] <= n_levels[l - 1] {
                return Err(BaselineError::BadLevels(format!(
                    "N_l must increase strictly (N_{} = {} vs N_{} = {})",
                    l - 1,
                    n_levels[l - 1],
                    l,
                    n_levels[l]
                )));
            }
        }
        Ok(MlConfig { n_levels, t_levels })
    }

    /// The default geometric allocation N_l = n0 * 2^l, T_l = ceil(t0 * 4^-l).
    pub fn geometric(n0: usize, t0: usize, levels: usize) -> Result<Self, BaselineError> {
        let n_levels: Vec<usize> = (0..=levels).map(|l| n0 << l).collect();
        let t_levels: Vec<usize> = (0..=levels)
            .map(|l| ((t0 as f64 * 0.25f64.powi(l as i32)).ceil() as usize).max(1))
            .collect();
        Self::new(n_levels, t_levels)
    }

    /// Allocation for the multilevel quadrature estimator at a target
    /// g-evaluation budget: N_l grows like 2^(l d_x / s_x) from
    /// N_0 ~ budget^(s_theta d_x / (s_x (2 s_theta + d_theta) + ...)) and
    /// T_l decays like 2^(-l (2 s_theta + d_theta)/s_theta), with T_0
    /// scaled so the total cost lands on the budget. Integer rounding is
    /// adjusted so the strict ratio constraint
    /// N_{l-1} < N_l < 2^(d_x/s_x) N_{l-1} keeps holding.
    pub fn mlkq_allocation(
        budget: usize,
        levels: usize,
        d_x: usize,
        s_x: f64,
        d_theta: usize,
        s_theta: f64,
    ) -> Result<Self, BaselineError> {
        let rx = d_x as f64 / s_x;
        let rt = (2.0 * s_theta + d_theta as f64) / s_theta;
        // cost ~ delta^(-1 - d_x/(2 s_x) - d_theta/(2 s_theta))
        let cost_exp = 1.0 + d_x as f64 / (2.0 * s_x) + d_theta as f64 / (2.0 * s_theta);
        let delta = (budget as f64).powf(-1.0 / cost_exp);
        let n0 = (delta.powf(-rx / 2.0).round() as usize).max(3);
        let mut n_levels = vec![n0];
        let ratio = 2f64.powf(rx);
        for l in 1..=levels {
            let raw = (n0 as f64 * 2f64.powf(rx * l as f64)).floor() as usize;
            let upper = ((n_levels[l - 1] as f64 * ratio).ceil() as usize).saturating_sub(1);
            let n = raw.min(upper).max(n_levels[l - 1] + 1);
            n_levels.push(n);
        }
        // T_0 scaled so sum N_l T_l ~ budget under T_l = T_0 2^(-rt l)
        let unit: f64 = (0..=levels)
            .map(|l| n_levels[l] as f64 * 2f64.powf(-rt * l as f64))
            .sum();
        let t0 = ((budget as f64 / unit).round() as usize).max(1);
        let t_levels: Vec<usize> = (0..=levels)
            .map(|l| ((t0 as f64 * 2f64.powf(-rt * l as f64)).round() as usize).max(1))
            .collect();
        Self::new(n_levels, t_levels)
    }

    pub fn levels(&self) -> usize {
        self.n_levels.len() - 1
    }

    /// Total g-evaluation cost sum_l N_l T_l.
    pub fn total_cost(&self) -> usize {
        self.n_levels.iter().zip(&self.t_levels).map(|(n, t)| n * t).sum()
    }

    fn require_doubling(&self) -> Result<(), BaselineError> {
        for l in 1..self.n_levels.len() {
            if self.n_levels[l] != 2 * self.n_levels[l - 1] {
                return Err(BaselineError::BadLevels(format!(
                    "antithetic halving needs N_l = 2 N_(l-1); got {} after {}",
                    self.n_levels[l],
                    self.n_levels[l - 1]
                )));
            }
        }
        Ok(())
    }

    fn require_ratio(&self, d_x: usize, s_x: f64) -> Result<(), BaselineError> {
        let ratio = 2f64.powf(d_x as f64 / s_x);
        for l in 1..self.n_levels.len() {
            let bound = ratio * self.n_levels[l - 1] as f64;
            if (self.n_levels[l] as f64) >= bound {
                return Err(BaselineError::BadLevels(format!(
                    "N_{l} = {} must stay below 2^(d_x/s_x) N_{} = {bound}",
                    self.n_levels[l],
                    l - 1
                )));
            }
        }
        Ok(())
    }
}

/// Inner sample means per outer point, one row per target component.
fn inner_means(problem: &NestedProblem, x: &DMatrix<f64>, theta: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let m = problem.g_dim;
    let mut cols = vec![Vec::with_capacity(n); m];
    let mut buf = vec![0.0; m];
    for i in 0..n {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        problem.eval_g(&xi, theta, &mut buf);
        for c in 0..m {
            cols[c].push(buf[c]);
        }
    }
    cols.iter().map(|c| column_mean(c)).collect()
}

/// Draw the inner sample set for outer point `t` of level stream `seed`.
fn inner_points(
    problem: &NestedProblem,
    theta: &[f64],
    n: usize,
    source: PointSource,
    seed: u64,
    level: usize,
    t: usize,
) -> Result<DMatrix<f64>, BaselineError> {
    let wrap = |source_err| BaselineError::Sampling { level, t, source: source_err };
    match source {
        PointSource::Iid => {
            base_points(&problem.conditional(theta), n, source, seed).map_err(wrap)
        }
        PointSource::Qmc => {
            // scrambled Sobol pushed through the problem's transforms
            let base = problem
                .conditional_base
                .as_ref()
                .ok_or_else(|| wrap(crate::sampling::SampleError::QmcBase(problem.name.clone())))?;
            let map = problem
                .conditional_map(theta)
                .ok_or_else(|| wrap(crate::sampling::SampleError::QmcBase(problem.name.clone())))?;
            let u = base_points(base, n, source, seed).map_err(wrap)?;
            Ok(apply_transform(&map, &u).map_err(wrap)?.points)
        }
    }
}

fn outer_points(
    problem: &NestedProblem,
    t_count: usize,
    source: PointSource,
    seed: u64,
    level: usize,
) -> Result<DMatrix<f64>, BaselineError> {
    let wrap = |source_err| BaselineError::Sampling { level, t: 0, source: source_err };
    match source {
        PointSource::Iid => base_points(&problem.outer, t_count, source, seed).map_err(wrap),
        PointSource::Qmc => {
            let cov = problem
                .outer_cov
                .as_ref()
                .ok_or_else(|| wrap(crate::sampling::SampleError::QmcBase(problem.name.clone())))?;
            let u = base_points(&cov.base, t_count, source, seed).map_err(wrap)?;
            Ok(apply_transform(&cov.map, &u).map_err(wrap)?.points)
        }
    }
}

/// Nested Monte Carlo per-target estimates (before combining).
pub fn nmc_detailed(
    problem: &NestedProblem,
    n: usize,
    t_count: usize,
    source: PointSource,
    seed: u64,
) -> Result<Vec<f64>, BaselineError> {
    nmc_level(problem, n, t_count, source, seed, 0)
}

fn nmc_level(
    problem: &NestedProblem,
    n: usize,
    t_count: usize,
    source: PointSource,
    seed: u64,
    level: usize,
) -> Result<Vec<f64>, BaselineError> {
    let thetas = outer_points(problem, t_count, source, split_seed(seed, 1), level)?;
    let mut sums = vec![Vec::with_capacity(t_count); problem.targets.len()];
    for ti in 0..t_count {
        let theta: Vec<f64> = thetas.row(ti).iter().copied().collect();
        let x = inner_points(
            problem,
            &theta,
            n,
            source,
            split_seed(seed, 2 + ti as u64),
            level,
            ti,
        )?;
        let j = inner_means(problem, &x, &theta);
        for (k, target) in problem.targets.iter().enumerate() {
            sums[k].push(target.f.eval(&j));
        }
    }
    Ok(sums.iter().map(|vals| column_mean(vals)).collect())
}

/// Nested Monte Carlo estimate; `source = Qmc` gives the quasi-Monte Carlo
/// variant with fresh scrambled Sobol points at both levels.
pub fn nmc(
    problem: &NestedProblem,
    n: usize,
    t_count: usize,
    source: PointSource,
    seed: u64,
) -> Result<f64, BaselineError> {
    Ok(problem.combine_estimate(&nmc_detailed(problem, n, t_count, source, seed)?))
}

/// Antithetic multilevel Monte Carlo. Level 0 is plain nested Monte Carlo;
/// level l couples one fine inner mean over N_l = 2 N_(l-1) samples with
/// the means of its two halves:
/// Y_l = avg_t[ f((m1+m2)/2) - f(m1)/2 - f(m2)/2 ].
pub fn mlmc(
    problem: &NestedProblem,
    config: &MlConfig,
    seed: u64,
) -> Result<f64, BaselineError> {
    config.require_doubling()?;
    let mut per_target = vec![0.0; problem.targets.len()];
    for level in 0..=config.levels() {
        let level_seed = split_seed(seed, level as u64);
        let t_count = config.t_levels[level];
        if level == 0 {
            let base = nmc_level(problem, config.n_levels[0], t_count, PointSource::Iid, level_seed, 0)?;
            for (k, v) in base.iter().enumerate() {
                per_target[k] += v;
            }
            continue;
        }
        let n_fine = config.n_levels[level];
        let n_coarse = config.n_levels[level - 1];
        let thetas = outer_points(problem, t_count, PointSource::Iid, split_seed(level_seed, 1), level)?;
        let mut acc = vec![Vec::with_capacity(t_count); problem.targets.len()];
        for ti in 0..t_count {
            let theta: Vec<f64> = thetas.row(ti).iter().copied().collect();
            let x = inner_points(
                problem,
                &theta,
                n_fine,
                PointSource::Iid,
                split_seed(level_seed, 2 + ti as u64),
                level,
                ti,
            )?;
            let first = x.rows(0, n_coarse).into_owned();
            let second = x.rows(n_coarse, n_coarse).into_owned();
            let m1 = inner_means(problem, &first, &theta);
            let m2 = inner_means(problem, &second, &theta);
            let fine: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| 0.5 * (a + b)).collect();
            for (k, target) in problem.targets.iter().enumerate() {
                acc[k].push(
                    target.f.eval(&fine) - 0.5 * target.f.eval(&m1) - 0.5 * target.f.eval(&m2),
                );
            }
        }
        for (k, vals) in acc.iter().enumerate() {
            per_target[k] += column_mean(vals);
        }
    }
    Ok(problem.combine_estimate(&per_target))
}

/// Multilevel nested kernel quadrature. Level 0 is a full nested-quadrature
/// run at (N_0, T_0); level l applies the stage-II rule to the difference of
/// stage-I outputs computed from N_l inner samples and their first N_(l-1)
/// subset (nested coupling), with the level schedule
/// lambda_Theta,l = lambda0 * T_l^(-2 s/(2s+d)).
pub fn mlkq(
    problem: &NestedProblem,
    config: &MlConfig,
    lambda0: (f64, f64),
    seed: u64,
) -> Result<f64, BaselineError> {
    let d_x_sched = problem
        .targets
        .iter()
        .map(|t| t.schedule_s_x.unwrap_or_else(|| schedule_smoothness(t.kernel_x, problem.d_x)))
        .fold(f64::INFINITY, f64::min);
    config.require_ratio(problem.d_x, d_x_sched)?;

    let mut per_target = vec![0.0; problem.targets.len()];
    for level in 0..=config.levels() {
        let level_seed = split_seed(seed, level as u64);
        let t_count = config.t_levels[level];
        if level == 0 {
            let mut cfg = NkqConfig::new(config.n_levels[0], t_count, level_seed);
            cfg.lambda0_x = Some(lambda0.0);
            cfg.lambda0_theta = Some(lambda0.1);
            let r = nkq(problem, &cfg)?;
            for (k, t) in r.targets.iter().enumerate() {
                per_target[k] += t.estimate;
            }
            continue;
        }

        let n_fine = config.n_levels[level];
        let n_coarse = config.n_levels[level - 1];
        let plan_cov = problem.default_cov
            && problem.outer_cov.is_some()
            && problem.conditional_map.is_some();

        // outer points (kernel space = base coordinates on the cov route)
        let outer_seed = split_seed(level_seed, 1);
        let (thetas_raw, theta_kspace, stage2_measure) = if plan_cov {
            let covspec = problem.outer_cov.as_ref().unwrap();
            let base = base_points(&covspec.base, t_count, PointSource::Iid, outer_seed)
                .map_err(|e| BaselineError::Sampling { level, t: 0, source: e })?;
            let mapped = apply_transform(&covspec.map, &base)
                .map_err(|e| BaselineError::Sampling { level, t: 0, source: e })?;
            (mapped.points, base, covspec.base.clone())
        } else {
            let raw = base_points(&problem.outer, t_count, PointSource::Iid, outer_seed)
                .map_err(|e| BaselineError::Sampling { level, t: 0, source: e })?;
            (raw.clone(), raw, problem.outer.clone())
        };

        // per-target stage-I differences F(N_l) - F(N_(l-1)) at each theta
        let mut diffs = vec![Vec::with_capacity(t_count); problem.targets.len()];
        for ti in 0..t_count {
            let theta: Vec<f64> = thetas_raw.row(ti).iter().copied().collect();
            let sample_seed = split_seed(level_seed, 2 + ti as u64);
            let (kspace, x_points) = if plan_cov {
                let base = problem.conditional_base.as_ref().unwrap();
                let u = base_points(base, n_fine, PointSource::Iid, sample_seed)
                    .map_err(|e| BaselineError::Sampling { level, t: ti, source: e })?;
                let map = problem.conditional_map(&theta).unwrap();
                let x = apply_transform(&map, &u)
                    .map_err(|e| BaselineError::Sampling { level, t: ti, source: e })?
                    .points;
                (u, x)
            } else {
                let x = base_points(&problem.conditional(&theta), n_fine, PointSource::Iid, sample_seed)
                    .map_err(|e| BaselineError::Sampling { level, t: ti, source: e })?;
                (x.clone(), x)
            };
            let mut gvals = DMatrix::zeros(n_fine, problem.g_dim);
            let mut buf = vec![0.0; problem.g_dim];
            for i in 0..n_fine {
                let xi: Vec<f64> = x_points.row(i).iter().copied().collect();
                problem.eval_g(&xi, &theta, &mut buf);
                for c in 0..problem.g_dim {
                    gvals[(i, c)] = buf[c];
                }
            }
            for (k, target) in problem.targets.iter().enumerate() {
                let j_at = |rows: usize| -> Result<Vec<f64>, BaselineError> {
                    let pts = kspace.rows(0, rows).into_owned();
                    let gamma = median_heuristic(&pts).unwrap_or(1.0);
                    let spec = KernelSpec::new(target.kernel_x, vec![gamma], 1.0, target.composition_x)
                        .map_err(|e| EstimateError::StageOne { t: ti, source: Box::new(e) })?;
                    let s = target
                        .schedule_s_x
                        .unwrap_or_else(|| schedule_smoothness(target.kernel_x, pts.ncols()));
                    let lambda = reg_schedule(lambda0.0, rows, s, pts.ncols());
                    let measure = if plan_cov {
                        problem.conditional_base.clone().unwrap()
                    } else {
                        problem.conditional(&theta)
                    };
                    let mu = kme(&spec, &measure, &pts)
                        .map_err(|e| EstimateError::StageOne { t: ti, source: Box::new(e) })?;
                    let (w, _) = kq_weights(&spec, &pts, &mu, lambda)
                        .map_err(|e| EstimateError::StageOne { t: ti, source: Box::new(e) })?;
                    let rule = RuleWeights::new(w);
                    Ok((0..problem.g_dim)
                        .map(|c| {
                            let col: Vec<f64> = (0..rows).map(|i| gvals[(i, c)]).collect();
                            rule.estimate(&col).0
                        })
                        .collect())
                };
                let j_fine = j_at(n_fine)?;
                let j_coarse = j_at(n_coarse)?;
                diffs[k].push(target.f.eval(&j_fine) - target.f.eval(&j_coarse));
            }
        }

        // stage-II rule applied to each target's difference vector
        let gamma_theta = median_heuristic(&theta_kspace).unwrap_or(1.0);
        for (k, target) in problem.targets.iter().enumerate() {
            let s_theta = target
                .schedule_s_theta
                .unwrap_or_else(|| schedule_smoothness(target.kernel_theta, theta_kspace.ncols()));
            let lambda = mlkq_theta_schedule(lambda0.1, t_count, s_theta, theta_kspace.ncols());
            let spec = KernelSpec::new(
                target.kernel_theta,
                vec![gamma_theta],
                1.0,
                target.composition_theta,
            )
            .map_err(|e| EstimateError::StageTwo { target: target.name.to_string(), source: Box::new(e) })?;
            let mu = kme(&spec, &stage2_measure, &theta_kspace).map_err(|e| {
                EstimateError::StageTwo { target: target.name.to_string(), source: Box::new(e) }
            })?;
            let (w, _) = kq_weights(&spec, &theta_kspace, &mu, lambda).map_err(|e| {
                EstimateError::StageTwo { target: target.name.to_string(), source: Box::new(e) }
            })?;
            per_target[k] += RuleWeights::new(w).estimate(&diffs[k]).0;
        }
    }
    Ok(problem.combine_estimate(&per_target))
}

/// Convenience wrapper returning a DVector of per-target estimates for
/// analysis code.
pub fn nmc_per_target(
    problem: &NestedProblem,
    n: usize,
    t_count: usize,
    source: PointSource,
    seed: u64,
) -> Result<DVector<f64>, BaselineError> {
    Ok(DVector::from_vec(nmc_detailed(problem, n, t_count, source, seed)?))
}
