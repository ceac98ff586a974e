//! Two-stage nested kernel quadrature and its conditional variant.
//!
//! Stage I estimates the inner conditional expectation at every outer point
//! with a kernel quadrature rule; stage II applies a second rule to the
//! mapped stage-I outputs. Function values are standardized per stage with
//! the affine fold-back applied to the returned estimate, and quadrature
//! weights are shifted to sum to one so that the constant (mean) component
//! is reproduced exactly; the shifted weights are the ones reported, so the
//! double-sum assembly identity holds for them verbatim.
//!
//! With the uniform-weight hook enabled, both stages collapse to plain
//! sample means computed with the same arithmetic as nested Monte Carlo,
//! making the reduction exact.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::embeddings::{kme, MeasureSpec};
use crate::kernels::{gram, median_heuristic, standardize, Composition, KernelFamily, KernelSpec};
use crate::problems::NestedProblem;
use crate::quadrature::{kq_weights, reg_schedule, schedule_smoothness};
use crate::sampling::{apply_inverse, apply_transform, base_points, split_seed, PointSource};

/// How stage lengthscales are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthscalePolicy {
    /// Median heuristic on each rule's own point set (stage I per t).
    Median,
    /// Stage I pools the pairwise distances of all per-t point sets and
    /// takes one median; stage II unchanged.
    MedianPooled,
    /// Fixed lengthscale for both stages.
    Fixed(f64),
}

/// Configuration for one nested-quadrature run.
#[derive(Debug, Clone)]
pub struct NkqConfig {
    /// Inner samples per outer point.
    pub n: usize,
    /// Outer samples.
    pub t: usize,
    /// Regularization prefactors; `None` takes the problem default (grid
    /// values 0.01 / 0.1 / 1.0).
    pub lambda0_x: Option<f64>,
    pub lambda0_theta: Option<f64>,
    pub point_source: PointSource,
    /// `None` takes the problem default route.
    pub use_change_of_variable: Option<bool>,
    /// Schedule smoothness overrides; `None` uses per-target values.
    pub smoothness_x: Option<f64>,
    pub smoothness_theta: Option<f64>,
    pub lengthscale_policy: LengthscalePolicy,
    /// Kernel family overrides for both stages.
    pub kernel_x: Option<KernelFamily>,
    pub kernel_theta: Option<KernelFamily>,
    /// Reuse one inner base point set for every outer point; `None` means
    /// "yes on the change-of-variable route, no otherwise". Sharing lets
    /// the stage-I weights be solved once.
    pub share_inner_points: Option<bool>,
    /// Diagnostic hook: force all weights uniform (1/N, 1/T), which
    /// reproduces nested Monte Carlo exactly on the same samples.
    pub uniform_weights: bool,
    /// Keep per-sample detail in the result (tests and audits).
    pub keep_sample_detail: bool,
    pub seed: u64,
}

impl NkqConfig {
    pub fn new(n: usize, t: usize, seed: u64) -> Self {
        NkqConfig {
            n,
            t,
            lambda0_x: None,
            lambda0_theta: None,
            point_source: PointSource::Iid,
            use_change_of_variable: None,
            smoothness_x: None,
            smoothness_theta: None,
            lengthscale_policy: LengthscalePolicy::Median,
            kernel_x: None,
            kernel_theta: None,
            share_inner_points: None,
            uniform_weights: false,
            keep_sample_detail: false,
            seed,
        }
    }

    pub fn with_source(mut self, source: PointSource) -> Self {
        self.point_source = source;
        self
    }

    pub fn with_lambda0(mut self, x: f64, theta: f64) -> Self {
        self.lambda0_x = Some(x);
        self.lambda0_theta = Some(theta);
        self
    }
}

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("invalid estimator configuration: {0}")]
    Config(String),
    #[error("no KME path for {0}; the problem offers no change-of-variable route")]
    MissingKmePath(String),
    #[error("stage I (outer point {t}): {source}")]
    StageOne {
        t: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("stage II ({target}): {source}")]
    StageTwo {
        target: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

fn stage1_err<E: std::error::Error + Send + Sync + 'static>(t: usize) -> impl FnOnce(E) -> EstimateError {
    move |e| EstimateError::StageOne { t, source: Box::new(e) }
}

fn stage2_err<E: std::error::Error + Send + Sync + 'static>(
    target: &str,
) -> impl FnOnce(E) -> EstimateError + '_ {
    move |e| EstimateError::StageTwo { target: target.to_string(), source: Box::new(e) }
}

/// Per-run numeric diagnostics.
#[derive(Debug, Clone, Default)]
pub struct NkqDiagnostics {
    pub max_jitter_x: f64,
    pub max_condition_x: f64,
    pub jitter_theta: f64,
    pub condition_theta: f64,
    pub clamped_points: usize,
    pub degenerate_standardizations: usize,
    pub lengthscale_theta: f64,
    pub lambda_x: f64,
    pub lambda_theta: f64,
}

/// One target's stage-II outcome.
#[derive(Debug, Clone)]
pub struct TargetEstimate {
    pub name: String,
    pub estimate: f64,
    /// F-hat(theta_t) handed to the stage-II rule.
    pub stage1_values: Vec<f64>,
    /// Effective (sum-to-one shifted) stage-II weights.
    pub stage2_weights: Vec<f64>,
}

/// Raw per-sample material, kept on request for assembly audits.
#[derive(Debug, Clone)]
pub struct SampleDetail {
    pub thetas: DMatrix<f64>,
    /// Inner g-values per outer point: t -> (n x g_dim).
    pub g_values: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct NkqResult {
    /// Combined problem value.
    pub estimate: f64,
    pub targets: Vec<TargetEstimate>,
    /// Effective stage-I weights per outer point (first stage-I kernel
    /// group).
    pub stage1_weight_sets: Vec<Vec<f64>>,
    pub diagnostics: NkqDiagnostics,
    pub detail: Option<SampleDetail>,
}

/// Solved weights of one rule together with their sum-to-one shifted
/// variant. Standardizing the function values and folding the affine map
/// back into the estimate makes the rule reproduce the empirical mean
/// exactly, which is algebraically the same as using the shifted weights on
/// the raw values; those shifted weights are what gets reported.
#[derive(Debug, Clone)]
pub(crate) struct RuleWeights {
    raw: DVector<f64>,
    anchored: DVector<f64>,
}

impl RuleWeights {
    pub(crate) fn new(raw: DVector<f64>) -> Self {
        let shift = (1.0 - raw.iter().sum::<f64>()) / raw.len() as f64;
        let anchored = DVector::from_iterator(raw.len(), raw.iter().map(|w| w + shift));
        RuleWeights { raw, anchored }
    }

    fn uniform(n: usize) -> Self {
        let w = DVector::from_element(n, 1.0 / n as f64);
        RuleWeights { raw: w.clone(), anchored: w }
    }

    /// Standardized fold-back estimate of `values`. Degenerate
    /// standardization (constant values or a single point) skips the
    /// fold-back and applies the raw weights directly.
    pub(crate) fn estimate(&self, values: &[f64]) -> (f64, bool) {
        let s = standardize(values);
        if s.degenerate {
            (self.raw.iter().zip(values).map(|(w, v)| w * v).sum(), true)
        } else {
            let wsum: f64 = self.anchored.iter().sum();
            let core: f64 = self.anchored.iter().zip(&s.values).map(|(w, v)| w * v).sum();
            (s.std * core + s.mean * wsum, false)
        }
    }

    /// The weights under which an estimate was assembled: the shifted form
    /// normally, the raw solve when standardization was degenerate.
    fn weights_used(&self, degenerate: bool) -> Vec<f64> {
        if degenerate {
            self.raw.as_slice().to_vec()
        } else {
            self.anchored.as_slice().to_vec()
        }
    }
}

/// Plain mean with fixed summation order; the uniform-weight hook and
/// nested Monte Carlo share this helper so their arithmetic is identical.
pub(crate) fn column_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

struct StagePlan {
    cov: bool,
    share_inner: bool,
    lambda0_x: f64,
    lambda0_theta: f64,
}

fn resolve_plan(problem: &NestedProblem, config: &NkqConfig) -> Result<StagePlan, EstimateError> {
    if config.n == 0 || config.t == 0 {
        return Err(EstimateError::Config("N and T must be >= 1".into()));
    }
    let cov = config.use_change_of_variable.unwrap_or(problem.default_cov);
    if cov && (problem.outer_cov.is_none() || problem.conditional_map.is_none()) {
        return Err(EstimateError::MissingKmePath(problem.name.clone()));
    }
    Ok(StagePlan {
        cov,
        share_inner: config.share_inner_points.unwrap_or(cov),
        lambda0_x: config.lambda0_x.unwrap_or(problem.default_lambda0.0),
        lambda0_theta: config.lambda0_theta.unwrap_or(problem.default_lambda0.1),
    })
}

/// Distinct stage-I kernel configurations among the problem's targets.
struct KernelGroup {
    family: KernelFamily,
    composition: Composition,
    schedule_s: Option<f64>,
    targets: Vec<usize>,
}

fn stage1_groups(problem: &NestedProblem, config: &NkqConfig) -> Vec<KernelGroup> {
    let mut groups: Vec<KernelGroup> = Vec::new();
    for (i, t) in problem.targets.iter().enumerate() {
        let family = config.kernel_x.unwrap_or(t.kernel_x);
        let composition = t.composition_x;
        let schedule_s = config.smoothness_x.or(t.schedule_s_x);
        if let Some(g) = groups
            .iter_mut()
            .find(|g| g.family == family && g.composition == composition && g.schedule_s == schedule_s)
        {
            g.targets.push(i);
        } else {
            groups.push(KernelGroup { family, composition, schedule_s, targets: vec![i] });
        }
    }
    groups
}

struct StageOne {
    theta_kspace: DMatrix<f64>,
    stage2_measure: MeasureSpec,
    /// Inner estimates per kernel group: group -> (t x g_dim).
    jhat: Vec<DMatrix<f64>>,
    groups: Vec<KernelGroup>,
    stage1_weight_sets: Vec<Vec<f64>>,
    diag: NkqDiagnostics,
    detail: Option<SampleDetail>,
}

fn median_or_fallback(points: &DMatrix<f64>) -> f64 {
    median_heuristic(points).unwrap_or(1.0)
}

fn stage_one(
    problem: &NestedProblem,
    config: &NkqConfig,
    plan: &StagePlan,
) -> Result<StageOne, EstimateError> {
    let (n, t_count) = (config.n, config.t);
    let outer_seed = split_seed(config.seed, 1);
    let mut diag = NkqDiagnostics::default();

    // outer points, in base coordinates when on the change-of-variable route
    let (thetas_raw, theta_kspace, stage2_measure) = if plan.cov {
        let covspec = problem.outer_cov.as_ref().unwrap();
        let base = base_points(&covspec.base, t_count, config.point_source, outer_seed)
            .map_err(stage2_err("outer points"))?;
        let mapped = apply_transform(&covspec.map, &base).map_err(stage2_err("outer map"))?;
        diag.clamped_points += mapped.clamped;
        (mapped.points, base, covspec.base.clone())
    } else {
        let raw = base_points(&problem.outer, t_count, config.point_source, outer_seed)
            .map_err(stage2_err("outer points"))?;
        (raw.clone(), raw, problem.outer.clone())
    };

    // inner base/kernel-space point sets
    let shared_points = if plan.share_inner {
        let seed = split_seed(config.seed, 2);
        let pts = if plan.cov {
            base_points(problem.conditional_base.as_ref().unwrap(), n, config.point_source, seed)
        } else {
            // direct sharing only makes sense when the conditional measure is
            // theta-independent; sample it at the first outer point
            let theta0: Vec<f64> = thetas_raw.row(0).iter().copied().collect();
            base_points(&problem.conditional(&theta0), n, config.point_source, seed)
        }
        .map_err(stage1_err(0))?;
        Some(pts)
    } else {
        None
    };
    let per_t_points: Vec<DMatrix<f64>> = if let Some(shared) = &shared_points {
        vec![shared.clone()]
    } else {
        (0..t_count)
            .map(|ti| {
                let seed = split_seed(config.seed, 2 + ti as u64);
                let theta: Vec<f64> = thetas_raw.row(ti).iter().copied().collect();
                if plan.cov {
                    base_points(problem.conditional_base.as_ref().unwrap(), n, config.point_source, seed)
                } else {
                    base_points(&problem.conditional(&theta), n, config.point_source, seed)
                }
                .map_err(stage1_err(ti))
            })
            .collect::<Result<_, _>>()?
    };

    // lengthscale per t (index 0 reused when sharing)
    let lengthscales: Vec<f64> = match config.lengthscale_policy {
        LengthscalePolicy::Fixed(g) => vec![g; per_t_points.len()],
        LengthscalePolicy::Median => per_t_points.iter().map(median_or_fallback).collect(),
        LengthscalePolicy::MedianPooled => {
            let mut dists = Vec::new();
            for pts in &per_t_points {
                let m = pts.nrows();
                for i in 0..m {
                    for j in 0..i {
                        let mut r2 = 0.0;
                        for c in 0..pts.ncols() {
                            let d = pts[(i, c)] - pts[(j, c)];
                            r2 += d * d;
                        }
                        dists.push(r2.sqrt());
                    }
                }
            }
            dists.sort_by(f64::total_cmp);
            let pooled = if dists.is_empty() {
                1.0
            } else {
                let mid = dists.len() / 2;
                if dists.len() % 2 == 1 {
                    dists[mid]
                } else {
                    0.5 * (dists[mid - 1] + dists[mid])
                }
            };
            let pooled = if pooled > 0.0 { pooled } else { 1.0 };
            vec![pooled; per_t_points.len()]
        }
    };

    let groups = stage1_groups(problem, config);
    let g_dim = problem.g_dim;
    let d_space = if plan.cov {
        problem.conditional_base.as_ref().unwrap().dim()
    } else {
        problem.d_x
    };

    // pre-solved weights per group when the inner point set is shared
    let mut shared_weights: Vec<Option<RuleWeights>> = vec![None; groups.len()];
    let mut lambda_x_first = 0.0;
    if let Some(shared) = &shared_points {
        for (gi, group) in groups.iter().enumerate() {
            let s = group.schedule_s.unwrap_or_else(|| schedule_smoothness(group.family, d_space));
            let lambda = reg_schedule(plan.lambda0_x, n, s, d_space);
            if gi == 0 {
                lambda_x_first = lambda;
            }
            let rule = if config.uniform_weights {
                RuleWeights::uniform(n)
            } else {
                let spec =
                    KernelSpec::new(group.family, vec![lengthscales[0]], 1.0, group.composition)
                        .map_err(stage1_err(0))?;
                let measure = if plan.cov {
                    problem.conditional_base.clone().unwrap()
                } else {
                    let theta0: Vec<f64> = thetas_raw.row(0).iter().copied().collect();
                    problem.conditional(&theta0)
                };
                let mu = kme(&spec, &measure, shared).map_err(stage1_err(0))?;
                let (w, info) = kq_weights(&spec, shared, &mu, lambda).map_err(stage1_err(0))?;
                diag.max_jitter_x = diag.max_jitter_x.max(info.jitter);
                diag.max_condition_x = diag.max_condition_x.max(info.condition);
                RuleWeights::new(w)
            };
            shared_weights[gi] = Some(rule);
        }
    }

    struct PerT {
        jrow: Vec<Vec<f64>>, // group -> g_dim values
        weights0: Vec<f64>,
        jitter: f64,
        condition: f64,
        clamped: usize,
        degenerate: usize,
        lambda_x: f64,
        gvals: Option<DMatrix<f64>>,
    }

    let rows: Vec<Result<PerT, EstimateError>> = (0..t_count)
        .into_par_iter()
        .map(|ti| {
            let theta: Vec<f64> = thetas_raw.row(ti).iter().copied().collect();
            let pts_idx = if plan.share_inner { 0 } else { ti };
            let kspace = &per_t_points[pts_idx];
            let mut clamped = 0;
            // raw-space evaluation points
            let x_points = if plan.cov {
                let map = problem.conditional_map(&theta).ok_or_else(|| {
                    EstimateError::MissingKmePath(problem.name.clone())
                })?;
                let t = apply_transform(&map, kspace).map_err(stage1_err(ti))?;
                clamped += t.clamped;
                t.points
            } else {
                kspace.clone()
            };
            let mut gvals = DMatrix::zeros(n, g_dim);
            let mut buf = vec![0.0; g_dim];
            for i in 0..n {
                let x: Vec<f64> = x_points.row(i).iter().copied().collect();
                problem.eval_g(&x, &theta, &mut buf);
                for c in 0..g_dim {
                    gvals[(i, c)] = buf[c];
                }
            }
            let mut jrow = vec![vec![0.0; g_dim]; groups.len()];
            let mut weights0 = Vec::new();
            let mut jitter = 0.0f64;
            let mut condition = 0.0f64;
            let mut degenerate = 0;
            let mut lambda_x = 0.0;
            for (gi, group) in groups.iter().enumerate() {
                let rule = if let Some(rule) = &shared_weights[gi] {
                    rule.clone()
                } else if config.uniform_weights {
                    RuleWeights::uniform(n)
                } else {
                    let s = group
                        .schedule_s
                        .unwrap_or_else(|| schedule_smoothness(group.family, d_space));
                    let lambda = reg_schedule(plan.lambda0_x, n, s, d_space);
                    lambda_x = lambda;
                    let spec = KernelSpec::new(
                        group.family,
                        vec![lengthscales[pts_idx]],
                        1.0,
                        group.composition,
                    )
                    .map_err(stage1_err(ti))?;
                    let measure = if plan.cov {
                        problem.conditional_base.clone().unwrap()
                    } else {
                        problem.conditional(&theta)
                    };
                    let mu = kme(&spec, &measure, kspace).map_err(stage1_err(ti))?;
                    let (w, info) = kq_weights(&spec, kspace, &mu, lambda).map_err(stage1_err(ti))?;
                    jitter = jitter.max(info.jitter);
                    condition = condition.max(info.condition);
                    RuleWeights::new(w)
                };
                let mut first_component_degenerate = false;
                for c in 0..g_dim {
                    let col: Vec<f64> = (0..n).map(|i| gvals[(i, c)]).collect();
                    jrow[gi][c] = if config.uniform_weights {
                        column_mean(&col)
                    } else {
                        let (v, deg) = rule.estimate(&col);
                        if deg {
                            degenerate += 1;
                            if c == 0 {
                                first_component_degenerate = true;
                            }
                        }
                        v
                    };
                }
                if gi == 0 {
                    weights0 = rule.weights_used(first_component_degenerate);
                }
            }
            Ok(PerT {
                jrow,
                weights0,
                jitter,
                condition,
                clamped,
                degenerate,
                lambda_x,
                gvals: config.keep_sample_detail.then_some(gvals),
            })
        })
        .collect();

    let mut jhat: Vec<DMatrix<f64>> = groups
        .iter()
        .map(|_| DMatrix::zeros(t_count, g_dim))
        .collect();
    let mut stage1_weight_sets = Vec::with_capacity(t_count);
    let mut detail_g = config.keep_sample_detail.then(Vec::new);
    for (ti, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (gi, jh) in jhat.iter_mut().enumerate() {
            for c in 0..g_dim {
                jh[(ti, c)] = row.jrow[gi][c];
            }
        }
        stage1_weight_sets.push(row.weights0);
        diag.max_jitter_x = diag.max_jitter_x.max(row.jitter);
        diag.max_condition_x = diag.max_condition_x.max(row.condition);
        diag.clamped_points += row.clamped;
        diag.degenerate_standardizations += row.degenerate;
        if row.lambda_x > 0.0 {
            lambda_x_first = row.lambda_x;
        }
        if let (Some(acc), Some(g)) = (detail_g.as_mut(), row.gvals) {
            acc.push(g);
        }
    }
    diag.lambda_x = lambda_x_first;

    let detail = detail_g.map(|g_values| SampleDetail { thetas: thetas_raw.clone(), g_values });
    Ok(StageOne {
        theta_kspace,
        stage2_measure,
        jhat,
        groups,
        stage1_weight_sets,
        diag,
        detail,
    })
}

/// Nested kernel quadrature estimate of the problem value.
pub fn nkq(problem: &NestedProblem, config: &NkqConfig) -> Result<NkqResult, EstimateError> {
    let plan = resolve_plan(problem, config)?;
    let mut s1 = stage_one(problem, config, &plan)?;
    let t_count = config.t;
    let d_theta = s1.theta_kspace.ncols();
    let gamma_theta = match config.lengthscale_policy {
        LengthscalePolicy::Fixed(g) => g,
        _ => median_or_fallback(&s1.theta_kspace),
    };
    s1.diag.lengthscale_theta = gamma_theta;

    // stage II, grouped by distinct theta-kernel configuration
    let mut weights_cache: Vec<(KernelFamily, Composition, f64, RuleWeights)> = Vec::new();
    let mut targets_out = Vec::with_capacity(problem.targets.len());
    let mut per_target_estimate = Vec::with_capacity(problem.targets.len());
    for (k, target) in problem.targets.iter().enumerate() {
        let group_idx = s1
            .groups
            .iter()
            .position(|g| g.targets.contains(&k))
            .expect("every target belongs to a stage-I group");
        let jhat = &s1.jhat[group_idx];
        let fvals: Vec<f64> = (0..t_count)
            .map(|ti| {
                let row: Vec<f64> = (0..problem.g_dim).map(|c| jhat[(ti, c)]).collect();
                target.f.eval(&row)
            })
            .collect();
        let family = config.kernel_theta.unwrap_or(target.kernel_theta);
        let schedule_s = config
            .smoothness_theta
            .or(target.schedule_s_theta)
            .unwrap_or_else(|| schedule_smoothness(family, d_theta));
        let lambda = reg_schedule(plan.lambda0_theta, t_count, schedule_s, d_theta);
        let (estimate, weights) = if config.uniform_weights {
            (column_mean(&fvals), vec![1.0 / t_count as f64; t_count])
        } else {
            let cached = weights_cache
                .iter()
                .find(|(f, c, l, _)| *f == family && *c == target.composition_theta && *l == lambda);
            let rule = if let Some((_, _, _, rule)) = cached {
                rule.clone()
            } else {
                let spec =
                    KernelSpec::new(family, vec![gamma_theta], 1.0, target.composition_theta)
                        .map_err(stage2_err(target.name))?;
                let mu = kme(&spec, &s1.stage2_measure, &s1.theta_kspace)
                    .map_err(stage2_err(target.name))?;
                let (w, info) = kq_weights(&spec, &s1.theta_kspace, &mu, lambda)
                    .map_err(stage2_err(target.name))?;
                s1.diag.jitter_theta = s1.diag.jitter_theta.max(info.jitter);
                s1.diag.condition_theta = s1.diag.condition_theta.max(info.condition);
                let rule = RuleWeights::new(w);
                weights_cache.push((family, target.composition_theta, lambda, rule.clone()));
                rule
            };
            let (estimate, deg) = rule.estimate(&fvals);
            if deg {
                s1.diag.degenerate_standardizations += 1;
            }
            (estimate, rule.weights_used(deg))
        };
        s1.diag.lambda_theta = lambda;
        per_target_estimate.push(estimate);
        targets_out.push(TargetEstimate {
            name: target.name.to_string(),
            estimate,
            stage1_values: fvals,
            stage2_weights: weights,
        });
    }

    Ok(NkqResult {
        estimate: problem.combine_estimate(&per_target_estimate),
        targets: targets_out,
        stage1_weight_sets: s1.stage1_weight_sets,
        diagnostics: s1.diag,
        detail: s1.detail,
    })
}

/// Conditional kernel quadrature: interpolate the stage-I inner estimates
/// to arbitrary query thetas with kernel ridge regression. Returns one row
/// per query with `g_dim` columns (the estimated inner expectations, before
/// any outer function is applied).
pub fn ckq(
    problem: &NestedProblem,
    config: &NkqConfig,
    query_thetas: &DMatrix<f64>,
) -> Result<DMatrix<f64>, EstimateError> {
    if query_thetas.ncols() != problem.d_theta {
        return Err(EstimateError::Config(format!(
            "query dim {} != d_theta {}",
            query_thetas.ncols(),
            problem.d_theta
        )));
    }
    let plan = resolve_plan(problem, config)?;
    let s1 = stage_one(problem, config, &plan)?;
    let t_count = config.t;
    let d_theta = s1.theta_kspace.ncols();
    let target = &problem.targets[0];
    let family = config.kernel_theta.unwrap_or(target.kernel_theta);
    let gamma_theta = match config.lengthscale_policy {
        LengthscalePolicy::Fixed(g) => g,
        _ => median_or_fallback(&s1.theta_kspace),
    };
    let schedule_s = config
        .smoothness_theta
        .or(target.schedule_s_theta)
        .unwrap_or_else(|| schedule_smoothness(family, d_theta));
    let lambda = reg_schedule(plan.lambda0_theta, t_count, schedule_s, d_theta);
    let spec = KernelSpec::new(family, vec![gamma_theta], 1.0, target.composition_theta)
        .map_err(stage2_err("ckq"))?;

    // queries in the same coordinates the stage-II kernel lives in
    let queries_kspace = if plan.cov {
        let map = &problem.outer_cov.as_ref().unwrap().map;
        apply_inverse(map, query_thetas).map_err(stage2_err("ckq query map"))?
    } else {
        query_thetas.clone()
    };

    let mut k = gram(&spec, &s1.theta_kspace).map_err(stage2_err("ckq"))?;
    let ridge = t_count as f64 * lambda;
    for i in 0..t_count {
        k[(i, i)] += ridge;
    }
    let (chol, _info) =
        crate::quadrature::cholesky_with_jitter(k, 1.0).map_err(stage2_err("ckq"))?;

    let q = queries_kspace.nrows();
    let mut out = DMatrix::zeros(q, problem.g_dim);
    let jhat = &s1.jhat[0];
    for c in 0..problem.g_dim {
        let col: Vec<f64> = (0..t_count).map(|ti| jhat[(ti, c)]).collect();
        let s = standardize(&col);
        let rhs = DVector::from_vec(if s.degenerate { col.clone() } else { s.values.clone() });
        let alpha = chol.solve(&rhs);
        for qi in 0..q {
            let qrow: Vec<f64> = queries_kspace.row(qi).iter().copied().collect();
            let mut pred = 0.0;
            for ti in 0..t_count {
                let trow: Vec<f64> = s1.theta_kspace.row(ti).iter().copied().collect();
                pred += spec.eval_unchecked(&qrow, &trow) * alpha[ti];
            }
            out[(qi, c)] = if s.degenerate { pred } else { s.mean + s.std * pred };
        }
    }
    Ok(out)
}
