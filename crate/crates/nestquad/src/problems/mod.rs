//! Built-in nested-expectation problems with known structure: the synthetic
//! polynomial family, the butterfly-option shock-loss problem, a
//! value-of-information problem from health economics, and a two-step
//! look-ahead acquisition instance on a Gaussian-process posterior.
//!
//! A [`NestedProblem`] describes the quantity
//! `combine_k( E_theta[ f_k( E_{X|theta}[ g(X, theta) ] ) ] )` where `g`
//! returns a small vector of components and each target applies its own
//! outer function `f_k`. Ordinary problems have a single target and the
//! trivial combiner; the value-of-information problem combines three.

mod evppi;
mod finance;
mod gp_lookahead;
mod synthetic;

pub use evppi::evppi;
pub use finance::{finance, finance_with, FinanceParams};
pub use gp_lookahead::{gp_lookahead, gp_lookahead_custom};
pub use synthetic::synthetic;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::embeddings::MeasureSpec;
use crate::kernels::{Composition, KernelFamily};
use crate::sampling::TransformMap;

/// Outer function applied to the vector of inner conditional expectations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OuterFn {
    /// First component unchanged.
    Identity,
    /// Square of the first component.
    Square,
    /// max(first component, 0).
    MaxZero,
    /// Maximum over all components.
    MaxOverComponents,
    /// A single component unchanged.
    Component(usize),
}

impl OuterFn {
    pub fn eval(&self, j: &[f64]) -> f64 {
        match self {
            OuterFn::Identity => j[0],
            OuterFn::Square => j[0] * j[0],
            OuterFn::MaxZero => j[0].max(0.0),
            OuterFn::MaxOverComponents => j.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            OuterFn::Component(c) => j[*c],
        }
    }
}

/// How per-target estimates reduce to the problem's scalar value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    /// Single target; its estimate is the value.
    Single,
    /// targets[0] - max(targets[1..]); the shape of a value-of-information
    /// quantity.
    FirstMinusMaxRest,
}

impl Combine {
    pub fn eval(&self, targets: &[f64]) -> f64 {
        match self {
            Combine::Single => targets[0],
            Combine::FirstMinusMaxRest => {
                let rest = targets[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                targets[0] - rest
            }
        }
    }
}

/// One nested expectation inside a (possibly composite) problem: the outer
/// function plus the kernel families used by the quadrature stages.
#[derive(Debug, Clone)]
pub struct TargetSpec {
    pub name: &'static str,
    pub f: OuterFn,
    pub kernel_x: KernelFamily,
    pub composition_x: Composition,
    pub kernel_theta: KernelFamily,
    pub composition_theta: Composition,
    /// Smoothness passed to the lambda schedule for each stage; `None`
    /// derives it from the kernel family and stage dimension.
    pub schedule_s_x: Option<f64>,
    pub schedule_s_theta: Option<f64>,
}

/// Where a quoted true value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthProvenance {
    /// Exact closed form.
    ClosedForm,
    /// Quoted from the source experiment description; see the problem's
    /// module tests for independent numerical checks.
    Quoted,
}

pub type GFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type ConditionalFn = Arc<dyn Fn(&[f64]) -> MeasureSpec + Send + Sync>;
pub type ConditionalMapFn = Arc<dyn Fn(&[f64]) -> TransformMap + Send + Sync>;

/// Change-of-variable route for the outer measure: sample `base`, push
/// through `map` to get theta; quadrature runs in base coordinates.
#[derive(Debug, Clone)]
pub struct CovOuter {
    pub base: MeasureSpec,
    pub map: TransformMap,
}

/// A full nested-expectation instance.
#[derive(Clone)]
pub struct NestedProblem {
    pub name: String,
    pub d_x: usize,
    pub d_theta: usize,
    /// Number of components returned by `g`.
    pub g_dim: usize,
    pub g: GFn,
    /// Outer measure Q in raw coordinates.
    pub outer: MeasureSpec,
    /// theta -> P_theta in raw coordinates.
    pub conditional: ConditionalFn,
    /// Change-of-variable route for the outer stage, when available.
    pub outer_cov: Option<CovOuter>,
    /// Fixed base measure for the inner change-of-variable route.
    pub conditional_base: Option<MeasureSpec>,
    /// theta -> transform (base -> P_theta), when available.
    pub conditional_map: Option<ConditionalMapFn>,
    pub targets: Vec<TargetSpec>,
    pub combine: Combine,
    /// Declared integrand smoothness per stage (metadata; schedules use the
    /// per-target values).
    pub s_x: f64,
    pub s_theta: f64,
    /// Whether nested quadrature should default to the change-of-variable
    /// route.
    pub default_cov: bool,
    /// Default (lambda0_X, lambda0_Theta) from the documented grid.
    pub default_lambda0: (f64, f64),
    /// Budget mapping exponents: N = ceil(delta^-ex), T = ceil(delta^-et).
    pub delta_exponents: (f64, f64),
    pub true_value: Option<f64>,
    pub truth_provenance: Option<TruthProvenance>,
    /// Shared g-evaluation counter for cost audits.
    counter: Option<Arc<AtomicU64>>,
}

impl std::fmt::Debug for NestedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NestedProblem")
            .field("name", &self.name)
            .field("d_x", &self.d_x)
            .field("d_theta", &self.d_theta)
            .field("g_dim", &self.g_dim)
            .field("targets", &self.targets.len())
            .field("true_value", &self.true_value)
            .finish()
    }
}

impl NestedProblem {
    /// Evaluate g, filling `out` with its `g_dim` components and bumping the
    /// attached evaluation counter (one count per (x, theta) pair).
    pub fn eval_g(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        if let Some(c) = &self.counter {
            c.fetch_add(1, Ordering::Relaxed);
        }
        (self.g)(x, theta, out);
    }

    pub fn conditional(&self, theta: &[f64]) -> MeasureSpec {
        (self.conditional)(theta)
    }

    pub fn conditional_map(&self, theta: &[f64]) -> Option<TransformMap> {
        self.conditional_map.as_ref().map(|f| f(theta))
    }

    /// Attach an evaluation counter; estimator cost audits read it back.
    pub fn with_counter(mut self, counter: Arc<AtomicU64>) -> Self {
        self.counter = Some(counter);
        self
    }

    pub fn combine_estimate(&self, per_target: &[f64]) -> f64 {
        self.combine.eval(per_target)
    }

    /// True inner conditional expectation J(theta) when available in closed
    /// form (first component only); used by interpolation tests.
    pub fn true_inner(&self, theta: &[f64]) -> Option<f64> {
        match self.name.as_str() {
            "synthetic-1d" => Some(2.0 / 7.0 + theta[0].powf(2.5)),
            _ => None,
        }
    }

    /// Bare single-target problem; helper for tests and custom instances.
    #[allow(clippy::too_many_arguments)]
    pub fn single_target(
        name: &str,
        d_x: usize,
        d_theta: usize,
        g: GFn,
        f: OuterFn,
        outer: MeasureSpec,
        conditional: ConditionalFn,
        kernel_x: KernelFamily,
        kernel_theta: KernelFamily,
    ) -> Self {
        NestedProblem {
            name: name.to_string(),
            d_x,
            d_theta,
            g_dim: 1,
            g,
            outer,
            conditional,
            outer_cov: None,
            conditional_base: None,
            conditional_map: None,
            targets: vec![TargetSpec {
                name: "value",
                f,
                kernel_x,
                composition_x: Composition::Isotropic,
                kernel_theta,
                composition_theta: Composition::Isotropic,
                schedule_s_x: None,
                schedule_s_theta: None,
            }],
            combine: Combine::Single,
            s_x: 1.0,
            s_theta: 1.0,
            default_cov: false,
            default_lambda0: (0.1, 0.1),
            delta_exponents: (1.0, 1.0),
            true_value: None,
            truth_provenance: None,
            counter: None,
        }
    }
}

/// Problems selectable by id from the CLI and config files. Config files
/// may override instance parameters (synthetic dimension, finance market
/// parameters, the GP instance's seed/prior/best-reward).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ProblemId {
    Synthetic {
        #[serde(default = "default_dim")]
        d: usize,
    },
    Finance {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<FinanceParams>,
    },
    Evppi,
    GpLookahead {
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lengthscale: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amplitude: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r_max: Option<f64>,
    },
}

fn default_dim() -> usize {
    1
}

impl ProblemId {
    pub fn build(&self) -> NestedProblem {
        match self {
            ProblemId::Synthetic { d } => synthetic(*d),
            ProblemId::Finance { params } => match params {
                Some(p) => finance::finance_with(*p),
                None => finance(),
            },
            ProblemId::Evppi => evppi(),
            ProblemId::GpLookahead { seed, lengthscale, amplitude, r_max } => gp_lookahead_custom(
                *seed,
                lengthscale.unwrap_or(1.0),
                amplitude.unwrap_or(1.0),
                None,
                *r_max,
            ),
        }
    }

    pub fn parse_cli(s: &str, d: usize, gp_seed: u64) -> Option<ProblemId> {
        match s {
            "synthetic" => Some(ProblemId::Synthetic { d }),
            "finance" => Some(ProblemId::Finance { params: None }),
            "evppi" => Some(ProblemId::Evppi),
            "gp-lookahead" => Some(ProblemId::GpLookahead {
                seed: gp_seed,
                lengthscale: None,
                amplitude: None,
                r_max: None,
            }),
            _ => None,
        }
    }
}
