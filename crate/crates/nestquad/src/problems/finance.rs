//! Butterfly-option shock loss. An asset follows Black-Scholes dynamics;
//! a multiplicative price shock (1+s) hits at time eta, and the expected
//! option-payoff shortfall at maturity zeta, floored at zero, is
//!
//!   I = E_theta[ max( E_{X|theta}[ psi(X) - psi((1+s) X) ], 0 ) ]
//!
//! with theta the pre-shock price and psi a butterfly-call payoff. Both
//! measures are lognormal, so quadrature runs on [0,1] through the inverse
//! CDF while samples stay in price space.

use std::sync::Arc;

use super::{Combine, CovOuter, NestedProblem, OuterFn, TargetSpec, TruthProvenance};
use crate::embeddings::MeasureSpec;
use crate::kernels::{Composition, KernelFamily};
use crate::sampling::TransformMap;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FinanceParams {
    pub s0: f64,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub maturity: f64,
    pub shock_time: f64,
    pub shock: f64,
}

impl Default for FinanceParams {
    fn default() -> Self {
        FinanceParams {
            s0: 100.0,
            sigma: 0.3,
            k1: 50.0,
            k2: 150.0,
            maturity: 2.0,
            shock_time: 1.0,
            shock: 0.2,
        }
    }
}

/// Butterfly call payoff.
pub fn butterfly_payoff(x: f64, k1: f64, k2: f64) -> f64 {
    (x - k1).max(0.0) + (x - k2).max(0.0) - 2.0 * (x - 0.5 * (k1 + k2)).max(0.0)
}

pub fn finance() -> NestedProblem {
    finance_with(FinanceParams::default())
}

pub fn finance_with(p: FinanceParams) -> NestedProblem {
    let FinanceParams { s0, sigma, k1, k2, maturity, shock_time, shock } = p;
    let outer_var = sigma * sigma * shock_time;
    let inner_var = sigma * sigma * (maturity - shock_time);
    let outer_log_mean = s0.ln() - 0.5 * outer_var;
    let inner_log_std = inner_var.sqrt();

    let g: super::GFn = Arc::new(move |x: &[f64], _theta: &[f64], out: &mut [f64]| {
        out[0] = butterfly_payoff(x[0], k1, k2) - butterfly_payoff((1.0 + shock) * x[0], k1, k2);
    });
    let conditional = move |theta: &[f64]| MeasureSpec::Lognormal {
        log_mean: vec![theta[0].ln() - 0.5 * inner_var],
        log_std: vec![inner_log_std],
    };
    let conditional_map = move |theta: &[f64]| TransformMap::LognormalInvCdf {
        log_mean: vec![theta[0].ln() - 0.5 * inner_var],
        log_std: vec![inner_log_std],
    };

    NestedProblem {
        name: "finance".to_string(),
        d_x: 1,
        d_theta: 1,
        g_dim: 1,
        g,
        outer: MeasureSpec::Lognormal {
            log_mean: vec![outer_log_mean],
            log_std: vec![outer_var.sqrt()],
        },
        conditional: Arc::new(conditional),
        outer_cov: Some(CovOuter {
            base: MeasureSpec::Uniform01 { dim: 1 },
            map: TransformMap::LognormalInvCdf {
                log_mean: vec![outer_log_mean],
                log_std: vec![outer_var.sqrt()],
            },
        }),
        conditional_base: Some(MeasureSpec::Uniform01 { dim: 1 }),
        conditional_map: Some(Arc::new(conditional_map)),
        targets: vec![TargetSpec {
            name: "expected-loss",
            f: OuterFn::MaxZero,
            kernel_x: KernelFamily::Matern12,
            composition_x: Composition::Isotropic,
            kernel_theta: KernelFamily::Matern12,
            composition_theta: Composition::Isotropic,
            schedule_s_x: Some(1.0),
            schedule_s_theta: Some(1.0),
        }],
        combine: Combine::Single,
        s_x: 1.0,
        s_theta: 1.0,
        default_cov: true,
        default_lambda0: (0.1, 0.1),
        delta_exponents: (1.0, 1.0),
        true_value: Some(3.077),
        truth_provenance: Some(TruthProvenance::Quoted),
        counter: None,
    }
}
