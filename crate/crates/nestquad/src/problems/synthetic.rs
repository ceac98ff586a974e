//! Synthetic polynomial benchmark: Q = P_theta = U[0,1]^d,
//! g(x, theta) = sum_j x_j^{5/2} + sum_j theta_j^{5/2}, f(z) = z^2,
//! with the closed-form value I = 16/49 d^2 + 25/294 d.

use std::sync::Arc;

use super::{Combine, CovOuter, NestedProblem, OuterFn, TargetSpec, TruthProvenance};
use crate::embeddings::MeasureSpec;
use crate::kernels::{Composition, KernelFamily};
use crate::sampling::TransformMap;

/// Exact value of the d-dimensional instance.
pub fn synthetic_truth(d: usize) -> f64 {
    let df = d as f64;
    16.0 / 49.0 * df * df + 25.0 / 294.0 * df
}

pub fn synthetic(d: usize) -> NestedProblem {
    assert!(d >= 1, "synthetic problem needs d >= 1");
    let g: super::GFn = Arc::new(move |x: &[f64], theta: &[f64], out: &mut [f64]| {
        let gx: f64 = x.iter().map(|v| v.abs().powf(2.5)).sum();
        let gt: f64 = theta.iter().map(|v| v.abs().powf(2.5)).sum();
        out[0] = gx + gt;
    });
    let composition = if d == 1 { Composition::Isotropic } else { Composition::TensorProduct };
    let name = if d == 1 { "synthetic-1d".to_string() } else { format!("synthetic-{d}d") };
    NestedProblem {
        name,
        d_x: d,
        d_theta: d,
        g_dim: 1,
        g,
        outer: MeasureSpec::Uniform01 { dim: d },
        conditional: Arc::new(move |_theta| MeasureSpec::Uniform01 { dim: d }),
        outer_cov: Some(CovOuter {
            base: MeasureSpec::Uniform01 { dim: d },
            map: TransformMap::Identity,
        }),
        conditional_base: Some(MeasureSpec::Uniform01 { dim: d }),
        conditional_map: Some(Arc::new(|_theta| TransformMap::Identity)),
        targets: vec![TargetSpec {
            name: "value",
            f: OuterFn::Square,
            kernel_x: KernelFamily::Matern32,
            composition_x: composition,
            kernel_theta: KernelFamily::Matern32,
            composition_theta: composition,
            schedule_s_x: Some(2.0),
            schedule_s_theta: Some(2.0),
        }],
        combine: Combine::Single,
        s_x: 2.0,
        s_theta: 2.0,
        default_cov: false,
        default_lambda0: (0.1, 0.1),
        delta_exponents: (d as f64 / 2.0, d as f64 / 2.0),
        true_value: Some(synthetic_truth(d)),
        truth_provenance: Some(TruthProvenance::ClosedForm),
        counter: None,
    }
}
