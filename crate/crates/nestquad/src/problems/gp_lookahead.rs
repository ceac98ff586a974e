//! Two-step look-ahead acquisition utility as a nested expectation.
//!
//! A zero-mean GP prior with Matérn-1/2 covariance is conditioned on two
//! seeded observations D. theta is the posterior of the process at a fixed
//! query pair z = (z1, z2); X is the posterior at a fixed second-step pair
//! z' after additionally conditioning on (z, theta). With the batch
//! improvement reward r(v) = max(max_j v_j - r_max, 0) the utility is
//!
//!   I = E_theta[ r(theta) + E_{X|theta}[ r(X) ] ],
//!
//! which is a single nested expectation with g(x, theta) = r(theta) + r(x)
//! and f = identity. The second-step candidate is frozen, so no inner
//! maximization is performed. Ground truth is unknown; the instance is
//! checked by cross-estimator agreement.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use super::{Combine, CovOuter, NestedProblem, OuterFn, TargetSpec};
use crate::embeddings::MeasureSpec;
use crate::kernels::{Composition, KernelFamily};
use crate::quadrature::cholesky_with_jitter;
use crate::sampling::TransformMap;

/// Default instance: prior lengthscale 1, amplitude 1, observations drawn
/// from the prior at two uniform locations in [0,1].
pub fn gp_lookahead(seed: u64) -> NestedProblem {
    gp_lookahead_custom(seed, 1.0, 1.0, None, None)
}

/// Fully parameterized builder. `observations` overrides the seeded draws
/// of the two data values (e.g. `Some(vec![0.0, 0.0])` conditions the GP on
/// its own prior mean); `r_max_override` replaces the best observed reward.
pub fn gp_lookahead_custom(
    seed: u64,
    lengthscale: f64,
    amplitude: f64,
    observations: Option<Vec<f64>>,
    r_max_override: Option<f64>,
) -> NestedProblem {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let data_z: Vec<f64> = (0..2).map(|_| rng.gen::<f64>()).collect();
    let query: Vec<f64> = (0..2).map(|_| rng.gen::<f64>()).collect();
    let query2: Vec<f64> = (0..2).map(|_| rng.gen::<f64>()).collect();

    let k = |a: f64, b: f64| amplitude * (-(a - b).abs() / lengthscale).exp();
    let kmat = |rows: &[f64], cols: &[f64]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| k(rows[i], cols[j]))
    };

    let k_dd = kmat(&data_z, &data_z);
    let (chol_dd, _) = cholesky_with_jitter(k_dd, amplitude).expect("data gram");
    let y = observations.unwrap_or_else(|| {
        let z = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        (chol_dd.l() * z).iter().copied().collect()
    });
    let r_max = r_max_override.unwrap_or_else(|| y.iter().copied().fold(f64::NEG_INFINITY, f64::max));

    // theta | D at the query pair
    let k_qd = kmat(&query, &data_z);
    let alpha = chol_dd.solve(&DVector::from_row_slice(&y));
    let mean_theta: Vec<f64> = (&k_qd * &alpha).iter().copied().collect();
    let cov_theta = kmat(&query, &query) - &k_qd * chol_dd.solve(&k_qd.transpose());
    let (cov_theta, l_theta) = spd_with_jitter(cov_theta, amplitude);

    // X | D' at the second-step pair, D' = D + (query, theta):
    // mean is affine in theta, covariance is theta-independent.
    let all: Vec<f64> = data_z.iter().chain(query.iter()).copied().collect();
    let k_aa = kmat(&all, &all);
    let (chol_aa, _) = cholesky_with_jitter(k_aa, amplitude).expect("augmented gram");
    let k_2a = kmat(&query2, &all);
    let w = chol_aa.solve(&k_2a.transpose()).transpose(); // 2 x 4
    let a_vec: Vec<f64> = (0..2)
        .map(|i| w[(i, 0)] * y[0] + w[(i, 1)] * y[1])
        .collect();
    let b_mat = DMatrix::from_fn(2, 2, |i, j| w[(i, j + 2)]);
    let cov_x = kmat(&query2, &query2) - &w * k_2a.transpose();
    let (cov_x, l_x) = spd_with_jitter(cov_x, amplitude);

    let g: super::GFn = Arc::new(move |x: &[f64], theta: &[f64], out: &mut [f64]| {
        let reward = |v: &[f64]| (v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - r_max).max(0.0);
        out[0] = reward(theta) + reward(x);
    });

    let cond_mean = {
        let a_vec = a_vec.clone();
        let b_mat = b_mat.clone();
        move |theta: &[f64]| -> Vec<f64> {
            (0..2)
                .map(|i| a_vec[i] + b_mat[(i, 0)] * theta[0] + b_mat[(i, 1)] * theta[1])
                .collect()
        }
    };
    let conditional = {
        let cond_mean = cond_mean.clone();
        let cov_x = cov_x.clone();
        move |theta: &[f64]| MeasureSpec::GaussianFull { mean: cond_mean(theta), cov: cov_x.clone() }
    };
    let conditional_map = {
        let l_x = l_x.clone();
        move |theta: &[f64]| {
            TransformMap::Composite(vec![
                TransformMap::NormalInvCdf,
                TransformMap::AffineGaussian { mean: cond_mean(theta), chol: l_x.clone() },
            ])
        }
    };

    NestedProblem {
        name: "gp-lookahead".to_string(),
        d_x: 2,
        d_theta: 2,
        g_dim: 1,
        g,
        outer: MeasureSpec::GaussianFull { mean: mean_theta.clone(), cov: cov_theta },
        conditional: Arc::new(conditional),
        outer_cov: Some(CovOuter {
            base: MeasureSpec::Uniform01 { dim: 2 },
            map: TransformMap::Composite(vec![
                TransformMap::NormalInvCdf,
                TransformMap::AffineGaussian { mean: mean_theta, chol: l_theta },
            ]),
        }),
        conditional_base: Some(MeasureSpec::Uniform01 { dim: 2 }),
        conditional_map: Some(Arc::new(conditional_map)),
        targets: vec![TargetSpec {
            name: "utility",
            f: OuterFn::Identity,
            kernel_x: KernelFamily::Matern12,
            composition_x: Composition::TensorProduct,
            kernel_theta: KernelFamily::Matern12,
            composition_theta: Composition::TensorProduct,
            schedule_s_x: None,
            schedule_s_theta: None,
        }],
        combine: Combine::Single,
        s_x: 1.0,
        s_theta: 1.0,
        default_cov: true,
        default_lambda0: (0.1, 0.1),
        delta_exponents: (1.0, 1.0),
        true_value: None,
        truth_provenance: None,
        counter: None,
    }
}

/// SPD-ify a posterior covariance with the escalating jitter policy and
/// return it with its Cholesky factor.
fn spd_with_jitter(mut cov: DMatrix<f64>, amplitude: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    // symmetrize round-off first
    let sym = 0.5 * (&cov + cov.transpose());
    cov = sym;
    let (chol, info) = cholesky_with_jitter(cov.clone(), amplitude).expect("posterior covariance");
    if info.jitter > 0.0 {
        for i in 0..cov.nrows() {
            cov[(i, i)] += info.jitter;
        }
    }
    (cov, chol.l())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn infinite_best_reward_zeroes_the_problem() {
        let p = gp_lookahead_custom(3, 1.0, 1.0, None, Some(f64::INFINITY));
        let mut out = [0.0];
        p.eval_g(&[0.3, -0.5], &[1.0, 2.0], &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn conditioning_on_prior_mean_gives_centered_posteriors() {
        let p = gp_lookahead_custom(5, 1.0, 1.0, Some(vec![0.0, 0.0]), None);
        match &p.outer {
            MeasureSpec::GaussianFull { mean, .. } => {
                assert!(mean.iter().all(|m| m.abs() < 1e-12), "{mean:?}");
            }
            other => panic!("unexpected outer {other:?}"),
        }
        match p.conditional(&[0.0, 0.0]) {
            MeasureSpec::GaussianFull { mean, .. } => {
                assert!(mean.iter().all(|m| m.abs() < 1e-12), "{mean:?}");
            }
            other => panic!("unexpected conditional {other:?}"),
        }
    }

    #[test]
    fn zero_mean_instance_value_matches_brute_monte_carlo() {
        // With observations == prior mean and r_max = 0, the value is
        // E[max(max theta, 0)] + E E[max(max x, 0)], which a direct joint
        // MC over (theta, x) estimates without any nesting.
        let p = gp_lookahead_custom(5, 1.0, 1.0, Some(vec![0.0, 0.0]), None);
        let (lt, lc, b) = match (&p.outer, p.conditional(&[0.0, 0.0])) {
            (MeasureSpec::GaussianFull { cov: ct, .. }, MeasureSpec::GaussianFull { cov: cx, .. }) => {
                let m1 = p.conditional(&[1.0, 0.0]);
                let m0 = p.conditional(&[0.0, 0.0]);
                let (mean1, mean0) = match (m1, m0) {
                    (
                        MeasureSpec::GaussianFull { mean: a, .. },
                        MeasureSpec::GaussianFull { mean: b, .. },
                    ) => (a, b),
                    _ => unreachable!(),
                };
                let b: Vec<f64> = mean1.iter().zip(&mean0).map(|(a, b)| a - b).collect();
                (
                    nalgebra::Cholesky::new(ct.clone()).unwrap().l(),
                    nalgebra::Cholesky::new(cx.clone()).unwrap().l(),
                    b,
                )
            }
            _ => unreachable!(),
        };
        // column 0 of B sampled above; get column 1 too
        let b1: Vec<f64> = match (p.conditional(&[0.0, 1.0]), p.conditional(&[0.0, 0.0])) {
            (MeasureSpec::GaussianFull { mean: a, .. }, MeasureSpec::GaussianFull { mean: c, .. }) => {
                a.iter().zip(&c).map(|(x, y)| x - y).collect()
            }
            _ => unreachable!(),
        };
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let n = 2_000_000usize;
        let mut acc = 0.0;
        for _ in 0..n {
            let z = [
                rng.sample::<f64, _>(rand_distr::StandardNormal),
                rng.sample::<f64, _>(rand_distr::StandardNormal),
            ];
            let th = [
                lt[(0, 0)] * z[0],
                lt[(1, 0)] * z[0] + lt[(1, 1)] * z[1],
            ];
            let w = [
                rng.sample::<f64, _>(rand_distr::StandardNormal),
                rng.sample::<f64, _>(rand_distr::StandardNormal),
            ];
            let x = [
                b[0] * th[0] + b1[0] * th[1] + lc[(0, 0)] * w[0],
                b[1] * th[0] + b1[1] * th[1] + lc[(1, 0)] * w[0] + lc[(1, 1)] * w[1],
            ];
            acc += th[0].max(th[1]).max(0.0) + x[0].max(x[1]).max(0.0);
        }
        let oracle = acc / n as f64;
        // compare with a large nested MC through the problem interface
        let nmc = crate::baselines::nmc(
            &p,
            200,
            5000,
            crate::sampling::PointSource::Iid,
            42,
        )
        .unwrap();
        assert!(
            (nmc - oracle).abs() < 0.02 * oracle.abs().max(0.05),
            "nmc {nmc} vs oracle {oracle}"
        );
    }
}
