//! Expected value of partial perfect information for a two-treatment
//! decision model with 19 jointly Gaussian inputs.
//!
//! The target is I = I1 - max_c I2_c with
//! I1 = E_theta[max_c J_c(theta)], I2_c = E_theta[J_c(theta)], and
//! J_c(theta) = E_{X|theta}[g_c(X, theta)], i.e. |C|+1 = 3 nested
//! expectations sharing one conditional measure.
//!
//! theta is the pair of duration-of-response variables; together with the
//! two response-probability inputs (x6, x14) the four are pairwise
//! correlated at 0.6, all other inputs independent. Conditioning is plain
//! Gaussian conditioning (Schur complement), so P_theta is a 17-dim
//! Gaussian whose mean is affine in theta with a fixed covariance.
//! The quadrature stages run in whitened coordinates: both stages then
//! integrate against standard Gaussians, for which the Gaussian and tensor
//! Matérn-1/2 kernels have closed-form embeddings.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Combine, CovOuter, NestedProblem, OuterFn, TargetSpec};
use crate::embeddings::MeasureSpec;
use crate::kernels::{Composition, KernelFamily};
use crate::sampling::TransformMap;

pub const X_DIM: usize = 17;
pub const THETA_DIM: usize = 2;
const CORRELATION: f64 = 0.6;
/// Indices of the correlated quadruple within the joint (x_1..x_17, th_1, th_2)
/// vector: the two response probabilities and the two durations.
const CORRELATED: [usize; 4] = [5, 13, 17, 18];

/// Means of (x_1..x_17, theta_1, theta_2).
pub const JOINT_MEAN: [f64; 19] = [
    1000.0, 0.1, 5.2, 400.0, 0.3, 0.7, 0.25, -0.1, 0.5, // treatment 1
    1500.0, 0.08, 6.1, 0.3, 0.8, 0.2, -0.1, 0.5, // treatment 2
    3.0, 3.0, // durations of response
];

/// Standard deviations of (x_1..x_17, theta_1, theta_2).
pub const JOINT_STD: [f64; 19] = [
    1.0, 0.02, 1.0, 200.0, 0.1, 0.1, 0.1, 0.02, 0.2, //
    1.0, 0.02, 1.0, 0.05, 0.1, 0.05, 0.02, 0.2, //
    0.5, 1.0,
];

/// The 19x19 joint covariance.
pub fn joint_covariance() -> DMatrix<f64> {
    let mut cov = DMatrix::zeros(19, 19);
    for i in 0..19 {
        cov[(i, i)] = JOINT_STD[i] * JOINT_STD[i];
    }
    for &i in &CORRELATED {
        for &j in &CORRELATED {
            if i != j {
                cov[(i, j)] = CORRELATION * JOINT_STD[i] * JOINT_STD[j];
            }
        }
    }
    cov
}

fn g1(x: &[f64], theta: &[f64]) -> f64 {
    1e4 * (theta[0] * x[4] * x[5] + x[6] * x[7] * x[8]) - (x[0] + x[1] * x[2] * x[3])
}

fn g2(x: &[f64], theta: &[f64]) -> f64 {
    1e4 * (theta[1] * x[12] * x[13] + x[14] * x[15] * x[16]) - (x[9] + x[10] * x[11] * x[3])
}

pub fn evppi() -> NestedProblem {
    let cov = joint_covariance();
    let sxx = cov.view((0, 0), (X_DIM, X_DIM)).into_owned();
    let sxt = cov.view((0, X_DIM), (X_DIM, THETA_DIM)).into_owned();
    let stt = cov.view((X_DIM, X_DIM), (THETA_DIM, THETA_DIM)).into_owned();
    let stt_chol = nalgebra::Cholesky::new(stt.clone())
        .expect("theta covariance must be positive definite");
    // B = S_xt S_tt^{-1}; conditional covariance via the Schur complement.
    let b = stt_chol.solve(&sxt.transpose()).transpose();
    let cond_cov = &sxx - &b * sxt.transpose();
    let cond_chol = nalgebra::Cholesky::new(cond_cov.clone())
        .expect("conditional covariance must be positive definite (Schur complement)");
    let l_cond = cond_chol.l();
    let l_theta = stt_chol.l();

    let mean_x = DVector::from_row_slice(&JOINT_MEAN[..X_DIM]);
    let mean_theta = [JOINT_MEAN[17], JOINT_MEAN[18]];

    let cond_mean = {
        let b = b.clone();
        let mean_x = mean_x.clone();
        move |theta: &[f64]| -> Vec<f64> {
            let dt = DVector::from_vec(vec![theta[0] - mean_theta[0], theta[1] - mean_theta[1]]);
            (&mean_x + &b * dt).iter().copied().collect()
        }
    };

    let g: super::GFn = Arc::new(|x: &[f64], theta: &[f64], out: &mut [f64]| {
        out[0] = g1(x, theta);
        out[1] = g2(x, theta);
    });

    let conditional = {
        let cond_mean = cond_mean.clone();
        let cond_cov = cond_cov.clone();
        move |theta: &[f64]| MeasureSpec::GaussianFull {
            mean: cond_mean(theta),
            cov: cond_cov.clone(),
        }
    };
    let conditional_map = {
        let l_cond = l_cond.clone();
        move |theta: &[f64]| {
            TransformMap::AffineGaussian { mean: cond_mean(theta), chol: l_cond.clone() }
        }
    };

    let gaussian_target = |name: &'static str, f: OuterFn| TargetSpec {
        name,
        f,
        kernel_x: KernelFamily::Gaussian,
        composition_x: Composition::Isotropic,
        kernel_theta: KernelFamily::Gaussian,
        composition_theta: Composition::Isotropic,
        schedule_s_x: None,
        schedule_s_theta: None,
    };

    NestedProblem {
        name: "evppi".to_string(),
        d_x: X_DIM,
        d_theta: THETA_DIM,
        g_dim: 2,
        g,
        outer: MeasureSpec::GaussianFull {
            mean: vec![mean_theta[0], mean_theta[1]],
            cov: stt,
        },
        conditional: Arc::new(conditional),
        outer_cov: Some(CovOuter {
            base: MeasureSpec::GaussianDiag { mean: vec![0.0; THETA_DIM], std: vec![1.0; THETA_DIM] },
            map: TransformMap::AffineGaussian {
                mean: vec![mean_theta[0], mean_theta[1]],
                chol: l_theta,
            },
        }),
        conditional_base: Some(MeasureSpec::GaussianDiag {
            mean: vec![0.0; X_DIM],
            std: vec![1.0; X_DIM],
        }),
        conditional_map: Some(Arc::new(conditional_map)),
        targets: vec![
            TargetSpec {
                name: "best-treatment",
                f: OuterFn::MaxOverComponents,
                kernel_x: KernelFamily::Gaussian,
                composition_x: Composition::Isotropic,
                kernel_theta: KernelFamily::Matern12,
                composition_theta: Composition::TensorProduct,
                schedule_s_x: None,
                schedule_s_theta: None,
            },
            gaussian_target("treatment-1", OuterFn::Component(0)),
            gaussian_target("treatment-2", OuterFn::Component(1)),
        ],
        combine: Combine::FirstMinusMaxRest,
        s_x: 3.5 + X_DIM as f64 / 2.0,
        s_theta: 1.5,
        default_cov: true,
        default_lambda0: (0.01, 0.01),
        delta_exponents: (1.0, 1.0),
        true_value: Some(538.0),
        truth_provenance: Some(super::TruthProvenance::Quoted),
        counter: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::norm_pdf;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn g1_spec_example() {
        // x5 = x6 = 1, theta1 = 0.7, x7..x9 = 0, x1 = 1000, x2 = x3 = 0:
        // 1e4 * 0.7 - 1000 = 6000
        let mut x = [0.0; 17];
        x[4] = 1.0;
        x[5] = 1.0;
        x[0] = 1000.0;
        assert_eq!(g1(&x, &[0.7, 0.0]), 6000.0);
    }

    #[test]
    fn joint_covariance_is_consistent_and_spd() {
        let cov = joint_covariance();
        for i in 0..19 {
            assert_eq!(cov[(i, i)], JOINT_STD[i] * JOINT_STD[i]);
        }
        assert_eq!(cov, cov.transpose());
        assert!(nalgebra::Cholesky::new(cov).is_some());
        // problem construction itself asserts the Schur complement is SPD
        let _ = evppi();
    }

    #[test]
    fn conditional_mean_matches_brute_force_regression() {
        // Oracle: estimate B = S_xt S_tt^{-1} from 1e6 joint samples and
        // compare the implied conditional mean of the correlated inputs with
        // the problem's Gaussian conditioning at a displaced theta.
        let p = evppi();
        let cov = joint_covariance();
        let chol = nalgebra::Cholesky::new(cov).unwrap();
        let l = chol.l();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let n = 1_000_000;
        let mut sum_t = [0.0f64; 2];
        let mut sum_x5 = 0.0;
        let mut cov_tt = [[0.0f64; 2]; 2];
        let mut cov_x5t = [0.0f64; 2];
        let mut samples_t = Vec::with_capacity(n);
        let mut samples_x5 = Vec::with_capacity(n);
        for _ in 0..n {
            let z = DVector::from_fn(19, |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let v = &l * z;
            let t = [JOINT_MEAN[17] + v[17], JOINT_MEAN[18] + v[18]];
            let x5 = JOINT_MEAN[5] + v[5];
            sum_t[0] += t[0];
            sum_t[1] += t[1];
            sum_x5 += x5;
            samples_t.push(t);
            samples_x5.push(x5);
        }
        let m_t = [sum_t[0] / n as f64, sum_t[1] / n as f64];
        let m_x5 = sum_x5 / n as f64;
        for i in 0..n {
            let dt = [samples_t[i][0] - m_t[0], samples_t[i][1] - m_t[1]];
            let dx = samples_x5[i] - m_x5;
            for a in 0..2 {
                for b in 0..2 {
                    cov_tt[a][b] += dt[a] * dt[b];
                }
                cov_x5t[a] += dx * dt[a];
            }
        }
        // solve the 2x2 system for the regression coefficients
        let det = cov_tt[0][0] * cov_tt[1][1] - cov_tt[0][1] * cov_tt[1][0];
        let b_hat = [
            (cov_x5t[0] * cov_tt[1][1] - cov_x5t[1] * cov_tt[0][1]) / det,
            (cov_x5t[1] * cov_tt[0][0] - cov_x5t[0] * cov_tt[1][0]) / det,
        ];
        let theta = [3.5, 3.0];
        let mc_mean = m_x5 + b_hat[0] * (theta[0] - m_t[0]) + b_hat[1] * (theta[1] - m_t[1]);
        match p.conditional(&theta) {
            MeasureSpec::GaussianFull { mean, .. } => {
                assert!(
                    (mean[5] - mc_mean).abs() < 2e-3,
                    "closed form {} vs brute force {mc_mean}",
                    mean[5]
                );
            }
            other => panic!("unexpected conditional kind {other:?}"),
        }
    }

    #[test]
    fn quoted_truth_against_conditional_mean_quadrature() {
        // J_c(theta) has a closed form through the conditional means of the
        // response probabilities, so the exact value reduces to a 2-D
        // Gaussian integral evaluated here by dense trapezoid quadrature.
        let cov = joint_covariance();
        let stt = cov.view((17, 17), (2, 2)).into_owned();
        let l = nalgebra::Cholesky::new(stt.clone()).unwrap().l();
        let b5 = {
            let s = nalgebra::Cholesky::new(stt.clone()).unwrap();
            let rhs = DVector::from_vec(vec![cov[(5, 17)], cov[(5, 18)]]);
            s.solve(&rhs)
        };
        let b13 = {
            let s = nalgebra::Cholesky::new(stt).unwrap();
            let rhs = DVector::from_vec(vec![cov[(13, 17)], cov[(13, 18)]]);
            s.solve(&rhs)
        };
        let nodes = 1601;
        let (lo, hi) = (-8.0f64, 8.0f64);
        let h = (hi - lo) / (nodes - 1) as f64;
        let mut i1 = 0.0;
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        let mut wsum = 0.0;
        for a in 0..nodes {
            let za = lo + a as f64 * h;
            let wa = norm_pdf(za) * if a == 0 || a == nodes - 1 { 0.5 } else { 1.0 };
            for bi in 0..nodes {
                let zb = lo + bi as f64 * h;
                let wb = norm_pdf(zb) * if bi == 0 || bi == nodes - 1 { 0.5 } else { 1.0 };
                let w = wa * wb;
                let dt = [l[(0, 0)] * za, l[(1, 0)] * za + l[(1, 1)] * zb];
                let th = [3.0 + dt[0], 3.0 + dt[1]];
                let ex5 = 0.7 + b5[0] * dt[0] + b5[1] * dt[1];
                let ex13 = 0.8 + b13[0] * dt[0] + b13[1] * dt[1];
                let j1 = 1e4 * (th[0] * 0.3 * ex5 + 0.25 * (-0.1) * 0.5)
                    - (1000.0 + 0.1 * 5.2 * 400.0);
                let j2 = 1e4 * (th[1] * 0.3 * ex13 + 0.2 * (-0.1) * 0.5)
                    - (1500.0 + 0.08 * 6.1 * 400.0);
                i1 += w * j1.max(j2);
                e1 += w * j1;
                e2 += w * j2;
                wsum += w;
            }
        }
        let evppi_exact = (i1 - e1.max(e2)) / wsum;
        assert!(
            (evppi_exact - 536.5).abs() < 1.0,
            "conditional-mean quadrature gives {evppi_exact}"
        );
        // the quoted reference value rounds this to 538
        assert!((evppi().true_value.unwrap() - evppi_exact).abs() < 2.5);
    }
}
