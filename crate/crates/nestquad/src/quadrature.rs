//! Single-level kernel quadrature: regularized Gram solves for the weights
//! w = (K + n lambda I)^{-1} mu, the lambda schedules that keep the solve
//! stable while preserving the convergence rate, and estimate assembly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::kernels::{gram, KernelError, KernelFamily, KernelSpec};

#[derive(Debug, Error)]
pub enum QuadError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("gram matrix singular after jitter escalation to {jitter:.3e} (condition estimate {condition:.3e})")]
    SingularGram { jitter: f64, condition: f64 },
    #[error("weights/values length mismatch: {weights} vs {values}")]
    LengthMismatch { weights: usize, values: usize },
    #[error("kme vector length {kme} does not match point count {points}")]
    KmeLength { kme: usize, points: usize },
}

/// Outcome of a regularized Gram solve.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolveInfo {
    /// Extra diagonal jitter that was needed (0 when the factorization
    /// succeeded directly).
    pub jitter: f64,
    /// Condition estimate of the factored matrix, from the Cholesky
    /// diagonal: (max L_ii / min L_ii)^2.
    pub condition: f64,
}

/// A kernel quadrature rule: points, solved weights and the regularization
/// they were produced with.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub lambda: f64,
    pub kernel: KernelSpec,
    pub info: SolveInfo,
}

impl QuadratureRule {
    pub fn build(
        kernel: &KernelSpec,
        points: &DMatrix<f64>,
        kme_values: &DVector<f64>,
        lambda: f64,
    ) -> Result<Self, QuadError> {
        let (weights, info) = kq_weights(kernel, points, kme_values, lambda)?;
        Ok(QuadratureRule {
            points: points.clone(),
            weights,
            lambda,
            kernel: kernel.clone(),
            info,
        })
    }

    pub fn estimate(&self, fvals: &[f64]) -> Result<f64, QuadError> {
        kq_estimate(self.weights.as_slice(), fvals)
    }
}

/// Cholesky with escalating diagonal jitter: start at 1e-10 * amplitude and
/// multiply by 10 up to 1e-6 * amplitude before giving up.
pub(crate) fn cholesky_with_jitter(
    mut m: DMatrix<f64>,
    amplitude: f64,
) -> Result<(Cholesky<f64, Dyn>, SolveInfo), QuadError> {
    let n = m.nrows();
    let mut jitter = 0.0;
    loop {
        let mut attempt = m.clone();
        if jitter > 0.0 {
            for i in 0..n {
                attempt[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(attempt) {
            let l = chol.l_dirty();
            let mut dmax = f64::NEG_INFINITY;
            let mut dmin = f64::INFINITY;
            for i in 0..n {
                dmax = dmax.max(l[(i, i)]);
                dmin = dmin.min(l[(i, i)]);
            }
            let ratio = dmax / dmin;
            return Ok((chol, SolveInfo { jitter, condition: ratio * ratio }));
        }
        jitter = if jitter == 0.0 { 1e-10 * amplitude } else { jitter * 10.0 };
        if jitter > 1e-6 * amplitude * (1.0 + 1e-12) {
            break;
        }
    }
    // condition estimate from the symmetric eigendecomposition of the
    // matrix we failed to factor
    for i in 0..n {
        m[(i, i)] += 1e-6 * amplitude;
    }
    let eig = nalgebra::SymmetricEigen::new(m);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Err(QuadError::SingularGram {
        jitter: 1e-6 * amplitude,
        condition: (max / min).abs(),
    })
}

/// Quadrature weights solving (K + n lambda I) w = mu by symmetric
/// positive-definite factorization (never an explicit inverse).
pub fn kq_weights(
    kernel: &KernelSpec,
    points: &DMatrix<f64>,
    kme_values: &DVector<f64>,
    lambda: f64,
) -> Result<(DVector<f64>, SolveInfo), QuadError> {
    let n = points.nrows();
    if kme_values.len() != n {
        return Err(QuadError::KmeLength { kme: kme_values.len(), points: n });
    }
    let mut k = gram(kernel, points)?;
    if lambda > 0.0 {
        let ridge = n as f64 * lambda;
        for i in 0..n {
            k[(i, i)] += ridge;
        }
    }
    let (chol, info) = cholesky_with_jitter(k, kernel.amplitude())?;
    Ok((chol.solve(kme_values), info))
}

/// The quadrature estimate: a plain dot product of weights with function
/// values.
pub fn kq_estimate(weights: &[f64], fvals: &[f64]) -> Result<f64, QuadError> {
    if weights.len() != fvals.len() {
        return Err(QuadError::LengthMismatch { weights: weights.len(), values: fvals.len() });
    }
    Ok(weights.iter().zip(fvals).map(|(w, f)| w * f).sum())
}

/// Regularization schedule lambda = lambda0 * n^(-2s/d) * max(ln n, 1)^((2s+2)/d).
///
/// The natural logarithm is guarded below by 1 so the schedule never
/// vanishes for small n.
///
/// ```
/// use nestquad::quadrature::reg_schedule;
///
/// // lambda0 = 0.1, n = 100, s = 1, d = 1: 0.1 * 1e-4 * (ln 100)^4
/// assert!((reg_schedule(0.1, 100, 1.0, 1) - 4.497e-3).abs() < 2e-6);
/// // the guard is active below n = e
/// assert_eq!(reg_schedule(1.0, 2, 1.0, 1), 0.25);
/// ```
pub fn reg_schedule(lambda0: f64, n: usize, s: f64, d: usize) -> f64 {
    let nf = n as f64;
    let log_term = nf.ln().max(1.0);
    lambda0 * nf.powf(-2.0 * s / d as f64) * log_term.powf((2.0 * s + 2.0) / d as f64)
}

/// Level schedule for the outer stage of the multilevel estimator:
/// lambda = lambda0 * T^(-2s/(2s+d)), with no logarithmic factor.
pub fn mlkq_theta_schedule(lambda0: f64, t: usize, s: f64, d: usize) -> f64 {
    lambda0 * (t as f64).powf(-2.0 * s / (2.0 * s + d as f64))
}

/// Smoothness passed to [`reg_schedule`] for a kernel family on a
/// d-dimensional stage: the Sobolev order nu + d/2 for Matérn kernels, and
/// the finite surrogate d/2 + 3.5 for the Gaussian kernel (whose RKHS is
/// smoother than any Sobolev order; a finite surrogate keeps lambda
/// strictly positive).
pub fn schedule_smoothness(family: KernelFamily, d: usize) -> f64 {
    let half_d = d as f64 / 2.0;
    match family {
        KernelFamily::Matern12 => 0.5 + half_d,
        KernelFamily::Matern32 => 1.5 + half_d,
        KernelFamily::Gaussian => half_d + 3.5,
    }
}
