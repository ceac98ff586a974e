//! Closed-form kernel mean embeddings mu_pi(y) = E_{X~pi}[k(X, y)] for the
//! measure/kernel pairs the built-in problems need, plus a tensor-trapezoid
//! oracle used to validate every closed form before it is trusted.
//!
//! Supported closed forms:
//!
//! * Matérn-1/2, Matérn-3/2 and Gaussian kernels against `Uniform01`
//!   (tensor-product composition; any composition in d = 1, and Gaussian in
//!   any dimension since its tensor and isotropic forms coincide),
//! * Gaussian kernel against `GaussianDiag` / `GaussianFull`,
//! * tensor Matérn-1/2 against `GaussianDiag`.
//!
//! Anything else reports [`EmbedError::NoClosedForm`]; callers are expected
//! to reroute through the change-of-variable machinery in
//! [`crate::sampling`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::kernels::{Composition, KernelFamily, KernelSpec};
use crate::sampling::TransformMap;
use crate::special::{erf, norm_cdf};

/// A sampleable probability measure, optionally with a closed-form KME
/// (see module docs) and optionally reachable as a pushforward of a simpler
/// base measure.
#[derive(Debug, Clone)]
pub enum MeasureSpec {
    /// Uniform on the unit cube [0,1]^dim.
    Uniform01 { dim: usize },
    /// Independent Gaussian coordinates.
    GaussianDiag { mean: Vec<f64>, std: Vec<f64> },
    /// Full-covariance Gaussian; `cov` must be symmetric positive definite.
    GaussianFull { mean: Vec<f64>, cov: DMatrix<f64> },
    /// Independent lognormal coordinates: exp(N(log_mean, log_std^2)).
    Lognormal { log_mean: Vec<f64>, log_std: Vec<f64> },
    /// Image of `base` under `map`; sampleable but with no direct KME.
    Pushforward { base: Box<MeasureSpec>, map: TransformMap },
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no closed-form KME for {kernel:?}/{measure}; use the change-of-variable path against a base measure instead")]
    NoClosedForm { kernel: KernelFamily, measure: String },
    #[error("kme oracle supports dim <= 2, got {0}")]
    OracleDimTooLarge(usize),
    #[error("kme oracle needs at least 1000 nodes, got {0}")]
    OracleTooFewNodes(usize),
    #[error("measure has no pointwise density (pushforward or degenerate)")]
    NoDensity,
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error(transparent)]
    Kernel(#[from] crate::kernels::KernelError),
}

impl MeasureSpec {
    pub fn dim(&self) -> usize {
        match self {
            MeasureSpec::Uniform01 { dim } => *dim,
            MeasureSpec::GaussianDiag { mean, .. } => mean.len(),
            MeasureSpec::GaussianFull { mean, .. } => mean.len(),
            MeasureSpec::Lognormal { log_mean, .. } => log_mean.len(),
            MeasureSpec::Pushforward { base, map } => map.output_dim(base.dim()),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            MeasureSpec::Uniform01 { .. } => "Uniform01",
            MeasureSpec::GaussianDiag { .. } => "GaussianDiag",
            MeasureSpec::GaussianFull { .. } => "GaussianFull",
            MeasureSpec::Lognormal { .. } => "Lognormal",
            MeasureSpec::Pushforward { .. } => "Pushforward",
        }
    }

    /// Structural invariants: positive scales, SPD covariance, sampleable base.
    pub fn validate(&self) -> Result<(), EmbedError> {
        match self {
            MeasureSpec::Uniform01 { dim } => {
                if *dim == 0 {
                    return Err(EmbedError::InvalidMeasure("dim must be >= 1".into()));
                }
            }
            MeasureSpec::GaussianDiag { mean, std } => {
                if mean.len() != std.len() || mean.is_empty() {
                    return Err(EmbedError::InvalidMeasure("mean/std length mismatch".into()));
                }
                if std.iter().any(|s| *s < 0.0 || !s.is_finite()) {
                    return Err(EmbedError::InvalidMeasure("negative or non-finite std".into()));
                }
            }
            MeasureSpec::GaussianFull { mean, cov } => {
                if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
                    return Err(EmbedError::InvalidMeasure("covariance shape mismatch".into()));
                }
                let sym_err = (cov - cov.transpose()).abs().max();
                if sym_err > 1e-10 * cov.abs().max().max(1.0) {
                    return Err(EmbedError::InvalidMeasure("covariance not symmetric".into()));
                }
                if nalgebra::Cholesky::new(cov.clone()).is_none() {
                    return Err(EmbedError::InvalidMeasure(
                        "covariance not positive definite (Cholesky failed)".into(),
                    ));
                }
            }
            MeasureSpec::Lognormal { log_mean, log_std } => {
                if log_mean.len() != log_std.len() || log_mean.is_empty() {
                    return Err(EmbedError::InvalidMeasure("log_mean/log_std length mismatch".into()));
                }
                if log_std.iter().any(|s| s.is_nan() || *s <= 0.0) {
                    return Err(EmbedError::InvalidMeasure("log_std must be positive".into()));
                }
            }
            MeasureSpec::Pushforward { base, .. } => base.validate()?,
        }
        Ok(())
    }

    /// Density p(x), for the oracle. Truncation is the caller's concern.
    pub fn density(&self, x: &[f64]) -> Result<f64, EmbedError> {
        match self {
            MeasureSpec::Uniform01 { dim } => {
                let inside = x.len() == *dim && x.iter().all(|v| (0.0..=1.0).contains(v));
                Ok(if inside { 1.0 } else { 0.0 })
            }
            MeasureSpec::GaussianDiag { mean, std } => {
                let mut p = 1.0;
                for j in 0..mean.len() {
                    if std[j] <= 0.0 {
                        return Err(EmbedError::NoDensity);
                    }
                    let z = (x[j] - mean[j]) / std[j];
                    p *= (-0.5 * z * z).exp() / (std[j] * (2.0 * std::f64::consts::PI).sqrt());
                }
                Ok(p)
            }
            MeasureSpec::GaussianFull { mean, cov } => {
                let d = mean.len();
                let chol = nalgebra::Cholesky::new(cov.clone())
                    .ok_or_else(|| EmbedError::InvalidMeasure("covariance not SPD".into()))?;
                let diff = DVector::from_fn(d, |i, _| x[i] - mean[i]);
                let sol = chol.solve(&diff);
                let quad = diff.dot(&sol);
                let det: f64 = (0..d).map(|i| chol.l()[(i, i)]).product::<f64>().powi(2);
                Ok((-0.5 * quad).exp()
                    / ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt())
            }
            MeasureSpec::Lognormal { log_mean, log_std } => {
                let mut p = 1.0;
                for j in 0..log_mean.len() {
                    if x[j] <= 0.0 {
                        return Ok(0.0);
                    }
                    let z = (x[j].ln() - log_mean[j]) / log_std[j];
                    p *= (-0.5 * z * z).exp()
                        / (x[j] * log_std[j] * (2.0 * std::f64::consts::PI).sqrt());
                }
                Ok(p)
            }
            MeasureSpec::Pushforward { .. } => Err(EmbedError::NoDensity),
        }
    }

    /// Integration box for the oracle (Gaussians truncated at +-10 sigma).
    fn oracle_box(&self) -> Result<Vec<(f64, f64)>, EmbedError> {
        match self {
            MeasureSpec::Uniform01 { dim } => Ok(vec![(0.0, 1.0); *dim]),
            MeasureSpec::GaussianDiag { mean, std } => Ok(mean
                .iter()
                .zip(std)
                .map(|(m, s)| (m - 10.0 * s, m + 10.0 * s))
                .collect()),
            MeasureSpec::GaussianFull { mean, cov } => Ok(mean
                .iter()
                .enumerate()
                .map(|(j, m)| {
                    let s = cov[(j, j)].sqrt();
                    (m - 10.0 * s, m + 10.0 * s)
                })
                .collect()),
            MeasureSpec::Lognormal { log_mean, log_std } => Ok(log_mean
                .iter()
                .zip(log_std)
                .map(|(m, s)| ((m - 12.0 * s).exp(), (m + 12.0 * s).exp()))
                .collect()),
            MeasureSpec::Pushforward { .. } => Err(EmbedError::NoDensity),
        }
    }
}

/// Closed-form KME of `measure` under `kernel`, evaluated at each row of
/// `points`. Each output entry is E_{X~measure}[k(X, point_i)].
pub fn kme(
    kernel: &KernelSpec,
    measure: &MeasureSpec,
    points: &DMatrix<f64>,
) -> Result<DVector<f64>, EmbedError> {
    let d = measure.dim();
    let n = points.nrows();
    if points.ncols() != d {
        return Err(EmbedError::InvalidMeasure(format!(
            "points have dim {}, measure has dim {}",
            points.ncols(),
            d
        )));
    }
    let no_closed_form = || EmbedError::NoClosedForm {
        kernel: kernel.family(),
        measure: measure.name().to_string(),
    };
    // Matérn closed forms factorize per dimension, so d > 1 requires the
    // tensor composition. The Gaussian kernel factorizes either way.
    let product_ok = |k: &KernelSpec| {
        d == 1 || k.composition() == Composition::TensorProduct || k.family() == KernelFamily::Gaussian
    };

    let mut out = DVector::zeros(n);
    match measure {
        MeasureSpec::Uniform01 { .. } => {
            if !product_ok(kernel) {
                return Err(no_closed_form());
            }
            for i in 0..n {
                let mut v = kernel.amplitude();
                for j in 0..d {
                    v *= kme1_uniform01(kernel.family(), kernel.lengthscale(j), points[(i, j)]);
                }
                out[i] = v;
            }
        }
        MeasureSpec::GaussianDiag { mean, std } => match kernel.family() {
            KernelFamily::Gaussian => {
                for i in 0..n {
                    let mut v = kernel.amplitude();
                    for j in 0..d {
                        v *= kme1_gauss_gauss(kernel.lengthscale(j), mean[j], std[j], points[(i, j)]);
                    }
                    out[i] = v;
                }
            }
            KernelFamily::Matern12 => {
                if !product_ok(kernel) {
                    return Err(no_closed_form());
                }
                for i in 0..n {
                    let mut v = kernel.amplitude();
                    for j in 0..d {
                        v *= kme1_matern12_gauss(kernel.lengthscale(j), mean[j], std[j], points[(i, j)]);
                    }
                    out[i] = v;
                }
            }
            KernelFamily::Matern32 => return Err(no_closed_form()),
        },
        MeasureSpec::GaussianFull { mean, cov } => {
            if kernel.family() != KernelFamily::Gaussian {
                return Err(no_closed_form());
            }
            // mu(y) = A * sqrt(det(L)/det(L+S)) * exp(-1/2 (y-m)^T (L+S)^{-1} (y-m)),
            // L = diag(gamma_j^2).
            let mut shifted = cov.clone();
            let mut det_lam = 1.0;
            for j in 0..d {
                let g2 = kernel.lengthscale(j) * kernel.lengthscale(j);
                shifted[(j, j)] += g2;
                det_lam *= g2;
            }
            let chol = nalgebra::Cholesky::new(shifted)
                .ok_or_else(|| EmbedError::InvalidMeasure("covariance + lengthscale not SPD".into()))?;
            let det_shifted: f64 = (0..d).map(|i| chol.l()[(i, i)]).product::<f64>().powi(2);
            let scale = kernel.amplitude() * (det_lam / det_shifted).sqrt();
            for i in 0..n {
                let diff = DVector::from_fn(d, |j, _| points[(i, j)] - mean[j]);
                let quad = diff.dot(&chol.solve(&diff));
                out[i] = scale * (-0.5 * quad).exp();
            }
        }
        MeasureSpec::Lognormal { .. } | MeasureSpec::Pushforward { .. } => {
            return Err(no_closed_form())
        }
    }
    Ok(out)
}

/// 1-D kernel mean over U[0,1] for a unit-amplitude profile.
fn kme1_uniform01(family: KernelFamily, gamma: f64, y: f64) -> f64 {
    match family {
        KernelFamily::Matern12 => gamma * (2.0 - (-y / gamma).exp() - (-(1.0 - y) / gamma).exp()),
        KernelFamily::Matern32 => {
            let a = 3f64.sqrt() / gamma;
            (4.0 - (2.0 + a * y) * (-a * y).exp()
                - (2.0 + a * (1.0 - y)) * (-a * (1.0 - y)).exp())
                / a
        }
        KernelFamily::Gaussian => {
            let s = std::f64::consts::SQRT_2 * gamma;
            gamma
                * (std::f64::consts::PI / 2.0).sqrt()
                * (erf((1.0 - y) / s) + erf(y / s))
        }
    }
}

/// 1-D Gaussian-kernel mean over N(m, sigma^2).
fn kme1_gauss_gauss(gamma: f64, m: f64, sigma: f64, y: f64) -> f64 {
    let v = gamma * gamma + sigma * sigma;
    (gamma * gamma / v).sqrt() * (-(y - m) * (y - m) / (2.0 * v)).exp()
}

/// 1-D Matérn-1/2 (Laplace) kernel mean over N(m, sigma^2):
/// E exp(-|X-y|/gamma) = e^{tau^2/2} [e^{-z tau} Phi(z - tau) + e^{z tau} Phi(-z - tau)]
/// with z = (y-m)/sigma, tau = sigma/gamma.
fn kme1_matern12_gauss(gamma: f64, m: f64, sigma: f64, y: f64) -> f64 {
    if sigma == 0.0 {
        return (-(y - m).abs() / gamma).exp();
    }
    let z = (y - m) / sigma;
    let tau = sigma / gamma;
    let half_tau2 = 0.5 * tau * tau;
    let term = |sign: f64| -> f64 {
        let phi = norm_cdf(sign * z - tau);
        if phi == 0.0 {
            return 0.0;
        }
        let expo = half_tau2 - sign * z * tau;
        if expo > 700.0 {
            // exp overflows only when the Phi factor underflows harder;
            // combine in log space.
            (expo + phi.ln()).exp()
        } else {
            expo.exp() * phi
        }
    };
    term(1.0) + term(-1.0)
}

/// Deterministic tensor-trapezoid approximation of E_{X~measure}[k(X, point)]
/// over the measure's truncation box. `nodes` is the total node budget,
/// split evenly across dimensions; only dim <= 2 is supported (the oracle
/// exists for test-scale validation of the closed forms, not production use).
pub fn kme_oracle(
    kernel: &KernelSpec,
    measure: &MeasureSpec,
    point: &[f64],
    nodes: usize,
) -> Result<f64, EmbedError> {
    let d = measure.dim();
    if d > 2 {
        return Err(EmbedError::OracleDimTooLarge(d));
    }
    if nodes < 1000 {
        return Err(EmbedError::OracleTooFewNodes(nodes));
    }
    let bounds = measure.oracle_box()?;
    let per_dim = (nodes as f64).powf(1.0 / d as f64).round() as usize;
    let integrand = |x: &[f64]| -> Result<f64, EmbedError> {
        Ok(kernel.eval(x, point)? * measure.density(x)?)
    };
    match d {
        1 => {
            let (a, b) = bounds[0];
            trapezoid_1d(a, b, per_dim, |x| integrand(&[x]))
        }
        2 => {
            // iterated trapezoid: outer over x0, inner over x1
            let (a0, b0) = bounds[0];
            let (a1, b1) = bounds[1];
            trapezoid_1d(a0, b0, per_dim, |x0| {
                trapezoid_1d(a1, b1, per_dim, |x1| integrand(&[x0, x1]))
            })
        }
        _ => unreachable!(),
    }
}

fn trapezoid_1d<F>(a: f64, b: f64, nodes: usize, mut f: F) -> Result<f64, EmbedError>
where
    F: FnMut(f64) -> Result<f64, EmbedError>,
{
    let h = (b - a) / (nodes - 1) as f64;
    let mut acc = 0.5 * (f(a)? + f(b)?);
    for i in 1..nodes - 1 {
        acc += f(a + i as f64 * h)?;
    }
    Ok(acc * h)
}
