//! Seeded sampling: pseudo-random draws from [`MeasureSpec`]s, scrambled
//! Sobol point sets, inverse-CDF transforms and the change-of-variable maps
//! that let kernel quadrature integrate against a simple base measure.
//!
//! Reproducibility contract: every operation is a pure function of its
//! arguments, and concurrent tasks derive disjoint streams with
//! [`split_seed`] (`seed XOR mix64(stream)`, where `mix64` is the
//! SplitMix64 finalizer; `mix64(0) = 0`, so stream 0 is the base seed).

mod sobol;

pub use sobol::{sobol, MAX_DIM};

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::embeddings::MeasureSpec;
use crate::special::{norm_cdf, norm_pdf};

/// Boundary clamp for inverse-CDF transforms: scrambled sequences can emit
/// values arbitrarily close to 0 or 1.
pub const INV_CDF_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("requested an empty sample")]
    EmptySample,
    #[error("sobol dimension {dim} exceeds the direction-number table bound {max}")]
    SobolDimension { dim: usize, max: usize },
    #[error("sobol sequence length {0} exceeds 2^31")]
    SobolLength(usize),
    #[error("norm_inv_cdf domain error: u = {0} not in (0, 1)")]
    InvCdfDomain(f64),
    #[error("transform expects dim {expected}, got {got}")]
    TransformDim { expected: usize, got: usize },
    #[error("affine factor must be lower-triangular with positive diagonal")]
    BadAffineFactor,
    #[error("cannot sample measure: {0}")]
    Unsupported(String),
    #[error("QMC base points unavailable for measure kind {0}")]
    QmcBase(String),
    #[error(transparent)]
    Measure(#[from] crate::embeddings::EmbedError),
}

/// How raw points are produced: pseudo-random or scrambled Sobol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PointSource {
    Iid,
    Qmc,
}

/// A generated batch of points together with its provenance, so a run can
/// be reproduced bit-for-bit from (n, d, base, seed, scrambled).
#[derive(Debug, Clone)]
pub struct PointSet {
    pub points: DMatrix<f64>,
    pub base: PointSource,
    pub seed: u64,
    pub scrambled: bool,
}

/// SplitMix64 finalizer; maps 0 to 0.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    z
}

/// Disjoint per-task stream seed. Stream 0 reproduces the base seed, so a
/// single-stream computation and the stream-0 branch of a multi-stream one
/// coincide exactly.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    seed ^ mix64(stream)
}

/// Draw `n` i.i.d. points from `measure`, deterministically in `seed`.
pub fn sample_iid(measure: &MeasureSpec, n: usize, seed: u64) -> Result<DMatrix<f64>, SampleError> {
    if n == 0 {
        return Err(SampleError::EmptySample);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d = measure.dim();
    let mut out = DMatrix::zeros(n, d);
    match measure {
        MeasureSpec::Uniform01 { .. } => {
            for i in 0..n {
                for j in 0..d {
                    out[(i, j)] = rng.gen::<f64>();
                }
            }
        }
        MeasureSpec::GaussianDiag { mean, std } => {
            for i in 0..n {
                for j in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    out[(i, j)] = mean[j] + std[j] * z;
                }
            }
        }
        MeasureSpec::GaussianFull { mean, cov } => {
            let chol = nalgebra::Cholesky::new(cov.clone()).ok_or_else(|| {
                SampleError::Unsupported("GaussianFull covariance not SPD".into())
            })?;
            let l = chol.l();
            for i in 0..n {
                let z = nalgebra::DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = &l * z;
                for j in 0..d {
                    out[(i, j)] = mean[j] + x[j];
                }
            }
        }
        MeasureSpec::Lognormal { log_mean, log_std } => {
            for i in 0..n {
                for j in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    out[(i, j)] = (log_mean[j] + log_std[j] * z).exp();
                }
            }
        }
        MeasureSpec::Pushforward { base, map } => {
            let base_points = sample_iid(base, n, seed)?;
            out = apply_transform(map, &base_points)?.points;
        }
    }
    Ok(out)
}

/// Inverse standard-normal CDF: Acklam's rational approximation refined by
/// one Halley step against the erf-based [`norm_cdf`], giving
/// |Phi(result) - u| below 1e-12. Antisymmetric by construction:
/// the value is always computed from min(u, 1-u) and sign-flipped.
pub fn norm_inv_cdf(u: f64) -> Result<f64, SampleError> {
    if u.is_nan() || u <= 0.0 || u >= 1.0 {
        return Err(SampleError::InvCdfDomain(u));
    }
    if u == 0.5 {
        return Ok(0.0);
    }
    let (p, sign) = if u < 0.5 { (u, 1.0) } else { (1.0 - u, -1.0) };
    let mut x = acklam_lower(p);
    // Halley refinement of Phi(x) = p.
    let pdf = norm_pdf(x);
    if pdf > 0.0 && pdf.is_finite() {
        let err = norm_cdf(x) - p;
        let ratio = err / pdf;
        x -= ratio / (1.0 + 0.5 * x * ratio);
    }
    Ok(sign * x)
}

/// Acklam's approximation on the lower half p in (0, 0.5); returns the
/// (negative) quantile.
#[allow(clippy::excessive_precision)]
fn acklam_lower(p: f64) -> f64 {
    const A: [f64; 6] = [
        -39.696_830_286_653_76,
        220.946_098_424_520_8,
        -275.928_510_446_968_94,
        138.357_751_867_269_17,
        -30.664_798_066_147_16,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -54.476_098_798_224_06,
        161.585_836_858_040_94,
        -155.698_979_859_886_65,
        66.801_311_887_719_72,
        -13.280_681_552_885_72,
    ];
    const C: [f64; 6] = [
        -0.007_784_894_002_430_293,
        -0.322_396_458_041_136_4,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        0.007_784_695_709_041_462,
        0.322_467_129_070_039_8,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// A change-of-variable map applied row-wise to point sets.
#[derive(Debug, Clone)]
pub enum TransformMap {
    Identity,
    /// Componentwise standard-normal inverse CDF; domain (0,1)^d.
    NormalInvCdf,
    /// x = mean + L z with L lower-triangular, positive diagonal.
    AffineGaussian { mean: Vec<f64>, chol: DMatrix<f64> },
    /// Componentwise exp(log_mean + log_std * Phi^{-1}(u)); domain (0,1)^d.
    LognormalInvCdf { log_mean: Vec<f64>, log_std: Vec<f64> },
    /// Stages applied left to right.
    Composite(Vec<TransformMap>),
}

/// Result of a transform application; `clamped` counts inverse-CDF inputs
/// that hit the [`INV_CDF_EPS`] boundary clamp.
#[derive(Debug, Clone)]
pub struct Transformed {
    pub points: DMatrix<f64>,
    pub clamped: usize,
}

impl TransformMap {
    /// Validated affine-Gaussian map.
    pub fn affine_gaussian(mean: Vec<f64>, chol: DMatrix<f64>) -> Result<Self, SampleError> {
        let d = mean.len();
        if chol.nrows() != d || chol.ncols() != d {
            return Err(SampleError::BadAffineFactor);
        }
        for i in 0..d {
            let diag = chol[(i, i)];
            if diag.is_nan() || diag <= 0.0 {
                return Err(SampleError::BadAffineFactor);
            }
            for j in i + 1..d {
                if chol[(i, j)] != 0.0 {
                    return Err(SampleError::BadAffineFactor);
                }
            }
        }
        Ok(TransformMap::AffineGaussian { mean, chol })
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            TransformMap::Identity | TransformMap::NormalInvCdf => input_dim,
            TransformMap::AffineGaussian { mean, .. } => mean.len(),
            TransformMap::LognormalInvCdf { log_mean, .. } => log_mean.len(),
            TransformMap::Composite(stages) => stages
                .iter()
                .fold(input_dim, |d, stage| stage.output_dim(d)),
        }
    }
}

/// Push `points` through `map` (rows are points).
pub fn apply_transform(map: &TransformMap, points: &DMatrix<f64>) -> Result<Transformed, SampleError> {
    let n = points.nrows();
    let d = points.ncols();
    match map {
        TransformMap::Identity => Ok(Transformed { points: points.clone(), clamped: 0 }),
        TransformMap::NormalInvCdf => {
            let mut clamped = 0;
            let mut out = DMatrix::zeros(n, d);
            for i in 0..n {
                for j in 0..d {
                    let u = clamp_unit(points[(i, j)], &mut clamped);
                    out[(i, j)] = norm_inv_cdf(u)?;
                }
            }
            Ok(Transformed { points: out, clamped })
        }
        TransformMap::AffineGaussian { mean, chol } => {
            if d != mean.len() {
                return Err(SampleError::TransformDim { expected: mean.len(), got: d });
            }
            let mut out = DMatrix::zeros(n, d);
            for i in 0..n {
                // x = mean + L z, exploiting lower-triangular L
                for r in 0..d {
                    let mut acc = mean[r];
                    for c in 0..=r {
                        acc += chol[(r, c)] * points[(i, c)];
                    }
                    out[(i, r)] = acc;
                }
            }
            Ok(Transformed { points: out, clamped: 0 })
        }
        TransformMap::LognormalInvCdf { log_mean, log_std } => {
            if d != log_mean.len() {
                return Err(SampleError::TransformDim { expected: log_mean.len(), got: d });
            }
            let mut clamped = 0;
            let mut out = DMatrix::zeros(n, d);
            for i in 0..n {
                for j in 0..d {
                    let u = clamp_unit(points[(i, j)], &mut clamped);
                    out[(i, j)] = (log_mean[j] + log_std[j] * norm_inv_cdf(u)?).exp();
                }
            }
            Ok(Transformed { points: out, clamped })
        }
        TransformMap::Composite(stages) => {
            let mut current = points.clone();
            let mut clamped = 0;
            for stage in stages {
                let t = apply_transform(stage, &current)?;
                current = t.points;
                clamped += t.clamped;
            }
            Ok(Transformed { points: current, clamped })
        }
    }
}

/// Inverse of [`apply_transform`]; needed to express raw-space query points
/// in the base coordinates a transformed quadrature rule lives in.
pub fn apply_inverse(map: &TransformMap, points: &DMatrix<f64>) -> Result<DMatrix<f64>, SampleError> {
    let n = points.nrows();
    let d = points.ncols();
    match map {
        TransformMap::Identity => Ok(points.clone()),
        TransformMap::NormalInvCdf => {
            Ok(DMatrix::from_fn(n, d, |i, j| norm_cdf(points[(i, j)])))
        }
        TransformMap::AffineGaussian { mean, chol } => {
            if d != mean.len() {
                return Err(SampleError::TransformDim { expected: mean.len(), got: d });
            }
            let mut out = DMatrix::zeros(n, d);
            for i in 0..n {
                // forward-substitute L z = x - mean
                for r in 0..d {
                    let mut acc = points[(i, r)] - mean[r];
                    for c in 0..r {
                        acc -= chol[(r, c)] * out[(i, c)];
                    }
                    out[(i, r)] = acc / chol[(r, r)];
                }
            }
            Ok(out)
        }
        TransformMap::LognormalInvCdf { log_mean, log_std } => {
            if d != log_mean.len() {
                return Err(SampleError::TransformDim { expected: log_mean.len(), got: d });
            }
            Ok(DMatrix::from_fn(n, d, |i, j| {
                norm_cdf((points[(i, j)].ln() - log_mean[j]) / log_std[j])
            }))
        }
        TransformMap::Composite(stages) => {
            let mut current = points.clone();
            for stage in stages.iter().rev() {
                current = apply_inverse(stage, &current)?;
            }
            Ok(current)
        }
    }
}

fn clamp_unit(u: f64, clamped: &mut usize) -> f64 {
    if u < INV_CDF_EPS {
        *clamped += 1;
        INV_CDF_EPS
    } else if u > 1.0 - INV_CDF_EPS {
        *clamped += 1;
        1.0 - INV_CDF_EPS
    } else {
        u
    }
}

/// Base points for a measure under either point source. For QMC, Sobol
/// points are pushed through the base measure's own inverse CDF (uniform:
/// identity; diagonal Gaussian: componentwise Phi^{-1}).
pub fn base_points(
    measure: &MeasureSpec,
    n: usize,
    source: PointSource,
    seed: u64,
) -> Result<DMatrix<f64>, SampleError> {
    match source {
        PointSource::Iid => sample_iid(measure, n, seed),
        PointSource::Qmc => {
            let d = measure.dim();
            let u = sobol(n, d, Some(seed))?.points;
            match measure {
                MeasureSpec::Uniform01 { .. } => Ok(u),
                MeasureSpec::GaussianDiag { mean, std } => {
                    let z = apply_transform(&TransformMap::NormalInvCdf, &u)?.points;
                    Ok(DMatrix::from_fn(n, d, |i, j| mean[j] + std[j] * z[(i, j)]))
                }
                other => Err(SampleError::QmcBase(format!("{other:?}"))),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::MeasureSpec;

    #[test]
    fn uniform_sample_mean() {
        let m = MeasureSpec::Uniform01 { dim: 1 };
        let x = sample_iid(&m, 100_000, 1).unwrap();
        let mean = x.iter().sum::<f64>() / 100_000.0;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn degenerate_gaussian_is_constant() {
        let m = MeasureSpec::GaussianDiag { mean: vec![7.0], std: vec![0.0] };
        let x = sample_iid(&m, 50, 3).unwrap();
        assert!(x.iter().all(|&v| v == 7.0));
    }

    #[test]
    fn lognormal_sample_median() {
        let m = MeasureSpec::Lognormal { log_mean: vec![0.0], log_std: vec![1.0] };
        let x = sample_iid(&m, 100_000, 5).unwrap();
        let mut v: Vec<f64> = x.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        let med = 0.5 * (v[49_999] + v[50_000]);
        assert!((med - 1.0).abs() < 0.03, "median {med}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = MeasureSpec::GaussianFull {
            mean: vec![1.0, -1.0],
            cov: nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        };
        let a = sample_iid(&m, 100, 11).unwrap();
        let b = sample_iid(&m, 100, 11).unwrap();
        let c = sample_iid(&m, 100, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn split_seed_stream_zero_is_identity() {
        assert_eq!(split_seed(0xdead_beef, 0), 0xdead_beef);
        assert_ne!(split_seed(0xdead_beef, 1), 0xdead_beef);
        assert_ne!(split_seed(0xdead_beef, 1), split_seed(0xdead_beef, 2));
    }

    #[test]
    fn norm_inv_cdf_examples() {
        assert_eq!(norm_inv_cdf(0.5).unwrap(), 0.0);
        let z = norm_inv_cdf(0.975).unwrap();
        assert!((z - 1.959964).abs() < 1e-5, "{z}");
        assert!(norm_inv_cdf(0.0).is_err());
        assert!(norm_inv_cdf(1.0).is_err());
        assert!(norm_inv_cdf(f64::NAN).is_err());
    }

    #[test]
    fn norm_inv_cdf_roundtrip_accuracy() {
        let mut u = 1e-10;
        while u < 1.0 {
            let x = norm_inv_cdf(u).unwrap();
            assert!(
                (norm_cdf(x) - u).abs() < 1e-12,
                "u={u}: Phi(x)={}, diff {}",
                norm_cdf(x),
                (norm_cdf(x) - u).abs()
            );
            u += 0.0137;
        }
        for u in [1e-15, 1e-10, 1e-6, 1e-3, 0.9991, 1.0 - 1e-9] {
            let x = norm_inv_cdf(u).unwrap();
            assert!((norm_cdf(x) - u).abs() < 1e-12, "u={u}");
        }
    }

    #[test]
    fn norm_inv_cdf_antisymmetry_on_exact_complements() {
        for u in [0.5, 0.25, 0.125, 0.0625, 0.3125, 0.015625] {
            let a = norm_inv_cdf(u).unwrap();
            let b = norm_inv_cdf(1.0 - u).unwrap();
            assert_eq!(a, -b, "u={u}");
        }
    }

    #[test]
    fn transform_examples() {
        let pts = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.5, 0.5]);
        let t = apply_transform(&TransformMap::Identity, &pts).unwrap();
        assert_eq!(t.points, pts);

        let m = TransformMap::LognormalInvCdf { log_mean: vec![0.0], log_std: vec![1.0] };
        let u = DMatrix::from_row_slice(1, 1, &[0.5]);
        assert_eq!(apply_transform(&m, &u).unwrap().points[(0, 0)], 1.0);

        let aff = TransformMap::affine_gaussian(
            vec![1.0, 2.0],
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let z = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let x = apply_transform(&aff, &z).unwrap().points;
        assert_eq!(x[(0, 0)], 1.0);
        assert_eq!(x[(0, 1)], 2.0);
    }

    #[test]
    fn boundary_values_clamp_and_flag() {
        let u = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let t = apply_transform(&TransformMap::NormalInvCdf, &u).unwrap();
        assert_eq!(t.clamped, 2);
        assert!(t.points[(0, 0)].is_finite() && t.points[(1, 0)].is_finite());
    }

    #[test]
    fn composite_associativity() {
        let a = TransformMap::NormalInvCdf;
        let b = TransformMap::affine_gaussian(vec![0.5], DMatrix::from_element(1, 1, 2.0)).unwrap();
        let c = TransformMap::Identity;
        let flat = TransformMap::Composite(vec![a.clone(), b.clone(), c.clone()]);
        let nested = TransformMap::Composite(vec![
            TransformMap::Composite(vec![a, b]),
            c,
        ]);
        let pts = DMatrix::from_fn(20, 1, |i, _| (i as f64 + 0.5) / 20.0);
        assert_eq!(
            apply_transform(&flat, &pts).unwrap().points,
            apply_transform(&nested, &pts).unwrap().points
        );
    }

    #[test]
    fn transform_inverse_roundtrip() {
        let map = TransformMap::Composite(vec![
            TransformMap::NormalInvCdf,
            TransformMap::affine_gaussian(
                vec![1.0, -2.0],
                DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.3, 0.8]),
            )
            .unwrap(),
        ]);
        let u = sobol(64, 2, Some(4)).unwrap().points;
        let x = apply_transform(&map, &u).unwrap().points;
        let back = apply_inverse(&map, &x).unwrap();
        assert!((&back - &u).abs().max() < 1e-9);
    }

    #[test]
    fn sobol_through_normal_inv_cdf_has_standard_moments() {
        let n = 1 << 14;
        let u = sobol(n, 2, Some(9)).unwrap().points;
        let z = apply_transform(&TransformMap::NormalInvCdf, &u).unwrap().points;
        let tol = 3.0 / (n as f64).sqrt();
        for j in 0..2 {
            let mean: f64 = (0..n).map(|i| z[(i, j)]).sum::<f64>() / n as f64;
            let var: f64 = (0..n).map(|i| z[(i, j)] * z[(i, j)]).sum::<f64>() / n as f64
                - mean * mean;
            assert!(mean.abs() < tol, "mean {mean}");
            assert!((var - 1.0).abs() < tol, "var {var}");
        }
    }

    #[test]
    fn qmc_base_points_for_gaussian_diag() {
        let m = MeasureSpec::GaussianDiag { mean: vec![2.0, -1.0], std: vec![0.5, 2.0] };
        let pts = base_points(&m, 256, PointSource::Qmc, 3).unwrap();
        let mean0: f64 = (0..256).map(|i| pts[(i, 0)]).sum::<f64>() / 256.0;
        assert!((mean0 - 2.0).abs() < 0.1);
        let m_log = MeasureSpec::Lognormal { log_mean: vec![0.0], log_std: vec![1.0] };
        assert!(base_points(&m_log, 8, PointSource::Qmc, 3).is_err());
    }
}
