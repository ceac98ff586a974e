//! Kernel families, Gram matrices and the hyperparameter helpers
//! (median heuristic, value standardization) shared by both quadrature
//! stages.
//!
//! All kernels are bounded with `k(x, x) = amplitude`, so after values are
//! standardized the amplitude can be left at 1.

use nalgebra::DMatrix;
use thiserror::Error;

/// Stationary kernel family. Matérn-1/2 and Matérn-3/2 are the Sobolev
/// kernels of smoothness s = 1/2 + d/2 and s = 3/2 + d/2; the Gaussian
/// kernel is smoother than any Sobolev order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum KernelFamily {
    Matern12,
    Matern32,
    Gaussian,
}

/// How a multivariate kernel is assembled from the 1-D profile:
/// `Isotropic` applies the profile to the scaled Euclidean distance,
/// `TensorProduct` multiplies per-dimension 1-D kernels. The two coincide
/// for d = 1 and for the Gaussian family in any dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Composition {
    Isotropic,
    TensorProduct,
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("lengthscale must be positive, got {0}")]
    NonPositiveLengthscale(f64),
    #[error("amplitude must be positive, got {0}")]
    NonPositiveAmplitude(f64),
    #[error("dimension mismatch: point has dim {point}, kernel expects {kernel}")]
    DimensionMismatch { point: usize, kernel: usize },
    #[error("non-finite coordinate in kernel input")]
    NonFiniteInput,
    #[error("empty point set")]
    EmptyPointSet,
    #[error("all points identical: median heuristic lengthscale is degenerate")]
    DegenerateLengthscale,
}

/// A fully specified kernel: family, per-dimension lengthscales (a single
/// entry broadcasts to every dimension), amplitude and composition.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    lengthscales: Vec<f64>,
    amplitude: f64,
    composition: Composition,
}

impl KernelSpec {
    pub fn new(
        family: KernelFamily,
        lengthscales: Vec<f64>,
        amplitude: f64,
        composition: Composition,
    ) -> Result<Self, KernelError> {
        if lengthscales.is_empty() {
            return Err(KernelError::EmptyPointSet);
        }
        for &g in &lengthscales {
            if g.is_nan() || g <= 0.0 || !g.is_finite() {
                return Err(KernelError::NonPositiveLengthscale(g));
            }
        }
        if amplitude.is_nan() || amplitude <= 0.0 || !amplitude.is_finite() {
            return Err(KernelError::NonPositiveAmplitude(amplitude));
        }
        Ok(Self {
            family,
            lengthscales,
            amplitude,
            composition,
        })
    }

    /// Scalar-lengthscale isotropic kernel.
    pub fn isotropic(family: KernelFamily, lengthscale: f64, amplitude: f64) -> Result<Self, KernelError> {
        Self::new(family, vec![lengthscale], amplitude, Composition::Isotropic)
    }

    /// Scalar-lengthscale tensor-product kernel.
    pub fn tensor(family: KernelFamily, lengthscale: f64, amplitude: f64) -> Result<Self, KernelError> {
        Self::new(family, vec![lengthscale], amplitude, Composition::TensorProduct)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn composition(&self) -> Composition {
        self.composition
    }

    /// Lengthscale for dimension `j` (broadcasting a scalar spec).
    pub fn lengthscale(&self, j: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[j]
        }
    }

    fn check_dims(&self, d: usize) -> Result<(), KernelError> {
        if self.lengthscales.len() != 1 && self.lengthscales.len() != d {
            return Err(KernelError::DimensionMismatch {
                point: d,
                kernel: self.lengthscales.len(),
            });
        }
        Ok(())
    }

    /// Kernel value k(x, y).
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        if x.len() != y.len() {
            return Err(KernelError::DimensionMismatch {
                point: y.len(),
                kernel: x.len(),
            });
        }
        self.check_dims(x.len())?;
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(KernelError::NonFiniteInput);
        }
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.composition {
            Composition::Isotropic => {
                let mut r2 = 0.0;
                for j in 0..x.len() {
                    let d = (x[j] - y[j]) / self.lengthscale(j);
                    r2 += d * d;
                }
                self.amplitude * profile(self.family, r2.sqrt())
            }
            Composition::TensorProduct => {
                let mut k = self.amplitude;
                for j in 0..x.len() {
                    let r = ((x[j] - y[j]) / self.lengthscale(j)).abs();
                    k *= profile(self.family, r);
                }
                k
            }
        }
    }
}

/// 1-D kernel profile at scaled distance r >= 0, normalized to profile(0) = 1.
fn profile(family: KernelFamily, r: f64) -> f64 {
    match family {
        KernelFamily::Matern12 => (-r).exp(),
        KernelFamily::Matern32 => {
            let s = 3f64.sqrt() * r;
            (1.0 + s) * (-s).exp()
        }
        KernelFamily::Gaussian => (-0.5 * r * r).exp(),
    }
}

/// Gram matrix K[i][j] = k(p_i, p_j) over the rows of `points`.
pub fn gram(spec: &KernelSpec, points: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
    let n = points.nrows();
    if n == 0 {
        return Err(KernelError::EmptyPointSet);
    }
    spec.check_dims(points.ncols())?;
    if points.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::NonFiniteInput);
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| points.row(i).iter().copied().collect())
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = spec.amplitude();
        for j in 0..i {
            let v = spec.eval_unchecked(&rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Median of the n(n-1)/2 pairwise Euclidean distances (even counts average
/// the two central order statistics). Scale-equivariant and permutation
/// invariant; errors out when every point coincides.
pub fn median_heuristic(points: &DMatrix<f64>) -> Result<f64, KernelError> {
    let n = points.nrows();
    if n < 2 {
        return Err(KernelError::EmptyPointSet);
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in 0..i {
            let mut r2 = 0.0;
            for c in 0..points.ncols() {
                let d = points[(i, c)] - points[(j, c)];
                r2 += d * d;
            }
            dists.push(r2.sqrt());
        }
    }
    let m = dists.len();
    let median = if m % 2 == 1 {
        let (_, mid, _) = dists.select_nth_unstable_by(m / 2, f64::total_cmp);
        *mid
    } else {
        let (lo, hi_first, _) = dists.select_nth_unstable_by(m / 2, f64::total_cmp);
        let hi = *hi_first;
        let lo = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    if median > 0.0 {
        Ok(median)
    } else {
        Err(KernelError::DegenerateLengthscale)
    }
}

/// Values after subtracting the empirical mean and dividing by the empirical
/// (population, divide-by-n) standard deviation.
///
/// When the standard deviation is zero (or fewer than two values are given)
/// the values are returned unchanged with `std = 1` and `degenerate` set;
/// callers must then skip the affine fold-back and use the raw weighted sum.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub degenerate: bool,
}

/// Standardize `values` to empirical mean 0 and standard deviation 1.
pub fn standardize(values: &[f64]) -> Standardized {
    let n = values.len();
    if n < 2 {
        return Standardized {
            values: values.to_vec(),
            mean: if n == 1 { values[0] } else { 0.0 },
            std: 1.0,
            degenerate: true,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Standardized {
            values: values.to_vec(),
            mean,
            std: 1.0,
            degenerate: true,
        };
    }
    Standardized {
        values: values.iter().map(|v| (v - mean) / std).collect(),
        mean,
        std,
        degenerate: false,
    }
}
