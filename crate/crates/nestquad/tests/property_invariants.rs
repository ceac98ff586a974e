//! Randomized property checks for the algebraic invariants the estimators
//! rely on.

use nalgebra::DMatrix;
use proptest::prelude::*;

use nestquad::kernels::{median_heuristic, standardize, Composition, KernelFamily, KernelSpec};
use nestquad::sampling::{apply_transform, norm_inv_cdf, TransformMap};
use nestquad::special::norm_cdf;

fn families() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![
        Just(KernelFamily::Matern12),
        Just(KernelFamily::Matern32),
        Just(KernelFamily::Gaussian),
    ]
}

proptest! {
    #[test]
    fn kernel_symmetric_bounded_positive(
        family in families(),
        tensor in any::<bool>(),
        gamma in 0.05f64..5.0,
        amp in 0.1f64..10.0,
        x in prop::collection::vec(-10.0f64..10.0, 1..5),
        shift in prop::collection::vec(-10.0f64..10.0, 1..5),
    ) {
        let d = x.len().min(shift.len());
        let x = &x[..d];
        let y: Vec<f64> = (0..d).map(|j| x[j] + shift[j]).collect();
        let comp = if tensor { Composition::TensorProduct } else { Composition::Isotropic };
        let k = KernelSpec::new(family, vec![gamma], amp, comp).unwrap();
        let kxy = k.eval(x, &y).unwrap();
        let kyx = k.eval(&y, x).unwrap();
        prop_assert_eq!(kxy, kyx);
        // strictly positive in exact arithmetic; far-apart points can
        // underflow the exponential to +0
        prop_assert!(kxy >= 0.0 && kxy <= amp * (1.0 + 1e-12));
        prop_assert!((k.eval(x, x).unwrap() - amp).abs() < 1e-12 * amp);
    }

    #[test]
    fn median_heuristic_scale_equivariant(
        vals in prop::collection::vec(-100.0f64..100.0, 3..40),
        c in 0.01f64..50.0,
    ) {
        let n = vals.len();
        let pts = DMatrix::from_fn(n, 1, |i, _| vals[i]);
        prop_assume!(median_heuristic(&pts).is_ok());
        let m = median_heuristic(&pts).unwrap();
        let scaled = DMatrix::from_fn(n, 1, |i, _| c * vals[i]);
        let ms = median_heuristic(&scaled).unwrap();
        prop_assert!((ms - c * m).abs() <= 1e-9 * (1.0 + c * m));
    }

    #[test]
    fn standardize_round_trips(
        vals in prop::collection::vec(-1e3f64..1e3, 2..50),
    ) {
        let s = standardize(&vals);
        if !s.degenerate {
            let n = vals.len() as f64;
            let mean: f64 = s.values.iter().sum::<f64>() / n;
            let var: f64 = s.values.iter().map(|v| v * v).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
            for (orig, std) in vals.iter().zip(&s.values) {
                prop_assert!((orig - (s.mean + s.std * std)).abs() < 1e-9 * (1.0 + orig.abs()));
            }
        } else {
            prop_assert_eq!(&s.values, &vals);
        }
    }

    #[test]
    fn norm_inv_cdf_round_trip(u in 1e-12f64..1.0) {
        prop_assume!(u < 1.0 - 1e-12);
        let x = norm_inv_cdf(u).unwrap();
        prop_assert!((norm_cdf(x) - u).abs() < 1e-12);
    }

    #[test]
    fn composite_transform_associates(
        pts in prop::collection::vec(0.001f64..0.999, 1..40),
        mean in -5.0f64..5.0,
        scale in 0.1f64..4.0,
        mean2 in -5.0f64..5.0,
        scale2 in 0.1f64..4.0,
    ) {
        let n = pts.len();
        let m = DMatrix::from_fn(n, 1, |i, _| pts[i]);
        let a = TransformMap::NormalInvCdf;
        let b = TransformMap::AffineGaussian {
            mean: vec![mean],
            chol: DMatrix::from_element(1, 1, scale),
        };
        let c = TransformMap::AffineGaussian {
            mean: vec![mean2],
            chol: DMatrix::from_element(1, 1, scale2),
        };
        let flat = TransformMap::Composite(vec![a.clone(), b.clone(), c.clone()]);
        let nested = TransformMap::Composite(vec![TransformMap::Composite(vec![a, b]), c]);
        let x = apply_transform(&flat, &m).unwrap().points;
        let y = apply_transform(&nested, &m).unwrap().points;
        prop_assert_eq!(x, y);
    }
}
