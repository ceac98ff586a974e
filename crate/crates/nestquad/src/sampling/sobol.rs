//! Sobol low-discrepancy sequences with optional Owen-style scrambling.
//!
//! Direction numbers come from the Joe–Kuo `new-joe-kuo-6` table, embedded
//! as a text data file (`joe_kuo_d64.txt`, format per line:
//! `dimension s a m_1 .. m_s`) covering dimensions 2..=64; dimension 1 is
//! the van der Corput sequence. Points are generated in Gray-code order
//! starting at sequence index 1, so the origin is never emitted (it maps to
//! -inf under inverse-CDF transforms).

use std::sync::OnceLock;

use super::{PointSet, PointSource, SampleError};
use nalgebra::DMatrix;

pub const MAX_DIM: usize = 64;
const TABLE_TEXT: &str = include_str!("joe_kuo_d64.txt");

/// 32 direction integers per dimension, MSB-aligned (V_i = m_i << (32 - i)).
fn direction_numbers() -> &'static Vec<[u32; 32]> {
    static TABLE: OnceLock<Vec<[u32; 32]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut dirs = Vec::with_capacity(MAX_DIM);
        // dimension 1: van der Corput, m_i = 1 for all i
        let mut v = [0u32; 32];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = 1u32 << (31 - i);
        }
        dirs.push(v);
        for line in TABLE_TEXT.lines() {
            let fields: Vec<u64> = line
                .split_whitespace()
                .map(|t| t.parse().expect("malformed direction-number table"))
                .collect();
            let (s, a) = (fields[1] as usize, fields[2]);
            let m_init = &fields[3..3 + s];
            let mut m = [0u64; 32];
            m[..s].copy_from_slice(m_init);
            // recurrence: m_i = 2 a_1 m_{i-1} xor 4 a_2 m_{i-2} xor ...
            //             xor 2^s m_{i-s} xor m_{i-s}
            for i in s..32 {
                let mut mi = (m[i - s] << s) ^ m[i - s];
                for k in 1..s {
                    let a_k = (a >> (s - 1 - k)) & 1;
                    if a_k == 1 {
                        mi ^= m[i - k] << k;
                    }
                }
                m[i] = mi;
            }
            let mut v = [0u32; 32];
            for i in 0..32 {
                v[i] = (m[i] as u32) << (31 - i);
            }
            dirs.push(v);
        }
        assert_eq!(dirs.len(), MAX_DIM, "direction table must cover dims 1..=64");
        dirs
    })
}

/// First `n` points of the `d`-dimensional Sobol sequence (sequence indices
/// 1..=n). `scramble_seed` switches on deterministic Owen-style digit
/// scrambling, independently per dimension.
pub fn sobol(n: usize, d: usize, scramble_seed: Option<u64>) -> Result<PointSet, SampleError> {
    if d == 0 || d > MAX_DIM {
        return Err(SampleError::SobolDimension { dim: d, max: MAX_DIM });
    }
    if n == 0 {
        return Err(SampleError::EmptySample);
    }
    if n >= (1usize << 31) {
        return Err(SampleError::SobolLength(n));
    }
    let dirs = direction_numbers();
    let mut state = vec![0u32; d];
    let mut points = DMatrix::zeros(n, d);
    let dim_seeds: Vec<u32> = (0..d)
        .map(|j| {
            scramble_seed
                .map(|s| {
                    super::mix64(s ^ (j as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)) as u32
                })
                .unwrap_or(0)
        })
        .collect();
    for i in 0..n {
        // Gray-code step: flip the direction of the lowest zero bit of i.
        let bit = (i as u32).trailing_ones() as usize;
        for j in 0..d {
            state[j] ^= dirs[j][bit];
            let v = if scramble_seed.is_some() {
                owen_scramble(state[j], dim_seeds[j])
            } else {
                state[j]
            };
            points[(i, j)] = v as f64 / 4294967296.0; // 2^32
        }
    }
    Ok(PointSet {
        points,
        base: PointSource::Qmc,
        seed: scramble_seed.unwrap_or(0),
        scrambled: scramble_seed.is_some(),
    })
}

/// Owen-style scramble of one 32-bit radical-inverse value: hash in
/// bit-reversed space so every digit is permuted conditionally on the digits
/// above it, which preserves the digital-net structure.
fn owen_scramble(value: u32, seed: u32) -> u32 {
    let mut x = value.reverse_bits();
    // Laine-Karras style hash; each output bit depends only on equal-or-lower
    // input bits, i.e. equal-or-higher digits of the original value.
    x = x.wrapping_add(seed);
    x ^= x.wrapping_mul(0x6c50_b47c);
    x ^= x.wrapping_mul(0xb82f_1e52);
    x ^= x.wrapping_mul(0xc7af_e638);
    x ^= x.wrapping_mul(0x8d22_f6e6);
    x.reverse_bits()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_three_points_dim1() {
        let ps = sobol(3, 1, None).unwrap();
        assert_eq!(ps.points[(0, 0)], 0.5);
        assert_eq!(ps.points[(1, 0)], 0.75);
        assert_eq!(ps.points[(2, 0)], 0.25);
    }

    #[test]
    fn first_point_is_half_in_every_coordinate() {
        let ps = sobol(1, 8, None).unwrap();
        for j in 0..8 {
            assert_eq!(ps.points[(0, j)], 0.5);
        }
    }

    #[test]
    fn dimension_bounds() {
        assert!(sobol(4, 65, None).is_err());
        assert!(sobol(4, 0, None).is_err());
        assert!(sobol(0, 1, None).is_err());
        assert!(sobol(16, 64, None).is_ok());
    }

    #[test]
    fn unscrambled_prefix_is_dyadically_balanced() {
        // The sequence starts at index 1 (the origin is skipped), so the
        // perfectly balanced dyadic block of size 2^k is the skipped origin
        // together with the first 2^k - 1 emitted points.
        let n = 64;
        let ps = sobol(n - 1, 5, None).unwrap();
        for j in 0..5 {
            let mut counts = vec![0usize; n];
            counts[0] += 1; // the origin
            for i in 0..n - 1 {
                counts[(ps.points[(i, j)] * n as f64) as usize] += 1;
            }
            assert!(counts.iter().all(|&c| c == 1), "dim {j}: {counts:?}");
        }
    }

    #[test]
    fn dyadic_box_counts_dim2() {
        // digital-net property on a dyadic-aligned index block: sequence
        // indices 16..31 put exactly one point in each box of the 4x4 grid.
        // Owen scrambling must preserve this.
        for seed in [None, Some(7u64), Some(8u64)] {
            let ps = sobol(31, 2, seed).unwrap();
            let mut counts = [[0usize; 4]; 4];
            for i in 15..31 {
                // emitted row i holds sequence index i + 1
                let bx = (ps.points[(i, 0)] * 4.0) as usize;
                let by = (ps.points[(i, 1)] * 4.0) as usize;
                counts[bx][by] += 1;
            }
            for row in counts {
                assert!(row.iter().all(|&c| c == 1), "seed {seed:?}: {counts:?}");
            }
        }
    }

    #[test]
    fn first_block_with_origin_is_a_net_dim2() {
        // equivalent statement for the leading block: origin + first 15
        // emitted points balance the 4x4 grid exactly
        let ps = sobol(15, 2, None).unwrap();
        let mut counts = [[0usize; 4]; 4];
        counts[0][0] += 1;
        for i in 0..15 {
            let bx = (ps.points[(i, 0)] * 4.0) as usize;
            let by = (ps.points[(i, 1)] * 4.0) as usize;
            counts[bx][by] += 1;
        }
        for row in counts {
            assert!(row.iter().all(|&c| c == 1), "{counts:?}");
        }
    }

    #[test]
    fn scrambling_is_seeded_and_uniform() {
        let a = sobol(1024, 3, Some(1)).unwrap();
        let b = sobol(1024, 3, Some(2)).unwrap();
        let a_again = sobol(1024, 3, Some(1)).unwrap();
        assert_eq!(a.points, a_again.points);
        assert_ne!(a.points, b.points);
        for ps in [&a, &b] {
            for j in 0..3 {
                let mean: f64 = (0..1024).map(|i| ps.points[(i, j)]).sum::<f64>() / 1024.0;
                assert!((mean - 0.5).abs() < 1e-2, "mean {mean}");
                assert!((0..1024).all(|i| (0.0..1.0).contains(&ps.points[(i, j)])));
            }
        }
    }
}
