//! Deterministic sampling helpers: Halton low-discrepancy points and
//! counter-based seeded random streams.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131,
];

/// Radical inverse of `index` in the given base, a value in `[0, 1)`.
pub fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % b) as f64 * scale;
        index /= b;
        scale *= inv;
    }
    out
}

/// The `index`-th point of the `dim`-dimensional Halton sequence.
///
/// Index 0 is the origin, so callers usually start from 1.
///
/// # Panics
/// If `dim` exceeds the number of tabulated prime bases (32).
pub fn halton_point(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "Halton dimension {dim} too large");
    PRIMES[..dim]
        .iter()
        .map(|&b| radical_inverse(index, b))
        .collect()
}

/// A reproducible generator for logical stream `stream` under `seed`.
///
/// Streams with different numbers are independent, so parallel workers can
/// each take their own stream and still reproduce a serial run exactly.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform sample from the box `[lo, hi]`.
pub fn uniform_in_box<R: Rng + ?Sized>(rng: &mut R, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| {
            if h > l {
                l + (h - l) * rng.random::<f64>()
            } else {
                l
            }
        })
        .collect()
}

/// Random acyclic turning matrix on `n` cells.
///
/// Cells are ranked by a random permutation and route only to higher-ranked
/// cells, each candidate edge present with probability `density`. Row sums
/// are drawn from `[0, 1]` and equal 1 exactly for about a third of the rows
/// with successors.
pub fn random_acyclic_turning<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    density: f64,
) -> DMatrix<f64> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut p = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let targets: Vec<usize> = order[k + 1..]
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < density)
            .collect();
        if targets.is_empty() {
            continue;
        }
        let raw: Vec<f64> = targets.iter().map(|_| 0.05 + rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let row_sum = if rng.random::<f64>() < 1.0 / 3.0 {
            1.0
        } else {
            rng.random::<f64>()
        };
        for (&j, w) in targets.iter().zip(&raw) {
            p[(i, j)] = row_sum * w / total;
        }
    }
    p
}

/// Exit rates completing the rows of `p` to one.
pub fn exit_rates(p: &DMatrix<f64>) -> Vec<f64> {
    (0..p.nrows())
        .map(|i| (1.0 - p.row(i).sum()).clamp(0.0, 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert_eq!(radical_inverse(1, 3), 1.0 / 3.0);
    }

    #[test]
    fn halton_points_in_unit_cube() {
        for k in 1..500 {
            let p = halton_point(k, 6);
            assert!(p.iter().all(|&c| (0.0..1.0).contains(&c)));
        }
    }

    #[test]
    fn streams_reproduce_and_differ() {
        let a: Vec<f64> = (0..4).map(|_| stream_rng(7, 3).random::<f64>()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let x: f64 = stream_rng(7, 3).random();
        let y: f64 = stream_rng(7, 4).random();
        assert_ne!(x, y);
    }

    #[test]
    fn box_samples_respect_bounds() {
        let mut rng = stream_rng(1, 0);
        for _ in 0..1000 {
            let s = uniform_in_box(&mut rng, &[0.0, 0.22], &[1.0, 0.3]);
            assert!((0.0..=1.0).contains(&s[0]));
            assert!((0.22..=0.3).contains(&s[1]));
        }
    }

    #[test]
    fn random_turning_is_acyclic_substochastic() {
        let mut rng = stream_rng(5, 0);
        for n in 1..12 {
            let p = random_acyclic_turning(&mut rng, n, 0.5);
            assert!(crate::network::find_cycle(&p).is_none());
            for i in 0..n {
                assert!(p.row(i).sum() <= 1.0 + 1e-12);
                assert_eq!(p[(i, i)], 0.0);
            }
        }
    }
}
