//! Seeded random streams. Every consumer of randomness derives its own
//! ChaCha stream from the user seed, so adding draws in one place never
//! perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TEACHER: u64 = 1;
pub const INIT: u64 = 2;
pub const SGD: u64 = 3;
pub const EVAL: u64 = 4;
pub const NOISE: u64 = 5;
pub const CERT_GRID: u64 = 6;
pub const PROBE: u64 = 7;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `k`-th element of the van der Corput sequence in the given base.
pub(crate) fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while k > 0 {
        out += f * (k % base) as f64;
        k /= base;
        f *= inv;
    }
    out
}

const PRIMES: [u64; 40] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173,
];

/// Point `k` of the `dim`-dimensional Halton sequence, shifted modulo 1.
pub(crate) fn halton(k: u64, dim: usize, shift: &[f64]) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let base = PRIMES.get(j).copied().unwrap_or_else(|| nth_prime(j));
            (radical_inverse(k + 1, base) + shift[j]).fract()
        })
        .collect()
}

fn nth_prime(n: usize) -> u64 {
    let mut count = 0;
    let mut c = 1u64;
    loop {
        c += 1;
        if (2..).take_while(|p| p * p <= c).all(|p| c % p != 0) {
            if count == n {
                return c;
            }
            count += 1;
        }
    }
}
