//! Counter-keyed random streams.
//!
//! Every random draw is addressed by `(seed, trajectory, step, role)`, so a
//! trajectory can be regenerated independently of how many others were drawn
//! before it or on which thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{Matrix, Vector};

/// What a stream is used for; distinct roles never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Role {
    InitialState = 1,
    ProcessNoise = 2,
    MeasurementNoise = 3,
    Propagation = 4,
    Resampling = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for one `(seed, trajectory, step, role)` cell.
pub fn stream(seed: u64, trajectory: u64, step: u64, role: Role) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let words = [
        splitmix64(seed),
        splitmix64(trajectory ^ 0x5851_F42D_4C95_7F2D),
        splitmix64(step ^ 0x1405_7B7E_F767_814F),
        splitmix64(role as u64),
    ];
    let mut acc = 0u64;
    for (i, w) in words.iter().enumerate() {
        acc = splitmix64(acc ^ w);
        key[i * 8..(i + 1) * 8].copy_from_slice(&acc.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

pub fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Draw from `N(mean, LLᵀ)`.
pub fn gaussian(rng: &mut ChaCha8Rng, mean: &Vector, l: &Matrix) -> Vector {
    mean + l * standard_normal(rng, mean.len())
}
