//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by
//! `(master seed, tag, index)`. Sample `i` of an ensemble therefore sees the
//! same numbers no matter how many threads produced the ensemble or in which
//! order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{CMat, C64};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive a child seed from a master seed and a tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(tag)))
}

/// Independent stream number `index` under `(seed, tag)`.
pub fn stream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag));
    rng.set_stream(index);
    rng
}

/// Matrix of i.i.d. standard complex normals (real and imaginary parts each
/// with variance 1/2).
pub fn complex_gaussian<R: rand::Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    // Column-major fill order is fixed so streams map to identical matrices.
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re * scale, im * scale)
    })
}

/// Random Hermitian matrix from the Gaussian unitary ensemble, normalized so
/// that its Frobenius norm is one (zero size gives an empty matrix).
pub fn unit_hermitian<R: rand::Rng>(rng: &mut R, f: usize) -> CMat {
    let g = complex_gaussian(rng, f, f);
    let h = (&g + g.adjoint()) * C64::new(0.5, 0.0);
    let norm = h.norm();
    if norm == 0.0 {
        h
    } else {
        h / C64::new(norm, 0.0)
    }
}
