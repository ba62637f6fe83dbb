//! Seed derivation and distribution helpers.
//!
//! Every stochastic component of the crate (initialization, per-epoch
//! subsampling, Gumbel noise, the generative sampler) draws from a
//! `ChaCha8Rng` whose seed is derived here, so that a single user-facing seed
//! yields bitwise-reproducible runs while distinct purposes get decorrelated
//! streams.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// One step of the SplitMix64 output function (Steele, Lea & Flood's
/// finalizer). Used as a mixing primitive, not as a stream generator.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a decorrelated sub-seed from a base seed, a purpose tag and an
/// index (epoch number, restart number, ...). Stable across platforms.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag bytes, then two SplitMix64 finalizer rounds to mix
    // in the base and the index.
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in tag.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(base ^ h).wrapping_add(index))
}

/// One standard Gumbel(0, 1) draw.
pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // -ln(-ln(U)) with U in the open interval (0, 1).
    let mut u: f64 = rng.random();
    while u <= 0.0 || u >= 1.0 {
        u = rng.random();
    }
    -(-u.ln()).ln()
}

/// Matrix of i.i.d. standard Gumbel draws, filled row-major.
pub fn gumbel_matrix<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize)) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(shape);
    for v in out.iter_mut() {
        *v = sample_gumbel(rng);
    }
    out
}

/// One draw from a Dirichlet distribution with the given concentration
/// parameters, via normalized Gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, alphas: &[f64]) -> Vec<f64> {
    assert!(
        !alphas.is_empty() && alphas.iter().all(|&a| a > 0.0),
        "Dirichlet concentrations must be positive"
    );
    let gammas: Vec<Gamma<f64>> = alphas
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("valid Gamma shape"))
        .collect();
    loop {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // Underflow to an all-zero vector is possible only for tiny
        // concentrations; redraw rather than divide by zero.
        if total > 0.0 {
            return draws.into_iter().map(|d| d / total).collect();
        }
    }
}
