//! Counter-keyed Gaussian streams.
//!
//! Every block of standard normals is addressed by `(master seed, domain,
//! path index, step index)`; the substep index is the position inside the
//! block. A block is produced by seeding a xoshiro256++ generator from a
//! splitmix64 hash of the key, so any path/step can be regenerated in
//! isolation and results never depend on scheduling order.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Independent key domains sharing one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// Driving noise of the scheme and of coupled SDE paths.
    Increments,
    /// Brownian bridge fill-in for the interpolated process.
    Bridge,
    /// Noise for reference ensembles that must be independent of the scheme.
    Independent,
    /// Uniform sampling for assumption checks and random instances.
    Sampling,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Increments => 0x1d8e_4e27_c47d_124f,
            Domain::Bridge => 0x7a64_6e4a_b57c_0a2d,
            Domain::Independent => 0x4cf5_ad43_2745_937f,
            Domain::Sampling => 0x2f0a_8ef1_3b91_c6e5,
        }
    }
}

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub fn block_key(seed: u64, domain: Domain, path: u64, step: u64) -> u64 {
    let k = mix64(seed ^ domain.tag());
    let k = mix64(k ^ path.wrapping_mul(0xd6e8_feb8_6659_fd93));
    mix64(k ^ step.wrapping_mul(0xa076_1d64_78bd_642f))
}

/// Derived master seed for the `index`-th member of a family of runs
/// (e.g. one per step size in a sweep).
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ 0x5851_f42d_4c95_7f2d) ^ index)
}

pub fn block_rng(seed: u64, domain: Domain, path: u64, step: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(block_key(seed, domain, path, step))
}

/// Fill `buf` with the standard normals of block `(seed, domain, path, step)`.
pub fn fill_normals(seed: u64, domain: Domain, path: u64, step: u64, buf: &mut [f64]) {
    let mut rng = block_rng(seed, domain, path, step);
    for b in buf.iter_mut() {
        *b = StandardNormal.sample(&mut rng);
    }
}

/// Uniform draws on `[lo, hi)` for the sampling domain.
pub fn fill_uniform(seed: u64, index: u64, lo: f64, hi: f64, buf: &mut [f64]) {
    let mut rng = block_rng(seed, Domain::Sampling, index, 0);
    let dist = Uniform::new(lo, hi).expect("lo < hi");
    for b in buf.iter_mut() {
        *b = dist.sample(&mut rng);
    }
}
