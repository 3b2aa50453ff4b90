//! Seed derivation.
//!
//! Every random stream in a run is derived from one root seed plus a
//! component label and integer indices, so a stream depends only on *what*
//! it is for and never on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `root`, a component label and indices.
pub fn derive_seed(root: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    let mut feed = |b: u8| {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    };
    for b in root.to_le_bytes() {
        feed(b);
    }
    for b in label.bytes() {
        feed(b);
    }
    feed(0xff);
    for &i in indices {
        for b in i.to_le_bytes() {
            feed(b);
        }
    }
    splitmix64(h)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn derive_rng(root: u64, label: &str, indices: &[u64]) -> Rng {
    rng_from_seed(derive_seed(root, label, indices))
}

/// Standard normal draw via Box-Muller.
pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}
