//! Deterministic random streams.
//!
//! Every random entity (a user shard, a cluster model, an SGD run, a K-means++
//! restart) draws from its own ChaCha8 stream keyed by `(seed, domain, index)`.
//! ChaCha is counter based, so streams are independent of the order in which
//! they are consumed and parallel generation matches sequential generation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Version tag mixed into every key. Bump when the stream layout changes.
pub const STREAM_VERSION: u64 = 1;

/// Stream domains. Each consumer of randomness gets a distinct tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Domain {
    ClusterModel = 1,
    UserShard = 2,
    TestSet = 3,
    Sgd = 4,
    KmeansPP = 5,
    Shuffle = 6,
    IfcaInit = 7,
    IfcaLocal = 8,
    Lambda = 9,
    Instance = 10,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream for entity `index` within `domain`, derived from `seed`.
pub fn substream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let words = [
        splitmix(seed),
        splitmix(seed ^ STREAM_VERSION.rotate_left(17)),
        splitmix(domain as u64 ^ 0x5851_f42d_4c95_7f2d),
        splitmix(seed.rotate_left(32) ^ domain as u64),
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Derive a child seed, e.g. a per-restart seed from a run seed.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix(splitmix(seed ^ (domain as u64) << 40) ^ index)
}
