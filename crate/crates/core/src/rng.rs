//! Named random streams derived from a single master seed.
//!
//! Every source of randomness in a run (objective generation, per-worker
//! gradient noise, client sampling, compute-time draws) gets its own
//! ChaCha stream keyed by a stable name, so adding a draw to one stream
//! never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream names used by the simulator.
pub mod names {
    pub const OBJECTIVE: &str = "objective-gen";
    pub const CLIENT_SAMPLING: &str = "client-sampling";
    pub const SCHEDULER: &str = "scheduler";

    pub fn noise(id: usize) -> String {
        format!("noise/{id}")
    }

    pub fn delay(id: usize) -> String {
        format!("delay-model/{id}")
    }
}

/// A master seed from which named sub-streams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct MasterSeed(pub u64);

impl MasterSeed {
    pub fn stream(self, name: &str) -> Stream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(fnv1a(name.as_bytes()));
        rng
    }

    /// Derives an independent master seed, e.g. for the i-th replica of a sweep.
    pub fn child(self, index: u64) -> MasterSeed {
        MasterSeed(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
