//! Seed derivation for independent random streams.
//!
//! Every random draw in a run comes from a ChaCha stream keyed by
//! `(master seed, task id, purpose)`, so adding a strategy or reordering work
//! never perturbs another consumer's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

/// Named consumers of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    StreamParams,
    TaskData,
    Split,
    ModelInit,
    Shuffle,
    BufferAdmit,
    BufferMix,
    Custom(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::StreamParams => 0x5354_5245,
            Purpose::TaskData => 0x4441_5441,
            Purpose::Split => 0x5350_4c54,
            Purpose::ModelInit => 0x494e_4954,
            Purpose::Shuffle => 0x5348_5546,
            Purpose::BufferAdmit => 0x4144_4d54,
            Purpose::BufferMix => 0x4d49_5845,
            Purpose::Custom(t) => t.wrapping_mul(0x9e37_79b9_7f4a_7c15),
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, task_id: usize, purpose: Purpose) -> u64 {
    let a = splitmix(master);
    let b = splitmix(a ^ (task_id as u64).wrapping_mul(0xd6e8_feb8_6659_fd93));
    splitmix(b ^ purpose.tag())
}

pub fn derive_rng(master: u64, task_id: usize, purpose: Purpose) -> RunRng {
    RunRng::seed_from_u64(derive_seed(master, task_id, purpose))
}
