//! Deterministic random streams keyed by purpose, seed, client and round.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for; distinct purposes never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Dropout = 2,
    Privacy = 3,
    Partition = 4,
    Participation = 5,
    Theory = 6,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes the key components into one 64-bit seed.
pub fn derive_seed(master: u64, purpose: Purpose, client: u64, round: u64) -> u64 {
    [purpose as u64, client, round]
        .into_iter()
        .fold(splitmix64(master), |acc, part| {
            splitmix64(acc ^ splitmix64(part))
        })
}

pub fn stream(master: u64, purpose: Purpose, client: u64, round: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, client, round))
}
