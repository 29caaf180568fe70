//! Seed-derived random streams. Every random draw in an experiment comes
//! from a stream keyed by (seed, purpose, episode, timestep, grid), so
//! per-grid work is order-independent and runs reproduce bit-exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_ORDERS: u64 = 1;
pub const STREAM_SELECT: u64 = 2;
pub const STREAM_CHURN: u64 = 3;
pub const STREAM_BASELINE: u64 = 4;

/// Identifies one rollout: base seed plus episode index.
#[derive(Clone, Copy, Debug)]
pub struct StreamCtx {
    pub seed: u64,
    pub episode: u64,
}

/// SplitMix64 finalizer; good avalanche for combining stream keys.
fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

pub fn stream_rng(ctx: &StreamCtx, purpose: u64, t: u64, grid: u64) -> ChaCha8Rng {
    let mut key = mix(ctx.seed ^ 0x9e3779b97f4a7c15);
    key = mix(key ^ purpose);
    key = mix(key ^ ctx.episode.wrapping_mul(0x100000001b3));
    key = mix(key ^ t.wrapping_mul(0x1000193));
    key = mix(key ^ grid);
    ChaCha8Rng::seed_from_u64(key)
}
