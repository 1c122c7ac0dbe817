//! Counter-keyed random streams.
//!
//! Every random draw comes from a stream keyed by
//! `(seed, trial, block, draw, user, purpose)`, so adding a scheme, changing
//! the order of work or splitting trials into shards never shifts another
//! consumer's numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    ClusterPlacement = 1,
    SmallScale = 2,
    UplinkFullPilots = 3,
    DownlinkPrecodedPilots = 4,
    UplinkEffectivePilots = 5,
    DownlinkEffectivePilots = 6,
    NmseChannel = 7,
    NmseNoise = 8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub trial: u64,
    pub block: u64,
    pub draw: u64,
    pub user: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            trial: 0,
            block: 0,
            draw: 0,
            user: 0,
            purpose,
        }
    }

    pub fn trial(self, trial: usize) -> Self {
        Self {
            trial: trial as u64,
            ..self
        }
    }

    pub fn block(self, block: usize) -> Self {
        Self {
            block: block as u64,
            ..self
        }
    }

    pub fn draw(self, draw: usize) -> Self {
        Self {
            draw: draw as u64,
            ..self
        }
    }

    pub fn user(self, user: usize) -> Self {
        Self {
            user: user as u64,
            ..self
        }
    }

    pub fn purpose(self, purpose: Purpose) -> Self {
        Self { purpose, ..self }
    }

    /// 64-bit digest of the key.
    pub fn digest(&self) -> u64 {
        let mut h = splitmix64(self.seed);
        for field in [
            self.trial,
            self.block,
            self.draw,
            self.user,
            self.purpose as u64,
        ] {
            h = splitmix64(h ^ splitmix64(field.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        h
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.digest())
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
