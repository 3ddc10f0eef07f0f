//! Counter-addressed randomness.
//!
//! Every random draw in a run is a pure function of `(seed, stream, step, index)`.
//! Agent-private draws use the agent's index as the stream; the scheduler and the
//! population-wide common coin have reserved streams. Nothing is materialized and
//! no generator state is shared, so concurrent readers need no coordination.

use rand::RngCore;

/// Stream reserved for interaction scheduling (targets and channel noise).
pub const SCHEDULER_STREAM: u64 = u64::MAX;
/// Stream every agent can read identically (the shared random bits).
pub const COMMON_STREAM: u64 = u64::MAX - 1;
/// Stream used for charging configurations (source set, correct opinion).
pub const CHARGE_STREAM: u64 = u64::MAX - 2;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const LABEL_SALT: u64 = 0xD6E8_FEB8_6659_FD93;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of labels.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    let mut h = mix64(seed.wrapping_add(GOLDEN));
    for &l in labels {
        // rotating the running hash keeps a label equal to the parent seed from cancelling it
        h = mix64(h.rotate_left(23).wrapping_add(GOLDEN) ^ mix64(l ^ LABEL_SALT));
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SharedRandomness {
    seed: u64,
    key: u64,
}

impl SharedRandomness {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            key: mix64(seed.wrapping_add(GOLDEN)),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// 64 random bits at the given address.
    #[inline]
    pub fn bits(&self, stream: u64, step: u64, index: u64) -> u64 {
        let mut h = mix64(self.key ^ stream.wrapping_mul(GOLDEN));
        h = mix64(h.wrapping_add(step).wrapping_mul(0xD6E8_FEB8_6659_FD93));
        mix64(h ^ index.wrapping_mul(0xCA5A_8263_9512_1157))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn unit(&self, stream: u64, step: u64, index: u64) -> f64 {
        (self.bits(stream, step, index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (multiply-shift; bias below `n / 2^64`).
    #[inline]
    pub fn below(&self, stream: u64, step: u64, index: u64, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.bits(stream, step, index) as u128 * n as u128) >> 64) as usize
    }

    pub fn coin(&self, stream: u64, step: u64, index: u64) -> bool {
        self.bits(stream, step, index) >> 63 == 1
    }

    /// A sequential `RngCore` reading consecutive indices of one `(stream, step)` cell.
    pub fn rng(&self, stream: u64, step: u64) -> AddressedRng {
        AddressedRng {
            source: *self,
            stream,
            step,
            index: 0,
        }
    }
}

/// Adapter exposing one address cell as an ordinary `rand` generator.
#[derive(Debug, Clone)]
pub struct AddressedRng {
    source: SharedRandomness,
    stream: u64,
    step: u64,
    index: u64,
}

impl RngCore for AddressedRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let v = self.source.bits(self.stream, self.step, self.index);
        self.index += 1;
        v
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
