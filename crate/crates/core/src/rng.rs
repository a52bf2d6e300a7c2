//! Deterministic random streams.
//!
//! One master seed expands into named substreams ("source", "fiber",
//! "detector0", ...) and each substream can hand out an independent
//! generator for any counter index (chunk, symbol, trial). Streams are
//! counter-based, so adding draws in one module never reshuffles the
//! numbers seen by another, and chunked Monte Carlo runs are bitwise
//! reproducible regardless of thread count.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output mix.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A named substream of the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    key: u64,
}

/// Derive the substream named `name` from `master`.
pub fn stream(master: u64, name: &str) -> StreamKey {
    StreamKey {
        key: mix(master ^ mix(fnv1a(name))),
    }
}

impl StreamKey {
    /// Generator at the start of the stream.
    pub fn rng(&self) -> CounterRng {
        self.rng_at(0)
    }

    /// Generator for counter `index` (chunk id, symbol index, trial id).
    /// Generators at distinct indices are statistically independent.
    pub fn rng_at(&self, index: u64) -> CounterRng {
        CounterRng {
            state: mix(self.key ^ mix(index.wrapping_add(1).wrapping_mul(GOLDEN))),
        }
    }
}

/// SplitMix64 generator. Cheap to construct, which is what makes the
/// per-symbol counter scheme affordable.
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    pub fn from_seed(seed: u64) -> Self {
        CounterRng { state: mix(seed) }
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        let mut chunks = dest.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&self.next_u64().to_le_bytes());
        }
        let rem = chunks.into_remainder();
        if !rem.is_empty() {
            let bytes = self.next_u64().to_le_bytes();
            rem.copy_from_slice(&bytes[..rem.len()]);
        }
    }
}

/// FNV-1a over arbitrary bytes, used for content hashes in output provenance.
pub fn content_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
