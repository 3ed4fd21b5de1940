//! Counter-based random streams.
//!
//! Every stream is addressed by a master seed and a short path of integers
//! (for example `[tag, cycle, member]`). The value at position `c` of a stream
//! is a pure function of `(key, c)`, so members can be generated in any order,
//! on any thread, and an ensemble of size `N` is always the prefix of the
//! ensemble of size `N + 1`.

use rand::RngCore;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream purposes. The discriminant is folded into the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Replicate = 1,
    InitialEnsemble = 2,
    PerturbedData = 3,
    Truth = 4,
    Observation = 5,
    Field = 6,
    Sample = 7,
}

/// SplitMix64 output function evaluated at an explicit counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    /// Stream keyed by `seed` alone.
    pub fn new(seed: u64) -> Self {
        Self::keyed(seed, &[])
    }

    /// Stream keyed by `seed` and a path of indices.
    pub fn keyed(seed: u64, path: &[u64]) -> Self {
        let mut key = mix64(seed ^ 0x6A09_E667_F3BC_C908);
        for &p in path {
            key = mix64(key ^ mix64(p.wrapping_add(GOLDEN_GAMMA)));
        }
        Self { key, counter: 0 }
    }

    /// Convenience for the `(seed, tag, cycle, member)` addressing used by the
    /// filter drivers.
    pub fn member(seed: u64, tag: StreamTag, cycle: u64, member: u64) -> Self {
        Self::keyed(seed, &[tag as u64, cycle, member])
    }

    /// Independent stream for replicate `index` of an experiment.
    pub fn replicate(seed: u64, index: u64) -> Self {
        Self::keyed(seed, &[StreamTag::Replicate as u64, index])
    }

    /// Raw value at an arbitrary position, without advancing.
    pub fn value_at(&self, position: u64) -> u64 {
        mix64(self.key.wrapping_add(position.wrapping_mul(GOLDEN_GAMMA)))
    }

    pub fn position(&self) -> u64 {
        self.counter
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let v = self.value_at(self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Vector of `len` independent standard normals drawn from `rng`.
pub fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> crate::Vector {
    use rand_distr::StandardNormal;
    crate::Vector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}
