//! Counter-based splittable random streams.
//!
//! Every random quantity in this crate is derived from a 64-bit master seed
//! through keyed SplitMix64 mixing, so that a draw is a pure function of
//! (master seed, stream id, counter). Layer n of an environment window is a
//! pure function of (seed, n): enlarging a window never changes the layers it
//! shares with a smaller one, and replicas can run on any number of threads
//! without changing results.

use rand::RngCore;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream identifier into an independent sub-key.
#[inline]
pub fn derive_key(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master ^ GOLDEN.wrapping_mul(stream)).wrapping_add(stream))
}

/// Sub-key for layer `n` of an environment, usable for negative layers.
#[inline]
pub fn layer_key(master: u64, n: i64) -> u64 {
    derive_key(master, (n as u64) ^ 0xa076_1d64_78bd_642f)
}

/// A keyed counter stream: value `i` is `splitmix64(key + i * GOLDEN)` mixed
/// once more through the key. Implements `RngCore` by walking the counter.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        CounterRng { key, counter: 0 }
    }

    /// Stream for one layer of an environment.
    pub fn for_layer(master: u64, n: i64) -> Self {
        CounterRng::new(layer_key(master, n))
    }

    /// Stream for one replica of a Monte Carlo computation.
    pub fn for_replica(master: u64, replica: u64) -> Self {
        CounterRng::new(derive_key(master, replica ^ 0x5851_f42d_4c95_7f2d))
    }

    #[inline]
    pub fn value_at(key: u64, i: u64) -> u64 {
        splitmix64(key ^ splitmix64(i.wrapping_mul(GOLDEN)))
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let v = Self::value_at(self.key, self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
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

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn deterministic_per_key() {
        let mut a = CounterRng::new(derive_key(7, 3));
        let mut b = CounterRng::new(derive_key(7, 3));
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = CounterRng::for_layer(7, 0);
        let mut b = CounterRng::for_layer(7, 1);
        let av: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let bv: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(av, bv);
    }

    #[test]
    fn uniform_floats_in_range() {
        let mut r = CounterRng::new(1);
        for _ in 0..1000 {
            let x: f64 = r.gen();
            assert!((0.0..1.0).contains(&x));
        }
    }
}
