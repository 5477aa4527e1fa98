//! Reproducible random streams keyed by `(base_seed, stream_id)`.
//!
//! Every trajectory owns one stream, so the numbers it sees do not depend on
//! which worker runs it or in which order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STREAM_TAG: [u8; 16] = *b"qtraj-stream-v1\0";

#[derive(Clone, Debug)]
pub struct RngStream {
    base_seed: u64,
    stream_id: u64,
    substream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(base_seed: u64, stream_id: u64) -> Self {
        Self::with_substream(base_seed, stream_id, 0)
    }

    /// An independent stream derived from the same `(base_seed, stream_id)`,
    /// used for auxiliary sampling such as correlation helper states.
    pub fn with_substream(base_seed: u64, stream_id: u64, substream: u64) -> Self {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&base_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&substream.to_le_bytes());
        seed[16..].copy_from_slice(&STREAM_TAG);
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream_id);
        Self { base_seed, stream_id, substream, rng }
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn substream(&self) -> u64 {
        self.substream
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw in the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let r = self.rng.random::<f64>();
            if r > 0.0 {
                return r;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn different_keys_differ() {
        let first = |s: &mut RngStream| (0..4).map(|_| s.uniform().to_bits()).collect::<Vec<_>>();
        let base = first(&mut RngStream::new(42, 7));
        assert_ne!(base, first(&mut RngStream::new(42, 8)));
        assert_ne!(base, first(&mut RngStream::new(43, 7)));
        assert_ne!(base, first(&mut RngStream::with_substream(42, 7, 1)));
    }

    #[test]
    fn open_interval() {
        let mut s = RngStream::new(1, 2);
        for _ in 0..10_000 {
            let r = s.uniform_open();
            assert!(r > 0.0 && r < 1.0);
        }
    }

    #[test]
    fn sequence_is_pinned() {
        // guards against silent changes in the stream construction
        let mut s = RngStream::new(0, 0);
        let bits: Vec<u64> = (0..3).map(|_| s.uniform().to_bits()).collect();
        assert_eq!(bits, vec![4597925659192884592, 4592366669831097592, 4606230652062122038]);
    }
}
