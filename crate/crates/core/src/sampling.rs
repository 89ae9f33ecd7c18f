//! Reproducible randomness.
//!
//! Every random decision in the crate is drawn from a stream identified by a
//! `(master_seed, stream_id)` pair. The stream generator is ChaCha8 (a
//! counter-based generator): the 256-bit key is expanded from `master_seed`
//! with `SeedableRng::seed_from_u64` and `stream_id` selects the 64-bit ChaCha
//! stream (nonce), with the block counter starting at zero. The mapping is a
//! pure function of the pair, identical on every platform and independent of
//! how many other streams were consumed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Generator state handed to a single worker.
pub type StreamRng = ChaCha8Rng;

/// Identifies one independent stream, e.g. one tree of a forest or one
/// repetition of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedPlan {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedPlan {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    pub fn rng(&self) -> StreamRng {
        derive_stream(self.master_seed, self.stream_id)
    }
}

pub fn derive_stream(master_seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id);
    rng
}

/// A child master seed: the first word of stream `(master_seed, stream_id)`.
/// Used to nest seed plans (repetition -> forest -> tree).
pub fn derive_seed(master_seed: u64, stream_id: u64) -> u64 {
    derive_stream(master_seed, stream_id).next_u64()
}

/// Uniform index in `0..n`, drawn through `u64` so that the result does not
/// depend on the platform's pointer width.
#[inline]
pub(crate) fn uniform_index<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n as u64) as usize
}

/// `a_n` distinct indices from `0..n`, every `a_n`-subset equally likely.
///
/// Partial Fisher–Yates over an index array; the order of the returned
/// indices is the draw order.
pub fn subsample_without_replacement<R: Rng + ?Sized>(
    n: usize,
    a_n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if a_n == 0 || a_n > n {
        return Err(Error::invalid(format!(
            "subsample size must lie in 1..={n}, got {a_n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..a_n {
        let j = i + uniform_index(rng, n - i);
        idx.swap(i, j);
    }
    idx.truncate(a_n);
    Ok(idx)
}

/// `n` i.i.d. uniform indices from `0..n`.
pub fn bootstrap_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::EmptyData("bootstrap of an empty sample"));
    }
    Ok((0..n).map(|_| uniform_index(rng, n)).collect())
}
