//! Deterministic counter-based random streams.
//!
//! Every stochastic component draws from a ChaCha stream addressed by
//! (seed, entity, step). Streams for distinct addresses are independent,
//! so parallel execution order cannot change results: a fiber stepping at
//! step `k` always sees the same numbers regardless of thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Entity classes get disjoint stream name spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Per-fiber dynamics stream, one per (fiber, step).
    Fiber,
    /// MCMC chain stream, one per chain.
    Chain,
    /// Stochastic simulation algorithm stream for cross-linkers.
    Ssa,
    /// Miscellaneous sampling streams (synthetic draws, shuffles).
    Aux,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Fiber => 0,
            StreamKind::Chain => 1,
            StreamKind::Ssa => 2,
            StreamKind::Aux => 3,
        }
    }
}

/// Root RNG factory for one run.
#[derive(Debug, Clone, Copy)]
pub struct RngFactory {
    seed: u64,
}

impl RngFactory {
    pub fn new(seed: u64) -> Self {
        RngFactory { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// RNG for (kind, entity, step). Distinct addresses give independent
    /// streams; draws within one address are sequential.
    pub fn stream(&self, kind: StreamKind, entity: u64, step: u64) -> ChaCha12Rng {
        // SplitMix64 mixes the address into the 256-bit ChaCha key so that
        // nearby (entity, step) pairs decorrelate.
        let mut s = [0u8; 32];
        let mut x = self.seed;
        for (i, word) in [kind.tag(), entity, step, 0x5ef1_0f1e_u64].iter().enumerate() {
            x = splitmix64(x ^ word.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(i as u32 * 17));
            s[8 * i..8 * i + 8].copy_from_slice(&x.to_le_bytes());
        }
        ChaCha12Rng::from_seed(s)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fill a vector with i.i.d. standard normals.
pub fn normals(rng: &mut ChaCha12Rng, n: usize) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}
