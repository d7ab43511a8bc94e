//! Seed derivation and the pseudo-random streams that expand a seed into
//! masking material.

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64Mcg;
use sha2::{Digest, Sha256};

const LANES: usize = 4;
const INV_2_31: f64 = 1.0 / 2_147_483_648.0;

/// Derives an independent 64-bit seed from `master`, a domain label and a
/// list of indices.
pub fn derive_seed(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Deterministic stream of reals in `[-1, 1)` (32-bit resolution) or raw
/// ring elements, expanded from one seed.
///
/// Four PCG generators are interleaved so consecutive draws do not wait on
/// one another.
#[derive(Clone, Debug)]
pub struct MaskStream {
    lanes: [Pcg64Mcg; LANES],
}

impl MaskStream {
    pub fn new(seed: u64) -> Self {
        Self {
            lanes: std::array::from_fn(|k| {
                Pcg64Mcg::seed_from_u64(derive_seed(seed, "mask-lane", &[k as u64]))
            }),
        }
    }

    /// Fills `out` with reals in `[-1, 1)`.
    pub fn fill_real(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2 * LANES);
        for chunk in &mut chunks {
            for (k, lane) in self.lanes.iter_mut().enumerate() {
                let w = lane.next_u64();
                chunk[2 * k] = (w as u32 as i32) as f64 * INV_2_31;
                chunk[2 * k + 1] = ((w >> 32) as u32 as i32) as f64 * INV_2_31;
            }
        }
        for (k, v) in chunks.into_remainder().iter_mut().enumerate() {
            let w = self.lanes[k % LANES].next_u64();
            *v = (w as u32 as i32) as f64 * INV_2_31;
        }
    }

    /// Fills `out` with uniform elements of the ring `Z / 2^128`.
    pub fn fill_ring(&mut self, out: &mut [u128]) {
        for (k, v) in out.iter_mut().enumerate() {
            let lane = &mut self.lanes[k % LANES];
            *v = (lane.next_u64() as u128) | ((lane.next_u64() as u128) << 64);
        }
    }

    pub fn next_real(&mut self) -> f64 {
        let mut v = [0.0];
        self.fill_real(&mut v);
        v[0]
    }

    pub fn next_ring(&mut self) -> u128 {
        let mut v = [0u128];
        self.fill_ring(&mut v);
        v[0]
    }

    /// Uniform real in `[0, bound)`.
    pub fn next_below(&mut self, bound: f64) -> f64 {
        let w = self.lanes[0].next_u64() >> 11;
        (w as f64 / (1u64 << 53) as f64) * bound
    }
}
