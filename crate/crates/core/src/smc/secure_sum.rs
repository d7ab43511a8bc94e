//! Ring secure sum.
//!
//! The leader (first ring member) blinds its addend with a uniform `Z` in
//! `[0, N)` and every member adds its own addend modulo `N` before passing
//! the partial on. The last partial returns to the leader, who removes `Z`
//! and broadcasts the sum; with [`Delivery::Only`] it instead goes to an
//! outside party, who also receives `Z` from the leader and unblinds alone.
//!
//! Sums may be negative: the leader also adds `N/2`, so results in
//! `[-N/2, N/2)` are representable.
//!
//! Vector addends are summed element-wise in one pass of the ring.

use super::mask::{derive_seed, MaskStream};
use super::ssp::{decode_fixed, encode_fixed, real, ring};
use super::wire::{Payload, PartyId, Tag};
use crate::error::{Error, Result};
use crate::simnet::Network;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SumArithmetic {
    /// Floating-point remainders modulo `N`.
    Real,
    /// Two's-complement fixed point in the ring `Z / 2^128`; exact up to the
    /// encoding of each addend.
    Fixed { frac_bits: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecureSumConfig {
    /// `N`; the sum must lie in `[-N/2, N/2)`.
    pub modulus: f64,
    pub arithmetic: SumArithmetic,
    /// Check the range precondition against the plaintext sum before
    /// running. On by default in debug builds.
    pub check_overflow: bool,
}

impl SecureSumConfig {
    pub fn real(modulus: f64) -> Self {
        Self {
            modulus,
            arithmetic: SumArithmetic::Real,
            check_overflow: cfg!(debug_assertions),
        }
    }

    pub fn fixed(modulus: f64, frac_bits: u32) -> Self {
        Self {
            arithmetic: SumArithmetic::Fixed { frac_bits },
            ..Self::real(modulus)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Delivery {
    /// Every ring member learns the sum.
    Ring,
    /// Only this party, which must not be in the ring, learns the sum.
    Only(PartyId),
}

fn modn(x: f64, n: f64) -> f64 {
    let r = x.rem_euclid(n);
    if r >= n {
        r - n
    } else {
        r
    }
}

fn check(ring_members: &[PartyId], addends: &[Vec<f64>], cfg: &SecureSumConfig, delivery: Delivery) -> Result<usize> {
    if ring_members.is_empty() {
        return Err(Error::EmptyInput);
    }
    if addends.len() != ring_members.len() {
        return Err(Error::LengthMismatch {
            left: ring_members.len(),
            right: addends.len(),
        });
    }
    let width = addends[0].len();
    if let Some(bad) = addends.iter().find(|a| a.len() != width) {
        return Err(Error::LengthMismatch {
            left: width,
            right: bad.len(),
        });
    }
    if !(cfg.modulus > 0.0 && cfg.modulus.is_finite()) {
        return Err(Error::InvalidParams(format!("modulus {} must be positive", cfg.modulus)));
    }
    if let Delivery::Only(target) = delivery {
        if ring_members.contains(&target) {
            return Err(Error::InvalidIndex(format!(
                "delivery target {target} is a ring member"
            )));
        }
    }
    if cfg.check_overflow {
        for k in 0..width {
            let sum: f64 = addends.iter().map(|a| a[k]).sum();
            if !(sum.abs() < cfg.modulus / 2.0) {
                return Err(Error::SumOverflow {
                    sum,
                    modulus: cfg.modulus,
                });
            }
        }
    }
    Ok(width)
}

enum Partial {
    Real(Vec<f64>),
    Ring(Vec<u128>),
}

impl Partial {
    fn payload(&self) -> Payload {
        match self {
            Partial::Real(v) => Payload::real(v.clone()),
            Partial::Ring(v) => Payload::ring(v.clone()),
        }
    }
}

/// Element-wise `sum_n addends[n]` over the parties of `ring_members`, in
/// ring order. `leader_secret` seeds the leader's blind.
///
/// Returns the sum as decoded by whoever receives it: every ring member for
/// [`Delivery::Ring`], only the target for [`Delivery::Only`].
pub fn secure_sum(
    net: &mut Network,
    tag: Tag,
    ring_members: &[PartyId],
    addends: &[Vec<f64>],
    leader_secret: u64,
    cfg: &SecureSumConfig,
    delivery: Delivery,
) -> Result<Vec<f64>> {
    let width = check(ring_members, addends, cfg, delivery)?;
    let size = ring_members.len();
    match delivery {
        Delivery::Ring if size == 1 => return Ok(addends[0].clone()),
        Delivery::Ring if size == 2 => net.warn(format!(
            "secure sum {tag} over two parties: each learns the other's addend"
        )),
        Delivery::Only(target) if size == 1 => net.warn(format!(
            "secure sum {tag} has a single contributor: party {target} learns its addend"
        )),
        _ => {}
    }

    let n = cfg.modulus;
    let half = n / 2.0;
    let mut blind = MaskStream::new(derive_seed(leader_secret, "ss-blind", &[tag.hash64()]));
    let leader = ring_members[0];
    let (z, mut partial) = match cfg.arithmetic {
        SumArithmetic::Real => {
            let z: Vec<f64> = (0..width).map(|_| blind.next_below(n)).collect();
            let v = addends[0]
                .iter()
                .zip(&z)
                .map(|(a, z)| modn(a + half + z, n))
                .collect();
            (Partial::Real(z), Partial::Real(v))
        }
        SumArithmetic::Fixed { frac_bits } => {
            let z: Vec<u128> = (0..width).map(|_| blind.next_ring()).collect();
            let v = addends[0]
                .iter()
                .zip(&z)
                .map(|(a, z)| encode_fixed(*a, frac_bits).map(|e| e.wrapping_add(*z)))
                .collect::<Result<Vec<_>>>()?;
            (Partial::Ring(z), Partial::Ring(v))
        }
    };

    // V_1 .. V_{size-1} travel around the ring.
    for k in 1..size {
        let (from, to) = (ring_members[k - 1], ring_members[k]);
        let step = tag.with_round(k as u32);
        net.send(from, to, step, partial.payload())?;
        let received = net.recv(to, from, step)?;
        partial = match cfg.arithmetic {
            SumArithmetic::Real => Partial::Real(
                real(&received)?
                    .iter()
                    .zip(&addends[k])
                    .map(|(v, a)| modn(a + v, n))
                    .collect(),
            ),
            SumArithmetic::Fixed { frac_bits } => Partial::Ring(
                ring(&received)?
                    .iter()
                    .zip(&addends[k])
                    .map(|(v, a)| encode_fixed(*a, frac_bits).map(|e| e.wrapping_add(*v)))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
    }

    let last = ring_members[size - 1];
    let unblind = |v: &Payload, z: &Partial| -> Result<Vec<f64>> {
        Ok(match (z, cfg.arithmetic) {
            (Partial::Real(z), _) => real(v)?
                .iter()
                .zip(z)
                .map(|(v, z)| modn(v - z, n) - half)
                .collect(),
            (Partial::Ring(z), SumArithmetic::Fixed { frac_bits }) => ring(v)?
                .iter()
                .zip(z)
                .map(|(v, z)| decode_fixed(v.wrapping_sub(*z), frac_bits))
                .collect(),
            (Partial::Ring(_), SumArithmetic::Real) => unreachable!("ring blind implies fixed arithmetic"),
        })
    };

    let round = size as u32;
    match delivery {
        Delivery::Ring => {
            net.send(last, leader, tag.with_round(round), partial.payload())?;
            let back = net.recv(leader, last, tag.with_round(round))?;
            let sum = unblind(&back, &z)?;
            let others: Vec<PartyId> = ring_members[1..].to_vec();
            net.multicast(leader, &others, tag.with_round(round + 1), Payload::real(sum.clone()))?;
            for p in others {
                net.recv(p, leader, tag.with_round(round + 1))?;
            }
            Ok(sum)
        }
        Delivery::Only(target) => {
            net.send(last, target, tag.with_round(round), partial.payload())?;
            net.send(leader, target, tag.with_round(round + 1), z.payload())?;
            let v = net.recv(target, last, tag.with_round(round))?;
            let zp = net.recv(target, leader, tag.with_round(round + 1))?;
            let z = match zp {
                Payload::Real(z) => Partial::Real(z.to_vec()),
                Payload::Ring(z) => Partial::Ring(z.to_vec()),
            };
            unblind(&v, &z)
        }
    }
}
