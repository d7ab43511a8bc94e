//! Two-party secure scalar product.
//!
//! Both parties expand a shared session seed into the same `I x ceil(I/2)`
//! matrix `U`; only the initiator knows the mask `R`.
//!
//! 1. The initiator sends `s_m = U R + x`.
//! 2. The responder replies with `s_{n,1} = s_m . y` and `s_{n,2} = U' y`.
//! 3. The initiator recovers `x . y = s_{n,1} - s_{n,2} . R` and sends it back.
//!
//! For odd `I` the textbook construction pads both vectors with one zero so
//! that `U` has `I/2` columns. A zero row of `U` contributes nothing to any
//! message, so the padded entry is never materialized.
//!
//! `U` is the Hankel matrix `U[i][k] = g[i + k]` over `I + ceil(I/2) - 1`
//! seed-derived values, so both products with it are sliding dot products.

use super::mask::MaskStream;
use super::wire::{Payload, PartyId, Tag};
use crate::error::{Error, Result};
use crate::simnet::Network;

/// Fractional bits of the fixed-point encoding used by the exact ring modes.
pub const FIXED_FRAC_BITS: u32 = 40;

const FIXED_LIMIT: f64 = (1u64 << 46) as f64;

/// Columns of `U` (and length of `R`) for vectors of length `len`.
pub fn mask_width(len: usize) -> usize {
    len.div_ceil(2)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    const W: usize = 8;
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; W];
    let mut ca = a.chunks_exact(W);
    let mut cb = b.chunks_exact(W);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..W {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Generator of the Hankel mask for vectors of length `len`.
fn hankel(mask_seed: u64, len: usize) -> Vec<f64> {
    let mut g = vec![0.0; len + mask_width(len) - 1];
    MaskStream::new(mask_seed).fill_real(&mut g);
    g
}

fn hankel_ring(mask_seed: u64, len: usize) -> Vec<u128> {
    let mut g = vec![0u128; len + mask_width(len) - 1];
    MaskStream::new(mask_seed).fill_ring(&mut g);
    g
}

fn check_lengths(x: usize, y: usize) -> Result<()> {
    if x != y {
        return Err(Error::LengthMismatch { left: x, right: y });
    }
    if x == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// The initiator's private mask.
#[derive(Clone, Debug)]
pub struct InitiatorSecret {
    r: Vec<f64>,
}

/// Per-invocation state derived from the shared session seed.
#[derive(Clone, Copy, Debug)]
pub struct SspSession {
    len: usize,
    mask_seed: u64,
}

impl SspSession {
    pub fn new(len: usize, mask_seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self { len, mask_seed })
    }

    #[allow(clippy::len_without_is_empty)] // never empty: `new` rejects zero
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn width(&self) -> usize {
        mask_width(self.len)
    }

    /// Step 1. `R` is scaled to the magnitude of `x` so the mask does not
    /// vanish next to large entries.
    pub fn initiate(&self, x: &[f64], secret_seed: u64) -> Result<(Vec<f64>, InitiatorSecret)> {
        check_lengths(x.len(), self.len)?;
        let h = self.width();
        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut r = vec![0.0; h];
        MaskStream::new(secret_seed).fill_real(&mut r);
        r.iter_mut().for_each(|v| *v *= scale);
        let g = hankel(self.mask_seed, self.len);
        let s = x
            .iter()
            .enumerate()
            .map(|(i, xi)| xi + dot(&g[i..i + h], &r))
            .collect();
        Ok((s, InitiatorSecret { r }))
    }

    /// Step 2: returns `(s_{n,1}, s_{n,2})`.
    pub fn respond(&self, s_m: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_lengths(s_m.len(), self.len)?;
        check_lengths(y.len(), self.len)?;
        let g = hankel(self.mask_seed, self.len);
        let s2 = (0..self.width()).map(|k| dot(&g[k..k + self.len], y)).collect();
        Ok((dot(s_m, y), s2))
    }

    /// Step 3.
    pub fn finish(&self, secret: &InitiatorSecret, s1: f64, s2: &[f64]) -> Result<f64> {
        check_lengths(s2.len(), secret.r.len())?;
        Ok(s1 - dot(s2, &secret.r))
    }
}

/// The product as held by each side after the protocol.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SspOutcome {
    pub initiator: f64,
    pub responder: f64,
}

/// Runs one scalar product over `net`: three messages tagged `tag` with
/// rounds 1, 2 and 3.
pub fn ssp(
    net: &mut Network,
    tag: Tag,
    initiator: (PartyId, &[f64], u64),
    responder: (PartyId, &[f64]),
    mask_seed: u64,
) -> Result<SspOutcome> {
    let (pm, x, secret_seed) = initiator;
    let (pn, y) = responder;
    check_lengths(x.len(), y.len())?;
    let session = SspSession::new(x.len(), mask_seed)?;

    let (s_m, secret) = session.initiate(x, secret_seed)?;
    net.send(pm, pn, tag.with_round(1), Payload::real(s_m))?;

    let s_m = net.recv(pn, pm, tag.with_round(1))?;
    let (s1, s2) = session.respond(real(&s_m)?, y)?;
    let mut reply = Vec::with_capacity(1 + s2.len());
    reply.push(s1);
    reply.extend(s2);
    net.send(pn, pm, tag.with_round(2), Payload::real(reply))?;

    let reply = net.recv(pm, pn, tag.with_round(2))?;
    let reply = real(&reply)?;
    let product = session.finish(&secret, reply[0], &reply[1..])?;
    net.send(pm, pn, tag.with_round(3), Payload::scalar(product))?;

    let at_responder = real(&net.recv(pn, pm, tag.with_round(3))?)?[0];
    Ok(SspOutcome {
        initiator: product,
        responder: at_responder,
    })
}

pub(crate) fn real(p: &Payload) -> Result<&[f64]> {
    p.as_real().ok_or_else(|| Error::ProtocolDesync {
        tag: "expected a real payload".into(),
    })
}

pub(crate) fn ring(p: &Payload) -> Result<&[u128]> {
    p.as_ring().ok_or_else(|| Error::ProtocolDesync {
        tag: "expected a ring payload".into(),
    })
}

/// `round(x * 2^frac_bits)` as a two's-complement ring element.
pub fn encode_fixed(x: f64, frac_bits: u32) -> Result<u128> {
    let scaled = (x * (frac_bits as f64).exp2()).round();
    if !(scaled.abs() < FIXED_LIMIT * (frac_bits as f64).exp2()) {
        return Err(Error::InvalidParams(format!(
            "{x} is outside the fixed-point range"
        )));
    }
    Ok(scaled as i128 as u128)
}

pub fn decode_fixed(v: u128, frac_bits: u32) -> f64 {
    v as i128 as f64 / (frac_bits as f64).exp2()
}

fn ring_dot(a: &[u128], b: &[u128]) -> u128 {
    a.iter()
        .zip(b)
        .fold(0u128, |acc, (x, y)| acc.wrapping_add(x.wrapping_mul(*y)))
}

/// [`SspSession`] over the ring `Z / 2^128`; the result is exact.
#[derive(Clone, Copy, Debug)]
pub struct RingSspSession {
    len: usize,
    mask_seed: u64,
}

#[derive(Clone, Debug)]
pub struct RingSecret {
    r: Vec<u128>,
}

impl RingSspSession {
    pub fn new(len: usize, mask_seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self { len, mask_seed })
    }

    pub fn initiate(&self, x: &[u128], secret_seed: u64) -> Result<(Vec<u128>, RingSecret)> {
        check_lengths(x.len(), self.len)?;
        let h = mask_width(self.len);
        let mut r = vec![0u128; h];
        MaskStream::new(secret_seed).fill_ring(&mut r);
        let g = hankel_ring(self.mask_seed, self.len);
        let s = x
            .iter()
            .enumerate()
            .map(|(i, xi)| xi.wrapping_add(ring_dot(&g[i..i + h], &r)))
            .collect();
        Ok((s, RingSecret { r }))
    }

    pub fn respond(&self, s_m: &[u128], y: &[u128]) -> Result<(u128, Vec<u128>)> {
        check_lengths(s_m.len(), self.len)?;
        check_lengths(y.len(), self.len)?;
        let g = hankel_ring(self.mask_seed, self.len);
        let s2 = (0..mask_width(self.len))
            .map(|k| ring_dot(&g[k..k + self.len], y))
            .collect();
        Ok((ring_dot(s_m, y), s2))
    }

    pub fn finish(&self, secret: &RingSecret, s1: u128, s2: &[u128]) -> Result<u128> {
        check_lengths(s2.len(), secret.r.len())?;
        Ok(s1.wrapping_sub(ring_dot(s2, &secret.r)))
    }
}

/// Fixed-point scalar product: the ring value equals the integer dot product
/// of the encoded inputs, with `2 * frac_bits` fractional bits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedSspOutcome {
    pub ring: u128,
    pub value: f64,
}

pub fn ssp_fixed(
    net: &mut Network,
    tag: Tag,
    initiator: (PartyId, &[f64], u64),
    responder: (PartyId, &[f64]),
    mask_seed: u64,
) -> Result<FixedSspOutcome> {
    let (pm, x, secret_seed) = initiator;
    let (pn, y) = responder;
    check_lengths(x.len(), y.len())?;
    let enc = |v: &[f64]| -> Result<Vec<u128>> {
        v.iter().map(|a| encode_fixed(*a, FIXED_FRAC_BITS)).collect()
    };
    let (xe, ye) = (enc(x)?, enc(y)?);
    let session = RingSspSession::new(x.len(), mask_seed)?;

    let (s_m, secret) = session.initiate(&xe, secret_seed)?;
    net.send(pm, pn, tag.with_round(1), Payload::ring(s_m))?;
    let s_m = net.recv(pn, pm, tag.with_round(1))?;
    let (s1, s2) = session.respond(ring(&s_m)?, &ye)?;
    let mut reply = Vec::with_capacity(1 + s2.len());
    reply.push(s1);
    reply.extend(s2);
    net.send(pn, pm, tag.with_round(2), Payload::ring(reply))?;
    let reply = net.recv(pm, pn, tag.with_round(2))?;
    let reply = ring(&reply)?;
    let product = session.finish(&secret, reply[0], &reply[1..])?;
    net.send(pm, pn, tag.with_round(3), Payload::ring(vec![product]))?;
    let echoed = ring(&net.recv(pn, pm, tag.with_round(3))?)?[0];
    debug_assert_eq!(echoed, product);
    Ok(FixedSspOutcome {
        ring: product,
        value: decode_fixed(product, 2 * FIXED_FRAC_BITS),
    })
}
