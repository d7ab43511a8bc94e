//! Message model and the byte-exact wire encoding used for metering.
//!
//! Every message is a 32-byte little-endian header followed by the payload
//! as 64-bit words:
//!
//! | bytes  | field                         |
//! |--------|-------------------------------|
//! | 0..4   | protocol id                   |
//! | 4..8   | sender                        |
//! | 8..12  | receiver                      |
//! | 12..20 | session tag hash (FNV-1a 64)  |
//! | 20..24 | round                         |
//! | 24..28 | payload length in words       |
//! | 28..32 | reserved, zero                |
//!
//! Real payloads are IEEE-754 doubles; ring payloads (fixed-point mode) use
//! two words per element, low word first.

use std::fmt;
use std::sync::Arc;

pub const HEADER_BYTES: u64 = 32;
pub const WORD_BYTES: u64 = 8;

/// 1-based party identifier; farm `m` is `PartyId(m)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartyId(pub u32);

impl PartyId {
    pub fn farm(farm: usize) -> Self {
        PartyId(farm as u32)
    }

    /// 0-based slot.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Self {
        PartyId(index as u32 + 1)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u32)]
pub enum Protocol {
    Ssp = 1,
    SecureSum = 2,
    /// Private E-step: per-farm linear terms.
    EStepLinear = 3,
    /// Private E-step: per-farm scalar partial sums.
    EStepPartial = 4,
    /// Private M-step: locally computable means and within-farm covariances.
    MStepLocal = 5,
    /// Private M-step: cross-farm covariance entries after SSP.
    MStepCross = 6,
    /// Private M-step: observation block shared to restart an empty component.
    Reseed = 7,
    /// Centralized baseline: raw slice upload.
    Upload = 8,
    /// Centralized baseline: fitted parameters download.
    Download = 9,
    Echo = 10,
}

impl Protocol {
    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Ssp => "ssp",
            Protocol::SecureSum => "ss",
            Protocol::EStepLinear => "estep-c",
            Protocol::EStepPartial => "estep-s",
            Protocol::MStepLocal => "mstep-local",
            Protocol::MStepCross => "mstep-cross",
            Protocol::Reseed => "reseed",
            Protocol::Upload => "upload",
            Protocol::Download => "download",
            Protocol::Echo => "echo",
        }
    }
}

/// Session tag: protocol, round within the protocol, and up to six indices
/// (component, observation, farms, periods as applicable).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tag {
    pub protocol: Protocol,
    pub round: u32,
    pub idx: [u32; 6],
}

impl Tag {
    pub fn new(protocol: Protocol, round: u32, indices: &[usize]) -> Self {
        assert!(indices.len() <= 6, "at most six tag indices");
        let mut idx = [0u32; 6];
        for (slot, v) in idx.iter_mut().zip(indices) {
            *slot = *v as u32;
        }
        Self {
            protocol,
            round,
            idx,
        }
    }

    pub fn with_round(mut self, round: u32) -> Self {
        self.round = round;
        self
    }

    /// FNV-1a over protocol id and indices; the round travels separately.
    pub fn hash64(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(&self.protocol.id().to_le_bytes());
        for v in self.idx {
            eat(&v.to_le_bytes());
        }
        h
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.protocol.name())?;
        for v in self.idx {
            write!(f, ":{v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Real(Arc<[f64]>),
    Ring(Arc<[u128]>),
}

impl Payload {
    pub fn real(values: Vec<f64>) -> Self {
        Payload::Real(values.into())
    }

    pub fn scalar(value: f64) -> Self {
        Payload::Real(Arc::from([value]))
    }

    pub fn ring(values: Vec<u128>) -> Self {
        Payload::Ring(values.into())
    }

    /// Length in 64-bit words.
    pub fn words(&self) -> usize {
        match self {
            Payload::Real(v) => v.len(),
            Payload::Ring(v) => 2 * v.len(),
        }
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match self {
            Payload::Real(v) => Some(v),
            Payload::Ring(_) => None,
        }
    }

    pub fn as_ring(&self) -> Option<&[u128]> {
        match self {
            Payload::Ring(v) => Some(v),
            Payload::Real(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub sender: PartyId,
    pub receiver: PartyId,
    pub tag: Tag,
    pub payload: Payload,
}

impl Message {
    pub fn wire_bytes(&self) -> u64 {
        HEADER_BYTES + WORD_BYTES * self.payload.words() as u64
    }

    pub fn header(&self) -> [u8; 32] {
        let mut h = [0u8; 32];
        h[0..4].copy_from_slice(&self.tag.protocol.id().to_le_bytes());
        h[4..8].copy_from_slice(&self.sender.0.to_le_bytes());
        h[8..12].copy_from_slice(&self.receiver.0.to_le_bytes());
        h[12..20].copy_from_slice(&self.tag.hash64().to_le_bytes());
        h[20..24].copy_from_slice(&self.tag.round.to_le_bytes());
        h[24..28].copy_from_slice(&(self.payload.words() as u32).to_le_bytes());
        h
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_bytes() as usize);
        out.extend_from_slice(&self.header());
        match &self.payload {
            Payload::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Ring(v) => v.iter().for_each(|x| {
                out.extend_from_slice(&(*x as u64).to_le_bytes());
                out.extend_from_slice(&((*x >> 64) as u64).to_le_bytes());
            }),
        }
        out
    }
}
