//! Secure computation primitives: the secure scalar product, the ring secure
//! sum, and the message model they share.

pub mod mask;
pub mod secure_sum;
pub mod ssp;
pub mod transcript;
pub mod wire;

pub use mask::{derive_seed, MaskStream};
pub use secure_sum::{secure_sum, Delivery, SecureSumConfig, SumArithmetic};
pub use ssp::{
    decode_fixed, encode_fixed, mask_width, ssp, ssp_fixed, FixedSspOutcome, RingSspSession,
    SspOutcome, SspSession, FIXED_FRAC_BITS,
};
pub use transcript::{meter, PartyTraffic, TrafficMeter, Transcript, TranscriptMode};
pub use wire::{Message, Payload, PartyId, Protocol, Tag};
