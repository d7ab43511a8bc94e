//! Message transcripts and byte-exact traffic accounting.

use std::fmt::Write as _;
use std::io::{self, Write};

use sha2::{Digest, Sha256};

use super::wire::{Message, PartyId};

/// What a [`Transcript`] keeps besides the traffic counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TranscriptMode {
    /// Every message plus a running SHA-256 over the encoded bytes.
    #[default]
    Full,
    /// Counters only; for runs too large to keep.
    MeterOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PartyTraffic {
    pub up_bytes: u64,
    pub down_bytes: u64,
    pub sent: u64,
    pub received: u64,
}

/// Per-party upstream/downstream byte totals.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrafficMeter {
    parties: Vec<PartyTraffic>,
}

impl TrafficMeter {
    pub fn new(num_parties: usize) -> Self {
        Self {
            parties: vec![PartyTraffic::default(); num_parties],
        }
    }

    fn slot(&mut self, p: PartyId) -> &mut PartyTraffic {
        let k = p.index();
        if k >= self.parties.len() {
            self.parties.resize(k + 1, PartyTraffic::default());
        }
        &mut self.parties[k]
    }

    pub fn record(&mut self, msg: &Message) {
        let bytes = msg.wire_bytes();
        let s = self.slot(msg.sender);
        s.up_bytes += bytes;
        s.sent += 1;
        let r = self.slot(msg.receiver);
        r.down_bytes += bytes;
        r.received += 1;
    }

    pub fn party(&self, p: PartyId) -> PartyTraffic {
        self.parties.get(p.index()).copied().unwrap_or_default()
    }

    pub fn parties(&self) -> &[PartyTraffic] {
        &self.parties
    }

    pub fn total_up(&self) -> u64 {
        self.parties.iter().map(|p| p.up_bytes).sum()
    }

    pub fn total_down(&self) -> u64 {
        self.parties.iter().map(|p| p.down_bytes).sum()
    }

    pub fn total_messages(&self) -> u64 {
        self.parties.iter().map(|p| p.sent).sum()
    }

    /// Counters accumulated since `earlier`.
    pub fn since(&self, earlier: &TrafficMeter) -> TrafficMeter {
        let parties = self
            .parties
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let e = earlier.parties.get(k).copied().unwrap_or_default();
                PartyTraffic {
                    up_bytes: p.up_bytes - e.up_bytes,
                    down_bytes: p.down_bytes - e.down_bytes,
                    sent: p.sent - e.sent,
                    received: p.received - e.received,
                }
            })
            .collect();
        TrafficMeter { parties }
    }

    pub fn merge(&mut self, other: &TrafficMeter) {
        for (k, p) in other.parties.iter().enumerate() {
            let s = self.slot(PartyId::from_index(k));
            s.up_bytes += p.up_bytes;
            s.down_bytes += p.down_bytes;
            s.sent += p.sent;
            s.received += p.received;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Transcript {
    mode: TranscriptMode,
    messages: Vec<Message>,
    meter: TrafficMeter,
    hasher: Sha256,
    warnings: Vec<String>,
}

impl Transcript {
    pub fn new(num_parties: usize, mode: TranscriptMode) -> Self {
        Self {
            mode,
            messages: Vec::new(),
            meter: TrafficMeter::new(num_parties),
            hasher: Sha256::new(),
            warnings: Vec::new(),
        }
    }

    pub fn mode(&self) -> TranscriptMode {
        self.mode
    }

    pub fn record(&mut self, msg: &Message) {
        self.meter.record(msg);
        if self.mode == TranscriptMode::Full {
            self.hasher.update(msg.encode());
            self.messages.push(msg.clone());
        }
    }

    pub fn warn(&mut self, warning: impl Into<String>) {
        let w = warning.into();
        if !self.warnings.contains(&w) {
            self.warnings.push(w);
        }
    }

    /// Empty in [`TranscriptMode::MeterOnly`].
    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn traffic(&self) -> &TrafficMeter {
        &self.meter
    }

    /// Hex SHA-256 of every encoded message in order; `None` when only
    /// counters are kept.
    pub fn digest_hex(&self) -> Option<String> {
        (self.mode == TranscriptMode::Full).then(|| {
            self.hasher
                .clone()
                .finalize()
                .iter()
                .fold(String::with_capacity(64), |mut s, b| {
                    let _ = write!(s, "{b:02x}");
                    s
                })
        })
    }

    /// One `sender,receiver,tag,round,len,bytes` line per message, then the
    /// payload digest and any privacy warnings as `#` lines.
    pub fn dump(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "sender,receiver,tag,round,len,bytes")?;
        for m in &self.messages {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                m.sender,
                m.receiver,
                m.tag,
                m.tag.round,
                m.payload.words(),
                m.wire_bytes()
            )?;
        }
        if let Some(d) = self.digest_hex() {
            writeln!(out, "# payload-sha256 {d}")?;
        }
        for w in &self.warnings {
            writeln!(out, "# warning: {w}")?;
        }
        Ok(())
    }

    pub fn dump_string(&self) -> String {
        let mut buf = Vec::new();
        self.dump(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("transcript dump is ASCII")
    }
}

/// Traffic report for a transcript, recomputed from its messages when they
/// were kept.
pub fn meter(transcript: &Transcript) -> TrafficMeter {
    match transcript.mode() {
        TranscriptMode::Full => {
            let mut m = TrafficMeter::new(transcript.traffic().parties().len());
            transcript.messages().iter().for_each(|msg| m.record(msg));
            m
        }
        TranscriptMode::MeterOnly => transcript.traffic().clone(),
    }
}
