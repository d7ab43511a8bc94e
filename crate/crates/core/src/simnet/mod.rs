//! Deterministic in-process message bus for simulated parties.
//!
//! Channels are FIFO per directed pair of parties. Every message is recorded
//! in a [`Transcript`] when it is sent. Rounds move through three phases:
//! every party sends, the bus delivers, every party computes on its inbox.
//! Anything still undelivered or unread at the barrier is a desync.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::smc::transcript::{Transcript, TranscriptMode, TrafficMeter};
use crate::smc::wire::{Message, Payload, PartyId, Tag};

mod runtime;

pub use runtime::{PartyRuntime, SharedState};

#[derive(Debug)]
pub struct Network {
    num_parties: usize,
    queues: Vec<VecDeque<Message>>,
    pending: usize,
    transcript: Transcript,
    dropout: Vec<Option<u64>>,
}

impl Network {
    pub fn new(num_parties: usize, mode: TranscriptMode) -> Self {
        Self {
            num_parties,
            queues: (0..num_parties * num_parties).map(|_| VecDeque::new()).collect(),
            pending: 0,
            transcript: Transcript::new(num_parties, mode),
            dropout: vec![None; num_parties],
        }
    }

    pub fn num_parties(&self) -> usize {
        self.num_parties
    }

    pub fn parties(&self) -> impl Iterator<Item = PartyId> {
        (0..self.num_parties).map(PartyId::from_index)
    }

    fn check_party(&self, p: PartyId) -> Result<()> {
        if p.0 == 0 || p.index() >= self.num_parties {
            return Err(Error::InvalidIndex(format!(
                "party {p} not in 1..={}",
                self.num_parties
            )));
        }
        Ok(())
    }

    fn queue(&mut self, sender: PartyId, receiver: PartyId) -> &mut VecDeque<Message> {
        &mut self.queues[sender.index() * self.num_parties + receiver.index()]
    }

    /// Makes `party` go silent after it has sent `after_sends` more messages.
    pub fn schedule_dropout(&mut self, party: PartyId, after_sends: u64) {
        self.dropout[party.index()] = Some(after_sends);
    }

    fn is_down(&self, p: PartyId) -> bool {
        self.dropout[p.index()] == Some(0)
    }

    pub fn send(&mut self, sender: PartyId, receiver: PartyId, tag: Tag, payload: Payload) -> Result<()> {
        self.check_party(sender)?;
        self.check_party(receiver)?;
        if sender == receiver {
            return Err(Error::InvalidIndex(format!("party {sender} cannot message itself")));
        }
        for p in [sender, receiver] {
            if self.is_down(p) {
                return Err(Error::PartyDropout {
                    party: p.0,
                    round: tag.to_string(),
                });
            }
        }
        if let Some(left) = self.dropout[sender.index()].as_mut() {
            *left -= 1;
        }
        let msg = Message {
            sender,
            receiver,
            tag,
            payload,
        };
        self.transcript.record(&msg);
        self.queue(sender, receiver).push_back(msg);
        self.pending += 1;
        Ok(())
    }

    /// One unicast per other party, identical payloads.
    pub fn broadcast(&mut self, sender: PartyId, tag: Tag, payload: Payload) -> Result<()> {
        let others: Vec<PartyId> = self.parties().filter(|p| *p != sender).collect();
        self.multicast(sender, &others, tag, payload)
    }

    /// One unicast per listed receiver, identical payloads.
    pub fn multicast(
        &mut self,
        sender: PartyId,
        receivers: &[PartyId],
        tag: Tag,
        payload: Payload,
    ) -> Result<()> {
        for &r in receivers {
            self.send(sender, r, tag, payload.clone())?;
        }
        Ok(())
    }

    /// Next message on the `sender -> receiver` channel, which must carry
    /// `tag` (round included).
    pub fn recv(&mut self, receiver: PartyId, sender: PartyId, tag: Tag) -> Result<Payload> {
        self.check_party(sender)?;
        self.check_party(receiver)?;
        match self.queue(sender, receiver).pop_front() {
            Some(msg) if msg.tag == tag => {
                self.pending -= 1;
                Ok(msg.payload)
            }
            Some(msg) => Err(Error::ProtocolDesync {
                tag: format!("{}@{} (expected {}@{})", msg.tag, msg.tag.round, tag, tag.round),
            }),
            None if self.is_down(sender) => Err(Error::PartyDropout {
                party: sender.0,
                round: tag.to_string(),
            }),
            None => Err(Error::ProtocolDesync {
                tag: format!("{tag}@{} never sent", tag.round),
            }),
        }
    }

    /// Every message addressed to `receiver`, queued per sender in sending
    /// order.
    pub fn deliver(&mut self, receiver: PartyId) -> Inbox {
        let mut by_sender = Vec::with_capacity(self.num_parties);
        for s in 0..self.num_parties {
            let q = &mut self.queues[s * self.num_parties + receiver.index()];
            self.pending -= q.len();
            by_sender.push(std::mem::take(q));
        }
        Inbox {
            owner: receiver,
            by_sender,
        }
    }

    /// Fails if any message is still in flight.
    pub fn barrier(&self) -> Result<()> {
        if self.pending == 0 {
            return Ok(());
        }
        let stuck = self.queues.iter().find_map(|q| q.front()).expect("pending count is positive");
        Err(Error::ProtocolDesync {
            tag: format!("{}@{}", stuck.tag, stuck.tag.round),
        })
    }

    pub fn warn(&mut self, warning: impl Into<String>) {
        self.transcript.warn(warning);
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    pub fn traffic(&self) -> &TrafficMeter {
        self.transcript.traffic()
    }
}

/// Messages delivered to one party for one compute phase.
#[derive(Debug)]
pub struct Inbox {
    owner: PartyId,
    by_sender: Vec<VecDeque<Message>>,
}

impl Inbox {
    pub fn owner(&self) -> PartyId {
        self.owner
    }

    pub fn len(&self) -> usize {
        self.by_sender.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_sender.iter().all(VecDeque::is_empty)
    }

    /// Oldest unread message from `sender`; its tag must equal `tag`.
    pub fn take(&mut self, sender: PartyId, tag: Tag) -> Result<Payload> {
        let msg = self
            .by_sender
            .get_mut(sender.index())
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| Error::ProtocolDesync {
                tag: format!("{tag}@{} from party {sender} missing", tag.round),
            })?;
        if msg.tag != tag {
            return Err(Error::ProtocolDesync {
                tag: format!("{}@{} (expected {}@{})", msg.tag, msg.tag.round, tag, tag.round),
            });
        }
        Ok(msg.payload)
    }

    /// Remaining messages, by sender then sending order.
    pub fn drain(&mut self) -> impl Iterator<Item = Message> + '_ {
        self.by_sender.iter_mut().flat_map(|q| q.drain(..))
    }

    fn leftover(&self) -> Option<&Message> {
        self.by_sender.iter().find_map(VecDeque::front)
    }
}

/// Sending handle for one party during a send phase.
pub struct Outbox<'a> {
    net: &'a mut Network,
    sender: PartyId,
}

impl Outbox<'_> {
    pub fn sender(&self) -> PartyId {
        self.sender
    }

    pub fn num_parties(&self) -> usize {
        self.net.num_parties()
    }

    pub fn send(&mut self, receiver: PartyId, tag: Tag, payload: Payload) -> Result<()> {
        self.net.send(self.sender, receiver, tag, payload)
    }

    pub fn broadcast(&mut self, tag: Tag, payload: Payload) -> Result<()> {
        self.net.broadcast(self.sender, tag, payload)
    }

    pub fn multicast(&mut self, receivers: &[PartyId], tag: Tag, payload: Payload) -> Result<()> {
        self.net.multicast(self.sender, receivers, tag, payload)
    }
}

pub trait Party {
    fn id(&self) -> PartyId;
}

/// Runs one synchronous round: every party's `send` in id order, delivery,
/// then every party's `compute` on its inbox. A message left unread by
/// `compute` is a desync.
pub fn run_round<P: Party>(
    net: &mut Network,
    parties: &mut [P],
    mut send: impl FnMut(&mut P, &mut Outbox<'_>) -> Result<()>,
    mut compute: impl FnMut(&mut P, &mut Inbox) -> Result<()>,
) -> Result<()> {
    for p in parties.iter_mut() {
        let sender = p.id();
        send(p, &mut Outbox { net, sender })?;
    }
    let mut inboxes: Vec<Inbox> = parties.iter().map(|p| net.deliver(p.id())).collect();
    net.barrier()?;
    for (p, inbox) in parties.iter_mut().zip(inboxes.iter_mut()) {
        compute(p, inbox)?;
        if let Some(m) = inbox.leftover() {
            return Err(Error::ProtocolDesync {
                tag: format!("{}@{} unread by party {}", m.tag, m.tag.round, inbox.owner),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smc::wire::Protocol;

    struct Echo {
        id: PartyId,
        heard: Vec<f64>,
    }

    impl Party for Echo {
        fn id(&self) -> PartyId {
            self.id
        }
    }

    fn ring(n: usize) -> Vec<Echo> {
        (0..n)
            .map(|k| Echo {
                id: PartyId::from_index(k),
                heard: Vec::new(),
            })
            .collect()
    }

    fn tag() -> Tag {
        Tag::new(Protocol::Echo, 0, &[])
    }

    #[test]
    fn echo_round_reaches_successor() {
        let n = 4;
        let mut net = Network::new(n, TranscriptMode::Full);
        let mut parties = ring(n);
        run_round(
            &mut net,
            &mut parties,
            |p, out| out.send(PartyId::from_index((p.id.index() + 1) % n), tag(), Payload::scalar(p.id.0 as f64)),
            |p, inbox| {
                let pred = PartyId::from_index((p.id.index() + n - 1) % n);
                p.heard = inbox.take(pred, tag())?.as_real().unwrap().to_vec();
                Ok(())
            },
        )
        .unwrap();
        for p in &parties {
            let pred = (p.id.index() + n - 1) % n + 1;
            assert_eq!(p.heard, vec![pred as f64]);
        }
        assert_eq!(net.transcript().messages().len(), n);
    }

    #[test]
    fn empty_round_leaves_transcript_unchanged() {
        let mut net = Network::new(3, TranscriptMode::Full);
        let before = net.transcript().dump_string();
        run_round(&mut net, &mut ring(3), |_, _| Ok(()), |_, _| Ok(())).unwrap();
        assert_eq!(net.transcript().dump_string(), before);
    }

    #[test]
    fn broadcast_is_metered_per_receiver() {
        let mut net = Network::new(3, TranscriptMode::Full);
        net.broadcast(PartyId(1), tag(), Payload::real(vec![1.0; 4])).unwrap();
        assert_eq!(net.traffic().party(PartyId(1)).up_bytes, 2 * (32 + 32));
        let a = net.recv(PartyId(2), PartyId(1), tag()).unwrap();
        let b = net.recv(PartyId(3), PartyId(1), tag()).unwrap();
        assert_eq!(a, b);
        net.barrier().unwrap();

        let mut single = Network::new(1, TranscriptMode::Full);
        single.broadcast(PartyId(1), tag(), Payload::scalar(1.0)).unwrap();
        assert_eq!(single.traffic().total_messages(), 0);
    }

    #[test]
    fn unread_message_is_a_desync() {
        let mut net = Network::new(2, TranscriptMode::Full);
        let err = run_round(
            &mut net,
            &mut ring(2),
            |p, out| if p.id == PartyId(1) { out.broadcast(tag(), Payload::scalar(1.0)) } else { Ok(()) },
            |_, _| Ok(()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ProtocolDesync { .. }), "{err}");

        let mut net = Network::new(2, TranscriptMode::Full);
        net.send(PartyId(1), PartyId(2), tag(), Payload::scalar(1.0)).unwrap();
        assert!(matches!(net.barrier(), Err(Error::ProtocolDesync { .. })));
        let wrong = Tag::new(Protocol::Ssp, 0, &[]);
        assert!(matches!(net.recv(PartyId(2), PartyId(1), wrong), Err(Error::ProtocolDesync { .. })));
    }

    #[test]
    fn channels_are_fifo() {
        let mut net = Network::new(2, TranscriptMode::MeterOnly);
        for k in 0..5 {
            net.send(PartyId(1), PartyId(2), tag(), Payload::scalar(k as f64)).unwrap();
        }
        let mut inbox = net.deliver(PartyId(2));
        let got: Vec<f64> = (0..5)
            .map(|_| inbox.take(PartyId(1), tag()).unwrap().as_real().unwrap()[0])
            .collect();
        assert_eq!(got, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dropout_names_the_round() {
        let mut net = Network::new(2, TranscriptMode::Full);
        net.schedule_dropout(PartyId(2), 1);
        net.send(PartyId(2), PartyId(1), tag(), Payload::scalar(0.0)).unwrap();
        match net.send(PartyId(2), PartyId(1), Tag::new(Protocol::Ssp, 2, &[5]), Payload::scalar(0.0)) {
            Err(Error::PartyDropout { party, round }) => {
                assert_eq!(party, 2);
                assert!(round.starts_with("ssp:5"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
