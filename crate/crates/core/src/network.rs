//! Synchronous diffusion with adversarial ordering, and the authenticated
//! leader channel.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Block, Digest, Fruit, PartyId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Fruit(Fruit),
    Block(Arc<Block>),
    Blocks(Vec<Arc<Block>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Fruit,
    Block,
    Blocks,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Fruit(_) => MessageKind::Fruit,
            Message::Block(_) => MessageKind::Block,
            Message::Blocks(_) => MessageKind::Blocks,
        }
    }

    /// References of the carried objects.
    pub fn refs(&self) -> Vec<Digest> {
        match self {
            Message::Fruit(f) => vec![f.h],
            Message::Block(b) => vec![b.header.h],
            Message::Blocks(bs) => bs.iter().map(|b| b.header.h).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Envelope {
    pub arrival: u64,
    pub round: u64,
    pub sender: PartyId,
    pub message: Message,
    /// `None` means everyone.
    pub recipients: Option<Vec<PartyId>>,
}

/// A party's view of last round's traffic, blocks and fruits separated.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Inbox {
    pub blocks: Vec<Arc<Block>>,
    pub fruits: Vec<Fruit>,
    pub arrivals: Vec<u64>,
}

/// How the adversary orders deliveries.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingPolicy {
    /// Arrival order, i.e. sender activation order then send order.
    #[default]
    Canonical,
    /// Corrupted senders first, otherwise arrival order.
    AdversaryFirst,
    /// Listed senders first in list order, the rest after, each group in arrival order.
    SenderPriority(Vec<PartyId>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetworkError {
    #[error("protocol violation: honest message {arrival} from {sender} withheld from {recipient}")]
    ProtocolViolation { arrival: u64, sender: PartyId, recipient: PartyId },
}

/// Log line of a diffusal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiffusalRecord {
    pub arrival: u64,
    pub sender: PartyId,
    pub recipients: Option<Vec<PartyId>>,
    pub kind: MessageKind,
    pub refs: Vec<Digest>,
}

#[derive(Clone, Debug, Default)]
pub struct DiffuseBuffer {
    next_arrival: u64,
    round: u64,
    outbox: Vec<Envelope>,
    ready: Vec<Envelope>,
    log: Vec<DiffusalRecord>,
}

impl DiffuseBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_round(&mut self, round: u64) {
        self.round = round;
        self.ready = std::mem::take(&mut self.outbox);
    }

    pub fn diffuse(&mut self, sender: PartyId, message: Message) -> u64 {
        self.send(sender, message, None)
    }

    /// Selective send; only meaningful for corrupted senders.
    pub fn diffuse_to(&mut self, sender: PartyId, message: Message, recipients: Vec<PartyId>) -> u64 {
        self.send(sender, message, Some(recipients))
    }

    fn send(&mut self, sender: PartyId, message: Message, recipients: Option<Vec<PartyId>>) -> u64 {
        let arrival = self.next_arrival;
        self.next_arrival += 1;
        self.log.push(DiffusalRecord {
            arrival,
            sender,
            recipients: recipients.clone(),
            kind: message.kind(),
            refs: message.refs(),
        });
        self.outbox.push(Envelope { arrival, round: self.round, sender, message, recipients });
        arrival
    }

    pub fn take_log(&mut self) -> Vec<DiffusalRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn pending(&self) -> &[Envelope] {
        &self.outbox
    }

    /// Builds this round's inboxes from last round's messages.
    ///
    /// `drops` lists `(arrival, recipient)` pairs the adversary wants
    /// suppressed; that is only allowed for corrupted senders.
    pub fn deliver(
        &self,
        parties: &[PartyId],
        corrupted: &BTreeSet<PartyId>,
        policy: &OrderingPolicy,
        drops: &[(u64, PartyId)],
    ) -> Result<BTreeMap<PartyId, Inbox>, NetworkError> {
        let mut order: Vec<&Envelope> = self.ready.iter().collect();
        match policy {
            OrderingPolicy::Canonical => {}
            OrderingPolicy::AdversaryFirst => order.sort_by_key(|e| !corrupted.contains(&e.sender)),
            OrderingPolicy::SenderPriority(list) => {
                order.sort_by_key(|e| list.iter().position(|p| *p == e.sender).unwrap_or(usize::MAX))
            }
        }
        let mut inboxes: BTreeMap<PartyId, Inbox> = parties.iter().map(|p| (*p, Inbox::default())).collect();
        for e in order {
            let honest_sender = !corrupted.contains(&e.sender);
            for &p in parties {
                let addressed = e.recipients.as_ref().is_none_or(|r| r.contains(&p));
                let dropped = drops.contains(&(e.arrival, p));
                if honest_sender && !corrupted.contains(&p) && (!addressed || dropped) {
                    return Err(NetworkError::ProtocolViolation { arrival: e.arrival, sender: e.sender, recipient: p });
                }
                if !addressed || dropped {
                    continue;
                }
                let inbox = inboxes.get_mut(&p).expect("party registered");
                inbox.arrivals.push(e.arrival);
                match &e.message {
                    Message::Fruit(f) => inbox.fruits.push(f.clone()),
                    Message::Block(b) => inbox.blocks.push(b.clone()),
                    Message::Blocks(bs) => inbox.blocks.extend(bs.iter().cloned()),
                }
            }
        }
        Ok(inboxes)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthRecord {
    pub sender: PartyId,
    pub recipient: PartyId,
    pub delivered: bool,
}

/// Ideal authenticated channel over a fixed edge set. Delivery is
/// same-round; whatever is not picked up is discarded at round end.
#[derive(Clone, Debug)]
pub struct AuthChannel<P> {
    edges: BTreeSet<(PartyId, PartyId)>,
    pending: BTreeMap<PartyId, Vec<(PartyId, P)>>,
    log: Vec<AuthRecord>,
}

impl<P> Default for AuthChannel<P> {
    fn default() -> Self {
        AuthChannel { edges: BTreeSet::new(), pending: BTreeMap::new(), log: Vec::new() }
    }
}

impl<P> AuthChannel<P> {
    pub fn new(edges: impl IntoIterator<Item = (PartyId, PartyId)>) -> Self {
        AuthChannel { edges: edges.into_iter().collect(), ..Self::default() }
    }

    /// Star edges from `leader` to every member.
    pub fn star(leader: PartyId, members: impl IntoIterator<Item = PartyId>) -> Self {
        Self::new(members.into_iter().filter(|m| *m != leader).map(|m| (leader, m)))
    }

    pub fn has_edge(&self, from: PartyId, to: PartyId) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn add_edge(&mut self, from: PartyId, to: PartyId) {
        self.edges.insert((from, to));
    }

    pub fn remove_edge(&mut self, from: PartyId, to: PartyId) {
        self.edges.remove(&(from, to));
    }

    /// The sender id is bound by the caller (the engine), so it cannot be forged.
    pub fn send(&mut self, sender: PartyId, recipient: PartyId, payload: P) -> bool {
        let delivered = self.has_edge(sender, recipient);
        if delivered {
            self.pending.entry(recipient).or_default().push((sender, payload));
        }
        self.log.push(AuthRecord { sender, recipient, delivered });
        delivered
    }

    pub fn take(&mut self, recipient: PartyId) -> Vec<(PartyId, P)> {
        self.pending.remove(&recipient).unwrap_or_default()
    }

    pub fn end_round(&mut self) {
        self.pending.clear();
    }

    pub fn take_log(&mut self) -> Vec<AuthRecord> {
        std::mem::take(&mut self.log)
    }
}
