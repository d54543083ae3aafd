//! Execution transcript: per-round event log, final party views and the
//! binary dump format (canonical encoding plus a trailing SHA-256).

use std::sync::Arc;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{Decode, DecodeError, Encode, Reader};
use crate::network::{AuthRecord, DiffusalRecord, MessageKind};
use crate::oracles::{OracleKind, QueryRecord};
use crate::types::{Amount, Chain, CostTable, Digest, Fruit, OracleKey, PartyId, ProtocolParams, Record, Transaction};

/// File magic of transcript dumps.
pub const MAGIC: &[u8; 8] = b"FRPOOLT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    HonestPool,
    HonestFruit,
    StrategyRun,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MinedKind {
    Fruit,
    Block,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinedRecord {
    pub party: PartyId,
    pub kind: MinedKind,
    /// The fruit, or the block header.
    pub object: Fruit,
    /// Fruit references embedded in a block; empty for fruits.
    pub fruit_refs: Vec<Digest>,
}

/// The leader's payment arithmetic for one block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaymentComputation {
    pub rew: Amount,
    pub cost: Amount,
    pub n: u16,
    pub w_leader: Amount,
    pub w_member: Amount,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaymentRecord {
    pub leader: PartyId,
    pub computation: PaymentComputation,
    pub tx: Transaction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum ExitReason {
    /// Leader step 2: an object did not match the instance.
    Dissolve,
    /// Member check 2(a).
    Mismatch,
    /// Member check 2(b)(i).
    MissingPayment,
    /// Member check 2(b)(ii).
    WrongAmount,
    /// Member check 2(b)(iii).
    NotIncluded,
    /// Member check 2(c).
    NoMessage,
    /// Strategic switch to solo mining.
    Abandon,
    /// Strategic move to a breakaway pool.
    Breakaway,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExitRecord {
    pub party: PartyId,
    pub reason: ExitReason,
}

/// A member's mirrored cost at a payment check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostCheck {
    pub party: PartyId,
    pub mirrored: Amount,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceRecord {
    pub leader: PartyId,
    pub h_prev: Digest,
    pub h_f: Digest,
    pub dig: Digest,
    pub record: Arc<Record>,
}

impl InstanceRecord {
    pub fn matches(&self, f: &Fruit) -> bool {
        f.h_prev == self.h_prev && f.h_f == self.h_f && f.dig == self.dig && *f.record == *self.record
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Affiliation {
    Solo,
    /// In the pool led by this party.
    Pool(PartyId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub party: PartyId,
    pub arrivals: Vec<u64>,
}

/// Events produced by party programs during one round.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundEvents {
    pub mined: Vec<MinedRecord>,
    pub payments: Vec<PaymentRecord>,
    pub exits: Vec<ExitRecord>,
    pub cost_checks: Vec<CostCheck>,
    pub instances: Vec<InstanceRecord>,
    /// `(party, reference)` of objects suppressed or postponed.
    pub withheld: Vec<(PartyId, Digest)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundLog {
    pub round: u64,
    pub activations: Vec<PartyId>,
    pub deliveries: Vec<Delivery>,
    pub queries: Vec<QueryRecord>,
    pub diffusals: Vec<DiffusalRecord>,
    pub auth: Vec<AuthRecord>,
    pub events: RoundEvents,
    /// Affiliation of every party at the end of the round, by party index.
    pub affiliations: Vec<Affiliation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranscriptHeader {
    pub seed: u64,
    pub mode: Mode,
    pub params: ProtocolParams,
    pub key: OracleKey,
    pub leader: Option<PartyId>,
    pub corrupted: Vec<PartyId>,
    pub variant_s: bool,
    pub strategy_name: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FinalParty {
    pub party: PartyId,
    pub honest: bool,
    pub affiliation: Affiliation,
    pub view: Chain,
    /// Query counts per oracle, in [`OracleKind::ALL`] order.
    pub counts: [u64; 5],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecutionTranscript {
    pub header: TranscriptHeader,
    pub rounds: Vec<RoundLog>,
    pub finals: Vec<FinalParty>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("not a transcript file")]
    Magic,
    #[error("checksum mismatch")]
    Checksum,
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
}

impl ExecutionTranscript {
    pub fn honest_parties(&self) -> impl Iterator<Item = &FinalParty> {
        self.finals.iter().filter(|f| f.honest)
    }

    pub fn final_of(&self, party: PartyId) -> Option<&FinalParty> {
        self.finals.iter().find(|f| f.party == party)
    }

    pub fn payments(&self) -> impl Iterator<Item = (u64, &PaymentRecord)> {
        self.rounds.iter().flat_map(|r| r.events.payments.iter().map(move |p| (r.round, p)))
    }

    /// Serialized form without the checksum.
    pub fn body_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        self.header.encode_to(&mut out);
        self.rounds.encode_to(&mut out);
        self.finals.encode_to(&mut out);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.body_bytes();
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TranscriptError> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(TranscriptError::Magic);
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(TranscriptError::Checksum);
        }
        let mut r = Reader::new(&body[MAGIC.len()..]);
        let header = TranscriptHeader::decode_from(&mut r)?;
        let rounds = Vec::decode_from(&mut r)?;
        let finals = Vec::decode_from(&mut r)?;
        if r.remaining() != 0 {
            return Err(DecodeError::Trailing(r.remaining()).into());
        }
        Ok(ExecutionTranscript { header, rounds, finals })
    }

    /// Hex SHA-256 of the serialized transcript.
    pub fn hash_hex(&self) -> String {
        Sha256::digest(self.body_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn bad_tag(tag: u8, at: usize) -> DecodeError {
    DecodeError::Tag { tag, at }
}

impl Encode for Mode {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }
}

impl Decode for Mode {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.tag()? {
            (0, _) => Ok(Mode::HonestPool),
            (1, _) => Ok(Mode::HonestFruit),
            (2, _) => Ok(Mode::StrategyRun),
            (t, at) => Err(bad_tag(t, at)),
        }
    }
}

impl Encode for OracleKind {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(self.index() as u8);
    }
}

impl Decode for OracleKind {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let (t, at) = r.tag()?;
        OracleKind::from_index(t).ok_or(bad_tag(t, at))
    }
}

impl Encode for MessageKind {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }
}

impl Decode for MessageKind {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.tag()? {
            (0, _) => Ok(MessageKind::Fruit),
            (1, _) => Ok(MessageKind::Block),
            (2, _) => Ok(MessageKind::Blocks),
            (t, at) => Err(bad_tag(t, at)),
        }
    }
}

impl Encode for MinedKind {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }
}

impl Decode for MinedKind {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.tag()? {
            (0, _) => Ok(MinedKind::Fruit),
            (1, _) => Ok(MinedKind::Block),
            (t, at) => Err(bad_tag(t, at)),
        }
    }
}

const EXIT_REASONS: [ExitReason; 8] = [
    ExitReason::Dissolve,
    ExitReason::Mismatch,
    ExitReason::MissingPayment,
    ExitReason::WrongAmount,
    ExitReason::NotIncluded,
    ExitReason::NoMessage,
    ExitReason::Abandon,
    ExitReason::Breakaway,
];

impl Encode for ExitReason {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(EXIT_REASONS.iter().position(|e| e == self).expect("listed") as u8);
    }
}

impl Decode for ExitReason {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let (t, at) = r.tag()?;
        EXIT_REASONS.get(t as usize).copied().ok_or(bad_tag(t, at))
    }
}

impl Encode for Affiliation {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            Affiliation::Solo => out.push(0),
            Affiliation::Pool(p) => {
                out.push(1);
                p.encode_to(out);
            }
        }
    }
}

impl Decode for Affiliation {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.tag()? {
            (0, _) => Ok(Affiliation::Solo),
            (1, _) => Ok(Affiliation::Pool(PartyId::decode_from(r)?)),
            (t, at) => Err(bad_tag(t, at)),
        }
    }
}

/// Implements `Encode`/`Decode` for a struct by listing its fields in order.
macro_rules! struct_codec {
    ($t:ident { $($f:ident),* $(,)? }) => {
        impl Encode for $t {
            fn encode_to(&self, out: &mut Vec<u8>) {
                $( self.$f.encode_to(out); )*
            }
        }
        impl Decode for $t {
            fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                Ok($t { $( $f: Decode::decode_from(r)?, )* })
            }
        }
    };
}

struct_codec!(QueryRecord { round, party, oracle, cost, outcome });
struct_codec!(DiffusalRecord { arrival, sender, recipients, kind, refs });
struct_codec!(AuthRecord { sender, recipient, delivered });
struct_codec!(MinedRecord { party, kind, object, fruit_refs });
struct_codec!(PaymentComputation { rew, cost, n, w_leader, w_member });
struct_codec!(PaymentRecord { leader, computation, tx });
struct_codec!(ExitRecord { party, reason });
struct_codec!(CostCheck { party, mirrored });
struct_codec!(InstanceRecord { leader, h_prev, h_f, dig, record });
struct_codec!(Delivery { party, arrivals });
struct_codec!(RoundEvents { mined, payments, exits, cost_checks, instances, withheld });
struct_codec!(RoundLog { round, activations, deliveries, queries, diffusals, auth, events, affiliations });
struct_codec!(CostTable { lc, fs, tx, ro, ltx });
struct_codec!(ProtocolParams { kappa, n, q, big_n, p_f, p_b, r, reward_f, costs, delta });
struct_codec!(TranscriptHeader { seed, mode, params, key, leader, corrupted, variant_s, strategy_name });
struct_codec!(FinalParty { party, honest, affiliation, view, counts });

impl Encode for OracleKey {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.0.encode_to(out);
    }
}

impl Decode for OracleKey {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(OracleKey(<[u8; 32]>::decode_from(r)?))
    }
}

impl Encode for [u64; 5] {
    fn encode_to(&self, out: &mut Vec<u8>) {
        for v in self {
            v.encode_to(out);
        }
    }
}

impl Decode for [u64; 5] {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut a = [0u64; 5];
        for v in &mut a {
            *v = u64::decode_from(r)?;
        }
        Ok(a)
    }
}
