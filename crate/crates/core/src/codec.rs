//! Canonical binary encoding.
//!
//! Fixed-width little-endian integers, `u32` length prefixes for sequences
//! and byte strings, one tag byte for options and enums. The same encoding
//! feeds the random oracle and the transcript file format.

use std::sync::Arc;

use num_rational::Ratio;
use thiserror::Error;

use crate::types::{Amount, Block, Chain, Digest, Fruit, PartyId, Probability, Record, Transaction};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input at byte {0}")]
    Eof(usize),
    #[error("invalid tag {tag} at byte {at}")]
    Tag { tag: u8, at: usize },
    #[error("invalid value at byte {0}")]
    Invalid(usize),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

pub trait Encode {
    fn encode_to(&self, out: &mut Vec<u8>);

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_to(&mut out);
        out
    }
}

pub trait Decode: Sized {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError>;

    /// Decodes a complete buffer, rejecting trailing bytes.
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode_from(&mut r)?;
        if r.remaining() != 0 {
            return Err(DecodeError::Trailing(r.remaining()));
        }
        Ok(v)
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Eof(self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn tag(&mut self) -> Result<(u8, usize), DecodeError> {
        let at = self.pos;
        Ok((u8::decode_from(self)?, at))
    }

    fn len(&mut self) -> Result<usize, DecodeError> {
        let n = u32::decode_from(self)? as usize;
        // Every element takes at least one byte; reject absurd lengths early.
        if n > self.remaining() {
            return Err(DecodeError::Invalid(self.pos));
        }
        Ok(n)
    }
}

macro_rules! int_codec {
    ($($t:ty),*) => {$(
        impl Encode for $t {
            fn encode_to(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
        }
        impl Decode for $t {
            fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                let b = r.take(std::mem::size_of::<$t>())?;
                Ok(<$t>::from_le_bytes(b.try_into().expect("sized slice")))
            }
        }
    )*};
}

int_codec!(u8, u16, u32, u64, i64, i128);

impl Encode for bool {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }
}

impl Decode for bool {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.tag()? {
            (0, _) => Ok(false),
            (1, _) => Ok(true),
            (tag, at) => Err(DecodeError::Tag { tag, at }),
        }
    }
}

impl Encode for f64 {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.to_bits().encode_to(out);
    }
}

impl Decode for f64 {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(f64::from_bits(u64::decode_from(r)?))
    }
}

impl<T: Encode> Encode for Vec<T> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.as_slice().encode_to(out);
    }
}

impl<T: Encode> Encode for [T] {
    fn encode_to(&self, out: &mut Vec<u8>) {
        (self.len() as u32).encode_to(out);
        for x in self {
            x.encode_to(out);
        }
    }
}

impl<T: Decode> Decode for Vec<T> {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let n = r.len()?;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(T::decode_from(r)?);
        }
        Ok(v)
    }
}

impl<T: Encode> Encode for Option<T> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(v) => {
                out.push(1);
                v.encode_to(out);
            }
        }
    }
}

impl<T: Decode> Decode for Option<T> {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.tag()? {
            (0, _) => Ok(None),
            (1, _) => Ok(Some(T::decode_from(r)?)),
            (tag, at) => Err(DecodeError::Tag { tag, at }),
        }
    }
}

impl<A: Encode, B: Encode> Encode for (A, B) {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.0.encode_to(out);
        self.1.encode_to(out);
    }
}

impl<A: Decode, B: Decode> Decode for (A, B) {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok((A::decode_from(r)?, B::decode_from(r)?))
    }
}

impl<T: Encode> Encode for Arc<T> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        (**self).encode_to(out);
    }
}

impl<T: Decode> Decode for Arc<T> {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Arc::new(T::decode_from(r)?))
    }
}

impl Encode for [u8; 32] {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self);
    }
}

impl Decode for [u8; 32] {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(r.take(32)?.try_into().expect("sized slice"))
    }
}

impl Encode for String {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.as_bytes().to_vec().encode_to(out);
    }
}

impl Decode for String {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let at = r.position();
        String::from_utf8(Vec::<u8>::decode_from(r)?).map_err(|_| DecodeError::Invalid(at))
    }
}

impl Encode for PartyId {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.0.encode_to(out);
    }
}

impl Decode for PartyId {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PartyId(u16::decode_from(r)?))
    }
}

impl Encode for Digest {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.prefix.encode_to(out);
        self.suffix.encode_to(out);
    }
}

impl Decode for Digest {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Digest { prefix: u64::decode_from(r)?, suffix: u64::decode_from(r)? })
    }
}

fn encode_ratio(v: &Ratio<i128>, out: &mut Vec<u8>) {
    v.numer().encode_to(out);
    v.denom().encode_to(out);
}

fn decode_ratio(r: &mut Reader<'_>) -> Result<Ratio<i128>, DecodeError> {
    let at = r.position();
    let numer = i128::decode_from(r)?;
    let denom = i128::decode_from(r)?;
    if denom <= 0 {
        return Err(DecodeError::Invalid(at));
    }
    let v = Ratio::new(numer, denom);
    // Canonical form only, so encoding stays injective.
    if *v.numer() != numer || *v.denom() != denom {
        return Err(DecodeError::Invalid(at));
    }
    Ok(v)
}

impl Encode for Amount {
    fn encode_to(&self, out: &mut Vec<u8>) {
        encode_ratio(&self.0, out);
    }
}

impl Decode for Amount {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        decode_ratio(r).map(Amount)
    }
}

impl Encode for Probability {
    fn encode_to(&self, out: &mut Vec<u8>) {
        encode_ratio(&self.0, out);
    }
}

impl Decode for Probability {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        decode_ratio(r).map(Probability)
    }
}

impl Encode for Transaction {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.id.encode_to(out);
        self.payload.encode_to(out);
        self.payments.encode_to(out);
    }
}

impl Decode for Transaction {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction {
            id: u64::decode_from(r)?,
            payload: Vec::decode_from(r)?,
            payments: Option::decode_from(r)?,
        })
    }
}

impl Encode for Record {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.coinbase.encode_to(out);
        self.txs.encode_to(out);
    }
}

impl Decode for Record {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Record { coinbase: PartyId::decode_from(r)?, txs: Vec::decode_from(r)? })
    }
}

impl Encode for Fruit {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.h_prev.encode_to(out);
        self.h_f.encode_to(out);
        self.eta.encode_to(out);
        self.dig.encode_to(out);
        self.record.encode_to(out);
        self.h.encode_to(out);
    }
}

impl Decode for Fruit {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Fruit {
            h_prev: Digest::decode_from(r)?,
            h_f: Digest::decode_from(r)?,
            eta: u64::decode_from(r)?,
            dig: Digest::decode_from(r)?,
            record: Arc::decode_from(r)?,
            h: Digest::decode_from(r)?,
        })
    }
}

impl Encode for Block {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.header.encode_to(out);
        self.fruits.encode_to(out);
    }
}

impl Decode for Block {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Block { header: Fruit::decode_from(r)?, fruits: Vec::decode_from(r)? })
    }
}

impl Encode for Chain {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.blocks.encode_to(out);
    }
}

impl Decode for Chain {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let at = r.position();
        let blocks: Vec<Arc<Block>> = Vec::decode_from(r)?;
        if blocks.is_empty() {
            return Err(DecodeError::Invalid(at));
        }
        Ok(Chain { blocks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::arb_fruit;
    use proptest::prelude::*;

    #[test]
    fn option_and_bool_tags_are_checked() {
        assert_eq!(bool::decode(&[2]), Err(DecodeError::Tag { tag: 2, at: 0 }));
        assert_eq!(Option::<u8>::decode(&[7]), Err(DecodeError::Tag { tag: 7, at: 0 }));
        assert_eq!(u32::decode(&[1, 0, 0, 0, 9]), Err(DecodeError::Trailing(1)));
    }

    #[test]
    fn non_canonical_ratio_rejected() {
        let mut buf = Vec::new();
        2i128.encode_to(&mut buf);
        4i128.encode_to(&mut buf);
        assert!(Amount::decode(&buf).is_err());
    }

    #[test]
    fn huge_length_prefix_is_rejected() {
        let buf = [0xff, 0xff, 0xff, 0xff, 1];
        assert!(Vec::<u8>::decode(&buf).is_err());
    }

    proptest! {
        #[test]
        fn fruit_roundtrip(f in arb_fruit()) {
            let bytes = f.encode();
            prop_assert_eq!(Fruit::decode(&bytes).unwrap(), f);
        }

        #[test]
        fn distinct_fruits_encode_differently(a in arb_fruit(), b in arb_fruit()) {
            prop_assume!(a != b);
            prop_assert_ne!(a.encode(), b.encode());
        }
    }
}
