//! Ledger value types, protocol parameters and the two hash abstractions.
//!
//! Digests are `2·kappa` bits wide and stored as two `kappa`-bit halves, so
//! that the block test (prefix) and fruit test (suffix) are plain integer
//! comparisons against exact thresholds.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;
use std::sync::Arc;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::Encode;

/// Exact rational used for probabilities and currency.
pub type Rational = Ratio<i128>;

/// Party identifier. Parties are numbered `0..n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartyId(pub u16);

impl PartyId {
    /// Coinbase of the genesis record, which belongs to nobody.
    pub const SENTINEL: PartyId = PartyId(u16::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::SENTINEL {
            write!(f, "P⊥")
        } else {
            write!(f, "P{}", self.0)
        }
    }
}

/// A `2·kappa`-bit digest split into its first and last `kappa` bits.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Digest {
    /// First `kappa` bits, read as an unsigned integer.
    pub prefix: u64,
    /// Last `kappa` bits, read as an unsigned integer.
    pub suffix: u64,
}

impl Digest {
    pub const ZERO: Digest = Digest { prefix: 0, suffix: 0 };
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}{:016x}", self.prefix, self.suffix)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AmountParseError {
    #[error("empty number")]
    Empty,
    #[error("malformed number `{0}`")]
    Malformed(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
}

/// Parses `"13/256"`, `"0.05"`, `"-3"` or `"2.5e-3"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational, AmountParseError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(AmountParseError::Empty);
    }
    let bad = || AmountParseError::Malformed(s.to_string());
    if let Some((num, den)) = s.split_once('/') {
        let num = parse_rational(num)?;
        let den = parse_rational(den)?;
        if den.is_zero() {
            return Err(AmountParseError::ZeroDenominator(s.to_string()));
        }
        return Ok(num / den);
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let joined = format!("{int_part}{frac_part}");
    let numer: i128 = if joined.is_empty() { 0 } else { joined.parse().map_err(|_| bad())? };
    let scale = exp - frac_part.len() as i32;
    if scale.unsigned_abs() > 36 {
        return Err(bad());
    }
    let pow = 10i128.pow(scale.unsigned_abs());
    let mut value = if scale >= 0 {
        Rational::from_integer(numer.checked_mul(pow).ok_or_else(bad)?)
    } else {
        Rational::new(numer, pow)
    };
    if neg {
        value = -value;
    }
    Ok(value)
}

fn rational_to_string(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Currency amount, exact.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Amount(pub Rational);

impl Amount {
    pub const ZERO: Amount = Amount(Ratio::new_raw(0, 1));

    pub fn from_int(v: i128) -> Self {
        Amount(Rational::from_integer(v))
    }

    pub fn new(numer: i128, denom: i128) -> Self {
        Amount(Rational::new(numer, denom))
    }

    pub fn to_f64(self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn abs(self) -> Self {
        Amount(self.0.abs())
    }

    pub fn max(self, other: Self) -> Self {
        if self >= other { self } else { other }
    }

    pub fn min(self, other: Self) -> Self {
        if self <= other { self } else { other }
    }

    pub fn times(self, count: u64) -> Self {
        Amount(self.0 * Rational::from_integer(count as i128))
    }

    /// Fixed-point decimal rendering with `places` digits after the point.
    pub fn to_decimal(self, places: u32) -> String {
        let scale = 10i128.pow(places);
        let scaled = (self.0 * Rational::from_integer(scale)).round();
        let v = scaled.to_integer();
        let sign = if v < 0 { "-" } else { "" };
        let v = v.unsigned_abs();
        if places == 0 {
            return format!("{sign}{v}");
        }
        let s = scale as u128;
        format!("{sign}{}.{:0width$}", v / s, v % s, width = places as usize)
    }
}

impl fmt::Debug for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", rational_to_string(&self.0))
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_decimal(6))
    }
}

impl FromStr for Amount {
    type Err = AmountParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_rational(s).map(Amount)
    }
}

impl Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0 + rhs.0)
    }
}

impl Sub for Amount {
    type Output = Amount;
    fn sub(self, rhs: Amount) -> Amount {
        Amount(self.0 - rhs.0)
    }
}

impl AddAssign for Amount {
    fn add_assign(&mut self, rhs: Amount) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Amount {
    fn sub_assign(&mut self, rhs: Amount) {
        self.0 -= rhs.0;
    }
}

impl Neg for Amount {
    type Output = Amount;
    fn neg(self) -> Amount {
        Amount(-self.0)
    }
}

impl Mul<Rational> for Amount {
    type Output = Amount;
    fn mul(self, rhs: Rational) -> Amount {
        Amount(self.0 * rhs)
    }
}

impl Div<i128> for Amount {
    type Output = Amount;
    fn div(self, rhs: i128) -> Amount {
        Amount(self.0 / Rational::from_integer(rhs))
    }
}

impl Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        iter.fold(Amount::ZERO, |a, b| a + b)
    }
}

/// Accepts strings (`"13/256"`, `"0.05"`), integers and floats. Floats are
/// read through their shortest decimal rendering, so `0.05` means 1/20.
struct RationalVisitor;

impl<'de> serde::de::Visitor<'de> for RationalVisitor {
    type Value = Rational;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a number or a string such as \"13/256\"")
    }

    fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Rational, E> {
        parse_rational(v).map_err(E::custom)
    }

    fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Rational, E> {
        Ok(Rational::from_integer(v as i128))
    }

    fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Rational, E> {
        Ok(Rational::from_integer(v as i128))
    }

    fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<Rational, E> {
        if !v.is_finite() {
            return Err(E::custom("non-finite number"));
        }
        parse_rational(&format!("{v:e}")).map_err(E::custom)
    }
}

impl Serialize for Amount {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&rational_to_string(&self.0))
    }
}

impl<'de> Deserialize<'de> for Amount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(RationalVisitor).map(Amount)
    }
}

/// Probability stored as an exact rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Probability(pub Rational);

impl Probability {
    pub fn new(numer: i128, denom: i128) -> Self {
        Probability(Rational::new(numer, denom))
    }

    pub fn to_f64(self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// `floor(p · 2^kappa)`.
    pub fn threshold(self, kappa: u32) -> u64 {
        let scaled = self.0 * Rational::from_integer(1i128 << kappa);
        scaled.floor().to_integer().clamp(0, u64::MAX as i128) as u64
    }
}

impl FromStr for Probability {
    type Err = AmountParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_rational(s).map(Probability)
    }
}

impl Serialize for Probability {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&rational_to_string(&self.0))
    }
}

impl<'de> Deserialize<'de> for Probability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(RationalVisitor).map(Probability)
    }
}

/// Per-query cost constants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTable {
    pub lc: Amount,
    pub fs: Amount,
    pub tx: Amount,
    pub ro: Amount,
    pub ltx: Amount,
}

/// Every protocol symbol of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    /// Bits per digest half.
    pub kappa: u32,
    pub n: u16,
    pub q: u32,
    /// Total number of rounds.
    pub big_n: u64,
    pub p_f: Probability,
    pub p_b: Probability,
    /// Recency parameter; the window is `r · kappa` blocks.
    #[serde(default = "default_r")]
    pub r: u32,
    pub reward_f: Amount,
    pub costs: CostTable,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_r() -> u32 {
    4
}

fn default_delta() -> f64 {
    0.5
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("kappa must be in 1..=64, got {0}")]
    Kappa(u32),
    #[error("need 0 < p_b < p_f < 1/2")]
    Probabilities,
    #[error("probability {0} rounds to a zero threshold at kappa = {1}")]
    ZeroThreshold(&'static str, u32),
    #[error("n must be at least 2")]
    PartyCount,
    #[error("q must be at least 1")]
    Quota,
    #[error("N must be at least 1")]
    Rounds,
    #[error("r must be at least 1")]
    Recency,
    #[error("negative cost or reward: {0}")]
    Negative(&'static str),
}

/// Non-fatal findings of [`ProtocolParams::validate`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamWarnings {
    /// `N <= kappa`: the run is too short to be admissible in the asymptotic sense.
    pub short_horizon: bool,
}

impl ProtocolParams {
    pub fn window(&self) -> u64 {
        self.r as u64 * self.kappa as u64
    }

    pub fn d_pf(&self) -> u64 {
        self.p_f.threshold(self.kappa)
    }

    pub fn d_pb(&self) -> u64 {
        self.p_b.threshold(self.kappa)
    }

    pub fn validate(&self) -> Result<ParamWarnings, ParamError> {
        if self.kappa == 0 || self.kappa > 64 {
            return Err(ParamError::Kappa(self.kappa));
        }
        let half = Rational::new(1, 2);
        let zero = Rational::zero();
        if !(zero < self.p_b.0 && self.p_b.0 < self.p_f.0 && self.p_f.0 < half) {
            return Err(ParamError::Probabilities);
        }
        if self.d_pf() == 0 {
            return Err(ParamError::ZeroThreshold("p_f", self.kappa));
        }
        if self.d_pb() == 0 {
            return Err(ParamError::ZeroThreshold("p_b", self.kappa));
        }
        if self.n < 2 {
            return Err(ParamError::PartyCount);
        }
        if self.q < 1 {
            return Err(ParamError::Quota);
        }
        if self.big_n < 1 {
            return Err(ParamError::Rounds);
        }
        if self.r < 1 {
            return Err(ParamError::Recency);
        }
        let c = &self.costs;
        for (name, v) in [
            ("reward_f", self.reward_f),
            ("c_lc", c.lc),
            ("c_fs", c.fs),
            ("c_tx", c.tx),
            ("c_ro", c.ro),
            ("c_ltx", c.ltx),
        ] {
            if v < Amount::ZERO {
                return Err(ParamError::Negative(name));
            }
        }
        Ok(ParamWarnings { short_horizon: self.big_n <= self.kappa as u64 })
    }

    pub fn parties(&self) -> impl Iterator<Item = PartyId> {
        (0..self.n).map(PartyId)
    }
}

/// A transaction. Only the pool's payment transaction carries `payments`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub id: u64,
    pub payload: Vec<u8>,
    pub payments: Option<Vec<(PartyId, Amount)>>,
}

impl Transaction {
    pub fn plain(id: u64) -> Self {
        Transaction { id, payload: Vec::new(), payments: None }
    }

    /// Amount paid to `party`, summed over entries.
    pub fn paid_to(&self, party: PartyId) -> Option<Amount> {
        let payments = self.payments.as_ref()?;
        let mut hit = false;
        let mut total = Amount::ZERO;
        for (p, a) in payments {
            if *p == party {
                hit = true;
                total += *a;
            }
        }
        hit.then_some(total)
    }

    pub fn is_well_formed(&self) -> bool {
        self.payments
            .as_ref()
            .is_none_or(|ps| ps.iter().all(|(_, a)| *a >= Amount::ZERO))
    }
}

/// The record `m` mined into a fruit: a coinbase plus transactions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    pub coinbase: PartyId,
    pub txs: Vec<Transaction>,
}

impl Record {
    pub fn empty(coinbase: PartyId) -> Self {
        Record { coinbase, txs: Vec::new() }
    }

    /// The `⊥` record of the genesis tuple.
    pub fn bottom() -> Self {
        Record::empty(PartyId::SENTINEL)
    }
}

/// A fruit. Block headers share this exact layout.
#[derive(Clone, Debug, Eq)]
pub struct Fruit {
    pub h_prev: Digest,
    pub h_f: Digest,
    pub eta: u64,
    pub dig: Digest,
    pub record: Arc<Record>,
    pub h: Digest,
}

impl PartialEq for Fruit {
    fn eq(&self, other: &Self) -> bool {
        self.h == other.h
            && self.eta == other.eta
            && self.h_prev == other.h_prev
            && self.h_f == other.h_f
            && self.dig == other.dig
            && (Arc::ptr_eq(&self.record, &other.record) || self.record == other.record)
    }
}

// Only `h` is hashed: equal fruits have equal `h`, and hashing the record is
// the dominant cost of fruit-set membership tests.
impl Hash for Fruit {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.h.hash(state);
    }
}

/// A block: a fruit-shaped header plus the embedded fruit list.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Block {
    pub header: Fruit,
    pub fruits: Vec<Fruit>,
}

impl Block {
    pub fn reference(&self) -> Digest {
        self.header.h
    }
}

/// A chain; `blocks[0]` is genesis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chain {
    pub blocks: Vec<Arc<Block>>,
}

impl Chain {
    pub fn new(genesis: Arc<Block>) -> Self {
        Chain { blocks: vec![genesis] }
    }

    /// Index of the tip; a genesis-only chain has height 0.
    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn tip(&self) -> &Arc<Block> {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn push(&mut self, block: Arc<Block>) {
        self.blocks.push(block);
    }
}

/// Key of the keyed pseudorandom function standing in for the random oracle.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OracleKey(pub [u8; 32]);

impl fmt::Debug for OracleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OracleKey(")?;
        for b in &self.0[..4] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

/// Domain tag of mining queries.
pub const MINING_TAG: u8 = 0x4d;
/// Domain tag of fruit-set digests; differs from [`MINING_TAG`].
pub const FRUIT_SET_TAG: u8 = 0x46;

impl OracleKey {
    pub fn from_seed(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"fruitpool/oracle-key");
        h.update(seed.to_le_bytes());
        OracleKey(h.finalize().into())
    }

    /// `2·kappa`-bit image of `bytes` under domain `tag`.
    pub fn eval(&self, tag: u8, bytes: &[u8], kappa: u32) -> Digest {
        let mut h = Sha256::new();
        h.update(self.0);
        h.update([tag]);
        h.update(bytes);
        let out = h.finalize();
        let mut top = [0u8; 16];
        top.copy_from_slice(&out[..16]);
        let x = u128::from_be_bytes(top) >> (128 - 2 * kappa);
        let mask = if kappa == 64 { u64::MAX } else { (1u64 << kappa) - 1 };
        Digest { prefix: (x >> kappa) as u64, suffix: x as u64 & mask }
    }

    /// `d(F)`: the digest of an ordered fruit list.
    pub fn fruit_set_digest(&self, fruits: &[Fruit], kappa: u32) -> Digest {
        let mut buf = Vec::with_capacity(64 + fruits.len() * 96);
        fruits.encode_to(&mut buf);
        self.eval(FRUIT_SET_TAG, &buf, kappa)
    }
}

/// Byte string hashed by a mining query: `h₋₁‖h_f‖η‖dig‖m`.
pub fn mining_query(h_prev: Digest, h_f: Digest, eta: u64, dig: Digest, record: &Record) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64);
    h_prev.encode_to(&mut buf);
    h_f.encode_to(&mut buf);
    eta.encode_to(&mut buf);
    dig.encode_to(&mut buf);
    record.encode_to(&mut buf);
    buf
}

/// The genesis block: the all-zero tuple with the `⊥` record, its reference
/// computed through the oracle key.
pub fn genesis_block(key: &OracleKey, kappa: u32) -> Arc<Block> {
    let record = Record::bottom();
    let q = mining_query(Digest::ZERO, Digest::ZERO, 0, Digest::ZERO, &record);
    let h = key.eval(MINING_TAG, &q, kappa);
    Arc::new(Block {
        header: Fruit {
            h_prev: Digest::ZERO,
            h_f: Digest::ZERO,
            eta: 0,
            dig: Digest::ZERO,
            record: Arc::new(record),
            h,
        },
        fruits: Vec::new(),
    })
}
