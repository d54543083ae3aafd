//! Discrete-round simulator of FruitChain mining with a single mining pool.
//!
//! Parties run solo FruitChain, or a pool as leader or member, against
//! metered oracles. An adversary may reorder messages and apply deviations.
//! Transcripts are deterministic in the seed and feed the accounting and
//! bound evaluators.

pub mod accounting;
pub mod adversary;
pub mod analysis;
pub mod audit;
pub mod chain;
pub mod codec;
pub mod engine;
pub mod network;
pub mod oracles;
pub mod protocols;
pub mod transcript;
pub mod types;

#[cfg(test)]
mod testutil;
