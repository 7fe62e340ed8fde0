//! Deterministic simulator for blockchain-coordinated relay learning.
//!
//! A round moves a model from its owners to trainers through four blocks
//! (deposit, encryption, testing, settlement), escrows deposits, verifies
//! submissions over a mock homomorphic scheme, ranks them, and pays citation
//! and miner rewards. The [`economics`] module evaluates participant utilities
//! and the individual-rationality / incentive-compatibility conditions, and
//! [`sim`] runs multi-round experiments and their analyses.

pub mod auction;
pub mod chain;
pub mod cli;
pub mod codec;
pub mod config;
pub mod crypto;
pub mod economics;
pub mod protocol;
pub mod sim;

use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulation handle of a participant. Ordering is the canonical tie-break.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ParticipantId(pub u32);

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl From<u32> for ParticipantId {
    fn from(v: u32) -> Self {
        ParticipantId(v)
    }
}
