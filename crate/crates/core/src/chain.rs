//! Blocks, hash linkage, per-round kind cycle and validation, chain files and
//! simulated proof-of-work winner selection.
//!
//! Every round appends exactly one block of each kind in the order deposit,
//! encryption, testing, settlement. The genesis block sits at height 0 in the
//! settlement slot, so the kind at height `h` is fixed by `h mod 4`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, Decoder, Digest, Encoder};
use crate::crypto::PublicKey;
use crate::protocol::rank_and_select;
use crate::ParticipantId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("block {height}: expected a {expected} block, found {found}")]
    KindOrderViolation {
        height: u64,
        expected: BlockKind,
        found: BlockKind,
    },
    #[error("block {height}: previous digest does not match the tip")]
    BrokenLinkage { height: u64 },
    #[error("block {height}: {reason}")]
    HeaderMismatch { height: u64, reason: String },
    #[error("block {height}: {}", fmt_violations(.violations))]
    PayloadInvariantViolation {
        height: u64,
        violations: Vec<Violation>,
    },
    #[error("invalid genesis block: {0}")]
    InvalidGenesis(String),
    #[error("block {height}: stored digest does not match contents")]
    DigestMismatch { height: u64 },
    #[error("block {height}: encoding is not canonical")]
    NonCanonical { height: u64 },
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
    #[error("line {line}: {reason}")]
    Json { line: usize, reason: String },
    #[error("no candidates to draw a miner from")]
    EmptyCandidateSet,
}

fn fmt_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockKind {
    #[serde(rename = "DB")]
    Deposit,
    #[serde(rename = "EB")]
    Encryption,
    #[serde(rename = "TB")]
    Testing,
    #[serde(rename = "SB")]
    Settlement,
}

impl BlockKind {
    pub const CYCLE: [BlockKind; 4] = [
        BlockKind::Deposit,
        BlockKind::Encryption,
        BlockKind::Testing,
        BlockKind::Settlement,
    ];

    /// Kind required at `height`.
    pub fn at_height(height: u64) -> BlockKind {
        match height % 4 {
            1 => BlockKind::Deposit,
            2 => BlockKind::Encryption,
            3 => BlockKind::Testing,
            _ => BlockKind::Settlement,
        }
    }

    pub fn next(self) -> BlockKind {
        match self {
            BlockKind::Deposit => BlockKind::Encryption,
            BlockKind::Encryption => BlockKind::Testing,
            BlockKind::Testing => BlockKind::Settlement,
            BlockKind::Settlement => BlockKind::Deposit,
        }
    }

    fn tag(self) -> u8 {
        match self {
            BlockKind::Deposit => 0,
            BlockKind::Encryption => 1,
            BlockKind::Testing => 2,
            BlockKind::Settlement => 3,
        }
    }

    fn from_tag(tag: u8, offset: usize) -> Result<Self, DecodeError> {
        Ok(match tag {
            0 => BlockKind::Deposit,
            1 => BlockKind::Encryption,
            2 => BlockKind::Testing,
            3 => BlockKind::Settlement,
            _ => {
                return Err(DecodeError::InvalidTag {
                    what: "block kind",
                    tag,
                    offset,
                })
            }
        })
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::Deposit => "DB",
            BlockKind::Encryption => "EB",
            BlockKind::Testing => "TB",
            BlockKind::Settlement => "SB",
        })
    }
}

/// Round of the block at `height`; genesis is round 0.
pub fn round_of_height(height: u64) -> u64 {
    height.div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub round: u64,
    pub kind: BlockKind,
    pub prev_digest: Digest,
    pub nonce: u64,
    pub timestamp: u64,
    pub miner: ParticipantId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractRef {
    pub id: u64,
    pub mo_id: ParticipantId,
    pub trainer_id: ParticipantId,
    pub mo_amount: f64,
    pub t_amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coinbase {
    pub miner: ParticipantId,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenesisPayload {
    pub initiator: ParticipantId,
    pub model_digest: Digest,
    pub rules: ChainRules,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepositPayload {
    pub contracts: Vec<ContractRef>,
    pub coinbase: Coinbase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncryptionRecord {
    pub prev_owner: ParticipantId,
    pub trainer: ParticipantId,
    pub model_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncryptionPayload {
    pub pk: PublicKey,
    pub records: Vec<EncryptionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncryptedDigest {
    pub trainer: ParticipantId,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestingPayload {
    pub encrypted_model_digests: Vec<EncryptedDigest>,
    pub testing_inputs: Vec<Vec<f64>>,
    pub testing_truths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedEntry {
    pub prev_owner: ParticipantId,
    pub trainer: ParticipantId,
    pub performance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementPayload {
    pub verified: Vec<VerifiedEntry>,
    pub top_set: Vec<ParticipantId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Genesis(GenesisPayload),
    Deposit(DepositPayload),
    Encryption(EncryptionPayload),
    Testing(TestingPayload),
    Settlement(SettlementPayload),
}

impl Payload {
    /// Slot the payload belongs to. Genesis occupies the settlement slot.
    pub fn kind(&self) -> BlockKind {
        match self {
            Payload::Genesis(_) | Payload::Settlement(_) => BlockKind::Settlement,
            Payload::Deposit(_) => BlockKind::Deposit,
            Payload::Encryption(_) => BlockKind::Encryption,
            Payload::Testing(_) => BlockKind::Testing,
        }
    }
}

/// Parameters the chain itself enforces, fixed in the genesis block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainRules {
    pub q_cases: u64,
    pub s: f64,
    pub deposit_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    KindPayloadMismatch { header: BlockKind, payload: BlockKind },
    HashUnchanged { trainer: ParticipantId },
    UnknownPredecessor { prev_owner: ParticipantId },
    DuplicateTrainer { trainer: ParticipantId },
    UncommittedTrainer { trainer: ParticipantId },
    CaseCountMismatch { inputs: usize, truths: usize, expected: u64 },
    UnverifiedInTopSet { trainer: ParticipantId },
    TopSetSizeMismatch { expected: usize, actual: usize },
    TopSetNotRanked,
    NonFinitePerformance { trainer: ParticipantId },
    CoinbaseMismatch { expected: f64, actual: f64 },
    MisplacedGenesis,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::KindPayloadMismatch { header, payload } => {
                write!(f, "header kind {header} carries a {payload} payload")
            }
            Violation::HashUnchanged { trainer } => {
                write!(f, "model digest of {trainer} equals its predecessor")
            }
            Violation::UnknownPredecessor { prev_owner } => {
                write!(f, "no prior model recorded for {prev_owner}")
            }
            Violation::DuplicateTrainer { trainer } => write!(f, "{trainer} listed twice"),
            Violation::UncommittedTrainer { trainer } => {
                write!(f, "{trainer} has no commitment earlier in the round")
            }
            Violation::CaseCountMismatch {
                inputs,
                truths,
                expected,
            } => write!(f, "{inputs} inputs and {truths} truths, expected {expected} cases"),
            Violation::UnverifiedInTopSet { trainer } => {
                write!(f, "top set contains unverified {trainer}")
            }
            Violation::TopSetSizeMismatch { expected, actual } => {
                write!(f, "top set has {actual} entries, expected {expected}")
            }
            Violation::TopSetNotRanked => f.write_str("top set is not the best-ranked prefix"),
            Violation::NonFinitePerformance { trainer } => {
                write!(f, "performance of {trainer} is not finite")
            }
            Violation::CoinbaseMismatch { expected, actual } => {
                write!(f, "coinbase {actual}, expected {expected}")
            }
            Violation::MisplacedGenesis => f.write_str("genesis payload after height 0"),
        }
    }
}

// ---- canonical encoding ----

fn encode_id(e: &mut Encoder, id: ParticipantId) {
    e.u32(id.0);
}

fn decode_id(d: &mut Decoder) -> Result<ParticipantId, DecodeError> {
    d.u32().map(ParticipantId)
}

impl Block {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        let h = &self.header;
        e.u64(h.height)
            .u64(h.round)
            .u8(h.kind.tag())
            .digest(&h.prev_digest)
            .u64(h.nonce)
            .u64(h.timestamp);
        encode_id(&mut e, h.miner);
        match &self.payload {
            Payload::Genesis(g) => {
                e.u8(0);
                encode_id(&mut e, g.initiator);
                e.digest(&g.model_digest)
                    .u64(g.rules.q_cases)
                    .f64(g.rules.s)
                    .f64(g.rules.deposit_reward);
            }
            Payload::Deposit(p) => {
                e.u8(1).len(p.contracts.len());
                for c in &p.contracts {
                    e.u64(c.id);
                    encode_id(&mut e, c.mo_id);
                    encode_id(&mut e, c.trainer_id);
                    e.f64(c.mo_amount).f64(c.t_amount);
                }
                encode_id(&mut e, p.coinbase.miner);
                e.f64(p.coinbase.amount);
            }
            Payload::Encryption(p) => {
                e.u8(2).u64(p.pk.key_id).bytes(&p.pk.bytes).len(p.records.len());
                for r in &p.records {
                    encode_id(&mut e, r.prev_owner);
                    encode_id(&mut e, r.trainer);
                    e.digest(&r.model_digest);
                }
            }
            Payload::Testing(p) => {
                e.u8(3).len(p.encrypted_model_digests.len());
                for r in &p.encrypted_model_digests {
                    encode_id(&mut e, r.trainer);
                    e.digest(&r.digest);
                }
                e.len(p.testing_inputs.len());
                for x in &p.testing_inputs {
                    e.f64s(x);
                }
                e.f64s(&p.testing_truths);
            }
            Payload::Settlement(p) => {
                e.u8(4).len(p.verified.len());
                for v in &p.verified {
                    encode_id(&mut e, v.prev_owner);
                    encode_id(&mut e, v.trainer);
                    e.f64(v.performance);
                }
                e.len(p.top_set.len());
                for t in &p.top_set {
                    encode_id(&mut e, *t);
                }
            }
        }
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Block, DecodeError> {
        let mut d = Decoder::new(bytes);
        let height = d.u64()?;
        let round = d.u64()?;
        let off = d.offset();
        let kind = BlockKind::from_tag(d.u8()?, off)?;
        let header = BlockHeader {
            height,
            round,
            kind,
            prev_digest: d.digest()?,
            nonce: d.u64()?,
            timestamp: d.u64()?,
            miner: decode_id(&mut d)?,
        };
        let off = d.offset();
        let payload = match d.u8()? {
            0 => Payload::Genesis(GenesisPayload {
                initiator: decode_id(&mut d)?,
                model_digest: d.digest()?,
                rules: ChainRules {
                    q_cases: d.u64()?,
                    s: d.f64()?,
                    deposit_reward: d.f64()?,
                },
            }),
            1 => {
                let n = d.len(32)?;
                let contracts = (0..n)
                    .map(|_| {
                        Ok(ContractRef {
                            id: d.u64()?,
                            mo_id: decode_id(&mut d)?,
                            trainer_id: decode_id(&mut d)?,
                            mo_amount: d.f64()?,
                            t_amount: d.f64()?,
                        })
                    })
                    .collect::<Result<_, DecodeError>>()?;
                Payload::Deposit(DepositPayload {
                    contracts,
                    coinbase: Coinbase {
                        miner: decode_id(&mut d)?,
                        amount: d.f64()?,
                    },
                })
            }
            2 => {
                let key_id = d.u64()?;
                let pk = PublicKey {
                    key_id,
                    bytes: d.bytes()?,
                };
                let n = d.len(40)?;
                let records = (0..n)
                    .map(|_| {
                        Ok(EncryptionRecord {
                            prev_owner: decode_id(&mut d)?,
                            trainer: decode_id(&mut d)?,
                            model_digest: d.digest()?,
                        })
                    })
                    .collect::<Result<_, DecodeError>>()?;
                Payload::Encryption(EncryptionPayload { pk, records })
            }
            3 => {
                let n = d.len(36)?;
                let encrypted_model_digests = (0..n)
                    .map(|_| {
                        Ok(EncryptedDigest {
                            trainer: decode_id(&mut d)?,
                            digest: d.digest()?,
                        })
                    })
                    .collect::<Result<_, DecodeError>>()?;
                let n = d.len(8)?;
                let testing_inputs = (0..n).map(|_| d.f64s()).collect::<Result<_, _>>()?;
                Payload::Testing(TestingPayload {
                    encrypted_model_digests,
                    testing_inputs,
                    testing_truths: d.f64s()?,
                })
            }
            4 => {
                let n = d.len(16)?;
                let verified = (0..n)
                    .map(|_| {
                        Ok(VerifiedEntry {
                            prev_owner: decode_id(&mut d)?,
                            trainer: decode_id(&mut d)?,
                            performance: d.f64()?,
                        })
                    })
                    .collect::<Result<_, DecodeError>>()?;
                let n = d.len(4)?;
                let top_set = (0..n).map(|_| decode_id(&mut d)).collect::<Result<_, _>>()?;
                Payload::Settlement(SettlementPayload { verified, top_set })
            }
            tag => {
                return Err(DecodeError::InvalidTag {
                    what: "payload",
                    tag,
                    offset: off,
                })
            }
        };
        d.finish()?;
        Ok(Block { header, payload })
    }
}

pub fn block_digest(block: &Block) -> Digest {
    Digest::of(&block.to_bytes())
}

// ---- chain ----

#[derive(Debug, Clone)]
pub struct Chain {
    rules: ChainRules,
    blocks: Vec<Block>,
    digests: Vec<Digest>,
}

/// Builds a height-0 genesis block.
pub fn genesis_block(initiator: ParticipantId, model_digest: Digest, rules: ChainRules) -> Block {
    Block {
        header: BlockHeader {
            height: 0,
            round: 0,
            kind: BlockKind::Settlement,
            prev_digest: Digest::ZERO,
            nonce: 0,
            timestamp: 0,
            miner: initiator,
        },
        payload: Payload::Genesis(GenesisPayload {
            initiator,
            model_digest,
            rules,
        }),
    }
}

const MAGIC: &[u8; 8] = b"RLCHAIN1";

impl Chain {
    pub fn new(genesis: Block) -> Result<Chain, ChainError> {
        let h = &genesis.header;
        let rules = match &genesis.payload {
            Payload::Genesis(g) => g.rules,
            _ => return Err(ChainError::InvalidGenesis("payload is not genesis".into())),
        };
        if h.height != 0 || h.round != 0 || h.prev_digest != Digest::ZERO {
            return Err(ChainError::InvalidGenesis(
                "genesis needs height 0, round 0 and a zero previous digest".into(),
            ));
        }
        if h.kind != BlockKind::Settlement {
            return Err(ChainError::InvalidGenesis("genesis occupies the SB slot".into()));
        }
        if !(rules.s > 0.0 && rules.s < 1.0) || !(rules.deposit_reward >= 0.0) {
            return Err(ChainError::InvalidGenesis("rules out of range".into()));
        }
        let d = block_digest(&genesis);
        Ok(Chain {
            rules,
            blocks: vec![genesis],
            digests: vec![d],
        })
    }

    /// Rebuilds a chain from blocks, revalidating every append.
    pub fn from_blocks(blocks: impl IntoIterator<Item = Block>) -> Result<Chain, ChainError> {
        let mut it = blocks.into_iter();
        let genesis = it
            .next()
            .ok_or_else(|| ChainError::InvalidGenesis("empty chain".into()))?;
        let mut chain = Chain::new(genesis)?;
        for b in it {
            chain.append_block(b)?;
        }
        Ok(chain)
    }

    pub fn rules(&self) -> &ChainRules {
        &self.rules
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn digests(&self) -> &[Digest] {
        &self.digests
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn tip_digest(&self) -> Digest {
        *self.digests.last().expect("chain always holds genesis")
    }

    pub fn genesis(&self) -> &GenesisPayload {
        match &self.blocks[0].payload {
            Payload::Genesis(g) => g,
            _ => unreachable!("genesis checked on construction"),
        }
    }

    /// Header for the next block, with the logical tick equal to the height.
    pub fn next_header(&self, miner: ParticipantId, nonce: u64) -> BlockHeader {
        let height = self.tip().header.height + 1;
        BlockHeader {
            height,
            round: round_of_height(height),
            kind: BlockKind::at_height(height),
            prev_digest: self.tip_digest(),
            nonce,
            timestamp: height,
            miner,
        }
    }

    pub fn append_block(&mut self, block: Block) -> Result<Digest, ChainError> {
        let tip = &self.tip().header;
        let h = &block.header;
        let expected = tip.kind.next();
        if h.kind != expected {
            return Err(ChainError::KindOrderViolation {
                height: tip.height + 1,
                expected,
                found: h.kind,
            });
        }
        if h.prev_digest != self.tip_digest() {
            return Err(ChainError::BrokenLinkage {
                height: tip.height + 1,
            });
        }
        let mismatch = |reason: &str| ChainError::HeaderMismatch {
            height: tip.height + 1,
            reason: reason.to_string(),
        };
        if h.height != tip.height + 1 {
            return Err(mismatch("height is not tip + 1"));
        }
        if h.round != round_of_height(h.height) {
            return Err(mismatch("round does not match height"));
        }
        if h.timestamp <= tip.timestamp {
            return Err(mismatch("timestamp does not advance"));
        }
        let violations = self.validate_block(&block);
        if !violations.is_empty() {
            return Err(ChainError::PayloadInvariantViolation {
                height: h.height,
                violations,
            });
        }
        let d = block_digest(&block);
        self.blocks.push(block);
        self.digests.push(d);
        Ok(d)
    }

    fn in_round(&self, round: u64, kind: BlockKind) -> Option<&Block> {
        self.blocks
            .iter()
            .rev()
            .take_while(|b| b.header.round == round)
            .find(|b| b.header.kind == kind)
    }

    /// Digest of the model most recently committed by `owner` before `round`.
    fn predecessor_digest(&self, owner: ParticipantId, round: u64) -> Option<Digest> {
        for b in self.blocks.iter().rev() {
            match &b.payload {
                Payload::Encryption(p) if b.header.round < round => {
                    if let Some(r) = p.records.iter().find(|r| r.trainer == owner) {
                        return Some(r.model_digest);
                    }
                }
                Payload::Genesis(g) if g.initiator == owner => return Some(g.model_digest),
                _ => {}
            }
        }
        None
    }

    /// Payload checks for `block` as the next block; an empty list means valid.
    pub fn validate_block(&self, block: &Block) -> Vec<Violation> {
        let mut out = Vec::new();
        let round = block.header.round;
        if block.header.kind != block.payload.kind() {
            out.push(Violation::KindPayloadMismatch {
                header: block.header.kind,
                payload: block.payload.kind(),
            });
            return out;
        }
        match &block.payload {
            Payload::Genesis(_) => out.push(Violation::MisplacedGenesis),
            Payload::Deposit(p) => {
                let mut seen = Vec::new();
                for c in &p.contracts {
                    if seen.contains(&c.trainer_id) {
                        out.push(Violation::DuplicateTrainer { trainer: c.trainer_id });
                    }
                    seen.push(c.trainer_id);
                }
                let expected = p.contracts.len() as f64 * self.rules.deposit_reward;
                if p.coinbase.amount != expected {
                    out.push(Violation::CoinbaseMismatch {
                        expected,
                        actual: p.coinbase.amount,
                    });
                }
            }
            Payload::Encryption(p) => {
                let contracts: Vec<ParticipantId> = match self.in_round(round, BlockKind::Deposit) {
                    Some(Block {
                        payload: Payload::Deposit(d),
                        ..
                    }) => d.contracts.iter().map(|c| c.trainer_id).collect(),
                    _ => Vec::new(),
                };
                let mut seen = Vec::new();
                for r in &p.records {
                    if seen.contains(&r.trainer) {
                        out.push(Violation::DuplicateTrainer { trainer: r.trainer });
                    }
                    seen.push(r.trainer);
                    if !contracts.contains(&r.trainer) {
                        out.push(Violation::UncommittedTrainer { trainer: r.trainer });
                    }
                    match self.predecessor_digest(r.prev_owner, round) {
                        Some(d) if d == r.model_digest => {
                            out.push(Violation::HashUnchanged { trainer: r.trainer })
                        }
                        Some(_) => {}
                        None => out.push(Violation::UnknownPredecessor {
                            prev_owner: r.prev_owner,
                        }),
                    }
                }
            }
            Payload::Testing(p) => {
                let n = self.rules.q_cases;
                if p.testing_inputs.len() as u64 != n || p.testing_truths.len() as u64 != n {
                    out.push(Violation::CaseCountMismatch {
                        inputs: p.testing_inputs.len(),
                        truths: p.testing_truths.len(),
                        expected: n,
                    });
                }
                let broadcast = self.round_trainers_eb(round);
                for r in &p.encrypted_model_digests {
                    if !broadcast.contains(&r.trainer) {
                        out.push(Violation::UncommittedTrainer { trainer: r.trainer });
                    }
                }
            }
            Payload::Settlement(p) => {
                let committed: Vec<ParticipantId> = match self.in_round(round, BlockKind::Testing) {
                    Some(Block {
                        payload: Payload::Testing(t),
                        ..
                    }) => t.encrypted_model_digests.iter().map(|r| r.trainer).collect(),
                    _ => Vec::new(),
                };
                let mut ranked = Vec::new();
                for v in &p.verified {
                    if !committed.contains(&v.trainer) {
                        out.push(Violation::UncommittedTrainer { trainer: v.trainer });
                    }
                    if !v.performance.is_finite() {
                        out.push(Violation::NonFinitePerformance { trainer: v.trainer });
                    }
                    ranked.push((v.trainer, v.performance));
                }
                for t in &p.top_set {
                    if !p.verified.iter().any(|v| v.trainer == *t) {
                        out.push(Violation::UnverifiedInTopSet { trainer: *t });
                    }
                }
                let expected = top_set_size(p.verified.len(), self.rules.s);
                if p.top_set.len() != expected {
                    out.push(Violation::TopSetSizeMismatch {
                        expected,
                        actual: p.top_set.len(),
                    });
                }
                if out.is_empty() && rank_and_select(&ranked, self.rules.s) != p.top_set {
                    out.push(Violation::TopSetNotRanked);
                }
            }
        }
        out
    }

    fn round_trainers_eb(&self, round: u64) -> Vec<ParticipantId> {
        match self.in_round(round, BlockKind::Encryption) {
            Some(Block {
                payload: Payload::Encryption(e),
                ..
            }) => e.records.iter().map(|r| r.trainer).collect(),
            _ => Vec::new(),
        }
    }

    /// Binary file: magic, block count, then per block its digest and raw
    /// canonical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(MAGIC).len(self.blocks.len());
        for (b, d) in self.blocks.iter().zip(&self.digests) {
            e.digest(d).bytes(&b.to_bytes());
        }
        e.finish()
    }

    /// Parses and fully revalidates a binary chain file.
    pub fn from_bytes(bytes: &[u8]) -> Result<Chain, ChainError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(DecodeError::Magic.into());
        }
        let mut d = Decoder::new(&bytes[MAGIC.len()..]);
        let n = d.len(40)?;
        let mut blocks = Vec::with_capacity(n);
        for i in 0..n {
            let stored = d.digest()?;
            let raw = d.bytes()?;
            if Digest::of(&raw) != stored {
                return Err(ChainError::DigestMismatch { height: i as u64 });
            }
            let block = Block::from_bytes(&raw)?;
            if block.to_bytes() != raw {
                return Err(ChainError::NonCanonical { height: i as u64 });
            }
            blocks.push(block);
        }
        d.finish()?;
        Chain::from_blocks(blocks)
    }

    /// One JSON object per block: header fields, hex digest and the payload
    /// tagged by `type`.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (b, d) in self.blocks.iter().zip(&self.digests) {
            let line = BlockLine {
                header: b.header.clone(),
                digest: *d,
                payload: b.payload.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("blocks serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_json_lines(text: &str) -> Result<Chain, ChainError> {
        let mut blocks = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: BlockLine = serde_json::from_str(line).map_err(|e| ChainError::Json {
                line: i + 1,
                reason: e.to_string(),
            })?;
            let block = Block {
                header: parsed.header,
                payload: parsed.payload,
            };
            if block_digest(&block) != parsed.digest {
                return Err(ChainError::DigestMismatch {
                    height: block.header.height,
                });
            }
            blocks.push(block);
        }
        Chain::from_blocks(blocks)
    }
}

#[derive(Serialize, Deserialize)]
struct BlockLine {
    #[serde(flatten)]
    header: BlockHeader,
    digest: Digest,
    payload: Payload,
}

/// `floor(s * n)` clamped to at least 1 when `n > 0`.
pub fn top_set_size(n: usize, s: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let k = (s * n as f64 * (1.0 + 1e-12)).floor() as usize;
    k.clamp(1, n)
}

/// Uniform draw standing in for the proof-of-work winner.
pub fn mine_winner<R: Rng + ?Sized>(candidates: &[ParticipantId], rng: &mut R) -> Result<ParticipantId, ChainError> {
    if candidates.is_empty() {
        return Err(ChainError::EmptyCandidateSet);
    }
    Ok(candidates[rng.gen_range(0..candidates.len())])
}

/// Draws one winner per block kind of a round. Without replacement the four
/// winners are distinct as long as there are at least four candidates.
pub fn draw_round_miners<R: Rng + ?Sized>(
    candidates: &[ParticipantId],
    distinct: bool,
    rng: &mut R,
) -> Result<[ParticipantId; 4], ChainError> {
    let mut pool = candidates.to_vec();
    let mut out = [ParticipantId::default(); 4];
    for slot in &mut out {
        if pool.is_empty() {
            pool = candidates.to_vec();
        }
        let w = mine_winner(&pool, rng)?;
        if distinct {
            pool.retain(|p| *p != w);
        }
        *slot = w;
    }
    Ok(out)
}
