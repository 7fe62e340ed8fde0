//! The round engine: role allocation, bidding and escrow, the four blocks,
//! training, verification, ranking and settlement.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{
    match_round, match_round_second_price, mo_deposit_per_trainer, trainer_bid, AuctionError, Bid,
    MatchResult, MoOffer,
};
use crate::chain::{
    draw_round_miners, genesis_block, top_set_size, Block, Chain, ChainError, ChainRules, Coinbase,
    ContractRef, DepositPayload, EncryptedDigest, EncryptionPayload, EncryptionRecord, Payload,
    SettlementPayload, TestingPayload, VerifiedEntry,
};
use crate::codec::{Digest, Encoder};
use crate::crypto::{
    model_digest, performance_index, verify_submission, CryptoError, HomomorphicScheme, MockFhe,
    ModelWeights, Verdict, VerdictReason,
};
use crate::sim::{Allocation, AuctionRule, Mode, SimConfig};
use crate::ParticipantId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("pool sizes do not add up: expected {expected} participants, have {actual}")]
    PoolSizeMismatch { expected: usize, actual: usize },
    #[error("no contract for trainer {0}")]
    UnknownContract(ParticipantId),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model owner {0} holds no model")]
    OwnerWithoutModel(ParticipantId),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Auction(#[from] AuctionError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pool {
    MinerPool,
    TrainingPool,
}

/// How a trainer behaves when submitting. Anything other than `Honest` is a
/// deviation used to exercise verification; it only takes effect in concrete mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Behavior {
    #[default]
    Honest,
    /// Reports the predecessor model's outputs instead of its own.
    SubstituteOutputs,
    /// Presents a different encrypted model than the one committed.
    SwapModel,
    /// Skips training and perturbs the received model with small noise.
    WhiteNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: ParticipantId,
    pub coins: f64,
    pub model_version: Option<u64>,
    /// Index of the held model in the lineage.
    pub model_node: Option<usize>,
    pub pool: Pool,
    pub last_round_rank: Option<usize>,
    pub citation_coins: f64,
    pub behavior: Behavior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContractStatus {
    Active,
    Returned,
    Forfeited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepositContract {
    pub id: u64,
    pub round: u64,
    pub mo_id: ParticipantId,
    pub trainer_id: ParticipantId,
    pub mo_amount: f64,
    pub t_amount: f64,
    pub status: ContractStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelNode {
    pub owner: ParticipantId,
    pub version: u64,
    pub parent: Option<usize>,
    pub digest: Digest,
    pub weights: Option<ModelWeights>,
}

/// Every model ever produced, each pointing at the model it was trained from.
/// Parents always have smaller indices, so the graph is acyclic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    nodes: Vec<ModelNode>,
}

impl Lineage {
    pub fn with_genesis(owner: ParticipantId, digest: Digest, weights: Option<ModelWeights>) -> Self {
        Lineage {
            nodes: vec![ModelNode {
                owner,
                version: 0,
                parent: None,
                digest,
                weights,
            }],
        }
    }

    pub fn push(
        &mut self,
        owner: ParticipantId,
        parent: usize,
        digest: Digest,
        weights: Option<ModelWeights>,
    ) -> usize {
        let version = self.nodes[parent].version + 1;
        self.nodes.push(ModelNode {
            owner,
            version,
            parent: Some(parent),
            digest,
            weights,
        });
        self.nodes.len() - 1
    }

    pub fn get(&self, id: usize) -> &ModelNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn latest_version(&self) -> u64 {
        self.nodes.iter().map(|n| n.version).max().unwrap_or(0)
    }

    /// Ancestors of `id`, nearest first, ending at the genesis model.
    pub fn ancestors(&self, id: usize) -> impl Iterator<Item = &ModelNode> + '_ {
        std::iter::successors(self.nodes[id].parent, move |&i| self.nodes[i].parent)
            .map(move |i| &self.nodes[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferReason {
    MoEscrow,
    TrainerEscrow,
    EscrowReturn,
    Citation,
    DepositReward,
    HashReward,
    EncryptionReward,
    CaseReward,
    VerifiedReward,
    VerifyReward,
}

impl TransferReason {
    pub fn is_mint(self) -> bool {
        !matches!(
            self,
            TransferReason::MoEscrow | TransferReason::TrainerEscrow | TransferReason::EscrowReturn
        )
    }
}

/// A balance change; positive amounts are credits, negative are debits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub participant: ParticipantId,
    pub amount: f64,
    pub reason: TransferReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRates {
    pub deposit: f64,
    pub hash_m: f64,
    pub encrypted_m: f64,
    pub case: f64,
    pub verified_m: f64,
    pub verify: f64,
    pub coin_unit: f64,
}

/// Winners of the four blocks of a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundMiners {
    pub dbm: ParticipantId,
    pub ebm: ParticipantId,
    pub tbm: ParticipantId,
    pub sbm: ParticipantId,
}

/// Item counts that drive miner rewards.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCounts {
    pub contracts: usize,
    pub records: usize,
    pub encrypted: usize,
    pub cases: usize,
    pub verified: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleAssignment {
    /// Model owners, best-ranked first.
    pub mos: Vec<ParticipantId>,
    pub trainer_candidates: Vec<ParticipantId>,
    pub miners: Vec<ParticipantId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub trainer: ParticipantId,
    pub mo: ParticipantId,
    pub trained: bool,
    /// Passed the digest-difference filter and was recorded in the encryption block.
    pub recorded: bool,
    pub version: Option<u64>,
    pub model_digest: Option<Digest>,
    pub verdict: Option<Verdict>,
    pub performance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u64,
    pub roles: RoleAssignment,
    pub miners: RoundMiners,
    pub bids: Vec<Bid>,
    pub matches: MatchResult,
    pub contracts: Vec<DepositContract>,
    pub block_digests: [Digest; 4],
    pub key_id: u64,
    pub outcomes: Vec<TrainingOutcome>,
    pub ranking: Vec<ParticipantId>,
    pub transfers: Vec<Transfer>,
    pub minted: f64,
    pub forfeited: f64,
    pub citations: f64,
    pub balances_before: Vec<f64>,
    pub balances_after: Vec<f64>,
}

impl RoundLog {
    pub fn credits(&self) -> f64 {
        self.transfers.iter().filter(|t| t.amount > 0.0).map(|t| t.amount).sum()
    }

    pub fn debits(&self) -> f64 {
        self.transfers.iter().filter(|t| t.amount < 0.0).map(|t| -t.amount).sum()
    }

    pub fn success_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.trained).count()
    }

    pub fn verified_count(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.verdict.is_some_and(|v| v.accepted))
            .count()
    }
}

/// Everything that persists between rounds.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    pub round: u64,
    pub participants: Vec<Participant>,
    pub chain: Chain,
    pub lineage: Lineage,
    pub fhe: MockFhe,
    pub initiator: ParticipantId,
    /// Model owners for the next round, best first.
    pub next_mos: Vec<ParticipantId>,
    /// Hidden target the testing truths come from.
    pub target: ModelWeights,
    pub initial_supply: f64,
    pub minted: f64,
    pub forfeited: f64,
    pub citations: f64,
    next_contract_id: u64,
}

impl ProtocolState {
    pub fn new<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<Self, ProtocolError> {
        cfg.validate().map_err(ProtocolError::InvalidConfig)?;
        let initiator = ParticipantId(0);
        let dim = cfg.model_dim;
        let target = ModelWeights::new(
            0,
            (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            rng.gen_range(-1.0..1.0),
        );
        let (digest, weights) = match cfg.mode {
            Mode::Abstract => (abstract_model_digest(initiator, 0, 0), None),
            Mode::Concrete => {
                let m = ModelWeights::new(
                    0,
                    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    rng.gen_range(-1.0..1.0),
                );
                (model_digest(&m)?, Some(m))
            }
        };
        let rules = ChainRules {
            q_cases: cfg.q_cases as u64,
            s: cfg.s,
            deposit_reward: cfg.reward_base,
        };
        let chain = Chain::new(genesis_block(initiator, digest, rules))?;
        let lineage = Lineage::with_genesis(initiator, digest, weights);
        let n = cfg.q_total_participants;
        let mut participants: Vec<Participant> = (0..n as u32)
            .map(|i| Participant {
                id: ParticipantId(i),
                coins: cfg.initial_coins,
                model_version: None,
                model_node: None,
                pool: Pool::MinerPool,
                last_round_rank: None,
                citation_coins: 0.0,
                behavior: Behavior::Honest,
            })
            .collect();
        for p in &mut participants {
            if p.id == initiator || cfg.all_start_with_genesis {
                p.model_version = Some(0);
                p.model_node = Some(0);
            }
        }
        participants[0].last_round_rank = Some(0);
        if cfg.allocation == Allocation::Fixed {
            let mut others: Vec<usize> = (1..n).collect();
            others.shuffle(rng);
            participants[0].pool = Pool::TrainingPool;
            for &i in others.iter().take(cfg.q_mo_and_t - 1) {
                participants[i].pool = Pool::TrainingPool;
            }
        }
        Ok(ProtocolState {
            round: 0,
            initial_supply: cfg.initial_coins * n as f64,
            participants,
            chain,
            lineage,
            fhe: MockFhe::new(),
            initiator,
            next_mos: vec![initiator],
            target,
            minted: 0.0,
            forfeited: 0.0,
            citations: 0.0,
            next_contract_id: 0,
        })
    }

    pub fn participant(&self, id: ParticipantId) -> &Participant {
        &self.participants[id.0 as usize]
    }

    fn participant_mut(&mut self, id: ParticipantId) -> &mut Participant {
        &mut self.participants[id.0 as usize]
    }

    pub fn total_coins(&self) -> f64 {
        self.participants.iter().map(|p| p.coins).sum()
    }

    /// `total - (initial + minted - forfeited)`; zero up to rounding between rounds.
    pub fn conservation_error(&self) -> f64 {
        self.total_coins() - (self.initial_supply + self.minted - self.forfeited)
    }

    /// Weights of the model `id` holds, if any (concrete mode).
    pub fn model_of(&self, id: ParticipantId) -> Option<&ModelWeights> {
        self.participant(id)
            .model_node
            .and_then(|n| self.lineage.get(n).weights.as_ref())
    }

    fn apply(&mut self, transfers: &[Transfer]) {
        for t in transfers {
            self.participant_mut(t.participant).coins += t.amount;
        }
    }
}

fn abstract_model_digest(owner: ParticipantId, version: u64, round: u64) -> Digest {
    let mut e = Encoder::new();
    e.raw(b"abstract-model").u32(owner.0).u64(version).u64(round);
    Digest::of(e.as_slice())
}

fn abstract_ciphertext_digest(key_id: u64, model: &Digest) -> Digest {
    let mut e = Encoder::new();
    e.raw(b"abstract-ct").u64(key_id).digest(model);
    Digest::of(e.as_slice())
}

/// Per-trainer learning rate in [0.3, 0.7], fixed by trainer and round.
fn training_rate(trainer: ParticipantId, round: u64) -> f64 {
    let mut e = Encoder::new();
    e.raw(b"eta").u32(trainer.0).u64(round);
    let d = Digest::of(e.as_slice());
    let u = u64::from_be_bytes(d.0[..8].try_into().unwrap()) as f64 / 2f64.powi(64);
    0.3 + 0.4 * u
}

/// Splits participants into model owners, trainer candidates and miners.
pub fn allocate_roles<R: Rng + ?Sized>(
    state: &mut ProtocolState,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<RoleAssignment, ProtocolError> {
    let n = state.participants.len();
    if n != cfg.q_miners + cfg.q_mo_and_t {
        return Err(ProtocolError::PoolSizeMismatch {
            expected: cfg.q_miners + cfg.q_mo_and_t,
            actual: n,
        });
    }
    let mos = state.next_mos.clone();
    let is_mo = |id: ParticipantId| mos.contains(&id);
    let (mut candidates, mut miners): (Vec<ParticipantId>, Vec<ParticipantId>) = match cfg.allocation {
        Allocation::PerRound => {
            if mos.len() > cfg.q_mo_and_t {
                return Err(ProtocolError::PoolSizeMismatch {
                    expected: cfg.q_mo_and_t,
                    actual: mos.len(),
                });
            }
            let mut others: Vec<ParticipantId> =
                state.participants.iter().map(|p| p.id).filter(|id| !is_mo(*id)).collect();
            others.shuffle(rng);
            let miners = others.split_off(cfg.q_mo_and_t - mos.len());
            (others, miners)
        }
        Allocation::Fixed => state
            .participants
            .iter()
            .filter(|p| !is_mo(p.id))
            .map(|p| p.id)
            .partition(|id| state.participants[id.0 as usize].pool == Pool::TrainingPool),
        Allocation::RoundRobin => {
            let trainer = ParticipantId((state.round % n as u64) as u32);
            let miners = state
                .participants
                .iter()
                .map(|p| p.id)
                .filter(|id| *id != trainer && !is_mo(*id))
                .collect();
            (vec![trainer], miners)
        }
    };
    candidates.sort();
    miners.sort();
    if miners.is_empty() {
        miners = state.participants.iter().map(|p| p.id).collect();
    }
    if cfg.allocation != Allocation::Fixed {
        for p in &mut state.participants {
            p.pool = if miners.contains(&p.id) && !candidates.contains(&p.id) && !mos.contains(&p.id) {
                Pool::MinerPool
            } else {
                Pool::TrainingPool
            };
        }
    }
    Ok(RoleAssignment {
        mos,
        trainer_candidates: candidates,
        miners,
    })
}

/// Ranks verified submissions by ascending error (ties by id) and keeps the
/// best `floor(s * n)`, at least one when any submission verified.
pub fn rank_and_select(verified: &[(ParticipantId, f64)], s: f64) -> Vec<ParticipantId> {
    let mut v = verified.to_vec();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    v.truncate(top_set_size(verified.len(), s));
    v.into_iter().map(|(id, _)| id).collect()
}

/// Settlement transfers. Contracts of top-set trainers are returned and all
/// others forfeited; every ancestor of each top model earns one coin unit;
/// miners earn their per-item rewards.
pub fn settle(
    top_set: &[(ParticipantId, usize)],
    contracts: &mut [DepositContract],
    lineage: &Lineage,
    rates: &RewardRates,
    miners: &RoundMiners,
    counts: &BlockCounts,
) -> Result<Vec<Transfer>, ProtocolError> {
    let mut out = Vec::new();
    for (trainer, _) in top_set {
        if !contracts.iter().any(|c| c.trainer_id == *trainer) {
            return Err(ProtocolError::UnknownContract(*trainer));
        }
    }
    for c in contracts.iter_mut() {
        if top_set.iter().any(|(t, _)| *t == c.trainer_id) {
            c.status = ContractStatus::Returned;
            out.push(Transfer {
                participant: c.mo_id,
                amount: c.mo_amount,
                reason: TransferReason::EscrowReturn,
            });
            out.push(Transfer {
                participant: c.trainer_id,
                amount: c.t_amount,
                reason: TransferReason::EscrowReturn,
            });
        } else {
            c.status = ContractStatus::Forfeited;
        }
    }
    for (_, node) in top_set {
        for ancestor in lineage.ancestors(*node) {
            out.push(Transfer {
                participant: ancestor.owner,
                amount: rates.coin_unit,
                reason: TransferReason::Citation,
            });
        }
    }
    let c = counts;
    let rewards = [
        (miners.dbm, c.contracts as f64 * rates.deposit, TransferReason::DepositReward),
        (miners.ebm, c.records as f64 * rates.hash_m, TransferReason::HashReward),
        (miners.tbm, c.encrypted as f64 * rates.encrypted_m, TransferReason::EncryptionReward),
        (miners.tbm, c.cases as f64 * rates.case, TransferReason::CaseReward),
        (miners.sbm, c.verified as f64 * rates.verified_m, TransferReason::VerifiedReward),
        (
            miners.sbm,
            (c.verified * c.cases) as f64 * rates.verify,
            TransferReason::VerifyReward,
        ),
    ];
    for (participant, amount, reason) in rewards {
        if amount != 0.0 {
            out.push(Transfer {
                participant,
                amount,
                reason,
            });
        }
    }
    Ok(out)
}

struct Submission {
    outcome_idx: usize,
    trainer: ParticipantId,
    mo: ParticipantId,
    parent: usize,
    digest: Digest,
    weights: Option<ModelWeights>,
}

/// Runs one full round and returns its log.
pub fn run_round<R: Rng>(
    state: &mut ProtocolState,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<RoundLog, ProtocolError> {
    state.round += 1;
    let round = state.round;
    let balances_before: Vec<f64> = state.participants.iter().map(|p| p.coins).collect();
    let rates = cfg.reward_rates();
    let mut transfers = Vec::new();

    // (1) roles and bids
    let roles = allocate_roles(state, cfg, rng)?;
    let latest = state.lineage.latest_version();
    let bids = roles
        .trainer_candidates
        .iter()
        .map(|id| {
            let p = state.participant(*id);
            Ok(Bid::new(*id, trainer_bid(p.coins, latest, p.model_version.unwrap_or(0))?))
        })
        .collect::<Result<Vec<_>, AuctionError>>()?;
    let offers = roles
        .mos
        .iter()
        .map(|id| {
            Ok(MoOffer {
                mo_id: *id,
                deposit: mo_deposit_per_trainer(cfg.budget_mo, state.participant(*id).coins, cfg.q_selection_limit)?,
            })
        })
        .collect::<Result<Vec<_>, AuctionError>>()?;
    let matches = match cfg.auction {
        AuctionRule::Simple => match_round(&offers, &bids, cfg.q_selection_limit),
        AuctionRule::SecondPrice => match_round_second_price(&offers, &bids, cfg.q_selection_limit)?,
    };

    // (2) contracts with escrow
    let mut contracts = Vec::with_capacity(matches.pairs.len());
    for pair in &matches.pairs {
        contracts.push(DepositContract {
            id: state.next_contract_id,
            round,
            mo_id: pair.mo_id,
            trainer_id: pair.trainer_id,
            mo_amount: pair.mo_deposit,
            t_amount: pair.t_deposit,
            status: ContractStatus::Active,
        });
        state.next_contract_id += 1;
        transfers.push(Transfer {
            participant: pair.mo_id,
            amount: -pair.mo_deposit,
            reason: TransferReason::MoEscrow,
        });
        transfers.push(Transfer {
            participant: pair.trainer_id,
            amount: -pair.t_deposit,
            reason: TransferReason::TrainerEscrow,
        });
    }
    state.apply(&transfers);

    // (3) deposit block
    let [dbm, ebm, tbm, sbm] = draw_round_miners(&roles.miners, cfg.distinct_miners, rng)?;
    let miners = RoundMiners { dbm, ebm, tbm, sbm };
    let contract_refs = contracts
        .iter()
        .map(|c| ContractRef {
            id: c.id,
            mo_id: c.mo_id,
            trainer_id: c.trainer_id,
            mo_amount: c.mo_amount,
            t_amount: c.t_amount,
        })
        .collect::<Vec<_>>();
    let db = Block {
        header: state.chain.next_header(dbm, rng.gen()),
        payload: Payload::Deposit(DepositPayload {
            coinbase: Coinbase {
                miner: dbm,
                amount: contract_refs.len() as f64 * state.chain.rules().deposit_reward,
            },
            contracts: contract_refs,
        }),
    };
    let db_digest = state.chain.append_block(db)?;

    // (4)-(5) transmission and training
    let round_robin = cfg.allocation == Allocation::RoundRobin;
    let mut outcomes = Vec::with_capacity(contracts.len());
    let mut submissions = Vec::new();
    for c in &contracts {
        let mo_node = state
            .participant(c.mo_id)
            .model_node
            .ok_or(ProtocolError::OwnerWithoutModel(c.mo_id))?;
        let trained = round_robin || rng.gen_bool(cfg.pr_training);
        let behavior = state.participant(c.trainer_id).behavior;
        let mut outcome = TrainingOutcome {
            trainer: c.trainer_id,
            mo: c.mo_id,
            trained,
            recorded: false,
            version: None,
            model_digest: None,
            verdict: None,
            performance: None,
        };
        if trained {
            let parent = state.lineage.get(mo_node);
            let version = parent.version + 1;
            let (digest, weights) = match (&cfg.mode, &parent.weights) {
                (Mode::Concrete, Some(w)) => {
                    let mut m = if behavior == Behavior::WhiteNoise {
                        let mut m = w.clone();
                        for x in m.weights.iter_mut().chain(std::iter::once(&mut m.bias)) {
                            *x += rng.gen_range(-1e-3..1e-3);
                        }
                        m.version = version;
                        m
                    } else {
                        w.trained_toward(&state.target, training_rate(c.trainer_id, round))
                    };
                    m.lineage_parent = Some(c.mo_id);
                    (model_digest(&m)?, Some(m))
                }
                _ => (abstract_model_digest(c.trainer_id, version, round), None),
            };
            outcome.version = Some(version);
            outcome.model_digest = Some(digest);
            submissions.push(Submission {
                outcome_idx: outcomes.len(),
                trainer: c.trainer_id,
                mo: c.mo_id,
                parent: mo_node,
                digest,
                weights,
            });
        }
        outcomes.push(outcome);
    }

    // (6)-(7) digest broadcast, key generation, encryption block
    let key = state.fhe.keygen(rng);
    submissions.retain(|s| s.digest != state.lineage.get(s.parent).digest);
    let records = submissions
        .iter()
        .map(|s| EncryptionRecord {
            prev_owner: s.mo,
            trainer: s.trainer,
            model_digest: s.digest,
        })
        .collect::<Vec<_>>();
    let eb = Block {
        header: state.chain.next_header(ebm, rng.gen()),
        payload: Payload::Encryption(EncryptionPayload {
            pk: key.pk.clone(),
            records,
        }),
    };
    let eb_digest = state.chain.append_block(eb)?;
    let mut nodes = BTreeMap::new();
    for s in &submissions {
        outcomes[s.outcome_idx].recorded = true;
        let node = state.lineage.push(s.trainer, s.parent, s.digest, s.weights.clone());
        nodes.insert(s.trainer, node);
        let version = state.lineage.get(node).version;
        let p = state.participant_mut(s.trainer);
        if p.model_version.is_none_or(|v| v <= version) {
            p.model_version = Some(version);
            p.model_node = Some(node);
        }
    }

    // (8)-(9) encryption of models and testing block
    let dim = cfg.model_dim;
    let testing_inputs: Vec<Vec<f64>> = (0..cfg.q_cases)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let testing_truths = testing_inputs
        .iter()
        .map(|x| state.target.apply(x))
        .collect::<Result<Vec<_>, _>>()?;
    let mut committed = Vec::with_capacity(submissions.len());
    for s in &submissions {
        let digest = match &s.weights {
            Some(w) => state.fhe.encrypt(&key.pk, &w.into())?.digest(),
            None => abstract_ciphertext_digest(key.key_id, &s.digest),
        };
        committed.push(EncryptedDigest {
            trainer: s.trainer,
            digest,
        });
    }
    let tb = Block {
        header: state.chain.next_header(tbm, rng.gen()),
        payload: Payload::Testing(TestingPayload {
            encrypted_model_digests: committed.clone(),
            testing_inputs: testing_inputs.clone(),
            testing_truths: testing_truths.clone(),
        }),
    };
    let tb_digest = state.chain.append_block(tb)?;

    // (10)-(11) outputs, verification, ranking, settlement block
    let mut verified = Vec::new();
    let mut entries = Vec::new();
    for (s, commit) in submissions.iter().zip(&committed) {
        let behavior = state.participant(s.trainer).behavior;
        let (verdict, outputs) = match &s.weights {
            Some(w) => {
                let parent = state.lineage.get(s.parent).weights.as_ref().expect("concrete parent");
                let (presented, claimed_model) = match behavior {
                    Behavior::SwapModel => (state.fhe.encrypt(&key.pk, &parent.into())?, parent),
                    Behavior::SubstituteOutputs => (state.fhe.encrypt(&key.pk, &w.into())?, parent),
                    Behavior::Honest | Behavior::WhiteNoise => (state.fhe.encrypt(&key.pk, &w.into())?, w),
                };
                let outputs = testing_inputs
                    .iter()
                    .map(|x| claimed_model.apply(x))
                    .collect::<Result<Vec<_>, _>>()?;
                let v = verify_submission(&state.fhe, &commit.digest, &presented, &outputs, &key.pk, &testing_inputs);
                (v, Some(outputs))
            }
            None => {
                let presented = abstract_ciphertext_digest(key.key_id, &s.digest);
                let v = if presented == commit.digest {
                    Verdict::OK
                } else {
                    Verdict::reject(VerdictReason::HashMismatch)
                };
                (v, None)
            }
        };
        let outcome = &mut outcomes[s.outcome_idx];
        outcome.verdict = Some(verdict);
        if verdict.accepted {
            let perf = match outputs {
                Some(o) => performance_index(&o, &testing_truths)?,
                None => rng.gen::<f64>(),
            };
            outcome.performance = Some(perf);
            verified.push((s.trainer, perf));
            entries.push(VerifiedEntry {
                prev_owner: s.mo,
                trainer: s.trainer,
                performance: perf,
            });
        }
    }
    let ranking = rank_and_select(&verified, cfg.s);
    let sb = Block {
        header: state.chain.next_header(sbm, rng.gen()),
        payload: Payload::Settlement(SettlementPayload {
            verified: entries,
            top_set: ranking.clone(),
        }),
    };
    let sb_digest = state.chain.append_block(sb)?;

    let top: Vec<(ParticipantId, usize)> = ranking.iter().map(|t| (*t, nodes[t])).collect();
    let counts = BlockCounts {
        contracts: contracts.len(),
        records: submissions.len(),
        encrypted: committed.len(),
        cases: cfg.q_cases,
        verified: verified.len(),
    };
    let settlement = settle(&top, &mut contracts, &state.lineage, &rates, &miners, &counts)?;
    state.apply(&settlement);
    transfers.extend(settlement);

    let mut minted = 0.0;
    let mut citations = 0.0;
    for t in transfers.iter().filter(|t| t.reason.is_mint()) {
        minted += t.amount;
        if t.reason == TransferReason::Citation {
            citations += t.amount;
            state.participant_mut(t.participant).citation_coins += t.amount;
        }
    }
    let forfeited: f64 = contracts
        .iter()
        .filter(|c| c.status == ContractStatus::Forfeited)
        .map(|c| c.mo_amount + c.t_amount)
        .sum();
    state.minted += minted;
    state.forfeited += forfeited;
    state.citations += citations;

    // The encryption miner receives the best model of the round.
    if let Some(&(_, best)) = top.first() {
        let version = state.lineage.get(best).version;
        let p = state.participant_mut(ebm);
        if p.model_version.is_none_or(|v| v < version) {
            p.model_version = Some(version);
            p.model_node = Some(best);
        }
    }

    for p in &mut state.participants {
        p.last_round_rank = None;
    }
    if ranking.is_empty() {
        state.next_mos.truncate(1);
    } else {
        state.next_mos = ranking.clone();
    }
    for (rank, id) in state.next_mos.clone().into_iter().enumerate() {
        state.participant_mut(id).last_round_rank = Some(rank);
    }

    Ok(RoundLog {
        round,
        roles,
        miners,
        bids,
        matches,
        contracts,
        block_digests: [db_digest, eb_digest, tb_digest, sb_digest],
        key_id: key.key_id,
        outcomes,
        ranking,
        transfers,
        minted,
        forfeited,
        citations,
        balances_before,
        balances_after: state.participants.iter().map(|p| p.coins).collect(),
    })
}
