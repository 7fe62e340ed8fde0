//! Deposit-bid trainer selection and the greedy owner/trainer matching.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ParticipantId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuctionError {
    #[error("unit deposit is zero but the budget is {budget}")]
    ZeroUnitDeposit { budget: f64 },
    #[error("selection limit must be at least 1")]
    ZeroLimit,
    #[error("held version {now} is newer than latest version {latest}")]
    VersionOrder { latest: u64, now: u64 },
    #[error("bid from {0} is negative or not finite")]
    InvalidBid(ParticipantId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub trainer_id: ParticipantId,
    pub amount: f64,
}

impl Bid {
    pub fn new(trainer_id: impl Into<ParticipantId>, amount: f64) -> Self {
        Self {
            trainer_id: trainer_id.into(),
            amount,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<ParticipantId>,
    pub deposits: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub mo_id: ParticipantId,
    pub trainer_id: ParticipantId,
    pub mo_deposit: f64,
    pub t_deposit: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<Pair>,
    pub unmatched_trainers: Vec<ParticipantId>,
}

/// A model owner's offer: its id and the deposit it escrows per trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoOffer {
    pub mo_id: ParticipantId,
    pub deposit: f64,
}

/// Relative slack when flooring `budget / b_mo`, so that quotients such as
/// `0.3 / 0.1` count as 3.
const FLOOR_EPS: f64 = 1e-9;

/// Sorts bids by amount descending, ties by ascending id.
pub fn sort_bids(bids: &mut [Bid]) {
    bids.sort_by(|a, b| {
        b.amount
            .total_cmp(&a.amount)
            .then(a.trainer_id.cmp(&b.trainer_id))
    });
}

fn check_bids(bids: &[Bid]) -> Result<(), AuctionError> {
    match bids.iter().find(|b| !(b.amount >= 0.0) || !b.amount.is_finite()) {
        Some(b) => Err(AuctionError::InvalidBid(b.trainer_id)),
        None => Ok(()),
    }
}

/// Number of trainers an owner can afford.
pub fn selection_count(b_mo: f64, budget: f64) -> Result<usize, AuctionError> {
    if budget <= 0.0 {
        return Ok(0);
    }
    if b_mo <= 0.0 {
        return Err(AuctionError::ZeroUnitDeposit { budget });
    }
    let q = budget / b_mo;
    Ok((q * (1.0 + FLOOR_EPS)).floor() as usize)
}

/// Selects trainers by descending bid. Each selected trainer deposits the
/// next-highest bid, and the last selected deposits its own bid.
pub fn select_trainers(bids: &[Bid], b_mo: f64, budget: f64) -> Result<SelectionResult, AuctionError> {
    check_bids(bids)?;
    let k = selection_count(b_mo, budget)?.min(bids.len());
    let mut sorted = bids.to_vec();
    sort_bids(&mut sorted);
    let mut out = SelectionResult::default();
    for i in 0..k {
        out.selected.push(sorted[i].trainer_id);
        let pay = if i + 1 < k { sorted[i + 1].amount } else { sorted[i].amount };
        out.deposits.push(pay);
    }
    Ok(out)
}

/// Per-trainer deposit an owner escrows: `min(budget, coins) / limit`.
pub fn mo_deposit_per_trainer(budget: f64, coins_owned: f64, selection_limit: usize) -> Result<f64, AuctionError> {
    if selection_limit == 0 {
        return Err(AuctionError::ZeroLimit);
    }
    Ok(budget.min(coins_owned).max(0.0) / selection_limit as f64)
}

/// A trainer's bid: `min(coins, latest - now + 1)`.
pub fn trainer_bid(coins_owned: f64, v_latest: u64, v_now: u64) -> Result<f64, AuctionError> {
    if v_now > v_latest {
        return Err(AuctionError::VersionOrder {
            latest: v_latest,
            now: v_now,
        });
    }
    Ok(coins_owned.max(0.0).min((v_latest - v_now + 1) as f64))
}

/// Greedy matching: owners in rank order each take the next `limit` trainers
/// by descending bid. Trainers deposit their own bid.
pub fn match_round(ranked_mos: &[MoOffer], trainer_bids: &[Bid], selection_limit: usize) -> MatchResult {
    let mut sorted = trainer_bids.to_vec();
    sort_bids(&mut sorted);
    let mut out = MatchResult::default();
    let mut rest = sorted.iter();
    'outer: for mo in ranked_mos {
        for _ in 0..selection_limit {
            let Some(bid) = rest.next() else { break 'outer };
            out.pairs.push(Pair {
                mo_id: mo.mo_id,
                trainer_id: bid.trainer_id,
                mo_deposit: mo.deposit,
                t_deposit: bid.amount,
            });
        }
    }
    out.unmatched_trainers = rest.map(|b| b.trainer_id).collect();
    out
}

/// Matching through the selection auction: each owner in rank order runs
/// [`select_trainers`] over the trainers still unmatched, with a budget of
/// `limit` deposits, and matched trainers deposit the auction price.
pub fn match_round_second_price(
    ranked_mos: &[MoOffer],
    trainer_bids: &[Bid],
    selection_limit: usize,
) -> Result<MatchResult, AuctionError> {
    check_bids(trainer_bids)?;
    let mut remaining = trainer_bids.to_vec();
    sort_bids(&mut remaining);
    let mut out = MatchResult::default();
    for mo in ranked_mos {
        if remaining.is_empty() {
            break;
        }
        let take = selection_limit.min(remaining.len());
        let sel = select_trainers(&remaining, 1.0, take as f64)?;
        for (tid, pay) in sel.selected.iter().zip(&sel.deposits) {
            out.pairs.push(Pair {
                mo_id: mo.mo_id,
                trainer_id: *tid,
                mo_deposit: mo.deposit,
                t_deposit: *pay,
            });
        }
        remaining.retain(|b| !sel.selected.contains(&b.trainer_id));
    }
    out.unmatched_trainers = remaining.iter().map(|b| b.trainer_id).collect();
    Ok(out)
}
