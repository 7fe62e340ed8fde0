//! Participant utilities and the individual-rationality / incentive-compatibility
//! condition set (T1 to T8).
//!
//! Everything here is a pure function of an [`EconomicParams`] value. Money is a
//! single real-valued coin unit; `coin_unit` converts one model-version
//! increment into coins.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::key_value_fields;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EconomicsError {
    #[error("strategy {strategy} is not available to role {role}")]
    InvalidStrategyForRole { role: Role, strategy: Strategy },
    #[error("discount rate beta = {beta} does not give a convergent series")]
    DivergentSeries { beta: f64 },
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("degenerate denominator: {what} is zero")]
    DegenerateDenominator { what: &'static str },
}

/// Every symbol needed by the utility table and the condition set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomicParams {
    pub beta: f64,
    pub s: f64,
    pub b_mo: f64,
    pub b_t: f64,
    pub k_transmit: f64,
    pub k_encrypt: f64,
    pub k_expand: f64,
    pub model_size: f64,
    pub p_comp: f64,
    pub data_volume: f64,
    pub train_time: f64,
    pub c_mine: f64,
    pub c_gen_fhe_key: f64,
    pub c_gen_td_case_unit: f64,
    pub c_verify_unit: f64,
    pub q_selected: f64,
    pub q_selected_mo_avg: f64,
    pub q_selected_t_avg: f64,
    pub q_broadcast: f64,
    pub q_deposit: f64,
    pub q_deposit_less: f64,
    pub q_hash_m: f64,
    pub q_encrypted_m: f64,
    pub q_cases: f64,
    pub q_verified_m: f64,
    pub v_rec_m: u64,
    pub v_now_t: u64,
    pub v_fhem: u64,
    pub v_now_ebm: u64,
    pub coin_unit: f64,
    pub r_cited: f64,
    pub r_deposit: f64,
    pub r_hash_m: f64,
    pub r_encrypted_m: f64,
    pub r_case: f64,
    pub r_verified_m: f64,
    pub r_verify: f64,
}

impl Default for EconomicParams {
    fn default() -> Self {
        Self {
            beta: 0.9,
            s: 0.5,
            b_mo: 0.00025,
            b_t: 2.0,
            k_transmit: 1e-9,
            k_encrypt: 1e-9,
            k_expand: 10.0,
            model_size: 1e6,
            p_comp: 1e-12,
            data_volume: 1e3,
            train_time: 10.0,
            c_mine: 0.0005,
            c_gen_fhe_key: 0.0001,
            c_gen_td_case_unit: 1e-6,
            c_verify_unit: 1e-7,
            q_selected: 4.0,
            q_selected_mo_avg: 2.0,
            q_selected_t_avg: 2.0,
            q_broadcast: 4.0,
            q_deposit: 32.0,
            q_deposit_less: 16.0,
            q_hash_m: 29.0,
            q_encrypted_m: 29.0,
            q_cases: 100.0,
            q_verified_m: 29.0,
            v_rec_m: 10,
            v_now_t: 9,
            v_fhem: 10,
            v_now_ebm: 8,
            coin_unit: 1.0,
            r_cited: 0.001,
            r_deposit: 0.001,
            r_hash_m: 0.001,
            r_encrypted_m: 0.001,
            r_case: 0.001,
            r_verified_m: 0.001,
            r_verify: 0.001,
        }
    }
}

key_value_fields!(EconomicParams {
    beta, s, b_mo, b_t, k_transmit, k_encrypt, k_expand, model_size, p_comp,
    data_volume, train_time, c_mine, c_gen_fhe_key, c_gen_td_case_unit, c_verify_unit,
    q_selected, q_selected_mo_avg, q_selected_t_avg, q_broadcast, q_deposit,
    q_deposit_less, q_hash_m, q_encrypted_m, q_cases, q_verified_m, v_rec_m, v_now_t,
    v_fhem, v_now_ebm, coin_unit, r_cited, r_deposit, r_hash_m, r_encrypted_m, r_case,
    r_verified_m, r_verify,
});

impl EconomicParams {
    /// Checks the type invariants. The `q_deposit_less` window is only
    /// enforced when the NPA strategy is evaluated.
    pub fn validate(&self) -> Result<(), EconomicsError> {
        let non_negative: &[(&'static str, f64)] = &[
            ("beta", self.beta),
            ("s", self.s),
            ("b_mo", self.b_mo),
            ("b_t", self.b_t),
            ("k_transmit", self.k_transmit),
            ("k_encrypt", self.k_encrypt),
            ("k_expand", self.k_expand),
            ("model_size", self.model_size),
            ("p_comp", self.p_comp),
            ("data_volume", self.data_volume),
            ("train_time", self.train_time),
            ("c_mine", self.c_mine),
            ("c_gen_fhe_key", self.c_gen_fhe_key),
            ("c_gen_td_case_unit", self.c_gen_td_case_unit),
            ("c_verify_unit", self.c_verify_unit),
            ("q_selected", self.q_selected),
            ("q_selected_mo_avg", self.q_selected_mo_avg),
            ("q_selected_t_avg", self.q_selected_t_avg),
            ("q_broadcast", self.q_broadcast),
            ("q_deposit", self.q_deposit),
            ("q_deposit_less", self.q_deposit_less),
            ("q_hash_m", self.q_hash_m),
            ("q_encrypted_m", self.q_encrypted_m),
            ("q_cases", self.q_cases),
            ("q_verified_m", self.q_verified_m),
            ("coin_unit", self.coin_unit),
            ("r_cited", self.r_cited),
            ("r_deposit", self.r_deposit),
            ("r_hash_m", self.r_hash_m),
            ("r_encrypted_m", self.r_encrypted_m),
            ("r_case", self.r_case),
            ("r_verified_m", self.r_verified_m),
            ("r_verify", self.r_verify),
        ];
        for &(field, value) in non_negative {
            if !value.is_finite() || value < 0.0 {
                return Err(EconomicsError::InvalidParameter {
                    field,
                    reason: format!("must be finite and non-negative, got {value}"),
                });
            }
        }
        if self.beta >= 1.0 {
            return Err(EconomicsError::DivergentSeries { beta: self.beta });
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(invalid("s", format!("must lie in (0, 1), got {}", self.s)));
        }
        if self.k_expand < 1.0 {
            return Err(invalid("k_expand", format!("must be >= 1, got {}", self.k_expand)));
        }
        if self.v_rec_m < self.v_now_t {
            return Err(invalid("v_rec_m", "older than v_now_t".to_string()));
        }
        if self.v_fhem < self.v_now_ebm {
            return Err(invalid("v_fhem", "older than v_now_ebm".to_string()));
        }
        Ok(())
    }

    fn validate_npa(&self) -> Result<(), EconomicsError> {
        if !(self.q_deposit_less > 0.0 && self.q_deposit_less < self.q_deposit) {
            return Err(invalid(
                "q_deposit_less",
                format!(
                    "must satisfy 0 < q_deposit_less < q_deposit, got {} vs {}",
                    self.q_deposit_less, self.q_deposit
                ),
            ));
        }
        Ok(())
    }

    /// Version gap between the received model and the trainer's own, in coins.
    pub fn trainer_model_gap_value(&self) -> f64 {
        (self.v_rec_m as f64 - self.v_now_t as f64) * self.coin_unit
    }

    fn ebm_model_gap_value(&self) -> f64 {
        (self.v_fhem as f64 - self.v_now_ebm as f64) * self.coin_unit
    }

    fn training_cost(&self) -> f64 {
        self.p_comp * self.data_volume * self.train_time * self.model_size
    }

    fn transmit_cost(&self) -> f64 {
        self.k_transmit * self.model_size
    }

    fn encrypted_transmit_cost(&self) -> f64 {
        self.k_transmit * self.k_expand * self.model_size
    }

    fn discounted(&self, amount: f64) -> f64 {
        amount / (1.0 - self.beta)
    }
}

fn invalid(field: &'static str, reason: String) -> EconomicsError {
    EconomicsError::InvalidParameter { field, reason }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "MO")]
    ModelOwner,
    #[serde(rename = "T")]
    Trainer,
    #[serde(rename = "DBM")]
    DepositMiner,
    #[serde(rename = "EBM")]
    EncryptionMiner,
    #[serde(rename = "TBM")]
    TestingMiner,
    #[serde(rename = "SBM")]
    SettlementMiner,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::ModelOwner,
        Role::Trainer,
        Role::DepositMiner,
        Role::EncryptionMiner,
        Role::TestingMiner,
        Role::SettlementMiner,
    ];

    pub fn strategies(self) -> &'static [Strategy] {
        use Strategy::*;
        match self {
            Role::ModelOwner => &[Normal, NotTransmitting],
            Role::Trainer => &[Normal, NotTraining, NotBroadcasting],
            Role::DepositMiner => &[Normal, NotPackingAll, PackingImproper],
            Role::EncryptionMiner => &[Normal, NotGeneratingKey],
            Role::TestingMiner => &[Normal, ImproperTesting],
            Role::SettlementMiner => &[Normal, ImproperRanking],
        }
    }

    pub fn alternatives(self) -> impl Iterator<Item = Strategy> {
        self.strategies()
            .iter()
            .copied()
            .filter(|s| *s != Strategy::Normal)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::ModelOwner => "MO",
            Role::Trainer => "T",
            Role::DepositMiner => "DBM",
            Role::EncryptionMiner => "EBM",
            Role::TestingMiner => "TBM",
            Role::SettlementMiner => "SBM",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "N")]
    Normal,
    #[serde(rename = "NTm")]
    NotTransmitting,
    #[serde(rename = "NTr")]
    NotTraining,
    #[serde(rename = "NBr")]
    NotBroadcasting,
    #[serde(rename = "NPA")]
    NotPackingAll,
    #[serde(rename = "PI")]
    PackingImproper,
    #[serde(rename = "NG")]
    NotGeneratingKey,
    #[serde(rename = "IT")]
    ImproperTesting,
    #[serde(rename = "IRa")]
    ImproperRanking,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Normal => "N",
            Strategy::NotTransmitting => "NTm",
            Strategy::NotTraining => "NTr",
            Strategy::NotBroadcasting => "NBr",
            Strategy::NotPackingAll => "NPA",
            Strategy::PackingImproper => "PI",
            Strategy::NotGeneratingKey => "NG",
            Strategy::ImproperTesting => "IT",
            Strategy::ImproperRanking => "IRa",
        })
    }
}

/// A strategy tag checked against its role's strategy set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct RoleStrategy {
    role: Role,
    strategy: Strategy,
}

impl RoleStrategy {
    pub fn new(role: Role, strategy: Strategy) -> Result<Self, EconomicsError> {
        if role.strategies().contains(&strategy) {
            Ok(Self { role, strategy })
        } else {
            Err(EconomicsError::InvalidStrategyForRole { role, strategy })
        }
    }

    pub fn normal(role: Role) -> Self {
        Self {
            role,
            strategy: Strategy::Normal,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }
}

/// Utility of `rs` under `p`, one closed form per row of the utility table.
pub fn strategy_utility(rs: RoleStrategy, p: &EconomicParams) -> Result<f64, EconomicsError> {
    p.validate()?;
    if rs.strategy == Strategy::NotPackingAll {
        p.validate_npa()?;
    }
    Ok(utility_unchecked(rs, p))
}

fn utility_unchecked(rs: RoleStrategy, p: &EconomicParams) -> f64 {
    use Strategy::*;
    match (rs.role, rs.strategy) {
        (Role::ModelOwner, Normal) => {
            p.discounted(p.q_selected_mo_avg * p.r_cited)
                - p.q_selected * (1.0 - p.s) * p.b_mo
                - p.transmit_cost()
        }
        (Role::ModelOwner, NotTransmitting) => -p.q_selected * p.b_mo,
        (Role::Trainer, Normal) => {
            let revenue = (p.trainer_model_gap_value() + p.coin_unit)
                + p.discounted(p.q_selected_t_avg * p.beta * p.r_cited);
            let cost = p.training_cost()
                + (1.0 - p.s) * p.b_t
                + p.transmit_cost()
                + p.k_encrypt * p.model_size
                + p.q_broadcast * p.encrypted_transmit_cost();
            revenue - cost
        }
        (Role::Trainer, NotTraining) => {
            p.trainer_model_gap_value() - p.b_t - p.transmit_cost()
        }
        (Role::Trainer, NotBroadcasting) => {
            (p.trainer_model_gap_value() + p.coin_unit)
                - (p.training_cost() + p.b_t + p.transmit_cost())
        }
        (Role::DepositMiner, Normal) => p.q_deposit * p.r_deposit - p.c_mine,
        (Role::DepositMiner, NotPackingAll) => p.q_deposit_less * p.r_deposit - p.c_mine,
        (Role::DepositMiner, PackingImproper) => -p.c_mine,
        (Role::EncryptionMiner, Normal) => {
            (p.q_hash_m * p.r_hash_m + p.ebm_model_gap_value())
                - (p.c_mine + p.encrypted_transmit_cost() + p.c_gen_fhe_key)
        }
        (Role::EncryptionMiner, NotGeneratingKey) => -p.c_mine,
        (Role::TestingMiner, Normal) => {
            p.q_encrypted_m * p.r_encrypted_m + p.q_cases * p.r_case
                - p.c_mine
                - p.q_cases * p.c_gen_td_case_unit
        }
        (Role::TestingMiner, ImproperTesting) => -p.c_mine,
        (Role::SettlementMiner, Normal) => {
            p.q_verified_m * p.r_verified_m + p.q_verified_m * p.q_cases * p.r_verify
                - p.c_mine
                - p.q_verified_m * p.encrypted_transmit_cost()
                - p.q_verified_m * p.q_cases * p.c_verify_unit
        }
        (Role::SettlementMiner, ImproperRanking) => -p.c_mine,
        (role, strategy) => unreachable!("RoleStrategy invariant broken: {role}/{strategy}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
    T8,
}

impl Condition {
    /// T7 and T8 are strict inequalities; the rest are weak.
    pub fn is_strict(self) -> bool {
        matches!(self, Condition::T7 | Condition::T8)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub condition: Condition,
    pub lhs: f64,
    pub bound: f64,
    pub slack: f64,
    pub satisfied: bool,
}

impl ConditionEntry {
    fn new(condition: Condition, lhs: f64, bound: f64) -> Self {
        let slack = lhs - bound;
        let satisfied = if condition.is_strict() {
            slack > 0.0
        } else {
            slack >= 0.0
        };
        Self {
            condition,
            lhs,
            bound,
            slack,
            satisfied,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConditionReport {
    pub entries: Vec<ConditionEntry>,
}

impl ConditionReport {
    pub fn all_satisfied(&self) -> bool {
        self.entries.iter().all(|e| e.satisfied)
    }

    pub fn get(&self, condition: Condition) -> Option<&ConditionEntry> {
        self.entries.iter().find(|e| e.condition == condition)
    }

    pub fn failed(&self) -> Vec<Condition> {
        self.entries
            .iter()
            .filter(|e| !e.satisfied)
            .map(|e| e.condition)
            .collect()
    }
}

/// Evaluates `lhs_rate >= numerator / denominator`. With a zero denominator
/// the inequality is compared in its multiplied-out form instead.
fn rate_condition(
    condition: Condition,
    rate: f64,
    numerator: f64,
    denominator: f64,
) -> ConditionEntry {
    if denominator > 0.0 {
        ConditionEntry::new(condition, rate, numerator / denominator)
    } else {
        ConditionEntry::new(condition, 0.0, numerator)
    }
}

fn t1(p: &EconomicParams) -> ConditionEntry {
    let cost = p.q_selected * (1.0 - p.s) * p.b_mo + p.transmit_cost();
    rate_condition(
        Condition::T1,
        p.r_cited,
        (1.0 - p.beta) * cost,
        p.q_selected_mo_avg,
    )
}

fn t2_excess_cost(p: &EconomicParams) -> f64 {
    p.training_cost()
        + (1.0 - p.s) * p.b_t
        + p.transmit_cost()
        + p.k_encrypt * p.model_size
        + p.q_broadcast * p.encrypted_transmit_cost()
        - (p.trainer_model_gap_value() + p.coin_unit)
}

fn t2(p: &EconomicParams) -> ConditionEntry {
    rate_condition(
        Condition::T2,
        p.r_cited,
        (1.0 - p.beta) * t2_excess_cost(p),
        p.q_selected_t_avg * p.beta,
    )
}

fn t3(p: &EconomicParams) -> ConditionEntry {
    rate_condition(Condition::T3, p.r_deposit, p.c_mine, p.q_deposit)
}

fn t4_excess_cost(p: &EconomicParams) -> f64 {
    p.c_mine + p.encrypted_transmit_cost() + p.c_gen_fhe_key - p.ebm_model_gap_value()
}

fn t4(p: &EconomicParams) -> ConditionEntry {
    rate_condition(Condition::T4, p.r_hash_m, t4_excess_cost(p), p.q_hash_m)
}

fn testing_half_plane(p: &EconomicParams) -> HalfPlane {
    HalfPlane {
        a: p.q_encrypted_m,
        b: p.q_cases,
        c: p.c_mine + p.q_cases * p.c_gen_td_case_unit,
    }
}

fn settlement_half_plane(p: &EconomicParams) -> HalfPlane {
    HalfPlane {
        a: p.q_verified_m,
        b: p.q_verified_m * p.q_cases,
        c: p.c_mine
            + p.q_verified_m * p.encrypted_transmit_cost()
            + p.q_verified_m * p.q_cases * p.c_verify_unit,
    }
}

fn t5(p: &EconomicParams) -> ConditionEntry {
    let plane = testing_half_plane(p);
    ConditionEntry::new(Condition::T5, plane.lhs(p.r_encrypted_m, p.r_case), plane.c)
}

fn t6(p: &EconomicParams) -> ConditionEntry {
    let plane = settlement_half_plane(p);
    ConditionEntry::new(Condition::T6, plane.lhs(p.r_verified_m, p.r_verify), plane.c)
}

fn t7(p: &EconomicParams) -> ConditionEntry {
    ConditionEntry::new(Condition::T7, p.b_t, p.trainer_model_gap_value())
}

fn t8_numerator(p: &EconomicParams) -> f64 {
    (-p.s * p.b_t + p.k_encrypt * p.model_size + p.q_broadcast * p.encrypted_transmit_cost())
        * (1.0 - p.beta)
}

fn t8(p: &EconomicParams) -> ConditionEntry {
    rate_condition(
        Condition::T8,
        p.r_cited,
        t8_numerator(p),
        p.q_selected_t_avg * p.beta,
    )
}

/// Individual rationality: T1 through T6, slack = lhs - bound.
pub fn check_ir(p: &EconomicParams) -> Result<ConditionReport, EconomicsError> {
    p.validate()?;
    Ok(ConditionReport {
        entries: vec![t1(p), t2(p), t3(p), t4(p), t5(p), t6(p)],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceEntry {
    pub role: Role,
    pub alternative: Strategy,
    pub normal_utility: f64,
    pub alternative_utility: f64,
    pub gap: f64,
    /// Set when Normal fails to strictly beat the alternative.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcReport {
    pub conditions: ConditionReport,
    pub dominance: Vec<DominanceEntry>,
}

impl IcReport {
    pub fn incentive_compatible(&self) -> bool {
        self.conditions.all_satisfied() && self.dominance.iter().all(|d| !d.flagged)
    }
}

/// Incentive compatibility: T7, T8 and the pairwise dominance table.
pub fn check_ic(p: &EconomicParams) -> Result<IcReport, EconomicsError> {
    p.validate()?;
    let mut dominance = Vec::new();
    for role in Role::ALL {
        let normal = utility_unchecked(RoleStrategy::normal(role), p);
        for alternative in role.alternatives() {
            let alt = utility_unchecked(RoleStrategy { role, strategy: alternative }, p);
            let gap = normal - alt;
            dominance.push(DominanceEntry {
                role,
                alternative,
                normal_utility: normal,
                alternative_utility: alt,
                gap,
                flagged: !(gap > 0.0),
            });
        }
    }
    Ok(IcReport {
        conditions: ConditionReport {
            entries: vec![t7(p), t8(p)],
        },
        dominance,
    })
}

/// T1 to T8 together.
pub fn check_all(p: &EconomicParams) -> Result<(ConditionReport, IcReport), EconomicsError> {
    let mut ir = check_ir(p)?;
    let ic = check_ic(p)?;
    ir.entries.extend(ic.conditions.entries.iter().cloned());
    Ok((ir, ic))
}

/// The three lower bounds on the citation reward rate from T1, T2 and T8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CitationBounds {
    pub t1: f64,
    pub t2: f64,
    pub t8: f64,
}

impl CitationBounds {
    pub fn max_clamped(&self) -> f64 {
        self.t1.max(self.t2).max(self.t8).max(0.0)
    }
}

pub fn citation_bounds(p: &EconomicParams) -> Result<CitationBounds, EconomicsError> {
    p.validate()?;
    if p.q_selected_mo_avg == 0.0 {
        return Err(EconomicsError::DegenerateDenominator {
            what: "q_selected_mo_avg",
        });
    }
    if p.q_selected_t_avg == 0.0 {
        return Err(EconomicsError::DegenerateDenominator {
            what: "q_selected_t_avg",
        });
    }
    if p.beta == 0.0 {
        return Err(EconomicsError::DegenerateDenominator { what: "beta" });
    }
    Ok(CitationBounds {
        t1: t1(p).bound,
        t2: t2(p).bound,
        t8: t8(p).bound,
    })
}

/// Least citation reward satisfying T1, T2 and T8; negative bounds clamp to 0.
pub fn minimal_citation_reward(p: &EconomicParams) -> Result<f64, EconomicsError> {
    citation_bounds(p).map(|b| b.max_clamped())
}

/// The region `a * x + b * y >= c` over two free reward rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HalfPlane {
    pub fn lhs(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.lhs(x, y) >= self.c
    }

    /// Splits the requirement equally between the two rates: `a*x = b*y = c/2`.
    pub fn equal_split(&self) -> (f64, f64) {
        let half = self.c.max(0.0) / 2.0;
        (half / self.a, half / self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinerRewardBounds {
    pub r_deposit: f64,
    pub r_hash_m: f64,
    /// Over (r_encrypted_m, r_case).
    pub testing: HalfPlane,
    /// Over (r_verified_m, r_verify).
    pub settlement: HalfPlane,
}

pub fn minimal_miner_rewards(p: &EconomicParams) -> Result<MinerRewardBounds, EconomicsError> {
    p.validate()?;
    let counts = [
        ("q_deposit", p.q_deposit),
        ("q_hash_m", p.q_hash_m),
        ("q_encrypted_m", p.q_encrypted_m),
        ("q_cases", p.q_cases),
        ("q_verified_m", p.q_verified_m),
    ];
    for (what, v) in counts {
        if v == 0.0 {
            return Err(EconomicsError::DegenerateDenominator { what });
        }
    }
    Ok(MinerRewardBounds {
        r_deposit: (p.c_mine / p.q_deposit).max(0.0),
        r_hash_m: (t4_excess_cost(p) / p.q_hash_m).max(0.0),
        testing: testing_half_plane(p),
        settlement: settlement_half_plane(p),
    })
}

/// Returns `p` with every reward rate set to its minimal feasible value plus
/// `epsilon`; the two-rate conditions use [`HalfPlane::equal_split`].
pub fn with_minimal_rewards(
    p: &EconomicParams,
    epsilon: f64,
) -> Result<EconomicParams, EconomicsError> {
    let cited = minimal_citation_reward(p)?;
    let miners = minimal_miner_rewards(p)?;
    let (enc, case) = miners.testing.equal_split();
    let (verified, verify) = miners.settlement.equal_split();
    Ok(EconomicParams {
        r_cited: cited + epsilon,
        r_deposit: miners.r_deposit + epsilon,
        r_hash_m: miners.r_hash_m + epsilon,
        r_encrypted_m: enc + epsilon,
        r_case: case + epsilon,
        r_verified_m: verified + epsilon,
        r_verify: verify + epsilon,
        ..p.clone()
    })
}
