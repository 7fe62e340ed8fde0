//! Multi-round simulation, metrics, closed forms and the sustainability and
//! accessibility analyses.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ConfigError;
use crate::protocol::{run_round, ProtocolError, ProtocolState, RewardRates, RoundLog};
use crate::ParticipantId;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("analysis needs at least {needed} rounds, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),* })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($ty::$variant),)*
                    _ => Err(format!("expected one of: {}", [$($text),*].join(", "))),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Models are version numbers; performance is a random draw.
    Abstract,
    /// Toy linear models over the full encryption and verification path.
    Concrete,
}

text_enum!(Mode { Abstract => "abstract", Concrete => "concrete" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuctionRule {
    /// Greedy matching, trainers deposit their own bid.
    Simple,
    /// Each owner runs the selection auction; trainers deposit its price.
    SecondPrice,
}

text_enum!(AuctionRule { Simple => "simple", SecondPrice => "second_price" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Training pool redrawn every round around the carried-over owners.
    PerRound,
    /// Training and miner pools fixed at the start of the run.
    Fixed,
    /// One trainer per round in id rotation, always succeeding, training the
    /// latest model.
    RoundRobin,
}

text_enum!(Allocation { PerRound => "per_round", Fixed => "fixed", RoundRobin => "round_robin" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub q_total_participants: usize,
    pub q_miners: usize,
    pub q_mo_and_t: usize,
    pub q_selection_limit: usize,
    pub budget_mo: f64,
    pub pr_training: f64,
    pub q_cases: usize,
    pub s: f64,
    pub reward_base: f64,
    pub coin_unit: f64,
    pub rounds: usize,
    pub seed: u64,
    pub mode: Mode,
    pub auction: AuctionRule,
    pub allocation: Allocation,
    pub distinct_miners: bool,
    pub initial_coins: f64,
    pub model_dim: usize,
    pub all_start_with_genesis: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            q_total_participants: 256,
            q_miners: 128,
            q_mo_and_t: 128,
            q_selection_limit: 4,
            budget_mo: 0.001,
            pr_training: 0.9,
            q_cases: 100,
            s: 0.5,
            reward_base: 0.001,
            coin_unit: 1.0,
            rounds: 200,
            seed: 0,
            mode: Mode::Abstract,
            auction: AuctionRule::Simple,
            allocation: Allocation::PerRound,
            distinct_miners: true,
            initial_coins: 1.0,
            model_dim: 4,
            all_start_with_genesis: false,
        }
    }
}

crate::config::key_value_fields!(SimConfig {
    q_total_participants,
    q_miners,
    q_mo_and_t,
    q_selection_limit,
    budget_mo,
    pr_training,
    q_cases,
    s,
    reward_base,
    coin_unit,
    rounds,
    seed,
    mode,
    auction,
    allocation,
    distinct_miners,
    initial_coins,
    model_dim,
    all_start_with_genesis,
});

impl SimConfig {
    /// Round-robin setting with `q` participants.
    pub fn round_robin(q: usize, rounds: usize) -> Self {
        SimConfig {
            q_total_participants: q,
            q_miners: q / 2,
            q_mo_and_t: q - q / 2,
            pr_training: 1.0,
            rounds,
            allocation: Allocation::RoundRobin,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.q_total_participants != self.q_miners + self.q_mo_and_t {
            return Err(format!(
                "q_total_participants ({}) must equal q_miners ({}) + q_mo_and_t ({})",
                self.q_total_participants, self.q_miners, self.q_mo_and_t
            ));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(format!("s must lie in (0, 1), got {}", self.s));
        }
        if !(0.0..=1.0).contains(&self.pr_training) {
            return Err(format!("pr_training must lie in [0, 1], got {}", self.pr_training));
        }
        if self.q_selection_limit == 0 || self.q_cases == 0 || self.model_dim == 0 {
            return Err("q_selection_limit, q_cases and model_dim must be positive".into());
        }
        if self.q_mo_and_t == 0 {
            return Err("q_mo_and_t must be positive".into());
        }
        if self.allocation == Allocation::RoundRobin && self.q_total_participants < 2 {
            return Err("round_robin needs at least 2 participants".into());
        }
        for (name, v) in [
            ("budget_mo", self.budget_mo),
            ("reward_base", self.reward_base),
            ("coin_unit", self.coin_unit),
            ("initial_coins", self.initial_coins),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    pub fn reward_rates(&self) -> RewardRates {
        let r = self.reward_base;
        RewardRates {
            deposit: r,
            hash_m: r,
            encrypted_m: r,
            case: r,
            verified_m: r,
            verify: r,
            coin_unit: self.coin_unit,
        }
    }
}

/// Per-round series, recorded after each settlement.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub participants: usize,
    pub round_robin: bool,
    pub initiator: ParticipantId,
    /// `coins[r][i]`: balance of participant `i` after round `r + 1`.
    pub coins: Vec<Vec<f64>>,
    pub versions: Vec<Vec<Option<u64>>>,
    pub citation_coins: Vec<Vec<f64>>,
    pub trainer_count: Vec<usize>,
    pub mo_count: Vec<usize>,
    pub success_count: Vec<usize>,
    pub top_sets: Vec<Vec<ParticipantId>>,
    pub latest_version: Vec<u64>,
    pub minted: Vec<f64>,
    pub forfeited: Vec<f64>,
    pub citation_total: Vec<f64>,
}

impl Metrics {
    pub fn rounds(&self) -> usize {
        self.trainer_count.len()
    }

    fn record(&mut self, log: &RoundLog, state: &ProtocolState) {
        self.coins.push(state.participants.iter().map(|p| p.coins).collect());
        self.versions.push(state.participants.iter().map(|p| p.model_version).collect());
        self.citation_coins
            .push(state.participants.iter().map(|p| p.citation_coins).collect());
        self.trainer_count.push(log.contracts.len());
        self.mo_count.push(log.roles.mos.len());
        self.success_count.push(log.success_count());
        self.top_sets.push(log.ranking.clone());
        self.latest_version.push(state.lineage.latest_version());
        self.minted.push(state.minted);
        self.forfeited.push(state.forfeited);
        self.citation_total.push(state.citations);
    }

    /// Version buckets for round index `r`: latest, latest-1, ..., latest-9,
    /// older, none.
    pub fn version_buckets(&self, r: usize) -> [usize; BUCKETS] {
        let latest = self.latest_version[r];
        let mut out = [0; BUCKETS];
        for v in &self.versions[r] {
            let idx = match v {
                None => BUCKETS - 1,
                Some(v) => (latest.saturating_sub(*v) as usize).min(BUCKETS - 2),
            };
            out[idx] += 1;
        }
        out
    }

    /// Writes `round,participant_id,coins,model_version`; rounds are 1-based
    /// and a missing model is an empty field.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "round,participant_id,coins,model_version")?;
        for (r, (coins, versions)) in self.coins.iter().zip(&self.versions).enumerate() {
            for (i, (c, v)) in coins.iter().zip(versions).enumerate() {
                match v {
                    Some(v) => writeln!(w, "{},{},{},{}", r + 1, i, c, v)?,
                    None => writeln!(w, "{},{},{},", r + 1, i, c)?,
                }
            }
        }
        Ok(())
    }
}

pub const BUCKETS: usize = 12;

pub const BUCKET_LABELS: [&str; BUCKETS] = [
    "latest", "latest-1", "latest-2", "latest-3", "latest-4", "latest-5", "latest-6", "latest-7",
    "latest-8", "latest-9", "older", "none",
];

/// A running simulation.
pub struct Simulation {
    pub config: SimConfig,
    pub state: ProtocolState,
    pub metrics: Metrics,
    rng: ChaCha8Rng,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let state = ProtocolState::new(&config, &mut rng)?;
        let metrics = Metrics {
            participants: config.q_total_participants,
            round_robin: config.allocation == Allocation::RoundRobin,
            initiator: state.initiator,
            ..Metrics::default()
        };
        Ok(Simulation {
            config,
            state,
            metrics,
            rng,
        })
    }

    pub fn step(&mut self) -> Result<RoundLog, SimError> {
        let log = run_round(&mut self.state, &self.config, &mut self.rng)?;
        self.metrics.record(&log, &self.state);
        Ok(log)
    }

    /// Runs the remaining configured rounds, passing each log to `observe`.
    pub fn run_with(&mut self, mut observe: impl FnMut(&RoundLog, &ProtocolState)) -> Result<(), SimError> {
        while self.metrics.rounds() < self.config.rounds {
            let log = self.step()?;
            observe(&log, &self.state);
        }
        Ok(())
    }
}

pub fn run_simulation(config: &SimConfig) -> Result<Metrics, SimError> {
    let mut sim = Simulation::new(config.clone())?;
    sim.run_with(|_, _| {})?;
    Ok(sim.metrics)
}

/// Cumulative citation coins of a participant at its `x`-th upload when `q`
/// participants upload in rotation: `x(x-1)q/2`.
pub fn closed_form_coins(x: u64, q: u64) -> f64 {
    (x * x.saturating_sub(1) / 2 * q) as f64
}

/// Stable trainer count `q / (1 + s)`.
pub fn trainer_fixed_point(q_mo_and_t: f64, s: f64) -> f64 {
    q_mo_and_t / (1.0 + s)
}

/// Iterates `N_{r+1} = Q - s * N_r` from `n0`, returning `rounds + 1` values.
pub fn trainer_count_recurrence(q: f64, s: f64, n0: f64, rounds: usize) -> Vec<f64> {
    std::iter::successors(Some(n0), |n| Some(q - s * n))
        .take(rounds + 1)
        .collect()
}

/// Next trainer count when every trainer succeeds: the top set becomes the
/// owners, and the rest of the pool trains up to owner capacity.
pub fn integer_trainer_step(q: usize, s: f64, limit: usize, n: usize) -> usize {
    let owners = crate::chain::top_set_size(n, s).max(1);
    (q.saturating_sub(owners)).min(limit * owners)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormCheck {
    pub uploads_checked: usize,
    pub mismatches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SustainabilityReport {
    pub rounds: usize,
    /// Mean of `C[r+1] - 2 C[r] + C[r-1]` over the second half of the run,
    /// where `C` is the cumulative citation total.
    pub mean_second_difference: f64,
    pub accelerating: bool,
    pub closed_form: Option<ClosedFormCheck>,
}

pub const MIN_SUSTAINABILITY_ROUNDS: usize = 20;
pub const MIN_ACCESSIBILITY_ROUNDS: usize = 50;

/// Mean second difference of `series` over indices `from..` (needs neighbours).
pub fn mean_second_difference(series: &[f64], from: usize) -> f64 {
    let from = from.max(1);
    let diffs: Vec<f64> = (from..series.len().saturating_sub(1))
        .map(|i| series[i + 1] - 2.0 * series[i] + series[i - 1])
        .collect();
    if diffs.is_empty() {
        return 0.0;
    }
    diffs.iter().sum::<f64>() / diffs.len() as f64
}

pub fn analyze_sustainability(m: &Metrics) -> Result<SustainabilityReport, SimError> {
    let n = m.rounds();
    if n < MIN_SUSTAINABILITY_ROUNDS {
        return Err(SimError::InsufficientData {
            needed: MIN_SUSTAINABILITY_ROUNDS,
            got: n,
        });
    }
    let mut series = Vec::with_capacity(n + 1);
    series.push(0.0);
    series.extend_from_slice(&m.citation_total);
    let msd = mean_second_difference(&series, series.len() / 2);
    Ok(SustainabilityReport {
        rounds: n,
        mean_second_difference: msd,
        accelerating: msd > 0.0,
        closed_form: m.round_robin.then(|| check_closed_form(m)),
    })
}

/// Compares each uploader's citation coins at every upload with `x(x-1)q/2`.
pub fn check_closed_form(m: &Metrics) -> ClosedFormCheck {
    let q = m.participants as u64;
    let mut uploads = vec![0u64; m.participants];
    uploads[m.initiator.0 as usize] = 1;
    let mut check = ClosedFormCheck {
        uploads_checked: 0,
        mismatches: 0,
    };
    for (r, top) in m.top_sets.iter().enumerate() {
        for t in top {
            let i = t.0 as usize;
            uploads[i] += 1;
            check.uploads_checked += 1;
            if m.citation_coins[r][i] != closed_form_coins(uploads[i], q) {
                check.mismatches += 1;
            }
        }
    }
    check
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessibilityReport {
    pub rounds: usize,
    pub last_quartile_mean: f64,
    pub fixed_point: f64,
    pub relative_deviation: f64,
    pub converged: bool,
    pub bucket_labels: Vec<String>,
    /// Participants per bucket, one row per round.
    pub buckets: Vec<[usize; BUCKETS]>,
}

/// Band around the fixed point inside which the trainer count counts as stable.
pub const CONVERGENCE_BAND: f64 = 0.10;

pub fn analyze_accessibility(m: &Metrics, cfg: &SimConfig) -> Result<AccessibilityReport, SimError> {
    let n = m.rounds();
    if n < MIN_ACCESSIBILITY_ROUNDS {
        return Err(SimError::InsufficientData {
            needed: MIN_ACCESSIBILITY_ROUNDS,
            got: n,
        });
    }
    let tail = &m.trainer_count[n - n / 4..];
    let mean = tail.iter().sum::<usize>() as f64 / tail.len() as f64;
    let fixed_point = trainer_fixed_point(cfg.q_mo_and_t as f64, cfg.s);
    let relative_deviation = if fixed_point > 0.0 {
        (mean - fixed_point) / fixed_point
    } else {
        mean
    };
    Ok(AccessibilityReport {
        rounds: n,
        last_quartile_mean: mean,
        fixed_point,
        relative_deviation,
        converged: relative_deviation.abs() <= CONVERGENCE_BAND,
        bucket_labels: BUCKET_LABELS.iter().map(|s| s.to_string()).collect(),
        buckets: (0..n).map(|r| m.version_buckets(r)).collect(),
    })
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub config: SimConfig,
    pub rounds: usize,
    pub trainer_count: Vec<usize>,
    pub mo_count: Vec<usize>,
    pub success_count: Vec<usize>,
    pub citation_total: Vec<f64>,
    pub minted: f64,
    pub forfeited: f64,
    pub final_bucket_shares: Vec<f64>,
    pub sustainability: Option<SustainabilityReport>,
    pub accessibility: Option<AccessibilityReport>,
}

impl Summary {
    pub fn new(cfg: &SimConfig, m: &Metrics) -> Self {
        let final_bucket_shares = if m.rounds() > 0 {
            let b = m.version_buckets(m.rounds() - 1);
            b.iter().map(|c| *c as f64 / m.participants as f64).collect()
        } else {
            Vec::new()
        };
        let mut accessibility = analyze_accessibility(m, cfg).ok();
        if let Some(a) = &mut accessibility {
            a.buckets.clear();
        }
        Summary {
            config: cfg.clone(),
            rounds: m.rounds(),
            trainer_count: m.trainer_count.clone(),
            mo_count: m.mo_count.clone(),
            success_count: m.success_count.clone(),
            citation_total: m.citation_total.clone(),
            minted: m.minted.last().copied().unwrap_or(0.0),
            forfeited: m.forfeited.last().copied().unwrap_or(0.0),
            final_bucket_shares,
            sustainability: analyze_sustainability(m).ok(),
            accessibility,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::KeyValueConfig;

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_coins(1, 17), 0.0);
        assert_eq!(closed_form_coins(3, 4), 12.0);
        assert_eq!(closed_form_coins(10, 256), 11520.0);
    }

    #[test]
    fn fixed_point_examples() {
        assert!((trainer_fixed_point(128.0, 0.5) - 85.333_333_333_333_33).abs() < 1e-12);
        assert_eq!(trainer_fixed_point(40.0, 0.0), 40.0);
        assert_eq!(trainer_fixed_point(0.0, 0.5), 0.0);
    }

    #[test]
    fn recurrence_converges_to_fixed_point() {
        let series = trainer_count_recurrence(128.0, 0.5, 4.0, 60);
        assert!((series[60] - trainer_fixed_point(128.0, 0.5)).abs() < 1e-9);
    }

    #[test]
    fn defaults_match_table() {
        let c = SimConfig::default();
        assert_eq!(c.q_total_participants, 256);
        assert_eq!(c.q_miners, 128);
        assert_eq!(c.q_mo_and_t, 128);
        assert_eq!(c.q_selection_limit, 4);
        assert_eq!(c.budget_mo, 0.001);
        assert_eq!(c.pr_training, 0.9);
        assert_eq!(c.q_cases, 100);
        assert_eq!(c.s, 0.5);
        assert_eq!(c.reward_base, 0.001);
        assert_eq!(c.coin_unit, 1.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_keys_and_enums_parse() {
        let mut c = SimConfig::default();
        c.apply_text("mode = concrete\nauction = second_price\nallocation = fixed\nseed = 9\ndistinct_miners = false")
            .unwrap();
        assert_eq!(c.mode, Mode::Concrete);
        assert_eq!(c.auction, AuctionRule::SecondPrice);
        assert_eq!(c.allocation, Allocation::Fixed);
        assert_eq!(c.seed, 9);
        assert!(!c.distinct_miners);
        assert!(matches!(c.set("mode", "quantum"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(c.set("rounds", "abc"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(c.set("round", "3"), Err(ConfigError::UnknownKey { .. })));
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            SimConfig { q_miners: 100, ..SimConfig::default() },
            SimConfig { s: 1.0, ..SimConfig::default() },
            SimConfig { pr_training: 1.5, ..SimConfig::default() },
            SimConfig { q_selection_limit: 0, ..SimConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn zero_rounds_gives_empty_series() {
        let m = run_simulation(&SimConfig { rounds: 0, ..SimConfig::default() }).unwrap();
        assert_eq!(m.rounds(), 0);
        assert!(m.coins.is_empty());
    }

    #[test]
    fn linear_income_is_not_accelerating() {
        let m = Metrics {
            trainer_count: vec![0; 40],
            citation_total: (1..=40).map(|r| 3.0 * r as f64).collect(),
            ..Metrics::default()
        };
        let r = analyze_sustainability(&m).unwrap();
        assert_eq!(r.mean_second_difference, 0.0);
        assert!(!r.accelerating);
    }

    #[test]
    fn analyses_need_enough_rounds() {
        let m = Metrics {
            trainer_count: vec![0; 10],
            ..Metrics::default()
        };
        assert!(matches!(analyze_sustainability(&m), Err(SimError::InsufficientData { needed: 20, got: 10 })));
        assert!(matches!(
            analyze_accessibility(&m, &SimConfig::default()),
            Err(SimError::InsufficientData { needed: 50, .. })
        ));
    }

    #[test]
    fn integer_step_without_capacity_limit() {
        assert_eq!(integer_trainer_step(128, 0.5, 4, 88), 128 - 44);
        assert_eq!(integer_trainer_step(128, 0.5, 4, 4), 8);
        assert_eq!(integer_trainer_step(128, 0.5, 4, 0), 4);
    }
}
