//! Command-line front end.
//!
//! ```text
//! relay-sim <verb> [--config PATH] [--out PATH] [--seed U64] [--rounds N]
//!                  [--mode abstract|concrete] [--set key=value]... [--chain PATH]
//! ```
//!
//! Settings are layered: built-in defaults, then the `--config` file, then
//! command-line flags and `--set` overrides.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::chain::{Chain, ChainError};
use crate::config::{split_assignment, ConfigError, KeyValueConfig};
use crate::economics::{
    check_all, minimal_citation_reward, minimal_miner_rewards, citation_bounds, ConditionReport,
    EconomicParams, EconomicsError, IcReport, CitationBounds, MinerRewardBounds,
};
use crate::protocol::{RoundLog, TransferReason};
use crate::sim::{SimConfig, SimError, Simulation, Summary};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown command `{0}`")]
    UnknownVerb(String),
    #[error("unknown flag `{0}`")]
    UnknownFlag(String),
    #[error("bad override `{key}={value}`: {reason}")]
    BadOverride {
        key: String,
        value: String,
        reason: String,
    },
    #[error("config file not found: {}", .0.display())]
    MissingConfig(PathBuf),
    #[error("{0}")]
    Usage(String),
    /// Help or version text requested; not a failure.
    #[error("{0}")]
    Info(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Economics(#[from] EconomicsError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("conditions not satisfied: {}", .0.join(", "))]
    ConditionsFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => 0,
            CliError::UnknownVerb(_)
            | CliError::UnknownFlag(_)
            | CliError::BadOverride { .. }
            | CliError::MissingConfig(_)
            | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Verb {
    /// Run a multi-round simulation and write metrics.csv and summary.json.
    Simulate,
    /// Evaluate all incentive conditions; exit 1 when any fails.
    CheckIncentives,
    /// Print the minimal feasible reward rates.
    MinRewards,
    /// Run up to the configured round and print its steps.
    TraceRound,
    /// Re-serialize a stored chain (binary to JSON lines and back).
    Export,
}

impl Verb {
    fn uses_sim_config(self) -> bool {
        matches!(self, Verb::Simulate | Verb::TraceRound)
    }
}

#[derive(Debug, Parser)]
#[command(name = "relay-sim", version, about = "Relay-learning protocol simulator")]
struct Args {
    #[command(subcommand)]
    verb: Verb,
    /// key = value settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (simulate) or file (export).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    rounds: Option<String>,
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Repeatable key=value override.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Chain file: written by simulate, read by export.
    #[arg(long, global = true)]
    chain: Option<PathBuf>,
}

/// A parsed invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub verb: Verb,
    pub config_path: Option<PathBuf>,
    pub output_path: Option<PathBuf>,
    pub chain_path: Option<PathBuf>,
    /// Flag and `--set` overrides in application order.
    pub overrides: Vec<(String, String)>,
    pub seed: Option<u64>,
}

fn map_clap(e: clap::Error, argv: &[String]) -> CliError {
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Info(e.to_string()),
        ErrorKind::InvalidSubcommand => {
            let verb = argv.get(1).cloned().unwrap_or_default();
            CliError::UnknownVerb(verb)
        }
        ErrorKind::UnknownArgument => {
            let flag = argv
                .iter()
                .skip(1)
                .find(|a| a.starts_with('-') && !KNOWN_FLAGS.contains(&a.split('=').next().unwrap_or("")))
                .cloned()
                .unwrap_or_default();
            CliError::UnknownFlag(flag)
        }
        _ => CliError::Usage(e.to_string().lines().next().unwrap_or("").to_string()),
    }
}

const KNOWN_FLAGS: [&str; 10] = [
    "--config", "--out", "--seed", "--rounds", "--mode", "--set", "--chain", "--help", "-h", "--version",
];

/// Parses `argv` (program name first) and validates every override.
pub fn parse_invocation(argv: &[String]) -> Result<Command, CliError> {
    let args = Args::try_parse_from(argv).map_err(|e| map_clap(e, argv))?;
    let mut overrides = Vec::new();
    for (key, value) in [("seed", &args.seed), ("rounds", &args.rounds), ("mode", &args.mode)] {
        if let Some(v) = value {
            overrides.push((key.to_string(), v.clone()));
        }
    }
    for raw in &args.overrides {
        let (k, v) = split_assignment(raw).ok_or_else(|| CliError::BadOverride {
            key: raw.clone(),
            value: String::new(),
            reason: "expected key=value".into(),
        })?;
        overrides.push((k, v));
    }
    // Check every override against the defaults so mistakes surface before any work.
    let check = |r: Result<(), ConfigError>, k: &str, v: &str| {
        r.map_err(|e| CliError::BadOverride {
            key: k.to_string(),
            value: v.to_string(),
            reason: e.to_string(),
        })
    };
    let mut sim = SimConfig::default();
    let mut econ = EconomicParams::default();
    for (k, v) in &overrides {
        if args.verb.uses_sim_config() {
            check(sim.set(k, v), k, v)?;
        } else if args.verb == Verb::Export {
            return Err(CliError::BadOverride {
                key: k.clone(),
                value: v.clone(),
                reason: "export takes no settings".into(),
            });
        } else {
            check(econ.set(k, v), k, v)?;
        }
    }
    if let Some(path) = &args.config {
        if !path.is_file() {
            return Err(CliError::MissingConfig(path.clone()));
        }
    }
    if args.verb == Verb::Export && args.chain.is_none() {
        return Err(CliError::Usage("export needs --chain PATH".into()));
    }
    Ok(Command {
        verb: args.verb,
        config_path: args.config,
        output_path: args.out,
        chain_path: args.chain,
        seed: args.seed.as_deref().map(|s| s.parse().expect("validated above")),
        overrides,
    })
}

fn layered<C: KeyValueConfig>(mut base: C, cmd: &Command) -> Result<C, CliError> {
    if let Some(path) = &cmd.config_path {
        base.apply_file(path)?;
    }
    for (k, v) in &cmd.overrides {
        base.set(k, v)?;
    }
    Ok(base)
}

/// Simulation settings after layering defaults, file and overrides.
pub fn sim_config(cmd: &Command) -> Result<SimConfig, CliError> {
    let cfg = layered(SimConfig::default(), cmd)?;
    cfg.validate().map_err(CliError::Usage)?;
    Ok(cfg)
}

/// Economic parameters after layering defaults, file and overrides.
pub fn economic_params(cmd: &Command) -> Result<EconomicParams, CliError> {
    layered(EconomicParams::default(), cmd)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

#[derive(Serialize)]
struct IncentiveOutput<'a> {
    all_satisfied: bool,
    conditions: &'a ConditionReport,
    dominance: &'a [crate::economics::DominanceEntry],
}

#[derive(Serialize)]
struct RewardsOutput {
    r_cited: f64,
    citation_bounds: CitationBounds,
    miners: MinerRewardBounds,
}

/// Runs a parsed command, writing its normal output to `out`.
pub fn execute(cmd: &Command, out: &mut dyn Write) -> Result<(), CliError> {
    let stdout_err = |e: std::io::Error| CliError::Io {
        path: "stdout".into(),
        reason: e.to_string(),
    };
    match cmd.verb {
        Verb::Simulate => {
            let cfg = sim_config(cmd)?;
            let dir = cmd.output_path.clone().unwrap_or_else(|| PathBuf::from("relay-sim-out"));
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let mut sim = Simulation::new(cfg.clone())?;
            sim.run_with(|_, _| {})?;
            let csv = dir.join("metrics.csv");
            let file = std::fs::File::create(&csv).map_err(io_err(&csv))?;
            sim.metrics
                .write_csv(std::io::BufWriter::new(file))
                .map_err(io_err(&csv))?;
            let summary_path = dir.join("summary.json");
            let summary = Summary::new(&cfg, &sim.metrics);
            let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
            std::fs::write(&summary_path, json + "\n").map_err(io_err(&summary_path))?;
            if let Some(chain_path) = &cmd.chain_path {
                write_chain(&sim.state.chain, chain_path)?;
            }
            writeln!(out, "wrote {} and {}", csv.display(), summary_path.display()).map_err(stdout_err)?;
        }
        Verb::CheckIncentives => {
            let p = economic_params(cmd)?;
            let (report, ic) = check_all(&p)?;
            let all = report.all_satisfied() && ic.incentive_compatible();
            let json = serde_json::to_string_pretty(&IncentiveOutput {
                all_satisfied: all,
                conditions: &report,
                dominance: &ic.dominance,
            })
            .expect("report serializes");
            writeln!(out, "{json}").map_err(stdout_err)?;
            if !all {
                return Err(CliError::ConditionsFailed(failure_names(&report, &ic)));
            }
        }
        Verb::MinRewards => {
            let p = economic_params(cmd)?;
            let output = RewardsOutput {
                r_cited: minimal_citation_reward(&p)?,
                citation_bounds: citation_bounds(&p)?,
                miners: minimal_miner_rewards(&p)?,
            };
            let json = serde_json::to_string_pretty(&output).expect("bounds serialize");
            writeln!(out, "{json}").map_err(stdout_err)?;
        }
        Verb::TraceRound => {
            let cfg = sim_config(cmd)?;
            let target = cfg.rounds.max(1);
            let mut sim = Simulation::new(cfg)?;
            let mut last = None;
            for _ in 0..target {
                last = Some(sim.step()?);
            }
            let log = last.expect("at least one round");
            write!(out, "{}", render_trace(&log)).map_err(stdout_err)?;
        }
        Verb::Export => {
            let path = cmd.chain_path.as_ref().expect("checked at parse time");
            let bytes = std::fs::read(path).map_err(io_err(path))?;
            let chain = match Chain::from_bytes(&bytes) {
                Ok(c) => c,
                Err(ChainError::Decode(crate::codec::DecodeError::Magic)) => {
                    let text = String::from_utf8(bytes).map_err(|e| CliError::Io {
                        path: path.display().to_string(),
                        reason: e.to_string(),
                    })?;
                    Chain::from_json_lines(&text)?
                }
                Err(e) => return Err(e.into()),
            };
            match &cmd.output_path {
                Some(p) => write_chain(&chain, p)?,
                None => write!(out, "{}", chain.to_json_lines()).map_err(stdout_err)?,
            }
        }
    }
    Ok(())
}

/// JSON lines for `.jsonl`/`.json` paths, binary otherwise.
fn write_chain(chain: &Chain, path: &Path) -> Result<(), CliError> {
    let json = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"));
    let bytes = if json {
        chain.to_json_lines().into_bytes()
    } else {
        chain.to_bytes()
    };
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn failure_names(report: &ConditionReport, ic: &IcReport) -> Vec<String> {
    let mut names: Vec<String> = report.failed().iter().map(|c| c.to_string()).collect();
    for d in ic.dominance.iter().filter(|d| d.flagged) {
        names.push(format!("{}:N>{}", d.role, d.alternative));
    }
    names
}

/// Human-readable walk through the steps of one round.
pub fn render_trace(log: &RoundLog) -> String {
    let mut s = String::new();
    let bal = |id: crate::ParticipantId| {
        let i = id.0 as usize;
        format!("{:.6} -> {:.6}", log.balances_before[i], log.balances_after[i])
    };
    let ids = |v: &[crate::ParticipantId]| v.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ");
    let _ = writeln!(s, "round {}", log.round);
    let _ = writeln!(
        s,
        " (1) roles: {} MO [{}], {} trainer candidates, {} miners",
        log.roles.mos.len(),
        ids(&log.roles.mos),
        log.roles.trainer_candidates.len(),
        log.roles.miners.len()
    );
    let _ = writeln!(s, "     {} bids", log.bids.len());
    let _ = writeln!(s, " (2) {} deposit contracts", log.contracts.len());
    for c in &log.contracts {
        let _ = writeln!(
            s,
            "     #{} {} <- {}  mo {:.6}  trainer {:.6}",
            c.id, c.mo_id, c.trainer_id, c.mo_amount, c.t_amount
        );
    }
    let _ = writeln!(s, " (3) DB mined by {}  {}", log.miners.dbm, log.block_digests[0]);
    let _ = writeln!(s, " (4) models sent to {} trainers", log.contracts.len());
    let _ = writeln!(
        s,
        " (5) {} of {} trainers produced a model",
        log.success_count(),
        log.outcomes.len()
    );
    let recorded = log.outcomes.iter().filter(|o| o.recorded).count();
    let _ = writeln!(s, " (6) {recorded} model digests broadcast");
    let _ = writeln!(
        s,
        " (7) EB mined by {}  key {:#018x}  {}",
        log.miners.ebm, log.key_id, log.block_digests[1]
    );
    let _ = writeln!(s, " (8) {recorded} models encrypted");
    let _ = writeln!(s, " (9) TB mined by {}  {}", log.miners.tbm, log.block_digests[2]);
    let _ = writeln!(s, "(10) outputs computed on the testing inputs");
    let _ = writeln!(
        s,
        "(11) SB mined by {}  {}  verified {}  top set [{}]",
        log.miners.sbm,
        log.block_digests[3],
        log.verified_count(),
        ids(&log.ranking)
    );
    for o in log.outcomes.iter().filter(|o| o.verdict.is_some()) {
        let _ = writeln!(
            s,
            "     {} v{} {:?} perf {}",
            o.trainer,
            o.version.unwrap_or(0),
            o.verdict.map(|v| v.reason).unwrap(),
            o.performance.map_or("-".to_string(), |p| format!("{p:.6}"))
        );
    }
    let _ = writeln!(
        s,
        "     minted {:.6}  forfeited {:.6}  citations {}",
        log.minted, log.forfeited, log.citations
    );
    let mut touched: Vec<crate::ParticipantId> = log.transfers.iter().map(|t| t.participant).collect();
    touched.sort();
    touched.dedup();
    let _ = writeln!(s, "balances:");
    for id in touched {
        let reasons: Vec<String> = log
            .transfers
            .iter()
            .filter(|t| t.participant == id)
            .map(|t| reason_label(t.reason).to_string())
            .collect();
        let mut reasons_dedup = reasons.clone();
        reasons_dedup.dedup();
        let _ = writeln!(s, "     {id}: {}  ({})", bal(id), reasons_dedup.join(", "));
    }
    s
}

fn reason_label(r: TransferReason) -> &'static str {
    match r {
        TransferReason::MoEscrow => "mo escrow",
        TransferReason::TrainerEscrow => "trainer escrow",
        TransferReason::EscrowReturn => "escrow returned",
        TransferReason::Citation => "citation",
        TransferReason::DepositReward => "DB reward",
        TransferReason::HashReward => "EB reward",
        TransferReason::EncryptionReward => "TB encryption reward",
        TransferReason::CaseReward => "TB case reward",
        TransferReason::VerifiedReward => "SB verified reward",
        TransferReason::VerifyReward => "SB verify reward",
    }
}

/// Entry point used by the binary: parses, executes and reports.
pub fn run(argv: &[String], out: &mut dyn Write) -> i32 {
    let result = parse_invocation(argv).and_then(|cmd| execute(&cmd, out));
    match result {
        Ok(()) => 0,
        Err(CliError::Info(text)) => {
            let _ = write!(out, "{text}");
            0
        }
        Err(e) => {
            eprintln!("relay-sim: {}", e.to_string().lines().next().unwrap_or(""));
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(args: &[&str]) -> Vec<String> {
        std::iter::once("relay-sim").chain(args.iter().copied()).map(String::from).collect()
    }

    #[test]
    fn simulate_with_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("t3.cfg");
        std::fs::write(&cfg, "rounds = 5\n").unwrap();
        let cmd = parse_invocation(&argv(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "7"])).unwrap();
        assert_eq!(cmd.verb, Verb::Simulate);
        assert_eq!(cmd.seed, Some(7));
        let c = sim_config(&cmd).unwrap();
        assert_eq!((c.seed, c.rounds), (7, 5));
    }

    #[test]
    fn min_rewards_verb() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("p.cfg");
        std::fs::write(&cfg, "c_mine = 0.02\n").unwrap();
        let cmd = parse_invocation(&argv(&["min-rewards", "--config", cfg.to_str().unwrap()])).unwrap();
        assert_eq!(cmd.verb, Verb::MinRewards);
    }

    #[test]
    fn non_numeric_rounds_is_bad_override() {
        assert!(matches!(
            parse_invocation(&argv(&["simulate", "--rounds", "abc"])),
            Err(CliError::BadOverride { .. })
        ));
        assert!(matches!(
            parse_invocation(&argv(&["simulate", "--set", "nonsense=1"])),
            Err(CliError::BadOverride { .. })
        ));
        assert!(matches!(
            parse_invocation(&argv(&["check-incentives", "--set", "beta"])),
            Err(CliError::BadOverride { .. })
        ));
    }

    #[test]
    fn unknown_verb_and_flag() {
        assert!(matches!(parse_invocation(&argv(&["fly"])), Err(CliError::UnknownVerb(v)) if v == "fly"));
        assert!(matches!(
            parse_invocation(&argv(&["simulate", "--fast"])),
            Err(CliError::UnknownFlag(f)) if f == "--fast"
        ));
    }

    #[test]
    fn missing_config_file() {
        assert!(matches!(
            parse_invocation(&argv(&["simulate", "--config", "/nonexistent/x.cfg"])),
            Err(CliError::MissingConfig(_))
        ));
    }

    #[test]
    fn precedence_cli_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("layer.cfg");
        std::fs::write(&cfg, "rounds = 11\nseed = 3\ns = 0.25\n").unwrap();
        let cmd = parse_invocation(&argv(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--rounds",
            "12",
            "--set",
            "s=0.4",
        ]))
        .unwrap();
        let c = sim_config(&cmd).unwrap();
        assert_eq!(c.rounds, 12);
        assert_eq!(c.seed, 3);
        assert_eq!(c.s, 0.4);
        assert_eq!(c.q_cases, 100);
    }
}
