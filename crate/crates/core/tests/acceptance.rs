//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{oracle_utility, random_params};
use relay_sim::auction::{select_trainers, Bid};
use relay_sim::chain::{BlockKind, Chain, ChainError};
use relay_sim::crypto::VerdictReason;
use relay_sim::economics::{
    check_all, citation_bounds, minimal_miner_rewards, strategy_utility, with_minimal_rewards, Condition,
    EconomicParams, Role, RoleStrategy, Strategy,
};
use relay_sim::protocol::Behavior;
use relay_sim::sim::{
    analyze_accessibility, analyze_sustainability, check_closed_form, run_simulation, Allocation, Mode, SimConfig,
    Simulation, BUCKETS,
};
use relay_sim::ParticipantId;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, format!("took {took:?}, limit {limit:?}"))
}

fn table_three(seed: u64) -> SimConfig {
    SimConfig {
        rounds: 200,
        seed,
        ..SimConfig::default()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = SimConfig::round_robin(8, 80);
    let m = run_simulation(&cfg).map_err(|e| e.to_string())?;
    let check = check_closed_form(&m);
    within(Duration::from_secs(1), start)?;
    ensure(check.uploads_checked == 80, format!("{} uploads checked", check.uploads_checked))?;
    ensure(check.mismatches == 0, format!("{} mismatches", check.mismatches))?;
    // Independent recount: participant i's x-th upload happens in round (x-1)*8 + i.
    for i in 0..8usize {
        let mut x = if i == 0 { 1 } else { 0 };
        for r in 1..=80usize {
            if r % 8 == i {
                x += 1;
                let expected = (x * (x - 1) * 8 / 2) as f64;
                ensure(
                    m.citation_coins[r - 1][i] == expected,
                    format!("p{i} upload {x}: {} vs {expected}", m.citation_coins[r - 1][i]),
                )?;
            }
        }
    }
    Ok(format!("80 uploads exact, {:?}", start.elapsed()))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let m = run_simulation(&table_three(7)).map_err(|e| e.to_string())?;
    within(Duration::from_secs(30), start)?;
    let c = &m.citation_total;
    // Rounds 100..=200 are indices 99..=199.
    let diffs: Vec<f64> = (100..199).map(|i| c[i + 1] - 2.0 * c[i] + c[i - 1]).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    ensure(mean > 0.0, format!("mean second difference {mean}"))?;
    let report = analyze_sustainability(&m).map_err(|e| e.to_string())?;
    ensure(report.accelerating, "analysis reports no acceleration")?;
    Ok(format!("mean second difference {mean:.3}"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let cfg = table_three(7);
    let m = run_simulation(&cfg).map_err(|e| e.to_string())?;
    within(Duration::from_secs(30), start)?;
    let tail = &m.trainer_count[150..];
    let mean = tail.iter().sum::<usize>() as f64 / tail.len() as f64;
    let target = 128.0 / 1.5;
    ensure(
        (mean - target).abs() <= 0.1 * target,
        format!("last-50 mean {mean} outside [{:.1}, {:.1}]", 0.9 * target, 1.1 * target),
    )?;
    let report = analyze_accessibility(&m, &cfg).map_err(|e| e.to_string())?;
    ensure(report.converged, "analysis reports no convergence")?;
    Ok(format!("last-50 mean {mean:.2} vs {target:.2}"))
}

fn criterion_4() -> Outcome {
    let m = run_simulation(&table_three(7)).map_err(|e| e.to_string())?;
    let q = m.participants as f64;
    let shares: Vec<[f64; BUCKETS]> = (0..m.rounds())
        .map(|r| m.version_buckets(r).map(|c| c as f64 / q))
        .collect();
    for (r, row) in shares.iter().enumerate() {
        ensure((row.iter().sum::<f64>() - 1.0).abs() < 1e-12, format!("round {} buckets do not partition", r + 1))?;
    }
    let mut min_recent = 1.0f64;
    for row in &shares[149..] {
        ensure(row[BUCKETS - 1] == 0.0, "none bucket not empty after round 150")?;
        let recent: f64 = row[..10].iter().sum();
        min_recent = min_recent.min(recent);
        ensure(recent > 0.9, format!("latest-10 share {recent}"))?;
    }
    let mut worst = 0.0f64;
    for b in 0..BUCKETS {
        let col: Vec<f64> = shares[170..].iter().map(|row| row[b]).collect();
        let spread = col.iter().cloned().fold(f64::MIN, f64::max) - col.iter().cloned().fold(f64::MAX, f64::min);
        worst = worst.max(spread);
    }
    ensure(worst <= 0.10, format!("bucket spread {worst} over the last 30 rounds"))?;
    Ok(format!(
        "min latest-10 share {:.1}%, max bucket spread {:.1} pp",
        100.0 * min_recent,
        100.0 * worst
    ))
}

fn alternatives(role: Role) -> Vec<Strategy> {
    role.alternatives().collect()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..10_000 {
        let mut p = random_params(&mut rng);
        p.b_t = (p.v_rec_m - p.v_now_t) as f64 * p.coin_unit + rng.gen_range(1e-6..5.0);
        let p = with_minimal_rewards(&p, rng.gen_range(1e-6..1e-2)).map_err(|e| e.to_string())?;
        let (report, ic) = check_all(&p).map_err(|e| e.to_string())?;
        ensure(report.all_satisfied() && ic.incentive_compatible(), "projection left the feasible region")?;
        for role in Role::ALL {
            let n = strategy_utility(RoleStrategy::normal(role), &p).map_err(|e| e.to_string())?;
            let oracle = oracle_utility(role, Strategy::Normal, &p);
            ensure((n - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()), format!("{role} N {n} vs oracle {oracle}"))?;
            if n < 0.0 {
                violations += 1;
            }
            for alt in alternatives(role) {
                let u = strategy_utility(RoleStrategy::new(role, alt).unwrap(), &p).unwrap();
                let o = oracle_utility(role, alt, &p);
                ensure((u - o).abs() <= 1e-9 * (1.0 + o.abs()), format!("{role} {alt} {u} vs oracle {o}"))?;
                if !(n > u) {
                    violations += 1;
                }
            }
        }
    }
    ensure(violations == 0, format!("{violations} violations"))?;

    let base = EconomicParams::default();
    let tiny = 1e-9;
    let u = |role, strategy, p: &EconomicParams| oracle_utility(role, strategy, p);
    let feasible = with_minimal_rewards(&base, 1e-6).map_err(|e| e.to_string())?;

    // T1: citation reward just below its bound.
    let mut p = feasible.clone();
    p.r_cited = citation_bounds(&p).unwrap().t1 - tiny;
    ensure(u(Role::ModelOwner, Strategy::Normal, &p) < 0.0, "T1 violation kept MO utility non-negative")?;
    ensure(check_all(&p).unwrap().0.failed().contains(&Condition::T1), "T1 not reported")?;

    // T2: training cost dominates, citation reward just below the T2 bound.
    let mut p = EconomicParams {
        p_comp: 1e-6,
        ..feasible.clone()
    };
    let b = citation_bounds(&p).unwrap();
    ensure(b.t2 > b.t1 && b.t2 > b.t8, "T2 does not bind")?;
    p.r_cited = b.t2 - tiny;
    ensure(u(Role::Trainer, Strategy::Normal, &p) < 0.0, "T2 violation kept trainer utility non-negative")?;

    // T3
    let mut p = feasible.clone();
    p.r_deposit = p.c_mine / p.q_deposit - 1e-6;
    ensure(u(Role::DepositMiner, Strategy::Normal, &p) < 0.0, "T3 violation kept DBM utility non-negative")?;

    // T4: no model-value windfall, so the mining costs must be covered by the rate.
    let mut p = EconomicParams {
        v_now_ebm: 10,
        ..feasible.clone()
    };
    p.r_hash_m = minimal_miner_rewards(&p).unwrap().r_hash_m - 1e-6;
    ensure(p.r_hash_m >= 0.0, "T4 bound clamped")?;
    ensure(u(Role::EncryptionMiner, Strategy::Normal, &p) < 0.0, "T4 violation kept EBM utility non-negative")?;

    // T7: deposit below the model-value gap with T2 binding; not training pays.
    let mut p = EconomicParams {
        p_comp: 1e-6,
        v_rec_m: 20,
        v_now_t: 10,
        ..feasible.clone()
    };
    p.b_t = 10.0 * p.coin_unit - 1.0;
    p.r_cited = citation_bounds(&p).unwrap().max_clamped();
    ensure(check_all(&p).unwrap().0.failed() == vec![Condition::T7], "only T7 should fail")?;
    let gap = u(Role::Trainer, Strategy::Normal, &p) - u(Role::Trainer, Strategy::NotTraining, &p);
    ensure(gap <= 0.0, format!("T7 violation still dominant, gap {gap}"))?;

    // T8: the T8 bound binds, citation reward just below it.
    let mut p = EconomicParams {
        b_t: 0.0,
        k_encrypt: 1e-4,
        v_rec_m: 10,
        v_now_t: 10,
        ..feasible.clone()
    };
    let b = citation_bounds(&p).unwrap();
    ensure(b.t8 > b.t1 && b.t8 > b.t2, "T8 does not bind")?;
    p.r_cited = b.t8 - 1e-6;
    let gap = u(Role::Trainer, Strategy::Normal, &p) - u(Role::Trainer, Strategy::NotBroadcasting, &p);
    ensure(gap < 0.0, format!("T8 violation still dominant, gap {gap}"))?;

    within(Duration::from_secs(10), start)?;
    Ok(format!("10^4 feasible draws, 0 violations, 6 boundary cases, {:?}", start.elapsed()))
}

/// Sort descending (ties by id), take k, each pays the next bid, the last pays its own.
fn oracle_select(bids: &[Bid], k: usize) -> (Vec<ParticipantId>, Vec<f64>) {
    let mut v: Vec<(f64, u32)> = bids.iter().map(|b| (b.amount, b.trainer_id.0)).collect();
    v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let k = k.min(v.len());
    let ids = v[..k].iter().map(|x| ParticipantId(x.1)).collect();
    let pays = (0..k).map(|i| if i + 1 < k { v[i + 1].0 } else { v[i].0 }).collect();
    (ids, pays)
}

fn criterion_6() -> Outcome {
    let mut cases = 0u64;
    for n in 0..=6u32 {
        // Every sequence of n values from 0..=5 covers every multiset and id assignment.
        let total = 6u32.pow(n);
        for code in 0..total {
            let mut c = code;
            let bids: Vec<Bid> = (0..n)
                .map(|i| {
                    let v = c % 6;
                    c /= 6;
                    Bid::new(i, v as f64)
                })
                .collect();
            for k in 0..=6usize {
                for b_mo in [1.0, 0.5, 0.25] {
                    let budget = k as f64 * b_mo;
                    let got = select_trainers(&bids, b_mo, budget).map_err(|e| e.to_string())?;
                    let (ids, pays) = oracle_select(&bids, k);
                    ensure(
                        got.selected == ids && got.deposits == pays,
                        format!("bids {bids:?} k={k}: {got:?} vs {ids:?} {pays:?}"),
                    )?;
                    ensure(got.deposits.len() == got.selected.len(), "length mismatch")?;
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("{cases} instances match"))
}

fn criterion_7() -> Outcome {
    let behaviors = [
        Behavior::Honest,
        Behavior::SubstituteOutputs,
        Behavior::SwapModel,
        Behavior::WhiteNoise,
    ];
    let mut misclassified = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..100u64 {
        let cfg = SimConfig {
            q_total_participants: 16,
            q_miners: 11,
            q_mo_and_t: 5,
            pr_training: 1.0,
            q_cases: 10,
            rounds: 1,
            seed: 1000 + trial,
            mode: Mode::Concrete,
            allocation: Allocation::Fixed,
            ..SimConfig::default()
        };
        let mut sim = Simulation::new(cfg).map_err(|e| e.to_string())?;
        let pool: Vec<ParticipantId> = sim
            .state
            .participants
            .iter()
            .filter(|p| p.pool == relay_sim::protocol::Pool::TrainingPool && p.id != sim.state.initiator)
            .map(|p| p.id)
            .collect();
        ensure(pool.len() == 4, "training pool size")?;
        let mut assigned = behaviors;
        assigned.shuffle(&mut rng);
        // Two honest trainers in half the trials so ranking among honest peers is exercised too.
        if trial % 2 == 0 {
            assigned[rng.gen_range(0..4)] = Behavior::Honest;
        }
        for (id, b) in pool.iter().zip(assigned) {
            sim.state.participants[id.0 as usize].behavior = b;
        }
        let genesis = sim.state.model_of(sim.state.initiator).unwrap().clone();
        let log = sim.step().map_err(|e| e.to_string())?;
        let tb = &sim.state.chain.blocks()[3];
        let (inputs, truths) = match &tb.payload {
            relay_sim::chain::Payload::Testing(t) => (t.testing_inputs.clone(), t.testing_truths.clone()),
            _ => return Err("block 3 is not a testing block".into()),
        };
        let mse = |m: &relay_sim::crypto::ModelWeights| {
            let outs: Vec<f64> = inputs.iter().map(|x| m.apply(x).unwrap()).collect();
            relay_sim::crypto::performance_index(&outs, &truths).unwrap()
        };
        let base = mse(&genesis);
        let honest_improved: Vec<(ParticipantId, f64)> = log
            .outcomes
            .iter()
            .filter(|o| sim.state.participant(o.trainer).behavior == Behavior::Honest)
            .filter_map(|o| o.performance.map(|p| (o.trainer, p)))
            .filter(|(_, p)| *p < base)
            .collect();
        let rank = |id: ParticipantId| log.ranking.iter().position(|r| *r == id);
        for o in &log.outcomes {
            let behavior = sim.state.participant(o.trainer).behavior;
            let reason = o.verdict.map(|v| v.reason);
            let ok = match behavior {
                Behavior::Honest => reason == Some(VerdictReason::Ok),
                Behavior::SubstituteOutputs => reason == Some(VerdictReason::OutputMismatch),
                Behavior::SwapModel => reason == Some(VerdictReason::HashMismatch),
                Behavior::WhiteNoise => {
                    o.recorded
                        && reason == Some(VerdictReason::Ok)
                        && honest_improved.iter().all(|(id, mse)| {
                            o.performance.is_some_and(|lazy| lazy > *mse)
                                && match (rank(o.trainer), rank(*id)) {
                                    (Some(lazy), Some(honest)) => lazy > honest,
                                    (Some(_), None) => false,
                                    (None, _) => true,
                                }
                        })
                }
            };
            let rejected_in_top = reason != Some(VerdictReason::Ok) && rank(o.trainer).is_some();
            if !ok || rejected_in_top {
                misclassified += 1;
            }
        }
        ensure(!honest_improved.is_empty(), format!("trial {trial}: no improving honest trainer"))?;
        // The best-ranked model is an honest one.
        let best = log.ranking.first().copied().ok_or("empty top set")?;
        if sim.state.participant(best).behavior != Behavior::Honest {
            misclassified += 1;
        }
    }
    ensure(misclassified == 0, format!("{misclassified} misclassifications"))?;
    Ok("100 trials, 0 misclassifications".into())
}

fn criterion_8() -> Outcome {
    let cfg = SimConfig {
        q_total_participants: 32,
        q_miners: 16,
        q_mo_and_t: 16,
        q_cases: 5,
        rounds: 6,
        seed: 8,
        ..SimConfig::default()
    };
    let mut sim = Simulation::new(cfg).map_err(|e| e.to_string())?;
    sim.run_with(|_, _| {}).map_err(|e| e.to_string())?;
    let chain = &sim.state.chain;
    let bytes = chain.to_bytes();
    Chain::from_bytes(&bytes).map_err(|e| format!("valid chain rejected: {e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut missed = 0;
    for _ in 0..1000 {
        let mut bad = bytes.clone();
        let i = rng.gen_range(0..bad.len());
        bad[i] ^= rng.gen_range(1..=255u8);
        if Chain::from_bytes(&bad).is_ok() {
            missed += 1;
        }
    }
    ensure(missed == 0, format!("{missed} of 1000 mutations undetected"))?;

    let mut wrong = 0;
    for cut in 1..=4 {
        let prefix = Chain::from_blocks(chain.blocks()[..cut].to_vec()).map_err(|e| e.to_string())?;
        let tip = prefix.tip().header.kind;
        for kind in BlockKind::CYCLE {
            if kind == tip.next() {
                continue;
            }
            let mut b = chain.blocks()[cut].clone();
            b.header.kind = kind;
            match prefix.clone().append_block(b) {
                Err(ChainError::KindOrderViolation { .. }) => wrong += 1,
                other => return Err(format!("{tip}->{kind} gave {other:?}")),
            }
        }
    }
    ensure(wrong == 12, format!("{wrong} wrong-successor pairs rejected"))?;
    Ok(format!("1000/1000 mutations detected over {} bytes, 12/12 kind violations", bytes.len()))
}

fn criterion_9() -> Outcome {
    let csv = |seed| -> Result<Vec<u8>, String> {
        let m = run_simulation(&table_three(seed)).map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        m.write_csv(&mut out).map_err(|e| e.to_string())?;
        Ok(out)
    };
    let a = csv(11)?;
    let b = csv(11)?;
    ensure(a == b, "CSV exports differ")?;
    let c = csv(12)?;
    ensure(a != c, "different seeds gave identical exports")?;
    Ok(format!("{} identical bytes", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("closed-form citation coins (round robin, q=8, 80 rounds)", criterion_1),
        ("accelerating citation growth (200 rounds)", criterion_2),
        ("trainer count near q/(1+s) (200 rounds)", criterion_3),
        ("version distribution stabilizes", criterion_4),
        ("individual rationality and incentive compatibility", criterion_5),
        ("selection auction matches brute-force oracle", criterion_6),
        ("submission verification, concrete mode", criterion_7),
        ("chain integrity and kind order", criterion_8),
        ("deterministic CSV export", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
