//! Test-side oracles, written independently of the library formulas.
#![allow(dead_code)]

use rand::Rng;
use relay_sim::economics::{EconomicParams, Role, Strategy};

/// Utility of `(role, strategy)` computed term by term from the utility table.
pub fn oracle_utility(role: Role, strategy: Strategy, p: &EconomicParams) -> f64 {
    let c = p.coin_unit;
    let transmit = p.k_transmit * p.model_size;
    let expanded = p.k_transmit * p.k_expand * p.model_size;
    let train = p.p_comp * p.data_volume * p.train_time * p.model_size;
    let gap = (p.v_rec_m - p.v_now_t) as f64 * c;
    let ebm_gap = (p.v_fhem - p.v_now_ebm) as f64 * c;
    let future = p.r_cited / (1.0 - p.beta);
    use Role::*;
    use Strategy::*;
    match (role, strategy) {
        (ModelOwner, Normal) => {
            p.q_selected_mo_avg * future - p.q_selected * (1.0 - p.s) * p.b_mo - transmit
        }
        (ModelOwner, NotTransmitting) => -p.q_selected * p.b_mo,
        (Trainer, Normal) => {
            let cost = train
                + (1.0 - p.s) * p.b_t
                + transmit
                + p.k_encrypt * p.model_size
                + p.q_broadcast * expanded;
            gap + c + p.q_selected_t_avg * p.beta * future - cost
        }
        (Trainer, NotTraining) => gap - p.b_t - transmit,
        (Trainer, NotBroadcasting) => gap + c - (train + p.b_t + transmit),
        (DepositMiner, Normal) => p.q_deposit * p.r_deposit - p.c_mine,
        (DepositMiner, NotPackingAll) => p.q_deposit_less * p.r_deposit - p.c_mine,
        (DepositMiner, PackingImproper) => -p.c_mine,
        (EncryptionMiner, Normal) => {
            p.q_hash_m * p.r_hash_m + ebm_gap - (p.c_mine + expanded + p.c_gen_fhe_key)
        }
        (EncryptionMiner, NotGeneratingKey) => -p.c_mine,
        (TestingMiner, Normal) => {
            p.q_encrypted_m * p.r_encrypted_m + p.q_cases * p.r_case
                - p.c_mine
                - p.q_cases * p.c_gen_td_case_unit
        }
        (TestingMiner, ImproperTesting) => -p.c_mine,
        (SettlementMiner, Normal) => {
            p.q_verified_m * p.r_verified_m + p.q_verified_m * p.q_cases * p.r_verify
                - p.c_mine
                - p.q_verified_m * expanded
                - p.q_verified_m * p.q_cases * p.c_verify_unit
        }
        (SettlementMiner, ImproperRanking) => -p.c_mine,
        _ => panic!("no such strategy for role"),
    }
}

/// A random parameter set; reward rates and the trainer deposit are left
/// for the caller to project.
pub fn random_params<R: Rng>(rng: &mut R) -> EconomicParams {
    let q_deposit = rng.gen_range(2..64) as f64;
    let v_now_t = rng.gen_range(0..20u64);
    let v_now_ebm = rng.gen_range(0..20u64);
    EconomicParams {
        beta: rng.gen_range(0.05..0.95),
        s: rng.gen_range(0.05..0.95),
        b_mo: rng.gen_range(0.0..1.0),
        b_t: 0.0,
        k_transmit: rng.gen_range(0.0..1e-6),
        k_encrypt: rng.gen_range(0.0..1e-6),
        k_expand: rng.gen_range(1.0..20.0),
        model_size: rng.gen_range(0.0..1e6),
        p_comp: rng.gen_range(0.0..1e-9),
        data_volume: rng.gen_range(0.0..1e3),
        train_time: rng.gen_range(0.0..100.0),
        c_mine: rng.gen_range(0.0..0.1),
        c_gen_fhe_key: rng.gen_range(0.0..0.01),
        c_gen_td_case_unit: rng.gen_range(0.0..1e-4),
        c_verify_unit: rng.gen_range(0.0..1e-5),
        q_selected: rng.gen_range(1..10) as f64,
        q_selected_mo_avg: rng.gen_range(0.5..8.0),
        q_selected_t_avg: rng.gen_range(0.5..8.0),
        q_broadcast: rng.gen_range(0..10) as f64,
        q_deposit,
        q_deposit_less: rng.gen_range(1.0..q_deposit),
        q_hash_m: rng.gen_range(1..64) as f64,
        q_encrypted_m: rng.gen_range(1..64) as f64,
        q_cases: rng.gen_range(1..200) as f64,
        q_verified_m: rng.gen_range(1..64) as f64,
        v_rec_m: v_now_t + rng.gen_range(0..10),
        v_now_t,
        v_fhem: v_now_ebm + rng.gen_range(0..10),
        v_now_ebm,
        coin_unit: rng.gen_range(0.1..2.0),
        ..EconomicParams::default()
    }
}
