mod common;

use std::collections::HashMap;

use bfpred::audit::*;
use bfpred::bounds::preset_mech_params;
use bfpred::bounds::{eval_bound_mono_pred, PredParams};
use bfpred::instance::{
    generate_instance, sample_arrival, ArrivalOrder, CostModel, GeneratorConfig, Instance, Market,
};
use bfpred::mechanism::*;
use bfpred::num::{hp_int, hp_to_f64, q, qi, Q};
use bfpred::offline::brute_force_opt;
use bfpred::AgentSet;
use common::{additive, additive_instance, coverage_instance, cut_instance};
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn opt(inst: &Instance) -> Q {
    brute_force_opt(inst.market(), None).unwrap().value
}

fn mechanisms_for(inst: &Instance) -> Vec<MechanismId> {
    MechanismId::NUMBERED
        .into_iter()
        .filter(|m| inst.oracle().kind().is_monotone() || !m.requires_monotone())
        .collect()
}

fn omega_for(m: MechanismId, inst: &Instance) -> Option<Q> {
    m.needs_prediction().then(|| opt(inst))
}

#[test]
fn fuzzed_exhaustive_audits_find_nothing() {
    let (mut audited, mut skipped) = (0, 0);
    for seed in 0..7u64 {
        let n = 3 + (seed as usize % 2);
        for inst in [
            additive_instance(n, seed),
            coverage_instance(n, seed),
            cut_instance(n, seed),
        ] {
            for m in mechanisms_for(&inst) {
                if m.needs_prediction() && opt(&inst) == qi(0) {
                    skipped += 1;
                    continue;
                }
                let cfg = AuditConfig {
                    transcript_seed: seed,
                    ..AuditConfig::new(m, MechParams::default(), omega_for(m, &inst))
                };
                let r = audit_truthfulness(&inst, &cfg).unwrap();
                assert!(r.passed, "{m} seed {seed}: {:?}", r.csv_rows().first());
                assert_eq!(r.trials, (1..=n).product::<usize>() * 64);
                audited += 1;
            }
        }
    }
    assert_eq!(audited + skipped, 7 * (8 + 8 + 4));
    assert!(skipped * 10 < audited);
}

#[test]
fn first_price_payments_are_caught() {
    let inst = additive_instance(4, 11);
    let m = MechanismId::Mech2;
    let cfg = AuditConfig {
        mutation: Some(Mutation::FirstPrice),
        ..AuditConfig::new(m, MechParams::default(), omega_for(m, &inst))
    };
    let r = audit_truthfulness(&inst, &cfg).unwrap();
    assert!(!r.passed);
    assert!(!r.violations.is_empty());
    // Winners gain by overbidding up to the posted price.
    assert!(r
        .violations
        .iter()
        .any(|v| v.deviation > inst.costs()[v.agent]));
    for v in r.violations.iter().take(20) {
        let (h, d) = replay_violation(&inst, &cfg, v).unwrap();
        assert_eq!(
            (h, d),
            (v.truthful_utility.clone(), v.deviant_utility.clone())
        );
    }
}

#[test]
fn ignoring_the_budget_is_caught() {
    // A prediction far below the optimum makes posted prices exceed the budget.
    let inst = additive(&[3, 3, 3, 3], vec![q(1, 2); 4], qi(2));
    let cfg = AuditConfig {
        mutation: Some(Mutation::IgnoreBudget),
        ..AuditConfig::new(MechanismId::Mech2, MechParams::default(), Some(qi(1)))
    };
    let r = audit_truthfulness(&inst, &cfg).unwrap();
    assert!(!r.budget_violations.is_empty());
    assert!(r.budget_violations.iter().all(|b| b.total_payment > qi(2)));
    let honest = audit_truthfulness(
        &inst,
        &AuditConfig {
            mutation: None,
            ..cfg
        },
    )
    .unwrap();
    assert!(honest.passed);
}

#[test]
fn pricing_the_sample_is_caught() {
    let mut caught = false;
    'outer: for seed in 0..6u64 {
        for inst in [additive_instance(4, seed), coverage_instance(4, seed)] {
            for m in [
                MechanismId::Mech3,
                MechanismId::Mech4,
                MechanismId::Mech7,
                MechanismId::Mech8,
            ] {
                let cfg = AuditConfig {
                    mutation: Some(Mutation::PriceSampled),
                    ..AuditConfig::new(m, MechParams::default(), omega_for(m, &inst))
                };
                if !audit_truthfulness(&inst, &cfg).unwrap().passed {
                    caught = true;
                    break 'outer;
                }
            }
        }
    }
    assert!(caught);
}

#[test]
fn sampled_agents_never_gain() {
    let inst = coverage_instance(5, 4);
    let params = MechParams::default();
    let budget = inst.budget().clone();
    let devs: Vec<Q> = (0..=20).map(|j| &budget * q(j, 20)).collect();
    let mut checked = 0;
    for m in [MechanismId::Mech3, MechanismId::Mech7] {
        for t in transcript_list(64, 5) {
            let order = sample_arrival(5, t.seed).unwrap();
            let out = m.run_instance(&inst, None, &order, t, &params).unwrap();
            let Some(xi) = out.xi1 else { continue };
            for &i in &order.agents()[..xi] {
                assert!(in_sample(&order, xi, i));
                for d in &devs {
                    let mut bids = inst.costs().to_vec();
                    bids[i] = d.clone();
                    let market = Market {
                        oracle: inst.oracle(),
                        budget: inst.budget(),
                        bids: &bids,
                    };
                    let dev = m.run(market, None, &order, t, &params, None).unwrap();
                    assert_eq!(dev.utility(i, &inst.costs()[i]), qi(0));
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn dynkin_paying_the_budget_passes() {
    let inst = additive(&[1, 5, 2], vec![q(1, 2); 3], qi(1));
    let order = ArrivalOrder::new(vec![0, 2, 1]).unwrap();
    let out = run_dynkin(&inst, &order, CoinTranscript::from_seed(0)).unwrap();
    assert_eq!(out.winners.len(), 1);
    let check = audit_budget_ir_instance(&out, &inst);
    assert!(check.passed);
    assert_eq!(check.total_payment, qi(1));
}

#[test]
fn forged_overspend_fails_with_the_sum() {
    let inst = additive(&[1, 1], vec![q(1, 2); 2], qi(1));
    let order = ArrivalOrder::identity(2);
    let mut out = run_dynkin(&inst, &order, CoinTranscript::from_seed(0)).unwrap();
    out.winners = AgentSet::full(2);
    out.payments = vec![q(1, 2), q(1, 2) + q(1, 1000)];
    let check = audit_budget_ir_instance(&out, &inst);
    assert!(!check.passed && check.over_budget);
    assert_eq!(check.total_payment, qi(1) + q(1, 1000));
}

#[test]
fn forged_underpayment_fails_ir() {
    let inst = additive(&[1, 1], vec![q(1, 2); 2], qi(1));
    let mut out = run_dynkin(
        &inst,
        &ArrivalOrder::identity(2),
        CoinTranscript::from_seed(0),
    )
    .unwrap();
    out.winners = AgentSet::singleton(1);
    out.payments = vec![qi(0), q(1, 4)];
    let check = audit_budget_ir_instance(&out, &inst);
    assert!(!check.passed && !check.over_budget);
    assert_eq!(
        check.ir_witnesses,
        vec![(1, "1/4".to_string(), "1/2".to_string())]
    );
}

#[test]
fn budget_and_ir_hold_over_a_fuzzing_campaign() {
    let trials = 100_000u64;
    let mut cache: HashMap<(u64, u8), (Instance, Q)> = HashMap::new();
    let params = MechParams::default();
    for t in 0..trials {
        let mut rng = bfpred::mechanism::trial_rng(77, t);
        let inst_seed = rng.gen_range(0..40u64);
        let family = rng.gen_range(0..3u8);
        let (inst, optimum) = cache
            .entry((inst_seed, family))
            .or_insert_with(|| {
                let n = 3 + (inst_seed as usize % 6);
                let inst = match family {
                    0 => additive_instance(n, inst_seed),
                    1 => coverage_instance(n, inst_seed),
                    _ => cut_instance(n, inst_seed),
                };
                let o = opt(&inst);
                (inst, o)
            })
            .clone();
        let ms: Vec<_> = mechanisms_for(&inst)
            .into_iter()
            .filter(|m| !m.needs_prediction() || optimum > qi(0))
            .collect();
        let m = ms[rng.gen_range(0..ms.len())];
        let order = sample_arrival(inst.n(), rng.next_u64()).unwrap();
        let transcript = CoinTranscript::from_seed(rng.next_u64());
        let omega = m
            .needs_prediction()
            .then(|| &optimum * q(rng.gen_range(1..=20), 10));
        let out = m
            .run_instance(&inst, omega.as_ref(), &order, transcript, &params)
            .unwrap();
        let check = audit_budget_ir_instance(&out, &inst);
        assert!(check.passed, "trial {t}: {m} {check:?}");
    }
}

#[test]
fn all_hiring_instance_has_ratio_one() {
    // Threshold a·ω equals v(N), so every agent is offered B·v(i)/v(N) ≥ her cost.
    let inst = additive(&[1, 1, 1, 1], vec![q(1, 2); 4], qi(4));
    let params = MechParams {
        p_pred: qi(0),
        ..MechParams::default()
    };
    let omega = qi(4) / &params.a;
    let est = estimate_ratio(MechanismId::Mech2, &inst, Some(&omega), &params, 200, 3).unwrap();
    assert!(est.ratios.iter().all(|r| *r == qi(1)));
    assert_eq!(est.mean_ratio, 1.0);
    assert_eq!(est.std_error, 0.0);
}

#[test]
fn mech2_ratio_clears_its_bound() {
    let cfg = GeneratorConfig::additive(
        10,
        qi(2),
        CostModel::Uniform {
            low: qi(0),
            high: qi(1),
        },
    );
    let inst = generate_instance(&cfg, 21).unwrap();
    let params = preset_mech_params("cor3.3").unwrap();
    let omega = opt(&inst);
    let est = estimate_ratio(MechanismId::Mech2, &inst, Some(&omega), &params, 4000, 8).unwrap();
    let pred = PredParams::parse("0.46", "0.685", "1.85").unwrap();
    let f1 = hp_to_f64(&eval_bound_mono_pred(&pred, &hp_int(0)).unwrap().bound);
    assert!(
        est.mean_ratio >= f1 - 3.0 * est.std_error,
        "{} vs {f1}",
        est.mean_ratio
    );
    assert!(est.mean_ratio <= 1.0 + 3.0 * est.std_error);
    assert_eq!(
        est.per_branch.values().map(|b| b.trials).sum::<usize>(),
        4000
    );
}

#[test]
fn tau_zero_mixture_matches_sampling_trial_by_trial() {
    let inst = coverage_instance(8, 2);
    let params = MechParams {
        tau: qi(0),
        ..MechParams::default()
    };
    let omega = opt(&inst);
    let a = estimate_ratio(MechanismId::Mech1, &inst, Some(&omega), &params, 500, 4).unwrap();
    let b = estimate_ratio(MechanismId::Mech3, &inst, None, &params, 500, 4).unwrap();
    assert_eq!(a.ratios, b.ratios);
}

#[test]
fn estimates_are_reproducible() {
    let inst = cut_instance(7, 3);
    let omega = opt(&inst);
    let run = || {
        estimate_ratio(
            MechanismId::Mech5,
            &inst,
            Some(&omega),
            &MechParams::default(),
            300,
            12,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!((a.mean_ratio, a.std_error), (b.mean_ratio, b.std_error));
    assert_eq!(a.ratios, b.ratios);
}

#[test]
fn zero_optimum_is_a_domain_error() {
    let inst = additive(&[0, 0], vec![q(1, 2); 2], qi(1));
    assert!(estimate_ratio(
        MechanismId::Mech3,
        &inst,
        None,
        &MechParams::default(),
        10,
        0
    )
    .is_err());
}

#[test]
fn adversarial_order_defeats_sampling() {
    let params = MechParams::default();
    for small in [q(1, 100), q(1, 1000)] {
        let r = adversarial_demo(&small, 10, 2000, 6, &params).unwrap();
        assert!(r.sampled_trials > 0);
        assert!(r.max_ratio_when_sampled <= small);
        assert!(r.adversarial_max_ratio <= small);
        assert!(r.random_order_mean_ratio > r.adversarial_mean_ratio);
    }
}

#[test]
fn audit_rows_carry_replay_data() {
    let inst = additive_instance(3, 1);
    let m = MechanismId::Mech2;
    let cfg = AuditConfig {
        mutation: Some(Mutation::FirstPrice),
        ..AuditConfig::new(m, MechParams::default(), omega_for(m, &inst))
    };
    let r = audit_truthfulness(&inst, &cfg).unwrap();
    let rows = r.csv_rows();
    assert_eq!(rows.len(), r.violations.len());
    let cols = AuditReport::CSV_HEADER.split(',').count();
    assert!(rows.iter().all(|row| row.split(',').count() == cols));
    assert!(rows[0].starts_with("truthfulness,mech2,"));
    assert_eq!(r.instance_digest.len(), 64);
}

#[test]
fn exhaustive_orders_are_refused_for_large_n() {
    let inst = additive_instance(9, 0);
    let cfg = AuditConfig::new(MechanismId::Mech3, MechParams::default(), None);
    assert!(matches!(
        audit_truthfulness(&inst, &cfg),
        Err(bfpred::Error::Refused(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn equal_decision_keys_give_equal_runs(seed in any::<u64>(), which in 0usize..8, n in 3usize..8) {
        let m = MechanismId::NUMBERED[which];
        let inst = if m.requires_monotone() { coverage_instance(n, seed) } else { cut_instance(n, seed) };
        let params = MechParams::default();
        let omega = omega_for(m, &inst);
        prop_assume!(omega.as_ref().map_or(true, |o| *o > qi(0)));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let order = sample_arrival(n, rng.next_u64()).unwrap();
        let mut bids = inst.costs().to_vec();
        let i = rng.gen_range(0..n);
        bids[i] = inst.budget() * q(rng.gen_range(0..=20), 20);
        let market = Market { oracle: inst.oracle(), budget: inst.budget(), bids: &bids };
        let mut seen: HashMap<DecisionKey, MechanismOutcome> = HashMap::new();
        for t in transcript_list(64, seed) {
            let out = m.run(market, omega.as_ref(), &order, t, &params, None).unwrap();
            let key = m.decision_key(n, &params, &t);
            if let Some(prev) = seen.get(&key) {
                let mut a = prev.clone();
                a.transcript = t;
                prop_assert_eq!(&a, &out);
            } else {
                seen.insert(key, out);
            }
        }
    }
}
