use std::collections::BTreeMap;

use bfpred::bounds::*;
use bfpred::num::{hp, hp_int, hp_to_f64, Hp};
use bfpred::Error;
use proptest::prelude::*;

fn h(s: &str) -> Hp {
    hp(s).unwrap()
}

fn zero() -> Hp {
    hp_int(0)
}

fn bad() -> Hp {
    h(EPSILON_BAD)
}

fn assert_close(v: &Hp, expected: f64, rel: f64) {
    let got = hp_to_f64(v);
    assert!(
        (got - expected).abs() <= rel * expected.abs(),
        "got {got}, expected {expected} (rel {rel})"
    );
}

fn within_pct(v: f64, target: f64, pct: f64) -> bool {
    (v - target).abs() <= target * pct / 100.0
}

fn mono_pred() -> PredParams {
    PredParams::parse("0.46", "0.685", "1.85").unwrap()
}

fn robust_sample() -> SampleParams {
    SampleParams::parse("0.66", "2.1", "0.29", "0.174").unwrap()
}

fn mech4_params() -> CalibratedParams {
    CalibratedParams::parse("0.68", "0.06", "2.15", "0.27", "0.22", "2.5").unwrap()
}

fn mech8_params() -> CalibratedParams {
    CalibratedParams::parse("0.61", "0.035", "2.47", "0.155", "0.164", "2.5").unwrap()
}

// Reference values below come from an independent 60-digit evaluation of the
// closed forms.

#[test]
fn tilde_p_at_robust_parameters() {
    let r = eval_bound_mono_sample(&robust_sample()).unwrap();
    let p = r.tilde_p.as_ref().unwrap();
    assert_close(p, 0.644407210052, 1e-10);
    // The quoted four-digit figure 0.64428 is 2e-4 away; see the notes in the README.
    assert!(within_pct(hp_to_f64(p), 0.64428, 0.05));
    assert!(!r.tilde_p_degenerate);
}

#[test]
fn f1_consistency_parameters() {
    let r = eval_bound_mono_pred(&mono_pred(), &zero()).unwrap();
    assert_close(r.term(TERM_SINGLE).unwrap(), 0.170324324324, 1e-10);
    assert_close(r.term(TERM_REJECTION).unwrap(), 0.169954054054, 1e-10);
    assert_close(r.term(TERM_BUDGET).unwrap(), 0.1701, 1e-12);
    assert_close(&r.bound, 0.169954054054054, 1e-12);
    assert_eq!(r.binding_term, TERM_REJECTION);
    assert!(hp_to_f64(&r.bound) >= 1.0 / 6.0);
}

#[test]
fn f1_vanishes_at_the_edges() {
    let p0 = PredParams::parse("0", "0.685", "1.85").unwrap();
    assert_eq!(eval_bound_mono_pred(&p0, &zero()).unwrap().bound, zero());
    let r = eval_bound_mono_pred(&mono_pred(), &bad()).unwrap();
    assert!(hp_to_f64(r.term(TERM_SINGLE).unwrap()) < 1e-9);
    assert!(hp_to_f64(r.term(TERM_REJECTION).unwrap()) < 1e-9);
    assert!(hp_to_f64(&r.bound) < 1e-9);
}

#[test]
fn f2_robust_parameters() {
    let r = eval_bound_mono_sample(&robust_sample()).unwrap();
    assert_close(r.term(TERM_SINGLE).unwrap(), 0.00690948490294, 1e-10);
    assert_close(r.term(TERM_REJECTION).unwrap(), 0.00788754425103, 1e-10);
    assert_close(r.term(TERM_BUDGET).unwrap(), 0.00685848529392, 1e-10);
    assert_close(&r.bound, 0.00685848529392344, 1e-12);
    assert!(hp_to_f64(&r.bound) >= 1.0 / 146.0);
}

#[test]
fn f2_with_q_one_is_the_dynkin_term() {
    let s = SampleParams::parse("1", "2.1", "0.29", "0.174").unwrap();
    let r = eval_bound_mono_sample(&s).unwrap();
    let e = euler();
    let expected =
        hp_int(1) / &e * (h("0.29") / h("2.1")) * ((&e - hp_int(1)) / &e) * (h("0.5") - h("0.174"));
    assert_eq!(r.term(TERM_SINGLE).unwrap(), &expected);
    assert_eq!(r.term(TERM_REJECTION).unwrap(), &zero());
    assert_eq!(r.term(TERM_BUDGET).unwrap(), &zero());
}

#[test]
fn f2_at_the_consistency_preset_sample_parameters_is_weak() {
    let s = SampleParams::parse("0.73", "2", "0.245", "0.1265").unwrap();
    let r = eval_bound_mono_sample(&s).unwrap();
    assert_close(r.tilde_p.as_ref().unwrap(), 0.224098951296, 1e-10);
    assert_close(&r.bound, 0.00174996836809021, 1e-12);
    assert_eq!(r.binding_term, TERM_BUDGET);
    assert!(hp_to_f64(&r.bound) < 1.0 / 146.0);
}

#[test]
fn f2_rejects_zero_beta() {
    let s = SampleParams::parse("0.66", "2.1", "0", "0.174").unwrap();
    assert!(matches!(eval_bound_mono_sample(&s), Err(Error::Domain(_))));
}

#[test]
fn mech1_pure_endpoints() {
    let sample = robust_sample();
    let r = eval_bound_mech1(&hp_int(1), &mono_pred(), &sample, &zero()).unwrap();
    let recip = r.reciprocal_f64().unwrap();
    assert!((recip - 5.88394319609).abs() < 1e-9 && recip <= 6.0);
    let r = eval_bound_mech1(&zero(), &mono_pred(), &sample, &zero()).unwrap();
    let recip = r.reciprocal_f64().unwrap();
    assert!((recip - 145.804788834).abs() < 1e-7 && recip <= 146.0);
    assert_eq!(r.components.len(), 2);
}

#[test]
fn mech1_zero_mixture_has_no_reciprocal() {
    let pred = PredParams::parse("0", "0.5", "2").unwrap();
    let sample = SampleParams::parse("0", "2", "0.9", "0.01").unwrap();
    let r = eval_bound_mech1(&h("0.5"), &pred, &sample, &zero()).unwrap();
    assert_eq!(r.bound, zero());
    assert_eq!(r.reciprocal, None);
}

#[test]
fn mech4_tradeoff_reproduction() {
    let c = mech4_params();
    let r0 = eval_bound_mech4(&c, &zero()).unwrap();
    assert_close(r0.tilde_p.as_ref().unwrap(), 0.679291854093, 1e-10);
    assert_close(r0.term(TERM_SINGLE).unwrap(), 0.0105556281541, 1e-10);
    assert_close(r0.term(TERM_REJECTION).unwrap(), 0.0108686696655, 1e-10);
    assert_close(r0.term(TERM_BUDGET).unwrap(), 0.0105480912303, 1e-10);
    assert_close(&r0.bound, 0.0105480912303186, 1e-12);
    assert!(within_pct(r0.bound_f64(), 0.010550, 1.0));
    let recip = r0.reciprocal_f64().unwrap();
    assert!((recip - 94.8038823485).abs() < 1e-8 && recip <= 95.0);

    let r1 = eval_bound_mech4(&c, &bad()).unwrap();
    assert_close(r1.tilde_p.as_ref().unwrap(), 0.991013607379, 1e-10);
    assert_close(&r1.bound, 0.00357447411462313, 1e-12);
    let recip = r1.reciprocal_f64().unwrap();
    assert!((recip - 279.761432852).abs() < 1e-7 && recip <= 280.0);
}

#[test]
fn mech4_without_dynkin_weight_is_zero() {
    let mut c = mech4_params();
    c.q = zero();
    assert_eq!(eval_bound_mech4(&c, &zero()).unwrap().bound, zero());
}

#[test]
fn mech4_needs_room_below_one_over_k() {
    let mut c = mech4_params();
    c.delta = h("0.4");
    assert!(matches!(
        eval_bound_mech4(&c, &zero()),
        Err(Error::Domain(_))
    ));
    c.delta = h("0.2");
    c.k = hp_int(1);
    assert!(eval_bound_mech4(&c, &zero()).is_err());
}

#[test]
fn nonmono_f1() {
    let p = PredParams::parse("0.33", "0.335", "2").unwrap();
    let r = eval_bound_nonmono(&NonmonoVariant::Pred(p), &zero()).unwrap();
    assert_close(r.term(TERM_SINGLE).unwrap(), 0.055275, 1e-12);
    assert_close(r.term(TERM_REJECTION).unwrap(), 0.055275, 1e-12);
    assert_close(r.term(TERM_BUDGET).unwrap(), 0.0561125, 1e-12);
    assert_close(&r.bound, 0.055275, 1e-12);
    assert!(r.bound_f64() >= 1.0 / 19.0);
}

#[test]
fn nonmono_f2_robust_and_weak_parameters() {
    let robust = SampleParams::parse("0.63", "2.395", "0.171", "0.13").unwrap();
    let r = eval_bound_nonmono(&NonmonoVariant::Sample(robust), &zero()).unwrap();
    assert_close(r.tilde_p.as_ref().unwrap(), 0.89678945506, 1e-10);
    assert_close(&r.bound, 0.00224923205251639, 1e-12);
    assert!((r.reciprocal_f64().unwrap() - 444.596189567).abs() < 1e-6);
    assert!(r.bound_f64() >= 1.0 / 445.0);

    let weak = SampleParams::parse("0.66", "2", "0.1664", "0.123").unwrap();
    let r = eval_bound_nonmono(&NonmonoVariant::Sample(weak), &zero()).unwrap();
    assert_close(r.tilde_p.as_ref().unwrap(), 0.789784861363, 1e-10);
    assert_close(&r.bound, 0.00154927288801898, 1e-12);
    assert!(r.bound_f64() < 1.0 / 445.0);
}

#[test]
fn mech8_tradeoff_reproduction() {
    let c = mech8_params();
    let r0 = eval_bound_nonmono(&NonmonoVariant::Calibrated(c.clone()), &zero()).unwrap();
    assert_close(r0.tilde_p.as_ref().unwrap(), 0.804688366906, 1e-10);
    assert_close(r0.term(TERM_SINGLE).unwrap(), 0.0044024576972, 1e-10);
    assert_close(r0.term(TERM_REJECTION).unwrap(), 0.00439359848331, 1e-10);
    assert_close(r0.term(TERM_BUDGET).unwrap(), 0.00452521801611, 1e-10);
    assert_close(&r0.bound, 0.0043935984833094, 1e-12);
    // The rejection term binds, slightly under the Dynkin term 0.0044025.
    assert_eq!(r0.binding_term, TERM_REJECTION);
    assert!(within_pct(r0.bound_f64(), 0.0044025, 1.0));
    let recip = r0.reciprocal_f64().unwrap();
    assert!((recip - 227.603865897).abs() < 1e-7 && within_pct(recip, 228.0, 1.0));

    let r1 = eval_bound_nonmono(&NonmonoVariant::Calibrated(c), &bad()).unwrap();
    assert_close(r1.tilde_p.as_ref().unwrap(), 0.999539676474, 1e-10);
    assert_close(&r1.bound, 0.00122260908944913, 1e-12);
    let recip = r1.reciprocal_f64().unwrap();
    assert!((recip - 817.922922895).abs() < 1e-6 && recip <= 818.0);
}

#[test]
fn mech5_mixes_nonmono_components() {
    let pred = PredParams::parse("0.33", "0.335", "2").unwrap();
    let sample = SampleParams::parse("0.63", "2.395", "0.171", "0.13").unwrap();
    let tau = h("0.25");
    let r = eval_bound_nonmono(
        &NonmonoVariant::Convex {
            tau: tau.clone(),
            pred,
            sample,
        },
        &zero(),
    )
    .unwrap();
    let expected = &tau * h("0.055275") + (hp_int(1) - &tau) * &r.components[1].bound;
    assert_close(&r.bound, hp_to_f64(&expected), 1e-12);
    assert_eq!(r.mechanism, BoundId::Mech5);
}

#[test]
fn presets_evaluate_to_the_frozen_values() {
    let expected: [(&str, &[f64]); 6] = [
        ("cor3.3", &[0.169954054054054, 0.00174996836809021]),
        ("cor3.4", &[0.169954054054054, 0.00685848529392344]),
        ("cor4.3", &[0.0105480912303186]),
        ("cor5.2", &[0.055275, 0.00154927288801898]),
        ("cor5.3", &[0.055275, 0.00224923205251639]),
        ("cor5.6", &[0.0043935984833094]),
    ];
    for (name, values) in expected {
        let specs = preset(name).unwrap();
        assert_eq!(specs.len(), values.len(), "{name}");
        for (spec, v) in specs.iter().zip(values) {
            assert_close(&spec.eval(&zero()).unwrap().bound, *v, 1e-12);
        }
    }
}

#[test]
fn report_renders_csv_and_json() {
    let r = eval_bound_mech4(&mech4_params(), &zero()).unwrap();
    let row = r.csv_row();
    assert_eq!(
        row.split(',').count(),
        BoundReport::CSV_HEADER.split(',').count()
    );
    assert!(row.starts_with("mech4,q=0.68;a=0.06;z=2.15;beta=0.27;delta=0.22;k=2.5,0,"));
    let json = r.to_json();
    assert_eq!(json["mechanism"], "mech4");
    assert_eq!(json["binding_term"], TERM_BUDGET);
    assert!(json["reciprocal"].as_str().unwrap().starts_with("94.80388"));
}

fn grid(bound: BoundId, target: TuneTarget, axes: &[(&str, Vec<String>)]) -> GridSpec {
    GridSpec {
        bound,
        target,
        axes: axes
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect::<BTreeMap<_, _>>(),
    }
}

fn one(v: &str) -> Vec<String> {
    vec![v.to_string()]
}

fn mech4_axes(
    q: Vec<String>,
    a: Vec<String>,
    delta: Vec<String>,
) -> Vec<(&'static str, Vec<String>)> {
    vec![
        ("q", q),
        ("a", a),
        ("z", one("2.15")),
        ("beta", one("0.27")),
        ("delta", delta),
        ("k", one("2.5")),
    ]
}

#[test]
fn tuner_singleton_grid() {
    let g = grid(
        BoundId::Mech4,
        TuneTarget::Consistency,
        &mech4_axes(one("0.68"), one("0.06"), one("0.22")),
    );
    let t = tune_params(&g).unwrap();
    assert_eq!(t.evaluations, 1);
    assert_eq!(t.best, BoundSpec::Mech4(mech4_params()));
    assert_eq!(
        t.best_bound,
        eval_bound_mech4(&mech4_params(), &zero()).unwrap().bound
    );
}

#[test]
fn tuner_around_mech4_tuple() {
    let g = grid(
        BoundId::Mech4,
        TuneTarget::Consistency,
        &[
            ("q", vec!["0.67".into(), "0.68".into()]),
            ("a", vec!["0.06".into(), "0.08".into()]),
            ("z", vec!["2.15".into(), "2.25".into()]),
            ("beta", vec!["0.24".into(), "0.27".into()]),
            ("delta", one("0.22")),
            ("k", one("2.5")),
        ],
    );
    let t = tune_params(&g).unwrap();
    let at_tuple = eval_bound_mech4(&mech4_params(), &zero()).unwrap().bound;
    assert!(t.best_bound >= at_tuple);
    assert!(hp_to_f64(&t.best_bound) >= 0.01055);
    assert_eq!(t.best.eval(&zero()).unwrap().bound, t.best_bound);
}

#[test]
fn tuner_tradeoff_target_is_maximin() {
    let g = grid(
        BoundId::Mech4,
        TuneTarget::Tradeoff,
        &mech4_axes(one("0.68"), vec!["0".into(), "0.06".into()], one("0.22")),
    );
    let t = tune_params(&g).unwrap();
    let spec = t.best.clone();
    let lo = spec.eval(&zero()).unwrap().bound;
    let hi = spec.eval(&bad()).unwrap().bound;
    assert_eq!(t.best_bound, if lo < hi { lo } else { hi });
}

#[test]
fn tuner_recovers_robust_sample_choice() {
    let g = grid(
        BoundId::MonoSample,
        TuneTarget::Consistency,
        &[
            ("q", GridSpec::range("0.5", "0.9", "0.005").unwrap()),
            ("z", one("2.1")),
            ("beta", one("0.29")),
            ("delta", GridSpec::range("0.05", "0.495", "0.005").unwrap()),
        ],
    );
    let t = tune_params(&g).unwrap();
    let v = t.best.values();
    assert!((hp_to_f64(&v[0]) - 0.66).abs() <= 0.005 + 1e-12);
    assert!((hp_to_f64(&v[3]) - 0.174).abs() <= 0.005 + 1e-12);
    assert!(t.best_bound >= eval_bound_mono_sample(&robust_sample()).unwrap().bound);
}

#[test]
fn tuner_breaks_ties_lexicographically() {
    // q = 0 zeroes every term, so all points tie at 0.
    let g = grid(
        BoundId::Mech4,
        TuneTarget::Consistency,
        &mech4_axes(one("0"), vec!["0.06".into(), "0.02".into()], one("0.22")),
    );
    let t = tune_params(&g).unwrap();
    assert_eq!(hp_to_f64(&t.best.values()[1]), 0.02);
}

#[test]
fn tuner_rejects_empty_or_mismatched_grids() {
    let g = grid(
        BoundId::Mech4,
        TuneTarget::Consistency,
        &mech4_axes(vec![], one("0.06"), one("0.22")),
    );
    assert!(matches!(tune_params(&g), Err(Error::Config(_))));
    let g = grid(
        BoundId::MonoPred,
        TuneTarget::Consistency,
        &[("p", one("0.5"))],
    );
    assert!(matches!(tune_params(&g), Err(Error::Config(_))));
}

fn unit_decimal(lo: f64, hi: f64) -> impl Strategy<Value = Hp> {
    (0u32..=1000).prop_map(move |i| h(&format!("{:.6}", lo + (hi - lo) * f64::from(i) / 1000.0)))
}

fn calibrated() -> impl Strategy<Value = CalibratedParams> {
    (
        unit_decimal(0.0, 1.0),
        unit_decimal(0.0, 0.5),
        unit_decimal(1.05, 4.0),
        unit_decimal(0.0, 0.5),
        unit_decimal(1.1, 5.0),
        0.05f64..0.95,
    )
        .prop_map(|(q, a, z, beta, k, frac)| {
            let kmax = 1.0 / hp_to_f64(&k);
            let delta = h(&format!("{:.6}", (kmax * frac).max(1e-6)));
            CalibratedParams {
                q,
                a,
                z,
                beta,
                delta,
                k,
            }
        })
}

#[test]
fn preset_bounds_do_not_increase_with_epsilon() {
    for name in PRESETS {
        for spec in preset(name).unwrap() {
            let mut prev: Option<Hp> = None;
            for e in eps_grid() {
                let b = spec.eval(&e).unwrap().bound;
                if let Some(p) = &prev {
                    assert!(b <= *p, "{name} {:?} rose at ε={e}", spec.id());
                }
                prev = Some(b);
            }
        }
    }
}

#[test]
fn budget_term_can_make_f1_rise_with_epsilon() {
    // For a > 1 the last term is clamped to 0 at ε = 0 and grows as trust drops.
    let p = PredParams::parse("0.5", "1.5", "2").unwrap();
    assert_eq!(eval_bound_mono_pred(&p, &zero()).unwrap().bound, zero());
    let r = eval_bound_mono_pred(&p, &h("0.5")).unwrap();
    assert_eq!(r.bound, h("0.125"));
    assert_eq!(r.binding_term, TERM_BUDGET);
}

fn eps_grid() -> Vec<Hp> {
    (0..100)
        .map(|i| h(&format!("{}", f64::from(i) / 100.0)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bound_is_recomputable_from_terms(c in calibrated(), tau in unit_decimal(0.0, 1.0)) {
        let specs = [
            BoundSpec::Mech4(c.clone()),
            BoundSpec::Mech8(c.clone()),
            BoundSpec::Mech1 { tau: tau.clone(), pred: mono_pred(), sample: robust_sample() },
            BoundSpec::Mech5 { tau, pred: mono_pred(), sample: robust_sample() },
        ];
        for spec in specs {
            if let Ok(r) = spec.eval(&zero()) {
                prop_assert_eq!(r.recomputed_bound(), r.bound.clone());
                if let Some(rec) = &r.reciprocal {
                    let prod = hp_to_f64(&(rec * &r.bound));
                    prop_assert!((prod - 1.0).abs() < 1e-15);
                }
                if let Some(p) = &r.tilde_p {
                    prop_assert!(*p >= zero() && *p <= hp_int(1));
                }
            }
        }
    }

    #[test]
    fn prediction_terms_do_not_increase_with_epsilon(c in calibrated(), p in unit_decimal(0.0, 1.0)) {
        let pred = PredParams { p, a: c.a.clone(), z: c.z.clone() };
        let mut prev: Option<[Hp; 4]> = None;
        for e in eps_grid() {
            let cur = [
                eval_bound_mech4(&c, &e).unwrap().term(TERM_SINGLE).unwrap().clone(),
                eval_bound_nonmono(&NonmonoVariant::Calibrated(c.clone()), &e).unwrap().term(TERM_SINGLE).unwrap().clone(),
                eval_bound_mono_pred(&pred, &e).unwrap().term(TERM_SINGLE).unwrap().clone(),
                eval_bound_nonmono(&NonmonoVariant::Pred(pred.clone()), &e).unwrap().term(TERM_BUDGET).unwrap().clone(),
            ];
            if let Some(prev) = &prev {
                for (a, b) in cur.iter().zip(prev) {
                    prop_assert!(a <= b, "term rose at ε={}", e);
                }
            }
            prev = Some(cur);
        }
    }

    #[test]
    fn tilde_p_is_clamped_with_a_flag(q in unit_decimal(0.0, 1.0), z in unit_decimal(1.01, 4.0), beta in unit_decimal(0.001, 1.0), delta in unit_decimal(0.001, 0.499)) {
        let s = SampleParams { q, z, beta, delta };
        for r in [
            eval_bound_mono_sample(&s).unwrap(),
            eval_bound_nonmono(&NonmonoVariant::Sample(s.clone()), &zero()).unwrap(),
        ] {
            let p = r.tilde_p.clone().unwrap();
            prop_assert!(p >= zero() && p <= hp_int(1));
            if p == zero() {
                prop_assert!(r.tilde_p_degenerate);
            }
        }
    }

    #[test]
    fn mech4_with_no_prediction_weight_matches_sampling_bound(q in unit_decimal(0.0, 1.0), z in unit_decimal(1.01, 4.0), beta in unit_decimal(0.001, 1.0), delta in unit_decimal(0.001, 0.499)) {
        let sample = eval_bound_mono_sample(&SampleParams { q: q.clone(), z: z.clone(), beta: beta.clone(), delta: delta.clone() }).unwrap();
        let cal = eval_bound_mech4(&CalibratedParams { q, a: zero(), z, beta, delta, k: hp_int(2) }, &zero()).unwrap();
        let tol = h("1e-50");
        for name in [TERM_SINGLE, TERM_REJECTION, TERM_BUDGET] {
            let d = cal.term(name).unwrap() - sample.term(name).unwrap();
            prop_assert!(d.clone() <= tol.clone() && -d <= tol.clone(), "{}", name);
        }
        let dp = cal.tilde_p.clone().unwrap() - sample.tilde_p.clone().unwrap();
        prop_assert!(dp.clone() <= tol.clone() && -dp <= tol);
    }
}
