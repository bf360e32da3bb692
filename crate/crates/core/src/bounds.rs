//! Closed-form approximation guarantees of the mechanisms, evaluated with
//! 60 significant digits, and a grid tuner over their parameters.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mechanism::MechParams;
use crate::num::{hp, hp_int, hp_render, hp_to_f64, parse_q, Hp};

/// `1 − 10⁻⁹`, standing in for an arbitrarily bad prediction.
pub const EPSILON_BAD: &str = "0.999999999";

pub fn euler() -> Hp {
    hp_int(1).exp()
}

fn zero() -> Hp {
    hp_int(0)
}

fn one() -> Hp {
    hp_int(1)
}

fn half() -> Hp {
    hp("0.5").unwrap()
}

fn min_hp(a: &Hp, b: &Hp) -> Hp {
    if a <= b {
        a.clone()
    } else {
        b.clone()
    }
}

/// `2·exp(−(δ²/2)/(V + C·δ/3))`.
pub fn bernstein_tail(delta: &Hp, variance: &Hp, range_bound: &Hp) -> Result<Hp> {
    let denom = variance + range_bound * delta / hp_int(3);
    if denom <= zero() {
        return domain("V + C·δ/3 must be positive");
    }
    let expo = -(delta * delta / hp_int(2)) / denom;
    Ok(hp_int(2) * expo.exp())
}

/// `1 − tail`, clamped into `[0, 1]`; the flag records clamping.
fn success_probability(delta: &Hp, variance: &Hp, range_bound: &Hp) -> Result<(Hp, bool)> {
    let raw = one() - bernstein_tail(delta, variance, range_bound)?;
    if raw < zero() {
        Ok((zero(), true))
    } else if raw > one() {
        Ok((one(), true))
    } else {
        Ok((raw, false))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredParams {
    #[serde(with = "crate::num::hp_string")]
    pub p: Hp,
    #[serde(with = "crate::num::hp_string")]
    pub a: Hp,
    #[serde(with = "crate::num::hp_string")]
    pub z: Hp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleParams {
    #[serde(with = "crate::num::hp_string")]
    pub q: Hp,
    #[serde(with = "crate::num::hp_string")]
    pub z: Hp,
    #[serde(with = "crate::num::hp_string")]
    pub beta: Hp,
    #[serde(with = "crate::num::hp_string")]
    pub delta: Hp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedParams {
    #[serde(with = "crate::num::hp_string")]
    pub q: Hp,
    #[serde(with = "crate::num::hp_string")]
    pub a: Hp,
    #[serde(with = "crate::num::hp_string")]
    pub z: Hp,
    #[serde(with = "crate::num::hp_string")]
    pub beta: Hp,
    #[serde(with = "crate::num::hp_string")]
    pub delta: Hp,
    #[serde(with = "crate::num::hp_string")]
    pub k: Hp,
}

fn parse_all<const N: usize>(values: [&str; N]) -> Result<[Hp; N]> {
    let mut out = Vec::with_capacity(N);
    for v in values {
        out.push(hp(v)?);
    }
    Ok(out.try_into().unwrap_or_else(|_| unreachable!()))
}

impl PredParams {
    pub fn parse(p: &str, a: &str, z: &str) -> Result<Self> {
        let [p, a, z] = parse_all([p, a, z])?;
        Ok(PredParams { p, a, z })
    }
}

impl SampleParams {
    pub fn parse(q: &str, z: &str, beta: &str, delta: &str) -> Result<Self> {
        let [q, z, beta, delta] = parse_all([q, z, beta, delta])?;
        Ok(SampleParams { q, z, beta, delta })
    }
}

impl CalibratedParams {
    pub fn parse(q: &str, a: &str, z: &str, beta: &str, delta: &str, k: &str) -> Result<Self> {
        let [q, a, z, beta, delta, k] = parse_all([q, a, z, beta, delta, k])?;
        Ok(CalibratedParams {
            q,
            a,
            z,
            beta,
            delta,
            k,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundId {
    MonoPred,
    MonoSample,
    Mech1,
    Mech4,
    NonmonoPred,
    NonmonoSample,
    Mech5,
    Mech8,
}

impl BoundId {
    pub const ALL: [BoundId; 8] = [
        BoundId::MonoPred,
        BoundId::MonoSample,
        BoundId::Mech1,
        BoundId::Mech4,
        BoundId::NonmonoPred,
        BoundId::NonmonoSample,
        BoundId::Mech5,
        BoundId::Mech8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundId::MonoPred => "mono-pred",
            BoundId::MonoSample => "mono-sample",
            BoundId::Mech1 => "mech1",
            BoundId::Mech4 => "mech4",
            BoundId::NonmonoPred => "nonmono-pred",
            BoundId::NonmonoSample => "nonmono-sample",
            BoundId::Mech5 => "mech5",
            BoundId::Mech8 => "mech8",
        }
    }

    /// Parameter names in the canonical tuple order used by the tuner.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            BoundId::MonoPred | BoundId::NonmonoPred => &["p", "a", "z"],
            BoundId::MonoSample | BoundId::NonmonoSample => &["q", "z", "beta", "delta"],
            BoundId::Mech4 | BoundId::Mech8 => &["q", "a", "z", "beta", "delta", "k"],
            BoundId::Mech1 | BoundId::Mech5 => {
                &["tau", "p", "a", "z_pred", "q", "z_sample", "beta", "delta"]
            }
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        BoundId::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown bound {s:?}")))
    }
}

/// A fully parameterized guarantee, ready to evaluate at any `ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "bound", rename_all = "kebab-case")]
pub enum BoundSpec {
    MonoPred(PredParams),
    MonoSample(SampleParams),
    Mech1 {
        #[serde(with = "crate::num::hp_string")]
        tau: Hp,
        pred: PredParams,
        sample: SampleParams,
    },
    Mech4(CalibratedParams),
    NonmonoPred(PredParams),
    NonmonoSample(SampleParams),
    Mech5 {
        #[serde(with = "crate::num::hp_string")]
        tau: Hp,
        pred: PredParams,
        sample: SampleParams,
    },
    Mech8(CalibratedParams),
}

impl BoundSpec {
    pub fn id(&self) -> BoundId {
        match self {
            BoundSpec::MonoPred(_) => BoundId::MonoPred,
            BoundSpec::MonoSample(_) => BoundId::MonoSample,
            BoundSpec::Mech1 { .. } => BoundId::Mech1,
            BoundSpec::Mech4(_) => BoundId::Mech4,
            BoundSpec::NonmonoPred(_) => BoundId::NonmonoPred,
            BoundSpec::NonmonoSample(_) => BoundId::NonmonoSample,
            BoundSpec::Mech5 { .. } => BoundId::Mech5,
            BoundSpec::Mech8(_) => BoundId::Mech8,
        }
    }

    /// Parameter values in [`BoundId::param_names`] order.
    pub fn values(&self) -> Vec<Hp> {
        match self {
            BoundSpec::MonoPred(p) | BoundSpec::NonmonoPred(p) => {
                vec![p.p.clone(), p.a.clone(), p.z.clone()]
            }
            BoundSpec::MonoSample(s) | BoundSpec::NonmonoSample(s) => {
                vec![s.q.clone(), s.z.clone(), s.beta.clone(), s.delta.clone()]
            }
            BoundSpec::Mech4(c) | BoundSpec::Mech8(c) => vec![
                c.q.clone(),
                c.a.clone(),
                c.z.clone(),
                c.beta.clone(),
                c.delta.clone(),
                c.k.clone(),
            ],
            BoundSpec::Mech1 { tau, pred, sample } | BoundSpec::Mech5 { tau, pred, sample } => {
                vec![
                    tau.clone(),
                    pred.p.clone(),
                    pred.a.clone(),
                    pred.z.clone(),
                    sample.q.clone(),
                    sample.z.clone(),
                    sample.beta.clone(),
                    sample.delta.clone(),
                ]
            }
        }
    }

    /// Inverse of [`BoundSpec::values`].
    pub fn from_values(id: BoundId, v: &[Hp]) -> Result<Self> {
        if v.len() != id.param_names().len() {
            return Err(Error::Config(format!(
                "{} takes {} parameters",
                id.name(),
                id.param_names().len()
            )));
        }
        let c = |i: usize| v[i].clone();
        let pred = |o: usize| PredParams {
            p: c(o),
            a: c(o + 1),
            z: c(o + 2),
        };
        let sample = |o: usize| SampleParams {
            q: c(o),
            z: c(o + 1),
            beta: c(o + 2),
            delta: c(o + 3),
        };
        let cal = || CalibratedParams {
            q: c(0),
            a: c(1),
            z: c(2),
            beta: c(3),
            delta: c(4),
            k: c(5),
        };
        Ok(match id {
            BoundId::MonoPred => BoundSpec::MonoPred(pred(0)),
            BoundId::NonmonoPred => BoundSpec::NonmonoPred(pred(0)),
            BoundId::MonoSample => BoundSpec::MonoSample(sample(0)),
            BoundId::NonmonoSample => BoundSpec::NonmonoSample(sample(0)),
            BoundId::Mech4 => BoundSpec::Mech4(cal()),
            BoundId::Mech8 => BoundSpec::Mech8(cal()),
            BoundId::Mech1 => BoundSpec::Mech1 {
                tau: c(0),
                pred: pred(1),
                sample: sample(4),
            },
            BoundId::Mech5 => BoundSpec::Mech5 {
                tau: c(0),
                pred: pred(1),
                sample: sample(4),
            },
        })
    }

    pub fn eval(&self, epsilon: &Hp) -> Result<BoundReport> {
        match self {
            BoundSpec::MonoPred(p) => eval_bound_mono_pred(p, epsilon),
            BoundSpec::MonoSample(s) => eval_bound_mono_sample(s).map(|r| r.at_epsilon(epsilon)),
            BoundSpec::Mech1 { tau, pred, sample } => eval_bound_mech1(tau, pred, sample, epsilon),
            BoundSpec::Mech4(c) => eval_bound_mech4(c, epsilon),
            BoundSpec::NonmonoPred(p) => {
                eval_bound_nonmono(&NonmonoVariant::Pred(p.clone()), epsilon)
            }
            BoundSpec::NonmonoSample(s) => {
                eval_bound_nonmono(&NonmonoVariant::Sample(s.clone()), epsilon)
            }
            BoundSpec::Mech5 { tau, pred, sample } => eval_bound_nonmono(
                &NonmonoVariant::Convex {
                    tau: tau.clone(),
                    pred: pred.clone(),
                    sample: sample.clone(),
                },
                epsilon,
            ),
            BoundSpec::Mech8(c) => {
                eval_bound_nonmono(&NonmonoVariant::Calibrated(c.clone()), epsilon)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Term {
    pub name: &'static str,
    #[serde(serialize_with = "ser_hp")]
    pub value: Hp,
}

fn ser_hp<S: serde::Serializer>(v: &Hp, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&hp_render(v))
}

fn ser_opt_hp<S: serde::Serializer>(v: &Option<Hp>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_some(&hp_render(x)),
        None => s.serialize_none(),
    }
}

fn ser_hp_vec<S: serde::Serializer>(v: &[Hp], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(hp_render))
}

pub const TERM_SINGLE: &str = "single_agent";
pub const TERM_REJECTION: &str = "rejection";
pub const TERM_BUDGET: &str = "budget_exhaustion";
pub const TERM_F1: &str = "f1";
pub const TERM_F2: &str = "f2";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub mechanism: BoundId,
    pub param_names: Vec<&'static str>,
    #[serde(serialize_with = "ser_hp_vec")]
    pub params: Vec<Hp>,
    #[serde(serialize_with = "ser_hp")]
    pub epsilon: Hp,
    /// Raw terms are clamped at zero: a negative term means no guarantee.
    pub terms: Vec<Term>,
    #[serde(serialize_with = "ser_opt_hp")]
    pub tilde_p: Option<Hp>,
    pub tilde_p_degenerate: bool,
    #[serde(serialize_with = "ser_hp")]
    pub bound: Hp,
    pub binding_term: &'static str,
    #[serde(serialize_with = "ser_opt_hp")]
    pub reciprocal: Option<Hp>,
    /// Mixture components (`f1`, `f2`).
    pub components: Vec<BoundReport>,
}

fn clamp0(v: Hp) -> Hp {
    if v < zero() {
        zero()
    } else {
        v
    }
}

impl BoundReport {
    fn from_min(
        mechanism: BoundId,
        params: Vec<Hp>,
        epsilon: Hp,
        terms: [(&'static str, Hp); 3],
        tilde_p: Option<(Hp, bool)>,
    ) -> Self {
        let terms: Vec<Term> = terms
            .into_iter()
            .map(|(name, v)| Term {
                name,
                value: clamp0(v),
            })
            .collect();
        let mut binding = 0;
        for (i, t) in terms.iter().enumerate() {
            if t.value < terms[binding].value {
                binding = i;
            }
        }
        let bound = terms[binding].value.clone();
        let (tilde_p, degenerate) = match tilde_p {
            Some((p, d)) => (Some(p), d),
            None => (None, false),
        };
        BoundReport {
            mechanism,
            param_names: mechanism.param_names().to_vec(),
            params,
            epsilon,
            binding_term: terms[binding].name,
            reciprocal: reciprocal(&bound),
            bound,
            terms,
            tilde_p,
            tilde_p_degenerate: degenerate,
            components: Vec::new(),
        }
    }

    fn mixture(
        mechanism: BoundId,
        params: Vec<Hp>,
        tau: &Hp,
        f1: BoundReport,
        f2: BoundReport,
    ) -> Self {
        let bound = tau * &f1.bound + (one() - tau) * &f2.bound;
        let binding = if tau * &f1.bound <= (one() - tau) * &f2.bound {
            TERM_F1
        } else {
            TERM_F2
        };
        BoundReport {
            mechanism,
            param_names: mechanism.param_names().to_vec(),
            params,
            epsilon: f1.epsilon.clone(),
            terms: vec![
                Term {
                    name: TERM_F1,
                    value: f1.bound.clone(),
                },
                Term {
                    name: TERM_F2,
                    value: f2.bound.clone(),
                },
            ],
            tilde_p: f2.tilde_p.clone(),
            tilde_p_degenerate: f2.tilde_p_degenerate,
            reciprocal: reciprocal(&bound),
            bound,
            binding_term: binding,
            components: vec![f1, f2],
        }
    }

    fn at_epsilon(mut self, epsilon: &Hp) -> Self {
        self.epsilon = epsilon.clone();
        self
    }

    pub fn term(&self, name: &str) -> Option<&Hp> {
        self.terms.iter().find(|t| t.name == name).map(|t| &t.value)
    }

    pub fn bound_f64(&self) -> f64 {
        hp_to_f64(&self.bound)
    }

    pub fn reciprocal_f64(&self) -> Option<f64> {
        self.reciprocal.as_ref().map(hp_to_f64)
    }

    /// Recomputes the bound from the reported terms (min, or the `τ` mixture).
    pub fn recomputed_bound(&self) -> Hp {
        match self.mechanism {
            BoundId::Mech1 | BoundId::Mech5 => {
                let tau = &self.params[0];
                tau * &self.terms[0].value + (one() - tau) * &self.terms[1].value
            }
            _ => self
                .terms
                .iter()
                .skip(1)
                .fold(self.terms[0].value.clone(), |m, t| min_hp(&m, &t.value)),
        }
    }

    pub const CSV_HEADER: &'static str = "mechanism,params,epsilon,single_agent,rejection,budget_exhaustion,f1,f2,tilde_p,tilde_p_degenerate,bound,reciprocal,binding_term";

    pub fn csv_row(&self) -> String {
        let term = |n: &str| self.term(n).map(hp_render).unwrap_or_default();
        let params: Vec<String> = self
            .param_names
            .iter()
            .zip(&self.params)
            .map(|(n, v)| format!("{n}={}", hp_render(v)))
            .collect();
        [
            self.mechanism.name().to_string(),
            params.join(";"),
            hp_render(&self.epsilon),
            term(TERM_SINGLE),
            term(TERM_REJECTION),
            term(TERM_BUDGET),
            term(TERM_F1),
            term(TERM_F2),
            self.tilde_p.as_ref().map(hp_render).unwrap_or_default(),
            self.tilde_p_degenerate.to_string(),
            hp_render(&self.bound),
            self.reciprocal.as_ref().map(hp_render).unwrap_or_default(),
            self.binding_term.to_string(),
        ]
        .join(",")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("bound reports serialize")
    }
}

fn reciprocal(bound: &Hp) -> Option<Hp> {
    if *bound > zero() {
        Some(one() / bound)
    } else {
        None
    }
}

fn check_unit(name: &str, v: &Hp) -> Result<()> {
    if *v < zero() || *v > one() {
        return domain(format!("{name} must lie in [0, 1]"));
    }
    Ok(())
}

fn check_epsilon(eps: &Hp) -> Result<()> {
    if *eps < zero() || *eps >= one() {
        return domain("ε must lie in [0, 1)");
    }
    Ok(())
}

fn check_pred(p: &PredParams) -> Result<()> {
    check_unit("p", &p.p)?;
    if p.a < zero() {
        return domain("a must be non-negative");
    }
    if p.z <= one() {
        return domain("z must exceed 1");
    }
    Ok(())
}

fn check_sample(s: &SampleParams) -> Result<()> {
    check_unit("q", &s.q)?;
    if s.z <= one() {
        return domain("z must exceed 1");
    }
    if s.beta <= zero() {
        return domain("β must be positive for the concentration bound");
    }
    if s.delta <= zero() || s.delta >= half() {
        return domain("δ must lie in (0, 1/2)");
    }
    Ok(())
}

fn check_calibrated(c: &CalibratedParams) -> Result<()> {
    check_unit("q", &c.q)?;
    if c.a < zero() || c.beta < zero() {
        return domain("a and β must be non-negative");
    }
    if c.z <= one() {
        return domain("z must exceed 1");
    }
    if c.k <= one() {
        return domain("k must exceed 1");
    }
    if c.delta <= zero() {
        return domain("δ must be positive");
    }
    if one() / &c.k - &c.delta <= zero() {
        return domain("1/k − δ must be positive");
    }
    Ok(())
}

fn pred_values(p: &PredParams) -> Vec<Hp> {
    vec![p.p.clone(), p.a.clone(), p.z.clone()]
}

fn sample_values(s: &SampleParams) -> Vec<Hp> {
    vec![s.q.clone(), s.z.clone(), s.beta.clone(), s.delta.clone()]
}

/// `f₁`: the prediction mechanism's guarantee for monotone valuations.
pub fn eval_bound_mono_pred(p: &PredParams, epsilon: &Hp) -> Result<BoundReport> {
    check_pred(p)?;
    check_epsilon(epsilon)?;
    let trust = one() - epsilon;
    let at = &p.a * &trust;
    let terms = [
        (TERM_SINGLE, &at * &p.p / &p.z),
        (TERM_REJECTION, (one() - &p.p) * &at * (&p.z - one()) / &p.z),
        (TERM_BUDGET, (one() - &p.p) * (one() - &at)),
    ];
    Ok(BoundReport::from_min(
        BoundId::MonoPred,
        pred_values(p),
        epsilon.clone(),
        terms,
        None,
    ))
}

/// `f₂`: the sampling mechanism's guarantee for monotone valuations.
pub fn eval_bound_mono_sample(s: &SampleParams) -> Result<BoundReport> {
    check_sample(s)?;
    let e = euler();
    let ratio = (&e - one()) / &e;
    let slack = half() - &s.delta;
    let g = &s.beta / &s.z * &ratio * &slack;
    let quarter = hp("0.25").unwrap();
    let (pt, degenerate) = success_probability(&s.delta, &(&g * &quarter), &g)?;
    let rest = (one() - &s.q) * &pt;
    let terms = [
        (TERM_SINGLE, &s.q / &e * &g),
        (TERM_REJECTION, &rest * (&slack - &s.beta)),
        (
            TERM_BUDGET,
            &rest * ((&s.z - one()) / &s.z * &s.beta * &ratio * &slack),
        ),
    ];
    Ok(BoundReport::from_min(
        BoundId::MonoSample,
        sample_values(s),
        zero(),
        terms,
        Some((pt, degenerate)),
    ))
}

/// `τ·f₁ + (1 − τ)·f₂`.
pub fn eval_bound_mech1(
    tau: &Hp,
    pred: &PredParams,
    sample: &SampleParams,
    epsilon: &Hp,
) -> Result<BoundReport> {
    check_unit("τ", tau)?;
    let f1 = eval_bound_mono_pred(pred, epsilon)?;
    let f2 = eval_bound_mono_sample(sample)?.at_epsilon(epsilon);
    let mut params = vec![tau.clone()];
    params.extend(pred_values(pred));
    params.extend(sample_values(sample));
    Ok(BoundReport::mixture(BoundId::Mech1, params, tau, f1, f2))
}

fn calibrated_values(c: &CalibratedParams) -> Vec<Hp> {
    vec![
        c.q.clone(),
        c.a.clone(),
        c.z.clone(),
        c.beta.clone(),
        c.delta.clone(),
        c.k.clone(),
    ]
}

/// Concentration success probability shared by mechanisms 4 and 8, where `s`
/// is the scaled threshold mass.
fn calibrated_tilde_p(c: &CalibratedParams, s: &Hp) -> Result<(Hp, bool)> {
    let spread = (&c.k - one()) / (&c.k * &c.k);
    let scale = s / &c.z;
    success_probability(&c.delta, &(spread * &scale), &scale)
}

/// Guarantee of the sampling-calibrated monotone mechanism.
pub fn eval_bound_mech4(c: &CalibratedParams, epsilon: &Hp) -> Result<BoundReport> {
    check_calibrated(c)?;
    check_epsilon(epsilon)?;
    let e = euler();
    let at = &c.a * (one() - epsilon);
    let share = one() / &c.k - &c.delta;
    let s = &at + &c.beta * (&e - one()) / &e * &share;
    let (pt, degenerate) = calibrated_tilde_p(c, &s)?;
    let rest = (one() - &c.q) * &pt;
    let terms = [
        (TERM_SINGLE, &c.q / (&e * &c.z) * &s),
        (
            TERM_REJECTION,
            &rest * ((&c.k - one()) / &c.k - &c.delta - (&at + &c.beta)),
        ),
        (TERM_BUDGET, &rest * (&c.z - one()) / &c.z * &s),
    ];
    Ok(BoundReport::from_min(
        BoundId::Mech4,
        calibrated_values(c),
        epsilon.clone(),
        terms,
        Some((pt, degenerate)),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub enum NonmonoVariant {
    Pred(PredParams),
    Sample(SampleParams),
    Convex {
        tau: Hp,
        pred: PredParams,
        sample: SampleParams,
    },
    Calibrated(CalibratedParams),
}

fn nonmono_pred(p: &PredParams, epsilon: &Hp) -> Result<BoundReport> {
    check_pred(p)?;
    check_epsilon(epsilon)?;
    let at = &p.a * (one() - epsilon);
    let rest = one() - &p.p;
    let terms = [
        (TERM_SINGLE, &at * &p.p / &p.z),
        (
            TERM_REJECTION,
            &rest * (hp("0.25").unwrap() - &at / hp_int(2)),
        ),
        (
            TERM_BUDGET,
            &rest * &at * (&p.z - one()) / (hp_int(2) * &p.z),
        ),
    ];
    Ok(BoundReport::from_min(
        BoundId::NonmonoPred,
        pred_values(p),
        epsilon.clone(),
        terms,
        None,
    ))
}

fn nonmono_sample(s: &SampleParams) -> Result<BoundReport> {
    check_sample(s)?;
    let e = euler();
    let slack = half() - &s.delta;
    let g = &s.beta / (&s.z * &e) * &slack;
    let quarter = hp("0.25").unwrap();
    let (pt, degenerate) = success_probability(&s.delta, &(&g * &quarter), &g)?;
    let rest = (one() - &s.q) * &pt;
    let terms = [
        (TERM_SINGLE, &s.q / &e * &g),
        (
            TERM_REJECTION,
            &rest * (hp("0.125").unwrap() - &s.delta / hp_int(4) - &s.beta / hp_int(2)),
        ),
        (
            TERM_BUDGET,
            &rest * ((&s.z - one()) / (hp_int(2) * &s.z)) * (&s.beta / &e) * &slack,
        ),
    ];
    Ok(BoundReport::from_min(
        BoundId::NonmonoSample,
        sample_values(s),
        zero(),
        terms,
        Some((pt, degenerate)),
    ))
}

fn nonmono_calibrated(c: &CalibratedParams, epsilon: &Hp) -> Result<BoundReport> {
    check_calibrated(c)?;
    check_epsilon(epsilon)?;
    let e = euler();
    let at = &c.a * (one() - epsilon);
    let s = &at + &c.beta / &e * (one() / &c.k - &c.delta);
    let (pt, degenerate) = calibrated_tilde_p(c, &s)?;
    let rest = (one() - &c.q) * &pt;
    let terms = [
        (TERM_SINGLE, &c.q / (&e * &c.z) * &s),
        (
            TERM_REJECTION,
            &rest
                * (hp("0.25").unwrap() * ((&c.k - one()) / &c.k - &c.delta)
                    - half() * (&at + &c.beta)),
        ),
        (
            TERM_BUDGET,
            &rest * (&c.z - one()) / (hp_int(2) * &c.z) * &s,
        ),
    ];
    Ok(BoundReport::from_min(
        BoundId::Mech8,
        calibrated_values(c),
        epsilon.clone(),
        terms,
        Some((pt, degenerate)),
    ))
}

/// Guarantees of the two-solution mechanisms for general submodular valuations.
pub fn eval_bound_nonmono(variant: &NonmonoVariant, epsilon: &Hp) -> Result<BoundReport> {
    match variant {
        NonmonoVariant::Pred(p) => nonmono_pred(p, epsilon),
        NonmonoVariant::Sample(s) => {
            check_epsilon(epsilon)?;
            Ok(nonmono_sample(s)?.at_epsilon(epsilon))
        }
        NonmonoVariant::Convex { tau, pred, sample } => {
            check_unit("τ", tau)?;
            let f1 = nonmono_pred(pred, epsilon)?;
            let f2 = nonmono_sample(sample)?.at_epsilon(epsilon);
            let mut params = vec![tau.clone()];
            params.extend(pred_values(pred));
            params.extend(sample_values(sample));
            Ok(BoundReport::mixture(BoundId::Mech5, params, tau, f1, f2))
        }
        NonmonoVariant::Calibrated(c) => nonmono_calibrated(c, epsilon),
    }
}

// ------------------------------------------------------------------ presets

pub const PRESETS: [&str; 6] = ["cor3.3", "cor3.4", "cor4.3", "cor5.2", "cor5.3", "cor5.6"];

/// The guarantees a named preset evaluates.
pub fn preset(name: &str) -> Result<Vec<BoundSpec>> {
    let mono_pred = || PredParams::parse("0.46", "0.685", "1.85");
    let nonmono_pred = || PredParams::parse("0.33", "0.335", "2");
    Ok(match name {
        "cor3.3" => vec![
            BoundSpec::MonoPred(mono_pred()?),
            BoundSpec::MonoSample(SampleParams::parse("0.73", "2", "0.245", "0.1265")?),
        ],
        "cor3.4" => vec![
            BoundSpec::MonoPred(mono_pred()?),
            BoundSpec::MonoSample(SampleParams::parse("0.66", "2.1", "0.29", "0.174")?),
        ],
        "cor4.3" => vec![BoundSpec::Mech4(CalibratedParams::parse(
            "0.68", "0.06", "2.15", "0.27", "0.22", "2.5",
        )?)],
        "cor5.2" => vec![
            BoundSpec::NonmonoPred(nonmono_pred()?),
            BoundSpec::NonmonoSample(SampleParams::parse("0.66", "2", "0.1664", "0.123")?),
        ],
        "cor5.3" => vec![
            BoundSpec::NonmonoPred(nonmono_pred()?),
            BoundSpec::NonmonoSample(SampleParams::parse("0.63", "2.395", "0.171", "0.13")?),
        ],
        "cor5.6" => vec![BoundSpec::Mech8(CalibratedParams::parse(
            "0.61", "0.035", "2.47", "0.155", "0.164", "2.5",
        )?)],
        other => return Err(Error::Config(format!("unknown preset {other:?}"))),
    })
}

/// Mechanism parameters matching a preset (unused fields keep their defaults).
pub fn preset_mech_params(name: &str) -> Result<MechParams> {
    let d = MechParams::default();
    let p = |s: &str| parse_q(s).expect("preset literal");
    let mono_pred = MechParams {
        p_pred: p("0.46"),
        a: p("0.685"),
        z: p("1.85"),
        ..d.clone()
    };
    let nonmono_pred = MechParams {
        p_pred: p("0.33"),
        a: p("0.335"),
        z: p("2"),
        ..d.clone()
    };
    Ok(match name {
        "cor3.3" => MechParams {
            q_dynkin: p("0.73"),
            beta: p("0.245"),
            delta: p("0.1265"),
            ..mono_pred
        },
        "cor3.4" => MechParams {
            q_dynkin: p("0.66"),
            beta: p("0.29"),
            delta: p("0.174"),
            ..mono_pred
        },
        "cor4.3" => MechParams {
            q_dynkin: p("0.68"),
            a: p("0.06"),
            z: p("2.15"),
            beta: p("0.27"),
            delta: p("0.22"),
            k: p("2.5"),
            ..d
        },
        "cor5.2" => MechParams {
            q_dynkin: p("0.66"),
            beta: p("0.1664"),
            delta: p("0.123"),
            ..nonmono_pred
        },
        "cor5.3" => MechParams {
            q_dynkin: p("0.63"),
            beta: p("0.171"),
            delta: p("0.13"),
            ..nonmono_pred
        },
        "cor5.6" => MechParams {
            q_dynkin: p("0.61"),
            a: p("0.035"),
            z: p("2.47"),
            beta: p("0.155"),
            delta: p("0.164"),
            k: p("2.5"),
            ..d
        },
        other => return Err(Error::Config(format!("unknown preset {other:?}"))),
    })
}

// -------------------------------------------------------------------- tuner

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuneTarget {
    /// Maximize the bound at `ε = 0`.
    Consistency,
    /// Maximize `min(bound(0), bound(1⁻))`.
    Tradeoff,
}

/// Candidate values per parameter, keyed by the names of [`BoundId::param_names`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bound: BoundId,
    pub target: TuneTarget,
    pub axes: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TuneResult {
    pub grid: GridSpec,
    pub best: BoundSpec,
    #[serde(serialize_with = "ser_hp")]
    pub best_bound: Hp,
    pub evaluations: usize,
}

impl GridSpec {
    /// Evenly spaced decimal axis `start, start+step, .., ≤ stop`.
    pub fn range(start: &str, stop: &str, step: &str) -> Result<Vec<String>> {
        let (a, b, s) = (parse_q(start)?, parse_q(stop)?, parse_q(step)?);
        if s <= num_traits::Zero::zero() {
            return Err(Error::Config("grid step must be positive".into()));
        }
        let mut out = Vec::new();
        let mut x = a;
        while x <= b {
            out.push(crate::num::render_decimal(&x));
            x += &s;
        }
        Ok(out)
    }
}

pub fn tune_objective(spec: &BoundSpec, target: TuneTarget) -> Result<Hp> {
    let at0 = spec.eval(&zero())?.bound;
    Ok(match target {
        TuneTarget::Consistency => at0,
        TuneTarget::Tradeoff => min_hp(&at0, &spec.eval(&hp(EPSILON_BAD)?)?.bound),
    })
}

/// Exhaustive grid search. Points where the bound is undefined (domain errors)
/// are skipped; ties go to the lexicographically smallest parameter tuple.
pub fn tune_params(grid: &GridSpec) -> Result<TuneResult> {
    let names = grid.bound.param_names();
    let mut axes: Vec<Vec<Hp>> = Vec::with_capacity(names.len());
    for name in names {
        let raw = grid
            .axes
            .get(*name)
            .ok_or_else(|| Error::Config(format!("grid lacks an axis for {name}")))?;
        if raw.is_empty() {
            return Err(Error::Config(format!("axis {name} is empty")));
        }
        let mut vals = raw.iter().map(|s| hp(s)).collect::<Result<Vec<_>>>()?;
        vals.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        vals.dedup();
        axes.push(vals);
    }
    if let Some(extra) = grid.axes.keys().find(|k| !names.contains(&k.as_str())) {
        return Err(Error::Config(format!(
            "{} has no parameter {extra}",
            grid.bound.name()
        )));
    }
    let total: usize = axes.iter().map(Vec::len).product();
    let points: Vec<Vec<Hp>> = (0..total)
        .map(|mut idx| {
            let mut p = vec![zero(); axes.len()];
            for (d, axis) in axes.iter().enumerate().rev() {
                p[d] = axis[idx % axis.len()].clone();
                idx /= axis.len();
            }
            p
        })
        .collect();
    // Points are generated in lexicographic order; the first maximum wins.
    let scores: Vec<Option<Hp>> = points
        .par_iter()
        .map(|p| {
            let spec = BoundSpec::from_values(grid.bound, p).ok()?;
            tune_objective(&spec, grid.target).ok()
        })
        .collect();
    let mut best: Option<(usize, &Hp)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    let (idx, score) =
        best.ok_or_else(|| Error::Config("no grid point yields a defined bound".into()))?;
    Ok(TuneResult {
        grid: grid.clone(),
        best: BoundSpec::from_values(grid.bound, &points[idx])?,
        best_bound: score.clone(),
        evaluations: total,
    })
}
