//! Empirical checks: per-realization truthfulness, budget feasibility and
//! individual rationality, Monte Carlo ratios against the offline optimum, and
//! the adversarial-order scenario where sampling fails.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{Signed, Zero};
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{domain, Error, Result};
use crate::instance::{
    all_orders, render_instance, sample_arrival, ArrivalOrder, Instance, Market,
};
use crate::mechanism::{
    trial_rng, CoinTranscript, MechParams, MechanismId, MechanismOutcome, Mutation,
};
use crate::num::{q_string, q_to_f64, qi, render_q, Q};
use crate::offline::brute_force_opt;
use crate::valuation::ValuationOracle;

/// Largest `n` for which all `n!` orders are enumerated.
pub const EXHAUSTIVE_ORDER_LIMIT: usize = 8;

/// Hex SHA-256 of the canonical instance text.
pub fn instance_digest(inst: &Instance) -> String {
    hex(&Sha256::digest(render_instance(inst, None).as_bytes()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum OrderMode {
    Exhaustive,
    Sample { count: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditConfig {
    pub mechanism: MechanismId,
    pub params: MechParams,
    #[serde(with = "crate::num::opt_q_string")]
    pub omega: Option<Q>,
    pub orders: OrderMode,
    pub transcripts: usize,
    pub transcript_seed: u64,
    /// Evenly spaced deviations `0, B/(m−1), …, B`.
    pub grid_points: usize,
    pub mutation: Option<Mutation>,
}

impl AuditConfig {
    pub fn new(mechanism: MechanismId, params: MechParams, omega: Option<Q>) -> Self {
        AuditConfig {
            mechanism,
            params,
            omega,
            orders: OrderMode::Exhaustive,
            transcripts: 64,
            transcript_seed: 0,
            grid_points: 21,
            mutation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub agent: usize,
    pub order: Vec<usize>,
    pub transcript: CoinTranscript,
    #[serde(with = "q_string")]
    pub deviation: Q,
    #[serde(with = "q_string")]
    pub truthful_utility: Q,
    #[serde(with = "q_string")]
    pub deviant_utility: Q,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetViolation {
    pub order: Vec<usize>,
    pub transcript: CoinTranscript,
    /// `None` for the truthful profile, else `(agent, bid)`.
    pub deviation: Option<(usize, String)>,
    #[serde(with = "q_string")]
    pub total_payment: Q,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IrViolation {
    pub order: Vec<usize>,
    pub transcript: CoinTranscript,
    pub agent: usize,
    #[serde(with = "q_string")]
    pub payment: Q,
    #[serde(with = "q_string")]
    pub declared_cost: Q,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub mechanism: MechanismId,
    pub mutation: Option<Mutation>,
    pub instance_digest: String,
    /// `(order, transcript)` pairs examined.
    pub trials: usize,
    /// Mechanism executions, after merging transcripts with equal decision keys.
    pub runs: usize,
    pub grid_points: usize,
    #[serde(with = "q_string")]
    pub grid_step: Q,
    pub violations: Vec<Violation>,
    pub budget_violations: Vec<BudgetViolation>,
    pub ir_violations: Vec<IrViolation>,
    pub passed: bool,
}

impl AuditReport {
    pub const CSV_HEADER: &'static str =
        "kind,mechanism,order,transcript_seed,coins,agent,deviation,truthful_utility,deviant_utility,amount";

    /// One row per violation, each replayable from its order and coins.
    pub fn csv_rows(&self) -> Vec<String> {
        let order = |o: &[usize]| o.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        let coins = |t: &CoinTranscript| {
            t.coins
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        };
        let m = self.mechanism.name();
        let mut rows = Vec::new();
        for v in &self.violations {
            rows.push(format!(
                "truthfulness,{m},{},{},{},{},{},{},{},",
                order(&v.order),
                v.transcript.seed,
                coins(&v.transcript),
                v.agent,
                render_q(&v.deviation),
                render_q(&v.truthful_utility),
                render_q(&v.deviant_utility)
            ));
        }
        for v in &self.budget_violations {
            let (agent, dev) = v
                .deviation
                .clone()
                .map_or((String::new(), String::new()), |(a, d)| (a.to_string(), d));
            rows.push(format!(
                "budget,{m},{},{},{},{agent},{dev},,,{}",
                order(&v.order),
                v.transcript.seed,
                coins(&v.transcript),
                render_q(&v.total_payment)
            ));
        }
        for v in &self.ir_violations {
            rows.push(format!(
                "ir,{m},{},{},{},{},{},,,{}",
                order(&v.order),
                v.transcript.seed,
                coins(&v.transcript),
                v.agent,
                render_q(&v.declared_cost),
                render_q(&v.payment)
            ));
        }
        rows
    }
}

/// Result of [`audit_budget_ir`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetIrCheck {
    pub passed: bool,
    #[serde(with = "q_string")]
    pub total_payment: Q,
    pub over_budget: bool,
    /// `(agent, payment, declared cost)` for winners paid below their bid.
    pub ir_witnesses: Vec<(usize, String, String)>,
}

/// `Σ payments ≤ B` and `payment ≥ bid` for every winner, over `market.bids`.
pub fn audit_budget_ir(outcome: &MechanismOutcome, market: Market) -> BudgetIrCheck {
    let total = outcome.total_payment();
    let over = total > *market.budget;
    let ir: Vec<_> = outcome
        .winners
        .iter()
        .filter(|&i| outcome.payments[i] < market.bids[i])
        .map(|i| (i, render_q(&outcome.payments[i]), render_q(&market.bids[i])))
        .collect();
    BudgetIrCheck {
        passed: !over && ir.is_empty(),
        total_payment: total,
        over_budget: over,
        ir_witnesses: ir,
    }
}

pub fn audit_budget_ir_instance(outcome: &MechanismOutcome, inst: &Instance) -> BudgetIrCheck {
    audit_budget_ir(outcome, inst.market())
}

/// Deviations for one truthful run: the fixed grid, the endpoints, and every
/// posted price ± one grid step, clipped to `[0, B]`.
fn deviations(grid: &[Q], step: &Q, budget: &Q, truthful: &MechanismOutcome) -> Vec<Q> {
    let mut out: BTreeSet<Q> = grid.iter().cloned().collect();
    out.insert(Q::zero());
    out.insert(budget.clone());
    for offer in &truthful.offers {
        for d in [
            &offer.price - step,
            offer.price.clone(),
            &offer.price + step,
        ] {
            if !d.is_negative() && d <= *budget {
                out.insert(d);
            }
        }
    }
    if let Some(t) = &truthful.threshold {
        if !t.is_negative() && t <= budget {
            out.insert(t.clone());
        }
    }
    out.into_iter().collect()
}

fn order_list(n: usize, mode: &OrderMode) -> Result<Vec<ArrivalOrder>> {
    match *mode {
        OrderMode::Exhaustive => {
            if n > EXHAUSTIVE_ORDER_LIMIT {
                return Err(Error::Refused(format!(
                    "exhaustive orders need n ≤ {EXHAUSTIVE_ORDER_LIMIT}, got {n}"
                )));
            }
            Ok(all_orders(n))
        }
        OrderMode::Sample { count, seed } => (0..count as u64)
            .map(|i| sample_arrival(n, trial_rng(seed, i).next_u64()))
            .collect(),
    }
}

pub fn transcript_list(count: usize, seed: u64) -> Vec<CoinTranscript> {
    (0..count as u64)
        .map(|i| CoinTranscript::from_seed(trial_rng(seed, i).next_u64()))
        .collect()
}

#[derive(Default)]
struct Found {
    runs: usize,
    violations: Vec<Violation>,
    budget: Vec<BudgetViolation>,
    ir: Vec<IrViolation>,
}

/// Universal truthfulness per fixed `(order, transcript)`: for every agent and
/// deviation `b`, reruns on `(b, c₋ᵢ)` and compares exact utilities at the
/// true cost. Budget and IR are checked on every run, truthful or not.
pub fn audit_truthfulness(inst: &Instance, cfg: &AuditConfig) -> Result<AuditReport> {
    if cfg.grid_points < 2 {
        return Err(Error::Config(
            "deviation grid needs at least 2 points".into(),
        ));
    }
    if cfg.transcripts == 0 {
        return Err(Error::Config("at least one transcript is required".into()));
    }
    let n = inst.n();
    let budget = inst.budget();
    let step = budget / qi(cfg.grid_points as i64 - 1);
    let grid: Vec<Q> = (0..cfg.grid_points).map(|j| &step * qi(j as i64)).collect();
    let orders = order_list(n, &cfg.orders)?;
    let transcripts = transcript_list(cfg.transcripts, cfg.transcript_seed);
    // Transcripts with equal decision keys give identical runs; audit one
    // representative and report its findings under every member.
    let mut classes: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (j, t) in transcripts.iter().enumerate() {
        classes
            .entry(cfg.mechanism.decision_key(n, &cfg.params, t))
            .or_default()
            .push(j);
    }
    let classes: Vec<Vec<usize>> = classes.into_values().collect();
    let run = |bids: &[Q], order: &ArrivalOrder, t: CoinTranscript| {
        let market = Market {
            oracle: inst.oracle(),
            budget,
            bids,
        };
        cfg.mechanism.run(
            market,
            cfg.omega.as_ref(),
            order,
            t,
            &cfg.params,
            cfg.mutation,
        )
    };
    let per_order: Vec<Result<Found>> = orders
        .par_iter()
        .map(|order| {
            let mut found = Found::default();
            for class in &classes {
                let rep = transcripts[class[0]];
                let truthful = run(inst.costs(), order, rep)?;
                found.runs += 1;
                let mut budget_hits: Vec<(Option<(usize, String)>, Q)> = Vec::new();
                let mut ir_hits: Vec<(usize, Q, Q)> = Vec::new();
                let check = audit_budget_ir(&truthful, inst.market());
                if check.over_budget {
                    budget_hits.push((None, check.total_payment.clone()));
                }
                for i in truthful.winners.iter() {
                    if truthful.payments[i] < inst.costs()[i] {
                        ir_hits.push((i, truthful.payments[i].clone(), inst.costs()[i].clone()));
                    }
                }
                let devs = deviations(&grid, &step, budget, &truthful);
                let mut bids = inst.costs().to_vec();
                let mut gains: Vec<(usize, Q, Q, Q)> = Vec::new();
                for i in 0..n {
                    let cost = inst.costs()[i].clone();
                    let honest = truthful.utility(i, &cost);
                    for d in &devs {
                        if *d == cost {
                            continue;
                        }
                        bids[i] = d.clone();
                        let out = run(&bids, order, rep)?;
                        found.runs += 1;
                        let u = out.utility(i, &cost);
                        if u > honest {
                            gains.push((i, d.clone(), honest.clone(), u));
                        }
                        let total = out.total_payment();
                        if total > *budget {
                            budget_hits.push((Some((i, render_q(d))), total));
                        }
                    }
                    bids[i] = cost;
                }
                for &j in class {
                    let t = transcripts[j];
                    let order_vec = order.agents().to_vec();
                    found
                        .violations
                        .extend(gains.iter().map(|(i, d, h, u)| Violation {
                            agent: *i,
                            order: order_vec.clone(),
                            transcript: t,
                            deviation: d.clone(),
                            truthful_utility: h.clone(),
                            deviant_utility: u.clone(),
                        }));
                    found
                        .budget
                        .extend(budget_hits.iter().map(|(dev, total)| BudgetViolation {
                            order: order_vec.clone(),
                            transcript: t,
                            deviation: dev.clone(),
                            total_payment: total.clone(),
                        }));
                    found.ir.extend(ir_hits.iter().map(|(i, p, c)| IrViolation {
                        order: order_vec.clone(),
                        transcript: t,
                        agent: *i,
                        payment: p.clone(),
                        declared_cost: c.clone(),
                    }));
                }
            }
            Ok(found)
        })
        .collect();
    let mut report = AuditReport {
        mechanism: cfg.mechanism,
        mutation: cfg.mutation,
        instance_digest: instance_digest(inst),
        trials: orders.len() * transcripts.len(),
        runs: 0,
        grid_points: cfg.grid_points,
        grid_step: step,
        violations: Vec::new(),
        budget_violations: Vec::new(),
        ir_violations: Vec::new(),
        passed: false,
    };
    for f in per_order {
        let f = f?;
        report.runs += f.runs;
        report.violations.extend(f.violations);
        report.budget_violations.extend(f.budget);
        report.ir_violations.extend(f.ir);
    }
    let seed_of = |t: &CoinTranscript| {
        transcripts
            .iter()
            .position(|x| x == t)
            .unwrap_or(usize::MAX)
    };
    report.violations.sort_by(|a, b| {
        (&a.order, seed_of(&a.transcript), a.agent, &a.deviation).cmp(&(
            &b.order,
            seed_of(&b.transcript),
            b.agent,
            &b.deviation,
        ))
    });
    report.passed = report.violations.is_empty()
        && report.budget_violations.is_empty()
        && report.ir_violations.is_empty();
    Ok(report)
}

/// Reruns a recorded violation and returns `(truthful, deviant)` utilities.
pub fn replay_violation(inst: &Instance, cfg: &AuditConfig, v: &Violation) -> Result<(Q, Q)> {
    let order = ArrivalOrder::new(v.order.clone())?;
    let cost = &inst.costs()[v.agent];
    let run = |bids: &[Q]| {
        let market = Market {
            oracle: inst.oracle(),
            budget: inst.budget(),
            bids,
        };
        cfg.mechanism.run(
            market,
            cfg.omega.as_ref(),
            &order,
            v.transcript,
            &cfg.params,
            cfg.mutation,
        )
    };
    let honest = run(inst.costs())?.utility(v.agent, cost);
    let mut bids = inst.costs().to_vec();
    bids[v.agent] = v.deviation.clone();
    let dev = run(&bids)?.utility(v.agent, cost);
    Ok((honest, dev))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchStat {
    pub trials: usize,
    pub mean_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub mechanism: MechanismId,
    /// Mean of `v(S)/v(S*)`.
    pub mean_ratio: f64,
    pub std_error: f64,
    pub trials: usize,
    pub seed: u64,
    #[serde(with = "q_string")]
    pub optimum: Q,
    pub per_branch: BTreeMap<String, BranchStat>,
    /// Per-trial exact ratios, in trial order.
    #[serde(skip)]
    pub ratios: Vec<Q>,
    #[serde(skip)]
    pub labels: Vec<String>,
}

impl RatioEstimate {
    pub const CSV_HEADER: &'static str = "mechanism,trial,order_seed,transcript_seed,branch,ratio";
}

/// Order and transcript seeds of trial `i` under `root`.
pub fn trial_seeds(root: u64, trial: u64) -> (u64, u64) {
    let mut rng = trial_rng(root, trial);
    (rng.next_u64(), rng.next_u64())
}

/// Monte Carlo over independent `(order, transcript)` pairs.
pub fn estimate_ratio(
    mechanism: MechanismId,
    inst: &Instance,
    omega: Option<&Q>,
    params: &MechParams,
    trials: usize,
    seed: u64,
) -> Result<RatioEstimate> {
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let opt = brute_force_opt(inst.market(), None)?;
    if opt.value.is_zero() {
        return domain("optimum value is zero");
    }
    let results: Vec<Result<(Q, String)>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let (os, ts) = trial_seeds(seed, t);
            let order = sample_arrival(inst.n(), os)?;
            let out = mechanism.run_instance(
                inst,
                omega,
                &order,
                CoinTranscript::from_seed(ts),
                params,
            )?;
            Ok((&out.value / &opt.value, out.label()))
        })
        .collect();
    let mut ratios = Vec::with_capacity(trials);
    let mut labels = Vec::with_capacity(trials);
    for r in results {
        let (q, l) = r?;
        ratios.push(q);
        labels.push(l);
    }
    let xs: Vec<f64> = ratios.iter().map(q_to_f64).collect();
    let (mean, se) = mean_se(&xs);
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (l, x) in labels.iter().zip(&xs) {
        groups.entry(l.clone()).or_default().push(*x);
    }
    let per_branch = groups
        .into_iter()
        .map(|(l, v)| {
            let (m, _) = mean_se(&v);
            (
                l,
                BranchStat {
                    trials: v.len(),
                    mean_ratio: m,
                },
            )
        })
        .collect();
    Ok(RatioEstimate {
        mechanism,
        mean_ratio: mean,
        std_error: se,
        trials,
        seed,
        optimum: opt.value,
        per_branch,
        ratios,
        labels,
    })
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DemoReport {
    #[serde(with = "q_string")]
    pub small_value: Q,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    /// Adversarial order: the valuable agent arrives first.
    #[serde(with = "q_string")]
    pub adversarial_max_ratio: Q,
    pub adversarial_mean_ratio: f64,
    /// Trials where the valuable agent landed in the sample.
    pub sampled_trials: usize,
    #[serde(with = "q_string")]
    pub max_ratio_when_sampled: Q,
    pub random_order_mean_ratio: f64,
    pub random_order_std_error: f64,
}

/// Every cost equals `B = 1`; agent 0 is worth 1 and the rest `small_value`.
pub fn demo_instance(small_value: &Q, n: usize) -> Result<Instance> {
    if n < 2 {
        return domain("the scenario needs at least two agents");
    }
    if !small_value.is_positive() || *small_value >= qi(1) {
        return domain("small value must lie in (0, 1)");
    }
    let mut weights = vec![small_value.clone(); n];
    weights[0] = qi(1);
    Instance::new(vec![qi(1); n], qi(1), ValuationOracle::additive(weights)?)
}

/// Runs the sampling mechanism with the valuable agent placed first, so it
/// falls in every non-empty sample, then under uniformly random orders.
pub fn adversarial_demo(
    small_value: &Q,
    n: usize,
    trials: usize,
    seed: u64,
    params: &MechParams,
) -> Result<DemoReport> {
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let inst = demo_instance(small_value, n)?;
    let adversarial = ArrivalOrder::identity(n);
    let mut max = Q::zero();
    let mut max_sampled = Q::zero();
    let mut sampled = 0;
    let mut adv = Vec::with_capacity(trials);
    for t in 0..trials as u64 {
        let (_, ts) = trial_seeds(seed, t);
        let out = MechanismId::Mech3.run_instance(
            &inst,
            None,
            &adversarial,
            CoinTranscript::from_seed(ts),
            params,
        )?;
        // v(S*) = 1.
        let ratio = out.value.clone();
        if out.xi1.is_some_and(|x| x >= 1) {
            sampled += 1;
            max_sampled = max_sampled.max(ratio.clone());
        }
        max = max.max(ratio.clone());
        adv.push(q_to_f64(&ratio));
    }
    let random = estimate_ratio(MechanismId::Mech3, &inst, None, params, trials, seed)?;
    Ok(DemoReport {
        small_value: small_value.clone(),
        n,
        trials,
        seed,
        adversarial_max_ratio: max,
        adversarial_mean_ratio: mean_se(&adv).0,
        sampled_trials: sampled,
        max_ratio_when_sampled: max_sampled,
        random_order_mean_ratio: random.mean_ratio,
        random_order_std_error: random.std_error,
    })
}

/// Whether `agent` arrives among the first `xi1` agents of `order`.
pub fn in_sample(order: &ArrivalOrder, xi1: usize, agent: usize) -> bool {
    order.agents()[..xi1].contains(&agent)
}
