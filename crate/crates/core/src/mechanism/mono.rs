//! Mechanisms for monotone submodular valuations.

use num_traits::{One, Zero};

use super::posted;
use super::{
    Branch, CoinTranscript, Ctx, MechParams, MechanismId, MechanismOutcome, Mutation, Side,
};
use super::{SLOT_BRANCH, SLOT_MIXTURE, SLOT_SAMPLE};
use crate::error::{Error, Result};
use crate::instance::{ArrivalOrder, AugmentedInstance, Instance, Market};
use crate::num::Q;
use crate::offline::{greedy_knapsack_monotone, Solution};
use crate::set::AgentSet;

pub(super) fn dynkin(ctx: &Ctx) -> MechanismOutcome {
    posted::dynkin(ctx)
}

pub(super) fn pred(ctx: &Ctx, omega: &Q) -> Result<MechanismOutcome> {
    let p = &ctx.params;
    if ctx.transcript.bernoulli(SLOT_BRANCH, &p.p_pred) {
        return Ok(posted::first_above(ctx, &p.a * omega / &p.z));
    }
    let t = &p.a * omega;
    if t.is_zero() {
        return Err(Error::DegenerateThreshold(
            "a·ω = 0 leaves posted prices undefined".into(),
        ));
    }
    Ok(posted::single(ctx, ctx.order.agents(), &t))
}

/// Splits the arrival order after `ξ₁ ~ Binomial(n, rate)` agents and solves the
/// sample with `solver`. Returns `(ξ₁, agents to price, v(T₁))`.
pub(super) fn sample_phase<'a>(
    ctx: &Ctx<'a>,
    rate: &Q,
    solver: fn(Market, AgentSet) -> Result<Solution>,
) -> Result<(usize, &'a [usize], Q)> {
    let agents = ctx.order.agents();
    let xi = ctx.transcript.binomial(SLOT_SAMPLE, agents.len(), rate);
    let sampled: AgentSet = agents[..xi].iter().copied().collect();
    let t1 = solver(ctx.market, sampled)?;
    let priced = if ctx.mutation == Some(Mutation::PriceSampled) {
        agents
    } else {
        &agents[xi..]
    };
    Ok((xi, priced, t1.value))
}

/// Posted prices over `priced` with threshold `t`, or the empty outcome when
/// `t = 0`.
pub(super) fn priced_or_degenerate(
    ctx: &Ctx,
    xi: usize,
    priced: &[usize],
    t: Q,
    two_solutions: bool,
) -> MechanismOutcome {
    let mut out = if t.is_zero() {
        let mut out = MechanismOutcome::empty(ctx, Branch::Degenerate);
        out.threshold = Some(t);
        out
    } else if two_solutions {
        posted::two_solutions(ctx, priced, &t)
    } else {
        posted::single(ctx, priced, &t)
    };
    out.xi1 = Some(xi);
    out
}

pub(super) fn sample(ctx: &Ctx) -> Result<MechanismOutcome> {
    let p = &ctx.params;
    if ctx.transcript.bernoulli(SLOT_BRANCH, &p.q_dynkin) {
        return Ok(posted::dynkin(ctx));
    }
    let half = Q::new(1.into(), 2.into());
    let (xi, priced, v_t1) = sample_phase(ctx, &half, greedy_knapsack_monotone)?;
    Ok(priced_or_degenerate(ctx, xi, priced, &p.beta * v_t1, false))
}

pub(super) fn calibrated(ctx: &Ctx, omega: &Q) -> Result<MechanismOutcome> {
    let p = &ctx.params;
    if ctx.transcript.bernoulli(SLOT_BRANCH, &p.q_dynkin) {
        return Ok(posted::dynkin(ctx));
    }
    let rate = Q::one() / &p.k;
    let (xi, priced, v_t1) = sample_phase(ctx, &rate, greedy_knapsack_monotone)?;
    let t = &p.a * omega + &p.beta * v_t1;
    Ok(priced_or_degenerate(ctx, xi, priced, t, false))
}

pub(super) fn convex(ctx: &Ctx, omega: &Q) -> Result<MechanismOutcome> {
    let (side, out) = if ctx.transcript.bernoulli(SLOT_MIXTURE, &ctx.params.tau) {
        (Side::Prediction, pred(ctx, omega))
    } else {
        (Side::Sample, sample(ctx))
    };
    let mut out = out?;
    out.side = Some(side);
    Ok(out)
}

/// Dynkin's secretary rule on the truthful market.
pub fn run_dynkin(
    inst: &Instance,
    order: &ArrivalOrder,
    transcript: CoinTranscript,
) -> Result<MechanismOutcome> {
    MechanismId::Dynkin.run_instance(inst, None, order, transcript, &MechParams::default())
}

/// Mechanism 2: prediction-driven posted prices (reads `p`, `a`, `z`).
pub fn run_mech_pred(
    aug: &AugmentedInstance,
    order: &ArrivalOrder,
    transcript: CoinTranscript,
    params: &MechParams,
) -> Result<MechanismOutcome> {
    MechanismId::Mech2.run_augmented(aug, order, transcript, params)
}

/// Mechanism 3: Dynkin or sample-then-price (reads `q`, `β`).
pub fn run_mech_sample(
    inst: &Instance,
    order: &ArrivalOrder,
    transcript: CoinTranscript,
    params: &MechParams,
) -> Result<MechanismOutcome> {
    MechanismId::Mech3.run_instance(inst, None, order, transcript, params)
}

/// Mechanism 1: mechanism 2 with probability `τ`, else mechanism 3.
pub fn run_mech_convex(
    aug: &AugmentedInstance,
    order: &ArrivalOrder,
    transcript: CoinTranscript,
    params: &MechParams,
) -> Result<MechanismOutcome> {
    MechanismId::Mech1.run_augmented(aug, order, transcript, params)
}

/// Mechanism 4: threshold `a·ω + β·v(T₁)` with sampling rate `1/k`.
pub fn run_mech_calibrated(
    aug: &AugmentedInstance,
    order: &ArrivalOrder,
    transcript: CoinTranscript,
    params: &MechParams,
) -> Result<MechanismOutcome> {
    MechanismId::Mech4.run_augmented(aug, order, transcript, params)
}
