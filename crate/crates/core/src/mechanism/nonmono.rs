//! Two-disjoint-solution mechanisms for general submodular valuations.

use num_traits::{One, Zero};

use super::mono::{priced_or_degenerate, sample_phase};
use super::posted;
use super::{CoinTranscript, Ctx, MechParams, MechanismId, MechanismOutcome, Side};
use super::{SLOT_BRANCH, SLOT_MIXTURE};
use crate::error::{Error, Result};
use crate::instance::{ArrivalOrder, AugmentedInstance, Instance};
use crate::num::Q;
use crate::offline::solve_sample_nonmonotone;

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
    Ok(posted::two_solutions(ctx, ctx.order.agents(), &t))
}

pub(super) fn sample(ctx: &Ctx) -> Result<MechanismOutcome> {
    let p = &ctx.params;
    if ctx.transcript.bernoulli(SLOT_BRANCH, &p.q_dynkin) {
        return Ok(posted::dynkin(ctx));
    }
    let half = Q::new(1.into(), 2.into());
    let (xi, priced, v_t1) = sample_phase(ctx, &half, solve_sample_nonmonotone)?;
    Ok(priced_or_degenerate(ctx, xi, priced, &p.beta * v_t1, true))
}

pub(super) fn calibrated(ctx: &Ctx, omega: &Q) -> Result<MechanismOutcome> {
    let p = &ctx.params;
    if ctx.transcript.bernoulli(SLOT_BRANCH, &p.q_dynkin) {
        return Ok(posted::dynkin(ctx));
    }
    let rate = Q::one() / &p.k;
    let (xi, priced, v_t1) = sample_phase(ctx, &rate, solve_sample_nonmonotone)?;
    let t = &p.a * omega + &p.beta * v_t1;
    Ok(priced_or_degenerate(ctx, xi, priced, t, true))
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

/// Mechanism 6: prediction-driven two-solution posted prices.
pub fn run_twosol_pred(
    aug: &AugmentedInstance,
    order: &ArrivalOrder,
    transcript: CoinTranscript,
    params: &MechParams,
) -> Result<MechanismOutcome> {
    MechanismId::Mech6.run_augmented(aug, order, transcript, params)
}

/// Mechanism 7: Dynkin or sample-then-price with two solutions.
pub fn run_twosol_sample(
    inst: &Instance,
    order: &ArrivalOrder,
    transcript: CoinTranscript,
    params: &MechParams,
) -> Result<MechanismOutcome> {
    MechanismId::Mech7.run_instance(inst, None, order, transcript, params)
}

/// Mechanism 5: mechanism 6 with probability `τ`, else mechanism 7.
pub fn run_nonmono_convex(
    aug: &AugmentedInstance,
    order: &ArrivalOrder,
    transcript: CoinTranscript,
    params: &MechParams,
) -> Result<MechanismOutcome> {
    MechanismId::Mech5.run_augmented(aug, order, transcript, params)
}

/// Mechanism 8: threshold `a·ω + β·v(T₁)`, two solutions, sampling rate `1/k`.
pub fn run_twosol_calibrated(
    aug: &AugmentedInstance,
    order: &ArrivalOrder,
    transcript: CoinTranscript,
    params: &MechParams,
) -> Result<MechanismOutcome> {
    MechanismId::Mech8.run_augmented(aug, order, transcript, params)
}
