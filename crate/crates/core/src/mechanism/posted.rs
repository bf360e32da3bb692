use num_traits::{Signed, Zero};

use super::{Branch, Ctx, MechanismOutcome, Mutation, Offer, TwoSolutionState};
use crate::num::Q;
use crate::set::AgentSet;

/// Secretary rule over the whole arrival order: observe `⌊n/e⌋` agents and hire
/// the first later agent whose singleton value matches the best observed one.
pub(super) fn dynkin(ctx: &Ctx) -> MechanismOutcome {
    let agents = ctx.order.agents();
    let oracle = ctx.market.oracle;
    let r = (agents.len() as f64 / std::f64::consts::E).floor() as usize;
    let single = |i: usize| oracle.value(AgentSet::singleton(i));
    let mut best = Q::zero();
    for &i in &agents[..r] {
        let v = single(i);
        if v > best {
            best = v;
        }
    }
    let hired = agents[r..].iter().copied().find(|&j| single(j) >= best);
    pay_budget(ctx, hired, Branch::Dynkin, Some(best))
}

/// First agent (in arrival order) with `v(j) ≥ threshold`, paid `B`.
pub(super) fn first_above(ctx: &Ctx, threshold: Q) -> MechanismOutcome {
    let oracle = ctx.market.oracle;
    let hired = ctx
        .order
        .agents()
        .iter()
        .copied()
        .find(|&j| oracle.value(AgentSet::singleton(j)) >= threshold);
    pay_budget(ctx, hired, Branch::SingleAgent, Some(threshold))
}

fn pay_budget(
    ctx: &Ctx,
    hired: Option<usize>,
    branch: Branch,
    threshold: Option<Q>,
) -> MechanismOutcome {
    let mut out = MechanismOutcome::empty(ctx, branch);
    out.threshold = threshold;
    if let Some(j) = hired {
        out.winners = AgentSet::singleton(j);
        out.payments[j] = ctx.market.budget.clone();
        out.value = ctx.market.oracle.value(out.winners);
        out.residual_budget = Q::zero();
    }
    out
}

/// Price offered given the mutation in force; `None` rejects.
fn settle(ctx: &Ctx, agent: usize, price: &Q, residual: &Q) -> Option<Q> {
    let bid = &ctx.market.bids[agent];
    if bid > price {
        return None;
    }
    if ctx.mutation != Some(Mutation::IgnoreBudget) && (residual - price).is_negative() {
        return None;
    }
    Some(match ctx.mutation {
        Some(Mutation::FirstPrice) => bid.clone(),
        _ => price.clone(),
    })
}

/// Single-solution posted prices `(B/t)·v(i|S)` over `agents` in order.
pub(super) fn single(ctx: &Ctx, agents: &[usize], t: &Q) -> MechanismOutcome {
    let market = ctx.market;
    let scale = market.budget / t;
    let mut out = MechanismOutcome::empty(ctx, Branch::PostedPrice);
    out.threshold = Some(t.clone());
    let mut set = AgentSet::EMPTY;
    let mut value = Q::zero();
    let mut residual = market.budget.clone();
    for &i in agents {
        let marginal = market.oracle.value(set.with(i)) - &value;
        let price = &scale * &marginal;
        let pay = settle(ctx, i, &price, &residual);
        out.offers.push(Offer {
            agent: i,
            price,
            accepted: pay.is_some(),
            solution: None,
        });
        if let Some(pay) = pay {
            set.insert(i);
            value += marginal;
            residual -= &pay;
            out.payments[i] = pay;
        }
    }
    out.winners = set;
    out.value = value;
    out.residual_budget = residual;
    out
}

/// Two disjoint solutions; each agent is offered `(B/t)·v(i|S_j(i))` for the
/// solution where her marginal is larger (ties to the first). Only the
/// solution picked by the transcript beforehand is hired and paid.
pub(super) fn two_solutions(ctx: &Ctx, agents: &[usize], t: &Q) -> MechanismOutcome {
    let market = ctx.market;
    let oracle = market.oracle;
    let scale = market.budget / t;
    let chosen = ctx.transcript.chosen_solution();
    let mut out = MechanismOutcome::empty(ctx, Branch::PostedPrice);
    out.threshold = Some(t.clone());
    let mut sets = [AgentSet::EMPTY; 2];
    let mut values = [Q::zero(), Q::zero()];
    let mut budgets = [market.budget.clone(), market.budget.clone()];
    let mut prices = vec![Q::zero(); market.n()];
    for &i in agents {
        let m0 = oracle.value(sets[0].with(i)) - &values[0];
        let m1 = oracle.value(sets[1].with(i)) - &values[1];
        let (j, marginal) = if m0 >= m1 { (0, m0) } else { (1, m1) };
        let price = &scale * &marginal;
        let pay = settle(ctx, i, &price, &budgets[j]);
        out.offers.push(Offer {
            agent: i,
            price,
            accepted: pay.is_some(),
            solution: Some(j as u8 + 1),
        });
        if let Some(pay) = pay {
            sets[j].insert(i);
            values[j] += marginal;
            budgets[j] -= &pay;
            prices[i] = pay;
        }
    }
    let c = usize::from(chosen - 1);
    out.winners = sets[c];
    for i in sets[c].iter() {
        out.payments[i] = prices[i].clone();
    }
    out.value = values[c].clone();
    out.residual_budget = budgets[c].clone();
    let [b1, b2] = budgets;
    out.two_solution = Some(TwoSolutionState {
        s1: sets[0].to_vec(),
        s2: sets[1].to_vec(),
        b1,
        b2,
        chosen,
    });
    out
}
