//! Offline solvers for `max v(S)` subject to `Σ_{i∈S} c_i ≤ B`.

use std::cmp::Ordering;

use num_traits::{Signed, Zero};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::Market;
use crate::num::{q_string, Q};
use crate::set::AgentSet;
use crate::valuation::Scaled;

/// Largest ground set `brute_force_opt` will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 24;
/// Restrictions up to this size are solved exactly by `solve_sample_nonmonotone`.
pub const EXACT_SAMPLE_LIMIT: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Solution {
    pub set: AgentSet,
    #[serde(with = "q_string")]
    pub value: Q,
    #[serde(with = "q_string")]
    pub total_cost: Q,
}

impl Solution {
    fn of(market: &Market, set: AgentSet) -> Self {
        Solution {
            set,
            value: market.oracle.value(set),
            total_cost: cost_of(market, set),
        }
    }

    fn empty() -> Self {
        Solution {
            set: AgentSet::EMPTY,
            value: Q::zero(),
            total_cost: Q::zero(),
        }
    }

    /// Higher value first, then the lexicographically smaller set.
    fn beats(&self, other: &Solution) -> bool {
        match self.value.cmp(&other.value) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => self.set.lex_cmp(other.set) == Ordering::Less,
        }
    }
}

fn cost_of(market: &Market, set: AgentSet) -> Q {
    set.iter().map(|i| &market.bids[i]).sum()
}

fn ground(market: &Market, restrict: Option<AgentSet>) -> AgentSet {
    restrict.unwrap_or_else(|| AgentSet::full(market.n()))
}

/// Exact optimum over subsets of `restrict` (all agents by default).
pub fn brute_force_opt(market: Market, restrict: Option<AgentSet>) -> Result<Solution> {
    let ground = ground(&market, restrict);
    if ground.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::Refused(format!(
            "brute force over {} agents exceeds {BRUTE_FORCE_LIMIT}",
            ground.len()
        )));
    }
    if let Some(best) = brute_force_scaled(&market, ground) {
        return Ok(Solution::of(&market, best));
    }
    let mut best = Solution::empty();
    for s in ground.subsets() {
        let cost = cost_of(&market, s);
        if cost > *market.budget {
            continue;
        }
        let cand = Solution {
            set: s,
            value: market.oracle.value(s),
            total_cost: cost,
        };
        if cand.beats(&best) {
            best = cand;
        }
    }
    Ok(best)
}

/// Integer version of the enumeration; `None` when costs or values do not
/// fit a common `i64` denominator.
fn brute_force_scaled(market: &Market, ground: AgentSet) -> Option<AgentSet> {
    let mut amounts = market.bids.to_vec();
    amounts.push(market.budget.clone());
    let costs = Scaled::of(&amounts)?;
    let budget = *costs.nums.last()? as i128;
    market.oracle.value_key(AgentSet::EMPTY)?;
    let mut best: Option<(i128, AgentSet)> = None;
    for s in ground.subsets() {
        if s.iter().map(|i| costs.nums[i] as i128).sum::<i128>() > budget {
            continue;
        }
        let key = market.oracle.value_key(s)?;
        let better = match &best {
            None => true,
            Some((k, set)) => key > *k || (key == *k && s.lex_cmp(*set) == Ordering::Less),
        };
        if better {
            best = Some((key, s));
        }
    }
    best.map(|(_, s)| s)
}

/// Greedy completion by marginal value per unit cost. Zero-cost agents count
/// as infinitely dense; only strictly positive marginals are added.
fn greedy_complete(market: &Market, ground: AgentSet, seed: AgentSet) -> Solution {
    let mut set = seed;
    let mut residual = market.budget - cost_of(market, seed);
    let mut value = market.oracle.value(seed);
    loop {
        let mut pick: Option<(usize, Q, Q)> = None; // agent, marginal, cost
        for i in ground.difference(set).iter() {
            let c = &market.bids[i];
            if *c > residual {
                continue;
            }
            let m = market.oracle.value(set.with(i)) - &value;
            if !m.is_positive() {
                continue;
            }
            let better = match &pick {
                None => true,
                Some((_, bm, bc)) => denser(&m, c, bm, bc),
            };
            if better {
                pick = Some((i, m, c.clone()));
            }
        }
        match pick {
            Some((i, m, c)) => {
                set.insert(i);
                value += m;
                residual -= c;
            }
            None => break,
        }
    }
    Solution {
        set,
        total_cost: market.budget - residual,
        value,
    }
}

/// Strictly denser: `m1/c1 > m2/c2`, with zero cost meaning infinite density.
fn denser(m1: &Q, c1: &Q, m2: &Q, c2: &Q) -> bool {
    match (c1.is_zero(), c2.is_zero()) {
        (true, true) => m1 > m2,
        (true, false) => true,
        (false, true) => false,
        (false, false) => m1 * c2 > m2 * c1,
    }
}

/// Partial-enumeration greedy: every feasible seed of at most three agents is
/// completed greedily and the best result kept. Guarantees `(1 − 1/e)·OPT`
/// for monotone submodular valuations.
pub fn greedy_knapsack_monotone(market: Market, restrict: AgentSet) -> Result<Solution> {
    if !market.oracle.kind().is_monotone() {
        return Err(Error::Contract(
            "greedy_knapsack_monotone needs a monotone oracle".into(),
        ));
    }
    let agents = restrict.to_vec();
    let mut best = Solution::empty();
    let mut consider = |seed: AgentSet| {
        if cost_of(&market, seed) > *market.budget {
            return;
        }
        let cand = greedy_complete(&market, restrict, seed);
        if cand.beats(&best) {
            best = cand;
        }
        let plain = Solution::of(&market, seed);
        if plain.beats(&best) {
            best = plain;
        }
    };
    consider(AgentSet::EMPTY);
    for (x, &a) in agents.iter().enumerate() {
        consider(AgentSet::singleton(a));
        for (y, &b) in agents.iter().enumerate().skip(x + 1) {
            consider(AgentSet::singleton(a).with(b));
            for &c in &agents[y + 1..] {
                consider(AgentSet::singleton(a).with(b).with(c));
            }
        }
    }
    Ok(best)
}

/// Sample-phase solver for general submodular valuations: exact for small
/// restrictions, otherwise the best of a density greedy and a few random-order
/// greedy passes (a heuristic without a certified factor).
pub fn solve_sample_nonmonotone(market: Market, restrict: AgentSet) -> Result<Solution> {
    if restrict.len() <= EXACT_SAMPLE_LIMIT {
        return brute_force_opt(market, Some(restrict));
    }
    let mut best = greedy_complete(&market, restrict, AgentSet::EMPTY);
    let mut rng =
        ChaCha8Rng::seed_from_u64(restrict.bits() as u64 ^ (restrict.bits() >> 64) as u64);
    let mut agents = restrict.to_vec();
    for _ in 0..16 {
        agents.shuffle(&mut rng);
        let mut set = AgentSet::EMPTY;
        let mut value = Q::zero();
        let mut residual = market.budget.clone();
        for &i in &agents {
            if market.bids[i] > residual {
                continue;
            }
            let m = market.oracle.value(set.with(i)) - &value;
            if m.is_positive() {
                set.insert(i);
                value += m;
                residual -= &market.bids[i];
            }
        }
        let cand = Solution::of(&market, set);
        if cand.beats(&best) {
            best = cand;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, CostModel, GeneratorConfig, Instance};
    use crate::num::{q, qi};
    use crate::valuation::ValuationOracle;

    fn set(v: &[usize]) -> AgentSet {
        v.iter().copied().collect()
    }

    #[test]
    fn single_agent_at_budget() {
        let inst = Instance::new(
            vec![qi(1)],
            qi(1),
            ValuationOracle::additive(vec![qi(1)]).unwrap(),
        )
        .unwrap();
        assert_eq!(brute_force_opt(inst.market(), None).unwrap().set, set(&[0]));
    }

    #[test]
    fn canonical_pair() {
        let inst = Instance::new(
            vec![q(1, 2), q(1, 2)],
            qi(1),
            ValuationOracle::additive(vec![qi(1), qi(1)]).unwrap(),
        )
        .unwrap();
        let s = brute_force_opt(inst.market(), None).unwrap();
        assert_eq!((s.set, s.value), (set(&[0, 1]), qi(2)));
    }

    #[test]
    fn ties_prefer_lexicographically_smallest() {
        let inst = Instance::new(
            vec![qi(1), qi(1), qi(1)],
            qi(1),
            ValuationOracle::additive(vec![qi(2), qi(2), qi(2)]).unwrap(),
        )
        .unwrap();
        assert_eq!(brute_force_opt(inst.market(), None).unwrap().set, set(&[0]));
        assert_eq!(
            greedy_knapsack_monotone(inst.market(), set(&[1, 2]))
                .unwrap()
                .set,
            set(&[1])
        );
    }

    #[test]
    fn coverage_seed_seven_matches_straight_enumeration() {
        let cfg = GeneratorConfig::coverage(
            6,
            12,
            qi(1),
            CostModel::Uniform {
                low: qi(0),
                high: qi(1),
            },
        );
        let inst = generate_instance(&cfg, 7).unwrap();
        let mut best = Q::zero();
        for mask in 0u128..64 {
            let s = AgentSet::from_bits(mask);
            let cost: Q = (0..6)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| inst.costs()[i].clone())
                .sum();
            if cost <= *inst.budget() {
                best = best.max(inst.oracle().eval(s).unwrap());
            }
        }
        assert_eq!(brute_force_opt(inst.market(), None).unwrap().value, best);
    }

    #[test]
    fn greedy_exact_when_optimum_is_small() {
        // Optimum {0,1,2} is covered by the seed enumeration.
        let inst = Instance::new(
            vec![q(1, 3), q(1, 3), q(1, 3), q(1, 10)],
            qi(1),
            ValuationOracle::additive(vec![qi(5), qi(5), qi(5), qi(1)]).unwrap(),
        )
        .unwrap();
        let opt = brute_force_opt(inst.market(), None).unwrap();
        let g = greedy_knapsack_monotone(inst.market(), AgentSet::full(4)).unwrap();
        assert_eq!(g.value, opt.value);
        assert_eq!(
            greedy_knapsack_monotone(inst.market(), AgentSet::EMPTY)
                .unwrap()
                .value,
            qi(0)
        );
    }

    #[test]
    fn greedy_refuses_non_monotone() {
        let inst = Instance::new(
            vec![qi(1), qi(1)],
            qi(1),
            ValuationOracle::graph_cut(vec![vec![qi(0), qi(1)], vec![qi(1), qi(0)]]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            greedy_knapsack_monotone(inst.market(), AgentSet::full(2)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn sample_solver_on_cut_restriction() {
        let cfg = GeneratorConfig::cut(
            8,
            qi(2),
            CostModel::Uniform {
                low: qi(0),
                high: qi(1),
            },
        );
        let inst = generate_instance(&cfg, 3).unwrap();
        let r = set(&[1, 3, 4, 6]);
        let got = solve_sample_nonmonotone(inst.market(), r).unwrap();
        let mut best = Q::zero();
        for s in r.subsets() {
            let cost: Q = s.iter().map(|i| inst.costs()[i].clone()).sum();
            if cost <= *inst.budget() {
                best = best.max(inst.oracle().value(s));
            }
        }
        assert_eq!(got.value, best);
        assert_eq!(
            solve_sample_nonmonotone(inst.market(), AgentSet::EMPTY)
                .unwrap()
                .value,
            qi(0)
        );
    }

    #[test]
    fn heuristic_regime_is_feasible() {
        let cfg = GeneratorConfig::cut(
            24,
            qi(3),
            CostModel::Uniform {
                low: qi(0),
                high: qi(1),
            },
        );
        let inst = generate_instance(&cfg, 9).unwrap();
        let s = solve_sample_nonmonotone(inst.market(), AgentSet::full(24)).unwrap();
        assert!(s.total_cost <= *inst.budget());
        assert_eq!(s.value, inst.oracle().value(s.set));
    }
}
