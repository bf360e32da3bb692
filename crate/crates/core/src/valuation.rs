//! Valuation oracles (the auctioneer's set function) and exhaustive checkers
//! for submodularity, monotonicity and the Nemhauser characterization.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::num::Q;
use crate::set::{subsets_by_size_lex, AgentSet, MAX_AGENTS};
use num_integer::Integer;
use num_traits::{Signed, Zero};

/// Largest ground set a lookup-table oracle may describe.
pub const MAX_TABLE_AGENTS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    MonotoneSubmodular,
    GeneralSubmodular,
    Additive,
}

impl OracleKind {
    pub fn is_monotone(self) -> bool {
        matches!(self, OracleKind::MonotoneSubmodular | OracleKind::Additive)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// `v(S) = Σ_{i∈S} w_i`.
    Additive { weights: Vec<Q> },
    /// `v(S)` = total weight of universe elements covered by the agents in `S`.
    Coverage {
        agent_sets: Vec<Vec<usize>>,
        element_weights: Vec<Q>,
    },
    /// `v(S)` = total weight of edges crossing `(S, N∖S)`.
    GraphCut { weights: Vec<Vec<Q>> },
    /// Explicit value per subset, indexed by bitmask.
    Table { values: Vec<Q> },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Additive { .. } => "additive",
            Family::Coverage { .. } => "coverage",
            Family::GraphCut { .. } => "cut",
            Family::Table { .. } => "table",
        }
    }
}

/// A set-function evaluator over agents `0..n`. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct ValuationOracle {
    n: usize,
    kind: OracleKind,
    family: Family,
    cover_masks: Vec<Vec<u64>>,
    /// Weights over a common denominator when everything fits in `i64`, so
    /// evaluation sums machine integers and reduces once.
    scaled: Option<Scaled>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Scaled {
    pub(crate) den: i64,
    pub(crate) nums: Vec<i64>,
}

impl Scaled {
    pub(crate) fn of(weights: &[Q]) -> Option<Self> {
        let mut den: i64 = 1;
        for w in weights {
            let d = i64::try_from(w.denom()).ok()?;
            den = den.checked_mul(d / den.gcd(&d))?;
        }
        let nums = weights
            .iter()
            .map(|w| {
                let factor = i64::try_from(w.denom()).ok().map(|d| den / d)?;
                i64::try_from(w.numer()).ok()?.checked_mul(factor)
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Scaled { den, nums })
    }

    fn ratio(&self, total: i128) -> Q {
        Q::new(total.into(), self.den.into())
    }
}

impl ValuationOracle {
    pub fn additive(weights: Vec<Q>) -> Result<Self> {
        check_size(weights.len())?;
        if weights.iter().any(Signed::is_negative) {
            return domain("additive weights must be non-negative");
        }
        Ok(ValuationOracle {
            n: weights.len(),
            kind: OracleKind::Additive,
            scaled: Scaled::of(&weights),
            family: Family::Additive { weights },
            cover_masks: Vec::new(),
        })
    }

    pub fn coverage(agent_sets: Vec<Vec<usize>>, element_weights: Vec<Q>) -> Result<Self> {
        check_size(agent_sets.len())?;
        if element_weights.iter().any(Signed::is_negative) {
            return domain("coverage element weights must be non-negative");
        }
        let words = element_weights.len().div_ceil(64);
        let mut cover_masks = Vec::with_capacity(agent_sets.len());
        for (agent, elems) in agent_sets.iter().enumerate() {
            let mut mask = vec![0u64; words];
            for &e in elems {
                if e >= element_weights.len() {
                    return domain(format!(
                        "agent {agent} covers element {e} outside a universe of {}",
                        element_weights.len()
                    ));
                }
                mask[e / 64] |= 1 << (e % 64);
            }
            cover_masks.push(mask);
        }
        Ok(ValuationOracle {
            n: agent_sets.len(),
            kind: OracleKind::MonotoneSubmodular,
            scaled: Scaled::of(&element_weights),
            family: Family::Coverage {
                agent_sets,
                element_weights,
            },
            cover_masks,
        })
    }

    pub fn graph_cut(weights: Vec<Vec<Q>>) -> Result<Self> {
        let n = weights.len();
        check_size(n)?;
        for (u, row) in weights.iter().enumerate() {
            if row.len() != n {
                return domain("cut weight matrix must be square");
            }
            for (w, x) in row.iter().enumerate() {
                if x.is_negative() {
                    return domain("cut weights must be non-negative");
                }
                if *x != weights[w][u] {
                    return domain(format!("cut weights not symmetric at ({u},{w})"));
                }
            }
        }
        Ok(ValuationOracle {
            n,
            kind: OracleKind::GeneralSubmodular,
            scaled: Scaled::of(&weights.concat()),
            family: Family::GraphCut { weights },
            cover_masks: Vec::new(),
        })
    }

    /// Explicit table over all `2^n` subsets; `kind` is taken on trust so that
    /// violating functions can be planted for the checkers.
    pub fn table(n: usize, values: Vec<Q>, kind: OracleKind) -> Result<Self> {
        if n > MAX_TABLE_AGENTS {
            return Err(Error::Refused(format!(
                "lookup tables are limited to {MAX_TABLE_AGENTS} agents"
            )));
        }
        if values.len() != 1 << n {
            return domain(format!(
                "table needs {} entries, got {}",
                1 << n,
                values.len()
            ));
        }
        if !values[0].is_zero() {
            return domain("table must satisfy v(∅) = 0");
        }
        if values.iter().any(Signed::is_negative) {
            return domain("table values must be non-negative");
        }
        Ok(ValuationOracle {
            n,
            kind,
            family: Family::Table { values },
            cover_masks: Vec::new(),
            scaled: None,
        })
    }

    pub fn ground_size(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> OracleKind {
        self.kind
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// `v(S)`, with `S` checked against the ground set.
    pub fn eval(&self, s: AgentSet) -> Result<Q> {
        self.check_set(s)?;
        Ok(self.value(s))
    }

    /// `v(i | S) = v(S ∪ {i}) − v(S)`.
    pub fn marginal(&self, i: usize, s: AgentSet) -> Result<Q> {
        self.check_set(s)?;
        if i >= self.n {
            return domain(format!("agent {i} outside ground set of size {}", self.n));
        }
        if s.contains(i) {
            return domain(format!("agent {i} already belongs to {s}"));
        }
        Ok(self.marginal_unchecked(i, s))
    }

    pub(crate) fn marginal_unchecked(&self, i: usize, s: AgentSet) -> Q {
        match &self.family {
            Family::Additive { weights } => weights[i].clone(),
            _ => self.value(s.with(i)) - self.value(s),
        }
    }

    /// Unchecked evaluation; callers guarantee `S ⊆ {0..n}`.
    pub fn value(&self, s: AgentSet) -> Q {
        debug_assert!(s.span() <= self.n);
        if let Some(sc) = &self.scaled {
            return sc.ratio(self.scaled_value(sc, s));
        }
        match &self.family {
            Family::Additive { weights } => s.iter().map(|i| &weights[i]).sum(),
            Family::Coverage {
                element_weights, ..
            } => {
                let words = element_weights.len().div_ceil(64);
                let mut covered = vec![0u64; words];
                for i in s.iter() {
                    for (c, m) in covered.iter_mut().zip(&self.cover_masks[i]) {
                        *c |= m;
                    }
                }
                let mut total = Q::zero();
                for (w, &bits) in covered.iter().enumerate() {
                    let mut bits = bits;
                    while bits != 0 {
                        let e = w * 64 + bits.trailing_zeros() as usize;
                        total += &element_weights[e];
                        bits &= bits - 1;
                    }
                }
                total
            }
            Family::GraphCut { weights } => {
                let outside = AgentSet::full(self.n).difference(s);
                let mut total = Q::zero();
                for u in s.iter() {
                    for w in outside.iter() {
                        total += &weights[u][w];
                    }
                }
                total
            }
            Family::Table { values } => values[s.bits() as usize].clone(),
        }
    }

    /// `v(S)` times a fixed positive denominator, when the weights allow it.
    /// Orders sets exactly like `value`.
    pub(crate) fn value_key(&self, s: AgentSet) -> Option<i128> {
        self.scaled.as_ref().map(|sc| self.scaled_value(sc, s))
    }

    fn scaled_value(&self, sc: &Scaled, s: AgentSet) -> i128 {
        let w = &sc.nums;
        match &self.family {
            Family::Additive { .. } => s.iter().map(|i| w[i] as i128).sum(),
            Family::Coverage { .. } => {
                let mut covered = vec![0u64; self.cover_masks.first().map_or(0, Vec::len)];
                for i in s.iter() {
                    for (c, m) in covered.iter_mut().zip(&self.cover_masks[i]) {
                        *c |= m;
                    }
                }
                let mut total = 0i128;
                for (word, &bits) in covered.iter().enumerate() {
                    let mut bits = bits;
                    while bits != 0 {
                        total += w[word * 64 + bits.trailing_zeros() as usize] as i128;
                        bits &= bits - 1;
                    }
                }
                total
            }
            Family::GraphCut { .. } => {
                let outside = AgentSet::full(self.n).difference(s);
                s.iter()
                    .map(|u| {
                        outside
                            .iter()
                            .map(|v| w[u * self.n + v] as i128)
                            .sum::<i128>()
                    })
                    .sum()
            }
            Family::Table { .. } => unreachable!("tables are never scaled"),
        }
    }

    /// Values of all `2^n` subsets indexed by bitmask.
    pub fn value_table(&self) -> Vec<Q> {
        AgentSet::full(self.n)
            .subsets()
            .map(|s| self.value(s))
            .collect()
    }

    fn check_set(&self, s: AgentSet) -> Result<()> {
        if s.span() > self.n {
            return domain(format!("set {s} outside ground set of size {}", self.n));
        }
        Ok(())
    }
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_AGENTS {
        return domain(format!(
            "at most {MAX_AGENTS} agents are supported, got {n}"
        ));
    }
    Ok(())
}

/// A witnessed failure of one of the structural inequalities.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "property", rename_all = "kebab-case")]
pub enum Counterexample {
    /// `v(i|S) < v(i|T)` with `S ⊆ T`, `i ∉ T`.
    Submodularity {
        s: Vec<usize>,
        t: Vec<usize>,
        agent: usize,
        #[serde(with = "crate::num::q_string")]
        marginal_small_set: Q,
        #[serde(with = "crate::num::q_string")]
        marginal_large_set: Q,
    },
    /// `v(T) > v(S) + Σ_{T∖S} v(i|S) − Σ_{S∖T} v(i|(S∪T)∖{i})`.
    Nemhauser {
        s: Vec<usize>,
        t: Vec<usize>,
        #[serde(with = "crate::num::q_string")]
        lhs: Q,
        #[serde(with = "crate::num::q_string")]
        rhs: Q,
    },
    /// `v(S) > v(T)` with `S ⊆ T`.
    Monotonicity {
        s: Vec<usize>,
        t: Vec<usize>,
        #[serde(with = "crate::num::q_string")]
        value_small_set: Q,
        #[serde(with = "crate::num::q_string")]
        value_large_set: Q,
    },
}

impl Counterexample {
    /// Re-evaluates the witness against `oracle`; true iff it is still a violation.
    pub fn reverify(&self, oracle: &ValuationOracle) -> bool {
        let set = |v: &[usize]| v.iter().copied().collect::<AgentSet>();
        match self {
            Counterexample::Submodularity { s, t, agent, .. } => {
                let (s, t) = (set(s), set(t));
                s.is_subset(t)
                    && !t.contains(*agent)
                    && oracle.marginal_unchecked(*agent, s) < oracle.marginal_unchecked(*agent, t)
            }
            Counterexample::Nemhauser { s, t, .. } => {
                let (s, t) = (set(s), set(t));
                let (lhs, rhs) = nemhauser_sides(|x| oracle.value(x), s, t);
                lhs > rhs
            }
            Counterexample::Monotonicity { s, t, .. } => {
                let (s, t) = (set(s), set(t));
                s.is_subset(t) && oracle.value(s) > oracle.value(t)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyReport {
    pub passed: bool,
    pub counterexample: Option<Counterexample>,
}

impl PropertyReport {
    fn from_witness(c: Option<Counterexample>) -> Self {
        PropertyReport {
            passed: c.is_none(),
            counterexample: c,
        }
    }
}

fn refuse_if_large(oracle: &ValuationOracle, max_n: usize) -> Result<()> {
    if oracle.ground_size() > max_n {
        return Err(Error::Refused(format!(
            "exhaustive check over {} agents exceeds the limit of {max_n}",
            oracle.ground_size()
        )));
    }
    if oracle.ground_size() > MAX_TABLE_AGENTS {
        return Err(Error::Refused(format!(
            "exhaustive checks are limited to {MAX_TABLE_AGENTS} agents"
        )));
    }
    Ok(())
}

/// Exhaustively checks `v(i|S) ≥ v(i|T)` for all `S ⊆ T`, `i ∉ T`. The first
/// violation in `(|S|, S)`, then `(|T|, T)`, then `i` order is reported.
pub fn check_submodular(oracle: &ValuationOracle, max_n: usize) -> Result<PropertyReport> {
    refuse_if_large(oracle, max_n)?;
    let n = oracle.ground_size();
    let vals = oracle.value_table();
    let order = subsets_by_size_lex(n);
    let marg = |i: usize, s: AgentSet| &vals[s.with(i).bits() as usize] - &vals[s.bits() as usize];
    for &s in &order {
        for &t in order.iter().filter(|t| s.is_subset(**t)) {
            for i in (0..n).filter(|i| !t.contains(*i)) {
                let (small, large) = (marg(i, s), marg(i, t));
                if small < large {
                    return Ok(PropertyReport::from_witness(Some(
                        Counterexample::Submodularity {
                            s: s.to_vec(),
                            t: t.to_vec(),
                            agent: i,
                            marginal_small_set: small,
                            marginal_large_set: large,
                        },
                    )));
                }
            }
        }
    }
    Ok(PropertyReport::from_witness(None))
}

fn nemhauser_sides(value: impl Fn(AgentSet) -> Q, s: AgentSet, t: AgentSet) -> (Q, Q) {
    let st = s.union(t);
    let vs = value(s);
    let mut rhs = vs.clone();
    for i in t.difference(s).iter() {
        rhs += value(s.with(i)) - &vs;
    }
    let vst = value(st);
    for i in s.difference(t).iter() {
        rhs -= &vst - value(st.without(i));
    }
    (value(t), rhs)
}

/// Exhaustively checks the Nemhauser–Wolsey–Fisher characterization
/// `v(T) ≤ v(S) + Σ_{i∈T∖S} v(i|S) − Σ_{i∈S∖T} v(i|(S∪T)∖{i})` for all pairs.
pub fn check_nemhauser(oracle: &ValuationOracle, max_n: usize) -> Result<PropertyReport> {
    refuse_if_large(oracle, max_n)?;
    let vals = oracle.value_table();
    let order = subsets_by_size_lex(oracle.ground_size());
    for &s in &order {
        for &t in &order {
            let (lhs, rhs) = nemhauser_sides(|x| vals[x.bits() as usize].clone(), s, t);
            if lhs > rhs {
                return Ok(PropertyReport::from_witness(Some(
                    Counterexample::Nemhauser {
                        s: s.to_vec(),
                        t: t.to_vec(),
                        lhs,
                        rhs,
                    },
                )));
            }
        }
    }
    Ok(PropertyReport::from_witness(None))
}

/// Exhaustively checks `v(S) ≤ v(T)` for all `S ⊆ T`.
pub fn check_monotone(oracle: &ValuationOracle, max_n: usize) -> Result<PropertyReport> {
    refuse_if_large(oracle, max_n)?;
    let vals = oracle.value_table();
    let order = subsets_by_size_lex(oracle.ground_size());
    for &s in &order {
        for &t in order.iter().filter(|t| s.is_subset(**t)) {
            let (vs, vt) = (&vals[s.bits() as usize], &vals[t.bits() as usize]);
            if vs > vt {
                return Ok(PropertyReport::from_witness(Some(
                    Counterexample::Monotonicity {
                        s: s.to_vec(),
                        t: t.to_vec(),
                        value_small_set: vs.clone(),
                        value_large_set: vt.clone(),
                    },
                )));
            }
        }
    }
    Ok(PropertyReport::from_witness(None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{qi, Q};

    fn set(v: &[usize]) -> AgentSet {
        v.iter().copied().collect()
    }

    fn ints(v: &[i64]) -> Vec<Q> {
        v.iter().map(|&x| qi(x)).collect()
    }

    fn sample_coverage() -> ValuationOracle {
        // {a,b}, {b,c}, {c}
        ValuationOracle::coverage(vec![vec![0, 1], vec![1, 2], vec![2]], ints(&[1, 1, 1])).unwrap()
    }

    fn squares(n: usize) -> ValuationOracle {
        let vals = AgentSet::full(n)
            .subsets()
            .map(|s| qi((s.len() * s.len()) as i64))
            .collect();
        ValuationOracle::table(n, vals, OracleKind::GeneralSubmodular).unwrap()
    }

    #[test]
    fn eval_examples() {
        let add = ValuationOracle::additive(ints(&[1, 1])).unwrap();
        assert_eq!(add.eval(AgentSet::EMPTY).unwrap(), qi(0));
        assert_eq!(add.eval(set(&[0, 1])).unwrap(), qi(2));
        assert_eq!(sample_coverage().eval(set(&[0, 1])).unwrap(), qi(3));
        assert!(matches!(add.eval(set(&[2])), Err(Error::Domain(_))));
    }

    #[test]
    fn marginal_examples() {
        let add = ValuationOracle::additive(ints(&[3, 5])).unwrap();
        assert_eq!(add.marginal(1, set(&[0])).unwrap(), qi(5));
        assert_eq!(sample_coverage().marginal(2, set(&[0, 1])).unwrap(), qi(0));
        let cut = ValuationOracle::graph_cut(vec![ints(&[0, 1]), ints(&[1, 0])]).unwrap();
        assert_eq!(cut.marginal(1, set(&[0])).unwrap(), qi(-1));
        assert!(matches!(add.marginal(0, set(&[0])), Err(Error::Domain(_))));
    }

    #[test]
    fn submodular_checker_examples() {
        let add = ValuationOracle::additive(ints(&[1, 2, 3])).unwrap();
        assert!(check_submodular(&add, 12).unwrap().passed);
        assert!(check_submodular(&sample_coverage(), 12).unwrap().passed);
        let report = check_submodular(&squares(3), 12).unwrap();
        assert!(!report.passed);
        let cx = report.counterexample.unwrap();
        assert_eq!(
            cx,
            Counterexample::Submodularity {
                s: vec![],
                t: vec![0],
                agent: 1,
                marginal_small_set: qi(1),
                marginal_large_set: qi(3),
            }
        );
        assert!(cx.reverify(&squares(3)));
    }

    #[test]
    fn nemhauser_checker_examples() {
        let cut = ValuationOracle::graph_cut(vec![ints(&[0, 1]), ints(&[1, 0])]).unwrap();
        assert!(check_nemhauser(&cut, 8).unwrap().passed);
        assert!(check_nemhauser(&sample_coverage(), 8).unwrap().passed);
        let report = check_nemhauser(&squares(3), 8).unwrap();
        assert!(!report.passed);
        assert!(report.counterexample.unwrap().reverify(&squares(3)));
        // S = T: both sums vanish.
        let (l, r) = nemhauser_sides(|x| cut.value(x), set(&[0]), set(&[0]));
        assert_eq!(l, r);
    }

    #[test]
    fn refuses_oversized_checks() {
        let add = ValuationOracle::additive(ints(&[1; 9])).unwrap();
        assert!(matches!(check_submodular(&add, 8), Err(Error::Refused(_))));
        assert!(matches!(check_nemhauser(&add, 8), Err(Error::Refused(_))));
    }

    #[test]
    fn constructor_validation() {
        assert!(ValuationOracle::additive(ints(&[-1])).is_err());
        assert!(ValuationOracle::graph_cut(vec![ints(&[0, 1]), ints(&[2, 0])]).is_err());
        assert!(ValuationOracle::coverage(vec![vec![5]], ints(&[1])).is_err());
        assert!(ValuationOracle::table(1, ints(&[1, 1]), OracleKind::Additive).is_err());
    }
}
