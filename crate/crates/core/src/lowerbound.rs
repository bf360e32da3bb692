//! Two-agent canonical instances on a cost grid: monotone allocation tables,
//! threshold payments, the budget-line distribution `P(k)`, an exhaustive
//! search for the best deterministic table, and Yao's mixing inequality.
//!
//! Both agents have value 1 (additive), the prediction is `{0, 1}`, and costs
//! live on the grid `{0, B/k, …, B}`. Profiles are written as grid indices
//! `(i, j)` meaning costs `(iB/k, jB/k)`.

use num_traits::{One, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::num::{q_string, qi, render_q, Q};

/// Largest resolution [`max_expected_ratio`] accepts.
pub const MAX_SEARCH_K: usize = 6;

pub type GridProfile = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CanonicalGrid {
    #[serde(with = "q_string")]
    pub budget: Q,
    pub k: usize,
}

impl CanonicalGrid {
    pub fn new(k: usize, budget: Q) -> Result<Self> {
        if k < 2 {
            return domain("grid resolution k must be at least 2");
        }
        if budget <= Q::zero() {
            return domain("budget must be positive");
        }
        Ok(CanonicalGrid { budget, k })
    }

    pub fn cost(&self, idx: usize) -> Q {
        &self.budget * qi(idx as i64) / qi(self.k as i64)
    }

    pub fn side(&self) -> usize {
        self.k + 1
    }

    fn cell(&self, (i, j): GridProfile) -> usize {
        i * self.side() + j
    }

    pub fn profiles(&self) -> impl Iterator<Item = GridProfile> + '_ {
        (0..=self.k).flat_map(move |i| (0..=self.k).map(move |j| (i, j)))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportVariant {
    /// `(iB/k, (k−i)B/k)` for `i = 1..k`.
    #[default]
    Text,
    /// `(iB/k, (k−1−i)B/k)` for `i = 0..k−1`, as drawn in the figure.
    Figure,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileDistribution {
    pub grid: CanonicalGrid,
    pub variant: SupportVariant,
    pub support: Vec<GridProfile>,
    #[serde(with = "crate::num::q_vec_string")]
    pub probabilities: Vec<Q>,
}

impl ProfileDistribution {
    pub fn costs(&self) -> Vec<(Q, Q)> {
        self.support
            .iter()
            .map(|&(i, j)| (self.grid.cost(i), self.grid.cost(j)))
            .collect()
    }
}

/// `P(k)`: uniform over the budget line `c₀ + c₁ = B` excluding `(0, B)`.
pub fn build_pk(k: usize, budget: Q) -> Result<ProfileDistribution> {
    build_pk_variant(k, budget, SupportVariant::Text)
}

pub fn build_pk_variant(
    k: usize,
    budget: Q,
    variant: SupportVariant,
) -> Result<ProfileDistribution> {
    let grid = CanonicalGrid::new(k, budget)?;
    let support: Vec<GridProfile> = match variant {
        SupportVariant::Text => (1..=k).map(|i| (i, k - i)).collect(),
        SupportVariant::Figure => (0..k).map(|i| (i, k - 1 - i)).collect(),
    };
    let p = Q::one() / qi(support.len() as i64);
    Ok(ProfileDistribution {
        grid,
        variant,
        probabilities: vec![p; support.len()],
        support,
    })
}

/// Allocation only: bit 0 set when agent 0 is hired, bit 1 for agent 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AllocationTable {
    pub grid: CanonicalGrid,
    pub cells: Vec<u8>,
}

impl AllocationTable {
    pub fn from_fn(grid: CanonicalGrid, f: impl Fn(usize, usize) -> u8) -> Self {
        let cells = grid.profiles().map(|(i, j)| f(i, j) & 0b11).collect();
        AllocationTable { grid, cells }
    }

    pub fn winners(&self, p: GridProfile) -> u8 {
        self.cells[self.grid.cell(p)]
    }
}

fn wins(mask: u8, agent: usize) -> bool {
    mask >> agent & 1 == 1
}

/// A monotone table with its threshold payments. `thresholds[0][j]` is the
/// largest grid index at which agent 0 wins when agent 1 bids index `j`
/// (−1 if never); `thresholds[1][i]` likewise for agent 1.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CanonicalMechTable {
    pub grid: CanonicalGrid,
    pub allocation: Vec<u8>,
    pub thresholds: [Vec<i32>; 2],
}

impl CanonicalMechTable {
    /// Agent 0 wins at `(i, j)` iff `i ≤ t0[j]`; agent 1 iff `j ≤ t1[i]`.
    pub fn from_thresholds(grid: CanonicalGrid, t0: Vec<i32>, t1: Vec<i32>) -> Result<Self> {
        let side = grid.side();
        let k = grid.k as i32;
        if t0.len() != side || t1.len() != side || t0.iter().chain(&t1).any(|&t| t < -1 || t > k) {
            return domain("thresholds must have k+1 entries in −1..=k");
        }
        let allocation = grid
            .profiles()
            .map(|(i, j)| u8::from(i as i32 <= t0[j]) | u8::from(j as i32 <= t1[i]) << 1)
            .collect();
        Ok(CanonicalMechTable {
            grid,
            allocation,
            thresholds: [t0, t1],
        })
    }

    pub fn winners(&self, p: GridProfile) -> u8 {
        self.allocation[self.grid.cell(p)]
    }

    /// Threshold payment: the largest grid cost at which the agent still wins.
    pub fn payment(&self, (i, j): GridProfile, agent: usize) -> Q {
        if !wins(self.winners((i, j)), agent) {
            return Q::zero();
        }
        let t = if agent == 0 {
            self.thresholds[0][j]
        } else {
            self.thresholds[1][i]
        };
        self.grid.cost(t as usize)
    }

    pub fn total_payment(&self, p: GridProfile) -> Q {
        self.payment(p, 0) + self.payment(p, 1)
    }

    /// Profiles where total payment exceeds `B`, with that total.
    pub fn budget_violations(&self) -> Vec<(GridProfile, Q)> {
        self.grid
            .profiles()
            .filter_map(|p| {
                let t = self.total_payment(p);
                (t > self.grid.budget).then_some((p, t))
            })
            .collect()
    }

    pub fn is_budget_feasible(&self) -> bool {
        let k = self.grid.k as i32;
        self.grid.profiles().all(|(i, j)| {
            self.winners((i, j)) != 0b11 || self.thresholds[0][j] + self.thresholds[1][i] <= k
        })
    }

    pub fn is_individually_rational(&self) -> bool {
        self.grid.profiles().all(|(i, j)| {
            (0..2).all(|a| {
                let own = if a == 0 { i } else { j };
                !wins(self.winners((i, j)), a) || self.payment((i, j), a) >= self.grid.cost(own)
            })
        })
    }

    /// `E_{c∼P}[v(A(c))/2]`.
    pub fn expected_ratio(&self, dist: &ProfileDistribution) -> Q {
        dist.support
            .iter()
            .zip(&dist.probabilities)
            .map(|(&p, w)| w * qi(i64::from(self.winners(p).count_ones())) / qi(2))
            .sum()
    }

    /// Row `i` lists the winner masks for `j = 0..=k`.
    pub fn render(&self) -> String {
        let side = self.grid.side();
        let label = |m: u8| match m {
            0 => "-",
            1 => "0",
            2 => "1",
            _ => "01",
        };
        self.allocation
            .chunks(side)
            .map(|row| {
                row.iter()
                    .map(|&m| format!("{:>2}", label(m)))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Derives threshold payments from an allocation, after checking that each
/// agent's winning costs form a down-set with the other cost fixed.
pub fn payments_from_identity(alloc: &AllocationTable) -> Result<CanonicalMechTable> {
    let grid = alloc.grid.clone();
    let side = grid.side();
    let mut thresholds = [vec![-1i32; side], vec![-1i32; side]];
    for agent in 0..2 {
        for other in 0..side {
            let at = |own: usize| {
                if agent == 0 {
                    (own, other)
                } else {
                    (other, own)
                }
            };
            let mut lost_at: Option<usize> = None;
            for own in 0..side {
                let p = at(own);
                if wins(alloc.winners(p), agent) {
                    if let Some(l) = lost_at {
                        let q = at(l);
                        return Err(Error::Characterization(format!(
                            "agent {agent} wins at costs ({}, {}) but loses at the lower own cost ({}, {})",
                            render_q(&grid.cost(p.0)),
                            render_q(&grid.cost(p.1)),
                            render_q(&grid.cost(q.0)),
                            render_q(&grid.cost(q.1)),
                        )));
                    }
                    thresholds[agent][other] = own as i32;
                } else if lost_at.is_none() {
                    lost_at = Some(own);
                }
            }
        }
    }
    let [t0, t1] = thresholds;
    let table = CanonicalMechTable::from_thresholds(grid, t0, t1)?;
    debug_assert_eq!(table.allocation, alloc.cells);
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockingReport {
    pub profiles: (GridProfile, GridProfile),
    pub value_sum: u32,
    pub budget_feasible: bool,
    /// First over-budget profile and its total payment.
    pub budget_witness: Option<(GridProfile, String)>,
    /// Feasible tables never reach value 4 on two distinct budget-line profiles.
    pub passed: bool,
}

/// Value sum `v(A(c, B−c)) + v(A(c′, B−c′))` for two budget-line profiles.
pub fn check_profile_blocking(
    table: &CanonicalMechTable,
    a: GridProfile,
    b: GridProfile,
) -> Result<BlockingReport> {
    let k = table.grid.k;
    for p in [a, b] {
        if p.0 + p.1 != k || p.0 == 0 {
            return domain("profiles must lie on the budget line with c₀ ∈ (0, B]");
        }
    }
    let sum = table.winners(a).count_ones() + table.winners(b).count_ones();
    let witness = table.budget_violations().into_iter().next();
    let feasible = witness.is_none();
    Ok(BlockingReport {
        profiles: (a, b),
        value_sum: sum,
        budget_feasible: feasible,
        budget_witness: witness.map(|(p, t)| (p, render_q(&t))),
        passed: !feasible || sum <= 3 || a == b,
    })
}

/// Every unordered pair of distinct budget-line profiles.
pub fn check_all_blocking(table: &CanonicalMechTable) -> Vec<BlockingReport> {
    let k = table.grid.k;
    let line: Vec<GridProfile> = (1..=k).map(|c| (c, k - c)).collect();
    let mut out = Vec::new();
    for (x, &a) in line.iter().enumerate() {
        for &b in &line[x + 1..] {
            out.push(check_profile_blocking(table, a, b).expect("profiles on the line"));
        }
    }
    out
}

/// Fast form of [`check_all_blocking`] for feasible threshold pairs.
fn blocking_holds(k: usize, t0: &[i32], t1: &[i32]) -> bool {
    let hires = |c: usize| u32::from(c as i32 <= t0[k - c]) + u32::from((k - c) as i32 <= t1[c]);
    let both = (1..=k).filter(|&c| hires(c) == 2).count();
    both <= 1
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchResult {
    pub k: usize,
    #[serde(with = "q_string")]
    pub budget: Q,
    #[serde(with = "q_string")]
    pub max_expected_ratio: Q,
    /// `(1 + 1/k)/2`.
    #[serde(with = "q_string")]
    pub ceiling: Q,
    pub witness: CanonicalMechTable,
    /// Curves enumerated for agent 0, each completed optimally for agent 1.
    pub curves_visited: u64,
    /// Monotone budget-feasible tables implied by the enumeration.
    pub feasible_tables: u128,
    pub blocking_checks: u64,
    pub blocking_passed: bool,
    /// Maximum over the reduced space where each threshold either just reaches
    /// the support profile or is −1.
    #[serde(with = "q_string")]
    pub reduced_max: Q,
}

/// Decodes curve number `code` (base `k+2`) into thresholds `−1..=k`.
fn decode_curve(mut code: u64, side: usize) -> Vec<i32> {
    let base = side as u64 + 1;
    (0..side)
        .map(|_| {
            let d = (code % base) as i32 - 1;
            code /= base;
            d
        })
        .collect()
}

/// For a fixed agent-0 curve, the largest feasible threshold of agent 1 at
/// each own-cost row `i`. Feasible values form a down-set `−1..=m`.
fn best_completion(k: usize, t0: &[i32]) -> Vec<i32> {
    let k_i = k as i32;
    (0..=k)
        .map(|i| {
            let mut m = -1;
            for v in 0..=k_i {
                // Agent 1 wins at (i, j) for all j ≤ v; both win where i ≤ t0[j].
                let ok = (0..=v as usize).all(|j| t0[j] < i as i32 || t0[j] + v <= k_i);
                if !ok {
                    break;
                }
                m = v;
            }
            m
        })
        .collect()
}

fn support_score(dist: &ProfileDistribution, t0: &[i32], t1: &[i32]) -> Q {
    dist.support
        .iter()
        .zip(&dist.probabilities)
        .map(|(&(i, j), w)| {
            let hired = i64::from(i as i32 <= t0[j]) + i64::from(j as i32 <= t1[i]);
            w * qi(hired)
        })
        .sum::<Q>()
        / qi(2)
}

/// Exhaustive search over monotone, budget-feasible grid tables for the best
/// `E_{P(k)}[v(A(c))/v(S*)]`.
pub fn max_expected_ratio(k: usize, budget: Q) -> Result<SearchResult> {
    max_expected_ratio_for(&build_pk(k, budget)?)
}

pub fn max_expected_ratio_for(dist: &ProfileDistribution) -> Result<SearchResult> {
    let k = dist.grid.k;
    if k > MAX_SEARCH_K {
        return Err(Error::Refused(format!(
            "exhaustive table search supports k ≤ {MAX_SEARCH_K}"
        )));
    }
    let side = k + 1;
    let curves = (side as u64 + 1).pow(side as u32);
    struct Part {
        best: Option<(Q, u64)>,
        feasible: u128,
        checks: u64,
        blocking_ok: bool,
    }
    let chunk = 4096u64;
    let parts: Vec<Part> = (0..curves.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut part = Part {
                best: None,
                feasible: 0,
                checks: 0,
                blocking_ok: true,
            };
            for code in c * chunk..((c + 1) * chunk).min(curves) {
                let t0 = decode_curve(code, side);
                let t1 = best_completion(k, &t0);
                part.feasible += t1.iter().map(|&m| (m + 2) as u128).product::<u128>();
                part.checks += 1;
                part.blocking_ok &= blocking_holds(k, &t0, &t1);
                let s = support_score(dist, &t0, &t1);
                if part.best.as_ref().is_none_or(|(b, _)| s > *b) {
                    part.best = Some((s, code));
                }
            }
            part
        })
        .collect();
    let mut best: Option<(Q, u64)> = None;
    let (mut feasible, mut checks, mut blocking_ok) = (0u128, 0u64, true);
    for p in parts {
        feasible += p.feasible;
        checks += p.checks;
        blocking_ok &= p.blocking_ok;
        if let Some((s, code)) = p.best {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, code));
            }
        }
    }
    let (value, code) = best.expect("at least one curve");
    let t0 = decode_curve(code, side);
    let t1 = best_completion(k, &t0);
    let witness = CanonicalMechTable::from_thresholds(dist.grid.clone(), t0, t1)?;
    let k_q = qi(k as i64);
    Ok(SearchResult {
        k,
        budget: dist.grid.budget.clone(),
        max_expected_ratio: value,
        ceiling: (Q::one() + Q::one() / &k_q) / qi(2),
        witness,
        curves_visited: curves,
        feasible_tables: feasible,
        blocking_checks: checks,
        blocking_passed: blocking_ok,
        reduced_max: reduced_max(dist),
    })
}

/// Search restricted to thresholds that either sit exactly on the support
/// profile in their row or column, or are −1. Lowering a threshold never
/// breaks feasibility, so this loses nothing when each row and column holds
/// at most one support profile.
pub fn reduced_max(dist: &ProfileDistribution) -> Q {
    let k = dist.grid.k;
    let side = k + 1;
    let pts = &dist.support;
    let m = pts.len();
    let mut best = Q::zero();
    for mask0 in 0u32..1 << m {
        let mut t0 = vec![-1i32; side];
        for (s, &(i, j)) in pts.iter().enumerate() {
            if mask0 >> s & 1 == 1 {
                t0[j] = t0[j].max(i as i32);
            }
        }
        for mask1 in 0u32..1 << m {
            let mut t1 = vec![-1i32; side];
            for (s, &(i, j)) in pts.iter().enumerate() {
                if mask1 >> s & 1 == 1 {
                    t1[i] = t1[i].max(j as i32);
                }
            }
            let feasible = (0..=k).all(|i| {
                (0..=k)
                    .all(|j| !(i as i32 <= t0[j] && j as i32 <= t1[i]) || t0[j] + t1[i] <= k as i32)
            });
            if feasible {
                let s = support_score(dist, &t0, &t1);
                if s > best {
                    best = s;
                }
            }
        }
    }
    best
}

/// Every monotone, budget-feasible table on a small grid.
pub fn enumerate_feasible_tables(grid: &CanonicalGrid) -> Result<Vec<CanonicalMechTable>> {
    if grid.k > 3 {
        return Err(Error::Refused("table enumeration supports k ≤ 3".into()));
    }
    let side = grid.side();
    let mut out = Vec::new();
    for code in 0..(side as u64 + 1).pow(side as u32) {
        let t0 = decode_curve(code, side);
        let caps = best_completion(grid.k, &t0);
        let mut t1 = vec![-1i32; side];
        loop {
            out.push(CanonicalMechTable::from_thresholds(
                grid.clone(),
                t0.clone(),
                t1.clone(),
            )?);
            let mut d = 0;
            while d < side && t1[d] == caps[d] {
                t1[d] = -1;
                d += 1;
            }
            if d == side {
                break;
            }
            t1[d] += 1;
        }
    }
    Ok(out)
}

/// Uniform agent-0 curve, then uniform feasible agent-1 thresholds.
pub fn random_valid_table<R: Rng>(grid: &CanonicalGrid, rng: &mut R) -> CanonicalMechTable {
    let k = grid.k as i32;
    let t0: Vec<i32> = (0..grid.side()).map(|_| rng.gen_range(-1..=k)).collect();
    let t1 = best_completion(grid.k, &t0)
        .into_iter()
        .map(|m| rng.gen_range(-1..=m))
        .collect();
    CanonicalMechTable::from_thresholds(grid.clone(), t0, t1).expect("thresholds in range")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixedTable {
    #[serde(with = "crate::num::q_vec_string")]
    pub weights: Vec<Q>,
    pub tables: Vec<CanonicalMechTable>,
}

impl MixedTable {
    pub fn new(weights: Vec<Q>, tables: Vec<CanonicalMechTable>) -> Result<Self> {
        if weights.is_empty() || weights.len() != tables.len() {
            return domain("mixture needs one weight per table");
        }
        if weights.iter().any(|w| *w < Q::zero()) || weights.iter().sum::<Q>() != Q::one() {
            return domain("mixture weights must be non-negative and sum to 1");
        }
        Ok(MixedTable { weights, tables })
    }
}

/// 1 to `max_tables` random valid tables with random positive weights.
pub fn random_mixture<R: Rng>(grid: &CanonicalGrid, max_tables: usize, rng: &mut R) -> MixedTable {
    let count = rng.gen_range(1..=max_tables.max(1));
    let raw: Vec<i64> = (0..count).map(|_| rng.gen_range(1..=16)).collect();
    let total: i64 = raw.iter().sum();
    let weights = raw
        .iter()
        .map(|&w| Q::new(w.into(), total.into()))
        .collect();
    let tables = (0..count).map(|_| random_valid_table(grid, rng)).collect();
    MixedTable { weights, tables }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YaoReport {
    /// `min_c E_{A∼mix}[v(A(c))/2]` over the support.
    #[serde(with = "q_string")]
    pub lhs: Q,
    /// `max_A E_{c∼P}[v(A(c))/2]` over tables in the mixture.
    #[serde(with = "q_string")]
    pub rhs: Q,
    pub holds: bool,
}

pub fn yao_check(mix: &MixedTable, dist: &ProfileDistribution) -> YaoReport {
    let lhs = dist
        .support
        .iter()
        .map(|&p| {
            mix.weights
                .iter()
                .zip(&mix.tables)
                .map(|(w, t)| w * qi(i64::from(t.winners(p).count_ones())) / qi(2))
                .sum::<Q>()
        })
        .min()
        .unwrap_or_else(Q::zero);
    let rhs = mix
        .tables
        .iter()
        .map(|t| t.expected_ratio(dist))
        .max()
        .unwrap_or_else(Q::zero);
    YaoReport {
        holds: lhs <= rhs,
        lhs,
        rhs,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainCheck {
    pub k: usize,
    /// Best expected ratio any deterministic table reaches under `P(k)`.
    #[serde(with = "q_string")]
    pub ceiling: Q,
    /// Expected ratio a `(2 − 2/k)`-consistent mechanism would guarantee.
    #[serde(with = "q_string")]
    pub required: Q,
    /// `2k/(k+1)`: the smallest consistency factor compatible with the ceiling.
    #[serde(with = "q_string")]
    pub min_consistency: Q,
    /// `required > ceiling`, i.e. `(2 − 2/k)`-consistency is impossible.
    pub contradiction: bool,
}

pub fn chain_check(k: usize) -> Result<ChainCheck> {
    if k < 2 {
        return domain("k must be at least 2");
    }
    let kq = qi(k as i64);
    let ceiling = (Q::one() + Q::one() / &kq) / qi(2);
    let required = Q::one() / (qi(2) - qi(2) / &kq);
    Ok(ChainCheck {
        k,
        contradiction: required > ceiling,
        min_consistency: Q::one() / &ceiling,
        ceiling,
        required,
    })
}
