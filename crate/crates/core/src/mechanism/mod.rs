//! Online posted-price mechanisms, deterministic given an arrival order and a
//! [`CoinTranscript`].
//!
//! Coin slots: 0 decides the `τ` mixture, 1 the `p`/`q` branch, 2 drives the
//! binomial sample size `ξ₁` and 3 picks which of the two disjoint solutions
//! is returned. Sharing slots across mechanisms makes boundary cases replay
//! identically (e.g. mechanism 1 with `τ = 0` and mechanism 3).

mod mono;
mod nonmono;
mod posted;

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::instance::{ArrivalOrder, AugmentedInstance, Instance, Market};
use crate::num::{q_string, q_vec_string, qi, Q};
use crate::set::AgentSet;

pub use mono::{run_dynkin, run_mech_calibrated, run_mech_convex, run_mech_pred, run_mech_sample};
pub use nonmono::{run_nonmono_convex, run_twosol_calibrated, run_twosol_pred, run_twosol_sample};

pub const SLOT_MIXTURE: usize = 0;
pub const SLOT_BRANCH: usize = 1;
pub const SLOT_SAMPLE: usize = 2;
pub const SLOT_CHOICE: usize = 3;

/// Uniform 64-bit coins; "with probability `p`" means `coin < p·2⁶⁴`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoinTranscript {
    pub seed: u64,
    pub coins: [u64; 4],
}

impl CoinTranscript {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coins = [0u64; 4];
        for c in &mut coins {
            *c = rng.next_u64();
        }
        CoinTranscript { seed, coins }
    }

    #[must_use]
    pub fn with_coin(mut self, slot: usize, value: u64) -> Self {
        self.coins[slot] = value;
        self
    }

    /// The coin in `slot` as an exact fraction in `[0, 1)`.
    pub fn uniform(&self, slot: usize) -> Q {
        Q::new(BigInt::from(self.coins[slot]), BigInt::one() << 64)
    }

    pub fn bernoulli(&self, slot: usize, p: &Q) -> bool {
        self.uniform(slot) < *p
    }

    /// Inverse-CDF draw from Binomial(n, p), exact in rational arithmetic.
    pub fn binomial(&self, slot: usize, n: usize, p: &Q) -> usize {
        let u = self.uniform(slot);
        let one_minus = Q::one() - p;
        if one_minus.is_zero() {
            return n;
        }
        let ratio = p / &one_minus;
        let mut pmf = num_traits::pow(one_minus, n);
        let mut cdf = pmf.clone();
        for x in 0..n {
            if u < cdf {
                return x;
            }
            pmf = pmf * qi((n - x) as i64) / qi(x as i64 + 1) * &ratio;
            cdf += &pmf;
        }
        n
    }

    /// `1` or `2`, each with probability one half.
    pub fn chosen_solution(&self) -> u8 {
        if self.coins[SLOT_CHOICE] < 1 << 63 {
            1
        } else {
            2
        }
    }
}

/// Independent per-trial generator derived from a root seed.
pub fn trial_rng(root_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(trial);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechParams {
    #[serde(with = "q_string")]
    pub tau: Q,
    #[serde(with = "q_string")]
    pub p_pred: Q,
    #[serde(with = "q_string")]
    pub a: Q,
    #[serde(with = "q_string")]
    pub z: Q,
    #[serde(with = "q_string")]
    pub q_dynkin: Q,
    #[serde(with = "q_string")]
    pub beta: Q,
    #[serde(with = "q_string")]
    pub delta: Q,
    #[serde(with = "q_string")]
    pub k: Q,
}

impl Default for MechParams {
    fn default() -> Self {
        let d = |n, den| Q::new(BigInt::from(n), BigInt::from(den));
        MechParams {
            tau: d(1, 2),
            p_pred: d(46, 100),
            a: d(685, 1000),
            z: d(185, 100),
            q_dynkin: d(66, 100),
            beta: d(29, 100),
            delta: d(174, 1000),
            k: d(5, 2),
        }
    }
}

impl MechParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: &Q| {
            if v.is_negative() || *v > Q::one() {
                domain(format!("{name} must lie in [0, 1]"))
            } else {
                Ok(())
            }
        };
        unit("p", &self.p_pred)?;
        unit("q", &self.q_dynkin)?;
        if self.tau.is_negative() || self.tau >= Q::one() {
            return domain("τ must lie in [0, 1)");
        }
        if self.a.is_negative() || self.beta.is_negative() {
            return domain("a and β must be non-negative");
        }
        if self.z <= Q::one() {
            return domain("z must exceed 1");
        }
        if self.k <= Q::one() {
            return domain("k must exceed 1");
        }
        if !self.delta.is_positive() || self.delta >= Q::new(1.into(), 2.into()) {
            return domain("δ must lie in (0, 1/2)");
        }
        Ok(())
    }
}

/// Seeded defects used to check that the audits have teeth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Pay the declared cost instead of the posted price.
    FirstPrice,
    /// Skip the residual-budget test.
    IgnoreBudget,
    /// Offer prices to the sampled agents too.
    PriceSampled,
}

impl Mutation {
    pub const ALL: [Mutation; 3] = [
        Mutation::FirstPrice,
        Mutation::IgnoreBudget,
        Mutation::PriceSampled,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismId {
    Dynkin,
    Mech1,
    Mech2,
    Mech3,
    Mech4,
    Mech5,
    Mech6,
    Mech7,
    Mech8,
}

impl MechanismId {
    pub const ALL: [MechanismId; 9] = [
        MechanismId::Dynkin,
        MechanismId::Mech1,
        MechanismId::Mech2,
        MechanismId::Mech3,
        MechanismId::Mech4,
        MechanismId::Mech5,
        MechanismId::Mech6,
        MechanismId::Mech7,
        MechanismId::Mech8,
    ];

    pub const NUMBERED: [MechanismId; 8] = [
        MechanismId::Mech1,
        MechanismId::Mech2,
        MechanismId::Mech3,
        MechanismId::Mech4,
        MechanismId::Mech5,
        MechanismId::Mech6,
        MechanismId::Mech7,
        MechanismId::Mech8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MechanismId::Dynkin => "dynkin",
            MechanismId::Mech1 => "mech1",
            MechanismId::Mech2 => "mech2",
            MechanismId::Mech3 => "mech3",
            MechanismId::Mech4 => "mech4",
            MechanismId::Mech5 => "mech5",
            MechanismId::Mech6 => "mech6",
            MechanismId::Mech7 => "mech7",
            MechanismId::Mech8 => "mech8",
        }
    }

    pub fn needs_prediction(self) -> bool {
        matches!(
            self,
            MechanismId::Mech1
                | MechanismId::Mech2
                | MechanismId::Mech4
                | MechanismId::Mech5
                | MechanismId::Mech6
                | MechanismId::Mech8
        )
    }

    /// Mechanisms 1–4 assume a monotone valuation.
    pub fn requires_monotone(self) -> bool {
        matches!(
            self,
            MechanismId::Mech1 | MechanismId::Mech2 | MechanismId::Mech3 | MechanismId::Mech4
        )
    }

    /// The coin outcomes this mechanism actually reads from `transcript` on `n`
    /// agents. Transcripts with equal keys induce the same deterministic
    /// mechanism.
    pub fn decision_key(
        self,
        n: usize,
        params: &MechParams,
        transcript: &CoinTranscript,
    ) -> DecisionKey {
        use MechanismId::*;
        let mixture =
            matches!(self, Mech1 | Mech5).then(|| transcript.bernoulli(SLOT_MIXTURE, &params.tau));
        let pred_side = match self {
            Mech2 | Mech6 => true,
            Mech1 | Mech5 => mixture == Some(true),
            _ => false,
        };
        let branch = match self {
            Dynkin => None,
            _ if pred_side => Some(transcript.bernoulli(SLOT_BRANCH, &params.p_pred)),
            _ => Some(transcript.bernoulli(SLOT_BRANCH, &params.q_dynkin)),
        };
        let sampling = !pred_side && branch == Some(false);
        let xi1 = sampling.then(|| {
            let rate = match self {
                Mech4 | Mech8 => Q::one() / &params.k,
                _ => Q::new(1.into(), 2.into()),
            };
            transcript.binomial(SLOT_SAMPLE, n, &rate)
        });
        let chosen =
            matches!(self, Mech5 | Mech6 | Mech7 | Mech8).then(|| transcript.chosen_solution());
        DecisionKey {
            mixture,
            branch,
            xi1,
            chosen,
        }
    }

    /// Runs the mechanism on declared costs `market.bids`.
    pub fn run(
        self,
        market: Market,
        omega: Option<&Q>,
        order: &ArrivalOrder,
        transcript: CoinTranscript,
        params: &MechParams,
        mutation: Option<Mutation>,
    ) -> Result<MechanismOutcome> {
        if order.len() != market.n() {
            return domain("arrival order length differs from the number of agents");
        }
        params.validate()?;
        if self.requires_monotone() && !market.oracle.kind().is_monotone() {
            return Err(Error::Contract(format!(
                "{self} needs a monotone valuation"
            )));
        }
        let omega = if self.needs_prediction() {
            let w = omega.ok_or_else(|| Error::Domain(format!("{self} needs a prediction ω")))?;
            if !w.is_positive() {
                return domain("prediction ω must be positive");
            }
            Some(w)
        } else {
            None
        };
        let ctx = Ctx {
            market,
            order,
            transcript,
            params,
            mutation,
        };
        match self {
            MechanismId::Dynkin => Ok(mono::dynkin(&ctx)),
            MechanismId::Mech1 => mono::convex(&ctx, omega.unwrap()),
            MechanismId::Mech2 => mono::pred(&ctx, omega.unwrap()),
            MechanismId::Mech3 => mono::sample(&ctx),
            MechanismId::Mech4 => mono::calibrated(&ctx, omega.unwrap()),
            MechanismId::Mech5 => nonmono::convex(&ctx, omega.unwrap()),
            MechanismId::Mech6 => nonmono::pred(&ctx, omega.unwrap()),
            MechanismId::Mech7 => nonmono::sample(&ctx),
            MechanismId::Mech8 => nonmono::calibrated(&ctx, omega.unwrap()),
        }
    }

    /// Truthful run on an instance (`aug` supplies `ω` where needed).
    pub fn run_instance(
        self,
        inst: &Instance,
        omega: Option<&Q>,
        order: &ArrivalOrder,
        transcript: CoinTranscript,
        params: &MechParams,
    ) -> Result<MechanismOutcome> {
        self.run(inst.market(), omega, order, transcript, params, None)
    }

    pub fn run_augmented(
        self,
        aug: &AugmentedInstance,
        order: &ArrivalOrder,
        transcript: CoinTranscript,
        params: &MechParams,
    ) -> Result<MechanismOutcome> {
        self.run(
            aug.base.market(),
            Some(&aug.omega),
            order,
            transcript,
            params,
            None,
        )
    }
}

impl fmt::Display for MechanismId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MechanismId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MechanismId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown mechanism {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DecisionKey {
    pub mixture: Option<bool>,
    pub branch: Option<bool>,
    pub xi1: Option<usize>,
    pub chosen: Option<u8>,
}

pub(crate) struct Ctx<'a> {
    pub market: Market<'a>,
    pub order: &'a ArrivalOrder,
    pub transcript: CoinTranscript,
    pub params: &'a MechParams,
    pub mutation: Option<Mutation>,
}

/// Which top-level side of a `τ` mixture ran.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Prediction,
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// Secretary rule, pays `B`.
    Dynkin,
    /// First agent with `v(j) ≥ a·ω/z`, pays `B`.
    SingleAgent,
    PostedPrice,
    /// Sampling produced a zero threshold; nobody is hired.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Offer {
    pub agent: usize,
    #[serde(with = "q_string")]
    pub price: Q,
    pub accepted: bool,
    /// Which of the two disjoint solutions the offer was made for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSolutionState {
    pub s1: Vec<usize>,
    pub s2: Vec<usize>,
    #[serde(with = "q_string")]
    pub b1: Q,
    #[serde(with = "q_string")]
    pub b2: Q,
    pub chosen: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    pub winners: AgentSet,
    /// Indexed by agent; zero for non-winners.
    #[serde(with = "q_vec_string")]
    pub payments: Vec<Q>,
    #[serde(with = "q_string")]
    pub value: Q,
    pub transcript: CoinTranscript,
    pub side: Option<Side>,
    pub branch: Branch,
    #[serde(with = "q_string")]
    pub residual_budget: Q,
    pub xi1: Option<usize>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::num::opt_q_string"
    )]
    pub threshold: Option<Q>,
    pub offers: Vec<Offer>,
    pub two_solution: Option<TwoSolutionState>,
}

impl MechanismOutcome {
    pub(crate) fn empty(ctx: &Ctx, branch: Branch) -> Self {
        MechanismOutcome {
            winners: AgentSet::EMPTY,
            payments: vec![Q::zero(); ctx.market.n()],
            value: Q::zero(),
            transcript: ctx.transcript,
            side: None,
            branch,
            residual_budget: ctx.market.budget.clone(),
            xi1: None,
            threshold: None,
            offers: Vec::new(),
            two_solution: None,
        }
    }

    pub fn total_payment(&self) -> Q {
        self.payments.iter().sum()
    }

    /// Payment minus true cost if hired, else zero.
    pub fn utility(&self, agent: usize, true_cost: &Q) -> Q {
        if self.winners.contains(agent) {
            &self.payments[agent] - true_cost
        } else {
            Q::zero()
        }
    }

    /// `"side/branch"` for mixtures, `"branch"` otherwise.
    pub fn label(&self) -> String {
        let b = match self.branch {
            Branch::Dynkin => "dynkin",
            Branch::SingleAgent => "single-agent",
            Branch::PostedPrice => "posted-price",
            Branch::Degenerate => "degenerate",
        };
        match self.side {
            Some(Side::Prediction) => format!("prediction/{b}"),
            Some(Side::Sample) => format!("sample/{b}"),
            None => b.to_string(),
        }
    }
}
