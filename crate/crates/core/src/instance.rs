//! Instances, predictions, arrival orders, generators and the instance file format.

use num_traits::{One, Signed, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::num::{q, q_string, q_vec_string, qi, Q};
use crate::set::MAX_AGENTS;
use crate::valuation::{Family, OracleKind, ValuationOracle};

/// Procurement instance `(N, c, v, B)` with true costs.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    costs: Vec<Q>,
    budget: Q,
    oracle: ValuationOracle,
}

impl Instance {
    pub fn new(costs: Vec<Q>, budget: Q, oracle: ValuationOracle) -> Result<Self> {
        if !budget.is_positive() {
            return domain("budget must be positive");
        }
        if costs.len() != oracle.ground_size() {
            return domain(format!(
                "{} costs for an oracle over {} agents",
                costs.len(),
                oracle.ground_size()
            ));
        }
        if costs.is_empty() || costs.len() > MAX_AGENTS {
            return domain(format!("agent count must be in 1..={MAX_AGENTS}"));
        }
        for (i, c) in costs.iter().enumerate() {
            if !c.is_positive() || *c > budget {
                return domain(format!("cost of agent {i} must lie in (0, B]"));
            }
        }
        Ok(Instance {
            costs,
            budget,
            oracle,
        })
    }

    pub fn n(&self) -> usize {
        self.costs.len()
    }

    pub fn costs(&self) -> &[Q] {
        &self.costs
    }

    pub fn budget(&self) -> &Q {
        &self.budget
    }

    pub fn oracle(&self) -> &ValuationOracle {
        &self.oracle
    }

    /// The truthful market: every agent declares her true cost.
    pub fn market(&self) -> Market<'_> {
        Market {
            oracle: &self.oracle,
            budget: &self.budget,
            bids: &self.costs,
        }
    }
}

/// What a mechanism sees: the valuation, the budget and the declared costs.
#[derive(Clone, Copy, Debug)]
pub struct Market<'a> {
    pub oracle: &'a ValuationOracle,
    pub budget: &'a Q,
    pub bids: &'a [Q],
}

impl Market<'_> {
    pub fn n(&self) -> usize {
        self.bids.len()
    }
}

/// An instance together with a prediction `ω` of the optimal value.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedInstance {
    pub base: Instance,
    pub omega: Q,
    /// Populated when `ω = (1 − ε)·OPT` is known.
    pub epsilon: Option<Q>,
}

impl AugmentedInstance {
    /// Attaches a raw prediction without reference to the optimum.
    pub fn with_omega(base: Instance, omega: Q) -> Result<Self> {
        if !omega.is_positive() {
            return domain("prediction ω must be positive");
        }
        Ok(AugmentedInstance {
            base,
            omega,
            epsilon: None,
        })
    }

    pub fn prediction(&self) -> Prediction {
        Prediction {
            omega: self.omega.clone(),
            epsilon: self.epsilon.clone(),
        }
    }
}

/// `ω = (1 − ε)·optimum`.
pub fn attach_prediction(inst: Instance, epsilon: Q, optimum: &Q) -> Result<AugmentedInstance> {
    if epsilon.is_negative() || epsilon >= Q::one() {
        return domain("ε must lie in [0, 1)");
    }
    if !optimum.is_positive() {
        return domain("optimum must be positive for ω to be positive");
    }
    Ok(AugmentedInstance {
        base: inst,
        omega: (Q::one() - &epsilon) * optimum,
        epsilon: Some(epsilon),
    })
}

/// A permutation of agents; `agents[t]` arrives in slot `t`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalOrder {
    agents: Vec<usize>,
    seed: Option<u64>,
}

impl ArrivalOrder {
    pub fn new(agents: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; agents.len()];
        for &a in &agents {
            if a >= agents.len() || std::mem::replace(&mut seen[a], true) {
                return domain(format!("{agents:?} is not a permutation"));
            }
        }
        Ok(ArrivalOrder { agents, seed: None })
    }

    /// Identity order `0, 1, .., n-1`.
    pub fn identity(n: usize) -> Self {
        ArrivalOrder {
            agents: (0..n).collect(),
            seed: None,
        }
    }

    pub fn agents(&self) -> &[usize] {
        &self.agents
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

pub fn sample_arrival(n: usize, seed: u64) -> Result<ArrivalOrder> {
    if n == 0 {
        return domain("cannot order an empty agent set");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(shuffled(n, &mut rng, Some(seed)))
}

pub(crate) fn shuffled(n: usize, rng: &mut impl Rng, seed: Option<u64>) -> ArrivalOrder {
    let mut agents: Vec<usize> = (0..n).collect();
    agents.shuffle(rng);
    ArrivalOrder { agents, seed }
}

/// All `n!` orders in lexicographic order.
pub fn all_orders(n: usize) -> Vec<ArrivalOrder> {
    use itertools::Itertools;
    (0..n)
        .permutations(n)
        .map(|agents| ArrivalOrder { agents, seed: None })
        .collect()
}

// ---------------------------------------------------------------- generators

const GRID: i64 = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilySpec {
    Additive {
        #[serde(with = "q_string", default = "one")]
        weight_low: Q,
        #[serde(with = "q_string", default = "ten")]
        weight_high: Q,
    },
    Coverage {
        universe: usize,
        #[serde(default = "default_density")]
        density: f64,
        #[serde(with = "q_string", default = "one")]
        weight_low: Q,
        #[serde(with = "q_string", default = "one")]
        weight_high: Q,
    },
    Cut {
        #[serde(default = "default_density")]
        edge_probability: f64,
        #[serde(with = "q_string", default = "one")]
        weight_low: Q,
        #[serde(with = "q_string", default = "ten")]
        weight_high: Q,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum CostModel {
    /// Uniform on a 1/1000 grid over `(low, high]`.
    Uniform {
        #[serde(with = "q_string")]
        low: Q,
        #[serde(with = "q_string")]
        high: Q,
    },
    /// `c_i = B · v(i)/max_j v(j) · (1 − noise + 2·noise·u)`.
    Correlated {
        #[serde(with = "q_string")]
        noise: Q,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    #[serde(with = "q_string")]
    pub budget: Q,
    pub valuation: FamilySpec,
    pub costs: CostModel,
}

fn one() -> Q {
    Q::one()
}
fn ten() -> Q {
    qi(10)
}
fn default_density() -> f64 {
    0.3
}

impl GeneratorConfig {
    pub fn additive(n: usize, budget: Q, costs: CostModel) -> Self {
        GeneratorConfig {
            n,
            budget,
            valuation: FamilySpec::Additive {
                weight_low: one(),
                weight_high: ten(),
            },
            costs,
        }
    }

    pub fn coverage(n: usize, universe: usize, budget: Q, costs: CostModel) -> Self {
        GeneratorConfig {
            n,
            budget,
            valuation: FamilySpec::Coverage {
                universe,
                density: default_density(),
                weight_low: one(),
                weight_high: one(),
            },
            costs,
        }
    }

    pub fn cut(n: usize, budget: Q, costs: CostModel) -> Self {
        GeneratorConfig {
            n,
            budget,
            valuation: FamilySpec::Cut {
                edge_probability: 0.5,
                weight_low: one(),
                weight_high: ten(),
            },
            costs,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n == 0 || self.n > MAX_AGENTS {
            return bad("n must be in 1..=128");
        }
        if !self.budget.is_positive() {
            return bad("budget must be positive");
        }
        let range_ok = |lo: &Q, hi: &Q| !lo.is_negative() && lo <= hi;
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        match &self.valuation {
            FamilySpec::Additive {
                weight_low,
                weight_high,
            } if !range_ok(weight_low, weight_high) => return bad("weight range invalid"),
            FamilySpec::Coverage {
                universe,
                density,
                weight_low,
                weight_high,
            } => {
                if *universe == 0 || !prob_ok(*density) || !range_ok(weight_low, weight_high) {
                    return bad("coverage spec invalid");
                }
            }
            FamilySpec::Cut {
                edge_probability,
                weight_low,
                weight_high,
            } => {
                if !prob_ok(*edge_probability) || !range_ok(weight_low, weight_high) {
                    return bad("cut spec invalid");
                }
            }
            _ => {}
        }
        match &self.costs {
            CostModel::Uniform { low, high } if low.is_negative() || low >= high => {
                bad("cost range must satisfy 0 ≤ low < high")
            }
            CostModel::Correlated { noise } if noise.is_negative() || *noise > Q::one() => {
                bad("noise must lie in [0, 1]")
            }
            _ => Ok(()),
        }
    }
}

/// Uniform on the `1/GRID` lattice of `(low, high]` (or `[low, high]` when `closed`).
fn grid_draw(rng: &mut impl Rng, low: &Q, high: &Q, closed: bool) -> Q {
    let u = rng.gen_range(if closed { 0 } else { 1 }..=GRID);
    low + (high - low) * q(u, GRID)
}

fn clamp_cost(c: Q, budget: &Q) -> Q {
    if c > *budget {
        budget.clone()
    } else if !c.is_positive() {
        budget * q(1, GRID)
    } else {
        c
    }
}

pub fn generate_instance(cfg: &GeneratorConfig, seed: u64) -> Result<Instance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n;
    let oracle = match &cfg.valuation {
        FamilySpec::Additive {
            weight_low,
            weight_high,
        } => ValuationOracle::additive(
            (0..n)
                .map(|_| grid_draw(&mut rng, weight_low, weight_high, true))
                .collect(),
        )?,
        FamilySpec::Coverage {
            universe,
            density,
            weight_low,
            weight_high,
        } => {
            let sets = (0..n)
                .map(|_| (0..*universe).filter(|_| rng.gen_bool(*density)).collect())
                .collect();
            let weights = (0..*universe)
                .map(|_| grid_draw(&mut rng, weight_low, weight_high, true))
                .collect();
            ValuationOracle::coverage(sets, weights)?
        }
        FamilySpec::Cut {
            edge_probability,
            weight_low,
            weight_high,
        } => {
            let mut w = vec![vec![Q::zero(); n]; n];
            for u in 0..n {
                for v in u + 1..n {
                    if rng.gen_bool(*edge_probability) {
                        let x = grid_draw(&mut rng, weight_low, weight_high, true);
                        w[u][v] = x.clone();
                        w[v][u] = x;
                    }
                }
            }
            ValuationOracle::graph_cut(w)?
        }
    };
    let costs = match &cfg.costs {
        CostModel::Uniform { low, high } => (0..n)
            .map(|_| clamp_cost(grid_draw(&mut rng, low, high, false), &cfg.budget))
            .collect(),
        CostModel::Correlated { noise } => {
            let singles: Vec<Q> = (0..n)
                .map(|i| oracle.value(crate::set::AgentSet::singleton(i)))
                .collect();
            let vmax = singles.iter().max().cloned().unwrap_or_default();
            singles
                .iter()
                .map(|v| {
                    let base = if vmax.is_positive() {
                        &cfg.budget * v / &vmax
                    } else {
                        cfg.budget.clone()
                    };
                    let jitter =
                        Q::one() - noise + qi(2) * noise * q(rng.gen_range(0..=GRID), GRID);
                    clamp_cost(base * jitter, &cfg.budget)
                })
                .collect()
        }
    };
    Instance::new(costs, cfg.budget.clone(), oracle)
}

// --------------------------------------------------------------- file format

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(with = "q_string")]
    pub omega: Q,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::num::opt_q_string"
    )]
    pub epsilon: Option<Q>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", content = "payload", rename_all = "kebab-case")]
enum ValuationDoc {
    Additive {
        #[serde(with = "q_vec_string")]
        weights: Vec<Q>,
    },
    Coverage {
        agent_sets: Vec<Vec<usize>>,
        #[serde(with = "q_vec_string")]
        element_weights: Vec<Q>,
    },
    Cut {
        weights: Vec<QRow>,
    },
    Table {
        kind: OracleKind,
        #[serde(with = "q_vec_string")]
        values: Vec<Q>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct QRow(#[serde(with = "q_vec_string")] Vec<Q>);

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    n: usize,
    #[serde(with = "q_string")]
    budget: Q,
    #[serde(with = "q_vec_string")]
    costs: Vec<Q>,
    valuation: ValuationDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prediction: Option<Prediction>,
}

/// Renders the instance (and optional prediction) as a JSON document.
pub fn render_instance(inst: &Instance, prediction: Option<&Prediction>) -> String {
    let valuation = match inst.oracle.family() {
        Family::Additive { weights } => ValuationDoc::Additive {
            weights: weights.clone(),
        },
        Family::Coverage {
            agent_sets,
            element_weights,
        } => ValuationDoc::Coverage {
            agent_sets: agent_sets.clone(),
            element_weights: element_weights.clone(),
        },
        Family::GraphCut { weights } => ValuationDoc::Cut {
            weights: weights.iter().cloned().map(QRow).collect(),
        },
        Family::Table { values } => ValuationDoc::Table {
            kind: inst.oracle.kind(),
            values: values.clone(),
        },
    };
    let doc = InstanceDoc {
        n: inst.n(),
        budget: inst.budget.clone(),
        costs: inst.costs.clone(),
        valuation,
        prediction: prediction.cloned(),
    };
    serde_json::to_string_pretty(&doc).expect("instance documents always serialize")
}

/// Parses an instance document; the prediction block is returned separately.
pub fn parse_instance(text: &str) -> Result<(Instance, Option<Prediction>)> {
    let doc: InstanceDoc =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("instance file: {e}")))?;
    let oracle = match doc.valuation {
        ValuationDoc::Additive { weights } => ValuationOracle::additive(weights)?,
        ValuationDoc::Coverage {
            agent_sets,
            element_weights,
        } => ValuationOracle::coverage(agent_sets, element_weights)?,
        ValuationDoc::Cut { weights } => {
            ValuationOracle::graph_cut(weights.into_iter().map(|r| r.0).collect())?
        }
        ValuationDoc::Table { kind, values } => ValuationOracle::table(doc.n, values, kind)?,
    };
    if oracle.ground_size() != doc.n {
        return Err(Error::Parse(format!(
            "valuation describes {} agents but n = {}",
            oracle.ground_size(),
            doc.n
        )));
    }
    let inst = Instance::new(doc.costs, doc.budget, oracle)?;
    if let Some(p) = &doc.prediction {
        if !p.omega.is_positive() {
            return domain("prediction ω must be positive");
        }
    }
    Ok((inst, doc.prediction))
}
