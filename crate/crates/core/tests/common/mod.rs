#![allow(dead_code)]

use bfpred::instance::{generate_instance, CostModel, GeneratorConfig, Instance};
use bfpred::num::{q, qi, Q};
use bfpred::valuation::ValuationOracle;
use bfpred::AgentSet;

pub fn additive(weights: &[i64], costs: Vec<Q>, budget: Q) -> Instance {
    let oracle = ValuationOracle::additive(weights.iter().map(|&w| qi(w)).collect()).unwrap();
    Instance::new(costs, budget, oracle).unwrap()
}

pub fn uniform_costs(budget: i64) -> CostModel {
    CostModel::Uniform {
        low: qi(0),
        high: qi(budget),
    }
}

pub fn coverage_instance(n: usize, seed: u64) -> Instance {
    generate_instance(
        &GeneratorConfig::coverage(
            n,
            2 * n,
            qi(1),
            CostModel::Uniform {
                low: qi(0),
                high: q(1, 2),
            },
        ),
        seed,
    )
    .unwrap()
}

pub fn cut_instance(n: usize, seed: u64) -> Instance {
    generate_instance(&GeneratorConfig::cut(n, qi(4), uniform_costs(2)), seed).unwrap()
}

pub fn additive_instance(n: usize, seed: u64) -> Instance {
    generate_instance(&GeneratorConfig::additive(n, qi(2), uniform_costs(1)), seed).unwrap()
}

pub fn set(v: &[usize]) -> AgentSet {
    v.iter().copied().collect()
}

/// `coin / 2^64`.
pub fn unit(coin: u64) -> Q {
    Q::new(coin.into(), num_bigint::BigInt::from(1u8) << 64)
}
