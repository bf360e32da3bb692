//! Simulation and verification lab for online budget-feasible procurement
//! mechanisms that receive a prediction of the optimal value.
//!
//! Agents are indexed from 0. All mechanism, audit and valuation arithmetic is
//! exact (big rationals); analytic bounds use 60-digit decimal floats.

pub mod audit;
pub mod bounds;
pub mod error;
pub mod experiment;
pub mod instance;
pub mod lowerbound;
pub mod mechanism;
pub mod num;
pub mod offline;
pub mod set;
pub mod valuation;

pub use error::{Error, Result};
pub use num::Q;
pub use set::AgentSet;
pub use valuation::{OracleKind, ValuationOracle};
