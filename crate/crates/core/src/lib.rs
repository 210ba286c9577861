//! Budget-constrained tool-usage planning and simulation.
//!
//! The pipeline has four stages, each usable on its own:
//!
//! 1. [`estimator`] scores candidate tools for a query from past usage
//!    records ([`experience`]), producing an expected value and an
//!    estimated frequency limit per tool.
//! 2. [`planner`] turns those estimates into an optimal usage plan under
//!    a cost budget via bounded-knapsack dynamic programming, with an
//!    integer quantization step for real-valued costs.
//! 3. [`executor`] runs an agent episode under the plan, enforcing
//!    frequency limits and a blacklist of tools that returned unhelpful
//!    results, while debiting an exact-arithmetic cost ledger ([`types`]).
//! 4. [`eval`] computes pass-rate and cost metrics over episode batches
//!    and drives planned-vs-unplanned comparisons and parameter sweeps.
//!
//! [`simenv`] provides deterministic synthetic scenarios (tools, queries,
//! experience, scripted tool behaviors, ground truth) so the whole loop
//! runs end to end without any external service.

pub mod error;
pub mod estimator;
pub mod eval;
pub mod executor;
pub mod experience;
pub mod planner;
pub mod rat;
pub mod simenv;
pub mod types;

pub use error::Error;
pub use rat::Rat;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
