//! Decision-tree optimization rules that map instance features to
//! meta-solutions (feature-constrained solution sets) for knapsack and
//! shortest-path problems.
//!
//! The crate bundles exact MIP formulations for training such trees, fast
//! learning heuristics, single-solution baselines, instance generators and a
//! benchmark harness that measures how much objective value the restriction
//! to an interpretable rule costs against per-scenario optimization.

pub mod error;
pub mod experiments;
pub mod heuristics;
pub mod knapsack;
pub mod milp;
pub mod model;
pub mod shortest_path;
pub mod tree_block;

pub use error::{Error, Result};
pub use model::{
    aggregate, scaled_objective, DecisionCriterion, MetaSolution, MicroSolution, Query,
    ScaledValue, ScenarioSet, Sense, SurrogateTree,
};
