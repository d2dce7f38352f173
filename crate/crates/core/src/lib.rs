//! Day-ahead electricity auction clearing with indivisible block bids.
//!
//! The engine maximizes total surplus over hourly piecewise-linear bids and
//! all-or-nothing block bids, optionally forbidding paradoxically accepted
//! blocks ([`Rule::NoPab`]) or paradoxically rejected blocks
//! ([`Rule::NoPrb`]). Around it sit a brute-force oracle, the performance
//! measures used to compare the rules, a paired t-test and a synthetic
//! market generator.

pub mod clearing;
pub mod curve;
pub mod datagen;
pub mod experiment;
mod lp;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod stats;

pub use clearing::{Assignment, Rule};
pub use model::{BlockBid, Direction, Instance, PriceBounds, Segment};
pub use solver::{solve, SolveParams, Solution, Status};
