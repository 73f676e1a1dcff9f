//! Privacy-auditing harness: the membership-inference evaluation game under
//! both the full-universe and subset-restricted protocols, dataset
//! condensation baselines (random subset and the linear distribution-matching
//! transform), DP-SGD with Rényi accounting, statistically sound empirical
//! ε lower bounds, and worst-case neighboring-dataset audits.

pub mod accountant;
pub mod attack;
pub mod audit;
pub mod condense;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod learners;
pub mod metrics;
pub(crate) mod parallel;
pub mod pipeline;
pub mod randomized_response;
pub mod report;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
