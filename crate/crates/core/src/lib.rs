//! Transaction fee mechanism laboratory: mechanisms, incentive checks, and numerical oracles.

pub mod bayesian;
pub mod catalog;
pub mod coins;
pub mod deviation;
pub mod error;
pub mod grid;
pub mod mechanism;
pub mod myerson;
pub mod numeric;
pub mod outcome;
pub mod properties;
pub mod revelation;

pub use catalog::{build, catalog};
pub use coins::Randomness;
pub use error::{Result, TfmError};
pub use mechanism::{BidRule, Mechanism, MechanismParams};
pub use outcome::{
    Bid, Block, BlockEntry, Capacity, Identity, Outcome, OutcomeDistribution, UtilityBreakdown, ValueProfile,
};
