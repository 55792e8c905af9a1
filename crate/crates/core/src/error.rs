use thiserror::Error;

use crate::outcome::Identity;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TfmError {
    #[error("malformed outcome: {0}")]
    MalformedOutcome(String),

    #[error("unknown owner {0} in outcome")]
    UnknownOwner(Identity),

    #[error("empty distribution")]
    EmptyDistribution,

    #[error("unknown mechanism {0:?}")]
    UnknownMechanism(String),

    #[error("invalid parameters for {mechanism}: {reason}")]
    InvalidParams { mechanism: String, reason: String },

    #[error("mechanism {mechanism} violated {invariant}: {detail}")]
    MechanismBug {
        mechanism: String,
        invariant: &'static str,
        detail: String,
    },

    #[error("block holds {len} bids but capacity is {capacity}")]
    OversizeBlock { len: usize, capacity: usize },

    #[error("invalid block: {0}")]
    InvalidBlock(String),

    #[error("curve is not monotone between bids {lo} and {hi}")]
    NonMonotoneCurve { lo: f64, hi: f64 },

    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("density vanishes at {0}; virtual value undefined")]
    VirtualValueSingularity(f64),

    #[error("distribution is not regular: {0}")]
    NotRegular(String),

    #[error("{0} requires a bounded support")]
    UnboundedSupport(String),

    #[error("bidding rule outputs several bids; use the multi-bid transform")]
    MultiBidRule,

    #[error("invalid specification: {0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, TfmError>;
