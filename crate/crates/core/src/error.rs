use thiserror::Error;

/// Errors raised by the library. Messages are stable: the CLI prints them verbatim.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("disconnected network")]
    DisconnectedNetwork,
    #[error("invalid reactance on line {0}")]
    InvalidReactance(usize),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("infeasible network")]
    InfeasibleNetwork,
    #[error("infeasible")]
    Infeasible,
    #[error("demand cannot be met")]
    DemandCannotBeMet,
    #[error("invalid cost: {0}")]
    InvalidCost(String),
    #[error("invalid producer {0}: {1}")]
    InvalidProducer(usize, String),
    #[error("nonpositive price")]
    NonpositivePrice,
    #[error("capacity exceeded (log barrier)")]
    CapacityExceeded,
    #[error("pivotal-supplier regime: modified cost undefined")]
    PivotalRegime,
    #[error("target exceeds node capacity")]
    TargetExceedsCapacity,
    #[error("beyond no-pivotal range")]
    BeyondNoPivotalRange,
    #[error("supply at empty node")]
    SupplyAtEmptyNode,
    #[error("price undefined at full capacity")]
    PriceUndefinedAtCapacity,
    #[error("pivotal supplier present: NE computation refused (producer {producer}: {reason})")]
    PivotalSupplier { producer: usize, reason: String },
    #[error("degenerate node {0}")]
    DegenerateNode(usize),
    #[error("bound undefined (pivotal supplier)")]
    BoundUndefined,
    #[error("undefined ratio")]
    UndefinedRatio,
    #[error("undefined")]
    Undefined,
    #[error("outside two-node regime: {0}")]
    OutsideTwoNodeRegime(String),
    #[error("outside unbounded-PoA regime: {0}")]
    OutsideUnboundedRegime(String),
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
}

impl Error {
    /// True for failures caused by the economics of the instance (infeasible
    /// demand, refused regimes) rather than malformed input.
    pub fn is_regime(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleNetwork
                | Error::Infeasible
                | Error::DemandCannotBeMet
                | Error::PivotalSupplier { .. }
                | Error::PivotalRegime
                | Error::BoundUndefined
                | Error::BeyondNoPivotalRange
                | Error::OutsideTwoNodeRegime(_)
                | Error::OutsideUnboundedRegime(_)
                | Error::NoConvergence(_)
                | Error::UndefinedRatio
                | Error::Undefined
                | Error::DegenerateNode(_)
                | Error::TargetExceedsCapacity
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
