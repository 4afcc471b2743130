//! Supply-function bidding games on DC transmission networks: efficient and
//! bid-based dispatch, competitive and Nash equilibria, market-power indices
//! and the two-node capacity-expansion analysis.

pub mod cost;
pub mod dispatch;
pub mod engine;
pub mod equilibrium;
pub mod error;
pub mod indices;
pub mod market;
pub mod network;
pub mod scenario;
pub mod two_node;

pub use cost::{BidProfile, CostInput, CostSpec, ModifiedCost, Producer, QuadraticPiece};
pub use error::{Error, Result};
pub use network::{LineSpec, NetworkModel};
pub use market::Market;
