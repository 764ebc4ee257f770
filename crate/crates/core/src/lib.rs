//! BAR-tolerant blockchain consensus with a deterministic simulator.
//!
//! The crate is layered bottom-up: value types and simulated signatures,
//! the per-height consensus state machine, on-chain membership, a
//! discrete-event network simulator, pluggable actor strategies, and a
//! scenario runner that checks invariants and incentive claims.

pub mod consensus;
pub mod crypto;
pub mod encoding;
pub mod membership;
pub mod scenario;
pub mod simnet;
pub mod strategies;
pub mod types;

pub use crypto::{digest, Authenticator, Authority, Digest, QuorumCert, SignatureLedger, Tag};
pub use types::{ActorId, Block, Coins, DeviceToken, Transaction, TxBody, TxKind};
