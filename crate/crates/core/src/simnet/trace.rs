use serde::{Deserialize, Serialize};

use crate::crypto::Digest;
use crate::types::{ActorId, TxKind};

use super::SimTime;

/// Something one node did or observed, for trace-based assertions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum NodeEvent {
    HeightStarted {
        height: u64,
        round: u64,
    },
    RoundEntered {
        height: u64,
        round: u64,
    },
    Proposed {
        height: u64,
        round: u64,
        digest: Digest,
    },
    AgreeSeen {
        height: u64,
        round: u64,
        digest: Digest,
    },
    TimeoutSent {
        height: u64,
        round: u64,
        to: ActorId,
    },
    /// A TIMEOUT reached a leader entitled to freeze its round. `elapsed` is
    /// local time since the receiver entered the round.
    TimeoutArrived {
        height: u64,
        round: u64,
        from: ActorId,
        elapsed: f64,
        threshold: f64,
        counted: bool,
    },
    FreezeFormed {
        height: u64,
        round: u64,
        frozen: u64,
        signers: Vec<ActorId>,
    },
    Decided {
        height: u64,
        /// Round the block was first proposed in.
        round: u64,
        /// Round whose certificate decided it.
        cert_round: u64,
        digest: Digest,
    },
    TxReceived {
        txid: Digest,
        kind: TxKind,
    },
    JoinForwarded {
        txid: Digest,
    },
    SuspectSent {
        accused: ActorId,
        txid: Digest,
        height: u64,
    },
    EvidenceFound {
        culprit: ActorId,
        height: u64,
        round: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: SimTime,
    pub actor: ActorId,
    /// The actor's local clock reading.
    pub local: f64,
    #[serde(flatten)]
    pub event: NodeEvent,
}
