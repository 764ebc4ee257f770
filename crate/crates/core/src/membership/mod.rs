//! On-chain producer membership: deposits, Sybil-resistant registration,
//! relayed joins, SUSPECT-based punishment and the reward ledger.

mod params;
mod state;
mod suspects;

pub use params::Incentives;
pub use state::{
    ActiveProducer, BlockEntry, BlockError, BlockScratch, ChainState, Income, PendingJoin, ProducerQueue, RewardLedger, TxError,
};
pub use suspects::{adjudicate_suspects, check_inclusion_and_suspect, SuspectPool, SuspectRecord, Watch};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{ActorId, Coins, DeviceToken, Transaction, TxBody};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegisterError {
    #[error("Sybil: device token already registered")]
    Sybil,
    #[error("underfunded: balance {balance} below deposit {deposit}")]
    Underfunded { balance: Coins, deposit: Coins },
}

/// Off-chain registration desk. Tracks every device token it has issued a
/// Join for, on top of those already on chain.
#[derive(Debug, Clone, Default)]
pub struct Registrar {
    issued: BTreeSet<DeviceToken>,
}

impl Registrar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        candidate: ActorId,
        device_token: DeviceToken,
        balance: Coins,
        deposit: Coins,
        queue: &ProducerQueue,
    ) -> Result<Transaction, RegisterError> {
        if self.issued.contains(&device_token) || queue.token_in_use(&device_token) {
            return Err(RegisterError::Sybil);
        }
        if balance < deposit {
            return Err(RegisterError::Underfunded { balance, deposit });
        }
        self.issued.insert(device_token.clone());
        Ok(Transaction::exempt(TxBody::Join {
            joiner: candidate,
            device_token,
            deposit,
        }))
    }
}

/// Builds a Join for `candidate` unless its token is already in the queue.
pub fn register(
    candidate: ActorId,
    device_token: DeviceToken,
    balance: Coins,
    deposit: Coins,
    queue: &ProducerQueue,
) -> Result<Transaction, RegisterError> {
    Registrar::new().register(candidate, device_token, balance, deposit, queue)
}

/// True iff the transfers in `txs` fit in `limit` bytes; other kinds are free.
pub fn block_size_accounting(txs: &[Transaction], limit: u64) -> bool {
    txs.iter()
        .filter(|t| !t.kind().is_size_exempt())
        .map(|t| t.size_bytes as u64)
        .sum::<u64>()
        <= limit
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayPlan {
    pub txid: crate::crypto::Digest,
    /// Relays that forward the join to the producers.
    pub relays: Vec<ActorId>,
    /// Set when fewer than `f + 1` distinct relays were chosen.
    pub warning: Option<String>,
}

impl RelayPlan {
    /// Recipients for `relay`'s forward. A relay never forwards to itself.
    pub fn targets(&self, relay: ActorId, producers: &[ActorId]) -> Vec<ActorId> {
        producers.iter().copied().filter(|p| *p != relay).collect()
    }
}

/// Plans delivery of a join through `relays`. Fewer than `f + 1` distinct
/// relays still yields a plan, with a warning: a single Byzantine relay could
/// then swallow the join and only accumulation over time helps.
pub fn relay_join(join: &Transaction, relays: &[ActorId], f: usize) -> RelayPlan {
    let distinct: Vec<ActorId> = relays
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let warning = (distinct.len() <= f).then(|| {
        format!(
            "join relayed through {} actor(s); at least f + 1 = {} are needed to guarantee a non-Byzantine relay",
            distinct.len(),
            f + 1
        )
    });
    RelayPlan {
        txid: join.id,
        relays: distinct,
        warning,
    }
}
