use serde::{Deserialize, Serialize};

use crate::types::Coins;

/// Economic and membership parameters shared by every actor of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Incentives {
    /// Minimum stake D locked by a Join.
    pub deposit: Coins,
    /// Minted for the proposer of each block; forfeitable.
    pub block_reward: Coins,
    /// Paid by the sender of a transfer to the including proposer.
    pub transfer_fee: Coins,
    /// Minted per block and split evenly among active producers.
    pub participation_pool: Coins,
    /// Reward forfeited per gatekeeping punishment. Defaults to the block reward.
    pub punishment: Option<Coins>,
    /// Blocks between a Join's inclusion and entry into the rotation.
    pub activation_delay: u64,
    /// SUSPECT recency window in blocks. Defaults to twice the producer count.
    pub suspect_window: Option<u64>,
    /// Local time a watcher must have held a transaction before seeing a
    /// proposal for its omission to count. Defaults to `2 * delta * sqrt(r)`,
    /// the least head start that guarantees the proposer had it too once the
    /// network is synchronous.
    pub lead_time: Option<f64>,
    /// Byte budget for transfers in one block.
    pub block_size_limit: u64,
    /// Starting balance of every account.
    pub initial_balance: Coins,
}

impl Default for Incentives {
    fn default() -> Self {
        Incentives {
            deposit: 100,
            block_reward: 10,
            transfer_fee: 1,
            participation_pool: 100,
            punishment: None,
            activation_delay: 1,
            suspect_window: None,
            lead_time: None,
            block_size_limit: 1000,
            initial_balance: 1000,
        }
    }
}

impl Incentives {
    pub fn penalty(&self) -> Coins {
        self.punishment.unwrap_or(self.block_reward)
    }

    pub fn lead_time_or(&self, delta: f64, clock_ratio: f64) -> f64 {
        self.lead_time.unwrap_or(2.0 * delta * clock_ratio.sqrt())
    }

    pub fn window(&self, n: usize) -> u64 {
        self.suspect_window.unwrap_or(2 * n as u64)
    }

    /// Participation share of each producer when `n` are active.
    pub fn share(&self, n: usize) -> Coins {
        if n == 0 {
            0
        } else {
            self.participation_pool / n as Coins
        }
    }

    /// Largest per-block gain a producer gets by keeping one joiner out for
    /// one block when `n` producers are active.
    pub fn gatekeeping_benefit(&self, n: usize) -> Coins {
        self.share(n) - self.share(n + 1)
    }

    /// The punishment must outweigh what a single omission gains. Returns a
    /// human-readable warning when it does not.
    pub fn check_incentive_ordering(&self, n: usize) -> Result<(), String> {
        let benefit = self.gatekeeping_benefit(n);
        let cost = self.penalty().min(self.block_reward);
        if cost > benefit {
            Ok(())
        } else {
            Err(format!(
                "punishment cost {cost} does not exceed the gatekeeping benefit {benefit} at n = {n}; \
                 omitting joins may be profitable"
            ))
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            (self.deposit > 0, "incentives.deposit must be positive"),
            (self.block_reward >= 0, "incentives.block_reward must be non-negative"),
            (self.transfer_fee >= 0, "incentives.transfer_fee must be non-negative"),
            (self.participation_pool >= 0, "incentives.participation_pool must be non-negative"),
            (self.penalty() >= 0, "incentives.punishment must be non-negative"),
            (self.activation_delay >= 1, "incentives.activation_delay must be at least 1"),
            (self.suspect_window != Some(0), "incentives.suspect_window must be positive"),
            (
                self.lead_time.is_none_or(|l| l.is_finite() && l >= 0.0),
                "incentives.lead_time must be a non-negative number",
            ),
            (self.initial_balance >= 0, "incentives.initial_balance must be non-negative"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(msg.to_string()),
            None => Ok(()),
        }
    }
}
