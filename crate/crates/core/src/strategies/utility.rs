use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simnet::SimReport;
use crate::types::{ActorId, Block, Coins, TxBody, TxKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilityWeights {
    pub coin_weight: f64,
    /// Per target transfer kept out of the final chain.
    pub exclude_bounty: f64,
    /// Per own transfer included.
    pub include_bounty: f64,
    /// Per normally rejected transaction of one's own that got in.
    pub invalid_include_bounty: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        UtilityWeights {
            coin_weight: 1.0,
            exclude_bounty: 0.0,
            include_bounty: 0.0,
            invalid_include_bounty: 0.0,
        }
    }
}

impl UtilityWeights {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.coin_weight,
            self.exclude_bounty,
            self.include_bounty,
            self.invalid_include_bounty,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err("utility weights must be non-negative numbers".into())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityLedger {
    pub actor: ActorId,
    pub coin_delta: Coins,
    pub excluded_targets: u64,
    pub included_own: u64,
    pub included_invalid: u64,
    pub utility: f64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UtilityError {
    #[error("unknown actor {0}")]
    UnknownActor(ActorId),
    #[error("report has no state at the target height")]
    Incomplete,
}

/// Transfers in `chain` that no balance could have covered, by sender.
///
/// Balances are replayed from transfers alone, with each account credited an
/// upper bound on its minted income: the whole participation pool and, for
/// the proposer, the reward plus every fee in its block. A spend that
/// exceeds even that bound, or a transaction seen twice, is a double spend.
fn overdrafts(report: &SimReport, chain: &[Block]) -> BTreeMap<ActorId, u64> {
    let p = &report.incentives;
    let mut balance: BTreeMap<ActorId, Coins> = report.actors.iter().map(|a| (a.id, p.initial_balance)).collect();
    let mut seen = BTreeSet::new();
    let mut out: BTreeMap<ActorId, u64> = BTreeMap::new();
    for b in chain.iter().skip(1) {
        for bal in balance.values_mut() {
            *bal += p.participation_pool;
        }
        let fees: Coins = b
            .txs
            .iter()
            .filter(|t| t.kind() == TxKind::Transfer)
            .count() as Coins
            * p.transfer_fee;
        *balance.entry(b.proposer).or_default() += p.block_reward + fees;
        for tx in &b.txs {
            let dup = !seen.insert(tx.id);
            if let TxBody::Transfer { from, to, amount, .. } = &tx.body {
                let bal = balance.entry(*from).or_default();
                *bal -= amount + p.transfer_fee;
                if dup || *bal < 0 {
                    *out.entry(*from).or_default() += 1;
                }
                *balance.entry(*to).or_default() += amount;
            }
        }
    }
    out
}

/// Double spends on the decided chain of every non-Byzantine actor.
pub fn double_spend_probe(report: &SimReport) -> usize {
    report
        .actors
        .iter()
        .filter(|a| a.class != super::StrategyClass::Byzantine)
        .filter_map(|a| report.chains.get(&a.id))
        .map(|c| overdrafts(report, c).values().sum::<u64>() as usize)
        .sum()
}

pub fn utility_ledger(report: &SimReport, weights: &UtilityWeights, actor: ActorId) -> Result<UtilityLedger, UtilityError> {
    let me = report.actor(actor).ok_or(UtilityError::UnknownActor(actor))?;
    if report.final_state.is_none() {
        return Err(UtilityError::Incomplete);
    }
    let coin_delta = me.income.coin_delta();
    let on_chain: BTreeSet<_> = report.chain.iter().flat_map(|b| b.txs.iter().map(|t| t.id)).collect();
    // Only transfers the chain had time to take count as kept out.
    let cutoff = report
        .actors
        .iter()
        .filter(|a| a.class != super::StrategyClass::Byzantine)
        .filter_map(|a| a.decided.iter().find(|d| d.height == report.heights))
        .map(|d| d.at)
        .min()
        .unwrap_or(report.end_time)
        .saturating_sub(4 * report.config.delta + report.config.timeout);
    let targets = me.strategy.targets();
    let excluded_targets = report
        .submitted
        .iter()
        .filter(|s| s.kind == TxKind::Transfer && targets.contains(&s.sender) && s.at <= cutoff)
        .filter(|s| !on_chain.contains(&s.txid))
        .count() as u64;
    let included_own = report
        .chain
        .iter()
        .flat_map(|b| &b.txs)
        .filter(|t| matches!(t.body, TxBody::Transfer { from, .. } if from == actor))
        .count() as u64;
    let included_invalid = overdrafts(report, &report.chain).get(&actor).copied().unwrap_or(0);
    let utility = weights.coin_weight * coin_delta as f64
        + weights.exclude_bounty * excluded_targets as f64
        + weights.include_bounty * included_own as f64
        + weights.invalid_include_bounty * included_invalid as f64;
    Ok(UtilityLedger {
        actor,
        coin_delta,
        excluded_targets,
        included_own,
        included_invalid,
        utility,
    })
}

pub fn compute_utility(report: &SimReport, weights: &UtilityWeights, actor: ActorId) -> Result<f64, UtilityError> {
    utility_ledger(report, weights, actor).map(|l| l.utility)
}
