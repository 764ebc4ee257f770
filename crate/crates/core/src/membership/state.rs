//! The chain-derived state every actor folds blocks into: balances, the
//! producer queue, and the per-block reward ledger.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::Incentives;
use crate::consensus::{LeaderSchedule, Suspect};
use crate::crypto::{Authority, Digest, SignedStatement, Tag};
use crate::types::{ActorId, Block, Coins, DeviceToken, Transaction, TxBody};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveProducer {
    pub actor: ActorId,
    pub deposit: Coins,
    pub joined_at_height: u64,
    pub device_token: DeviceToken,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingJoin {
    pub actor: ActorId,
    pub deposit: Coins,
    pub device_token: DeviceToken,
    pub included_at: u64,
    pub active_from: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducerQueue {
    pub active: Vec<ActiveProducer>,
    pub pending_joins: Vec<PendingJoin>,
}

impl ProducerQueue {
    pub fn is_active(&self, a: ActorId) -> bool {
        self.active.iter().any(|p| p.actor == a)
    }

    pub fn is_pending(&self, a: ActorId) -> bool {
        self.pending_joins.iter().any(|p| p.actor == a)
    }

    pub fn token_in_use(&self, t: &DeviceToken) -> bool {
        self.active.iter().any(|p| &p.device_token == t) || self.pending_joins.iter().any(|p| &p.device_token == t)
    }

    pub fn active_ids(&self) -> Vec<ActorId> {
        self.active.iter().map(|p| p.actor).collect()
    }

    pub fn total_deposits(&self) -> Coins {
        self.active.iter().map(|p| p.deposit).sum::<Coins>() + self.pending_joins.iter().map(|p| p.deposit).sum::<Coins>()
    }

    /// Producers in rotation at `height`: the active list followed by every
    /// pending join whose activation height has been reached, in chain order.
    pub fn producers_at(&self, height: u64) -> Vec<ActorId> {
        let mut out = self.active_ids();
        out.extend(
            self.pending_joins
                .iter()
                .filter(|p| p.active_from <= height)
                .map(|p| p.actor),
        );
        out
    }

    fn activate(&mut self, height: u64) {
        let (ready, waiting): (Vec<_>, Vec<_>) = self.pending_joins.drain(..).partition(|p| p.active_from <= height);
        self.pending_joins = waiting;
        self.active.extend(ready.into_iter().map(|p| ActiveProducer {
            actor: p.actor,
            deposit: p.deposit,
            joined_at_height: p.active_from,
            device_token: p.device_token,
        }));
    }

    /// Removes `a` from either list and returns its deposit.
    fn remove(&mut self, a: ActorId) -> Option<(Coins, DeviceToken)> {
        if let Some(i) = self.active.iter().position(|p| p.actor == a) {
            let p = self.active.remove(i);
            return Some((p.deposit, p.device_token));
        }
        let i = self.pending_joins.iter().position(|p| p.actor == a)?;
        let p = self.pending_joins.remove(i);
        Some((p.deposit, p.device_token))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub height: u64,
    pub proposer: ActorId,
    /// Block reward actually kept; reduced by a later punishment.
    pub reward: Coins,
    pub fees: Coins,
    pub punished: bool,
}

/// Per-actor income, split by source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Income {
    pub rewards: Coins,
    pub fees: Coins,
    pub participation: Coins,
    pub forfeited: Coins,
    pub slashed: Coins,
}

impl Income {
    /// Rewards net of forfeits, plus fees and participation, minus slashes.
    pub fn coin_delta(&self) -> Coins {
        self.rewards + self.fees + self.participation - self.slashed
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardLedger {
    pub balances: BTreeMap<ActorId, Coins>,
    pub entries: Vec<BlockEntry>,
    pub income: BTreeMap<ActorId, Income>,
    pub minted: Coins,
    pub slashed: Coins,
}

impl RewardLedger {
    pub fn balance(&self, a: ActorId) -> Coins {
        self.balances.get(&a).copied().unwrap_or(0)
    }

    pub fn income_of(&self, a: ActorId) -> Income {
        self.income.get(&a).copied().unwrap_or_default()
    }

    fn credit(&mut self, a: ActorId, amount: Coins) {
        *self.balances.entry(a).or_insert(0) += amount;
    }

    fn income_mut(&mut self, a: ActorId) -> &mut Income {
        self.income.entry(a).or_default()
    }

    pub fn entry(&self, height: u64) -> Option<&BlockEntry> {
        self.entries.iter().find(|e| e.height == height)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxError {
    #[error("transaction id does not match its body")]
    BadId,
    #[error("transaction {0:?} already on chain or in this block")]
    Duplicate(Digest),
    #[error("transfer amount must be positive")]
    NonPositive,
    #[error("{account} holds {balance}, needs {needed}")]
    Overdraft { account: ActorId, balance: Coins, needed: Coins },
    #[error("deposit {got} below the minimum {min}")]
    DepositTooSmall { got: Coins, min: Coins },
    #[error("{0} is already a producer or pending")]
    AlreadyMember(ActorId),
    #[error("device token already registered (Sybil)")]
    Sybil,
    #[error("{0} was slashed and may not rejoin")]
    Banned(ActorId),
    #[error("{0} is not an active producer")]
    NotProducer(ActorId),
    #[error("leave would leave n <= 3f")]
    LeaveBreaksBound,
    #[error("punishment: {0}")]
    Punishment(String),
    #[error("evidence: {0}")]
    Evidence(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlockError {
    #[error("expected height {expected}, got {got}")]
    Height { expected: u64, got: u64 },
    #[error("parent hash does not match the chain head")]
    Parent,
    #[error("round {round} precedes the first round {start} of this height")]
    RoundTooLow { round: u64, start: u64 },
    #[error("{proposer} is not the leader of round {round}")]
    WrongProposer { proposer: ActorId, round: u64 },
    #[error("transfers use {used} bytes, limit {limit}")]
    TooLarge { used: u64, limit: u64 },
    #[error("transaction {index}: {err}")]
    Tx { index: usize, err: TxError },
    #[error("no producers")]
    NoProducers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct BlockMeta {
    proposer: ActorId,
    round: u64,
    txids: BTreeSet<Digest>,
}

/// Everything an actor derives from its chain prefix. A pure fold: two
/// actors with equal chains hold equal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub params: Incentives,
    /// Configured fault bound; the runtime schedule may clamp it.
    pub f: usize,
    pub height: u64,
    pub tip: Digest,
    pub tip_round: u64,
    pub queue: ProducerQueue,
    pub ledger: RewardLedger,
    seen: BTreeSet<Digest>,
    blocks: Vec<BlockMeta>,
    punished: BTreeSet<(ActorId, u64)>,
    slashed: BTreeSet<ActorId>,
    banned_tokens: BTreeSet<DeviceToken>,
    initial_supply: Coins,
}

impl ChainState {
    /// State at genesis: `producers` hold the deposit without paying for it,
    /// every account in `accounts` starts with the initial balance.
    pub fn genesis(params: Incentives, f: usize, producers: &[(ActorId, DeviceToken)], accounts: &[ActorId]) -> Self {
        let mut ledger = RewardLedger::default();
        for &a in accounts {
            ledger.balances.insert(a, params.initial_balance);
        }
        let queue = ProducerQueue {
            active: producers
                .iter()
                .map(|(a, t)| ActiveProducer {
                    actor: *a,
                    deposit: params.deposit,
                    joined_at_height: 0,
                    device_token: t.clone(),
                })
                .collect(),
            pending_joins: Vec::new(),
        };
        let initial_supply = ledger.balances.values().sum::<Coins>() + queue.total_deposits();
        let g = Block::genesis();
        ChainState {
            params,
            f,
            height: 0,
            tip: g.digest(),
            tip_round: g.round,
            queue,
            ledger,
            seen: BTreeSet::new(),
            blocks: vec![BlockMeta {
                proposer: g.proposer,
                round: g.round,
                txids: BTreeSet::new(),
            }],
            punished: BTreeSet::new(),
            slashed: BTreeSet::new(),
            banned_tokens: BTreeSet::new(),
            initial_supply,
        }
    }

    pub fn next_height(&self) -> u64 {
        self.height + 1
    }

    /// First round of the next height. Rounds are numbered globally so that
    /// leader rotation continues across heights.
    pub fn start_round(&self) -> u64 {
        if self.height == 0 {
            0
        } else {
            self.tip_round + 1
        }
    }

    pub fn schedule_for(&self, height: u64) -> Option<LeaderSchedule> {
        LeaderSchedule::from_membership(self.queue.producers_at(height), self.f).ok()
    }

    pub fn next_schedule(&self) -> Option<LeaderSchedule> {
        self.schedule_for(self.next_height())
    }

    pub fn contains_tx(&self, id: &Digest) -> bool {
        self.seen.contains(id)
    }

    pub fn proposer_at(&self, height: u64) -> Option<ActorId> {
        self.blocks.get(height as usize).map(|m| m.proposer)
    }

    pub fn block_contains(&self, height: u64, id: &Digest) -> bool {
        self.blocks
            .get(height as usize)
            .is_some_and(|m| m.txids.contains(id))
    }

    pub fn is_punished(&self, accused: ActorId, height: u64) -> bool {
        self.punished.contains(&(accused, height))
    }

    pub fn is_slashed(&self, a: ActorId) -> bool {
        self.slashed.contains(&a)
    }

    pub fn initial_supply(&self) -> Coins {
        self.initial_supply
    }

    /// Coins in balances plus locked deposits. Changes only by minting and
    /// slashing.
    pub fn total_supply(&self) -> Coins {
        self.ledger.balances.values().sum::<Coins>() + self.queue.total_deposits()
    }

    /// Full block check against this state: header, leader, size limit and
    /// every transaction applied in order.
    pub fn validate_block(&self, block: &Block, authority: &dyn Authority) -> Result<(), BlockError> {
        let h = self.next_height();
        if block.height != h {
            return Err(BlockError::Height {
                expected: h,
                got: block.height,
            });
        }
        if block.parent_hash != self.tip {
            return Err(BlockError::Parent);
        }
        let start = self.start_round();
        if block.round < start {
            return Err(BlockError::RoundTooLow {
                round: block.round,
                start,
            });
        }
        let schedule = self.schedule_for(h).ok_or(BlockError::NoProducers)?;
        if schedule.leader_of(block.round) != block.proposer {
            return Err(BlockError::WrongProposer {
                proposer: block.proposer,
                round: block.round,
            });
        }
        let used = block.transfer_bytes();
        if used > self.params.block_size_limit {
            return Err(BlockError::TooLarge {
                used,
                limit: self.params.block_size_limit,
            });
        }
        let mut scratch = self.clone();
        scratch.begin_block(h);
        for (index, tx) in block.txs.iter().enumerate() {
            scratch
                .apply_tx(tx, h, block.proposer, authority)
                .map_err(|err| BlockError::Tx { index, err })?;
        }
        Ok(())
    }

    /// Checks one transaction as if appended to a block at the next height
    /// that already holds `preceding`.
    pub fn tx_valid_after(
        &self,
        preceding: &[Transaction],
        tx: &Transaction,
        proposer: ActorId,
        authority: &dyn Authority,
    ) -> Result<(), TxError> {
        let h = self.next_height();
        let mut scratch = self.clone();
        scratch.begin_block(h);
        for p in preceding {
            scratch.apply_tx(p, h, proposer, authority)?;
        }
        scratch.apply_tx(tx, h, proposer, authority)
    }

    /// Scratch copy for assembling a block at the next height, one
    /// transaction at a time.
    pub fn scratch(&self, proposer: ActorId) -> BlockScratch {
        let mut state = self.clone();
        let height = self.next_height();
        state.begin_block(height);
        BlockScratch { state, proposer, height }
    }

    /// Folds a decided block into the state. Invalid transactions are
    /// skipped and returned; validation should already have excluded them.
    pub fn apply_block(&mut self, block: &Block, authority: &dyn Authority) -> Vec<(Digest, TxError)> {
        let h = block.height;
        self.begin_block(h);
        let producers = self.queue.active_ids();
        let mut skipped = Vec::new();
        self.ledger.entries.push(BlockEntry {
            height: h,
            proposer: block.proposer,
            reward: 0,
            fees: 0,
            punished: false,
        });
        for tx in &block.txs {
            if let Err(e) = self.apply_tx(tx, h, block.proposer, authority) {
                skipped.push((tx.id, e));
            }
        }
        let reward = self.params.block_reward;
        self.ledger.credit(block.proposer, reward);
        self.ledger.income_mut(block.proposer).rewards += reward;
        self.ledger.minted += reward;
        if let Some(e) = self.ledger.entries.last_mut() {
            e.reward = reward;
        }
        let share = self.params.share(producers.len());
        for p in producers {
            self.ledger.credit(p, share);
            self.ledger.income_mut(p).participation += share;
            self.ledger.minted += share;
        }
        self.height = h;
        self.tip = block.digest();
        self.tip_round = block.round;
        self.blocks.push(BlockMeta {
            proposer: block.proposer,
            round: block.round,
            txids: block.txs.iter().map(|t| t.id).collect(),
        });
        skipped
    }

    fn begin_block(&mut self, height: u64) {
        self.queue.activate(height);
    }

    /// Checks `tx` against this state without changing it. `h` is the height
    /// of the block being assembled.
    pub fn check_tx(&self, tx: &Transaction, h: u64, authority: &dyn Authority) -> Result<(), TxError> {
        if !tx.id_is_consistent() {
            return Err(TxError::BadId);
        }
        if self.seen.contains(&tx.id) {
            return Err(TxError::Duplicate(tx.id));
        }
        match &tx.body {
            TxBody::Transfer { from, amount, .. } => {
                if *amount <= 0 {
                    return Err(TxError::NonPositive);
                }
                let needed = amount + self.params.transfer_fee;
                let balance = self.ledger.balance(*from);
                if balance < needed {
                    return Err(TxError::Overdraft {
                        account: *from,
                        balance,
                        needed,
                    });
                }
            }
            TxBody::Join {
                joiner,
                device_token,
                deposit,
            } => self.check_join(*joiner, device_token, *deposit)?,
            TxBody::Leave { leaver } => {
                if !self.queue.is_active(*leaver) {
                    return Err(TxError::NotProducer(*leaver));
                }
                if self.queue.active.len() - 1 <= 3 * self.f {
                    return Err(TxError::LeaveBreaksBound);
                }
            }
            TxBody::Punishment {
                accused,
                txid,
                height,
                suspects,
            } => self
                .check_punishment(*accused, txid, *height, suspects, h, authority)
                .map_err(TxError::Punishment)?,
            TxBody::Evidence { first, second } => {
                self.check_evidence(first, second, authority).map_err(TxError::Evidence)?;
            }
        }
        Ok(())
    }

    fn apply_tx(&mut self, tx: &Transaction, h: u64, proposer: ActorId, authority: &dyn Authority) -> Result<(), TxError> {
        self.check_tx(tx, h, authority)?;
        match &tx.body {
            TxBody::Transfer { from, to, amount, .. } => {
                let fee = self.params.transfer_fee;
                self.ledger.credit(*from, -(amount + fee));
                self.ledger.credit(*to, *amount);
                self.ledger.credit(proposer, fee);
                self.ledger.income_mut(proposer).fees += fee;
                if let Some(e) = self.ledger.entries.last_mut().filter(|e| e.height == h) {
                    e.fees += fee;
                }
            }
            TxBody::Join {
                joiner,
                device_token,
                deposit,
            } => {
                self.ledger.credit(*joiner, -deposit);
                self.queue.pending_joins.push(PendingJoin {
                    actor: *joiner,
                    deposit: *deposit,
                    device_token: device_token.clone(),
                    included_at: h,
                    active_from: h + self.params.activation_delay,
                });
            }
            TxBody::Leave { leaver } => {
                let (deposit, _) = self.queue.remove(*leaver).expect("checked active");
                self.ledger.credit(*leaver, deposit);
            }
            TxBody::Punishment { accused, height, .. } => {
                let penalty = self.params.penalty();
                let entry = self
                    .ledger
                    .entries
                    .iter_mut()
                    .find(|e| e.height == *height)
                    .expect("checked block exists");
                let forfeit = penalty.min(entry.reward).max(0);
                entry.reward -= forfeit;
                entry.punished = true;
                self.ledger.credit(*accused, -forfeit);
                let inc = self.ledger.income_mut(*accused);
                inc.rewards -= forfeit;
                inc.forfeited += forfeit;
                self.ledger.minted -= forfeit;
                self.punished.insert((*accused, *height));
            }
            TxBody::Evidence { first, .. } => {
                let culprit = first.auth.signer;
                let (deposit, token) = self.queue.remove(culprit).expect("checked membership");
                self.ledger.slashed += deposit;
                self.ledger.income_mut(culprit).slashed += deposit;
                self.slashed.insert(culprit);
                self.banned_tokens.insert(token);
            }
        }
        self.seen.insert(tx.id);
        Ok(())
    }

    pub fn check_join(&self, joiner: ActorId, token: &DeviceToken, deposit: Coins) -> Result<(), TxError> {
        if self.slashed.contains(&joiner) {
            return Err(TxError::Banned(joiner));
        }
        if self.queue.is_active(joiner) || self.queue.is_pending(joiner) {
            return Err(TxError::AlreadyMember(joiner));
        }
        if self.queue.token_in_use(token) || self.banned_tokens.contains(token) {
            return Err(TxError::Sybil);
        }
        if deposit < self.params.deposit {
            return Err(TxError::DepositTooSmall {
                got: deposit,
                min: self.params.deposit,
            });
        }
        let balance = self.ledger.balance(joiner);
        if balance < deposit {
            return Err(TxError::Overdraft {
                account: joiner,
                balance,
                needed: deposit,
            });
        }
        Ok(())
    }

    fn check_punishment(
        &self,
        accused: ActorId,
        txid: &Digest,
        height: u64,
        suspects: &[crate::types::SuspectVote],
        current: u64,
        authority: &dyn Authority,
    ) -> Result<(), String> {
        if height == 0 || height >= current {
            return Err(format!("height {height} is not a past block"));
        }
        if self.punished.contains(&(accused, height)) {
            return Err(format!("{accused} already punished for height {height}"));
        }
        let schedule = self.schedule_for(height).ok_or("no producers")?;
        let window = self.params.window(schedule.n());
        if current - height > window {
            return Err(format!("height {height} outside the {window}-block window"));
        }
        let omitted = |h: u64| self.proposer_at(h) == Some(accused) && !self.block_contains(h, txid);
        if !omitted(height) {
            return Err(format!("block {height} was not proposed by {accused} without the transaction"));
        }
        let mut signers = BTreeSet::new();
        for v in suspects {
            let s = v.auth.signer;
            if !signers.insert(s) {
                return Err(format!("duplicate signer {s}"));
            }
            if s == accused {
                return Err("accused cannot suspect itself".into());
            }
            if v.height > height || height - v.height > window || !omitted(v.height) {
                return Err(format!("vote by {s} names height {} which does not qualify", v.height));
            }
            let member = self.schedule_for(v.height).is_some_and(|sc| sc.contains(s));
            if !member {
                return Err(format!("signer {s} was not a producer at height {}", v.height));
            }
            if !authority.verify_statement(&v.auth, &Suspect::statement_for(accused, txid, v.height)) {
                return Err(format!("vote by {s} does not verify"));
            }
        }
        let need = schedule.timeout_threshold();
        if signers.len() < need {
            return Err(format!("{} distinct signers, {need} required", signers.len()));
        }
        Ok(())
    }

    /// Returns the equivocating signer if the two statements prove it.
    pub fn check_evidence(
        &self,
        first: &SignedStatement,
        second: &SignedStatement,
        authority: &dyn Authority,
    ) -> Result<ActorId, String> {
        let (a, b) = (&first.stmt, &second.stmt);
        if a.tag != Tag::Agree || b.tag != Tag::Agree {
            return Err("only conflicting AGREEs are accepted".into());
        }
        if a.height != b.height || a.round != b.round || a.subject == b.subject {
            return Err("statements do not conflict".into());
        }
        let culprit = first.auth.signer;
        if second.auth.signer != culprit {
            return Err("statements signed by different actors".into());
        }
        if !first.verify(authority) || !second.verify(authority) {
            return Err("signature does not verify".into());
        }
        if self.slashed.contains(&culprit) || !(self.queue.is_active(culprit) || self.queue.is_pending(culprit)) {
            return Err(format!("{culprit} holds no deposit"));
        }
        Ok(culprit)
    }
}

/// A next-height state with part of a block already applied.
#[derive(Debug, Clone)]
pub struct BlockScratch {
    state: ChainState,
    proposer: ActorId,
    height: u64,
}

impl BlockScratch {
    /// Whether `tx` could be appended now.
    pub fn check(&self, tx: &Transaction, authority: &dyn Authority) -> Result<(), TxError> {
        self.state.check_tx(tx, self.height, authority)
    }

    /// Appends `tx` if it is valid; the state is unchanged on error.
    pub fn push(&mut self, tx: &Transaction, authority: &dyn Authority) -> Result<(), TxError> {
        self.state.apply_tx(tx, self.height, self.proposer, authority)
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{QuorumCert, SignatureLedger};

    pub(crate) fn tok(i: u32) -> DeviceToken {
        DeviceToken::for_actor(ActorId(i))
    }

    fn genesis(n: u32) -> ChainState {
        let producers: Vec<_> = (0..n).map(|i| (ActorId(i), tok(i))).collect();
        let accounts: Vec<_> = (0..20).map(ActorId).collect();
        ChainState::genesis(Incentives::default(), 1, &producers, &accounts)
    }

    fn block_on(state: &ChainState, proposer: u32, txs: Vec<Transaction>) -> Block {
        Block {
            height: state.next_height(),
            round: state.start_round(),
            proposer: ActorId(proposer),
            parent_hash: state.tip,
            txs,
            cert: QuorumCert::default(),
        }
    }

    fn join(i: u32) -> Transaction {
        Transaction::exempt(TxBody::Join {
            joiner: ActorId(i),
            device_token: tok(i),
            deposit: 100,
        })
    }

    fn transfer(from: u32, amount: Coins, nonce: u64) -> Transaction {
        Transaction::new(
            TxBody::Transfer {
                from: ActorId(from),
                to: ActorId(19),
                amount,
                nonce,
            },
            100,
        )
    }

    #[test]
    fn join_activates_after_delay() {
        let ledger = SignatureLedger::new((0..20).map(ActorId));
        let mut s = genesis(4);
        s.params.activation_delay = 2;
        while s.height < 6 {
            let b = block_on(&s, (s.start_round() % 4) as u32, vec![]);
            s.apply_block(&b, &ledger);
        }
        let b = block_on(&s, 3, vec![join(10)]);
        assert_eq!(b.height, 7);
        s.apply_block(&b, &ledger);
        assert!(!s.schedule_for(8).unwrap().contains(ActorId(10)));
        assert!(s.schedule_for(9).unwrap().contains(ActorId(10)));
    }

    #[test]
    fn leave_refunds_and_reindexes() {
        let ledger = SignatureLedger::new((0..20).map(ActorId));
        let mut s = genesis(5);
        let before = s.ledger.balance(ActorId(2));
        let b = block_on(&s, 0, vec![Transaction::exempt(TxBody::Leave { leaver: ActorId(2) })]);
        s.validate_block(&b, &ledger).unwrap();
        s.apply_block(&b, &ledger);
        assert_eq!(s.queue.active_ids(), vec![ActorId(0), ActorId(1), ActorId(3), ActorId(4)]);
        let share = Incentives::default().share(5);
        assert_eq!(s.ledger.balance(ActorId(2)), before + 100 + share);
        assert_eq!(s.next_schedule().unwrap().leader_of(2), ActorId(3));
        // Another leave would drop n to 3 with f = 1.
        let b = block_on(&s, 1, vec![Transaction::exempt(TxBody::Leave { leaver: ActorId(4) })]);
        assert!(matches!(
            s.validate_block(&b, &ledger),
            Err(BlockError::Tx {
                err: TxError::LeaveBreaksBound,
                ..
            })
        ));
    }

    #[test]
    fn overdraft_and_duplicate_rejected() {
        let ledger = SignatureLedger::new((0..20).map(ActorId));
        let s = genesis(4);
        let ok = block_on(&s, 0, vec![transfer(10, 500, 0), transfer(10, 400, 1)]);
        s.validate_block(&ok, &ledger).unwrap();
        let over = block_on(&s, 0, vec![transfer(10, 600, 0), transfer(10, 600, 1)]);
        assert!(matches!(
            s.validate_block(&over, &ledger),
            Err(BlockError::Tx {
                index: 1,
                err: TxError::Overdraft { .. }
            })
        ));
        let dup = block_on(&s, 0, vec![transfer(10, 5, 0), transfer(10, 5, 0)]);
        assert!(matches!(
            s.validate_block(&dup, &ledger),
            Err(BlockError::Tx {
                err: TxError::Duplicate(_),
                ..
            })
        ));
    }

    #[test]
    fn wrong_leader_and_parent_rejected() {
        let ledger = SignatureLedger::new((0..20).map(ActorId));
        let s = genesis(4);
        let b = block_on(&s, 1, vec![]);
        assert_eq!(
            s.validate_block(&b, &ledger),
            Err(BlockError::WrongProposer {
                proposer: ActorId(1),
                round: 0
            })
        );
        let mut b = block_on(&s, 0, vec![]);
        b.parent_hash = Digest::ZERO;
        assert_eq!(s.validate_block(&b, &ledger), Err(BlockError::Parent));
    }

    #[test]
    fn supply_changes_only_by_minting_and_slashing() {
        let ledger = SignatureLedger::new((0..20).map(ActorId));
        let mut s = genesis(4);
        let txs = vec![transfer(10, 50, 0), join(11), transfer(12, 7, 0)];
        let b = block_on(&s, 0, txs);
        s.apply_block(&b, &ledger);
        assert_eq!(s.total_supply(), s.initial_supply() + s.ledger.minted - s.ledger.slashed);
    }
}
