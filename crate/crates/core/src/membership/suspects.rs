//! Watching proposers for omitted transactions and turning accumulated
//! SUSPECTs into punishments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::state::ChainState;
use crate::consensus::Suspect;
use crate::crypto::{Authority, Digest};
use crate::types::{ActorId, Block, SuspectVote, Transaction, TxBody};

/// What a watcher knows about one transaction it holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Watch {
    /// Local time the watcher received (or forwarded) the transaction.
    pub held_since: f64,
    /// Local time the watcher first saw the proposal it is judging.
    pub proposal_seen: f64,
    /// Required head start, in local time.
    pub lead_time: f64,
    /// Whether the transaction would still be valid and fit after the block.
    pub still_includable: bool,
}

/// Signs a SUSPECT if `proposer` left out a transaction the watcher held for
/// long enough and which the block had room for.
pub fn check_inclusion_and_suspect(
    watcher: ActorId,
    proposer: ActorId,
    txid: &Digest,
    block: &Block,
    watch: Watch,
    authority: &dyn Authority,
) -> Option<Suspect> {
    if watcher == proposer || block.contains_tx(txid) || !watch.still_includable {
        return None;
    }
    if watch.proposal_seen - watch.held_since < watch.lead_time {
        return None;
    }
    let auth = authority
        .sign_statement(watcher, &Suspect::statement_for(proposer, txid, block.height))
        .ok()?;
    Some(Suspect {
        accused: proposer,
        txid: *txid,
        height: block.height,
        auth,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspectRecord {
    pub accused: ActorId,
    pub txid: Digest,
    /// Latest omission height any signer reported.
    pub height: u64,
    /// One vote per signer, the latest it sent.
    pub signers: BTreeMap<ActorId, SuspectVote>,
}

impl SuspectRecord {
    pub fn is_actionable(&self, threshold: usize) -> bool {
        self.signers.len() >= threshold
    }
}

/// SUSPECTs collected by one actor, accumulated across blocks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspectPool {
    records: BTreeMap<(ActorId, Digest), SuspectRecord>,
}

impl SuspectPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> impl Iterator<Item = &SuspectRecord> {
        self.records.values()
    }

    /// Adds a SUSPECT whose signature the caller has checked.
    pub fn add(&mut self, s: &Suspect) {
        let rec = self.records.entry((s.accused, s.txid)).or_insert_with(|| SuspectRecord {
            accused: s.accused,
            txid: s.txid,
            height: s.height,
            signers: BTreeMap::new(),
        });
        rec.height = rec.height.max(s.height);
        let vote = SuspectVote {
            height: s.height,
            auth: s.auth.clone(),
        };
        match rec.signers.get(&s.auth.signer) {
            Some(v) if v.height >= s.height => {}
            _ => {
                rec.signers.insert(s.auth.signer, vote);
            }
        }
    }

    /// Drops votes that fell out of the recency window and records whose
    /// omission has already been punished.
    pub fn prune(&mut self, chain: &ChainState) {
        let next = chain.next_height();
        let window = chain.next_schedule().map_or(0, |s| chain.params.window(s.n()));
        self.records.retain(|_, rec| {
            rec.signers.retain(|_, v| next - v.height <= window && !chain.is_punished(rec.accused, v.height));
            rec.height = rec.signers.values().map(|v| v.height).max().unwrap_or(0);
            !rec.signers.is_empty()
        });
    }
}

/// Punishment transactions the next leader can include: one per record with
/// at least `f + 1` distinct signers whose votes the chain accepts.
pub fn adjudicate_suspects(
    next_leader: ActorId,
    pool: &SuspectPool,
    chain: &ChainState,
    authority: &dyn Authority,
) -> Vec<Transaction> {
    let Some(schedule) = chain.next_schedule() else {
        return Vec::new();
    };
    let threshold = schedule.timeout_threshold();
    let mut out: Vec<Transaction> = Vec::new();
    for rec in pool.records().filter(|r| r.is_actionable(threshold)) {
        let tx = Transaction::exempt(TxBody::Punishment {
            accused: rec.accused,
            txid: rec.txid,
            height: rec.height,
            suspects: rec.signers.values().cloned().collect(),
        });
        if chain.tx_valid_after(&out, &tx, next_leader, authority).is_ok() {
            out.push(tx);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{QuorumCert, SignatureLedger};
    use crate::membership::Incentives;
    use crate::types::DeviceToken;

    fn setup() -> (SignatureLedger, ChainState) {
        let ledger = SignatureLedger::new((0..20).map(ActorId));
        let producers: Vec<_> = (0..4).map(|i| (ActorId(i), DeviceToken::for_actor(ActorId(i)))).collect();
        let accounts: Vec<_> = (0..20).map(ActorId).collect();
        (ledger, ChainState::genesis(Incentives::default(), 1, &producers, &accounts))
    }

    fn empty_block(chain: &ChainState, round: u64, proposer: u32) -> Block {
        Block {
            height: chain.next_height(),
            round,
            proposer: ActorId(proposer),
            parent_hash: chain.tip,
            txs: vec![],
            cert: QuorumCert::default(),
        }
    }

    fn watch(ok: bool) -> Watch {
        Watch {
            held_since: 0.0,
            proposal_seen: 2000.0,
            lead_time: 1000.0,
            still_includable: ok,
        }
    }

    #[test]
    fn omission_is_suspected_inclusion_is_not() {
        let (ledger, chain) = setup();
        let txid = crate::crypto::digest(b"join");
        let b = empty_block(&chain, 0, 0);
        assert!(check_inclusion_and_suspect(ActorId(1), ActorId(0), &txid, &b, watch(true), &ledger).is_some());
        let mut with = b.clone();
        with.txs.push(Transaction::exempt(TxBody::Leave { leaver: ActorId(9) }));
        let id = with.txs[0].id;
        assert!(check_inclusion_and_suspect(ActorId(1), ActorId(0), &id, &with, watch(true), &ledger).is_none());
    }

    #[test]
    fn late_forward_is_not_suspected() {
        let (ledger, chain) = setup();
        let txid = crate::crypto::digest(b"late");
        let b = empty_block(&chain, 0, 0);
        let late = Watch {
            held_since: 1500.0,
            ..watch(true)
        };
        assert!(check_inclusion_and_suspect(ActorId(1), ActorId(0), &txid, &b, late, &ledger).is_none());
        assert!(check_inclusion_and_suspect(ActorId(1), ActorId(0), &txid, &b, watch(false), &ledger).is_none());
    }

    fn suspect(ledger: &SignatureLedger, signer: u32, accused: u32, txid: &Digest, h: u64) -> Suspect {
        let auth = ledger
            .sign_statement(ActorId(signer), &Suspect::statement_for(ActorId(accused), txid, h))
            .unwrap();
        Suspect {
            accused: ActorId(accused),
            txid: *txid,
            height: h,
            auth,
        }
    }

    #[test]
    fn threshold_is_f_plus_one() {
        let (ledger, mut chain) = setup();
        let b = empty_block(&chain, 0, 0);
        chain.apply_block(&b, &ledger);
        let txid = crate::crypto::digest(b"join");
        let mut pool = SuspectPool::new();
        pool.add(&suspect(&ledger, 2, 0, &txid, 1));
        assert!(adjudicate_suspects(ActorId(1), &pool, &chain, &ledger).is_empty());
        pool.add(&suspect(&ledger, 3, 0, &txid, 1));
        let p = adjudicate_suspects(ActorId(1), &pool, &chain, &ledger);
        assert_eq!(p.len(), 1);
        assert!(matches!(&p[0].body, TxBody::Punishment { accused, height: 1, .. } if *accused == ActorId(0)));
    }

    #[test]
    fn suspects_accumulate_across_blocks() {
        let (ledger, mut chain) = setup();
        let txid = crate::crypto::digest(b"join");
        let mut pool = SuspectPool::new();
        // The accused leads rounds 0 and 4; both blocks omit the join.
        chain.apply_block(&empty_block(&chain, 0, 0), &ledger);
        pool.add(&suspect(&ledger, 2, 0, &txid, 1));
        assert!(adjudicate_suspects(ActorId(1), &pool, &chain, &ledger).is_empty());
        chain.apply_block(&empty_block(&chain, 4, 0), &ledger);
        pool.add(&suspect(&ledger, 3, 0, &txid, 2));
        let p = adjudicate_suspects(ActorId(1), &pool, &chain, &ledger);
        assert_eq!(p.len(), 1);
        assert!(matches!(&p[0].body, TxBody::Punishment { height: 2, .. }));
    }

    #[test]
    fn punishment_reverses_reward() {
        let (ledger, mut chain) = setup();
        let txid = crate::crypto::digest(b"join");
        chain.apply_block(&empty_block(&chain, 0, 0), &ledger);
        let before = chain.ledger.balance(ActorId(0));
        let mut pool = SuspectPool::new();
        pool.add(&suspect(&ledger, 2, 0, &txid, 1));
        pool.add(&suspect(&ledger, 3, 0, &txid, 1));
        let p = adjudicate_suspects(ActorId(1), &pool, &chain, &ledger);
        let mut b = empty_block(&chain, 1, 1);
        b.txs = p;
        chain.validate_block(&b, &ledger).unwrap();
        chain.apply_block(&b, &ledger);
        let e = chain.ledger.entry(1).unwrap();
        assert_eq!((e.reward, e.punished), (0, true));
        assert_eq!(chain.ledger.balance(ActorId(0)), before - 10 + Incentives::default().share(4));
        assert_eq!(chain.ledger.income_of(ActorId(0)).forfeited, 10);
        // Pruning drops the now-punished record.
        pool.prune(&chain);
        assert_eq!(pool.records().count(), 0);
    }
}
