use serde::{Deserialize, Serialize};

use super::schedule::LeaderSchedule;
use crate::crypto::{Authority, Digest};
use crate::types::Block;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainViolation {
    pub height: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainValidation {
    pub violations: Vec<ChainViolation>,
}

impl ChainValidation {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks hash links, certificates and proposers of `chain`, which starts at
/// genesis. `schedule_at(h)` gives the producer set active at height `h`.
pub fn validate_chain(
    chain: &[Block],
    schedule_at: &dyn Fn(u64) -> Option<LeaderSchedule>,
    authority: &dyn Authority,
) -> ChainValidation {
    let mut out = ChainValidation::default();
    let mut bad = |height: u64, reason: String| out.violations.push(ChainViolation { height, reason });
    let Some(first) = chain.first() else {
        return out;
    };
    if *first != Block::genesis() {
        bad(0, "first block is not the genesis block".into());
    }
    let mut parent: Digest = first.digest();
    for (i, b) in chain.iter().enumerate().skip(1) {
        let h = i as u64;
        if b.height != h {
            bad(h, format!("block claims height {}", b.height));
        }
        if b.parent_hash != parent {
            bad(h, "parent hash does not link".into());
        }
        parent = b.digest();
        let Some(schedule) = schedule_at(h) else {
            bad(h, "no producer set".into());
            continue;
        };
        if schedule.leader_of(b.round) != b.proposer {
            bad(h, format!("{} is not the leader of round {}", b.proposer, b.round));
        }
        if b.cert.digest != b.digest() {
            bad(h, "certificate vouches for another digest".into());
        }
        if b.cert.round < b.round {
            bad(h, "certificate predates the proposal".into());
        }
        let member = |a| schedule.contains(a);
        if let Err(e) = b.cert.validate(authority, h, schedule.quorum(), &member) {
            bad(h, format!("certificate: {e}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{QuorumCert, SignatureLedger, Statement, Tag};
    use crate::types::ActorId;

    fn chain(ledger: &SignatureLedger, schedule: &LeaderSchedule, len: u64) -> Vec<Block> {
        let mut out = vec![Block::genesis()];
        for h in 1..=len {
            let round = h - 1;
            let mut b = Block {
                height: h,
                round,
                proposer: schedule.leader_of(round),
                parent_hash: out.last().unwrap().digest(),
                txs: vec![],
                cert: QuorumCert::default(),
            };
            let d = b.digest();
            let auths = (0..3)
                .map(|i| {
                    ledger
                        .sign_statement(ActorId(i), &Statement::new(Tag::AckWrite, h, round, d))
                        .unwrap()
                })
                .collect();
            b.cert = QuorumCert { round, digest: d, auths };
            out.push(b);
        }
        out
    }

    fn setup() -> (SignatureLedger, LeaderSchedule) {
        (
            SignatureLedger::new((0..5).map(ActorId)),
            LeaderSchedule::new((0..4).map(ActorId).collect(), 1).unwrap(),
        )
    }

    #[test]
    fn honest_chain_validates() {
        let (ledger, s) = setup();
        let c = chain(&ledger, &s, 10);
        assert!(validate_chain(&c, &|_| Some(s.clone()), &ledger).is_valid());
    }

    #[test]
    fn non_signer_in_cert_detected() {
        let (ledger, s) = setup();
        let mut c = chain(&ledger, &s, 10);
        let stmt = c[4].cert.statement(4);
        c[4].cert.auths[1].signer = ActorId(3);
        assert!(!ledger.verify_statement(&c[4].cert.auths[1], &stmt));
        let v = validate_chain(&c, &|_| Some(s.clone()), &ledger);
        assert_eq!(v.violations.len(), 1);
        assert_eq!(v.violations[0].height, 4);
    }

    #[test]
    fn short_certificate_detected() {
        let (ledger, s) = setup();
        let mut c = chain(&ledger, &s, 5);
        c[5].cert.auths.truncate(2);
        let v = validate_chain(&c, &|_| Some(s.clone()), &ledger);
        assert!(!v.is_valid());
        assert!(v.violations[0].reason.contains("2 distinct signers, 3 required"));
    }

    #[test]
    fn broken_link_and_wrong_proposer_detected() {
        let (ledger, s) = setup();
        let mut c = chain(&ledger, &s, 3);
        c[2].proposer = ActorId(3);
        let v = validate_chain(&c, &|_| Some(s.clone()), &ledger);
        let heights: Vec<u64> = v.violations.iter().map(|x| x.height).collect();
        // Height 2 has the wrong proposer and a now-stale cert; height 3 no longer links.
        assert!(heights.contains(&2) && heights.contains(&3));
    }
}
