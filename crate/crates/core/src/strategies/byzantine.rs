use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Behavior, BuildCtx, HookCtx, Outgoing, SimTime, Step};
use crate::consensus::{Agree, Decide, Freeze, ProtocolMessage, Suspect, Timeout};
use crate::crypto::{digest, Authenticator, Digest, QuorumCert, Statement, Tag};
use crate::encoding::Encode;
use crate::types::{ActorId, Block, Transaction, TxBody};

fn unsigned(signer: ActorId, stmt: &Statement) -> Authenticator {
    Authenticator {
        signer,
        tag: stmt.tag,
        digest: digest(&stmt.payload()),
    }
}

/// Runs round changes but never lets its own AGREE out.
pub struct SilentLeader;

impl Behavior for SilentLeader {
    fn filter_outgoing(&mut self, cx: &mut HookCtx<'_>, out: Outgoing) -> Vec<Outgoing> {
        match &out.msg {
            ProtocolMessage::Agree(a) if a.auth.signer == cx.me => vec![],
            _ => vec![out],
        }
    }
}

/// Sends every other replica a different, validly signed block for the same
/// round and never acknowledges either.
pub struct EquivocatingLeader;

impl EquivocatingLeader {
    fn variant(cx: &HookCtx<'_>, a: &Agree) -> Option<Agree> {
        let mut block = a.block.clone();
        block.txs.push(Transaction::new(
            TxBody::Transfer {
                from: cx.me,
                to: cx.me,
                amount: 1,
                nonce: u64::MAX - a.round,
            },
            1,
        ));
        let stmt = Statement::new(Tag::Agree, a.height, a.round, block.digest());
        let auth = cx.authority.sign_statement(cx.me, &stmt).ok()?;
        Some(Agree {
            block,
            auth,
            ..a.clone()
        })
    }
}

impl Behavior for EquivocatingLeader {
    fn filter_outgoing(&mut self, cx: &mut HookCtx<'_>, out: Outgoing) -> Vec<Outgoing> {
        match &out.msg {
            ProtocolMessage::AckAgree(v) if out.to == cx.me && cx.is_leader(v.round) => vec![],
            ProtocolMessage::Agree(a) if a.auth.signer == cx.me && out.to != cx.me => {
                let idx = cx.others().iter().position(|p| *p == out.to);
                match idx {
                    Some(i) if i % 2 == 1 => match Self::variant(cx, a) {
                        Some(v) => vec![Outgoing::now(out.to, ProtocolMessage::Agree(v))],
                        None => vec![out],
                    },
                    _ => vec![out],
                }
            }
            _ => vec![out],
        }
    }
}

/// When it leads the next round, starts it straight away with a FREEZE whose
/// TIMEOUT set holds only its own signature and forgeries.
pub struct FakeFreezer;

impl Behavior for FakeFreezer {
    fn on_step(&mut self, cx: &mut HookCtx<'_>, step: Step<'_>) -> Vec<Outgoing> {
        if !matches!(step, Step::RoundEntered | Step::HeightStarted) || !cx.is_leader(cx.round + 1) {
            return vec![];
        }
        let stmt = Timeout::statement_for(cx.height, cx.round);
        let Ok(own) = cx.authority.sign_statement(cx.me, &stmt) else {
            return vec![];
        };
        let mut timeouts = vec![own];
        timeouts.extend(cx.others().into_iter().take(cx.schedule.f()).map(|p| unsigned(p, &stmt)));
        let round = cx.round + 1;
        let fstmt = Statement::new(Tag::Freeze, cx.height, round, Digest::ZERO);
        let Ok(auth) = cx.authority.sign_statement(cx.me, &fstmt) else {
            return vec![];
        };
        let fz = Freeze {
            height: cx.height,
            round,
            frozen: cx.round,
            timeouts,
            auth,
        };
        cx.others()
            .into_iter()
            .map(|p| Outgoing::now(p, ProtocolMessage::Freeze(fz.clone())))
            .collect()
    }
}

/// At every height, broadcasts a block of its own with a DECIDE whose
/// certificate carries one real acknowledgement and forged ones.
pub struct CertForger;

impl Behavior for CertForger {
    fn on_step(&mut self, cx: &mut HookCtx<'_>, step: Step<'_>) -> Vec<Outgoing> {
        if !matches!(step, Step::HeightStarted) {
            return vec![];
        }
        let block = Block {
            height: cx.height,
            round: cx.round,
            proposer: cx.me,
            parent_hash: cx.chain.tip,
            txs: vec![],
            cert: QuorumCert::default(),
        };
        let d = block.digest();
        let ack = Statement::new(Tag::AckWrite, cx.height, cx.round, d);
        let mut write_acks: Vec<Authenticator> = cx.authority.sign_statement(cx.me, &ack).into_iter().collect();
        let need = cx.schedule.quorum().saturating_sub(1);
        write_acks.extend(cx.others().into_iter().take(need).map(|p| unsigned(p, &ack)));
        let Ok(auth) = cx
            .authority
            .sign_statement(cx.me, &Statement::new(Tag::Decide, cx.height, cx.round, d))
        else {
            return vec![];
        };
        let decide = Decide {
            height: cx.height,
            round: cx.round,
            digest: d,
            write_acks,
            auth,
        };
        let mut out = Vec::new();
        for p in cx.others() {
            out.push(Outgoing::now(p, ProtocolMessage::BlockResponse(block.clone())));
            out.push(Outgoing::now(p, ProtocolMessage::Decide(decide.clone())));
        }
        out
    }
}

/// Never acknowledges anything.
pub struct AckWithholder;

impl Behavior for AckWithholder {
    fn filter_outgoing(&mut self, _cx: &mut HookCtx<'_>, out: Outgoing) -> Vec<Outgoing> {
        match out.msg {
            ProtocolMessage::AckAgree(_) | ProtocolMessage::AckWrite(_) | ProtocolMessage::FreezeAck(_) => vec![],
            _ => vec![out],
        }
    }
}

/// Holds every own message sent before GST until just after it.
pub struct RandomDelayer;

impl Behavior for RandomDelayer {
    fn filter_outgoing(&mut self, cx: &mut HookCtx<'_>, mut out: Outgoing) -> Vec<Outgoing> {
        if cx.now < cx.gst {
            out.hold = cx.gst - cx.now + cx.rng.gen_range(0..=cx.delta);
        }
        vec![out]
    }
}

/// Puts two transfers into its own blocks that together overdraw its account.
pub struct DoubleSpender;

impl Behavior for DoubleSpender {
    fn select_txs(&mut self, cx: &mut HookCtx<'_>, mut txs: Vec<Transaction>) -> Vec<Transaction> {
        let fee = cx.chain.params.transfer_fee;
        let amount = cx.chain.ledger.balance(cx.me) - fee;
        let others = cx.others();
        if amount <= 0 || others.is_empty() {
            return txs;
        }
        for i in 0..2 {
            txs.push(Transaction::new(
                TxBody::Transfer {
                    from: cx.me,
                    to: others[i % others.len()],
                    amount,
                    nonce: cx.rng.gen(),
                },
                1,
            ));
        }
        txs
    }
}

/// Compliant until a fixed instant, then silent.
pub struct Crash {
    at: SimTime,
}

impl Crash {
    pub fn new(at: Option<SimTime>, me: ActorId, cx: BuildCtx) -> Self {
        let at = at.unwrap_or_else(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(cx.seed ^ (u64::from(me.0) << 32) ^ 0xc4a5);
            rng.gen_range(0..=cx.gst + 5 * cx.timeout)
        });
        Crash { at }
    }
}

impl Behavior for Crash {
    fn crash_at(&self) -> Option<SimTime> {
        Some(self.at)
    }
}

/// Accuses every other proposer of omitting a transaction that never existed.
/// All false suspecters name the same phantom, so their votes pool.
pub struct FalseSuspecter;

impl FalseSuspecter {
    pub fn phantom(accused: ActorId, height: u64) -> Digest {
        let mut buf = b"phantom".to_vec();
        accused.encode_to(&mut buf);
        height.encode_to(&mut buf);
        digest(&buf)
    }
}

impl Behavior for FalseSuspecter {
    fn on_step(&mut self, cx: &mut HookCtx<'_>, step: Step<'_>) -> Vec<Outgoing> {
        let Step::Decided(block) = step else {
            return vec![];
        };
        if block.proposer == cx.me {
            return vec![];
        }
        let txid = Self::phantom(block.proposer, block.height);
        let stmt = Suspect::statement_for(block.proposer, &txid, block.height);
        let Ok(auth) = cx.authority.sign_statement(cx.me, &stmt) else {
            return vec![];
        };
        let s = Suspect {
            accused: block.proposer,
            txid,
            height: block.height,
            auth,
        };
        cx.others()
            .into_iter()
            .map(|p| Outgoing::now(p, ProtocolMessage::Suspect(s.clone())))
            .collect()
    }
}
