use super::{Behavior, HookCtx, Outgoing, Step};
use crate::consensus::{Agree, ProtocolMessage};
use crate::crypto::{QuorumCert, Statement, Tag};
use crate::types::{ActorId, Block, Transaction, TxBody, TxKind};

/// Times out after `T / k` instead of `T`, hoping to unseat leaders sooner.
pub struct EarlyTimeouter {
    pub k: f64,
}

impl Behavior for EarlyTimeouter {
    fn timeout_delay(&self, t: f64) -> f64 {
        t / self.k
    }
}

/// Keeps joiners out: leaves Join transactions out of its blocks and does
/// not forward join requests it is asked to relay.
pub struct Gatekeeper;

impl Behavior for Gatekeeper {
    fn select_txs(&mut self, _cx: &mut HookCtx<'_>, txs: Vec<Transaction>) -> Vec<Transaction> {
        txs.into_iter().filter(|t| t.kind() != TxKind::Join).collect()
    }

    fn forwards_joins(&self) -> bool {
        false
    }
}

/// Leaves transfers sent by its target accounts out of its blocks.
pub struct Censor {
    pub targets: Vec<ActorId>,
}

impl Behavior for Censor {
    fn select_txs(&mut self, _cx: &mut HookCtx<'_>, txs: Vec<Transaction>) -> Vec<Transaction> {
        txs.into_iter()
            .filter(|t| !matches!(&t.body, TxBody::Transfer { from, .. } if self.targets.contains(from)))
            .collect()
    }
}

/// Acknowledges AGREEs without checking the block's transactions.
pub struct LazyValidator;

impl Behavior for LazyValidator {
    fn validates_blocks(&self) -> bool {
        false
    }
}

/// Never acknowledges a FREEZE.
pub struct FreezeRefuser;

impl Behavior for FreezeRefuser {
    fn filter_outgoing(&mut self, _cx: &mut HookCtx<'_>, out: Outgoing) -> Vec<Outgoing> {
        match out.msg {
            ProtocolMessage::FreezeAck(_) => vec![],
            _ => vec![out],
        }
    }
}

/// Proposes an empty block in every round it does not lead.
pub struct QueueJumper;

impl Behavior for QueueJumper {
    fn on_step(&mut self, cx: &mut HookCtx<'_>, step: Step<'_>) -> Vec<Outgoing> {
        if !matches!(step, Step::RoundEntered | Step::HeightStarted) || cx.is_leader(cx.round) {
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
        let stmt = Statement::new(Tag::Agree, cx.height, cx.round, block.digest());
        let Ok(auth) = cx.authority.sign_statement(cx.me, &stmt) else {
            return vec![];
        };
        let agree = Agree {
            height: cx.height,
            round: cx.round,
            block,
            freeze: None,
            auth,
        };
        cx.others()
            .into_iter()
            .map(|p| Outgoing::now(p, ProtocolMessage::Agree(agree.clone())))
            .collect()
    }
}
