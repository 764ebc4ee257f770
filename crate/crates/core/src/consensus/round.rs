//! Per-height round state and the protocol's decision steps.
//!
//! Each function here is one step of the three-phase commit or of the
//! FREEZE round change. They are pure with respect to the network: they take
//! the local [`RoundState`] and an incoming message and return what to send.
//! Invalid input yields `None` rather than an error, since a replica simply
//! ignores messages it cannot vouch for.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::messages::{Agree, Decide, Freeze, FreezeAck, FreezeAckContent, FreezeCert, Timeout, Vote, Write};
use super::schedule::LeaderSchedule;
use crate::crypto::{check_quorum, Authenticator, Authority, CertError, CryptoError, Digest, QuorumCert, Statement, Tag};
use crate::types::{ActorId, Block};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Leader,
    Replica,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Agreed,
    Written,
    Decided,
    Frozen,
}

/// The lock: the latest WRITE this replica acknowledged at this height.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredWrite {
    pub round: u64,
    pub block: Block,
    pub acks: Vec<Authenticator>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub height: u64,
    pub round: u64,
    pub role: Role,
    pub phase: Phase,
    pub acked_agree: Option<Digest>,
    pub stored_write: Option<StoredWrite>,
    /// Local-clock time at which this round was entered.
    pub timer_start: f64,
    /// Local-clock duration after which this replica sends TIMEOUT.
    pub timeout_t: f64,
    /// Rounds strictly below this are frozen: no more votes for them.
    pub frozen_below: u64,
    pub freeze_acked: Option<u64>,
}

impl RoundState {
    pub fn new(height: u64, round: u64, role: Role, now: f64, timeout_t: f64) -> Self {
        RoundState {
            height,
            round,
            role,
            phase: Phase::Idle,
            acked_agree: None,
            stored_write: None,
            timer_start: now,
            timeout_t,
            frozen_below: round,
            freeze_acked: None,
        }
    }

    /// Moves to a later round of the same height. The lock survives.
    pub fn enter_round(&mut self, round: u64, role: Role, now: f64) {
        debug_assert!(round >= self.round);
        self.round = round;
        self.role = role;
        self.phase = Phase::Idle;
        self.acked_agree = None;
        self.timer_start = now;
        self.frozen_below = self.frozen_below.max(round);
    }
}

/// What a replica knows about the height it is working on.
pub struct HeightCtx<'a> {
    pub me: ActorId,
    pub height: u64,
    /// First round of this height; it needs no FREEZE certificate.
    pub start_round: u64,
    pub schedule: &'a LeaderSchedule,
    pub authority: &'a dyn Authority,
}

impl<'a> HeightCtx<'a> {
    fn role_in(&self, round: u64) -> Role {
        if self.schedule.leader_of(round) == self.me {
            Role::Leader
        } else {
            Role::Replica
        }
    }

    fn sign(&self, stmt: &Statement) -> Option<Authenticator> {
        self.authority.sign_statement(self.me, stmt).ok()
    }

    fn member(&self) -> impl Fn(ActorId) -> bool + '_ {
        move |a| self.schedule.contains(a)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FreezeError {
    #[error("certificate freezes round {got}, expected {expected} or a permitted skip")]
    WrongRound { got: u64, expected: u64 },
    #[error("TIMEOUT set: {0}")]
    Timeouts(CertError),
    #[error("FREEZE-ACK set: {0}")]
    FreezeAcks(CertError),
    #[error("FREEZE-ACK from {0} is for another height or round")]
    AckMismatch(ActorId),
    #[error("carried WRITE from {signer} is invalid: {reason}")]
    CarriedWrite { signer: ActorId, reason: String },
    #[error("two different blocks carried for round {0}")]
    ConflictingCarried(u64),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProposeError {
    #[error("{0} is not the leader of round {1}")]
    NotLeader(ActorId, u64),
    #[error("round {0} follows a round change and needs a FREEZE certificate")]
    FreezeRequired(u64),
    #[error(transparent)]
    Freeze(#[from] FreezeError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WriteError {
    #[error("{0} is not the leader of round {1}")]
    NotLeader(ActorId, u64),
    #[error("acknowledgements do not form a quorum: {0}")]
    Quorum(#[from] CertError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Round a leader at position `k` after the timed-out round `round` starts,
/// together with `k`. Only the next `f + 1` leaders qualify, so at least one
/// of them is not Byzantine.
pub fn freeze_target(schedule: &LeaderSchedule, me: ActorId, round: u64) -> Option<(u64, u64)> {
    (1..=schedule.f() as u64 + 1)
        .map(|k| (round + k, k))
        .find(|(p, _)| schedule.leader_of(*p) == me)
}

fn skip_allowed(ctx: &HeightCtx<'_>, frozen: u64, new_round: u64) -> bool {
    frozen < new_round && new_round - frozen <= ctx.schedule.f() as u64 + 1
}

/// Checks a FREEZE certificate for `new_round` and returns the block the
/// leader is bound to re-propose, if any acker carried a WRITE.
pub fn validate_freeze_cert(
    ctx: &HeightCtx<'_>,
    cert: &FreezeCert,
    new_round: u64,
) -> Result<Option<Block>, FreezeError> {
    if !skip_allowed(ctx, cert.round_frozen, new_round) {
        return Err(FreezeError::WrongRound {
            got: cert.round_frozen,
            expected: new_round.saturating_sub(1),
        });
    }
    let member = ctx.member();
    check_quorum(
        ctx.authority,
        &cert.timeouts,
        &Timeout::statement_for(ctx.height, cert.round_frozen),
        ctx.schedule.timeout_threshold(),
        &member,
    )
    .map_err(FreezeError::Timeouts)?;

    let mut signers = BTreeSet::new();
    let mut carried: Option<(u64, Block)> = None;
    for ack in &cert.freeze_acks {
        let signer = ack.auth.signer;
        if !signers.insert(signer) {
            return Err(FreezeError::FreezeAcks(CertError::DuplicateSigner(signer)));
        }
        if !member(signer) {
            return Err(FreezeError::FreezeAcks(CertError::NotMember(signer)));
        }
        if ack.height != ctx.height || ack.round != new_round {
            return Err(FreezeError::AckMismatch(signer));
        }
        if !ctx.authority.verify_statement(&ack.auth, &ack.statement()) {
            return Err(FreezeError::FreezeAcks(CertError::BadSignature(signer)));
        }
        if let FreezeAckContent::CarriesWrite { round, block, acks } = &ack.content {
            if *round >= new_round || block.height != ctx.height {
                return Err(FreezeError::CarriedWrite {
                    signer,
                    reason: format!("write round {round} / height {} out of range", block.height),
                });
            }
            let stmt = Statement::new(Tag::AckAgree, ctx.height, *round, block.digest());
            check_quorum(ctx.authority, acks, &stmt, ctx.schedule.quorum(), &member).map_err(|e| {
                FreezeError::CarriedWrite {
                    signer,
                    reason: e.to_string(),
                }
            })?;
            match &carried {
                Some((r, b)) if *r == *round && b.digest() != block.digest() => {
                    return Err(FreezeError::ConflictingCarried(*round));
                }
                Some((r, _)) if *r >= *round => {}
                _ => carried = Some((*round, block.clone())),
            }
        }
    }
    if signers.len() < ctx.schedule.quorum() {
        return Err(FreezeError::FreezeAcks(CertError::TooFew {
            got: signers.len(),
            need: ctx.schedule.quorum(),
        }));
    }
    Ok(carried.map(|(_, b)| b))
}

/// Leader step 1: sign an AGREE. After a round change the block is dictated
/// by the FREEZE certificate whenever it carries a WRITE.
pub fn leader_propose(
    state: &RoundState,
    ctx: &HeightCtx<'_>,
    own_block: Block,
    freeze: Option<FreezeCert>,
) -> Result<Agree, ProposeError> {
    if ctx.schedule.leader_of(state.round) != ctx.me {
        return Err(ProposeError::NotLeader(ctx.me, state.round));
    }
    let (block, freeze) = if state.round == ctx.start_round {
        (own_block, None)
    } else {
        let cert = freeze.ok_or(ProposeError::FreezeRequired(state.round))?;
        let required = validate_freeze_cert(ctx, &cert, state.round)?;
        (required.unwrap_or(own_block), Some(cert))
    };
    let stmt = Statement::new(Tag::Agree, ctx.height, state.round, block.digest());
    let auth = ctx.authority.sign_statement(ctx.me, &stmt)?;
    Ok(Agree {
        height: ctx.height,
        round: state.round,
        block,
        freeze,
        auth,
    })
}

/// Replica step 1: acknowledge at most one valid AGREE per round.
///
/// `check_block` validates block contents against the local chain. A valid
/// AGREE for a later round (its FREEZE certificate proves the round started)
/// moves the replica into that round first.
pub fn replica_on_agree(
    state: &mut RoundState,
    ctx: &HeightCtx<'_>,
    msg: &Agree,
    now: f64,
    check_block: &dyn Fn(&Block) -> bool,
) -> Option<Vote> {
    if msg.height != ctx.height || msg.round < state.round || msg.round < state.frozen_below {
        return None;
    }
    if msg.round < ctx.start_round || msg.block.height != ctx.height {
        return None;
    }
    let leader = ctx.schedule.leader_of(msg.round);
    if msg.auth.signer != leader || !ctx.authority.verify_statement(&msg.auth, &msg.statement()) {
        return None;
    }
    let required = if msg.round == ctx.start_round {
        None
    } else {
        validate_freeze_cert(ctx, msg.freeze.as_ref()?, msg.round).ok()?
    };
    match required {
        Some(b) if b.digest() != msg.block.digest() => return None,
        Some(_) => {}
        None if msg.block.round != msg.round || msg.block.proposer != leader => return None,
        None => {}
    }
    if !check_block(&msg.block) {
        return None;
    }
    if msg.round > state.round {
        state.enter_round(msg.round, ctx.role_in(msg.round), now);
    }
    if state.acked_agree.is_some() {
        return None;
    }
    let d = msg.block.digest();
    let auth = ctx.sign(&Statement::new(Tag::AckAgree, ctx.height, msg.round, d))?;
    state.acked_agree = Some(d);
    state.phase = Phase::Agreed;
    Some(Vote {
        height: ctx.height,
        round: msg.round,
        digest: d,
        auth,
    })
}

/// Leader step 2: a quorum of ACK-AGREEs for the same digest becomes a WRITE.
pub fn leader_write(
    state: &RoundState,
    ctx: &HeightCtx<'_>,
    block: &Block,
    acks: Vec<Authenticator>,
) -> Result<Write, WriteError> {
    if ctx.schedule.leader_of(state.round) != ctx.me {
        return Err(WriteError::NotLeader(ctx.me, state.round));
    }
    let stmt = Statement::new(Tag::AckAgree, ctx.height, state.round, block.digest());
    check_quorum(ctx.authority, &acks, &stmt, ctx.schedule.quorum(), &ctx.member())?;
    let auth = ctx
        .authority
        .sign_statement(ctx.me, &Statement::new(Tag::Write, ctx.height, state.round, block.digest()))?;
    Ok(Write {
        height: ctx.height,
        round: state.round,
        block: block.clone(),
        acks,
        auth,
    })
}

/// Replica step 2: store a certified WRITE (the lock) and acknowledge it.
pub fn replica_on_write(state: &mut RoundState, ctx: &HeightCtx<'_>, msg: &Write, now: f64) -> Option<Vote> {
    if msg.height != ctx.height || msg.block.height != ctx.height {
        return None;
    }
    if msg.round < state.round || msg.round < state.frozen_below || msg.round < ctx.start_round {
        return None;
    }
    let leader = ctx.schedule.leader_of(msg.round);
    if msg.auth.signer != leader || !ctx.authority.verify_statement(&msg.auth, &msg.statement()) {
        return None;
    }
    let d = msg.block.digest();
    let stmt = Statement::new(Tag::AckAgree, ctx.height, msg.round, d);
    check_quorum(ctx.authority, &msg.acks, &stmt, ctx.schedule.quorum(), &ctx.member()).ok()?;
    if let Some(sw) = &state.stored_write {
        if sw.round > msg.round || (sw.round == msg.round && sw.block.digest() != d) {
            return None;
        }
    }
    if msg.round > state.round {
        state.enter_round(msg.round, ctx.role_in(msg.round), now);
    }
    let auth = ctx.sign(&Statement::new(Tag::AckWrite, ctx.height, msg.round, d))?;
    state.stored_write = Some(StoredWrite {
        round: msg.round,
        block: msg.block.clone(),
        acks: msg.acks.clone(),
    });
    state.phase = Phase::Written;
    Some(Vote {
        height: ctx.height,
        round: msg.round,
        digest: d,
        auth,
    })
}

/// Leader step 3: a quorum of ACK-WRITEs becomes a DECIDE.
pub fn leader_decide(
    state: &RoundState,
    ctx: &HeightCtx<'_>,
    digest: Digest,
    write_acks: Vec<Authenticator>,
) -> Result<Decide, WriteError> {
    if ctx.schedule.leader_of(state.round) != ctx.me {
        return Err(WriteError::NotLeader(ctx.me, state.round));
    }
    let stmt = Statement::new(Tag::AckWrite, ctx.height, state.round, digest);
    check_quorum(ctx.authority, &write_acks, &stmt, ctx.schedule.quorum(), &ctx.member())?;
    let auth = ctx
        .authority
        .sign_statement(ctx.me, &Statement::new(Tag::Decide, ctx.height, state.round, digest))?;
    Ok(Decide {
        height: ctx.height,
        round: state.round,
        digest,
        write_acks,
        auth,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecideOutcome {
    /// The block, with its certificate filled in from the write-acks.
    Decided(Block),
    /// The certificate is valid but the block body is unknown locally.
    NeedBlock(Digest),
    Ignored,
}

/// Replica step 3. DECIDEs are accepted for any round of the current height:
/// safety rests on the certificate, not on the local phase.
pub fn replica_on_decide(
    state: &mut RoundState,
    ctx: &HeightCtx<'_>,
    msg: &Decide,
    known_block: Option<&Block>,
) -> DecideOutcome {
    if msg.height != ctx.height || state.phase == Phase::Decided {
        return DecideOutcome::Ignored;
    }
    if !valid_decide(ctx, msg) {
        return DecideOutcome::Ignored;
    }
    match known_block.filter(|b| b.height == ctx.height && b.digest() == msg.digest) {
        Some(b) => {
            state.phase = Phase::Decided;
            let mut block = b.clone();
            block.cert = QuorumCert {
                round: msg.round,
                digest: msg.digest,
                auths: msg.write_acks.clone(),
            };
            DecideOutcome::Decided(block)
        }
        None => DecideOutcome::NeedBlock(msg.digest),
    }
}

pub fn valid_decide(ctx: &HeightCtx<'_>, msg: &Decide) -> bool {
    let leader = ctx.schedule.leader_of(msg.round);
    if msg.round < ctx.start_round
        || msg.auth.signer != leader
        || !ctx.authority.verify_statement(&msg.auth, &msg.statement())
    {
        return false;
    }
    let stmt = Statement::new(Tag::AckWrite, ctx.height, msg.round, msg.digest);
    check_quorum(ctx.authority, &msg.write_acks, &stmt, ctx.schedule.quorum(), &ctx.member()).is_ok()
}

/// Emits TIMEOUT once the local timer for the current round has run out.
pub fn replica_on_timeout_expiry(state: &RoundState, ctx: &HeightCtx<'_>, now: f64) -> Option<Timeout> {
    if state.phase == Phase::Decided || state.phase == Phase::Frozen {
        return None;
    }
    if !ctx.schedule.contains(ctx.me) || now - state.timer_start < state.timeout_t {
        return None;
    }
    let auth = ctx.sign(&Timeout::statement_for(ctx.height, state.round))?;
    Some(Timeout {
        height: ctx.height,
        round: state.round,
        auth,
        observed: None,
    })
}

/// The next leader's check: TIMEOUTs arriving sooner than `t / clock_ratio`
/// after its own round start are too early and discarded. With `f + 1`
/// distinct timely ones it starts the round change.
///
/// `t` is the local time at which a compliant replica sends the TIMEOUT to
/// this leader: `T` for the immediate successor, later for the leaders after
/// it (see [`freeze_target`]).
pub fn next_leader_on_timeout(
    ctx: &HeightCtx<'_>,
    round: u64,
    collected: &BTreeMap<ActorId, Timeout>,
    arrival_elapsed: &BTreeMap<ActorId, f64>,
    t: f64,
    clock_ratio: f64,
) -> Option<Freeze> {
    let (target, _) = freeze_target(ctx.schedule, ctx.me, round)?;
    let earliest = t / clock_ratio;
    let stmt = Timeout::statement_for(ctx.height, round);
    let timeouts: Vec<Authenticator> = collected
        .iter()
        .filter(|(signer, to)| {
            to.height == ctx.height
                && to.round == round
                && to.auth.signer == **signer
                && arrival_elapsed.get(signer).is_some_and(|e| *e >= earliest)
                && ctx.schedule.contains(**signer)
                && ctx.authority.verify_statement(&to.auth, &stmt)
        })
        .map(|(_, to)| to.auth.clone())
        .collect();
    if timeouts.len() < ctx.schedule.timeout_threshold() {
        return None;
    }
    let auth = ctx.sign(&Statement::new(Tag::Freeze, ctx.height, target, Digest::ZERO))?;
    Some(Freeze {
        height: ctx.height,
        round: target,
        frozen: round,
        timeouts,
        auth,
    })
}

/// Replica side of the round change: freeze every earlier round and report
/// the stored WRITE, if any, to the new leader.
pub fn replica_on_freeze(state: &mut RoundState, ctx: &HeightCtx<'_>, msg: &Freeze, now: f64) -> Option<FreezeAck> {
    if msg.height != ctx.height || msg.round <= ctx.start_round || !ctx.schedule.contains(ctx.me) {
        return None;
    }
    if msg.frozen < ctx.start_round || !skip_allowed(ctx, msg.frozen, msg.round) {
        return None;
    }
    let fresh_target = msg.round > state.round
        || (msg.round == state.round && state.phase == Phase::Idle && state.freeze_acked != Some(msg.round));
    if !fresh_target || state.phase == Phase::Decided {
        return None;
    }
    let leader = ctx.schedule.leader_of(msg.round);
    if msg.auth.signer != leader || !ctx.authority.verify_statement(&msg.auth, &msg.statement()) {
        return None;
    }
    check_quorum(
        ctx.authority,
        &msg.timeouts,
        &Timeout::statement_for(ctx.height, msg.frozen),
        ctx.schedule.timeout_threshold(),
        &ctx.member(),
    )
    .ok()?;
    if msg.round > state.round {
        state.phase = Phase::Frozen;
        state.enter_round(msg.round, ctx.role_in(msg.round), now);
    }
    state.freeze_acked = Some(msg.round);
    let content = match &state.stored_write {
        Some(sw) if sw.round < msg.round => FreezeAckContent::CarriesWrite {
            round: sw.round,
            block: sw.block.clone(),
            acks: sw.acks.clone(),
        },
        _ => FreezeAckContent::Empty,
    };
    let stmt = Statement::new(Tag::FreezeAck, ctx.height, msg.round, content.subject());
    let auth = ctx.sign(&stmt)?;
    Some(FreezeAck {
        height: ctx.height,
        round: msg.round,
        content,
        auth,
    })
}
