//! One simulated actor: runs the protocol for its current height and asks
//! its [`Behavior`] at every decision point.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::trace::NodeEvent;
use crate::consensus::{
    freeze_target, leader_propose, leader_decide, leader_write, next_leader_on_timeout, replica_on_agree,
    replica_on_decide, replica_on_freeze, replica_on_timeout_expiry, replica_on_write, validate_freeze_cert, Agree,
    Decide, DecideOutcome, Freeze, FreezeAck, FreezeCert, FreezeError, HeightCtx, LeaderSchedule, ProtocolMessage,
    Role, RoundState, Suspect, Timeout, Vote, Write,
};
use crate::crypto::{Authenticator, Authority, Digest, SignatureLedger, SignedStatement, Statement, Tag};
use crate::membership::{adjudicate_suspects, check_inclusion_and_suspect, ChainState, SuspectPool, TxError, Watch};
use crate::strategies::{Behavior, HookCtx, Outgoing, SimTime, Step};
use crate::types::{ActorId, Block, Transaction, TxBody, TxKind};

/// Messages buffered per future height before further ones are dropped.
const FUTURE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy)]
pub struct NodeCfg {
    /// Nominal timeout T in local time.
    pub timeout: f64,
    pub clock_ratio: f64,
    /// Local time between TIMEOUT escalations to further leaders.
    pub escalation: f64,
    pub lead_time: f64,
    /// Local time a leader waits after entering a height before proposing.
    pub block_time: f64,
    pub heights: u64,
    pub gst: SimTime,
    pub delta: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TimerKind {
    Round,
    Propose,
}

/// What the simulator hands a node and collects back from it.
pub struct Env<'a> {
    pub now: SimTime,
    pub local: f64,
    pub authority: &'a SignatureLedger,
    /// Every actor running a node, this one included.
    pub nodes: &'a [ActorId],
    pub out: Vec<Outgoing>,
    pub timers: Vec<(f64, TimerKind, u64)>,
    pub events: Vec<NodeEvent>,
    /// Producer set of each height this node decided, in order.
    pub schedules: Vec<LeaderSchedule>,
}

#[derive(Debug, Clone)]
struct MemEntry {
    tx: Transaction,
    held_since: f64,
    seq: u64,
}

struct Work {
    height: u64,
    start_round: u64,
    schedule: LeaderSchedule,
    rs: RoundState,
    blocks: HashMap<Digest, Block>,
    /// First valid AGREE per round: local arrival time and the statement.
    agree_first: BTreeMap<u64, (f64, SignedStatement)>,
    acks: BTreeMap<(Tag, u64, Digest), BTreeMap<ActorId, Authenticator>>,
    written: BTreeSet<u64>,
    decide_sent: BTreeSet<u64>,
    proposals: BTreeMap<u64, Block>,
    timeouts: BTreeMap<ActorId, Timeout>,
    timeout_elapsed: BTreeMap<ActorId, f64>,
    frozen_by_me: BTreeSet<u64>,
    my_freeze: Option<Freeze>,
    freeze_acks: BTreeMap<ActorId, FreezeAck>,
    pending_decide: Option<Decide>,
    requested: BTreeSet<Digest>,
    decided: bool,
}

impl Work {
    fn ctx<'a>(&'a self, me: ActorId, authority: &'a dyn Authority) -> HeightCtx<'a> {
        HeightCtx {
            me,
            height: self.height,
            start_round: self.start_round,
            schedule: &self.schedule,
            authority,
        }
    }
}

pub struct Node {
    pub id: ActorId,
    cfg: NodeCfg,
    behavior: Box<dyn Behavior>,
    rng: ChaCha8Rng,
    pub state: ChainState,
    pub chain: Vec<Block>,
    /// State right after the configured number of heights.
    pub target_state: Option<ChainState>,
    /// Transactions skipped while applying decided blocks.
    pub invalid_applied: usize,
    work: Option<Work>,
    mempool: BTreeMap<Digest, MemEntry>,
    seq: u64,
    suspects: SuspectPool,
    evidence: BTreeMap<Digest, Transaction>,
    future: BTreeMap<u64, Vec<(ActorId, ProtocolMessage)>>,
    forwarded: HashSet<Digest>,
    forwarded_decides: BTreeSet<u64>,
    token: u64,
}

impl Node {
    pub fn new(id: ActorId, cfg: NodeCfg, behavior: Box<dyn Behavior>, seed: u64, genesis: ChainState) -> Self {
        Node {
            id,
            cfg,
            behavior,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: genesis,
            chain: vec![Block::genesis()],
            target_state: None,
            invalid_applied: 0,
            work: None,
            mempool: BTreeMap::new(),
            seq: 0,
            suspects: SuspectPool::new(),
            evidence: BTreeMap::new(),
            future: BTreeMap::new(),
            forwarded: HashSet::new(),
            forwarded_decides: BTreeSet::new(),
            token: 0,
        }
    }

    pub fn decided_height(&self) -> u64 {
        self.state.height
    }

    pub fn start(&mut self, env: &mut Env<'_>) {
        self.enter_height(env);
    }

    // ---- outgoing -------------------------------------------------------

    fn send(&mut self, env: &mut Env<'_>, to: ActorId, msg: ProtocolMessage) {
        let out = Outgoing::now(to, msg);
        let Some(w) = self.work.as_ref() else {
            env.out.push(out);
            return;
        };
        let mut cx = HookCtx {
            me: self.id,
            now: env.now,
            gst: self.cfg.gst,
            delta: self.cfg.delta,
            height: w.height,
            round: w.rs.round,
            schedule: &w.schedule,
            chain: &self.state,
            authority: env.authority,
            rng: &mut self.rng,
        };
        env.out.extend(self.behavior.filter_outgoing(&mut cx, out));
    }

    fn send_many(&mut self, env: &mut Env<'_>, to: &[ActorId], msg: ProtocolMessage) {
        for &t in to {
            self.send(env, t, msg.clone());
        }
    }

    fn producers(&self) -> Vec<ActorId> {
        self.work
            .as_ref()
            .map(|w| w.schedule.producers().to_vec())
            .unwrap_or_default()
    }

    fn step(&mut self, env: &mut Env<'_>, step: Step<'_>) {
        let Some(w) = self.work.as_ref() else {
            return;
        };
        let mut cx = HookCtx {
            me: self.id,
            now: env.now,
            gst: self.cfg.gst,
            delta: self.cfg.delta,
            height: w.height,
            round: w.rs.round,
            schedule: &w.schedule,
            chain: &self.state,
            authority: env.authority,
            rng: &mut self.rng,
        };
        let extra = self.behavior.on_step(&mut cx, step);
        env.out.extend(extra);
    }

    fn is_producer(&self) -> bool {
        self.work.as_ref().is_some_and(|w| w.schedule.contains(self.id))
    }

    // ---- heights and rounds --------------------------------------------

    fn enter_height(&mut self, env: &mut Env<'_>) {
        let h = self.state.next_height();
        let Some(schedule) = self.state.next_schedule() else {
            self.work = None;
            return;
        };
        let start = self.state.start_round();
        let role = if schedule.leader_of(start) == self.id {
            Role::Leader
        } else {
            Role::Replica
        };
        let t = self.behavior.timeout_delay(self.cfg.timeout);
        let producer = schedule.contains(self.id);
        self.work = Some(Work {
            height: h,
            start_round: start,
            rs: RoundState::new(h, start, role, env.local, t),
            schedule,
            blocks: HashMap::new(),
            agree_first: BTreeMap::new(),
            acks: BTreeMap::new(),
            written: BTreeSet::new(),
            decide_sent: BTreeSet::new(),
            proposals: BTreeMap::new(),
            timeouts: BTreeMap::new(),
            timeout_elapsed: BTreeMap::new(),
            frozen_by_me: BTreeSet::new(),
            my_freeze: None,
            freeze_acks: BTreeMap::new(),
            pending_decide: None,
            requested: BTreeSet::new(),
            decided: false,
        });
        self.token += 1;
        env.events.push(NodeEvent::HeightStarted { height: h, round: start });
        if producer {
            env.timers.push((t, TimerKind::Round, self.token));
            if role == Role::Leader {
                if self.cfg.block_time > 0.0 {
                    env.timers.push((self.cfg.block_time, TimerKind::Propose, h));
                } else {
                    self.propose(env, None);
                }
            }
        }
        self.step(env, Step::HeightStarted);
        self.future.retain(|k, _| *k >= h);
        if let Some(msgs) = self.future.remove(&h) {
            for (from, m) in msgs {
                if self.state.next_height() != h {
                    break;
                }
                self.on_message(env, from, m);
            }
        }
    }

    fn after_round_change(&mut self, env: &mut Env<'_>) {
        let Some(w) = self.work.as_mut() else {
            return;
        };
        w.timeouts.clear();
        w.timeout_elapsed.clear();
        if w.my_freeze.as_ref().is_some_and(|f| f.round != w.rs.round) {
            w.my_freeze = None;
            w.freeze_acks.clear();
        }
        self.token += 1;
        let (height, round, t) = (w.height, w.rs.round, w.rs.timeout_t);
        env.timers.push((t, TimerKind::Round, self.token));
        env.events.push(NodeEvent::RoundEntered { height, round });
        self.step(env, Step::RoundEntered);
    }

    pub fn on_timer(&mut self, env: &mut Env<'_>, kind: TimerKind, token: u64) {
        match kind {
            TimerKind::Round if token == self.token => self.on_round_timer(env),
            TimerKind::Propose => {
                let ready = self.work.as_ref().is_some_and(|w| {
                    w.height == token && !w.decided && w.rs.round == w.start_round && !w.proposals.contains_key(&w.rs.round)
                });
                if ready {
                    self.propose(env, None);
                }
            }
            TimerKind::Round => {}
        }
    }

    fn on_round_timer(&mut self, env: &mut Env<'_>) {
        if !self.is_producer() {
            return;
        }
        let (cfg, me, token) = (self.cfg, self.id, self.token);
        let w = self.work.as_mut().expect("producer has work");
        if w.decided {
            return;
        }
        let elapsed = env.local - w.rs.timer_start;
        let t0 = w.rs.timeout_t;
        if elapsed < t0 {
            env.timers.push((t0 - elapsed, TimerKind::Round, token));
            return;
        }
        let ctx = w.ctx(me, env.authority);
        let Some(mut timeout) = replica_on_timeout_expiry(&w.rs, &ctx, env.local) else {
            return;
        };
        timeout.observed = w.agree_first.get(&w.rs.round).map(|(_, s)| s.clone());
        let levels = 1 + ((elapsed - t0) / cfg.escalation).floor() as u64;
        let levels = levels.min(w.schedule.f() as u64 + 1).max(1);
        let max_levels = w.schedule.f() as u64 + 1;
        let (height, round) = (w.height, w.rs.round);
        let targets: Vec<ActorId> = (1..=levels).map(|k| w.schedule.leader_of(round + k)).collect();
        let next_escalation = t0 + levels as f64 * cfg.escalation - elapsed;
        let wait = if levels < max_levels {
            cfg.timeout.min(next_escalation)
        } else {
            cfg.timeout
        };
        env.timers.push((wait, TimerKind::Round, token));
        for to in targets {
            env.events.push(NodeEvent::TimeoutSent { height, round, to });
            self.send(env, to, ProtocolMessage::Timeout(timeout.clone()));
        }
    }

    // ---- incoming -------------------------------------------------------

    pub fn on_message(&mut self, env: &mut Env<'_>, from: ActorId, msg: ProtocolMessage) {
        match msg {
            ProtocolMessage::Tx(tx) => self.on_tx(env, tx),
            ProtocolMessage::JoinRequest(tx) => self.on_join_request(env, tx),
            ProtocolMessage::Suspect(s) => self.on_suspect(env, s),
            ProtocolMessage::BlockRequest { height, digest } => self.on_block_request(env, from, height, digest),
            ProtocolMessage::BlockResponse(b) => self.on_block_response(env, from, b),
            other => {
                let Some(h) = other.height() else {
                    return;
                };
                let cur = self.state.next_height();
                if h > cur {
                    let q = self.future.entry(h).or_default();
                    if q.len() < FUTURE_CAP {
                        q.push((from, other));
                    }
                    return;
                }
                if h < cur || self.work.is_none() {
                    return;
                }
                match other {
                    ProtocolMessage::Agree(a) => self.on_agree(env, a),
                    ProtocolMessage::AckAgree(v) => self.on_vote(env, Tag::AckAgree, v),
                    ProtocolMessage::Write(m) => self.on_write(env, m),
                    ProtocolMessage::AckWrite(v) => self.on_vote(env, Tag::AckWrite, v),
                    ProtocolMessage::Decide(d) => self.on_decide(env, d),
                    ProtocolMessage::Timeout(t) => self.on_timeout(env, t),
                    ProtocolMessage::Freeze(f) => self.on_freeze(env, f),
                    ProtocolMessage::FreezeAck(a) => self.on_freeze_ack(env, a),
                    _ => {}
                }
            }
        }
    }

    fn on_tx(&mut self, env: &mut Env<'_>, tx: Transaction) {
        if !tx.id_is_consistent() || self.state.contains_tx(&tx.id) || self.mempool.contains_key(&tx.id) {
            return;
        }
        env.events.push(NodeEvent::TxReceived {
            txid: tx.id,
            kind: tx.kind(),
        });
        self.seq += 1;
        self.mempool.insert(
            tx.id,
            MemEntry {
                tx,
                held_since: env.local,
                seq: self.seq,
            },
        );
    }

    fn on_join_request(&mut self, env: &mut Env<'_>, tx: Transaction) {
        if tx.kind() != TxKind::Join || !tx.id_is_consistent() {
            return;
        }
        let id = tx.id;
        self.on_tx(env, tx.clone());
        if !self.behavior.forwards_joins() || !self.forwarded.insert(id) {
            return;
        }
        env.events.push(NodeEvent::JoinForwarded { txid: id });
        let to: Vec<ActorId> = self.producers().into_iter().filter(|p| *p != self.id).collect();
        self.send_many(env, &to, ProtocolMessage::Tx(tx));
    }

    fn on_suspect(&mut self, env: &mut Env<'_>, s: Suspect) {
        let signer = s.auth.signer;
        if signer == s.accused || !env.authority.verify_statement(&s.auth, &s.statement()) {
            return;
        }
        if !self.state.schedule_for(s.height).is_some_and(|sc| sc.contains(signer)) {
            return;
        }
        self.suspects.add(&s);
    }

    fn on_block_request(&mut self, env: &mut Env<'_>, from: ActorId, height: u64, digest: Digest) {
        let known = self
            .chain
            .get(height as usize)
            .filter(|b| b.digest() == digest)
            .cloned()
            .or_else(|| self.work.as_ref().and_then(|w| w.blocks.get(&digest).cloned()));
        if let Some(b) = known {
            self.send(env, from, ProtocolMessage::BlockResponse(b));
        }
    }

    fn on_block_response(&mut self, env: &mut Env<'_>, from: ActorId, b: Block) {
        let cur = self.state.next_height();
        if b.height > cur {
            let q = self.future.entry(b.height).or_default();
            if q.len() < FUTURE_CAP {
                q.push((from, ProtocolMessage::BlockResponse(b)));
            }
            return;
        }
        let Some(w) = self.work.as_mut().filter(|w| w.height == b.height) else {
            return;
        };
        let d = b.digest();
        w.blocks.entry(d).or_insert(b);
        if w.pending_decide.as_ref().is_some_and(|p| p.digest == d) {
            let dec = w.pending_decide.take().expect("checked");
            self.on_decide(env, dec);
        }
    }

    fn on_agree(&mut self, env: &mut Env<'_>, a: Agree) {
        let me = self.id;
        let validates = self.behavior.validates_blocks();
        let producer = self.is_producer();
        let w = self.work.as_mut().expect("checked by caller");
        let leader = w.schedule.leader_of(a.round);
        let mut equivocation = None;
        if a.auth.signer == leader && a.round >= w.start_round && env.authority.verify_statement(&a.auth, &a.statement()) {
            let ss = a.signed();
            match w.agree_first.get(&a.round) {
                None => {
                    env.events.push(NodeEvent::AgreeSeen {
                        height: a.height,
                        round: a.round,
                        digest: ss.stmt.subject,
                    });
                    w.agree_first.insert(a.round, (env.local, ss));
                }
                Some((_, first)) if first.stmt.subject != ss.stmt.subject => {
                    equivocation = Some((first.clone(), ss));
                }
                Some(_) => {}
            }
            w.blocks.entry(a.block.digest()).or_insert_with(|| a.block.clone());
        }
        let mut vote = None;
        let before = w.rs.round;
        if producer && !w.decided {
            let state = &self.state;
            let check = |b: &Block| !validates || state.validate_block(b, env.authority).is_ok();
            let ctx = HeightCtx {
                me,
                height: w.height,
                start_round: w.start_round,
                schedule: &w.schedule,
                authority: env.authority,
            };
            vote = replica_on_agree(&mut w.rs, &ctx, &a, env.local, &check);
        }
        let changed = w.rs.round != before;
        if let Some((x, y)) = equivocation {
            self.note_equivocation(env, x, y);
        }
        if changed {
            self.after_round_change(env);
        }
        if let Some(v) = vote {
            self.send(env, leader, ProtocolMessage::AckAgree(v));
        }
    }

    fn on_vote(&mut self, env: &mut Env<'_>, tag: Tag, v: Vote) {
        let me = self.id;
        let w = self.work.as_mut().expect("checked by caller");
        if w.decided || w.schedule.leader_of(v.round) != me || v.round != w.rs.round {
            return;
        }
        let signer = v.auth.signer;
        let stmt = Statement::new(tag, w.height, v.round, v.digest);
        if v.auth.tag != tag || !w.schedule.contains(signer) || !env.authority.verify_statement(&v.auth, &stmt) {
            return;
        }
        let set = w.acks.entry((tag, v.round, v.digest)).or_default();
        set.insert(signer, v.auth.clone());
        if set.len() < w.schedule.quorum() {
            return;
        }
        let auths: Vec<Authenticator> = set.values().cloned().collect();
        let ctx = w.ctx(me, env.authority);
        match tag {
            Tag::AckAgree if !w.written.contains(&v.round) => {
                let Some(block) = w.proposals.get(&v.round).filter(|b| b.digest() == v.digest) else {
                    return;
                };
                if let Ok(wr) = leader_write(&w.rs, &ctx, block, auths) {
                    w.written.insert(v.round);
                    let to = w.schedule.producers().to_vec();
                    self.send_many(env, &to, ProtocolMessage::Write(wr));
                }
            }
            Tag::AckWrite if !w.decide_sent.contains(&v.round) => {
                if let Ok(d) = leader_decide(&w.rs, &ctx, v.digest, auths) {
                    w.decide_sent.insert(v.round);
                    let to = env.nodes.to_vec();
                    self.send_many(env, &to, ProtocolMessage::Decide(d));
                }
            }
            _ => {}
        }
    }

    fn on_write(&mut self, env: &mut Env<'_>, m: Write) {
        if !self.is_producer() {
            return;
        }
        let me = self.id;
        let w = self.work.as_mut().expect("checked by caller");
        if w.decided {
            return;
        }
        let before = w.rs.round;
        let ctx = HeightCtx {
            me,
            height: w.height,
            start_round: w.start_round,
            schedule: &w.schedule,
            authority: env.authority,
        };
        let vote = replica_on_write(&mut w.rs, &ctx, &m, env.local);
        if vote.is_some() {
            w.blocks.entry(m.block.digest()).or_insert_with(|| m.block.clone());
        }
        let leader = w.schedule.leader_of(m.round);
        if w.rs.round != before {
            self.after_round_change(env);
        }
        if let Some(v) = vote {
            self.send(env, leader, ProtocolMessage::AckWrite(v));
        }
    }

    fn on_decide(&mut self, env: &mut Env<'_>, d: Decide) {
        let me = self.id;
        let w = self.work.as_mut().expect("checked by caller");
        if w.decided {
            return;
        }
        let known = w.blocks.get(&d.digest).cloned();
        let ctx = HeightCtx {
            me,
            height: w.height,
            start_round: w.start_round,
            schedule: &w.schedule,
            authority: env.authority,
        };
        match replica_on_decide(&mut w.rs, &ctx, &d, known.as_ref()) {
            DecideOutcome::Decided(block) => self.commit(env, block, d),
            DecideOutcome::NeedBlock(digest) => {
                let fresh = w.requested.insert(digest);
                let height = w.height;
                w.pending_decide = Some(d.clone());
                if fresh {
                    let mut to: Vec<ActorId> = d.write_acks.iter().map(|a| a.signer).collect();
                    to.push(d.auth.signer);
                    to.sort();
                    to.dedup();
                    to.retain(|a| *a != me);
                    self.send_many(env, &to, ProtocolMessage::BlockRequest { height, digest });
                }
            }
            DecideOutcome::Ignored => {}
        }
    }

    fn on_timeout(&mut self, env: &mut Env<'_>, t: Timeout) {
        if !self.is_producer() {
            return;
        }
        let (me, cfg) = (self.id, self.cfg);
        let w = self.work.as_mut().expect("checked by caller");
        if w.decided || t.round != w.rs.round {
            return;
        }
        let evidence = t.observed.as_ref().and_then(|obs| {
            let (_, mine) = w.agree_first.get(&t.round)?;
            (obs.stmt.round == t.round && obs.stmt.subject != mine.stmt.subject).then(|| (mine.clone(), obs.clone()))
        });
        if let Some((x, y)) = evidence {
            self.note_equivocation(env, x, y);
        }
        let w = self.work.as_mut().expect("checked by caller");
        let Some((_, k)) = freeze_target(&w.schedule, me, t.round) else {
            return;
        };
        if w.frozen_by_me.contains(&t.round) {
            return;
        }
        let signer = t.auth.signer;
        if !w.schedule.contains(signer) || !env.authority.verify_statement(&t.auth, &t.statement()) {
            return;
        }
        let elapsed = env.local - w.rs.timer_start;
        let t_eff = cfg.timeout + (k - 1) as f64 * cfg.escalation;
        let threshold = t_eff / cfg.clock_ratio;
        w.timeouts.entry(signer).or_insert(t);
        let e = w.timeout_elapsed.entry(signer).or_insert(elapsed);
        *e = e.max(elapsed);
        env.events.push(NodeEvent::TimeoutArrived {
            height: w.height,
            round: w.rs.round,
            from: signer,
            elapsed,
            threshold,
            counted: elapsed >= threshold,
        });
        let ctx = w.ctx(me, env.authority);
        let Some(fz) = next_leader_on_timeout(&ctx, w.rs.round, &w.timeouts, &w.timeout_elapsed, t_eff, cfg.clock_ratio)
        else {
            return;
        };
        w.frozen_by_me.insert(fz.frozen);
        w.my_freeze = Some(fz.clone());
        w.freeze_acks.clear();
        env.events.push(NodeEvent::FreezeFormed {
            height: fz.height,
            round: fz.round,
            frozen: fz.frozen,
            signers: fz.timeouts.iter().map(|a| a.signer).collect(),
        });
        let to = w.schedule.producers().to_vec();
        self.send_many(env, &to, ProtocolMessage::Freeze(fz));
    }

    fn on_freeze(&mut self, env: &mut Env<'_>, fz: Freeze) {
        if !self.is_producer() {
            return;
        }
        let me = self.id;
        let w = self.work.as_mut().expect("checked by caller");
        if w.decided {
            return;
        }
        let before = w.rs.round;
        let ctx = HeightCtx {
            me,
            height: w.height,
            start_round: w.start_round,
            schedule: &w.schedule,
            authority: env.authority,
        };
        let ack = replica_on_freeze(&mut w.rs, &ctx, &fz, env.local);
        let leader = w.schedule.leader_of(fz.round);
        if w.rs.round != before {
            self.after_round_change(env);
        }
        if let Some(a) = ack {
            self.send(env, leader, ProtocolMessage::FreezeAck(a));
        }
    }

    fn on_freeze_ack(&mut self, env: &mut Env<'_>, a: FreezeAck) {
        let me = self.id;
        let w = self.work.as_mut().expect("checked by caller");
        if w.decided || a.round != w.rs.round || w.proposals.contains_key(&a.round) {
            return;
        }
        let Some(fz) = w.my_freeze.clone().filter(|f| f.round == a.round) else {
            return;
        };
        let signer = a.auth.signer;
        if a.height != w.height || !w.schedule.contains(signer) || !env.authority.verify_statement(&a.auth, &a.statement())
        {
            return;
        }
        w.freeze_acks.entry(signer).or_insert(a);
        let ctx = HeightCtx {
            me,
            height: w.height,
            start_round: w.start_round,
            schedule: &w.schedule,
            authority: env.authority,
        };
        loop {
            if w.freeze_acks.len() < w.schedule.quorum() {
                return;
            }
            let cert = FreezeCert {
                round_frozen: fz.frozen,
                timeouts: fz.timeouts.clone(),
                freeze_acks: w.freeze_acks.values().cloned().collect(),
            };
            match validate_freeze_cert(&ctx, &cert, fz.round) {
                Ok(_) => {
                    self.propose(env, Some(cert));
                    return;
                }
                Err(FreezeError::CarriedWrite { signer, .. }) => {
                    w.freeze_acks.remove(&signer);
                }
                Err(_) => return,
            }
        }
    }

    fn note_equivocation(&mut self, env: &mut Env<'_>, a: SignedStatement, b: SignedStatement) {
        let (first, second) = if a.stmt.subject <= b.stmt.subject { (a, b) } else { (b, a) };
        let culprit = first.auth.signer;
        let (height, round) = (first.stmt.height, first.stmt.round);
        let tx = Transaction::exempt(TxBody::Evidence { first, second });
        if self.evidence.contains_key(&tx.id) {
            return;
        }
        if self.state.check_tx(&tx, self.state.next_height(), env.authority).is_ok() {
            env.events.push(NodeEvent::EvidenceFound { culprit, height, round });
            self.evidence.insert(tx.id, tx);
        }
    }

    // ---- proposing ------------------------------------------------------

    fn build_block(&mut self, env: &mut Env<'_>, round: u64) -> Block {
        let me = self.id;
        let limit = self.state.params.block_size_limit;
        let mut scratch = self.state.scratch(me);
        let mut txs = Vec::new();
        for p in adjudicate_suspects(me, &self.suspects, &self.state, env.authority) {
            if scratch.push(&p, env.authority).is_ok() {
                txs.push(p);
            }
        }
        for e in self.evidence.values() {
            if scratch.push(e, env.authority).is_ok() {
                txs.push(e.clone());
            }
        }
        let mut pending: Vec<&MemEntry> = self.mempool.values().collect();
        pending.sort_by_key(|e| e.seq);
        let mut bytes = 0u64;
        let mut taken = HashSet::new();
        loop {
            let mut added = false;
            for e in &pending {
                if taken.contains(&e.tx.id) {
                    continue;
                }
                let exempt = e.tx.kind().is_size_exempt();
                let size = e.tx.size_bytes as u64;
                if !exempt && bytes + size > limit {
                    continue;
                }
                if scratch.push(&e.tx, env.authority).is_ok() {
                    taken.insert(e.tx.id);
                    txs.push(e.tx.clone());
                    if !exempt {
                        bytes += size;
                    }
                    added = true;
                }
            }
            if !added {
                break;
            }
        }
        let w = self.work.as_ref().expect("leader has work");
        let mut cx = HookCtx {
            me,
            now: env.now,
            gst: self.cfg.gst,
            delta: self.cfg.delta,
            height: w.height,
            round,
            schedule: &w.schedule,
            chain: &self.state,
            authority: env.authority,
            rng: &mut self.rng,
        };
        let txs = self.behavior.select_txs(&mut cx, txs);
        Block {
            height: w.height,
            round,
            proposer: me,
            parent_hash: self.state.tip,
            txs,
            cert: Default::default(),
        }
    }

    fn propose(&mut self, env: &mut Env<'_>, freeze: Option<FreezeCert>) {
        let round = match self.work.as_ref() {
            Some(w) if !w.decided && !w.proposals.contains_key(&w.rs.round) => w.rs.round,
            _ => return,
        };
        let block = self.build_block(env, round);
        let me = self.id;
        let w = self.work.as_mut().expect("checked");
        let ctx = w.ctx(me, env.authority);
        let Ok(agree) = leader_propose(&w.rs, &ctx, block, freeze) else {
            return;
        };
        w.proposals.insert(round, agree.block.clone());
        env.events.push(NodeEvent::Proposed {
            height: w.height,
            round,
            digest: agree.block.digest(),
        });
        let to = env.nodes.to_vec();
        self.send_many(env, &to, ProtocolMessage::Agree(agree));
    }

    // ---- deciding -------------------------------------------------------

    fn commit(&mut self, env: &mut Env<'_>, block: Block, decide: Decide) {
        let me = self.id;
        let w = self.work.as_mut().expect("checked by caller");
        w.decided = true;
        let watching = w.schedule.contains(me) && self.behavior.signs_suspects();
        let seen = w
            .agree_first
            .get(&block.round)
            .filter(|(_, s)| s.stmt.subject == block.digest())
            .map(|(t, _)| *t);
        let mut suspects = Vec::new();
        if let (true, Some(seen)) = (watching, seen) {
            let lead = self.cfg.lead_time;
            let limit = self.state.params.block_size_limit;
            let used = block.transfer_bytes();
            let mut after = None;
            for e in self.mempool.values() {
                if seen - e.held_since < lead || block.contains_tx(&e.tx.id) || block.proposer == me {
                    continue;
                }
                let scratch = after.get_or_insert_with(|| {
                    let mut s = self.state.scratch(block.proposer);
                    for tx in &block.txs {
                        let _ = s.push(tx, env.authority);
                    }
                    s
                });
                let fits = e.tx.kind().is_size_exempt() || used + e.tx.size_bytes as u64 <= limit;
                let watch = Watch {
                    held_since: e.held_since,
                    proposal_seen: seen,
                    lead_time: lead,
                    still_includable: fits && scratch.check(&e.tx, env.authority).is_ok(),
                };
                if let Some(s) = check_inclusion_and_suspect(me, block.proposer, &e.tx.id, &block, watch, env.authority)
                {
                    suspects.push(s);
                }
            }
        }
        env.schedules.push(w.schedule.clone());
        self.invalid_applied += self.state.apply_block(&block, env.authority).len();
        self.chain.push(block.clone());
        if self.state.height == self.cfg.heights {
            self.target_state = Some(self.state.clone());
        }
        env.events.push(NodeEvent::Decided {
            height: block.height,
            round: block.round,
            cert_round: decide.round,
            digest: block.digest(),
        });
        let next = self.state.next_height();
        let state = &self.state;
        self.mempool.retain(|id, e| {
            !state.contains_tx(id)
                && !matches!(
                    state.check_tx(&e.tx, next, env.authority),
                    Err(TxError::AlreadyMember(_) | TxError::Banned(_) | TxError::Sybil)
                )
        });
        self.evidence.retain(|_, e| state.check_tx(e, next, env.authority).is_ok());
        for s in &suspects {
            self.suspects.add(s);
        }
        self.suspects.prune(&self.state);
        let others: Vec<ActorId> = env.nodes.iter().copied().filter(|a| *a != me).collect();
        for s in suspects {
            env.events.push(NodeEvent::SuspectSent {
                accused: s.accused,
                txid: s.txid,
                height: s.height,
            });
            self.send_many(env, &others, ProtocolMessage::Suspect(s));
        }
        if self.forwarded_decides.insert(block.height) {
            self.send_many(env, &others, ProtocolMessage::Decide(decide));
        }
        self.step(env, Step::Decided(&block));
        self.enter_height(env);
    }
}
