//! Deterministic discrete-event simulator: partially synchronous network,
//! drifting clocks and one [`node::Node`] per actor.

mod node;
mod trace;

pub use trace::{NodeEvent, TraceEvent};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::consensus::{validate_chain, LeaderSchedule, ProtocolMessage};
use crate::crypto::{Authority, Digest, SignatureLedger, Statement, Tag};
use crate::encoding::Encode;
use crate::membership::{ChainState, Incentives, Income};
use crate::strategies::{BuildCtx, StrategyClass, StrategySpec};
use crate::types::{ActorId, Block, Coins, DeviceToken, Transaction, TxBody, TxKind};

use node::{Env, Node, NodeCfg, TimerKind};

pub use crate::strategies::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayMode {
    /// Pre-GST delays drawn uniformly from `[min_delay, pre_gst_max]`.
    Random,
    /// Pre-GST messages are all held back and released just after GST.
    AdversaryScheduled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayPolicy {
    pub mode: DelayMode,
    pub min_delay: SimTime,
    /// Upper end of pre-GST random delays. Defaults to `4 * timeout`.
    pub pre_gst_max: Option<SimTime>,
}

impl Default for DelayPolicy {
    fn default() -> Self {
        DelayPolicy {
            mode: DelayMode::Random,
            min_delay: 1,
            pre_gst_max: None,
        }
    }
}

/// Network, clock and run-length parameters. Times are simulator ticks
/// unless noted as local.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Genesis producers.
    pub n: usize,
    pub f: usize,
    pub seed: u64,
    pub gst: SimTime,
    /// Post-GST delivery bound.
    pub delta: SimTime,
    /// Nominal timeout T, in local time.
    pub timeout: SimTime,
    /// Bound r on the ratio of any two clock rates.
    pub clock_ratio: f64,
    /// Link-level resend period. Defaults to `timeout`.
    pub resend_interval: Option<SimTime>,
    /// Defaults to `gst + 40 * timeout * heights`.
    pub max_sim_time: Option<SimTime>,
    pub heights: u64,
    /// Local time a leader waits after entering a height before proposing.
    pub block_time: f64,
    pub delay: DelayPolicy,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 4,
            f: 1,
            seed: 0,
            gst: 0,
            delta: 100,
            timeout: 1000,
            clock_ratio: 1.0,
            resend_interval: None,
            max_sim_time: None,
            heights: 20,
            block_time: 0.0,
            delay: DelayPolicy::default(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("n > 3f required (n = {n}, f = {f})")]
    FaultBound { n: usize, f: usize },
    #[error("timeout must exceed 2 * delta (timeout = {timeout}, delta = {delta})")]
    TimeoutTooShort { timeout: SimTime, delta: SimTime },
    #[error("clock_ratio must be a number >= 1, got {0}")]
    ClockRatio(f64),
    #[error("block_time {block_time} leaves no room for a round: need block_time * sqrt(r) + 4 * delta < timeout / sqrt(r)")]
    BlockTime { block_time: f64 },
    #[error("{0}")]
    Invalid(String),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n <= 3 * self.f {
            return Err(ConfigError::FaultBound { n: self.n, f: self.f });
        }
        if self.timeout <= 2 * self.delta {
            return Err(ConfigError::TimeoutTooShort {
                timeout: self.timeout,
                delta: self.delta,
            });
        }
        if !(self.clock_ratio.is_finite() && self.clock_ratio >= 1.0) {
            return Err(ConfigError::ClockRatio(self.clock_ratio));
        }
        let s = self.clock_ratio.sqrt();
        if self.block_time < 0.0
            || !self.block_time.is_finite()
            || (self.block_time > 0.0 && self.block_time * s + 4.0 * self.delta as f64 >= self.timeout as f64 / s)
        {
            return Err(ConfigError::BlockTime {
                block_time: self.block_time,
            });
        }
        if self.delay.min_delay > self.delta {
            return Err(ConfigError::Invalid("delay.min_delay must not exceed delta".into()));
        }
        if self.resend_interval == Some(0) {
            return Err(ConfigError::Invalid("resend_interval must be positive".into()));
        }
        if self.heights == 0 {
            return Err(ConfigError::Invalid("heights must be positive".into()));
        }
        Ok(())
    }

    pub fn resend(&self) -> SimTime {
        self.resend_interval.unwrap_or(self.timeout)
    }

    pub fn end_time(&self) -> SimTime {
        self.max_sim_time
            .unwrap_or(self.gst + 40 * self.timeout * self.heights)
    }

    /// Local time between escalations of a TIMEOUT to further leaders:
    /// `T * (2r + 1) + 2 * delta * sqrt(r)`.
    pub fn escalation(&self) -> f64 {
        let r = self.clock_ratio;
        self.timeout as f64 * (2.0 * r + 1.0) + 2.0 * self.delta as f64 * r.sqrt()
    }
}

/// Affine local clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorClock {
    pub rate: f64,
    pub offset: f64,
}

impl ActorClock {
    /// Rate uniform in `[1/sqrt(r), sqrt(r)]`, offset uniform in `[0, max_offset)`.
    pub fn sample(rng: &mut impl Rng, clock_ratio: f64, max_offset: f64) -> Self {
        let s = clock_ratio.sqrt();
        let rate = if s > 1.0 { rng.gen_range(1.0 / s..=s) } else { 1.0 };
        let offset = if max_offset > 0.0 { rng.gen_range(0.0..max_offset) } else { 0.0 };
        ActorClock { rate, offset }
    }

    pub fn local_time(&self, sim_time: f64) -> f64 {
        self.rate * sim_time + self.offset
    }

    /// Simulated ticks until `local` more local time has passed.
    pub fn sim_delay(&self, local: f64) -> SimTime {
        (local.max(0.0) / self.rate).ceil() as SimTime
    }
}

/// Simulator time in ticks. Wraps `local_time` for plain numbers.
pub fn local_time(clock: &ActorClock, sim_time: f64) -> f64 {
    clock.local_time(sim_time)
}

#[derive(Debug, Clone)]
enum Event {
    Deliver {
        from: ActorId,
        to: ActorId,
        msg: ProtocolMessage,
    },
    Timer {
        actor: ActorId,
        kind: TimerKind,
        token: u64,
    },
    /// A held message leaves its sender.
    Release { from: ActorId, to: ActorId, msg: ProtocolMessage },
    ClientTransfer { client: usize },
    Join { index: usize },
}

/// Pending events, popped in `(at, seq)` order.
#[derive(Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    events: BTreeMap<u64, Event>,
    seq: u64,
}

impl EventQueue {
    fn push(&mut self, at: SimTime, ev: Event) {
        self.seq += 1;
        self.heap.push(Reverse((at, self.seq)));
        self.events.insert(self.seq, ev);
    }

    fn pop(&mut self) -> Option<(SimTime, Event)> {
        let Reverse((at, seq)) = self.heap.pop()?;
        let ev = self.events.remove(&seq).expect("queued event");
        Some((at, ev))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// A producer joining during the run through one or more relays.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JoinSpec {
    /// Time the joiner hands its request to the relays.
    pub at: SimTime,
    /// Adds a seed-drawn offset in `[0, jitter]` to `at`.
    pub jitter: SimTime,
    /// Actors the request is handed to. Defaults to the first `f + 1` producers.
    pub relays: Vec<ActorId>,
    pub deposit: Option<Coins>,
}

/// Transaction load: clients submitting transfers and scheduled joins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workload {
    /// Accounts without a node that submit transfers.
    pub clients: usize,
    /// Ticks between two transfers of one client; 0 disables transfers.
    pub transfer_interval: SimTime,
    pub transfer_amount: Coins,
    pub transfer_size: u32,
    pub joins: Vec<JoinSpec>,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            clients: 2,
            transfer_interval: 1000,
            transfer_amount: 1,
            transfer_size: 100,
            joins: Vec::new(),
        }
    }
}

/// Everything a run depends on. Actors without an entry in `strategies`
/// are compliant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimSetup {
    pub config: SimConfig,
    pub incentives: Incentives,
    pub workload: Workload,
    pub strategies: BTreeMap<ActorId, StrategySpec>,
    /// Keep the per-node event trace in the report.
    pub trace: bool,
}

impl SimSetup {
    pub fn producers(&self) -> Vec<ActorId> {
        (0..self.config.n as u32).map(ActorId).collect()
    }

    pub fn joiners(&self) -> Vec<ActorId> {
        let n = self.config.n as u32;
        (n..n + self.workload.joins.len() as u32).map(ActorId).collect()
    }

    pub fn clients(&self) -> Vec<ActorId> {
        let base = (self.config.n + self.workload.joins.len()) as u32;
        (base..base + self.workload.clients as u32).map(ActorId).collect()
    }

    /// Every actor: producers, then joiners, then clients.
    pub fn actors(&self) -> Vec<ActorId> {
        let total = (self.config.n + self.workload.joins.len() + self.workload.clients) as u32;
        (0..total).map(ActorId).collect()
    }

    pub fn strategy_of(&self, a: ActorId) -> StrategySpec {
        self.strategies.get(&a).cloned().unwrap_or(StrategySpec::Compliant)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.config.validate()?;
        self.incentives.validate().map_err(ConfigError::Invalid)?;
        let nodes = self.config.n + self.workload.joins.len();
        for (a, s) in &self.strategies {
            if a.0 as usize >= nodes {
                return Err(ConfigError::Invalid(format!("strategy assigned to {a}, which runs no node")));
            }
            s.validate().map_err(ConfigError::Invalid)?;
        }
        for (i, j) in self.workload.joins.iter().enumerate() {
            if let Some(r) = j.relays.iter().find(|r| r.0 as usize >= nodes) {
                return Err(ConfigError::Invalid(format!("workload.joins[{i}]: relay {r} runs no node")));
            }
        }
        if self.workload.transfer_interval > 0 && self.workload.transfer_size == 0 {
            return Err(ConfigError::Invalid("workload.transfer_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorRole {
    Producer,
    Joiner,
    Client,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecideRecord {
    pub height: u64,
    pub digest: Digest,
    /// Round the block was proposed in.
    pub round: u64,
    /// Round of the certificate that decided it.
    pub cert_round: u64,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorReport {
    pub id: ActorId,
    pub role: ActorRole,
    pub strategy: StrategySpec,
    pub class: StrategyClass,
    pub clock: ActorClock,
    pub crashed_at: Option<SimTime>,
    pub decided: Vec<DecideRecord>,
    /// Income at the target height of the canonical chain.
    pub income: Income,
    pub balance: Coins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmittedTx {
    pub txid: Digest,
    pub kind: TxKind,
    /// Paying account for transfers, joining actor for joins.
    pub sender: ActorId,
    pub at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Agreement,
    Validity,
    ChainValidation,
    DeliveryBound,
    ClockBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub actor: Option<ActorId>,
    pub height: Option<u64>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub messages_sent: BTreeMap<String, u64>,
    pub deliveries: u64,
    /// Deliveries skipped because the receiver had crashed.
    pub dropped: u64,
    pub events: u64,
    pub timeouts_sent: u64,
    pub freezes_formed: u64,
    pub max_round: u64,
    pub signatures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub config: SimConfig,
    pub incentives: Incentives,
    /// All non-crashed, non-Byzantine nodes reached the target height.
    pub completed: bool,
    pub end_time: SimTime,
    pub heights: u64,
    pub gst: SimTime,
    pub actors: Vec<ActorReport>,
    /// Digests of the agreed chain, genesis first, up to the target height.
    pub canonical: Vec<Digest>,
    /// Producer set of each canonical height, height 1 first.
    pub producers: Vec<Vec<ActorId>>,
    pub stats: SimStats,
    pub violations: Vec<Violation>,
    pub submitted: Vec<SubmittedTx>,
    /// Set only when the setup asked for a trace.
    #[serde(skip)]
    pub events: Vec<TraceEvent>,
    /// Blocks of the canonical chain.
    #[serde(skip)]
    pub chain: Vec<Block>,
    /// Chain state after the target height on the canonical chain.
    #[serde(skip)]
    pub final_state: Option<ChainState>,
    /// Decided chain of every node.
    #[serde(skip)]
    pub chains: BTreeMap<ActorId, Vec<Block>>,
}

impl SimReport {
    pub fn actor(&self, a: ActorId) -> Option<&ActorReport> {
        self.actors.iter().find(|r| r.id == a)
    }

    pub fn producers_at(&self, height: u64) -> &[ActorId] {
        height
            .checked_sub(1)
            .and_then(|i| self.producers.get(i as usize))
            .map_or(&[], |p| p.as_slice())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Content key of a message: equal messages get equal delays in paired runs.
fn message_key(msg: &ProtocolMessage) -> Vec<u8> {
    let mut out = msg.kind().as_bytes().to_vec();
    let auth = match msg {
        ProtocolMessage::Agree(m) => Some(&m.auth),
        ProtocolMessage::AckAgree(v) | ProtocolMessage::AckWrite(v) => Some(&v.auth),
        ProtocolMessage::Write(m) => Some(&m.auth),
        ProtocolMessage::Decide(m) => Some(&m.auth),
        ProtocolMessage::Timeout(m) => Some(&m.auth),
        ProtocolMessage::Freeze(m) => Some(&m.auth),
        ProtocolMessage::FreezeAck(m) => Some(&m.auth),
        ProtocolMessage::Suspect(m) => Some(&m.auth),
        ProtocolMessage::Tx(t) | ProtocolMessage::JoinRequest(t) => {
            t.id.encode_to(&mut out);
            None
        }
        ProtocolMessage::BlockRequest { height, digest } => {
            height.encode_to(&mut out);
            digest.encode_to(&mut out);
            None
        }
        ProtocolMessage::BlockResponse(b) => {
            b.digest().encode_to(&mut out);
            None
        }
    };
    if let Some(a) = auth {
        a.encode_to(&mut out);
    }
    out
}

struct Network {
    seed: u64,
    gst: SimTime,
    delta: SimTime,
    resend: SimTime,
    policy: DelayPolicy,
    pre_max: SimTime,
}

impl Network {
    fn draw(&self, key: &[u8], from: ActorId, to: ActorId, sent: SimTime, attempt: u64, (lo, hi): (SimTime, SimTime)) -> SimTime {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(from.0.to_le_bytes());
        h.update(to.0.to_le_bytes());
        h.update(key);
        h.update(sent.to_le_bytes());
        h.update(attempt.to_le_bytes());
        let d = h.finalize();
        let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        lo + x % (hi - lo + 1)
    }

    /// Delivery time of a message sent at `sent`: the earliest arrival over
    /// the original send and its resends every `resend` ticks.
    fn delivery(&self, key: &[u8], from: ActorId, to: ActorId, sent: SimTime) -> SimTime {
        if from == to {
            return sent;
        }
        let lo = self.policy.min_delay;
        let mut best = SimTime::MAX;
        let mut attempt = 0u64;
        loop {
            let t = sent + attempt * self.resend;
            if t >= best {
                break;
            }
            let at = if t >= self.gst {
                t + self.draw(key, from, to, sent, attempt, (lo, self.delta))
            } else {
                match self.policy.mode {
                    DelayMode::Random => t + self.draw(key, from, to, sent, attempt, (lo, self.pre_max.max(lo))),
                    DelayMode::AdversaryScheduled => self.gst + self.draw(key, from, to, sent, attempt, (lo, self.delta)),
                }
            };
            best = best.min(at);
            attempt += 1;
        }
        best
    }
}

struct Sim<'a> {
    setup: &'a SimSetup,
    ledger: SignatureLedger,
    queue: EventQueue,
    nodes: BTreeMap<ActorId, Node>,
    clocks: BTreeMap<ActorId, ActorClock>,
    node_ids: Vec<ActorId>,
    crash: BTreeMap<ActorId, SimTime>,
    net: Network,
    stats: SimStats,
    events: Vec<TraceEvent>,
    decided: BTreeMap<ActorId, Vec<DecideRecord>>,
    schedules: BTreeMap<ActorId, Vec<LeaderSchedule>>,
    submitted: Vec<SubmittedTx>,
    joins: Vec<Transaction>,
    client_rng: ChaCha8Rng,
    client_nonce: Vec<u64>,
    violations: Vec<Violation>,
}

impl Sim<'_> {
    fn alive(&self, a: ActorId, now: SimTime) -> bool {
        self.crash.get(&a).is_none_or(|c| now < *c)
    }

    fn send(&mut self, now: SimTime, from: ActorId, to: ActorId, msg: ProtocolMessage) {
        *self.stats.messages_sent.entry(msg.kind().to_string()).or_default() += 1;
        let at = self.net.delivery(&message_key(&msg), from, to, now);
        if now >= self.net.gst && at > now + self.net.delta {
            self.violations.push(Violation {
                kind: ViolationKind::DeliveryBound,
                actor: Some(from),
                height: msg.height(),
                detail: format!("sent at {now}, delivered at {at}"),
            });
        }
        self.queue.push(at, Event::Deliver { from, to, msg });
    }

    fn with_node(&mut self, now: SimTime, a: ActorId, f: impl FnOnce(&mut Node, &mut Env<'_>)) {
        if !self.alive(a, now) {
            return;
        }
        let clock = self.clocks[&a];
        let Some(mut node) = self.nodes.remove(&a) else {
            return;
        };
        let mut env = Env {
            now,
            local: clock.local_time(now as f64),
            authority: &self.ledger,
            nodes: &self.node_ids,
            out: Vec::new(),
            timers: Vec::new(),
            events: Vec::new(),
            schedules: Vec::new(),
        };
        f(&mut node, &mut env);
        let Env {
            out,
            timers,
            events,
            schedules,
            local,
            ..
        } = env;
        for (delay, kind, token) in timers {
            self.queue.push(now + clock.sim_delay(delay).max(1), Event::Timer { actor: a, kind, token });
        }
        self.schedules.entry(a).or_default().extend(schedules);
        for ev in events {
            match &ev {
                NodeEvent::TimeoutSent { .. } => self.stats.timeouts_sent += 1,
                NodeEvent::FreezeFormed { .. } => self.stats.freezes_formed += 1,
                NodeEvent::RoundEntered { round, .. } | NodeEvent::HeightStarted { round, .. } => {
                    self.stats.max_round = self.stats.max_round.max(*round)
                }
                NodeEvent::Decided {
                    height,
                    round,
                    cert_round,
                    digest,
                } => self.decided.entry(a).or_default().push(DecideRecord {
                    height: *height,
                    digest: *digest,
                    round: *round,
                    cert_round: *cert_round,
                    at: now,
                }),
                _ => {}
            }
            if self.setup.trace {
                self.events.push(TraceEvent {
                    t: now,
                    actor: a,
                    local,
                    event: ev,
                });
            }
        }
        for o in out {
            if o.hold > 0 {
                self.queue.push(
                    now + o.hold,
                    Event::Release {
                        from: a,
                        to: o.to,
                        msg: o.msg,
                    },
                );
            } else {
                self.send(now, a, o.to, o.msg);
            }
        }
        self.nodes.insert(a, node);
    }

    fn submit(&mut self, now: SimTime, from: ActorId, msg: ProtocolMessage, to: &[ActorId]) {
        for &t in to {
            self.send(now, from, t, msg.clone());
        }
    }

    fn client_transfer(&mut self, now: SimTime, client: usize) {
        let w = &self.setup.workload;
        let accounts = self.setup.actors();
        let me = self.setup.clients()[client];
        let to = loop {
            let t = accounts[self.client_rng.gen_range(0..accounts.len())];
            if t != me || accounts.len() == 1 {
                break t;
            }
        };
        self.client_nonce[client] += 1;
        let tx = Transaction::new(
            TxBody::Transfer {
                from: me,
                to,
                amount: w.transfer_amount,
                nonce: self.client_nonce[client],
            },
            w.transfer_size,
        );
        self.submitted.push(SubmittedTx {
            txid: tx.id,
            kind: TxKind::Transfer,
            sender: me,
            at: now,
        });
        let nodes = self.node_ids.clone();
        self.submit(now, me, ProtocolMessage::Tx(tx), &nodes);
        self.queue
            .push(now + w.transfer_interval, Event::ClientTransfer { client });
    }

    fn all_done(&self, now: SimTime) -> bool {
        self.nodes.iter().all(|(a, node)| {
            !self.alive(*a, now)
                || self.setup.strategy_of(*a).class() == StrategyClass::Byzantine
                || node.decided_height() >= self.setup.config.heights
        })
    }
}

/// Runs one simulation to completion or `max_sim_time`.
pub fn run(setup: &SimSetup) -> Result<SimReport, ConfigError> {
    setup.validate()?;
    let cfg = &setup.config;
    let producers = setup.producers();
    let joiners = setup.joiners();
    let actors = setup.actors();
    let mut node_ids = producers.clone();
    node_ids.extend(joiners.iter().copied());

    let mut clock_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0c10c);
    let clocks: BTreeMap<ActorId, ActorClock> = actors
        .iter()
        .map(|a| (*a, ActorClock::sample(&mut clock_rng, cfg.clock_ratio, cfg.timeout as f64)))
        .collect();

    let ledger = SignatureLedger::new(actors.iter().copied());
    let tokens: Vec<(ActorId, DeviceToken)> = producers.iter().map(|a| (*a, DeviceToken::for_actor(*a))).collect();
    let genesis = ChainState::genesis(setup.incentives.clone(), cfg.f, &tokens, &actors);
    let lead_time = setup.incentives.lead_time_or(cfg.delta as f64, cfg.clock_ratio);
    let ncfg = NodeCfg {
        timeout: cfg.timeout as f64,
        clock_ratio: cfg.clock_ratio,
        escalation: cfg.escalation(),
        lead_time,
        block_time: cfg.block_time,
        heights: cfg.heights,
        gst: cfg.gst,
        delta: cfg.delta,
    };
    let build = BuildCtx {
        seed: cfg.seed,
        gst: cfg.gst,
        timeout: cfg.timeout,
    };
    let mut nodes = BTreeMap::new();
    let mut crash = BTreeMap::new();
    for &a in &node_ids {
        let behavior = setup.strategy_of(a).build(a, build);
        if let Some(c) = behavior.crash_at() {
            crash.insert(a, c);
        }
        let seed = cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ u64::from(a.0);
        nodes.insert(a, Node::new(a, ncfg, behavior, seed, genesis.clone()));
    }

    let mut sim = Sim {
        setup,
        ledger,
        queue: EventQueue::default(),
        nodes,
        clocks,
        node_ids: node_ids.clone(),
        crash,
        net: Network {
            seed: cfg.seed,
            gst: cfg.gst,
            delta: cfg.delta,
            resend: cfg.resend(),
            policy: cfg.delay.clone(),
            pre_max: cfg.delay.pre_gst_max.unwrap_or(4 * cfg.timeout),
        },
        stats: SimStats::default(),
        events: Vec::new(),
        decided: BTreeMap::new(),
        schedules: BTreeMap::new(),
        submitted: Vec::new(),
        joins: Vec::new(),
        client_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc11e),
        client_nonce: vec![0; setup.workload.clients],
        violations: Vec::new(),
    };

    let mut join_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x701e);
    for (i, (j, &joiner)) in setup.workload.joins.iter().zip(&joiners).enumerate() {
        let deposit = j.deposit.unwrap_or(setup.incentives.deposit);
        sim.joins.push(Transaction::exempt(TxBody::Join {
            joiner,
            device_token: DeviceToken::for_actor(joiner),
            deposit,
        }));
        let at = j.at + if j.jitter > 0 { join_rng.gen_range(0..=j.jitter) } else { 0 };
        sim.queue.push(at, Event::Join { index: i });
    }
    if setup.workload.transfer_interval > 0 {
        for c in 0..setup.workload.clients {
            let first = sim.client_rng.gen_range(0..setup.workload.transfer_interval);
            sim.queue.push(first, Event::ClientTransfer { client: c });
        }
    }
    for &a in &node_ids {
        sim.with_node(0, a, |n, env| n.start(env));
    }

    let end = cfg.end_time();
    let mut now = 0;
    while let Some((at, ev)) = sim.queue.pop() {
        if at > end {
            break;
        }
        now = at;
        sim.stats.events += 1;
        match ev {
            Event::Deliver { from, to, msg, .. } => {
                if !sim.alive(to, now) {
                    sim.stats.dropped += 1;
                    continue;
                }
                sim.stats.deliveries += 1;
                sim.with_node(now, to, |n, env| n.on_message(env, from, msg));
            }
            Event::Timer { actor, kind, token } => sim.with_node(now, actor, |n, env| n.on_timer(env, kind, token)),
            Event::Release { from, to, msg } => {
                if sim.alive(from, now) {
                    sim.send(now, from, to, msg);
                }
            }
            Event::ClientTransfer { client } => sim.client_transfer(now, client),
            Event::Join { index } => {
                let tx = sim.joins[index].clone();
                let joiner = joiners[index];
                sim.submitted.push(SubmittedTx {
                    txid: tx.id,
                    kind: TxKind::Join,
                    sender: joiner,
                    at: now,
                });
                let relays = match &setup.workload.joins[index].relays {
                    r if r.is_empty() => producers.iter().copied().take(cfg.f + 1).collect(),
                    r => r.clone(),
                };
                sim.submit(now, joiner, ProtocolMessage::JoinRequest(tx), &relays);
            }
        }
        if sim.all_done(now) {
            break;
        }
    }
    Ok(finish(sim, now))
}

fn finish(mut sim: Sim<'_>, now: SimTime) -> SimReport {
    let setup = sim.setup;
    let cfg = &setup.config;
    let heights = cfg.heights;
    let honest = |a: ActorId| setup.strategy_of(a).class() != StrategyClass::Byzantine;

    // Agreement: every height decided by two non-Byzantine nodes matches.
    let mut by_height: BTreeMap<u64, (ActorId, Digest)> = BTreeMap::new();
    for (a, node) in &sim.nodes {
        if !honest(*a) {
            continue;
        }
        for b in node.chain.iter().skip(1) {
            match by_height.get(&b.height) {
                Some((other, d)) if *d != b.digest() => sim.violations.push(Violation {
                    kind: ViolationKind::Agreement,
                    actor: Some(*a),
                    height: Some(b.height),
                    detail: format!("{a} decided {} but {other} decided {d}", b.digest()),
                }),
                Some(_) => {}
                None => {
                    by_height.insert(b.height, (*a, b.digest()));
                }
            }
        }
    }

    // Validity and chain checks at every non-Byzantine node.
    for (a, node) in &sim.nodes {
        if !honest(*a) {
            continue;
        }
        let schedules = sim.schedules.get(a).cloned().unwrap_or_default();
        for b in node.chain.iter().skip(1) {
            let sched = schedules.get(b.height as usize - 1);
            let stmt = Statement::new(Tag::Agree, b.height, b.round, b.digest());
            let leader_ok = sched.is_some_and(|s| s.leader_of(b.round) == b.proposer);
            if !leader_ok || !sim.ledger.was_signed(b.proposer, &stmt) {
                sim.violations.push(Violation {
                    kind: ViolationKind::Validity,
                    actor: Some(*a),
                    height: Some(b.height),
                    detail: format!("no AGREE from scheduled leader {} for round {}", b.proposer, b.round),
                });
            }
        }
        if node.invalid_applied > 0 {
            sim.violations.push(Violation {
                kind: ViolationKind::Validity,
                actor: Some(*a),
                height: None,
                detail: format!("{} invalid transactions in decided blocks", node.invalid_applied),
            });
        }
        let v = validate_chain(
            &node.chain,
            &|h| schedules.get(h as usize - 1).cloned(),
            &sim.ledger as &dyn Authority,
        );
        for x in v.violations {
            sim.violations.push(Violation {
                kind: ViolationKind::ChainValidation,
                actor: Some(*a),
                height: Some(x.height),
                detail: x.reason,
            });
        }
    }

    let rates: Vec<f64> = sim.clocks.values().map(|c| c.rate).collect();
    let (lo, hi) = rates
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), r| (lo.min(*r), hi.max(*r)));
    if !rates.is_empty() && hi / lo > cfg.clock_ratio * (1.0 + 1e-12) {
        sim.violations.push(Violation {
            kind: ViolationKind::ClockBound,
            actor: None,
            height: None,
            detail: format!("clock rates span {lo}..{hi}, ratio above {}", cfg.clock_ratio),
        });
    }

    let reference = sim
        .nodes
        .iter()
        .filter(|(a, n)| honest(**a) && n.target_state.is_some())
        .min_by_key(|(a, _)| **a)
        .or_else(|| sim.nodes.iter().filter(|(a, _)| honest(**a)).max_by_key(|(_, n)| n.chain.len()));
    let (chain, final_state, producers) = match reference {
        Some((a, n)) => {
            let len = (heights as usize + 1).min(n.chain.len());
            let sets = sim.schedules.get(a).map_or(Vec::new(), |s| {
                s.iter().take(len - 1).map(|x| x.producers().to_vec()).collect()
            });
            (n.chain[..len].to_vec(), n.target_state.clone(), sets)
        }
        None => (vec![Block::genesis()], None, Vec::new()),
    };
    let completed = sim
        .nodes
        .iter()
        .all(|(a, n)| !honest(*a) || !sim.alive(*a, now) || n.decided_height() >= heights);

    let mut actors = Vec::new();
    for a in setup.actors() {
        let role = if (a.0 as usize) < cfg.n {
            ActorRole::Producer
        } else if sim.nodes.contains_key(&a) {
            ActorRole::Joiner
        } else {
            ActorRole::Client
        };
        let strategy = setup.strategy_of(a);
        let (income, balance) = final_state
            .as_ref()
            .map(|s| (s.ledger.income_of(a), s.ledger.balance(a)))
            .unwrap_or_default();
        actors.push(ActorReport {
            id: a,
            role,
            class: strategy.class(),
            strategy,
            clock: sim.clocks[&a],
            crashed_at: sim.crash.get(&a).copied().filter(|c| *c <= now),
            decided: sim.decided.remove(&a).unwrap_or_default(),
            income,
            balance,
        });
    }
    sim.stats.signatures = sim.ledger.signatures_emitted() as u64;
    SimReport {
        seed: cfg.seed,
        config: cfg.clone(),
        incentives: setup.incentives.clone(),
        completed,
        end_time: now,
        heights,
        gst: cfg.gst,
        actors,
        canonical: chain.iter().map(|b| b.digest()).collect(),
        producers,
        stats: sim.stats,
        violations: sim.violations,
        submitted: sim.submitted,
        events: sim.events,
        chain,
        final_state,
        chains: sim.nodes.into_iter().map(|(a, n)| (a, n.chain)).collect(),
    }
}
