//! Actor behaviors. A node runs the protocol and consults its [`Behavior`]
//! at each decision point; the compliant behavior changes nothing.

mod byzantine;
mod equilibrium;
mod rational;
mod utility;

pub use equilibrium::{check_equilibrium, DeviationExperiment, EquilibriumReport, SeedPair, Verdict};
pub use utility::{compute_utility, double_spend_probe, utility_ledger, UtilityError, UtilityLedger, UtilityWeights};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{LeaderSchedule, ProtocolMessage};
use crate::crypto::Authority;
use crate::membership::ChainState;
use crate::types::{ActorId, Block, Transaction};

/// Simulated time in ticks.
pub type SimTime = u64;

/// A message leaving a node. `hold` postpones the send by that many ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: ActorId,
    pub msg: ProtocolMessage,
    pub hold: SimTime,
}

impl Outgoing {
    pub fn now(to: ActorId, msg: ProtocolMessage) -> Self {
        Outgoing { to, msg, hold: 0 }
    }
}

/// What a behavior may look at when it is consulted.
pub struct HookCtx<'a> {
    pub me: ActorId,
    pub now: SimTime,
    pub gst: SimTime,
    pub delta: SimTime,
    pub height: u64,
    pub round: u64,
    pub schedule: &'a LeaderSchedule,
    pub chain: &'a ChainState,
    pub authority: &'a dyn Authority,
    pub rng: &'a mut ChaCha8Rng,
}

impl HookCtx<'_> {
    pub fn is_leader(&self, round: u64) -> bool {
        self.schedule.leader_of(round) == self.me
    }

    /// Every producer of the current height except this actor.
    pub fn others(&self) -> Vec<ActorId> {
        self.schedule.producers().iter().copied().filter(|p| *p != self.me).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Step<'a> {
    HeightStarted,
    RoundEntered,
    Decided(&'a Block),
}

/// Decision points a strategy can override. Defaults are compliant.
pub trait Behavior {
    /// Last say over the transactions of an own block, in order.
    fn select_txs(&mut self, _cx: &mut HookCtx<'_>, txs: Vec<Transaction>) -> Vec<Transaction> {
        txs
    }

    /// Local time after round entry at which TIMEOUT is first sent.
    fn timeout_delay(&self, t: f64) -> f64 {
        t
    }

    /// Whether AGREE blocks are checked against the chain before acking.
    fn validates_blocks(&self) -> bool {
        true
    }

    /// Whether a relay passes join requests on to the producers.
    fn forwards_joins(&self) -> bool {
        true
    }

    /// Whether this actor signs SUSPECTs for omissions it observes.
    fn signs_suspects(&self) -> bool {
        true
    }

    /// Rewrites, drops or postpones one outgoing message.
    fn filter_outgoing(&mut self, _cx: &mut HookCtx<'_>, out: Outgoing) -> Vec<Outgoing> {
        vec![out]
    }

    /// Extra messages to inject at a protocol step. They bypass the filter.
    fn on_step(&mut self, _cx: &mut HookCtx<'_>, _step: Step<'_>) -> Vec<Outgoing> {
        Vec::new()
    }

    /// Simulated time from which the actor is silent and deaf.
    fn crash_at(&self) -> Option<SimTime> {
        None
    }
}

pub struct Compliant;

impl Behavior for Compliant {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyClass {
    Compliant,
    Byzantine,
    Rational,
}

/// A strategy addressed by name from scenario files, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategySpec {
    Compliant,
    SilentLeader,
    EquivocatingLeader,
    FakeFreezer,
    CertForger,
    AckWithholder,
    RandomDelayer,
    DoubleSpender,
    /// Stops at `at`, or at a seed-drawn time in `[0, gst + 5T]`.
    Crash {
        #[serde(default)]
        at: Option<SimTime>,
    },
    FalseSuspecter,
    /// Sends TIMEOUT at local `T / k`.
    EarlyTimeouter {
        k: f64,
    },
    Gatekeeper,
    Censor {
        targets: Vec<ActorId>,
    },
    LazyValidator,
    FreezeRefuser,
    QueueJumper,
}

/// Run-wide values a strategy may need when it is built.
#[derive(Debug, Clone, Copy)]
pub struct BuildCtx {
    pub seed: u64,
    pub gst: SimTime,
    pub timeout: SimTime,
}

impl StrategySpec {
    pub fn name(&self) -> &'static str {
        match self {
            StrategySpec::Compliant => "compliant",
            StrategySpec::SilentLeader => "silent_leader",
            StrategySpec::EquivocatingLeader => "equivocating_leader",
            StrategySpec::FakeFreezer => "fake_freezer",
            StrategySpec::CertForger => "cert_forger",
            StrategySpec::AckWithholder => "ack_withholder",
            StrategySpec::RandomDelayer => "random_delayer",
            StrategySpec::DoubleSpender => "double_spender",
            StrategySpec::Crash { .. } => "crash",
            StrategySpec::FalseSuspecter => "false_suspecter",
            StrategySpec::EarlyTimeouter { .. } => "early_timeouter",
            StrategySpec::Gatekeeper => "gatekeeper",
            StrategySpec::Censor { .. } => "censor",
            StrategySpec::LazyValidator => "lazy_validator",
            StrategySpec::FreezeRefuser => "freeze_refuser",
            StrategySpec::QueueJumper => "queue_jumper",
        }
    }

    pub fn class(&self) -> StrategyClass {
        use StrategySpec::*;
        match self {
            Compliant => StrategyClass::Compliant,
            SilentLeader | EquivocatingLeader | FakeFreezer | CertForger | AckWithholder | RandomDelayer
            | DoubleSpender | Crash { .. } | FalseSuspecter => StrategyClass::Byzantine,
            EarlyTimeouter { .. } | Gatekeeper | Censor { .. } | LazyValidator | FreezeRefuser | QueueJumper => {
                StrategyClass::Rational
            }
        }
    }

    /// Transactions (by sender account) this strategy tries to keep out.
    pub fn targets(&self) -> &[ActorId] {
        match self {
            StrategySpec::Censor { targets } => targets,
            _ => &[],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            StrategySpec::EarlyTimeouter { k } if !(k.is_finite() && *k > 1.0) => {
                Err(format!("early_timeouter.k must be a number above 1, got {k}"))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self, me: ActorId, cx: BuildCtx) -> Box<dyn Behavior> {
        use StrategySpec::*;
        match self {
            Compliant => Box::new(self::Compliant),
            SilentLeader => Box::new(byzantine::SilentLeader),
            EquivocatingLeader => Box::new(byzantine::EquivocatingLeader),
            FakeFreezer => Box::new(byzantine::FakeFreezer),
            CertForger => Box::new(byzantine::CertForger),
            AckWithholder => Box::new(byzantine::AckWithholder),
            RandomDelayer => Box::new(byzantine::RandomDelayer),
            DoubleSpender => Box::new(byzantine::DoubleSpender),
            Crash { at } => Box::new(byzantine::Crash::new(*at, me, cx)),
            FalseSuspecter => Box::new(byzantine::FalseSuspecter),
            EarlyTimeouter { k } => Box::new(rational::EarlyTimeouter { k: *k }),
            Gatekeeper => Box::new(rational::Gatekeeper),
            Censor { targets } => Box::new(rational::Censor {
                targets: targets.clone(),
            }),
            LazyValidator => Box::new(rational::LazyValidator),
            FreezeRefuser => Box::new(rational::FreezeRefuser),
            QueueJumper => Box::new(rational::QueueJumper),
        }
    }
}

/// Strategies that may break the protocol arbitrarily.
pub fn byzantine_catalog() -> Vec<StrategySpec> {
    vec![
        StrategySpec::SilentLeader,
        StrategySpec::EquivocatingLeader,
        StrategySpec::FakeFreezer,
        StrategySpec::CertForger,
        StrategySpec::AckWithholder,
        StrategySpec::RandomDelayer,
        StrategySpec::DoubleSpender,
        StrategySpec::Crash { at: None },
        StrategySpec::FalseSuspecter,
    ]
}

/// Single-actor deviations a utility maximizer might try.
pub fn rational_catalog() -> Vec<StrategySpec> {
    vec![
        StrategySpec::EarlyTimeouter { k: 2.5 },
        StrategySpec::Gatekeeper,
        StrategySpec::Censor { targets: Vec::new() },
        StrategySpec::LazyValidator,
        StrategySpec::FreezeRefuser,
        StrategySpec::QueueJumper,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalogs_cover_required_names() {
        let byz: Vec<_> = byzantine_catalog().iter().map(|s| s.name()).collect();
        for name in [
            "silent_leader",
            "equivocating_leader",
            "fake_freezer",
            "cert_forger",
            "ack_withholder",
            "random_delayer",
        ] {
            assert!(byz.contains(&name), "{name}");
        }
        let rat: Vec<_> = rational_catalog().iter().map(|s| s.name()).collect();
        assert_eq!(
            rat,
            ["early_timeouter", "gatekeeper", "censor", "lazy_validator", "freeze_refuser", "queue_jumper"]
        );
        assert!(byzantine_catalog().iter().all(|s| s.class() == StrategyClass::Byzantine));
        assert!(rational_catalog().iter().all(|s| s.class() == StrategyClass::Rational));
    }

    #[test]
    fn specs_parse_from_toml() {
        #[derive(Deserialize)]
        struct Wrap {
            a: StrategySpec,
            b: StrategySpec,
        }
        let w: Wrap = toml::from_str("a = { strategy = \"early_timeouter\", k = 2.5 }\nb = { strategy = \"gatekeeper\" }").unwrap();
        assert_eq!(w.a, StrategySpec::EarlyTimeouter { k: 2.5 });
        assert_eq!(w.b, StrategySpec::Gatekeeper);
        assert!(StrategySpec::EarlyTimeouter { k: 1.0 }.validate().is_err());
        let bad: Result<Wrap, _> = toml::from_str("a = { strategy = \"nope\" }\nb = { strategy = \"gatekeeper\" }");
        assert!(bad.is_err());
    }
}
