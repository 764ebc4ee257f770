//! Run-level invariant checks over a [`SimReport`] and its trace.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::simnet::{NodeEvent, SimReport, SimTime, ViolationKind};
use crate::strategies::StrategyClass;
use crate::types::{ActorId, TxBody, TxKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub passed: bool,
    /// Number of items the check looked at.
    pub checked: usize,
    pub failures: Vec<String>,
}

impl CheckResult {
    fn from(checked: usize, failures: Vec<String>) -> Self {
        CheckResult {
            passed: failures.is_empty(),
            checked,
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantResults {
    pub agreement: CheckResult,
    pub validity: CheckResult,
    pub termination: CheckResult,
    pub no_false_punishment: CheckResult,
    pub eventual_join: CheckResult,
}

impl InvariantResults {
    pub fn all_passed(&self) -> bool {
        self.iter().all(|(_, c)| c.passed)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &CheckResult)> {
        [
            ("agreement", &self.agreement),
            ("validity", &self.validity),
            ("termination", &self.termination),
            ("no_false_punishment", &self.no_false_punishment),
            ("eventual_join", &self.eventual_join),
        ]
        .into_iter()
    }
}

pub fn check_all(report: &SimReport) -> InvariantResults {
    InvariantResults {
        agreement: check_agreement(report),
        validity: check_validity(report),
        termination: check_termination(report),
        no_false_punishment: check_no_false_punishment(report),
        eventual_join: check_eventual_join(report),
    }
}

fn class_of(report: &SimReport, a: ActorId) -> StrategyClass {
    report.actor(a).map_or(StrategyClass::Compliant, |r| r.class)
}

/// Two non-Byzantine actors never decide different blocks at one height.
pub fn check_agreement(report: &SimReport) -> CheckResult {
    let mut seen: BTreeMap<u64, (ActorId, _)> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut checked = 0;
    for a in report.actors.iter().filter(|a| a.class != StrategyClass::Byzantine) {
        for d in &a.decided {
            checked += 1;
            match seen.get(&d.height) {
                Some((other, digest)) if *digest != d.digest => failures.push(format!(
                    "height {}: {} decided {} but {} decided {}",
                    d.height, a.id, d.digest, other, digest
                )),
                Some(_) => {}
                None => {
                    seen.insert(d.height, (a.id, d.digest));
                }
            }
        }
    }
    CheckResult::from(checked, failures)
}

/// Every decided block has an AGREE from its scheduled leader and a valid
/// certificate, and every non-Byzantine chain is free of double spends.
pub fn check_validity(report: &SimReport) -> CheckResult {
    let failures: Vec<String> = report
        .violations
        .iter()
        .filter(|v| matches!(v.kind, ViolationKind::Validity | ViolationKind::ChainValidation))
        .map(|v| format!("{:?} at {:?}, height {:?}: {}", v.kind, v.actor, v.height, v.detail))
        .chain(
            (crate::strategies::double_spend_probe(report) > 0)
                .then(|| "double spend on a decided chain".to_string()),
        )
        .collect();
    let checked = report.chains.values().map(|c| c.len().saturating_sub(1)).sum();
    CheckResult::from(checked, failures)
}

/// Highest round at height `h` known to be started before `t` by any
/// compliant actor, counting every round a pre-`t` TIMEOUT could still
/// freeze into.
fn round_reach(report: &SimReport, h: u64, t: SimTime, f: u64) -> u64 {
    let mut held: BTreeMap<ActorId, u64> = BTreeMap::new();
    let mut reach = 0;
    for e in report.events.iter().take_while(|e| e.t <= t) {
        if class_of(report, e.actor) != StrategyClass::Compliant {
            continue;
        }
        match &e.event {
            NodeEvent::HeightStarted { height, round } | NodeEvent::RoundEntered { height, round } if *height == h => {
                held.insert(e.actor, *round);
            }
            NodeEvent::TimeoutSent { height, round, .. } if *height == h && e.t < t => {
                reach = reach.max(round + f + 1);
            }
            _ => {}
        }
    }
    held.values().copied().max().unwrap_or(0).max(reach)
}

/// After GST every height decides within `f + 1` rounds of the first round
/// with a compliant leader that no compliant actor had passed, and could not
/// be frozen past, when the height became synchronous.
///
/// Needs the event trace. Heights decided entirely before GST are not held
/// to the bound.
pub fn check_termination(report: &SimReport) -> CheckResult {
    let mut failures = Vec::new();
    if !report.completed {
        failures.push(format!(
            "run stopped at {} before all {} heights decided",
            report.end_time, report.heights
        ));
        return CheckResult::from(0, failures);
    }
    if report.events.is_empty() {
        failures.push("no trace recorded; termination cannot be checked".into());
        return CheckResult::from(0, failures);
    }
    let f = report.config.f as u64;
    let gst = report.gst;
    let compliant = |a: ActorId| class_of(report, a) == StrategyClass::Compliant;
    let alive = |a: ActorId, t: SimTime| report.actor(a).and_then(|r| r.crashed_at).is_none_or(|c| t < c);
    let mut first_entry: BTreeMap<u64, SimTime> = BTreeMap::new();
    let mut decided: BTreeMap<u64, (SimTime, u64)> = BTreeMap::new();
    for e in &report.events {
        if !compliant(e.actor) {
            continue;
        }
        match &e.event {
            NodeEvent::HeightStarted { height, .. } => {
                first_entry.entry(*height).or_insert(e.t);
            }
            NodeEvent::Decided { height, cert_round, .. } => {
                decided.entry(*height).or_insert((e.t, *cert_round));
            }
            _ => {}
        }
    }
    let mut checked = 0;
    for h in 1..=report.heights {
        let Some(&(t_dec, cert_round)) = decided.get(&h) else {
            failures.push(format!("height {h}: no compliant actor decided"));
            continue;
        };
        if t_dec < gst {
            continue;
        }
        let Some(&entry) = first_entry.get(&h) else {
            continue;
        };
        checked += 1;
        let t_h = entry.max(gst);
        let start = round_reach(report, h, t_h, f);
        let producers = report.producers_at(h);
        let n = producers.len() as u64;
        if n == 0 {
            failures.push(format!("height {h}: no producer set"));
            continue;
        }
        let first_good = (start..start + n).find(|r| {
            let leader = producers[(*r % n) as usize];
            compliant(leader) && alive(leader, t_dec)
        });
        let Some(r_star) = first_good else {
            failures.push(format!("height {h}: no compliant leader from round {start}"));
            continue;
        };
        if cert_round > r_star + f + 1 {
            failures.push(format!(
                "height {h}: decided in round {cert_round}, bound {} (first compliant-led round {r_star})",
                r_star + f + 1
            ));
        }
    }
    CheckResult::from(checked, failures)
}

/// No compliant actor loses a reward for a transaction submitted at or
/// after GST, and no punishment names a transaction nobody submitted.
pub fn check_no_false_punishment(report: &SimReport) -> CheckResult {
    let submitted: BTreeMap<_, _> = report.submitted.iter().map(|s| (s.txid, s.at)).collect();
    let mut failures = Vec::new();
    let mut checked = 0;
    for b in &report.chain {
        for tx in &b.txs {
            let TxBody::Punishment { accused, txid, height, .. } = &tx.body else {
                continue;
            };
            checked += 1;
            if class_of(report, *accused) != StrategyClass::Compliant {
                continue;
            }
            match submitted.get(txid) {
                None => failures.push(format!(
                    "{accused} punished at height {height} for {txid}, which was never submitted"
                )),
                Some(at) if *at >= report.gst => failures.push(format!(
                    "compliant {accused} punished at height {height} for {txid} submitted at {at}"
                )),
                Some(_) => {}
            }
        }
    }
    CheckResult::from(checked, failures)
}

/// Every join is on the canonical chain within `n` blocks of the height the
/// chain had reached when it was submitted (or at GST, if later). Joins too
/// close to the end of the run to be judged are skipped.
pub fn check_eventual_join(report: &SimReport) -> CheckResult {
    let n = report.config.n as u64;
    let decided_at: Vec<SimTime> = (1..=report.heights)
        .map(|h| {
            report
                .actors
                .iter()
                .filter(|a| a.class != StrategyClass::Byzantine)
                .filter_map(|a| a.decided.iter().find(|d| d.height == h).map(|d| d.at))
                .min()
                .unwrap_or(SimTime::MAX)
        })
        .collect();
    let included: BTreeMap<_, u64> = report
        .chain
        .iter()
        .flat_map(|b| b.txs.iter().map(move |t| (t.id, b.height)))
        .collect();
    let mut failures = Vec::new();
    let mut checked = 0;
    for s in report.submitted.iter().filter(|s| s.kind == TxKind::Join) {
        let from = s.at.max(report.gst);
        let base = decided_at.iter().take_while(|t| **t <= from).count() as u64;
        if base + n > report.heights {
            continue;
        }
        checked += 1;
        match included.get(&s.txid) {
            Some(h) if *h <= base + n => {}
            Some(h) => failures.push(format!(
                "join of {} included at height {h}, more than {n} blocks after height {base}",
                s.sender
            )),
            None => failures.push(format!("join of {} never included", s.sender)),
        }
    }
    CheckResult::from(checked, failures)
}

/// Actors that signed a punishment against a compliant actor.
pub fn punished_compliant(report: &SimReport) -> BTreeSet<ActorId> {
    report
        .chain
        .iter()
        .flat_map(|b| &b.txs)
        .filter_map(|t| match &t.body {
            TxBody::Punishment { accused, .. } if class_of(report, *accused) == StrategyClass::Compliant => Some(*accused),
            _ => None,
        })
        .collect()
}
