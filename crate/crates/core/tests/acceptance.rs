//! Acceptance run. Prints one line per criterion and exits non-zero if any
//! criterion fails. Tolerances are the constants below.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rayon::prelude::*;

use barchain::consensus::quorum_size;
use barchain::crypto::SignatureLedger;
use barchain::membership::{ChainState, Incentives, Registrar};
use barchain::scenario::{
    check_agreement, check_eventual_join, check_no_false_punishment, check_termination, check_validity, run_experiments,
    run_scenario, Scenario,
};
use barchain::simnet::{run, DelayMode, JoinSpec, NodeEvent, SimConfig, SimReport, SimSetup, ViolationKind};
use barchain::strategies::{byzantine_catalog, StrategyClass, StrategySpec, Verdict};
use barchain::{ActorId, Block, DeviceToken, Digest, QuorumCert, Transaction, TxBody, TxKind};

/// Seeds per configuration in every sweep below.
const SEEDS: u64 = 100;
/// Heights each safety run must decide.
const HEIGHTS: u64 = 20;
/// GST in units of the timeout for criteria 1 to 3.
const GST_TIMEOUTS: u64 = 20;
/// Upper bound on a PASSing mean utility gap.
const EPSILON: f64 = 1e-9;
/// Minimum paired seeds behind an equilibrium verdict.
const MIN_PAIRS: usize = 20;
/// Early-timeout factor: TIMEOUTs leave at local T / K.
const EARLY_K: f64 = 2.5;
const REGISTRATIONS: usize = 1000;
const DEVICE_TOKENS: usize = 10;

struct Line {
    passed: bool,
    detail: String,
}

fn line(passed: bool, detail: String) -> Line {
    Line { passed, detail }
}

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    Scenario::load(&scenario_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn base(n: usize, f: usize, seed: u64) -> SimSetup {
    SimSetup {
        config: SimConfig {
            n,
            f,
            seed,
            heights: HEIGHTS,
            ..SimConfig::default()
        },
        trace: true,
        ..SimSetup::default()
    }
}

fn canonical_punishments(r: &SimReport) -> Vec<(ActorId, Digest, u64)> {
    r.chain
        .iter()
        .flat_map(|b| &b.txs)
        .filter_map(|t| match &t.body {
            TxBody::Punishment { accused, txid, height, .. } => Some((*accused, *txid, *height)),
            _ => None,
        })
        .collect()
}

// ---- criteria 1 to 3 ------------------------------------------------------

#[derive(Default)]
struct SafetyTally {
    runs: usize,
    agreement: Vec<String>,
    validity: Vec<String>,
    termination: Vec<String>,
    heights_checked: usize,
}

fn safety_sweep() -> SafetyTally {
    let mut jobs = Vec::new();
    for n in [4usize, 7, 10] {
        for spec in byzantine_catalog() {
            for seed in 0..SEEDS {
                jobs.push((n, spec.clone(), seed));
            }
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(n, spec, seed)| {
            let (n, seed) = (*n, *seed);
            let f = (n - 1) / 3;
            let mut s = base(n, f, seed);
            s.config.clock_ratio = 2.0;
            s.config.gst = GST_TIMEOUTS * s.config.timeout;
            s.config.delay.mode = if seed % 2 == 0 { DelayMode::Random } else { DelayMode::AdversaryScheduled };
            for i in 0..f {
                s.strategies.insert(ActorId(3 * i as u32 + 1), spec.clone());
            }
            let r = run(&s).expect("valid setup");
            let tag = format!("n={n} {} seed {seed}", spec.name());
            let mut agreement = check_agreement(&r).failures;
            agreement.extend(
                r.violations
                    .iter()
                    .filter(|v| v.kind == ViolationKind::Agreement)
                    .map(|v| v.detail.clone()),
            );
            let validity = check_validity(&r).failures;
            let term = check_termination(&r);
            let mut termination = term.failures;
            if !r.completed || r.canonical.len() as u64 != HEIGHTS + 1 {
                termination.push(format!("{} of {HEIGHTS} heights decided", r.canonical.len().saturating_sub(1)));
            }
            let label = |v: Vec<String>| v.into_iter().map(|m| format!("{tag}: {m}")).collect::<Vec<_>>();
            (label(agreement), label(validity), label(termination), term.checked)
        })
        .collect();
    let mut t = SafetyTally::default();
    for (a, v, term, checked) in results {
        t.runs += 1;
        t.agreement.extend(a);
        t.validity.extend(v);
        t.termination.extend(term);
        t.heights_checked += checked;
    }
    t
}

fn first(v: &[String]) -> String {
    v.first().map_or(String::new(), |m| format!("; first: {m}"))
}

// ---- criterion 4 ----------------------------------------------------------

fn subsets(n: usize, size: usize) -> Vec<u32> {
    (0u32..1 << n).filter(|m| m.count_ones() as usize == size).collect()
}

fn min_intersection(n: usize, size: usize) -> u32 {
    let sets = subsets(n, size);
    let mut min = u32::MAX;
    for a in &sets {
        for b in &sets {
            min = min.min((a & b).count_ones());
        }
    }
    min
}

fn quorum_intersection() -> Line {
    let mut failures = Vec::new();
    let mut cases = 0;
    for n in 1..=10usize {
        for f in (0..).take_while(|f| 3 * f < n) {
            cases += 1;
            let q = quorum_size(n, f);
            if min_intersection(n, q) < f as u32 + 1 {
                failures.push(format!("n={n} f={f} quorum {q}"));
            }
            // The literal 2f+1 form, at the tight size n = 3f+1.
            if n == 3 * f + 1 {
                if q != 2 * f + 1 {
                    failures.push(format!("n={n} f={f}: quorum {q} is not 2f+1"));
                }
                if min_intersection(n, 2 * f + 1) < f as u32 + 1 {
                    failures.push(format!("n={n} f={f}: 2f+1-subsets"));
                }
            }
            // One fewer member no longer guarantees f+1 in common.
            if q > 1 && min_intersection(n, q - 1) > f as u32 {
                failures.push(format!("n={n} f={f}: quorum {q} is not minimal"));
            }
        }
    }
    line(
        failures.is_empty(),
        format!("{cases} (n, f) pairs with n <= 10, every quorum pair shares >= f+1{}", first(&failures)),
    )
}

// ---- criterion 5 ----------------------------------------------------------

fn timeout_discipline() -> Line {
    const DEVIANT: ActorId = ActorId(2);
    let results: Vec<_> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let mut s = base(4, 1, seed);
            s.config.clock_ratio = 2.0;
            s.strategies.insert(ActorId(1), StrategySpec::SilentLeader);
            s.strategies.insert(DEVIANT, StrategySpec::EarlyTimeouter { k: EARLY_K });
            let r = run(&s).expect("valid setup");
            let mut early = 0usize;
            let mut compliant = 0usize;
            let mut failures = Vec::new();
            // (leader, height, round, signer) whose TIMEOUT counted so far.
            let mut counted = BTreeSet::new();
            for e in &r.events {
                match &e.event {
                    NodeEvent::TimeoutArrived {
                        height,
                        round,
                        from,
                        elapsed,
                        threshold,
                        counted: c,
                    } => {
                        if *c {
                            counted.insert((e.actor, *height, *round, *from));
                        }
                        if *from == DEVIANT && elapsed < threshold {
                            early += 1;
                            if *c {
                                failures.push(format!("seed {seed}: early TIMEOUT counted at {}", e.actor));
                            }
                        }
                        if *from != DEVIANT && *from != ActorId(1) && e.t >= r.gst {
                            compliant += 1;
                            if !*c {
                                failures.push(format!(
                                    "seed {seed}: compliant TIMEOUT from {from} refused at {} ({elapsed:.1} < {threshold:.1})",
                                    e.actor
                                ));
                            }
                        }
                    }
                    NodeEvent::FreezeFormed {
                        height, frozen, signers, ..
                    } => {
                        if signers.iter().all(|s| *s == DEVIANT) {
                            failures.push(format!("seed {seed}: FREEZE from the deviant's TIMEOUTs alone"));
                        }
                        for s in signers {
                            if !counted.contains(&(e.actor, *height, *frozen, *s)) {
                                failures.push(format!(
                                    "seed {seed}: FREEZE at height {height} counts an unaccepted TIMEOUT from {s}"
                                ));
                            }
                        }
                    }
                    _ => {}
                }
            }
            if !r.completed {
                failures.push(format!("seed {seed}: run did not finish"));
            }
            (early, compliant, r.stats.freezes_formed, failures)
        })
        .collect();
    let early: usize = results.iter().map(|r| r.0).sum();
    let compliant: usize = results.iter().map(|r| r.1).sum();
    let freezes: u64 = results.iter().map(|r| r.2).sum();
    let failures: Vec<String> = results.into_iter().flat_map(|r| r.3).collect();
    line(
        failures.is_empty() && early > 0,
        format!(
            "{SEEDS} seeds: {early} early TIMEOUTs all refused, {freezes} FREEZEs all backed by accepted TIMEOUTs, \
             {compliant} compliant TIMEOUTs accepted{}",
            first(&failures)
        ),
    )
}

// ---- criterion 6 ----------------------------------------------------------

fn equilibrium_suite() -> Line {
    let suite = run_experiments(&load("rational_suite.toml")).expect("suite runs");
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for e in &suite.experiments {
        parts.push(format!("{} {:+.3}", e.strategy.name(), e.mean_gap));
        if e.verdict != Verdict::Pass || e.mean_gap > EPSILON || e.pairs.len() < MIN_PAIRS {
            failures.push(format!("{} {:?} over {} pairs", e.strategy.name(), e.verdict, e.pairs.len()));
        }
    }
    let covered: BTreeSet<&str> = suite.experiments.iter().map(|e| e.strategy.name()).collect();
    for spec in barchain::strategies::rational_catalog() {
        if !covered.contains(spec.name()) {
            failures.push(format!("{} not in the suite", spec.name()));
        }
    }
    let mut control = load("gatekeeper.toml");
    control.incentives.punishment = Some(0);
    let neg = run_experiments(&control).expect("control runs");
    let gap = neg.experiments[0].mean_gap;
    if gap <= 0.0 {
        failures.push(format!("negative control gap {gap}"));
    }
    line(
        failures.is_empty(),
        format!(
            "mean gaps {}; unpunished gatekeeper {:+.3}{}",
            parts.join(", "),
            gap,
            first(&failures)
        ),
    )
}

// ---- criterion 7 ----------------------------------------------------------

/// Heights of the deviant's blocks that left out a join which at least f+1
/// compliant watchers had held for the lead time before seeing the block.
fn timely_omissions(r: &SimReport, deviant: ActorId, lead_time: f64) -> BTreeSet<u64> {
    let joins: Vec<Digest> = r.submitted.iter().filter(|s| s.kind == TxKind::Join).map(|s| s.txid).collect();
    let mut held: BTreeMap<(ActorId, Digest), f64> = BTreeMap::new();
    let mut seen: BTreeMap<(ActorId, u64, u64, Digest), f64> = BTreeMap::new();
    for e in &r.events {
        match &e.event {
            NodeEvent::TxReceived { txid, .. } => {
                held.entry((e.actor, *txid)).or_insert(e.local);
            }
            NodeEvent::AgreeSeen { height, round, digest } => {
                seen.entry((e.actor, *height, *round, *digest)).or_insert(e.local);
            }
            _ => {}
        }
    }
    let compliant: BTreeSet<ActorId> = r
        .actors
        .iter()
        .filter(|a| a.class == StrategyClass::Compliant && a.crashed_at.is_none())
        .map(|a| a.id)
        .collect();
    let mut out = BTreeSet::new();
    for (i, b) in r.chain.iter().enumerate().skip(1) {
        if b.proposer != deviant {
            continue;
        }
        let next = r.producers_at(b.height + 1);
        let threshold = if next.is_empty() { r.producers_at(b.height).len() } else { next.len() };
        let threshold = (threshold - 1) / 3 + 1;
        for j in &joins {
            if r.chain[..=i].iter().any(|c| c.contains_tx(j)) {
                continue;
            }
            let watchers = r
                .producers_at(b.height)
                .iter()
                .filter(|w| compliant.contains(w))
                .filter(|w| {
                    match (held.get(&(**w, *j)), seen.get(&(**w, b.height, b.round, b.digest()))) {
                        (Some(h), Some(s)) => s - h >= lead_time,
                        _ => false,
                    }
                })
                .count();
            if watchers >= threshold {
                out.insert(b.height);
            }
        }
    }
    out
}

fn gatekeeping_defense() -> Line {
    const DEVIANT: ActorId = ActorId(2);
    let sc = load("gatekeeper.toml");
    let lead_time = sc.incentives.lead_time_or(sc.sim.delta as f64, sc.sim.clock_ratio);
    let penalty = sc.incentives.punishment.unwrap_or(sc.incentives.block_reward);
    let results: Vec<_> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let r = run(&sc.setup(Some(seed))).expect("valid setup");
            let mut failures = Vec::new();
            let joins = check_eventual_join(&r);
            if !joins.passed || joins.checked != sc.workload.joins.len() {
                failures.push(format!("seed {seed}: {} joins judged, {:?}", joins.checked, joins.failures));
            }
            let expected = timely_omissions(&r, DEVIANT, lead_time);
            let join_ids: BTreeSet<Digest> =
                r.submitted.iter().filter(|s| s.kind == TxKind::Join).map(|s| s.txid).collect();
            let punished: BTreeSet<u64> = canonical_punishments(&r)
                .into_iter()
                .filter(|(a, txid, _)| {
                    if !join_ids.contains(txid) || *a != DEVIANT {
                        failures.push(format!("seed {seed}: punishment of {a} for a non-join"));
                    }
                    *a == DEVIANT
                })
                .map(|(_, _, h)| h)
                .collect();
            let state = r.final_state.as_ref().expect("finished run");
            let flagged: BTreeSet<u64> = state
                .ledger
                .entries
                .iter()
                .filter(|e| e.proposer == DEVIANT && e.punished)
                .map(|e| e.height)
                .collect();
            let forfeited = r.actor(DEVIANT).expect("deviant").income.forfeited;
            let want = expected.len() as i64 * penalty.min(sc.incentives.block_reward);
            if expected != punished || expected != flagged || forfeited != want {
                failures.push(format!(
                    "seed {seed}: timely omissions at {expected:?}, punished {punished:?}, \
                     ledger {flagged:?}, forfeited {forfeited} (want {want})"
                ));
            }
            (expected.len(), forfeited, failures)
        })
        .collect();
    let omissions: usize = results.iter().map(|r| r.0).sum();
    let forfeited: i64 = results.iter().map(|r| r.1).sum();
    let failures: Vec<String> = results.into_iter().flat_map(|r| r.2).collect();
    line(
        failures.is_empty() && omissions > 0,
        format!(
            "{SEEDS} seeds: every join on chain within n blocks; {omissions} timely omissions, {forfeited} coins forfeited{}",
            first(&failures)
        ),
    )
}

// ---- criterion 8 ----------------------------------------------------------

fn no_false_punishment() -> Line {
    let liars = [ActorId(1), ActorId(4)];
    let results: Vec<_> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let mut s = base(7, 2, seed);
            s.config.clock_ratio = 2.0;
            for l in liars {
                s.strategies.insert(l, StrategySpec::FalseSuspecter);
            }
            s.workload.joins = (0..2)
                .map(|i| JoinSpec {
                    at: 1000 + 3000 * i,
                    jitter: 1000,
                    relays: liars.to_vec(),
                    deposit: None,
                })
                .collect();
            let r = run(&s).expect("valid setup");
            let mut failures = check_no_false_punishment(&r).failures;
            let applied = canonical_punishments(&r).len();
            let forfeited: i64 = r.actors.iter().map(|a| a.income.forfeited).sum();
            if applied > 0 || forfeited > 0 {
                failures.push(format!("seed {seed}: {applied} punishments, {forfeited} forfeited"));
            }
            if !r.completed {
                failures.push(format!("seed {seed}: run did not finish"));
            }
            (r.stats.messages_sent.get("suspect").copied().unwrap_or(0), failures)
        })
        .collect();
    let suspects: u64 = results.iter().map(|r| r.0).sum();
    let failures: Vec<String> = results.into_iter().flat_map(|r| r.1).collect();
    line(
        failures.is_empty() && suspects > 0,
        format!("{SEEDS} seeds, 2 of 7 lying: {suspects} false SUSPECT messages, 0 punishments{}", first(&failures)),
    )
}

// ---- criterion 9 ----------------------------------------------------------

fn token(i: usize) -> DeviceToken {
    DeviceToken(format!("tpm-{}", i % DEVICE_TOKENS).into_bytes())
}

fn sybil_registration() -> Line {
    let producers: Vec<(ActorId, DeviceToken)> = (0..4).map(|i| (ActorId(i), DeviceToken::for_actor(ActorId(i)))).collect();
    let candidates: Vec<ActorId> = (0..REGISTRATIONS as u32).map(|i| ActorId(100 + i)).collect();
    let mut accounts: Vec<ActorId> = producers.iter().map(|p| p.0).collect();
    accounts.extend(&candidates);
    let mut state = ChainState::genesis(Incentives::default(), 1, &producers, &accounts);
    let deposit = state.params.deposit;

    // Off-chain desk.
    let mut desk = Registrar::new();
    let issued = candidates
        .iter()
        .enumerate()
        .filter(|(i, c)| desk.register(**c, token(*i), 1000, deposit, &state.queue).is_ok())
        .count();

    // On chain, with every attempt submitted as a Join regardless.
    let authority = SignatureLedger::new(accounts.iter().copied());
    let mut skipped = 0;
    for (b, chunk) in candidates.chunks(100).enumerate() {
        let base = b * 100;
        let txs = chunk
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Transaction::exempt(TxBody::Join {
                    joiner: *c,
                    device_token: token(base + i),
                    deposit,
                })
            })
            .collect();
        let block = Block {
            height: state.next_height(),
            round: state.start_round(),
            proposer: producers[b % producers.len()].0,
            parent_hash: state.tip,
            txs,
            cert: QuorumCert::default(),
        };
        skipped += state.apply_block(&block, &authority).len();
    }
    let accepted = REGISTRATIONS - skipped;
    let members = state.queue.active.len() + state.queue.pending_joins.len() - producers.len();
    line(
        issued == DEVICE_TOKENS && accepted == DEVICE_TOKENS && members == DEVICE_TOKENS,
        format!(
            "{REGISTRATIONS} attempts over {DEVICE_TOKENS} tokens: desk issued {issued}, chain accepted {accepted}, {members} new members"
        ),
    )
}

// ---- criterion 10 ---------------------------------------------------------

fn determinism() -> Line {
    let mut files: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .expect("scenario dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    let mut failures = Vec::new();
    for path in &files {
        let sc = Scenario::load(path).expect("bundled scenario loads");
        for seed in [0, 7] {
            let a = run_scenario(&sc, Some(seed)).expect("runs");
            let b = run_scenario(&sc, Some(seed)).expect("runs");
            if a.to_json() != b.to_json() || a.trace_jsonl() != b.trace_jsonl() {
                failures.push(format!("{} seed {seed}", path.display()));
            }
        }
    }
    line(
        failures.is_empty() && !files.is_empty(),
        format!("{} bundled scenarios x 2 seeds, reports and traces byte-identical{}", files.len(), first(&failures)),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |id: u8, name: &str, start: Instant, l: Line| {
        all &= l.passed;
        let verdict = if l.passed { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {name:<24} {verdict}  {} [{:.1}s]", l.detail, start.elapsed().as_secs_f64());
    };

    let start = Instant::now();
    let t = safety_sweep();
    report(
        1,
        "agreement",
        start,
        line(t.agreement.is_empty(), format!("{} runs, {} violations{}", t.runs, t.agreement.len(), first(&t.agreement))),
    );
    report(
        2,
        "validity",
        start,
        line(t.validity.is_empty(), format!("{} runs, {} violations{}", t.runs, t.validity.len(), first(&t.validity))),
    );
    report(
        3,
        "termination",
        start,
        line(
            t.termination.is_empty() && t.heights_checked > 0,
            format!(
                "{} runs, {} post-GST heights within the f+1 round bound, {} violations{}",
                t.runs,
                t.heights_checked,
                t.termination.len(),
                first(&t.termination)
            ),
        ),
    );
    let start = Instant::now();
    report(4, "quorum_intersection", start, quorum_intersection());
    let start = Instant::now();
    report(5, "timeout_discipline", start, timeout_discipline());
    let start = Instant::now();
    report(6, "equilibrium_suite", start, equilibrium_suite());
    let start = Instant::now();
    report(7, "gatekeeping_defense", start, gatekeeping_defense());
    let start = Instant::now();
    report(8, "no_false_punishment", start, no_false_punishment());
    let start = Instant::now();
    report(9, "sybil_registration", start, sybil_registration());
    let start = Instant::now();
    report(10, "determinism", start, determinism());

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
