use super::*;
use crate::simnet::{NodeEvent, SubmittedTx, TraceEvent};
use crate::types::{Transaction, TxBody, TxKind};

const BASE: &str = r#"
name = "t"
[sim]
n = 4
f = 1
heights = 8
"#;

fn parse(extra: &str) -> Result<Scenario, ScenarioError> {
    Scenario::from_toml_str(&format!("{BASE}{extra}"))
}

#[test]
fn flat_actor_and_experiment_tables() {
    let sc = parse(
        r#"
[[actors]]
id = 3
strategy = "censor"
targets = [4]

[[experiments]]
deviant = 2
strategy = "early_timeouter"
k = 2.5
seeds = "5..30"
"#,
    )
    .unwrap();
    assert_eq!(
        sc.actors,
        vec![ActorEntry {
            id: ActorId(3),
            strategy: StrategySpec::Censor { targets: vec![ActorId(4)] }
        }]
    );
    let e = &sc.experiments[0];
    assert_eq!(e.strategy, StrategySpec::EarlyTimeouter { k: 2.5 });
    assert_eq!(e.seeds.0, (5..30).collect::<Vec<_>>());
    assert_eq!((e.epsilon, e.min_seeds), (1e-9, 20));
}

#[test]
fn seeds_accept_lists_and_ranges() {
    let sc = parse("[[experiments]]\ndeviant = 0\nstrategy = \"gatekeeper\"\nseeds = [1, 4, 9]\n").unwrap();
    assert_eq!(sc.experiments[0].seeds.0, vec![1, 4, 9]);
    assert_eq!(Seeds::parse_range("3..3").unwrap().count(), 0);
    assert!(Seeds::parse_range("3-9").is_err());
    assert!(Seeds::parse_range("9..3").is_err());
}

#[test]
fn echo_round_trips() {
    let sc = parse("[[actors]]\nid = 1\nstrategy = \"silent_leader\"\n").unwrap();
    let json = serde_json::to_string(&sc).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["actors"][0]["id"], 1);
    assert_eq!(v["actors"][0]["strategy"], "silent_leader");
}

#[test]
fn fault_bound_is_refused() {
    let e = Scenario::from_toml_str("[sim]\nn = 3\nf = 1\n").unwrap_err();
    assert!(e.to_string().contains("n > 3f required"), "{e}");
}

#[test]
fn errors_name_the_field() {
    let unknown = parse("[[actors]]\nid = 1\nstrategy = \"teleporter\"\n").unwrap_err();
    assert!(unknown.to_string().contains("teleporter"), "{unknown}");
    let typo = Scenario::from_toml_str("[sim]\nn = 4\nf = 1\ntimout = 5\n").unwrap_err();
    assert!(typo.to_string().contains("timout"), "{typo}");
    let deviant = parse("[[experiments]]\ndeviant = 9\nstrategy = \"gatekeeper\"\n").unwrap_err();
    assert!(deviant.to_string().contains("experiments[0].deviant"), "{deviant}");
    let k = parse("[[actors]]\nid = 1\nstrategy = \"early_timeouter\"\nk = 0.5\n").unwrap_err();
    assert!(k.to_string().contains("k"), "{k}");
    let dup = parse("[[actors]]\nid = 1\nstrategy = \"gatekeeper\"\n[[actors]]\nid = 1\nstrategy = \"censor\"\ntargets = []\n")
        .unwrap_err();
    assert!(dup.to_string().contains("listed twice"), "{dup}");
}

#[test]
fn warnings_for_excess_byzantine_and_weak_punishment() {
    let sc = parse(
        "[incentives]\npunishment = 0\n[[actors]]\nid = 1\nstrategy = \"silent_leader\"\n[[actors]]\nid = 2\nstrategy = \"ack_withholder\"\n",
    )
    .unwrap();
    let w = sc.warnings();
    assert!(w.iter().any(|m| m.contains("exceed f")), "{w:?}");
    assert!(w.iter().any(|m| m.contains("punishment")), "{w:?}");
    assert!(parse("").unwrap().warnings().is_empty());
}

#[test]
fn run_reports_pass_and_replay() {
    let sc = parse("").unwrap();
    let a = run_scenario(&sc, Some(3)).unwrap();
    assert!(a.passed(), "{:?}", a.invariants);
    assert_eq!(a.seed, 3);
    assert_eq!(a.timing.decided_at.len(), 8);
    assert!(a.timing.decided_at.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(a.utilities.len(), 4);
    assert!(!a.trace_jsonl().is_empty());
    let b = run_scenario(&sc, Some(3)).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.trace_jsonl(), b.trace_jsonl());
}

#[test]
fn empty_sweep_passes_with_a_warning() {
    let r = sweep(&parse("").unwrap(), &[], 1).unwrap();
    assert!(r.all_passed());
    assert!(r.warnings.iter().any(|w| w.contains("empty seed range")));
}

#[test]
fn sweep_counts_every_seed() {
    let r = sweep(&parse("").unwrap(), &[0, 1, 2], 2).unwrap();
    assert!(r.all_passed());
    assert!(r.passed.values().all(|n| *n == 3));
}

#[test]
fn experiments_are_required_for_equilibrium() {
    assert!(run_experiments(&parse("").unwrap()).is_err());
}

fn base_report() -> SimReport {
    let sc = parse("[workload]\nclients = 1\ntransfer_interval = 700\n").unwrap();
    run_scenario(&sc, Some(0)).unwrap().sim
}

#[test]
fn termination_flags_a_late_certificate() {
    let mut r = base_report();
    assert!(check_termination(&r).passed);
    let bound = r.config.f as u64 + 1;
    for e in r.events.iter_mut() {
        if let NodeEvent::Decided { height: 3, cert_round, .. } = &mut e.event {
            *cert_round += bound + 4;
        }
    }
    let c = check_termination(&r);
    assert!(!c.passed);
    assert!(c.failures[0].contains("height 3"), "{:?}", c.failures);
}

#[test]
fn termination_needs_a_trace_and_a_finished_run() {
    let mut r = base_report();
    r.events.clear();
    assert!(!check_termination(&r).passed);
    let mut r = base_report();
    r.completed = false;
    assert!(!check_termination(&r).passed);
}

#[test]
fn termination_skips_heights_decided_before_gst() {
    let mut r = base_report();
    for e in r.events.iter_mut() {
        if let NodeEvent::Decided { cert_round, .. } = &mut e.event {
            *cert_round += 100;
        }
    }
    r.gst = r.end_time + 1;
    let c = check_termination(&r);
    assert!(c.passed);
    assert_eq!(c.checked, 0);
}

fn punish(r: &mut SimReport, accused: ActorId, txid: crate::Digest) {
    let tx = Transaction::exempt(TxBody::Punishment {
        accused,
        txid,
        height: 2,
        suspects: vec![],
    });
    r.chain[3].txs.push(tx);
}

#[test]
fn punishing_a_compliant_actor_for_a_post_gst_tx_is_flagged() {
    let mut r = base_report();
    assert!(check_no_false_punishment(&r).passed);
    let tx = r.submitted[0].txid;
    punish(&mut r, ActorId(1), tx);
    let c = check_no_false_punishment(&r);
    assert!(!c.passed);
    assert_eq!(punished_compliant(&r).into_iter().collect::<Vec<_>>(), vec![ActorId(1)]);
    // Unknown transactions are always false accusations.
    let mut r = base_report();
    punish(&mut r, ActorId(2), crate::Digest::ZERO);
    assert!(check_no_false_punishment(&r).failures[0].contains("never submitted"));
}

#[test]
fn pre_gst_submissions_are_not_judged() {
    let mut r = base_report();
    let tx = r.submitted[0].txid;
    r.gst = r.submitted[0].at + 1;
    punish(&mut r, ActorId(1), tx);
    assert!(check_no_false_punishment(&r).passed);
}

#[test]
fn a_missing_join_is_flagged() {
    let mut r = base_report();
    let join = Transaction::exempt(TxBody::Join {
        joiner: ActorId(9),
        device_token: crate::DeviceToken::for_actor(ActorId(9)),
        deposit: 100,
    });
    r.submitted.push(SubmittedTx {
        txid: join.id,
        kind: TxKind::Join,
        sender: ActorId(9),
        at: 0,
    });
    let c = check_eventual_join(&r);
    assert_eq!(c.checked, 1);
    assert!(c.failures[0].contains("never included"));
    // Too late to judge: the chain ends within n blocks of submission.
    r.submitted.last_mut().unwrap().at = r.end_time;
    assert!(check_eventual_join(&r).passed);
}

#[test]
fn agreement_compares_decisions_across_actors() {
    let mut r = base_report();
    assert!(check_agreement(&r).passed);
    r.actors[1].decided[0].digest = crate::Digest::ZERO;
    assert!(!check_agreement(&r).passed);
}

#[test]
fn trace_events_serialize_flat() {
    let e = TraceEvent {
        t: 5,
        actor: ActorId(1),
        local: 6.5,
        event: NodeEvent::RoundEntered { height: 2, round: 3 },
    };
    let v: serde_json::Value = serde_json::to_value(&e).unwrap();
    assert_eq!(v["event"], "round_entered");
    assert_eq!(v["round"], 3);
}
