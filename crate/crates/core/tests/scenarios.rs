use std::collections::BTreeSet;
use std::path::PathBuf;

use barchain::scenario::{run_scenario, sweep, Scenario};
use barchain::simnet::{run, NodeEvent};
use barchain::ActorId;

fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(&path(name)).unwrap()
}

#[test]
fn every_bundled_scenario_loads_and_passes_at_its_seed() {
    for entry in std::fs::read_dir(path("")).unwrap() {
        let p = entry.unwrap().path();
        let sc = Scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let r = run_scenario(&sc, None).unwrap();
        assert_eq!(r.seed, sc.sim.seed);
        assert!(r.passed(), "{}: {:?}", p.display(), r.invariants);
        assert!(r.timing.completed);
    }
}

#[test]
fn happy_path_decides_twenty_heights_without_round_changes() {
    let r = run_scenario(&load("happy_4.toml"), None).unwrap();
    assert_eq!(r.timing.decided_at.len(), 20);
    assert_eq!(r.sim.stats.timeouts_sent, 0);
    assert_eq!(r.sim.stats.freezes_formed, 0);
}

#[test]
fn every_silent_turn_ends_in_a_freeze() {
    let sc = load("byz_leader_4.toml");
    for seed in 0..10 {
        let r = run(&sc.setup(Some(seed))).unwrap();
        let frozen: BTreeSet<(u64, u64)> = r
            .events
            .iter()
            .filter_map(|e| match e.event {
                NodeEvent::FreezeFormed { height, frozen, .. } => Some((height, frozen)),
                _ => None,
            })
            .collect();
        let silent: BTreeSet<(u64, u64)> = r
            .events
            .iter()
            .filter_map(|e| match e.event {
                NodeEvent::HeightStarted { height, round } if height <= r.heights => Some((height, round)),
                _ => None,
            })
            .filter(|(h, round)| {
                let p = r.producers_at(*h);
                p[(*round % p.len() as u64) as usize] == ActorId(1)
            })
            .collect();
        assert!(!silent.is_empty());
        assert!(silent.is_subset(&frozen), "seed {seed}: {:?}", silent.difference(&frozen).collect::<Vec<_>>());
    }
}

#[test]
fn silent_leader_sweep_keeps_every_invariant() {
    let seeds: Vec<u64> = (0..100).collect();
    let r = sweep(&load("byz_leader_4.toml"), &seeds, 0).unwrap();
    assert!(r.all_passed(), "{:?}", r.failures);
    assert_eq!(r.passed["agreement"], 100);
    assert_eq!(r.passed["termination"], 100);
}

#[test]
fn nothing_decides_before_gst_under_the_adversarial_schedule() {
    let sc = load("async_until_gst.toml");
    let r = run_scenario(&sc, None).unwrap();
    assert!(r.passed(), "{:?}", r.invariants);
    assert!(r.timing.decided_at.iter().all(|t| *t >= sc.sim.gst));
}

#[test]
fn equivocation_is_slashed() {
    let r = run_scenario(&load("equivocator.toml"), None).unwrap();
    assert!(r.passed());
    let equivocator = r.sim.actor(ActorId(2)).unwrap();
    assert!(equivocator.income.slashed > 0);
    assert!(!r.sim.producers_at(r.sim.heights).contains(&ActorId(2)));
}
