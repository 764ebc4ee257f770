//! Scenario files and the runs built from them: single runs with invariant
//! checks, seed sweeps and deviation experiments.

mod invariants;

pub use invariants::{
    check_agreement, check_all, check_eventual_join, check_no_false_punishment, check_termination, check_validity,
    punished_compliant, CheckResult, InvariantResults,
};

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::membership::Incentives;
use crate::simnet::{run, ConfigError, SimConfig, SimReport, SimSetup, Workload};
use crate::strategies::{
    check_equilibrium, utility_ledger, DeviationExperiment, EquilibriumReport, StrategyClass, StrategySpec,
    UtilityLedger, UtilityWeights, Verdict,
};
use crate::types::ActorId;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One actor's strategy. Written flat in TOML: `id`, `strategy` and the
/// strategy's own parameters side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorEntry {
    pub id: ActorId,
    pub strategy: StrategySpec,
}

fn split_table<E: serde::de::Error>(
    mut table: toml::Table,
    keys: &[&str],
) -> Result<(BTreeMap<String, toml::Value>, StrategySpec), E> {
    let mut own = BTreeMap::new();
    for k in keys {
        if let Some(v) = table.remove(*k) {
            own.insert(k.to_string(), v);
        }
    }
    let spec = StrategySpec::deserialize(toml::Value::Table(table)).map_err(|e| E::custom(e.message().to_string()))?;
    Ok((own, spec))
}

fn take<T: serde::de::DeserializeOwned, E: serde::de::Error>(
    own: &mut BTreeMap<String, toml::Value>,
    key: &'static str,
) -> Result<Option<T>, E> {
    own.remove(key)
        .map(|v| v.try_into().map_err(|e: toml::de::Error| E::custom(format!("{key}: {}", e.message()))))
        .transpose()
}

fn flat_json(extra: Vec<(&str, serde_json::Value)>, spec: &StrategySpec) -> serde_json::Value {
    let mut v = serde_json::to_value(spec).expect("strategy serializes");
    if let serde_json::Value::Object(m) = &mut v {
        for (k, x) in extra {
            m.insert(k.to_string(), x);
        }
    }
    v
}

impl<'de> Deserialize<'de> for ActorEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let table = toml::Table::deserialize(d)?;
        let (mut own, strategy) = split_table::<D::Error>(table, &["id"])?;
        let id = take(&mut own, "id")?.ok_or_else(|| serde::de::Error::missing_field("id"))?;
        Ok(ActorEntry { id, strategy })
    }
}

impl Serialize for ActorEntry {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        flat_json(vec![("id", self.id.0.into())], &self.strategy).serialize(s)
    }
}

/// Seeds as `"A..B"` (half open) or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

impl Seeds {
    pub fn parse_range(s: &str) -> Result<Range<u64>, String> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| format!("seed range `{s}` is not of the form A..B"))?;
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range start `{a}`"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range end `{b}`"))?;
        if b < a {
            return Err(format!("seed range `{s}` ends before it starts"));
        }
        Ok(a..b)
    }
}

impl<'de> Deserialize<'de> for Seeds {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Range(String),
            List(Vec<u64>),
        }
        match Raw::deserialize(d)? {
            Raw::Range(s) => Seeds::parse_range(&s)
                .map(|r| Seeds(r.collect()))
                .map_err(serde::de::Error::custom),
            Raw::List(v) => Ok(Seeds(v)),
        }
    }
}

impl Serialize for Seeds {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

/// A deviation experiment as written in a scenario: `deviant`, `seeds`,
/// optional `epsilon` and `min_seeds`, plus the deviant's strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub deviant: ActorId,
    pub strategy: StrategySpec,
    pub seeds: Seeds,
    pub epsilon: f64,
    pub min_seeds: usize,
}

impl<'de> Deserialize<'de> for ExperimentSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let table = toml::Table::deserialize(d)?;
        let (mut own, strategy) = split_table::<D::Error>(table, &["deviant", "seeds", "epsilon", "min_seeds"])?;
        Ok(ExperimentSpec {
            deviant: take(&mut own, "deviant")?.ok_or_else(|| serde::de::Error::missing_field("deviant"))?,
            seeds: take(&mut own, "seeds")?.unwrap_or_else(|| Seeds((0..20).collect())),
            epsilon: take(&mut own, "epsilon")?.unwrap_or(1e-9),
            min_seeds: take(&mut own, "min_seeds")?.unwrap_or(20),
            strategy,
        })
    }
}

impl Serialize for ExperimentSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let extra = vec![
            ("deviant", self.deviant.0.into()),
            ("seeds", serde_json::to_value(&self.seeds.0).expect("seeds")),
            ("epsilon", self.epsilon.into()),
            ("min_seeds", self.min_seeds.into()),
        ];
        flat_json(extra, &self.strategy).serialize(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub sim: SimConfig,
    #[serde(default)]
    pub incentives: Incentives,
    #[serde(default)]
    pub utility: UtilityWeights,
    #[serde(default)]
    pub workload: Workload,
    #[serde(default)]
    pub actors: Vec<ActorEntry>,
    #[serde(default)]
    pub experiments: Vec<ExperimentSpec>,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Hard errors only; see [`Scenario::warnings`] for the rest.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let setup = self.setup(None);
        setup.validate()?;
        self.utility.validate().map_err(ScenarioError::Invalid)?;
        let mut seen = BTreeMap::new();
        for a in &self.actors {
            if seen.insert(a.id, ()).is_some() {
                return Err(ScenarioError::Invalid(format!("actors: {} listed twice", a.id)));
            }
        }
        for (i, e) in self.experiments.iter().enumerate() {
            if e.deviant.0 as usize >= self.sim.n {
                return Err(ScenarioError::Invalid(format!(
                    "experiments[{i}].deviant: {} is not one of the {} producers",
                    e.deviant, self.sim.n
                )));
            }
            e.strategy
                .validate()
                .map_err(|m| ScenarioError::Invalid(format!("experiments[{i}]: {m}")))?;
            if !(e.epsilon.is_finite() && e.epsilon >= 0.0) {
                return Err(ScenarioError::Invalid(format!("experiments[{i}].epsilon must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(w) = self.incentives.check_incentive_ordering(self.sim.n) {
            out.push(w);
        }
        let byz = self
            .actors
            .iter()
            .filter(|a| a.strategy.class() == StrategyClass::Byzantine)
            .count();
        if byz > self.sim.f {
            out.push(format!("{byz} Byzantine actors exceed f = {}; guarantees do not apply", self.sim.f));
        }
        for (i, j) in self.workload.joins.iter().enumerate() {
            let relays = if j.relays.is_empty() { self.sim.f + 1 } else { j.relays.len() };
            if relays <= self.sim.f {
                out.push(format!(
                    "workload.joins[{i}] uses {relays} relay(s); f + 1 = {} are needed to get past a Byzantine relay",
                    self.sim.f + 1
                ));
            }
        }
        out
    }

    pub fn setup(&self, seed: Option<u64>) -> SimSetup {
        let mut config = self.sim.clone();
        if let Some(s) = seed {
            config.seed = s;
        }
        SimSetup {
            config,
            incentives: self.incentives.clone(),
            workload: self.workload.clone(),
            strategies: self.actors.iter().map(|a| (a.id, a.strategy.clone())).collect(),
            trace: true,
        }
    }

    pub fn experiment(&self, spec: &ExperimentSpec) -> DeviationExperiment {
        let mut base = self.setup(None);
        base.trace = false;
        DeviationExperiment {
            base,
            deviant: spec.deviant,
            deviant_strategy: spec.strategy.clone(),
            seeds: spec.seeds.0.clone(),
            epsilon: spec.epsilon,
            weights: self.utility.clone(),
            min_seeds: spec.min_seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub end_time: u64,
    pub completed: bool,
    /// Earliest decision time of each canonical height, height 1 first.
    pub decided_at: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub warnings: Vec<String>,
    pub invariants: InvariantResults,
    pub utilities: Vec<UtilityLedger>,
    pub timing: Timing,
    pub sim: SimReport,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.invariants.all_passed()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Event trace as JSON lines.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.sim.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn run_scenario(sc: &Scenario, seed: Option<u64>) -> Result<RunReport, ScenarioError> {
    let setup = sc.setup(seed);
    let sim = run(&setup)?;
    let invariants = check_all(&sim);
    let utilities = sim
        .actors
        .iter()
        .filter(|a| (a.id.0 as usize) < setup.config.n + setup.workload.joins.len())
        .filter_map(|a| utility_ledger(&sim, &sc.utility, a.id).ok())
        .collect();
    let decided_at = (1..=sim.heights)
        .map(|h| {
            sim.actors
                .iter()
                .filter_map(|a| a.decided.iter().find(|d| d.height == h).map(|d| d.at))
                .min()
                .unwrap_or(0)
        })
        .collect();
    Ok(RunReport {
        scenario: sc.clone(),
        seed: setup.config.seed,
        warnings: sc.warnings(),
        invariants,
        utilities,
        timing: Timing {
            end_time: sim.end_time,
            completed: sim.completed,
            decided_at,
        },
        sim,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub failed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: String,
    pub seeds: Vec<u64>,
    /// Per invariant: runs that passed.
    pub passed: BTreeMap<String, usize>,
    pub failures: Vec<SeedFailure>,
    pub warnings: Vec<String>,
}

impl SweepReport {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every seed, in parallel on up to `jobs` threads (0 = all cores).
pub fn sweep(sc: &Scenario, seeds: &[u64], jobs: usize) -> Result<SweepReport, ScenarioError> {
    sc.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let results: Vec<Result<(u64, InvariantResults), ScenarioError>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_scenario(sc, Some(s)).map(|r| (s, r.invariants)))
            .collect()
    });
    let mut passed: BTreeMap<String, usize> = BTreeMap::new();
    let mut failures = Vec::new();
    for r in results {
        let (seed, inv) = r?;
        let mut failed = Vec::new();
        for (name, c) in inv.iter() {
            let slot = passed.entry(name.to_string()).or_default();
            if c.passed {
                *slot += 1;
            } else {
                failed.push(format!("{name}: {}", c.failures.first().cloned().unwrap_or_default()));
            }
        }
        if !failed.is_empty() {
            failures.push(SeedFailure { seed, failed });
        }
    }
    let mut warnings = sc.warnings();
    if seeds.is_empty() {
        warnings.push("empty seed range: nothing was run".into());
    }
    Ok(SweepReport {
        scenario: sc.name.clone(),
        seeds: seeds.to_vec(),
        passed,
        failures,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSummary {
    pub scenario: String,
    pub experiments: Vec<EquilibriumReport>,
    pub warnings: Vec<String>,
}

impl EquilibriumSummary {
    pub fn all_passed(&self) -> bool {
        self.experiments.iter().all(|e| e.verdict == Verdict::Pass)
    }

    pub fn any_inconclusive(&self) -> bool {
        self.experiments
            .iter()
            .any(|e| matches!(e.verdict, Verdict::Inconclusive { .. }))
    }
}

pub fn run_experiments(sc: &Scenario) -> Result<EquilibriumSummary, ScenarioError> {
    if sc.experiments.is_empty() {
        return Err(ScenarioError::Invalid("scenario declares no experiments".into()));
    }
    let experiments = sc
        .experiments
        .iter()
        .map(|e| check_equilibrium(&sc.experiment(e)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EquilibriumSummary {
        scenario: sc.name.clone(),
        experiments,
        warnings: sc.warnings(),
    })
}

#[cfg(test)]
mod tests;
