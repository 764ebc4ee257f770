//! Paired-seed deviation experiments: the same run with one actor compliant
//! and with it deviating, compared by that actor's utility.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::utility::{compute_utility, UtilityWeights};
use super::StrategySpec;
use crate::simnet::{run, ConfigError, SimSetup};
use crate::types::ActorId;

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationExperiment {
    /// Everyone but the deviant keeps the strategy given here.
    pub base: SimSetup,
    pub deviant: ActorId,
    pub deviant_strategy: StrategySpec,
    pub seeds: Vec<u64>,
    pub epsilon: f64,
    pub weights: UtilityWeights,
    pub min_seeds: usize,
}

impl DeviationExperiment {
    pub fn new(base: SimSetup, deviant: ActorId, deviant_strategy: StrategySpec, seeds: Vec<u64>) -> Self {
        DeviationExperiment {
            base,
            deviant,
            deviant_strategy,
            seeds,
            epsilon: 1e-9,
            weights: UtilityWeights::default(),
            min_seeds: 20,
        }
    }

    /// The setup for one seed, with the deviant playing `strategy`.
    pub fn setup(&self, seed: u64, strategy: &StrategySpec) -> SimSetup {
        let mut s = self.base.clone();
        s.config.seed = seed;
        s.strategies.insert(self.deviant, strategy.clone());
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPair {
    pub seed: u64,
    pub compliant: f64,
    pub deviant: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    /// No profitable deviation found over the seeds tried.
    Pass,
    Fail,
    /// A run ended at `max_sim_time` before reaching its heights.
    Inconclusive { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub deviant: ActorId,
    pub strategy: StrategySpec,
    pub verdict: Verdict,
    pub mean_gap: f64,
    pub epsilon: f64,
    pub pairs: Vec<SeedPair>,
}

enum Outcome {
    Pair(SeedPair),
    Incomplete(u64),
}

/// Runs each seed twice, compliant and deviating, in parallel across seeds.
pub fn check_equilibrium(exp: &DeviationExperiment) -> Result<EquilibriumReport, ConfigError> {
    if exp.seeds.len() < exp.min_seeds {
        return Err(ConfigError::Invalid(format!(
            "equilibrium experiments need at least {} seeds, got {}",
            exp.min_seeds,
            exp.seeds.len()
        )));
    }
    exp.weights.validate().map_err(ConfigError::Invalid)?;
    if exp.deviant.0 as usize >= exp.base.config.n {
        return Err(ConfigError::Invalid(format!("deviant {} is not a producer", exp.deviant)));
    }
    exp.setup(0, &exp.deviant_strategy).validate()?;
    let outcomes: Vec<Result<Outcome, ConfigError>> = exp
        .seeds
        .par_iter()
        .map(|&seed| {
            let base = run(&exp.setup(seed, &StrategySpec::Compliant))?;
            let dev = run(&exp.setup(seed, &exp.deviant_strategy))?;
            if !base.completed || !dev.completed {
                return Ok(Outcome::Incomplete(seed));
            }
            let u = |r| compute_utility(r, &exp.weights, exp.deviant).map_err(|e| ConfigError::Invalid(e.to_string()));
            let (c, d) = (u(&base)?, u(&dev)?);
            Ok(Outcome::Pair(SeedPair {
                seed,
                compliant: c,
                deviant: d,
                gap: d - c,
            }))
        })
        .collect();
    let mut pairs = Vec::new();
    let mut inconclusive = None;
    for o in outcomes {
        match o? {
            Outcome::Pair(p) => pairs.push(p),
            Outcome::Incomplete(seed) => {
                inconclusive.get_or_insert(seed);
            }
        }
    }
    let mean_gap = if pairs.is_empty() {
        0.0
    } else {
        pairs.iter().map(|p| p.gap).sum::<f64>() / pairs.len() as f64
    };
    let verdict = match inconclusive {
        Some(seed) => Verdict::Inconclusive { seed },
        None if mean_gap <= exp.epsilon => Verdict::Pass,
        None => Verdict::Fail,
    };
    Ok(EquilibriumReport {
        deviant: exp.deviant,
        strategy: exp.deviant_strategy.clone(),
        verdict,
        mean_gap,
        epsilon: exp.epsilon,
        pairs,
    })
}
