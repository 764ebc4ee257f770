use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::ActorId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("producer set is empty")]
    Empty,
    #[error("n > 3f required (n = {n}, f = {f})")]
    TooManyFaults { n: usize, f: usize },
}

/// Smallest quorum whose pairwise intersections contain `f + 1` members.
/// Equals `2f + 1` when `n = 3f + 1`.
pub fn quorum_size(n: usize, f: usize) -> usize {
    (n + f + 2) / 2
}

/// Round-robin leader rotation over the active producer queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderSchedule {
    producers: Vec<ActorId>,
    f: usize,
}

impl LeaderSchedule {
    pub fn new(producers: Vec<ActorId>, f: usize) -> Result<Self, ScheduleError> {
        if producers.is_empty() {
            return Err(ScheduleError::Empty);
        }
        if producers.len() <= 3 * f {
            return Err(ScheduleError::TooManyFaults {
                n: producers.len(),
                f,
            });
        }
        Ok(Self { producers, f })
    }

    /// Schedule derived at runtime from the chain. An evicted producer counts
    /// against the fault bound, so `f` is clamped to what the remaining
    /// membership can tolerate.
    pub fn from_membership(producers: Vec<ActorId>, f: usize) -> Result<Self, ScheduleError> {
        if producers.is_empty() {
            return Err(ScheduleError::Empty);
        }
        let f = f.min((producers.len() - 1) / 3);
        Ok(Self { producers, f })
    }

    pub fn producers(&self) -> &[ActorId] {
        &self.producers
    }

    pub fn n(&self) -> usize {
        self.producers.len()
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn quorum(&self) -> usize {
        quorum_size(self.n(), self.f)
    }

    pub fn timeout_threshold(&self) -> usize {
        self.f + 1
    }

    pub fn contains(&self, a: ActorId) -> bool {
        self.producers.contains(&a)
    }

    pub fn leader_of(&self, round: u64) -> ActorId {
        self.producers[(round % self.producers.len() as u64) as usize]
    }
}

pub fn leader_of(schedule: &LeaderSchedule, round: u64) -> Result<ActorId, ScheduleError> {
    if schedule.producers.is_empty() {
        return Err(ScheduleError::Empty);
    }
    Ok(schedule.leader_of(round))
}
