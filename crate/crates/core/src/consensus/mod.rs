//! Round-robin three-phase commit with TIMEOUT/FREEZE round change.

pub mod chain;
pub mod messages;
pub mod round;
pub mod schedule;

pub use chain::{validate_chain, ChainValidation, ChainViolation};
pub use messages::*;
pub use round::*;
pub use schedule::{leader_of, quorum_size, LeaderSchedule, ScheduleError};
