//! Discrete-event execution of a process model.

mod arrivals;
mod engine;
mod state;
mod stats;
mod trace;

pub use arrivals::ArrivalProcess;
pub use engine::{run_episode, run_episode_with, SimOptions, Simulation, Step, DEFAULT_HORIZON};
pub use state::{ActivityInstance, Assignment, Case, CaseId, Event, ExecutionState, InstanceId, InstanceState, Lifecycle};
pub use stats::EpisodeStats;
pub use trace::{write_stats, write_trace};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("assignment of instance {instance} to resource {resource} is not possible")]
    InfeasibleAssignment { resource: usize, instance: usize },
    #[error("invalid model: {0}")]
    InvalidModel(#[from] ModelError),
}
