//! Search strategies over design points: exhaustive enumeration, simulated
//! annealing, and a deterministic rule-based optimiser.

mod annealing;
mod brute;
mod rule;

use num_bigint::BigUint;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::evaluation::ConstraintViolation;
use crate::hdgraph::{CutSet, DesignPoint, Folding};

pub use annealing::{
    anneal_restarts, annealing_decision, random_transform, simulated_annealing,
    temperature_schedule, AnnealingConfig, Candidate, Mutation, RestartSummary,
};
pub use brute::{brute_force, enumerate_node_foldings, DEFAULT_SPACE_CAP};
pub use rule::{optimise_partition, rule_based, RuleConfig};

#[derive(Debug, Error)]
pub enum OptimiseError {
    #[error("design space has {size} points, above the brute-force cap of {cap}")]
    SpaceTooLarge { size: BigUint, cap: u64 },
    #[error("no design point satisfies the constraints")]
    NoFeasiblePoint,
    #[error("even the resource-minimal design is infeasible: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InitialInfeasible(Vec<ConstraintViolation>),
    #[error("invalid optimiser configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub iteration: u64,
    /// Objective of the design held at this iteration.
    pub objective: f64,
    /// Best feasible objective seen so far.
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimiserResult {
    pub best_point: DesignPoint,
    pub best_objective: f64,
    pub trajectory: Vec<TrajectorySample>,
    pub wall_time_s: f64,
    pub evaluations: u64,
}

impl OptimiserResult {
    pub fn cuts(&self) -> &CutSet {
        &self.best_point.cutset
    }

    pub fn foldings(&self) -> Vec<Folding> {
        self.best_point.foldings()
    }

    /// Everything except wall-clock time; equal across reruns with the same inputs.
    pub fn fingerprint(&self) -> String {
        json!({
            "cuts": self.best_point.cutset,
            "foldings": self.best_point.foldings(),
            "best_objective": self.best_objective,
            "evaluations": self.evaluations,
            "trajectory": self.trajectory,
        })
        .to_string()
    }
}
