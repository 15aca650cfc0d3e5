//! Inverse classification under per-feature budgets: choose as many samples
//! as possible and perturb them into a desired class with a margin, without
//! any feature's total squared perturbation exceeding its budget.

pub mod classifier;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod numkit;
pub mod problem;
pub mod repair;
pub mod solvers;

pub use classifier::{Classifier, ModelFile, ModelKind, TrainConfig, TrainedModel};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use problem::{Metrics, PerturbProblem, ProblemFile, SequenceGroups};
pub use repair::{finalize, knapsack_select, Finalized};
pub use solvers::{solve, solve_with, HyperParams, SolveOptions, SolverKind, SolverState};
pub use ndarray;
