//! Tabular robust Markov decision processes under L1, chi-square and KL
//! ambiguity sets: inner worst-case solvers, robust value iteration and
//! bisection, model estimation from samples, asymptotic confidence intervals,
//! closed-form bounds and the Monte-Carlo experiment harness.

pub mod ambiguity;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod mdp;
pub mod sampling;
pub mod solvers;
pub mod theory;

pub use ambiguity::{
    AmbiguitySpec, Divergence, DualSolution, Rectangularity, WorstCaseDistribution,
};
pub use error::{Error, Result};
pub use mdp::{Policy, PolicyKind, QFunction, TabularMdp, ValueFunction};
