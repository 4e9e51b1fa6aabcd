//! Exact policy-gradient analysis on finite-horizon tabular MDPs.
//!
//! Everything is computed by dynamic programming over the full state space:
//! values, visitation probabilities, their θ-gradients, the discounted
//! approximation `∇̂_γ` and its error vector `e = ∇J - ∇̂_γ`. The optimizer
//! anneals γ toward one along a step-size schedule; the [`lab`] module turns
//! the underlying identities into falsifiable numerical checks.

pub mod analysis;
pub mod envs;
pub mod error;
pub mod lab;
pub mod mdp;
pub mod optimizer;
pub mod policy;
pub mod sampler;
pub mod schedule;

pub use analysis::{analyze, objective, true_gradient, Analysis, GradientReport};
pub use error::{Error, Result};
pub use mdp::{AbsorbingMdp, Mdp, MdpTables, ValidationReport};
pub use optimizer::{run, Estimator, Mode, RunConfig, Summary, Trace, TraceRow};
pub use policy::{ParamTable, PolicyParams};
pub use schedule::{CoupledSchedule, ScheduleSpec, StepFamily, StepSchedule};
