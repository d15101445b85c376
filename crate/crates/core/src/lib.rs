//! Predictive probability (PP) and conditional power (CP) engines for
//! sequential reliability experiments.
//!
//! The quantity of interest is φ = P(s_l < Z < s_u), the probability that a
//! response lands inside its specification limits. A measure is met when the
//! posterior tail P(φ > φ₀ | data) exceeds θ_T. At each interim look the
//! runtime asks how likely the completed experiment is to meet the measure
//! and stops early when that probability leaves [θ_L, θ_U].
//!
//! Modules, bottom up:
//! - [`numeric`]: special functions, distributions, keyed random streams
//! - [`conjugate`]: Normal-Inverse-Gamma and Beta updates, posterior tails
//! - [`tail`]: deterministic quadrature for the NIG posterior tail
//! - [`dgm`]: data-generating mechanisms solved for a target φ
//! - [`pp`], [`cp`]: the two engines, plus alpha-spending boundaries
//! - [`trial`]: plans, looks, decisions, trajectories
//! - [`study`]: replicated studies, permutation and prior sensitivity

pub mod conjugate;
pub mod cp;
pub mod dgm;
pub mod error;
pub mod numeric;
pub mod pp;
pub mod study;
pub mod tail;
pub mod trial;

pub use conjugate::{BetaHyper, NigHyper, NormalSuffStats, SpecLimits};
pub use cp::{calibrate_boundaries, NullModel, SpendingPlan};
pub use dgm::{build_dgm, DgmFamily, DgmSpec};
pub use error::{Error, Result};
pub use numeric::{fingerprint, RandomStream};
pub use pp::{PpConfig, PpResult, TailMethod};
pub use study::{
    permutation_study, prior_sensitivity_grid, run_study, DataSource, PermutationSummary, StudyConfig, StudyMetrics,
    StudySpec,
};
pub use trial::{
    evaluate_interim, run_trial, Decision, EngineChoice, LookRecord, ModelSpec, PlanSpec, StopMode, TrajectoryRecord,
    TrialPlan, TrialRunner,
};
