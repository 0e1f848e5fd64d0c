//! Detection of the switch point between two Markov regimes.
//!
//! A sequence is observed that follows one Markov transition law up to an
//! unobservable geometric change time and another from it onward. This
//! crate solves for the stopping rule that maximizes the probability of
//! stopping within a fixed window `[-d1, +d2]` of the change time, runs it
//! online over streams, and verifies every formula against an independent
//! brute-force oracle at desk scale.
//!
//! Module map:
//! - [`model`]: prior, kernels, precision window, path sampling.
//! - [`likelihood`]: window likelihoods, joint density, predictive kernel,
//!   detection statistic (all log-space).
//! - [`posterior`]: the filtered change probability in every form used.
//! - [`solver`]: value iteration for the stopping threshold and the problem
//!   value.
//! - [`detector`]: online execution of the rule over observation streams.
//! - [`oracle`]: exact enumeration, conditionals, rule values, truncated
//!   backward induction.
//! - [`gates`]: the per-formula verification harness.
//! - [`monte_carlo`]: seeded simulation of the detector's success rate and
//!   rule comparisons.

pub mod budget;
pub mod detector;
pub mod error;
pub mod float_serde;
pub mod gates;
pub mod likelihood;
pub mod model;
pub mod monte_carlo;
pub mod oracle;
pub mod posterior;
pub mod rng;
pub mod solver;

pub use detector::{
    new_detector, run_to_decision, Decision, DetectionReport, Detector, DetectorFactory,
};
pub use error::{Error, Result};
pub use model::{
    prior_pmf, sample_path, sample_theta, transition_density, validate_model, DisorderModel,
    MarkovKernel, Path, PrecisionWindow, PriorParams, Regime, StateId,
};
pub use posterior::PosteriorState;
pub use solver::{
    iterate_threshold, problem_value, r0_table, solve_threshold, SolveDiagnostics, ThresholdTable,
};
