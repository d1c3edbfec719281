//! Estimation of the proportion of treatment effect explained by a surrogate
//! marker in two-arm trials where the surrogate is missing for some patients.
//!
//! Two PTE estimators are provided: a parametric one built on the interaction
//! regression `E(Y | Z, S)` ([`parametric`]) and a kernel-based nonparametric
//! one ([`nonparametric`]). Each can be computed on complete cases, with
//! inverse probability weights ([`ipw`]), or — for the parametric estimator —
//! by semiparametric maximum likelihood ([`smle`]). Standard errors and
//! intervals come from a stratified bootstrap ([`bootstrap`]), and [`sim`]
//! regenerates the simulation settings used to benchmark the methods.

pub mod bootstrap;
pub mod data;
pub mod error;
pub mod ipw;
pub mod nonparametric;
pub mod parametric;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod smle;

pub use bootstrap::{bootstrap_inference, BootstrapResult, PerEstimand};
pub use data::{load_trial_csv, read_trial_csv, Arm, EstimandSet, PatientRecord, TrialData};
pub use error::{ErrorClass, PteError, Result};
pub use pipeline::{Correction, EstimatorKind, PipelineConfig, PipelineFit, WeightSpec};
