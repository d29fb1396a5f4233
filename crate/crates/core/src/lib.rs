//! Simulation laboratory for covariate-adaptive randomization in
//! time-to-event trials.
//!
//! - [`strata`]: factor-level lattice, stratum coding, covariate sampling
//! - [`randomization`]: Pocock-Simon minimization and reference procedures
//! - [`theory`]: exact equal-prevalence correlation matrix and its spectrum
//! - [`mc_lab`]: Monte Carlo covariance of normalized within-stratum imbalances
//! - [`survival_sim`]: exponential survival trials with censoring
//! - [`inference`]: log-rank, score and robust tests
//! - [`experiment`]: replicated calibration studies

pub mod error;
pub mod experiment;
pub mod inference;
pub mod linalg;
pub mod mc_lab;
pub mod published;
pub mod randomization;
pub mod rng;
pub mod strata;
pub mod survival_sim;
pub mod theory;

pub use error::{Error, Result};
pub use experiment::{NamedTest, Scenario, ScenarioResult, TestSpec, TestSummary};
pub use inference::{Partition, RobustOptions, TestKind, TestReport, WorkingModel};
pub use mc_lab::CovEstimate;
pub use randomization::{Allocator, Arm, ImbalanceMeasure, ProcedureConfig};
pub use rng::{stream, Domain, SimRng};
pub use strata::{FactorSpec, StratumIndex};
pub use survival_sim::{HazardModel, SubjectRecord, TrialDataset, TrialDesign, TrialSetup};
pub use theory::{CorrelationSpec, SpectrumReport};
