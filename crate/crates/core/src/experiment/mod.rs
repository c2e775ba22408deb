//! Config-driven experiment runs and their on-disk outputs.

pub mod config;
pub mod manifest;
pub mod run;

pub use config::{
    ExperimentConfig, ExperimentKind, OracleCheckConfig, RandomProbeConfig, TeachConfig, TokenDistillRun,
    ToySweepConfig, VarianceProbeConfig, SCHEMA_VERSION,
};
pub use manifest::{write_outputs, FileDigest, RunManifest};
pub use run::{oracle_identities, run_experiment, toy_sweep, IdentityCheck, RunOutput, SweepRun, ToySweepResult};
