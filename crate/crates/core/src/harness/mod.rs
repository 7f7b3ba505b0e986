//! Experiment harness: configuration, the episodic learning loop, verification suites and
//! learning curves.

mod checks;
mod config;
mod curves;
mod learn;

pub use checks::{
    grad_check, oracle_check, oracle_check_perturbed, random_gp_model, random_system, CheckReport, CheckRow, GradSubject,
    OracleSubject, RandomSystem, MIN_ORACLE_SAMPLES, ORACLE_Z_LIMIT,
};
pub use config::{ExperimentConfig, ModelFitConfig, PolicyConfig, PolicyVariant, SCHEMA_VERSION};
pub use curves::{curve_label, curve_tsv, emit_curves, learning_curve, load_records, CurvePoint};
pub use learn::{learn, learn_seed, EpisodeRecord, LearningRecord, SeedRun};
