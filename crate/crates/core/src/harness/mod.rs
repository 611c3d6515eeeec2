//! Configuration-driven Monte-Carlo runner.

pub mod config;
pub mod matching;
pub mod results;
pub mod sweep;

pub use config::{DeviceSection, ExperimentConfig, RunSection, SceneSection, SweepSection};
pub use matching::{match_angles, matched_sq_error_deg};
pub use results::{
    read_convergence, read_rows, sort_rows, write_convergence, write_rows, ConvergenceRow, ResultRow, SweepAxis,
    CONVERGENCE_HEADER, CRLB_LABEL, RESULT_HEADER,
};
pub use sweep::{
    aggregate, realize_trial, run_convergence, run_crlb_only, run_method, run_sweep, run_trial, sweep_points,
    trial_error, trial_rng, ConvergenceReport, SweepPoint, TrialError, TrialRecord,
};
