//! Baseline solvers, SNR calibration, configuration and experiment sweeps.

pub mod baseline;
pub mod calibrate;
pub mod config;
pub mod sweep;

pub use baseline::{baseline_fit, AdamOptions, BaselineFit, BaselineOptions};
pub use calibrate::{calibrate_snr, oracle_error_rate};
pub use config::{BetaScale, Config, InputPenalty, ProblemSpec};
pub use sweep::{
    closed_form_prediction, run_sweep, se_prediction, write_rows_csv, write_summary_csv, ClosedFormKind, Metric,
    Solver, SweepPlan, SweepResult, SweepRow, SweepSummary, TrialStatus, CSV_HEADER,
};
