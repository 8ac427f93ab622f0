//! Experiment harness: datasets, recording-level verdicts and metrics.

pub mod experiment;
mod metrics;

use thiserror::Error;

pub use experiment::{
    evaluate, run_experiment, AucGranularity, Dataset, ExperimentPlan, Report, ReportRow, Workspace, REPORT_HEADER,
};
pub use metrics::{auc, classify, first_alarm_in_window, metrics, ConfusionCounts, Metrics, OracleVerdict, Outcome, RecordingFacts};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("AUC needs at least one positive and one negative score")]
    EmptyClass,
    #[error("NaN score")]
    NanScore,
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("missing prerequisite: {what}; run `mrmon {step}` first")]
    Missing { what: String, step: &'static str },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Monitor(#[from] crate::monitor::MonitorError),
    #[error(transparent)]
    Baseline(#[from] crate::baselines::BaselineError),
    #[error(transparent)]
    Mutate(#[from] crate::mutate::MutateError),
}
