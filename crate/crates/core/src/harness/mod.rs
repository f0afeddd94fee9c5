//! Synthetic experiments: data generation, hold-out model selection,
//! metrics, repeated trials and learning-curve sweeps.

pub mod cv;
pub mod experiment;
pub mod metrics;
pub mod synth;

pub use cv::{holdout_cv, CvConfig, CvScore, CvSelection, LogGrid};
pub use experiment::{
    rate_sweep, rate_sweep_with, run_experiment, ExperimentConfig, ExperimentReport, Method, RateRow, RateSweepConfig,
    SweepHyper, TestTarget, TrialResult,
};
pub use metrics::{explained_variance, mse, Summary};
pub use synth::{gen_synthetic, VvrDataset};
