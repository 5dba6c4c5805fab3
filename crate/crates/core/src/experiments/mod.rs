//! Online regime-shift training with optional regularizers, post-shift loss
//! ratios, matched-seed benchmarks, α sweeps, and attractor synthesis.

mod bench;
mod optim;
mod ratio;
mod synth;
mod train;

pub use bench::{
    rows_csv, run_benchmark, run_grid, sweep_alpha, sweep_points, BenchRow, GridOutcome,
    SweepPoint, Variant, DEFAULT_ALPHA_GRID,
};
pub use optim::{Optimizer, OptimizerKind};
pub use ratio::{loss_ratio, quantile, summarize, RatioReport, RatioSummary};
pub use synth::{synthesis_loss, synthesize_attractor, SynthConfig, SynthOutcome};
pub use train::{
    step_loss, train_online, train_online_from, ExperimentResult, Regularizer, StepLoss,
    TrainConfig,
};
