//! Experiment harness: configuration, episode sampling, optimization,
//! training, evaluation and reports.

mod config;
mod episode;
mod evaluate;
mod gradsuite;
mod optim;
mod pipeline;
mod report;
mod train;

pub use config::{DataSource, EvalConfig, ExperimentConfig, Objective};
pub use episode::{sample_batch, sample_episode, EpisodeSpec, RawEpisode};
pub use evaluate::{
    attention_stats, evaluate, evaluate_trials, sign_test_p, AttentionStats, MetricsRow,
    MetricsTable, TrialConfig,
};
pub use gradsuite::{gradient_suite, render_suite, SuiteResult, SUITE_OPS};
pub use optim::{sgd_step, LrSchedule, OptimizerConfig, ScheduleEvent, SgdState};
pub use pipeline::{backward_utterance, embed, forward_utterance, UtteranceForward};
pub use report::{load_data, train, train_and_evaluate, RunReport, TrainOutcome};
pub use train::{StepRecord, Trainer};
