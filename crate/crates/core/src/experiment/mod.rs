//! Config-driven experiment runs and their persisted results.

mod config;
mod records;
mod run;

pub use config::{
    AttackSection, BaselineSection, DataSection, DpSection, ExperimentConfig, RunSection, TrainSection, VocabSetting,
    DEFAULT_MAX_SAMPLES, DEFAULT_REPETITIONS, DEFAULT_SEED, DEFAULT_TRAIN_FRACTION,
};
pub use records::{
    comparison_table, mean_std, merge_records, persist, read_records, sort_records, summarize, summary_table,
    write_records, ResultRecord, SummaryRow, RESULTS_FILE, SUMMARY_FILE,
};
pub use run::{
    check_seed, epoch_lines, AttackRun, BaselineRun, Experiment, RepetitionOutcome, CHECKPOINT_FILE, CONFIG_COPY_FILE,
    INCOMPLETE_MARKER, TRAIN_LOG_FILE,
};
