//! Configuration and end-to-end pipelines: dataset preparation, training,
//! encoding, evaluation, gradient checks and parameter sweeps.

mod config;
mod pipeline;
mod sweep;

pub use config::{DatasetSource, ExperimentConfig, CONFIG_KEYS};
pub use pipeline::{
    build_dataset, encode_split, encode_subset, evaluate_split, prepare, run, run_to_dir, EncodedSplit, Prepared,
    RunOutput, SplitFile, CONFIG_FILE, LOSS_FILE, MODEL_FILE, RESULTS_FILE, SPLIT_FILE,
};
pub use sweep::{save_sweep_csv, sweep, write_sweep_csv, SweepParam, SweepRow};
