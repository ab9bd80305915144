//! End-to-end experiment driver: configuration, the composed model,
//! training, evaluation and ablations.

pub mod ablate;
pub mod check;
pub mod config;
pub mod metrics;
pub mod model;
pub mod train;

/// Corpus file names inside a data directory, in split order.
pub const CORPUS_FILES: [&str; 3] = ["train.jsonl", "test_iid.jsonl", "test_symmetric.jsonl"];

pub use ablate::{ablation_csv, run_ablation, write_ablation_csv, AblationSummary, Replicate, ABLATION_FILE};
pub use check::model_grad_check;
pub use config::{Ablation, RunConfig};
pub use metrics::{Metrics, MetricsRow};
pub use model::{predict, Prediction, Prepared};
pub use train::{
    build_dataset, evaluate, evaluate_checkpoint, load_checkpoint, load_or_generate, train, train_dataset, write_corpus, Dataset,
    TrainResult, CONFIG_FILE, METRICS_FILE,
};
