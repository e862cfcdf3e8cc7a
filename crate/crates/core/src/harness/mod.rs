//! Experiment harness: presets, data loaders, metrics and the sweep runner.

mod csvload;
mod experiment;
mod metrics;
mod mnist;
mod presets;

pub use csvload::{load_csv_partitioned, train_test_split, CsvDataset, PartitionSpec, TargetEncoding};
pub use experiment::{
    emit_results, load_results_json, mean_std, parse_config, parse_results_csv, run_experiment, summarize,
    thread_cap, train_method, CellFailure, CellSummary, DataSource, ExperimentConfig, Method, MethodOutcome,
    Overrides, ResultFormat, ResultRow, ResultsBundle, TrainedModel, RESULTS_HEADER, THREADS_ENV,
};
pub use metrics::{bias_to_noise_free, metric_eval, mse_to_noise_free, normalized_roc_auc, roc_auc, MetricKind};
pub use mnist::{
    downscale_28_to_7, downscale_batch, load_mnist, load_mnist_dir, mnist_available, read_idx_images,
    read_idx_labels, Mnist, IMAGE_MAGIC, LABEL_MAGIC, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
};
pub use presets::{gradient_suite, preset, GradcheckRow, Preset, GRADCHECK_ROWS, GRADCHECK_STEP, PRESET_NAMES};
