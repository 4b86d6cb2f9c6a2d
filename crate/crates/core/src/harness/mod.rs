//! Experiment pipeline: corpus, reverberant dataset, feature cache, training,
//! dereverberation, evaluation and reporting.

pub mod cache;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod dereverb;
pub mod evaluate;
pub mod report;
pub mod train;

pub use cache::{make_features, FeatureCache, FeatureEntry};
pub use config::{ExperimentConfig, ModelKind, RirSource, SnrSpec};
pub use corpus::{ensure_synthetic_corpus, ingest_corpus, Utterance};
pub use dataset::{generate_dataset, row_seed, DatasetManifest, ManifestRow, Split, MANIFEST_HEADER};
pub use dereverb::{Dereverberator, Method};
pub use evaluate::{aggregate, evaluate, evaluate_methods, AggregateRow, EvalOutcome, GroupBy};
pub use report::{build_report, report_from_csv, write_report, Report};
pub use train::{train, EpochRecord, TrainOutcome, TRAIN_LOG_HEADER};
