//! End-to-end rate-distortion training.

pub mod config;
pub mod data;
pub mod step;
pub mod train;

pub use config::{parse_kv, Conditioning, Metric, Schedule, TrainConfig};
pub use data::{synthetic_image, Dataset};
pub use step::{loss_total, sample_rate_points, train_sample, ConditioningTrace, Perturbation, SampleOutput};
pub use train::{ablate, evaluate, smoothed_loss, train, AblationRun, Evaluation, LogRecord, TrainOutput};
