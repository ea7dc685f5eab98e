//! Optimization, metrics, checkpoints and the supervised training loop.

mod checkpoint;
mod metrics;
mod optim;
mod trainer;

pub use checkpoint::{Checkpoint, CheckpointKind, EpochRecord, CHECKPOINT_VERSION};
pub use metrics::{
    evaluate_pair, psnr, ssim, MetricsReport, SampleMetrics, PSNR_CAP_DB, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW,
};
pub use optim::{AdamW, AdamWConfig, PlateauConfig, PlateauScheduler};
pub use trainer::{evaluate_network, input_metrics, stack, PerceptualKind, TrainConfig, Trainer};
