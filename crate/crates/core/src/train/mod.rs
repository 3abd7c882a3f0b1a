//! Optimiser, schedules and the training loops.

pub mod loops;
pub mod optim;

pub use loops::{
    finetune, head_outputs, pooled_features, pretrain, pretrain_step, FinetuneMode, FinetuneRow, PretrainRow, StepStats, TrainConfig, BASELINE_KEY,
    TRACE_FILE,
};
pub use optim::{clip_global_norm, lr_at, AdamW, AdamWConfig, ScheduleConfig};
