//! Optimization loop, metrics and the band ablation harness.

mod ablation;
mod batch;
mod metrics;
mod trainer;

pub use ablation::{ablate, AblationRow, AblationTable};
pub use metrics::{auto_pos_weight, evaluate, iou, Metrics};
pub use trainer::{train, train_step, EpochRecord, Hyperparams, PlateauTracker, PosWeight, TrainReport, VAL_THRESHOLD};
