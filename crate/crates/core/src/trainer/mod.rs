//! Training loop, optimizer, checkpoints and full-image downscaling.

mod adam;
mod checkpoint;
mod config;
mod fit;

pub use adam::Adam;
pub use checkpoint::{
    downscale, load_checkpoint, load_train_state, save_checkpoint, Checkpoint, CheckpointMeta, ResumeInfo,
    CONFIG_FILE, HISTORY_FILE, NORM_FILE, STATE_DIR,
};
pub use config::{mask_schedule, AdamConfig, TrainConfig};
pub use fit::{
    evaluate, fit, patch_input, patch_loss, prepare_dataset, sample_gradients, train_step, BestSnapshot, Dataset,
    EpochRecord, FitOutcome, TrainState, Trainer,
};
