//! Loss terms, optimizer, augmentations and the training driver.

mod adam;
mod augment;
mod loss;
pub mod sequence;
mod trainer;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use augment::{augment_gaussian_noise, augment_sensor_shift};
pub use loss::{
    mse_loss, mse_loss_at, mse_loss_tape, mse_vector, penalty_c1, penalty_c1_tape, penalty_c2, penalty_c2_tape,
    LossConfig, SensorReadings,
};
pub use sequence::SequenceGru;
pub use trainer::{
    select_best, train, train_from, train_seeds, LossTrend, Model, Phase, SeedSweep, TrainData, TrainOutcome, TrainSchedule,
    Variant,
};
