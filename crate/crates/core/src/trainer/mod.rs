//! Experiment configuration, model assembly, the joint training step, the
//! early-stopped epoch loop and weight sweeps.

mod config;
mod fit;
mod model;
mod presets;
mod step;
mod sweep;
#[cfg(test)]
pub(crate) mod testutil;

pub use config::{
    parse_ablations, parse_pairs, split_override, unknown_key, Ablation, DataSource, ExperimentConfig, ModelMode,
    ValMetric, Variant, KEYS,
};
pub use fit::{
    fit, training_split, EarlyStopping, EpochLog, FitOptions, FitResult, TrainState, Verdict, BEST_CHECKPOINT,
    LOG_FILE, STATE_FILE,
};
pub use model::{ClardRec, ItemTable, ItemViews, ModelSpec};
pub use presets::{preset_text, PRESETS};
pub use step::{forward_losses, loss_and_gradients, loss_value, train_step, LossSettings};
pub use sweep::{grid, point_config, sweep, sweep_csv, thread_cap, SweepPoint, SweepRow, SWEEP_VALUES};
