//! Desk-scale gradient source: a tiny MLP with exact per-sample gradients,
//! datasets, evaluation and gradient-noise injection.

mod data;
mod mlp;
mod noise;

pub use data::{
    read_csv_dataset, read_idx_dataset, read_idx_images, read_idx_labels, synth_dataset, write_csv_dataset,
    BlobSpec, Dataset, Split, TRAIN_FRACTION,
};
pub use mlp::{
    evaluate, forward_loss, param_count, per_sample_gradients, train, train_with_history, Activation, Evaluation,
    LayerLayout, TinyMlp, TrainConfig,
};
pub use noise::{inject_noise, inject_noise_with_report, matrix_std, NoiseReport, NoiseSpec};
