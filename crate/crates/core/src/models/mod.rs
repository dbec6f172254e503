//! Residual restoration networks: architectures, dataset synthesis,
//! training, inference and evaluation.

mod arch;
mod data;
mod eval;
mod infer;
mod train;

pub use arch::{build_arch, ArchKind, ArchSpec, WAVELET_CHANNELS, WAVELET_LEVELS};
pub use data::{
    make_dataset, phantom_seed, prepare_sample, sample_patches, simulate, DatasetConfig, DatasetManifest, ManifestEntry, Pair, Sample,
    Simulation, Split, MANIFEST_FILE,
};
pub use eval::{evaluate, evaluate_pairs, Method, MetricsTable, ModelSet};
pub use infer::{
    apply_image_residual, apply_wavelet_residual, infer_image, infer_wavelet, zero_output_layer, CheckpointMeta, Model, RngState,
    CHECKPOINT_FORMAT,
};
pub use train::{log_csv, train, train_pairs_with, train_with, EpochLog, TrainConfig, TrainReport};
