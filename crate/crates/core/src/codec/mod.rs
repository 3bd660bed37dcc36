//! Encoder, decoder, experimental presets and the RD evaluation harness.

mod bitstream;
mod config;
mod plot;
mod preset;
mod sweep;

pub use bitstream::{
    decode, decode_voxels, encode, read_header, BitAccounting, BlockReport, EncodeOptions, Encoded,
    Header, HEADER_BYTES, MAGIC, RECORD_PREFIX_BYTES, VERSION,
};
pub use config::{parse_config, read_config};
pub use plot::render_rd_svg;
pub use preset::{ConditionPreset, Thresholding, TrainingMode, PRESETS};
pub use sweep::{
    bd_matrix, evaluate_cloud, parse_sweep_csv, rd_sweep, run_condition_suite, train_condition,
    with_normals, BdMatrix, CloudEvaluation, RdSweep, SuiteConfig, SuiteReport, SweepPoint,
};
