//! Paired SDR/HDR training data and image/dataset I/O.

mod dataset;
mod htvd;
mod ingest;
mod pairs;
mod png_io;
mod resample;
mod synth;

pub use dataset::{ConditionImage, PairedDataset, Patch, SourceInfo};
pub use htvd::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use ingest::ingest_pairs;
pub use pairs::{build_pairs, form_pair, synth_frame, tile_offsets};
pub use png_io::{decode_png, encode_png, read_png, write_png};
pub use resample::{condition_side, downsample_for_condition, CONDITION_ALIGN};
pub use synth::{synth_jitter, synth_raw, SynthConfig};
