//! Grid-field files, datasets, normalization, and synthetic data.

mod dataset;
mod grid;
mod import;
mod norm;
mod synth;

pub use dataset::{
    date_gaps, Dataset, Split, SplitBounds, DEFAULT_TRAIN_FRACTION, DEFAULT_VAL_FRACTION,
};
pub use grid::{
    read_grid, write_grid, ChannelInfo, GridField, LatLonGrid, GRID_FORMAT_VERSION, GRID_MAGIC,
};
pub use import::{import_raw, import_raw_bytes, RawManifest};
pub use norm::NormStats;
pub use synth::{synth_generate, SynthConfig};
