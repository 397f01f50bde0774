//! Datasets on disk, the synthetic generator, and batching.

pub mod dataset;
pub mod pnm;
pub mod synth;

pub use dataset::{batch_iter, flip_horizontal, load_dataset, save_dataset, Batch, Dataset, LoadOptions, Sample, LABELS_FILE};
pub use pnm::{read_image, write_image, Image};
pub use synth::{generate_synth, render, SynthSpec};
