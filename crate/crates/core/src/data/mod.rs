//! Scored-image manifests, splits and pair sampling, crop augmentation,
//! PNG I/O and the synthetic planted-attribute generator.

mod crop;
mod dataset;
mod image;
mod manifest;
mod pairs;
mod synth;

pub use crop::{crop_augment, crop_side, crop_view};
pub use dataset::Dataset;
pub use image::{load_image, quantize, save_image};
pub use manifest::{split, Manifest, ManifestEntry, SplitSpec};
pub use pairs::{load_pairs, make_pairs, pair_label, pair_records, save_pairs, PairIndex, PairRecord};
pub use synth::{
    load_placements, oracle_level, synth_generate, synth_render, Placement, PlacementRecord, Square,
    SynthConfig, SynthImage, SynthOutput,
};
