//! Synthetic domain families: Gaussian mixtures and glyph rasters, the shift
//! transforms applied to them, mixup, and the dataset file format.

mod dataset;
mod gaussian;
mod glyph;
mod io;
mod mixup;
mod transform;

pub use dataset::{DomainDataset, LabeledSamples, RasterShape, SampleMatrix, UnlabeledSamples};
pub use gaussian::{class_center, gen_gaussian_domain, CENTER_RADIUS};
pub use glyph::{gen_glyph_domain, GlyphStyle, MIN_CANVAS};
pub use io::{decode_dataset, encode_dataset, load_dataset, save_dataset, FORMAT_VERSION, MAGIC};
pub use mixup::{mixup, one_hot, sample_lambda, MixedBatch};
pub use transform::{
    apply_background_overlay, apply_chain, apply_channel_stack, apply_label_noise,
    apply_mean_shift, apply_rotate, apply_scale_recenter, TransformSpec,
};
