//! Clip container, snippet sampling, super-images and the synthetic dataset.

pub mod clip;
pub mod sampler;
pub mod synth;

pub use clip::{decode_dataset, encode_dataset, read_dataset, split_dataset, write_dataset, VideoClip};
pub use sampler::{make_batch, make_super_images, sample_snippets, SampleMode, SamplerConfig, SuperImageBatch};
pub use synth::{gen_synthetic, mirrored_labels, render_clip, static_labels, MotionClass, SynthConfig, ALL_CLASSES};
