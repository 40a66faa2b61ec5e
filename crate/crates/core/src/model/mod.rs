//! Configurable encoder-decoder transformer.

mod batch;
pub mod checkpoint;
mod config;
pub mod position;
mod transformer;
mod vocab;

pub use batch::{parent_class, Seq2SeqBatch, TaggedIds, TaggingBatch};
pub use config::{CopyGate, Encoding, Mode, ModelConfig, ParentHead, SizePreset};
pub use position::{label_matrix, relative_label, sinusoidal_encoding};
pub use transformer::{
    parent_classes, CopyOut, DecoderOut, EncoderOut, TagLabels, Transformer, LAYER_NORM_EPS, PROB_CLAMP,
};
pub use vocab::{LabelSet, Vocabulary, BOS, EOS, PAD, SPECIALS};
