//! Decoder-only language models and pooled encoder classifiers built on
//! the tape.

mod encoder;
mod lm;
mod params;

pub use encoder::{
    two_tower_score, ClassifierForward, ClassifierSpec, EncoderClassifier, Interaction, Pooling,
    Structure, Tower, NUM_CATEGORIES,
};
pub use lm::{argmax, LanguageModel, LmForward, ModelConfig, ModelRole};
pub use params::ParamStore;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SEP: u32 = 3;
