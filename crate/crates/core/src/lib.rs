//! Desk-scale simulator of a one-to-many semantic communication link.
//!
//! One Transformer-based transmitter broadcasts a merged multi-user batch;
//! per-user receivers decode it, and a sentence-feature recognizer routes each
//! decoded sentence to the user whose class it carries. A fully classical
//! Huffman / turbo / 64-QAM / CDMA chain runs over the same channel models as
//! the learned system, and both are compared by BLEU across SNR and user-count
//! sweeps.
//!
//! Module map:
//! - [`tensor`], [`tape`], [`optim`], [`checkpoint`], [`gradcheck`]: f64
//!   tensors with reverse-mode autodiff, SGD, and bit-exact persistence.
//! - [`text`]: vocabulary, synthetic labeled corpora, merged batches.
//! - [`model`]: the learned transceiver (semantic + channel coders).
//! - [`channel`]: complex-baseband AWGN and block-Rayleigh channels.
//! - [`training`]: two-phase training with transfer to new receivers.
//! - [`recognizer`]: sentence classifier and per-user routing.
//! - [`classical`]: the conventional baseline chain.
//! - [`eval`]: BLEU, sweeps, complexity accounting.
//! - [`config`]: experiment configuration files.
//! - [`experiment`]: the file-artifact operations behind the CLI.

pub mod channel;
pub mod checkpoint;
pub mod classical;
pub mod config;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod recognizer;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod training;

pub use channel::{ChannelConfig, ChannelKind, ComplexBlock};
pub use config::ExperimentConfig;
pub use eval::bleu::BleuScore;
pub use eval::sweep::{SweepResult, SweepRow};
pub use model::ArchConfig;
pub use recognizer::Recognizer;
pub use tape::{OpCounts, Tape, Var};
pub use tensor::{ParamStore, Tensor};
pub use text::{LabeledSentence, MergedBatch, Vocabulary};
pub use training::{TrainConfig, TrainHistory};
