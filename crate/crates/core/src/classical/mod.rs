//! The conventional baseline: separate source and channel coding with
//! classical modulation and multiple access, sharing the physical channel
//! models with the learned system.

pub mod cdma;
pub mod huffman;
pub mod pipeline;
pub mod qam;
pub mod turbo;

pub use cdma::CdmaConfig;
pub use huffman::HuffmanCodebook;
pub use pipeline::{measure_chain_ber, ClassicalSystem};
pub use qam::{qam64_modulate, qam64_soft_demap};
pub use turbo::{maxlogmap_decode, turbo_encode, TurboConfig};
