//! Evaluation: BLEU scoring, SNR and user-count sweeps, complexity counts.

pub mod bleu;
pub mod complexity;
pub mod sweep;
