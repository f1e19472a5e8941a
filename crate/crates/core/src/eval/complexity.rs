//! Multiply/add accounting for the learned components.
//!
//! Two independent routes produce the same numbers: a symbolic estimator that
//! walks the architecture summing per-operation closed forms, and runtime
//! counters that the tape increments as an actual forward pass executes. The
//! per-operation cost formulas are shared ([`crate::tape::op_cost`]), so a
//! disagreement always means the estimator's picture of the op sequence has
//! drifted from the real forward pass.
//!
//! Conventions: divisions count as multiplies; transcendentals, comparisons
//! and data movement are free. The encoder-decoder scope covers the semantic
//! encoder, channel encoder, channel decoder and teacher-forced semantic
//! decoder (the loss and the physical channel are excluded).

use crate::model::{self, ArchConfig};
use crate::optim::bind_params;
use crate::recognizer::{self, RecognizerConfig};
use crate::rng::Rng;
use crate::tape::{op_cost, OpCounts, Tape};
use crate::text::{END, PAD, START};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityReport {
    pub encoder_decoder: OpCounts,
    pub recognizer: OpCounts,
    pub batch: usize,
    pub seq_len: usize,
    pub recognizer_seq_len: usize,
}

fn embed_counts(batch: u64, seq: u64, d: u64) -> OpCounts {
    let mut counts = OpCounts::default();
    counts.add(op_cost::embedding(batch * seq * d));
    counts.add(op_cost::scale(batch * seq * d)); // sqrt(d) embedding scale
    counts.add(op_cost::add(batch * seq * d)); // positional encoding
    counts
}

fn attention_counts(batch: u64, heads: u64, sq: u64, sk: u64, d: u64) -> OpCounts {
    let dh = d / heads;
    let mut counts = OpCounts::default();
    // q projection from the query stream, k/v from the key/value stream
    counts.add(op_cost::matmul(batch, sq, d, d));
    counts.add(op_cost::add_bias(batch * sq * d));
    for _ in 0..2 {
        counts.add(op_cost::matmul(batch, sk, d, d));
        counts.add(op_cost::add_bias(batch * sk * d));
    }
    counts.add(op_cost::matmul(batch * heads, sq, dh, sk)); // scores
    counts.add(op_cost::scale(batch * heads * sq * sk));
    counts.add(op_cost::softmax(batch * heads * sq, sk));
    counts.add(op_cost::matmul(batch * heads, sq, sk, dh)); // context
    counts.add(op_cost::matmul(batch, sq, d, d)); // output projection
    counts.add(op_cost::add_bias(batch * sq * d));
    counts
}

fn ffn_counts(batch: u64, seq: u64, d: u64, d_ff: u64) -> OpCounts {
    let mut counts = OpCounts::default();
    counts.add(op_cost::matmul(batch, seq, d, d_ff));
    counts.add(op_cost::add_bias(batch * seq * d_ff));
    counts.add(op_cost::relu(batch * seq * d_ff));
    counts.add(op_cost::matmul(batch, seq, d_ff, d));
    counts.add(op_cost::add_bias(batch * seq * d));
    counts
}

/// One pre-norm sublayer's overhead: the entry layer norm plus the residual.
fn norm_residual_counts(batch: u64, seq: u64, d: u64) -> OpCounts {
    let mut counts = OpCounts::default();
    counts.add(op_cost::layer_norm(batch * seq, d));
    counts.add(op_cost::add(batch * seq * d));
    counts
}

/// Symbolic multiply/add counts of the full encoder-decoder forward pass.
pub fn estimate_encoder_decoder(arch: &ArchConfig, batch: usize) -> OpCounts {
    let (b, s, d) = (batch as u64, arch.seq_len() as u64, arch.d_model as u64);
    let (heads, d_ff) = (arch.n_heads as u64, arch.d_ff as u64);
    let (n_ce, n_cd, vocab) = (arch.n_ce as u64, arch.n_cd as u64, arch.vocab_size as u64);
    let mut counts = embed_counts(b, s, d);
    for _ in 0..arch.n_layers {
        counts.add(norm_residual_counts(b, s, d).into_pair());
        counts.add(attention_counts(b, heads, s, s, d).into_pair());
        counts.add(norm_residual_counts(b, s, d).into_pair());
        counts.add(ffn_counts(b, s, d, d_ff).into_pair());
    }
    counts.add(op_cost::layer_norm(b * s, d)); // encoder output norm
    // channel encoder
    counts.add(op_cost::matmul(b, s, d, n_ce));
    counts.add(op_cost::add_bias(b * s * n_ce));
    // channel decoder
    counts.add(op_cost::matmul(b, s, n_ce, n_cd));
    counts.add(op_cost::add_bias(b * s * n_cd));
    counts.add(op_cost::relu(b * s * n_cd));
    counts.add(op_cost::matmul(b, s, n_cd, d));
    counts.add(op_cost::add_bias(b * s * d));
    // semantic decoder
    counts.add(op_cost::add(b * s * d)); // positional marks on the memory
    counts.add(embed_counts(b, s, d).into_pair());
    for _ in 0..arch.n_layers {
        counts.add(norm_residual_counts(b, s, d).into_pair()); // self
        counts.add(attention_counts(b, heads, s, s, d).into_pair());
        counts.add(norm_residual_counts(b, s, d).into_pair()); // cross
        counts.add(attention_counts(b, heads, s, s, d).into_pair());
        counts.add(norm_residual_counts(b, s, d).into_pair()); // feed-forward
        counts.add(ffn_counts(b, s, d, d_ff).into_pair());
    }
    counts.add(op_cost::layer_norm(b * s, d)); // decoder output norm
    counts.add(op_cost::matmul(b, s, d, vocab));
    counts.add(op_cost::add_bias(b * s * vocab));
    counts
}

/// Symbolic multiply/add counts of one recognizer forward pass.
pub fn estimate_recognizer(cfg: &RecognizerConfig, batch: usize) -> OpCounts {
    let (b, s, d) = (batch as u64, cfg.slot_len as u64, cfg.d_model as u64);
    let (heads, d_ff, k) = (cfg.n_heads as u64, cfg.d_ff as u64, cfg.num_classes as u64);
    let mut counts = embed_counts(b, s, d);
    for _ in 0..cfg.n_layers {
        counts.add(attention_counts(b, heads, s, s, d).into_pair());
        counts.add(post_norm_residual_counts(b, s, d).into_pair());
        counts.add(ffn_counts(b, s, d, d_ff).into_pair());
        counts.add(post_norm_residual_counts(b, s, d).into_pair());
    }
    counts.add(op_cost::masked_mean_rows(b * s * d, b * d));
    counts.add(op_cost::matmul(1, b, d, k)); // class head
    counts.add(op_cost::add_bias(b * k));
    counts
}

/// Post-norm sublayer's overhead (the recognizer keeps the original layout).
fn post_norm_residual_counts(batch: u64, seq: u64, d: u64) -> OpCounts {
    let mut counts = OpCounts::default();
    counts.add(op_cost::add(batch * seq * d));
    counts.add(op_cost::layer_norm(batch * seq, d));
    counts
}

trait IntoPair {
    fn into_pair(self) -> (u64, u64);
}

impl IntoPair for OpCounts {
    fn into_pair(self) -> (u64, u64) {
        (self.mults, self.adds)
    }
}

fn dummy_batch(arch: &ArchConfig, batch: usize, seed: u64) -> (Vec<usize>, Vec<bool>) {
    let mut rng = Rng::seeded(seed);
    let mut ids = Vec::with_capacity(batch * arch.seq_len());
    for _ in 0..batch {
        for _ in 0..arch.num_users {
            let words = 3 + rng.below((arch.slot_len - 3).min(10));
            for pos in 0..arch.slot_len {
                ids.push(if pos == 0 {
                    START
                } else if pos <= words {
                    5 + rng.below(arch.vocab_size - 5)
                } else if pos == words + 1 {
                    END
                } else {
                    PAD
                });
            }
        }
    }
    let mask = ids.iter().map(|&id| id != PAD).collect();
    (ids, mask)
}

/// Runs a real encoder-decoder forward pass and reads the tape counters.
pub fn instrumented_encoder_decoder(arch: &ArchConfig, batch: usize, seed: u64) -> OpCounts {
    let mut store = model::init_transmitter(arch, seed);
    store.absorb(model::init_receiver(arch, 1, seed));
    let (ids, mask) = dummy_batch(arch, batch, seed);

    let mut tape = Tape::new();
    let binds = bind_params(&mut tape, &store, &[]);
    tape.reset_counts();
    let x = model::transmit(&mut tape, &binds, arch, &ids, &mask, batch);
    let m_hat = model::channel_decode(&mut tape, &binds, arch, 1, x);
    let dec_ids: Vec<usize> = ids
        .chunks(arch.seq_len())
        .flat_map(|row| {
            let mut shifted = vec![START];
            shifted.extend_from_slice(&row[..row.len() - 1]);
            shifted
        })
        .collect();
    let _ = model::semantic_decode_teacher(&mut tape, &binds, arch, 1, m_hat, &dec_ids, &mask, batch);
    tape.counts()
}

/// Runs a real recognizer forward pass and reads the tape counters.
pub fn instrumented_recognizer(cfg: &RecognizerConfig, batch: usize, seed: u64) -> OpCounts {
    let mut rng = Rng::seeded(seed);
    let sentences: Vec<Vec<String>> = (0..batch)
        .map(|_| {
            (0..4 + rng.below(8))
                .map(|i| format!("w{}", i % 7))
                .collect()
        })
        .collect();
    // an init-only training run yields correctly shaped parameters; pad the
    // corpus so every class is present regardless of the probe batch size
    let mut corpus: Vec<crate::text::LabeledSentence> = sentences
        .iter()
        .enumerate()
        .map(|(i, words)| {
            crate::text::LabeledSentence::new(words.clone(), i % cfg.num_classes)
        })
        .collect();
    for label in 0..cfg.num_classes {
        corpus.push(crate::text::LabeledSentence::new(sentences[0].clone(), label));
    }
    let vocab = crate::text::Vocabulary::build(&corpus).expect("non-empty corpus");
    let quick = RecognizerConfig {
        epochs: 0,
        held_out_per_class: 0,
        ..cfg.clone()
    };
    let (probe, _) =
        recognizer::train_recognizer(&corpus, &vocab, &quick, seed).expect("init-only training");
    probe.classify_counting(&sentences, &vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_layer_model_counts_only_peripherals() {
        let mut arch = ArchConfig::tiny(8, 2, 40);
        arch.n_layers = 0;
        let est = estimate_encoder_decoder(&arch, 1);
        let inst = instrumented_encoder_decoder(&arch, 1, 1);
        assert_eq!(est, inst);
    }

    #[test]
    fn one_dense_layer_hand_count() {
        // a 16 -> 128 dense layer over 36 tokens costs 16*128*36 multiplies
        assert_eq!(op_cost::matmul(1, 36, 16, 128).0, 73_728);
    }

    #[test]
    fn estimator_matches_instrumented_for_three_archs() {
        for (arch, batch) in [
            (ArchConfig::tiny(18, 2, 90), 2),
            (ArchConfig::reference(18, 2, 120), 1),
            (ArchConfig::tiny(12, 3, 60), 3),
        ] {
            let est = estimate_encoder_decoder(&arch, batch);
            let inst = instrumented_encoder_decoder(&arch, batch, 7);
            assert_eq!(est, inst, "arch {arch:?} batch {batch}");
        }
    }

    #[test]
    fn recognizer_estimator_matches_instrumented() {
        for k in [2usize, 4] {
            let cfg = RecognizerConfig::standard(18, k);
            let est = estimate_recognizer(&cfg, 5);
            let inst = instrumented_recognizer(&cfg, 5, 3);
            assert_eq!(est, inst, "classes {k}");
        }
    }
}
