//! Receiver-side semantic recognizer: a compact Transformer-encoder sentence
//! classifier that labels each decoded slot with its feature class (sentiment
//! or topic) and delivers to user `k` only the sentences classified as `k`.

use crate::model::{masks, positional_encoding};
use crate::optim::{absorb_grads, bind_params, sgd_step, Bindings};
use crate::rng::{derive_seed, streams, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{ParamStore, Tensor};
use crate::text::{LabeledSentence, Vocabulary, END, PAD, START};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecognizerError {
    #[error("recognizer needs at least two classes, corpus has {0}")]
    SingleClass(usize),
    #[error("recognizer training diverged (loss {0})")]
    Diverged(f64),
}

/// Classifier hyperparameters: 2 encoder layers, 4 heads, width 32,
/// mean-pooling over unpadded positions, linear head. The default learning
/// rate is sized for desk-scale corpora (a few hundred sentences per class);
/// plain SGD needs it this large to converge in tens of epochs.
#[derive(Debug, Clone)]
pub struct RecognizerConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub slot_len: usize,
    pub num_classes: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub held_out_per_class: usize,
}

impl RecognizerConfig {
    pub fn standard(slot_len: usize, num_classes: usize) -> Self {
        RecognizerConfig {
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
            slot_len,
            num_classes,
            lr: 0.05,
            epochs: 20,
            batch_size: 16,
            held_out_per_class: 0,
        }
    }
}

pub const PREFIX: &str = "recognizer";

/// Trained recognizer: parameters plus the framing it was trained with.
#[derive(Debug, Clone)]
pub struct Recognizer {
    pub params: ParamStore,
    pub cfg: RecognizerConfig,
}

#[derive(Debug, Clone)]
pub struct RecognizerReport {
    pub history_loss: Vec<f64>,
    pub held_out_accuracy: f64,
}

fn init_params(cfg: &RecognizerConfig, vocab_size: usize, seed: u64) -> ParamStore {
    let mut rng = Rng::substream(seed, streams::RECOGNIZER);
    let mut store = ParamStore::new();
    let d = cfg.d_model;
    store.insert(
        &format!("{PREFIX}/embed"),
        Tensor::glorot(vec![vocab_size, d], vocab_size, d, &mut rng),
    );
    for layer in 0..cfg.n_layers {
        let p = format!("{PREFIX}/enc{layer}");
        for name in ["wq", "wk", "wv", "wo"] {
            store.insert(&format!("{p}/attn/{name}"), Tensor::glorot(vec![d, d], d, d, &mut rng));
        }
        for name in ["bq", "bk", "bv", "bo"] {
            store.insert(&format!("{p}/attn/{name}"), Tensor::zeros(vec![d]));
        }
        store.insert(&format!("{p}/ln1/gamma"), Tensor::new(vec![d], vec![1.0; d]));
        store.insert(&format!("{p}/ln1/beta"), Tensor::zeros(vec![d]));
        store.insert(&format!("{p}/ffn/fc1/w"), Tensor::glorot(vec![d, cfg.d_ff], d, cfg.d_ff, &mut rng));
        store.insert(&format!("{p}/ffn/fc1/b"), Tensor::zeros(vec![cfg.d_ff]));
        store.insert(&format!("{p}/ffn/fc2/w"), Tensor::glorot(vec![cfg.d_ff, d], cfg.d_ff, d, &mut rng));
        store.insert(&format!("{p}/ffn/fc2/b"), Tensor::zeros(vec![d]));
        store.insert(&format!("{p}/ln2/gamma"), Tensor::new(vec![d], vec![1.0; d]));
        store.insert(&format!("{p}/ln2/beta"), Tensor::zeros(vec![d]));
    }
    store.insert(
        &format!("{PREFIX}/head/w"),
        Tensor::glorot(vec![d, cfg.num_classes], d, cfg.num_classes, &mut rng),
    );
    store.insert(&format!("{PREFIX}/head/b"), Tensor::zeros(vec![cfg.num_classes]));
    store
}

fn frame(words: &[String], vocab: &Vocabulary, slot_len: usize) -> Vec<usize> {
    let mut ids = Vec::with_capacity(slot_len);
    ids.push(START);
    for w in words.iter().take(slot_len - 2) {
        ids.push(vocab.id(w));
    }
    ids.push(END);
    ids.resize(slot_len, PAD);
    ids
}

/// Class logits for a batch of framed sentences.
fn classify_logits(
    tape: &mut Tape,
    binds: &Bindings,
    cfg: &RecognizerConfig,
    ids: &[usize],
    batch: usize,
) -> Var {
    let seq = cfg.slot_len;
    let d = cfg.d_model;
    let pad_mask: Vec<bool> = ids.iter().map(|&id| id != PAD).collect();
    let allowed = masks::encoder(&pad_mask, batch, cfg.n_heads, seq);

    let table = binds.var(&format!("{PREFIX}/embed"));
    let e = tape.embedding(table, ids);
    let e = tape.reshape(e, vec![batch, seq, d]);
    let e = tape.scale(e, (d as f64).sqrt());
    let pe = tape.constant(vec![batch, seq, d], positional_encoding(batch, seq, d));
    let mut x = tape.add(e, pe);

    let dh = d / cfg.n_heads;
    for layer in 0..cfg.n_layers {
        let p = format!("{PREFIX}/enc{layer}");
        // attention
        let split = |tape: &mut Tape, v: Var| {
            let v = tape.reshape(v, vec![batch, seq, cfg.n_heads, dh]);
            tape.permute(v, &[0, 2, 1, 3])
        };
        let wq = binds.var(&format!("{p}/attn/wq"));
        let bq = binds.var(&format!("{p}/attn/bq"));
        let wk = binds.var(&format!("{p}/attn/wk"));
        let bk = binds.var(&format!("{p}/attn/bk"));
        let wv = binds.var(&format!("{p}/attn/wv"));
        let bv = binds.var(&format!("{p}/attn/bv"));
        let q = tape.matmul(x, wq, false);
        let q = tape.add_bias(q, bq);
        let q = split(tape, q);
        let k = tape.matmul(x, wk, false);
        let k = tape.add_bias(k, bk);
        let k = split(tape, k);
        let v = tape.matmul(x, wv, false);
        let v = tape.add_bias(v, bv);
        let v = split(tape, v);
        let scores = tape.matmul(q, k, true);
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = tape.masked_softmax_last(scores, Some(&allowed));
        let ctx = tape.matmul(weights, v, false);
        let ctx = tape.permute(ctx, &[0, 2, 1, 3]);
        let ctx = tape.reshape(ctx, vec![batch, seq, d]);
        let wo = binds.var(&format!("{p}/attn/wo"));
        let bo = binds.var(&format!("{p}/attn/bo"));
        let a = tape.matmul(ctx, wo, false);
        let a = tape.add_bias(a, bo);
        let r = tape.add(x, a);
        let g1 = binds.var(&format!("{p}/ln1/gamma"));
        let b1 = binds.var(&format!("{p}/ln1/beta"));
        x = tape.layer_norm(r, g1, b1, crate::model::LAYER_NORM_EPS);
        // feed-forward
        let w1 = binds.var(&format!("{p}/ffn/fc1/w"));
        let fb1 = binds.var(&format!("{p}/ffn/fc1/b"));
        let w2 = binds.var(&format!("{p}/ffn/fc2/w"));
        let fb2 = binds.var(&format!("{p}/ffn/fc2/b"));
        let h = tape.matmul(x, w1, false);
        let h = tape.add_bias(h, fb1);
        let h = tape.relu(h);
        let f = tape.matmul(h, w2, false);
        let f = tape.add_bias(f, fb2);
        let r = tape.add(x, f);
        let g2 = binds.var(&format!("{p}/ln2/gamma"));
        let b2 = binds.var(&format!("{p}/ln2/beta"));
        x = tape.layer_norm(r, g2, b2, crate::model::LAYER_NORM_EPS);
    }

    // sentence vector: mean over non-PAD positions, then the class head
    let pooled = tape.masked_mean_rows(x, &pad_mask);
    let hw = binds.var(&format!("{PREFIX}/head/w"));
    let hb = binds.var(&format!("{PREFIX}/head/b"));
    let logits = tape.matmul(pooled, hw, false);
    tape.add_bias(logits, hb)
}

impl Recognizer {
    fn forward(&self, sentences: &[Vec<String>], vocab: &Vocabulary) -> (Tape, Var) {
        let batch = sentences.len();
        let mut ids = Vec::with_capacity(batch * self.cfg.slot_len);
        for words in sentences {
            ids.extend(frame(words, vocab, self.cfg.slot_len));
        }
        let mut tape = Tape::new();
        let binds = bind_params(&mut tape, &self.params, &[PREFIX]);
        let logits = classify_logits(&mut tape, &binds, &self.cfg, &ids, batch);
        (tape, logits)
    }

    /// Multiply/add counts of the classifier forward pass (logits only).
    pub fn classify_counting(
        &self,
        sentences: &[Vec<String>],
        vocab: &Vocabulary,
    ) -> crate::tape::OpCounts {
        let (tape, _) = self.forward(sentences, vocab);
        tape.counts()
    }

    /// Predicted class and softmax confidence for each sentence.
    pub fn classify(&self, sentences: &[Vec<String>], vocab: &Vocabulary) -> Vec<(usize, f64)> {
        if sentences.is_empty() {
            return Vec::new();
        }
        let (mut tape, logits) = self.forward(sentences, vocab);
        let probs = tape.softmax_last(logits);
        tape.data(probs)
            .chunks(self.cfg.num_classes)
            .map(|row| {
                let mut best = 0;
                for (j, &p) in row.iter().enumerate().skip(1) {
                    if p > row[best] {
                        best = j;
                    }
                }
                (best, row[best])
            })
            .collect()
    }

    pub fn accuracy(&self, corpus: &[LabeledSentence], vocab: &Vocabulary) -> f64 {
        if corpus.is_empty() {
            return 0.0;
        }
        let sentences: Vec<Vec<String>> = corpus.iter().map(|s| s.words.clone()).collect();
        let hits = self
            .classify(&sentences, vocab)
            .iter()
            .zip(corpus)
            .filter(|((predicted, _), truth)| *predicted == truth.label)
            .count();
        hits as f64 / corpus.len() as f64
    }
}

/// Trains the classifier on the labeled corpus; an optional per-class
/// held-out split (cfg.held_out_per_class) is scored after training.
pub fn train_recognizer(
    corpus: &[LabeledSentence],
    vocab: &Vocabulary,
    cfg: &RecognizerConfig,
    seed: u64,
) -> Result<(Recognizer, RecognizerReport), RecognizerError> {
    let classes_present = {
        let mut labels: Vec<usize> = corpus.iter().map(|s| s.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels.len()
    };
    if classes_present < 2 {
        return Err(RecognizerError::SingleClass(classes_present));
    }

    let (train, held_out) = crate::text::split_corpus(corpus, cfg.held_out_per_class, seed);
    let mut params = init_params(cfg, vocab.len(), seed);
    let mut rng = Rng::substream(seed, streams::RECOGNIZER + 50);
    let mut history_loss = Vec::with_capacity(cfg.epochs);

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk.len();
            let mut ids = Vec::with_capacity(batch * cfg.slot_len);
            let mut labels = Vec::with_capacity(batch);
            for &idx in chunk {
                ids.extend(frame(&train[idx].words, vocab, cfg.slot_len));
                labels.push(train[idx].label);
            }
            let mut tape = Tape::new();
            let binds = bind_params(&mut tape, &params, &[]);
            let logits = classify_logits(&mut tape, &binds, cfg, &ids, batch);
            let mask = vec![true; batch];
            let loss = tape.cross_entropy_mean(logits, &labels, &mask);
            let loss_val = tape.data(loss)[0];
            if !loss_val.is_finite() {
                return Err(RecognizerError::Diverged(loss_val));
            }
            tape.backward(loss);
            absorb_grads(&mut params, &tape, &binds);
            sgd_step(&mut params, cfg.lr, &[]);
            loss_sum += loss_val;
            steps += 1;
        }
        history_loss.push(loss_sum / steps.max(1) as f64);
    }

    let recognizer = Recognizer {
        params,
        cfg: cfg.clone(),
    };
    let held_out_accuracy = recognizer.accuracy(&held_out, vocab);
    Ok((
        recognizer,
        RecognizerReport {
            history_loss,
            held_out_accuracy,
        },
    ))
}

/// Shuffles corpus labels (a null-model control: training on these should
/// reach only chance accuracy).
pub fn shuffle_labels(corpus: &[LabeledSentence], seed: u64) -> Vec<LabeledSentence> {
    let mut labels: Vec<usize> = corpus.iter().map(|s| s.label).collect();
    let mut rng = Rng::seeded(derive_seed(seed, 0x5AFF));
    rng.shuffle(&mut labels);
    corpus
        .iter()
        .zip(labels)
        .map(|(s, label)| LabeledSentence {
            words: s.words.clone(),
            label,
        })
        .collect()
}

/// Splits a decoded merged row into its K equal-length slots and detokenizes
/// each independently (stopping at the slot's first END).
pub fn split_slots(
    decoded: &[usize],
    slot_len: usize,
    num_slots: usize,
    vocab: &Vocabulary,
) -> Vec<Vec<String>> {
    assert_eq!(
        decoded.len(),
        slot_len * num_slots,
        "decoded row length must be num_slots * slot_len"
    );
    decoded
        .chunks(slot_len)
        .map(|slot| vocab.detokenize(slot))
        .collect()
}

/// What one user receives from one decoded row.
#[derive(Debug, Clone)]
pub struct RoutedOutput {
    pub user_class: usize,
    /// Slots classified as the user's class: (slot index, words, confidence).
    pub delivered: Vec<(usize, Vec<String>, f64)>,
    /// Predicted class and confidence for every non-empty slot.
    pub slot_predictions: Vec<Option<(usize, f64)>>,
}

impl RoutedOutput {
    /// Highest-confidence delivered sentence, if any.
    pub fn best(&self) -> Option<&(usize, Vec<String>, f64)> {
        self.delivered
            .iter()
            .max_by(|a, b| a.2.partial_cmp(&b.2).unwrap_or(std::cmp::Ordering::Equal))
    }
}

/// Classifies each slot sentence and delivers to `user_class` exactly the
/// slots whose predicted class matches. Empty slots are routed nowhere; zero
/// matches is a valid outcome; several matches are all delivered.
pub fn route(
    sentences: &[Vec<String>],
    recognizer: &Recognizer,
    vocab: &Vocabulary,
    user_class: usize,
) -> RoutedOutput {
    let mut slot_predictions: Vec<Option<(usize, f64)>> = vec![None; sentences.len()];
    let occupied: Vec<usize> = (0..sentences.len())
        .filter(|&i| !sentences[i].is_empty())
        .collect();
    let texts: Vec<Vec<String>> = occupied.iter().map(|&i| sentences[i].clone()).collect();
    for (&slot, prediction) in occupied.iter().zip(recognizer.classify(&texts, vocab)) {
        slot_predictions[slot] = Some(prediction);
    }
    let delivered = slot_predictions
        .iter()
        .enumerate()
        .filter_map(|(slot, p)| match p {
            Some((class, conf)) if *class == user_class => {
                Some((slot, sentences[slot].clone(), *conf))
            }
            _ => None,
        })
        .collect();
    RoutedOutput {
        user_class,
        delivered,
        slot_predictions,
    }
}
