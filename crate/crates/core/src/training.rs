//! Two-phase training of the transceiver.
//!
//! Phase 1 jointly trains the transmitter and receiver 1 end to end through
//! the channel with a masked cross-entropy loss over the full merged batch.
//! Phase 2 adds a receiver `k > 1` by freezing `alpha`/`beta`, initializing
//! `chi_k`/`delta_k` as copies of receiver 1 (transfer) or fresh (baseline for
//! comparison), and updating only the new receiver's parameters, possibly
//! under a different channel.

use crate::channel::{self, ChannelConfig, ChannelKind};
use crate::eval::bleu::corpus_average;
use crate::model::{self, ArchConfig};
use crate::optim::{absorb_grads, bind_params, clip_global_norm, sgd_step, sgd_step_momentum, Bindings, Velocity};
use crate::rng::{derive_seed, streams, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::ParamStore;
use crate::text::{make_batches_opts, LabeledSentence, MergedBatch, Vocabulary, PAD, START, UNK};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged (loss {loss}) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("corpus has no sentences for some class")]
    EmptyClass,
}

/// Per-batch SNR selection during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrPolicy {
    Fixed(f64),
    UniformDb { lo: f64, hi: f64 },
}

impl SnrPolicy {
    pub fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            SnrPolicy::Fixed(db) => db,
            SnrPolicy::UniformDb { lo, hi } => {
                assert!(lo <= hi, "SNR range must satisfy lo <= hi");
                rng.uniform(lo, hi)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub snr_policy: SnrPolicy,
    pub channel: ChannelKind,
    pub seed: u64,
    /// Epoch mean loss under this value sets `epochs_to_threshold`.
    pub loss_threshold: f64,
    /// Global-norm gradient clipping, off by default.
    pub clip_norm: Option<f64>,
    /// Heavy-ball momentum; zero gives the plain update.
    pub momentum: f64,
    /// Probability of masking a teacher-forced decoder input token to UNK.
    /// Nonzero rates starve prefix-recall shortcuts so the decoder must read
    /// the received features; evaluation never uses it.
    pub word_dropout: f64,
    /// Stop after the epoch whose mean loss first drops under the threshold
    /// (training "until convergence" rather than for the full epoch budget).
    pub stop_at_threshold: bool,
    /// Held-out rows greedily decoded per epoch for the BLEU column of the
    /// history (0 skips validation).
    pub val_rows: usize,
    pub val_snr_db: f64,
    pub insert_sep: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 8,
            epochs: 60,
            snr_policy: SnrPolicy::UniformDb { lo: 0.0, hi: 18.0 },
            channel: ChannelKind::Awgn,
            seed: 0,
            loss_threshold: 0.1,
            clip_norm: None,
            momentum: 0.0,
            word_dropout: 0.0,
            stop_at_threshold: false,
            val_rows: 16,
            val_snr_db: 18.0,
            insert_sep: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
    pub epoch_val_bleu: Vec<f64>,
    /// Epochs needed for the mean loss to drop under the threshold.
    pub epochs_to_threshold: Option<usize>,
}

/// Masked categorical cross-entropy over per-position vocabulary logits:
/// mean over unmasked positions of -log p(target token). `logits` may carry
/// any leading shape as long as the last dim is the vocabulary.
pub fn cross_entropy_loss(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    mask: &[bool],
) -> Var {
    let dims = tape.dims(logits).to_vec();
    let vocab = *dims.last().expect("logits need a vocabulary dim");
    let rows: usize = dims[..dims.len() - 1].iter().product();
    let flat = tape.reshape(logits, vec![rows, vocab]);
    tape.cross_entropy_mean(flat, targets, mask)
}

/// Applies the configured channel to the tape-resident symbol tensor
/// (power normalization, fading, noise, zero-forcing equalization), keeping
/// the whole path differentiable so transmitter gradients flow through it.
///
/// PAD positions carry no signal: when `token_mask` is given, the symbols of
/// masked-out tokens are zeroed before transmission and excluded from the
/// power normalization, so padding never shifts the per-symbol SNR.
pub fn apply_channel_on_tape(
    tape: &mut Tape,
    x: Var,
    cfg: &ChannelConfig,
    rows: usize,
    token_mask: Option<&[bool]>,
) -> Var {
    let numel = tape.data(x).len();
    assert!(numel.is_multiple_of(rows * 2), "rows must tile the symbol tensor");
    let symbols = numel / 2;
    let group = symbols / rows;
    let dims = tape.dims(x).to_vec();
    let mut rng = Rng::substream(cfg.seed, streams::CHANNEL);

    let (x, active_complex) = match token_mask {
        None => (x, symbols),
        Some(mask) => {
            assert!(numel.is_multiple_of(mask.len()), "token mask must tile the tensor");
            let expand = numel / mask.len();
            let gate: Vec<f64> = mask
                .iter()
                .flat_map(|&keep| std::iter::repeat_n(if keep { 1.0 } else { 0.0 }, expand))
                .collect();
            let gate = tape.constant(dims.clone(), gate);
            let gated = tape.mul(x, gate);
            let active = mask.iter().filter(|&&m| m).count() * expand / 2;
            (gated, active)
        }
    };
    let normalized = tape.power_normalize_active(x, active_complex);
    let sigma = cfg.noise_variance().sqrt();
    match cfg.kind {
        ChannelKind::Awgn => {
            if sigma == 0.0 {
                return normalized;
            }
            let noise: Vec<f64> = channel::unit_noise(&mut rng, symbols)
                .into_iter()
                .map(|n| sigma * n)
                .collect();
            let w = tape.constant(dims, noise);
            tape.add(normalized, w)
        }
        ChannelKind::Rayleigh => {
            let gains = channel::fading_gains(&mut rng, rows);
            let faded = tape.complex_group_scale(normalized, &gains, group);
            let noisy = if sigma == 0.0 {
                faded
            } else {
                let noise: Vec<f64> = channel::unit_noise(&mut rng, symbols)
                    .into_iter()
                    .map(|n| sigma * n)
                    .collect();
                let w = tape.constant(dims, noise);
                tape.add(faded, w)
            };
            let inverse = channel::inverse_gains(&gains);
            tape.complex_group_scale(noisy, &inverse, group)
        }
    }
}

/// Teacher-forced forward pass of the full system for one batch and one
/// receiver, returning the scalar loss node.
pub fn forward_loss(
    tape: &mut Tape,
    binds: &Bindings,
    arch: &ArchConfig,
    user: usize,
    batch: &MergedBatch,
    chan_cfg: &ChannelConfig,
) -> Var {
    forward_loss_dropped(tape, binds, arch, user, batch, chan_cfg, 0.0, &mut Rng::seeded(0))
}

/// [`forward_loss`] with word dropout on the decoder inputs: each shifted
/// target token (never START or PAD) turns into UNK with the given rate.
#[allow(clippy::too_many_arguments)]
pub fn forward_loss_dropped(
    tape: &mut Tape,
    binds: &Bindings,
    arch: &ArchConfig,
    user: usize,
    batch: &MergedBatch,
    chan_cfg: &ChannelConfig,
    word_dropout: f64,
    dropout_rng: &mut Rng,
) -> Var {
    let x = model::transmit(tape, binds, arch, &batch.ids, &batch.pad_mask, batch.batch);
    let y = apply_channel_on_tape(tape, x, chan_cfg, batch.batch, Some(&batch.pad_mask));
    let m_hat = model::channel_decode(tape, binds, arch, user, y);

    let mut dec_ids = Vec::with_capacity(batch.ids.len());
    for row in 0..batch.batch {
        dec_ids.extend(batch.shifted_right(row));
    }
    if word_dropout > 0.0 {
        for id in dec_ids.iter_mut() {
            if *id != START && *id != PAD && dropout_rng.next_f64() < word_dropout {
                *id = UNK;
            }
        }
    }
    let logits = model::semantic_decode_teacher(
        tape,
        binds,
        arch,
        user,
        m_hat,
        &dec_ids,
        &batch.pad_mask,
        batch.batch,
    );
    cross_entropy_loss(tape, logits, &batch.ids, &batch.pad_mask)
}

fn top_prefixes(store: &ParamStore) -> Vec<String> {
    let mut out: Vec<String> = store
        .paths()
        .map(|p| p.split('/').next().unwrap_or(p).to_string())
        .collect();
    out.dedup();
    out.sort();
    out.dedup();
    out
}

/// Greedy-decodes `batches` through the channel with receiver `user` and
/// scores slot-by-slot BLEU against the references (no recognizer routing).
pub fn greedy_bleu(
    store: &ParamStore,
    arch: &ArchConfig,
    vocab: &Vocabulary,
    batches: &[MergedBatch],
    user: usize,
    chan_cfg: &ChannelConfig,
) -> [f64; 4] {
    let mut pairs = Vec::new();
    for (i, batch) in batches.iter().enumerate() {
        let mut cfg = *chan_cfg;
        cfg.seed = derive_seed(chan_cfg.seed, i as u64);
        let rows = decode_rows(store, arch, user, batch, &cfg);
        for (row_idx, row) in rows.iter().enumerate() {
            for slot in 0..batch.num_classes {
                let words = vocab.detokenize(&row[slot * arch.slot_len..(slot + 1) * arch.slot_len]);
                let reference = batch.references[row_idx * batch.num_classes + slot].clone();
                pairs.push((words, reference));
            }
        }
    }
    corpus_average(&pairs)
}

/// Transmits one batch, runs it through the channel, and greedy-decodes the
/// merged rows with receiver `user`. Returns raw id rows.
pub fn decode_rows(
    store: &ParamStore,
    arch: &ArchConfig,
    user: usize,
    batch: &MergedBatch,
    chan_cfg: &ChannelConfig,
) -> Vec<Vec<usize>> {
    let everything = top_prefixes(store);
    let frozen: Vec<&str> = everything.iter().map(String::as_str).collect();
    let mut tape = Tape::new();
    let binds = bind_params(&mut tape, store, &frozen);
    let x = model::transmit(&mut tape, &binds, arch, &batch.ids, &batch.pad_mask, batch.batch);
    let y = apply_channel_on_tape(&mut tape, x, chan_cfg, batch.batch, Some(&batch.pad_mask));
    let m_hat = model::channel_decode(&mut tape, &binds, arch, user, y);
    let m_hat_data = tape.data(m_hat).to_vec();
    drop(tape);
    model::semantic_decode_greedy(store, arch, user, &m_hat_data, &batch.pad_mask, batch.batch)
}

#[allow(clippy::too_many_arguments)]
fn run_training(
    store: &mut ParamStore,
    user: usize,
    frozen: &[&str],
    train: &[LabeledSentence],
    val: &[LabeledSentence],
    vocab: &Vocabulary,
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<TrainHistory, TrainError> {
    arch.validate().expect("invalid architecture");
    let mut history = TrainHistory::default();
    let mut snr_rng = Rng::substream(cfg.seed, streams::TRAIN_SNR);
    let mut velocity = Velocity::default();
    let mut dropout_rng = Rng::substream(cfg.seed, streams::TRAIN_SNR + 17);

    let val_batches = if cfg.val_rows > 0 && !val.is_empty() {
        let rows = cfg.val_rows.min(per_class_min(val, arch.num_users));
        if rows > 0 {
            make_batches_opts(
                val,
                vocab,
                rows,
                arch.slot_len,
                arch.num_users,
                derive_seed(cfg.seed, 0x7A11),
                cfg.insert_sep,
            )
            .into_iter()
            .take(1)
            .collect()
        } else {
            Vec::new()
        }
    } else {
        Vec::new()
    };

    for epoch in 0..cfg.epochs {
        let batches = make_batches_opts(
            train,
            vocab,
            cfg.batch_size,
            arch.slot_len,
            arch.num_users,
            derive_seed(cfg.seed, 1000 + epoch as u64),
            cfg.insert_sep,
        );
        let mut loss_sum = 0.0;
        for (step, batch) in batches.iter().enumerate() {
            let snr_db = cfg.snr_policy.draw(&mut snr_rng);
            let chan_cfg = ChannelConfig::new(
                cfg.channel,
                snr_db,
                derive_seed(cfg.seed, (epoch as u64) << 20 | step as u64),
            );
            let mut tape = Tape::new();
            let binds = bind_params(&mut tape, store, frozen);
            let loss = forward_loss_dropped(
                &mut tape,
                &binds,
                arch,
                user,
                batch,
                &chan_cfg,
                cfg.word_dropout,
                &mut dropout_rng,
            );
            let loss_val = tape.data(loss)[0];
            if !loss_val.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    loss: loss_val,
                });
            }
            tape.backward(loss);
            absorb_grads(store, &tape, &binds);
            if let Some(max_norm) = cfg.clip_norm {
                clip_global_norm(store, max_norm);
            }
            if cfg.momentum > 0.0 {
                sgd_step_momentum(store, cfg.lr, cfg.momentum, frozen, &mut velocity);
            } else {
                sgd_step(store, cfg.lr, frozen);
            }
            loss_sum += loss_val;
        }
        let mean_loss = loss_sum / batches.len().max(1) as f64;
        history.epoch_loss.push(mean_loss);
        if history.epochs_to_threshold.is_none() && mean_loss < cfg.loss_threshold {
            history.epochs_to_threshold = Some(epoch + 1);
        }
        let stop_now = cfg.stop_at_threshold && history.epochs_to_threshold.is_some();

        let val_bleu = if val_batches.is_empty() {
            0.0
        } else {
            let chan_cfg = ChannelConfig::new(
                cfg.channel,
                cfg.val_snr_db,
                derive_seed(cfg.seed, 0xE7A1),
            );
            greedy_bleu(store, arch, vocab, &val_batches, user, &chan_cfg)[3]
        };
        history.epoch_val_bleu.push(val_bleu);
        if stop_now {
            break;
        }
    }
    Ok(history)
}

fn per_class_min(corpus: &[LabeledSentence], num_classes: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    for s in corpus {
        if s.label < num_classes {
            counts[s.label] += 1;
        }
    }
    counts.into_iter().min().unwrap_or(0)
}

/// Phase 1: joint training of the transmitter and receiver 1 from fresh
/// initialization. Returns the trained store (`alpha`, `beta`, `chi_1`,
/// `delta_1`) and the loss/BLEU history.
pub fn train_phase1(
    train: &[LabeledSentence],
    val: &[LabeledSentence],
    vocab: &Vocabulary,
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<(ParamStore, TrainHistory), TrainError> {
    if per_class_min(train, arch.num_users) == 0 {
        return Err(TrainError::EmptyClass);
    }
    let mut store = model::init_transmitter(arch, cfg.seed);
    store.absorb(model::init_receiver(arch, 1, cfg.seed));
    let history = run_training(&mut store, 1, &[], train, val, vocab, arch, cfg)?;
    Ok((store, history))
}

/// How a new receiver's parameters start phase-2 training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiverInit {
    /// Transfer: copy `chi_src -> chi_k` and `delta_src -> delta_k`.
    CopyFromUser(usize),
    /// Fresh random initialization (the no-transfer baseline).
    Fresh,
}

/// Phase 2: trains receiver `user` against the (possibly different) channel
/// in `cfg`, with the transmitter frozen. The store must already hold a
/// trained transmitter; the new receiver's parameters are created here
/// according to `init`.
#[allow(clippy::too_many_arguments)]
pub fn train_receiver(
    store: &mut ParamStore,
    user: usize,
    init: ReceiverInit,
    train: &[LabeledSentence],
    val: &[LabeledSentence],
    vocab: &Vocabulary,
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<TrainHistory, TrainError> {
    if per_class_min(train, arch.num_users) == 0 {
        return Err(TrainError::EmptyClass);
    }
    let chi = model::chi_prefix(user);
    let delta = model::delta_prefix(user);
    match init {
        ReceiverInit::CopyFromUser(src) => {
            assert!(src != user, "cannot copy a receiver onto itself");
            store.copy_prefix(&model::chi_prefix(src), &chi);
            store.copy_prefix(&model::delta_prefix(src), &delta);
        }
        ReceiverInit::Fresh => {
            if !store.subset(&chi).is_empty() {
                panic!("receiver {user} already present; fresh init would clobber it");
            }
            store.absorb(model::init_receiver(arch, user, cfg.seed));
        }
    }
    let frozen_owned: Vec<String> = top_prefixes(store)
        .into_iter()
        .filter(|p| p != &chi && p != &delta)
        .collect();
    let frozen: Vec<&str> = frozen_owned.iter().map(String::as_str).collect();
    run_training(store, user, &frozen, train, val, vocab, arch, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::params_to_bytes;
    use crate::text::{gen_corpus, split_corpus, Vocabulary};

    fn tiny_setup() -> (Vec<LabeledSentence>, Vec<LabeledSentence>, Vocabulary, ArchConfig) {
        let corpus = gen_corpus(2, 30, 41).unwrap();
        let (train, val) = split_corpus(&corpus, 6, 41);
        let vocab = Vocabulary::build(&corpus).unwrap();
        let arch = ArchConfig::tiny(18, 2, vocab.len());
        (train, val, vocab, arch)
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr: 0.01,
            val_rows: 0,
            snr_policy: SnrPolicy::Fixed(18.0),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn uniform_logits_loss_is_ln_vocab() {
        let mut tape = Tape::new();
        let logits = tape.leaf_from(vec![2, 3, 20], vec![0.0; 120], true);
        let targets = vec![1usize; 6];
        let mask = vec![true; 6];
        let loss = cross_entropy_loss(&mut tape, logits, &targets, &mask);
        assert!((tape.data(loss)[0] - (20f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_drives_loss_to_zero() {
        let mut tape = Tape::new();
        let mut logits = vec![0.0; 4 * 6];
        let targets = vec![2usize, 0, 5, 1];
        for (row, &t) in targets.iter().enumerate() {
            logits[row * 6 + t] = 60.0; // huge margin for the target class
        }
        let v = tape.leaf_from(vec![4, 6], logits, true);
        let mask = vec![true; 4];
        let loss = cross_entropy_loss(&mut tape, v, &targets, &mask);
        assert!(tape.data(loss)[0] < 1e-12);
    }

    #[test]
    fn appending_pad_columns_leaves_loss_unchanged() {
        // widening every slot with PAD keeps tokens at the same positions
        // only in a single-slot layout, so the invariant is checked there
        let (train, _, vocab, arch) = tiny_setup();
        let chan = ChannelConfig::new(ChannelKind::Awgn, f64::INFINITY, 1);
        let loss_of = |arch: &ArchConfig, b: &MergedBatch| {
            let mut store = model::init_transmitter(arch, 3);
            store.absorb(model::init_receiver(arch, 1, 3));
            let mut tape = Tape::new();
            let binds = bind_params(&mut tape, &store, &[]);
            let loss = forward_loss(&mut tape, &binds, arch, 1, b, &chan);
            tape.data(loss)[0]
        };
        let mut solo = arch.clone();
        solo.num_users = 1;
        let class0: Vec<_> = train.iter().filter(|s| s.label == 0).cloned().collect();
        let one = |slot_len: usize| {
            let mut a = solo.clone();
            a.slot_len = slot_len;
            let b = &make_batches_opts(&class0, &vocab, 2, slot_len, 1, 7, false)[0];
            loss_of(&a, b)
        };
        let base = one(18);
        let padded = one(22);
        assert_eq!(base, padded, "extra PAD columns must not move the loss");
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let (train, val, vocab, arch) = tiny_setup();
        let mut cfg = quick_cfg();
        cfg.epochs = 0;
        let (store, history) = train_phase1(&train, &val, &vocab, &arch, &cfg).unwrap();
        let mut reference = model::init_transmitter(&arch, cfg.seed);
        reference.absorb(model::init_receiver(&arch, 1, cfg.seed));
        assert_eq!(params_to_bytes(&store), params_to_bytes(&reference));
        assert!(history.epoch_loss.is_empty());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (train, val, vocab, arch) = tiny_setup();
        let cfg = quick_cfg();
        let (s1, h1) = train_phase1(&train, &val, &vocab, &arch, &cfg).unwrap();
        let (s2, h2) = train_phase1(&train, &val, &vocab, &arch, &cfg).unwrap();
        assert_eq!(params_to_bytes(&s1), params_to_bytes(&s2));
        assert_eq!(h1.epoch_loss, h2.epoch_loss);
    }

    #[test]
    fn transfer_freezes_transmitter_and_copies_receiver() {
        let (train, val, vocab, arch) = tiny_setup();
        let cfg = quick_cfg();
        let (mut store, _) = train_phase1(&train, &val, &vocab, &arch, &cfg).unwrap();
        let alpha_before = params_to_bytes(&store.subset("alpha"));
        let beta_before = params_to_bytes(&store.subset("beta"));

        // zero-epoch phase 2: chi_2 must equal chi_1 byte for byte
        let mut copy_cfg = cfg.clone();
        copy_cfg.epochs = 0;
        let mut probe = store.clone();
        train_receiver(
            &mut probe,
            2,
            ReceiverInit::CopyFromUser(1),
            &train,
            &val,
            &vocab,
            &arch,
            &copy_cfg,
        )
        .unwrap();
        // paths differ (chi_1 vs chi_2) so compare tensor payloads
        for (path, t) in probe.subset("chi_1").iter() {
            let twin = path.replacen("chi_1", "chi_2", 1);
            assert_eq!(probe.get(&twin).data(), t.data(), "{path}");
        }

        // trained phase 2 leaves alpha/beta bit-identical
        let mut real_cfg = cfg.clone();
        real_cfg.channel = ChannelKind::Rayleigh;
        real_cfg.epochs = 2;
        train_receiver(
            &mut store,
            2,
            ReceiverInit::CopyFromUser(1),
            &train,
            &val,
            &vocab,
            &arch,
            &real_cfg,
        )
        .unwrap();
        assert_eq!(params_to_bytes(&store.subset("alpha")), alpha_before);
        assert_eq!(params_to_bytes(&store.subset("beta")), beta_before);
        // and chi_2 actually moved
        let moved = store.subset("chi_1").iter().any(|(path, t)| {
            let twin = path.replacen("chi_1", "chi_2", 1);
            store.get(&twin).data() != t.data()
        });
        assert!(moved, "phase-2 training left chi_2 identical to chi_1");
    }

    #[test]
    fn loss_decreases_over_short_run() {
        let (train, val, vocab, arch) = tiny_setup();
        let mut cfg = quick_cfg();
        cfg.epochs = 6;
        cfg.lr = 0.05;
        cfg.clip_norm = Some(1.0);
        let (_, history) = train_phase1(&train, &val, &vocab, &arch, &cfg).unwrap();
        let first = history.epoch_loss[0];
        let last = *history.epoch_loss.last().unwrap();
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }
}
