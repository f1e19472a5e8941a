//! Acceptance suite: one test per release criterion, each printing a
//! `[criterion N] PASS` line with its measured numbers (run with
//! `--nocapture` to see them). Heavyweight fixtures (the trained tiny
//! system) are built once and shared.

use mrsc_core::channel::{
    awgn, equalize, fading_gains, normalize_power, rayleigh, ChannelConfig, ChannelKind,
    ComplexBlock,
};
use mrsc_core::classical::huffman::HuffmanCodebook;
use mrsc_core::classical::pipeline::{measure_chain_ber, ClassicalSystem};
use mrsc_core::classical::qam::{hard_decisions, qam64_modulate, qam64_soft_demap};
use mrsc_core::classical::turbo::{
    constituent_app_llrs, hard_llrs, maxlogmap_decode, rsc_encode, turbo_encode, TurboConfig,
    MEMORY,
};
use mrsc_core::config::{ExperimentConfig, RawConfig};
use mrsc_core::eval::complexity::{
    estimate_encoder_decoder, estimate_recognizer, instrumented_encoder_decoder,
    instrumented_recognizer,
};
use mrsc_core::eval::sweep::{classical_point, semantic_point, EvalContext};
use mrsc_core::experiment::{
    cmd_eval_users, cmd_train, load_system, transceiver_grad_check, LoadedSystem,
};
use mrsc_core::gradcheck::{check_all_primitives, check_small_mlp};
use mrsc_core::model::ArchConfig;
use mrsc_core::recognizer::{shuffle_labels, train_recognizer, RecognizerConfig};
use mrsc_core::rng::Rng;
use mrsc_core::text::gen_corpus;
use mrsc_core::training::{
    greedy_bleu, train_phase1, train_receiver, ReceiverInit, SnrPolicy, TrainConfig,
};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance_{tag}"));
    std::fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

// ---------------------------------------------------------------- fixture

const TINY_SEED: u64 = 42;

const TINY_CONF: &str = "\
corpus.per_class = 200
corpus.test_per_class = 30
arch.preset = tiny
train.epochs = 60
train.lr = 0.5
train.clip_norm = 1.0
train.batch_size = 2
train.word_dropout = 0.45
train.snr_policy = fixed
train.snr_db = 18
train.val_rows = 12
sweep.test_rows = 24
";

struct TinySystem {
    cfg: ExperimentConfig,
    loaded: LoadedSystem,
    initial_loss: f64,
    final_loss: f64,
    recognizer_held_out: f64,
    train_secs: f64,
}

fn tiny_system() -> &'static TinySystem {
    static SYSTEM: OnceLock<TinySystem> = OnceLock::new();
    SYSTEM.get_or_init(|| {
        let raw = RawConfig::parse(TINY_CONF).expect("fixture config");
        let cfg = ExperimentConfig::from_raw(raw, Some(TINY_SEED)).expect("fixture config");
        let dir = scratch_dir("tiny_system");
        let start = Instant::now();
        let (history, report) = cmd_train(&cfg, &dir).expect("fixture training");
        let train_secs = start.elapsed().as_secs_f64();
        let loaded = load_system(&cfg, &dir).expect("fixture load");
        TinySystem {
            cfg,
            loaded,
            initial_loss: history.epoch_loss[0],
            final_loss: *history.epoch_loss.last().expect("epochs"),
            recognizer_held_out: report.held_out_accuracy,
            train_secs,
        }
    })
}

fn tiny_classical() -> ClassicalSystem {
    let system = tiny_system();
    let texts = system
        .loaded
        .bundle
        .train
        .iter()
        .chain(&system.loaded.bundle.test)
        .map(|s| s.words.join(" "));
    ClassicalSystem::new(texts, system.loaded.arch.num_users, TINY_SEED).expect("classical")
}

fn eval_seed(snr_db: f64) -> u64 {
    0xE7A1 + (snr_db * 8.0) as u64
}

fn tiny_semantic_bleu4(snr_db: f64) -> f64 {
    let system = tiny_system();
    let chan = ChannelConfig::new(ChannelKind::Awgn, snr_db, eval_seed(snr_db));
    greedy_bleu(
        &system.loaded.store,
        &system.loaded.arch,
        &system.loaded.vocab,
        &system.loaded.test_batches,
        1,
        &chan,
    )[3]
}

// ------------------------------------------------------------- criteria

#[test]
fn criterion_01_autodiff_finite_difference() {
    let start = Instant::now();
    let mut results = check_all_primitives(0xACCE);
    results.push(check_small_mlp(0xACCE));
    results.push(transceiver_grad_check(0xACCE, 40));
    let mut worst = 0.0f64;
    for r in &results {
        assert!(
            r.passed(),
            "[criterion 1] FAIL: {} rel err {:.3e} over {} coords",
            r.name,
            r.max_rel_err,
            r.coords_checked
        );
        worst = worst.max(r.max_rel_err);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "[criterion 1] FAIL: took {elapsed:.1}s");
    println!(
        "[criterion 1] PASS autodiff: {} checks (primitives, 17-param MLP, full transceiver), \
         worst rel err {worst:.2e} < 1e-6, {elapsed:.1}s",
        results.len()
    );
}

#[test]
fn criterion_02_channel_calibration() {
    // AWGN: measured SNR of a unit-power signal
    let mut worst_awgn = 0.0f64;
    for snr_db in [0.0, 6.0, 12.0, 18.0] {
        let mut rng = Rng::seeded(0xCA11 + snr_db as u64);
        let n = 1_000_000usize;
        let amp = std::f64::consts::FRAC_1_SQRT_2;
        let data: Vec<f64> = (0..2 * n)
            .map(|_| if rng.next_f64() < 0.5 { amp } else { -amp })
            .collect();
        let x = ComplexBlock::new(1, n, data);
        let cfg = ChannelConfig::new(ChannelKind::Awgn, snr_db, 0xA3 + snr_db as u64);
        let y = awgn(&x, &cfg);
        let noise_power: f64 = y
            .data
            .iter()
            .zip(&x.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64;
        let measured = 10.0 * (x.mean_power() / noise_power).log10();
        worst_awgn = worst_awgn.max((measured - snr_db).abs());
    }
    assert!(worst_awgn < 0.1, "[criterion 2] FAIL: AWGN off by {worst_awgn:.3} dB");

    // Rayleigh: post-equalization noise against the per-row model sigma^2/|h|^2
    let mut worst_ray = 0.0f64;
    for snr_db in [0.0, 6.0, 12.0, 18.0] {
        let rows = 1000;
        let cols = 1000;
        let x = normalize_power(&{
            let mut rng = Rng::seeded(0xBEE + snr_db as u64);
            let data = (0..rows * cols * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
            ComplexBlock::new(rows, cols, data)
        });
        let cfg = ChannelConfig::new(ChannelKind::Rayleigh, snr_db, 0xD0 + snr_db as u64);
        let (y, gains) = rayleigh(&x, &cfg);
        let eq = equalize(&y, &gains, cfg.fading);
        assert!(eq.outage_units.is_empty());
        let sigma2 = cfg.noise_variance();
        let mut measured_total = 0.0;
        let mut predicted_total = 0.0;
        for (r, &(hr, hi)) in gains.iter().enumerate() {
            let row = &eq.block.data[r * cols * 2..(r + 1) * cols * 2];
            let x_row = &x.data[r * cols * 2..(r + 1) * cols * 2];
            let noise: f64 = row
                .iter()
                .zip(x_row)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            measured_total += noise;
            predicted_total += sigma2 / (hr * hr + hi * hi) * cols as f64;
        }
        let off = 10.0 * (measured_total / predicted_total).log10().abs();
        worst_ray = worst_ray.max(off);
    }
    assert!(
        worst_ray < 0.1,
        "[criterion 2] FAIL: post-equalization Rayleigh off by {worst_ray:.3} dB"
    );

    let mut rng = Rng::seeded(0xFA);
    let gains = fading_gains(&mut rng, 100_000);
    let mean_sq: f64 = gains.iter().map(|(r, i)| r * r + i * i).sum::<f64>() / gains.len() as f64;
    assert!(
        (mean_sq - 1.0).abs() < 0.02,
        "[criterion 2] FAIL: E|h|^2 = {mean_sq:.4}"
    );
    println!(
        "[criterion 2] PASS channel calibration: AWGN within {worst_awgn:.3} dB, \
         post-eq Rayleigh within {worst_ray:.3} dB, E|h|^2 = {mean_sq:.4}"
    );
}

/// Independent exhaustive oracle: best full-path metric per bit hypothesis,
/// enumerated over every input sequence of the constituent code.
fn oracle_constituent_llrs(
    prior: &[f64],
    sys: &[f64],
    parity: &[f64],
    tail: &[(f64, f64)],
) -> Vec<f64> {
    let len = prior.len();
    let metric = |bit: bool, llr: f64| if bit { -llr / 2.0 } else { llr / 2.0 };
    let mut best = vec![[f64::NEG_INFINITY; 2]; len];
    for pattern in 0u32..(1 << len) {
        let bits: Vec<bool> = (0..len).map(|k| (pattern >> k) & 1 == 1).collect();
        let (enc_sys, enc_par) = rsc_encode(&bits, !tail.is_empty());
        let mut m = 0.0;
        for k in 0..len {
            m += metric(bits[k], prior[k]);
            m += metric(enc_sys[k], sys[k]);
            m += metric(enc_par[k], parity[k]);
        }
        for (t, &(sys_llr, par_llr)) in tail.iter().enumerate() {
            m += metric(enc_sys[len + t], sys_llr);
            m += metric(enc_par[len + t], par_llr);
        }
        for k in 0..len {
            let side = &mut best[k][bits[k] as usize];
            if m > *side {
                *side = m;
            }
        }
    }
    best.iter().map(|b| b[0] - b[1]).collect()
}

#[test]
fn criterion_03_classical_exactness() {
    let start = Instant::now();

    // Huffman round trip over the whole synthetic corpus
    let corpus = gen_corpus(2, 230, TINY_SEED).expect("corpus");
    let codebook =
        HuffmanCodebook::from_texts(corpus.iter().map(|s| s.words.join(" ")).collect::<Vec<_>>()
            .iter()
            .map(String::as_str))
        .expect("codebook");
    for sentence in &corpus {
        let text = sentence.words.join(" ");
        let bits = codebook.encode(&text).expect("encode");
        assert_eq!(codebook.decode(&bits), text, "[criterion 3] FAIL: Huffman");
    }

    // turbo decode . encode identity for all 2^10 ten-bit messages
    let cfg = TurboConfig::new(10, 5, 0xACCE);
    for pattern in 0u32..(1 << 10) {
        let bits: Vec<bool> = (0..10).map(|k| (pattern >> k) & 1 == 1).collect();
        let coded = turbo_encode(&bits, &cfg).expect("encode");
        let decoded = maxlogmap_decode(&hard_llrs(&coded, 8.0), &cfg).expect("decode");
        assert_eq!(decoded, bits, "[criterion 3] FAIL: turbo message {pattern}");
    }

    // constituent Max-Log-MAP equals the exhaustive path-max oracle, exactly;
    // LLRs on a dyadic grid make every metric sum exact in f64
    let mut rng = Rng::seeded(0x0C3);
    let dyadic = |rng: &mut Rng| (rng.below(1 << 19) as i64 - (1 << 18)) as f64 / (1 << 16) as f64;
    for len in [6usize, 9, 12] {
        for _ in 0..3 {
            let prior: Vec<f64> = (0..len).map(|_| dyadic(&mut rng)).collect();
            let sys: Vec<f64> = (0..len).map(|_| dyadic(&mut rng)).collect();
            let parity: Vec<f64> = (0..len).map(|_| dyadic(&mut rng)).collect();
            let tail: Vec<(f64, f64)> = (0..MEMORY)
                .map(|_| (dyadic(&mut rng), dyadic(&mut rng)))
                .collect();
            assert_eq!(
                constituent_app_llrs(&prior, &sys, &parity, &tail),
                oracle_constituent_llrs(&prior, &sys, &parity, &tail),
                "[criterion 3] FAIL: terminated constituent len {len}"
            );
            assert_eq!(
                constituent_app_llrs(&prior, &sys, &parity, &[]),
                oracle_constituent_llrs(&prior, &sys, &parity, &[]),
                "[criterion 3] FAIL: open constituent len {len}"
            );
        }
    }

    // 64-QAM demap-then-slice identity over all 64 labels at zero noise
    for pattern in 0usize..64 {
        let bits: Vec<bool> = (0..6).map(|i| (pattern >> (5 - i)) & 1 == 1).collect();
        let symbols = qam64_modulate(&bits).expect("modulate");
        let llrs = qam64_soft_demap(&symbols, 1e-9);
        assert_eq!(hard_decisions(&llrs), bits, "[criterion 3] FAIL: QAM {pattern:06b}");
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "[criterion 3] FAIL: took {elapsed:.0}s");
    println!(
        "[criterion 3] PASS classical exactness: Huffman round trip on {} sentences, \
         1024 noiseless turbo blocks, exact Max-Log-MAP oracle equality, 64 QAM labels, {elapsed:.1}s",
        corpus.len()
    );
}

#[test]
fn criterion_04_baseline_behavior() {
    // BER monotone over the SNR grid with common random numbers
    let mut previous = f64::INFINITY;
    let mut bers = Vec::new();
    for snr_db in [0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0] {
        let ber = measure_chain_ber(2, ChannelKind::Awgn, snr_db, 100_000, 0xB3).expect("ber");
        assert!(
            ber <= previous,
            "[criterion 4] FAIL: BER rose from {previous:.5} to {ber:.5} at {snr_db} dB"
        );
        previous = ber;
        bers.push((snr_db, ber));
    }

    // classical BLEU-4 at 18 dB AWGN on the held-out corpus
    let system = tiny_system();
    let classical = tiny_classical();
    let (bleu, rows) = classical_point(
        &classical,
        &system.loaded.test_batches,
        1,
        ChannelKind::Awgn,
        18.0,
        0xC4,
    )
    .expect("classical point");
    assert!(
        bleu[3] >= 0.99,
        "[criterion 4] FAIL: classical BLEU-4 at 18 dB = {:.4}",
        bleu[3]
    );
    println!(
        "[criterion 4] PASS baseline: BER non-increasing {:?}; classical BLEU-4 at 18 dB = {:.4} over {rows} rows",
        bers.iter().map(|(s, b)| format!("{s}:{b:.4}")).collect::<Vec<_>>(),
        bleu[3]
    );
}

#[test]
fn criterion_05_semantic_training_tiny() {
    let system = tiny_system();
    let ratio = system.final_loss / system.initial_loss;
    assert!(
        ratio < 0.2,
        "[criterion 5] FAIL: loss only fell {:.3} -> {:.3} (ratio {ratio:.3})",
        system.initial_loss,
        system.final_loss
    );
    assert!(
        system.train_secs < 1800.0,
        "[criterion 5] FAIL: training took {:.0}s",
        system.train_secs
    );
    let bleu4 = tiny_semantic_bleu4(18.0);
    assert!(
        bleu4 >= 0.9,
        "[criterion 5] FAIL: held-out greedy BLEU-4 at 18 dB = {bleu4:.4}"
    );
    println!(
        "[criterion 5] PASS tiny training: loss {:.3} -> {:.3} (ratio {ratio:.3}) in {:.0}s, \
         held-out BLEU-4 at 18 dB = {bleu4:.4}",
        system.initial_loss, system.final_loss, system.train_secs
    );
}

#[test]
fn criterion_06_low_snr_trend() {
    let system = tiny_system();
    let classical = tiny_classical();
    let classical_bleu4 = |snr_db: f64| {
        classical_point(
            &classical,
            &system.loaded.test_batches,
            1,
            ChannelKind::Awgn,
            snr_db,
            0xC6 + snr_db as u64,
        )
        .expect("classical point")
        .0[3]
    };
    let mut report = Vec::new();
    for snr_db in [0.0, 3.0] {
        let semantic = tiny_semantic_bleu4(snr_db);
        let classical = classical_bleu4(snr_db);
        assert!(
            semantic > classical,
            "[criterion 6] FAIL at {snr_db} dB: semantic {semantic:.4} <= classical {classical:.4}"
        );
        report.push(format!("{snr_db} dB: {semantic:.3} vs {classical:.3}"));
    }
    for snr_db in [15.0, 18.0] {
        let semantic = tiny_semantic_bleu4(snr_db);
        let classical = classical_bleu4(snr_db);
        assert!(
            classical >= semantic - 0.05,
            "[criterion 6] FAIL at {snr_db} dB: classical {classical:.4} < semantic {semantic:.4} - 0.05"
        );
        report.push(format!("{snr_db} dB: {semantic:.3} vs {classical:.3}"));
    }
    println!(
        "[criterion 6] PASS low-SNR trend (semantic vs classical BLEU-4): {}",
        report.join("; ")
    );
}

#[test]
fn criterion_07_transfer_contracts() {
    let corpus = gen_corpus(2, 150, 0x77).expect("corpus");
    let (train, val) = mrsc_core::text::split_corpus(&corpus, 25, 0x77);
    let vocab = mrsc_core::text::Vocabulary::build(&corpus).expect("vocab");
    let arch = ArchConfig::tiny(18, 2, vocab.len());

    let phase1_cfg = |seed: u64| TrainConfig {
        lr: 0.5,
        clip_norm: Some(1.0),
        batch_size: 2,
        epochs: 40,
        word_dropout: 0.45,
        snr_policy: SnrPolicy::Fixed(18.0),
        channel: ChannelKind::Awgn,
        seed,
        val_rows: 0,
        ..TrainConfig::default()
    };
    let receiver_cfg = |seed: u64| TrainConfig {
        channel: ChannelKind::Rayleigh,
        loss_threshold: 0.3,
        stop_at_threshold: true,
        epochs: 40,
        ..phase1_cfg(seed)
    };

    let mut transfer_epochs = Vec::new();
    let mut scratch_epochs = Vec::new();
    for seed in [11u64, 12, 13] {
        let (store, _) =
            train_phase1(&train, &val, &vocab, &arch, &phase1_cfg(seed)).expect("phase 1");
        let alpha_before = mrsc_core::checkpoint::params_to_bytes(&store.subset("alpha"));
        let beta_before = mrsc_core::checkpoint::params_to_bytes(&store.subset("beta"));

        // copy initialization: chi_2 equals chi_1 at step zero
        let mut probe = store.clone();
        let mut zero_cfg = receiver_cfg(seed);
        zero_cfg.epochs = 0;
        train_receiver(
            &mut probe,
            2,
            ReceiverInit::CopyFromUser(1),
            &train,
            &val,
            &vocab,
            &arch,
            &zero_cfg,
        )
        .expect("zero-epoch transfer");
        for (path, tensor) in probe.subset("chi_1").iter() {
            let twin = path.replacen("chi_1", "chi_2", 1);
            assert_eq!(
                probe.get(&twin).data(),
                tensor.data(),
                "[criterion 7] FAIL: chi_2 != chi_1 at step 0 ({path})"
            );
        }

        let mut transfer_store = store.clone();
        let transfer_history = train_receiver(
            &mut transfer_store,
            2,
            ReceiverInit::CopyFromUser(1),
            &train,
            &val,
            &vocab,
            &arch,
            &receiver_cfg(seed),
        )
        .expect("transfer");
        assert_eq!(
            mrsc_core::checkpoint::params_to_bytes(&transfer_store.subset("alpha")),
            alpha_before,
            "[criterion 7] FAIL: alpha changed during phase 2"
        );
        assert_eq!(
            mrsc_core::checkpoint::params_to_bytes(&transfer_store.subset("beta")),
            beta_before,
            "[criterion 7] FAIL: beta changed during phase 2"
        );

        let mut scratch_store = store.clone();
        let scratch_history = train_receiver(
            &mut scratch_store,
            2,
            ReceiverInit::Fresh,
            &train,
            &val,
            &vocab,
            &arch,
            &receiver_cfg(seed),
        )
        .expect("scratch receiver");

        let cap = receiver_cfg(seed).epochs + 1;
        transfer_epochs.push(transfer_history.epochs_to_threshold.unwrap_or(cap));
        scratch_epochs.push(scratch_history.epochs_to_threshold.unwrap_or(cap));
    }
    let median = |xs: &mut Vec<usize>| {
        xs.sort_unstable();
        xs[xs.len() / 2]
    };
    let transfer_median = median(&mut transfer_epochs);
    let scratch_median = median(&mut scratch_epochs);
    assert!(
        transfer_median <= scratch_median,
        "[criterion 7] FAIL: transfer median {transfer_median} > from-scratch median {scratch_median}"
    );
    println!(
        "[criterion 7] PASS transfer: alpha/beta frozen bit-exactly, chi_2 == chi_1 at step 0, \
         epochs-to-loss-0.3 median transfer {transfer_median} <= scratch {scratch_median} \
         (transfer {transfer_epochs:?}, scratch {scratch_epochs:?})"
    );
}

#[test]
fn criterion_08_recognizer_and_routing() {
    let system = tiny_system();
    assert!(
        system.recognizer_held_out >= 0.95,
        "[criterion 8] FAIL: held-out accuracy {:.3}",
        system.recognizer_held_out
    );

    // end to end at 18 dB: user 1 must receive a truly positive sentence in
    // at least 90% of rows
    let ctx = EvalContext {
        store: &system.loaded.store,
        arch: &system.loaded.arch,
        vocab: &system.loaded.vocab,
        recognizer: &system.loaded.recognizer,
        test_batches: &system.loaded.test_batches,
    };
    let (_, rows, delivered_true) = semantic_point(&ctx, 1, ChannelKind::Awgn, 18.0, 0xC8);
    let rate = delivered_true as f64 / rows as f64;
    assert!(
        rate >= 0.9,
        "[criterion 8] FAIL: user 1 received its class in {delivered_true}/{rows} rows"
    );

    // label-shuffled control trains to chance accuracy
    let shuffled = shuffle_labels(&system.loaded.bundle.train, 0xC8);
    let control_cfg = RecognizerConfig {
        held_out_per_class: 30,
        ..system.cfg.recognizer_template.clone()
    };
    let (_, control) =
        train_recognizer(&shuffled, &system.loaded.vocab, &control_cfg, 0xC8).expect("control");
    assert!(
        (control.held_out_accuracy - 0.5).abs() <= 0.10,
        "[criterion 8] FAIL: label-shuffled control accuracy {:.3} not near 1/K",
        control.held_out_accuracy
    );
    println!(
        "[criterion 8] PASS recognizer: held-out accuracy {:.3}, correct delivery in {delivered_true}/{rows} rows, \
         label-shuffled control at {:.3}",
        system.recognizer_held_out, control.held_out_accuracy
    );
}

#[test]
fn criterion_09_users_sweep() {
    let raw = RawConfig::parse(
        "corpus.per_class = 200\ncorpus.test_per_class = 30\narch.preset = tiny\n\
         train.lr = 0.5\ntrain.clip_norm = 1.0\ntrain.batch_size = 2\n\
         train.word_dropout = 0.45\ntrain.snr_policy = fixed\ntrain.snr_db = 18\n\
         train.val_rows = 0\nsweep.test_rows = 16\nsweep.users = 2:4:1\n\
         users.per_class = 120\nusers.epochs = 24\nusers.transfer_epochs = 8\n",
    )
    .expect("config");
    let cfg = ExperimentConfig::from_raw(raw, Some(TINY_SEED)).expect("config");
    let dir = scratch_dir("users_sweep");
    let result = cmd_eval_users(&cfg, &dir).expect("users sweep");

    let csv = std::fs::read_to_string(dir.join("results.csv")).expect("results.csv");
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model,metric_axis,value,bleu1,bleu2,bleu3,bleu4,seed,n_sentences",
        "[criterion 9] FAIL: CSV header"
    );
    for line in lines {
        assert_eq!(line.split(',').count(), 9, "[criterion 9] FAIL: row arity: {line}");
    }

    let semantic: Vec<(usize, f64)> = result
        .rows_for("semantic_avg")
        .iter()
        .map(|r| (r.value as usize, r.bleu[3]))
        .collect();
    assert_eq!(
        semantic.iter().map(|&(k, _)| k).collect::<Vec<_>>(),
        vec![2, 3, 4],
        "[criterion 9] FAIL: grid coverage"
    );
    let inversions = semantic
        .windows(2)
        .filter(|w| w[1].1 > w[0].1 + 1e-9)
        .count();
    assert!(
        inversions <= 1,
        "[criterion 9] FAIL: {inversions} inversions in {semantic:?}"
    );
    println!(
        "[criterion 9] PASS users sweep at 12 dB Rayleigh: average BLEU-4 {:?} ({} inversions), exact CSV schema",
        semantic, inversions
    );
}

#[test]
fn criterion_10_complexity_counter() {
    let archs = [
        ArchConfig::tiny(18, 2, 93),
        ArchConfig::reference(18, 2, 160),
        ArchConfig::tiny(17, 3, 120),
    ];
    for (i, arch) in archs.iter().enumerate() {
        let estimated = estimate_encoder_decoder(arch, 2);
        let instrumented = instrumented_encoder_decoder(arch, 2, 0xC10 + i as u64);
        assert_eq!(
            estimated, instrumented,
            "[criterion 10] FAIL: encoder-decoder counts differ for arch {i}"
        );
    }
    for k in [2usize, 4] {
        let cfg = RecognizerConfig::standard(18, k);
        let estimated = estimate_recognizer(&cfg, 3);
        let instrumented = instrumented_recognizer(&cfg, 3, 0xC10);
        assert_eq!(
            estimated, instrumented,
            "[criterion 10] FAIL: recognizer counts differ for K = {k}"
        );
    }
    let sample = estimate_encoder_decoder(&archs[0], 1);
    println!(
        "[criterion 10] PASS complexity: symbolic = instrumented for 3 architectures and 2 recognizers \
         (tiny forward: {} multiplies, {} adds)",
        sample.mults, sample.adds
    );
}
