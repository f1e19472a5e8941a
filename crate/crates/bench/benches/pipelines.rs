use criterion::{criterion_group, criterion_main, Criterion};
use mrsc_core::channel::{awgn, normalize_power, ChannelConfig, ChannelKind, ComplexBlock};
use mrsc_core::classical::turbo::{hard_llrs, maxlogmap_decode, turbo_encode, TurboConfig};
use mrsc_core::eval::bleu::bleu;
use mrsc_core::model::{self, ArchConfig};
use mrsc_core::optim::bind_params;
use mrsc_core::rng::Rng;
use mrsc_core::tape::Tape;
use mrsc_core::text::{gen_corpus, make_batches_opts, Vocabulary};
use mrsc_core::training::forward_loss;

fn transceiver_step(c: &mut Criterion) {
    let corpus = gen_corpus(2, 40, 7).unwrap();
    let vocab = Vocabulary::build(&corpus).unwrap();
    let arch = ArchConfig::tiny(18, 2, vocab.len());
    let batch = make_batches_opts(&corpus, &vocab, 8, 18, 2, 3, false).remove(0);
    let mut store = model::init_transmitter(&arch, 5);
    store.absorb(model::init_receiver(&arch, 1, 5));
    let chan = ChannelConfig::new(ChannelKind::Awgn, 12.0, 9);

    c.bench_function("tiny forward+backward step (batch 8)", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let binds = bind_params(&mut tape, &store, &[]);
            let loss = forward_loss(&mut tape, &binds, &arch, 1, &batch, &chan);
            tape.backward(loss);
            tape.data(loss)[0]
        })
    });
}

fn turbo_block(c: &mut Criterion) {
    let cfg = TurboConfig::new(512, 5, 11);
    let mut rng = Rng::seeded(13);
    let bits: Vec<bool> = (0..512).map(|_| rng.next_f64() < 0.5).collect();
    let coded = turbo_encode(&bits, &cfg).unwrap();
    let llrs = hard_llrs(&coded, 4.0);

    c.bench_function("turbo encode 512-bit block", |b| {
        b.iter(|| turbo_encode(&bits, &cfg).unwrap())
    });
    c.bench_function("max-log-map decode 512-bit block (5 iterations)", |b| {
        b.iter(|| maxlogmap_decode(&llrs, &cfg).unwrap())
    });
}

fn channel_throughput(c: &mut Criterion) {
    let mut rng = Rng::seeded(17);
    let data: Vec<f64> = (0..200_000).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let block = normalize_power(&ComplexBlock::new(10, 10_000, data));
    let cfg = ChannelConfig::new(ChannelKind::Awgn, 6.0, 19);

    c.bench_function("awgn over 100k symbols", |b| b.iter(|| awgn(&block, &cfg)));
}

fn bleu_scoring(c: &mut Criterion) {
    let corpus = gen_corpus(2, 50, 23).unwrap();
    let pairs: Vec<(Vec<String>, Vec<String>)> = corpus
        .windows(2)
        .map(|w| (w[0].words.clone(), w[1].words.clone()))
        .collect();

    c.bench_function("bleu over 99 sentence pairs", |b| {
        b.iter(|| {
            pairs
                .iter()
                .map(|(cand, reference)| bleu(cand, reference).bleu4())
                .sum::<f64>()
        })
    });
}

criterion_group!(
    benches,
    transceiver_step,
    turbo_block,
    channel_throughput,
    bleu_scoring
);
criterion_main!(benches);
