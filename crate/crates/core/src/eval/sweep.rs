//! BLEU-versus-SNR and BLEU-versus-user-count sweeps, with CSV/JSON emission.
//!
//! Rows are deterministic for a given configuration and seed: all randomness
//! is derived from the sweep seed, and rows are sorted by axis value then
//! model tag before emission, so repeated runs produce identical bytes.

use crate::channel::{ChannelConfig, ChannelKind};
use crate::classical::pipeline::{ClassicalSystem, PipelineError};
use crate::eval::bleu::{bleu, MAX_N};
use crate::model::ArchConfig;
use crate::recognizer::{route, split_slots, Recognizer};
use crate::rng::derive_seed;
use crate::tensor::ParamStore;
use crate::text::{MergedBatch, Vocabulary};
use crate::training::decode_rows;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error(transparent)]
    Recognizer(#[from] crate::recognizer::RecognizerError),
    #[error(transparent)]
    Text(#[from] crate::text::TextError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub model: String,
    /// "snr_db" or "num_users".
    pub metric_axis: &'static str,
    pub value: f64,
    pub bleu: [f64; MAX_N],
    pub seed: u64,
    pub n_sentences: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            a.value
                .partial_cmp(&b.value)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.model.cmp(&b.model))
        });
    }

    pub fn rows_for(&self, model: &str) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.model == model).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,metric_axis,value,bleu1,bleu2,bleu3,bleu4,seed,n_sentences\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.model, r.metric_axis, r.value, r.bleu[0], r.bleu[1], r.bleu[2], r.bleu[3],
                r.seed, r.n_sentences
            )
            .expect("string write");
        }
        out
    }

    /// JSON mirror carrying the full configuration for provenance.
    pub fn to_json(&self, config: &BTreeMap<String, String>) -> String {
        let mut out = String::from("{\n  \"config\": {\n");
        let mut first = true;
        for (key, value) in config {
            if !first {
                out.push_str(",\n");
            }
            first = false;
            write!(out, "    \"{}\": \"{}\"", escape(key), escape(value)).expect("string write");
        }
        out.push_str("\n  },\n  \"rows\": [\n");
        for (i, r) in self.rows.iter().enumerate() {
            if i > 0 {
                out.push_str(",\n");
            }
            write!(
                out,
                "    {{\"model\": \"{}\", \"metric_axis\": \"{}\", \"value\": {}, \
                 \"bleu1\": {:.6}, \"bleu2\": {:.6}, \"bleu3\": {:.6}, \"bleu4\": {:.6}, \
                 \"seed\": {}, \"n_sentences\": {}}}",
                escape(&r.model),
                r.metric_axis,
                r.value,
                r.bleu[0],
                r.bleu[1],
                r.bleu[2],
                r.bleu[3],
                r.seed,
                r.n_sentences
            )
            .expect("string write");
        }
        out.push_str("\n  ]\n}\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.chars()
        .flat_map(|c| match c {
            '"' => vec!['\\', '"'],
            '\\' => vec!['\\', '\\'],
            '\n' => vec!['\\', 'n'],
            c => vec![c],
        })
        .collect()
}

/// Everything needed to evaluate one trained system.
pub struct EvalContext<'a> {
    pub store: &'a ParamStore,
    pub arch: &'a ArchConfig,
    pub vocab: &'a Vocabulary,
    pub recognizer: &'a Recognizer,
    pub test_batches: &'a [MergedBatch],
}

/// Average BLEU over test rows for receiver `user` (1-based) at one channel
/// point: decode the merged row, split slots, route via the recognizer, and
/// score the best delivered sentence against the user's reference (zero when
/// nothing is delivered). Returns (bleu, rows scored, delivery successes).
pub fn semantic_point(
    ctx: &EvalContext,
    user: usize,
    kind: ChannelKind,
    snr_db: f64,
    seed: u64,
) -> ([f64; MAX_N], usize, usize) {
    let class = user - 1;
    let mut sums = [0.0; MAX_N];
    let mut rows_scored = 0;
    let mut delivered_true_class = 0;
    for (i, batch) in ctx.test_batches.iter().enumerate() {
        let chan = ChannelConfig::new(kind, snr_db, derive_seed(seed, 0x5EED + i as u64));
        let decoded = decode_rows(ctx.store, ctx.arch, user, batch, &chan);
        for (row_idx, row_ids) in decoded.iter().enumerate() {
            let slots = split_slots(row_ids, ctx.arch.slot_len, batch.num_classes, ctx.vocab);
            let routed = route(&slots, ctx.recognizer, ctx.vocab, class);
            let reference = batch.reference_for_class(row_idx, class).to_vec();
            if let Some((slot, words, _)) = routed.best() {
                let score = bleu(words, &reference);
                for (s, c) in sums.iter_mut().zip(&score.cumulative) {
                    *s += c;
                }
                let true_label = batch.slot_labels[row_idx * batch.num_classes + slot];
                if true_label == class {
                    delivered_true_class += 1;
                }
            }
            rows_scored += 1;
        }
    }
    for s in &mut sums {
        *s /= rows_scored.max(1) as f64;
    }
    (sums, rows_scored, delivered_true_class)
}

/// Average BLEU of the classical chain for `user` over the same test rows.
pub fn classical_point(
    system: &ClassicalSystem,
    batches: &[MergedBatch],
    user: usize,
    kind: ChannelKind,
    snr_db: f64,
    seed: u64,
) -> Result<([f64; MAX_N], usize), PipelineError> {
    let num_users = system.cdma.num_users;
    let mut sums = [0.0; MAX_N];
    let mut rows_scored = 0;
    for (i, batch) in batches.iter().enumerate() {
        for row_idx in 0..batch.batch {
            // user k transmits its own class's sentence
            let sentences: Vec<Vec<String>> = (0..num_users)
                .map(|class| batch.reference_for_class(row_idx, class).to_vec())
                .collect();
            let chan = ChannelConfig::new(
                kind,
                snr_db,
                derive_seed(seed, 0xC0DE + (i * 1009 + row_idx) as u64),
            );
            let decoded = system.run_row(&sentences, &chan)?;
            let score = bleu(&decoded[user - 1], &sentences[user - 1]);
            for (s, c) in sums.iter_mut().zip(&score.cumulative) {
                *s += c;
            }
            rows_scored += 1;
        }
    }
    for s in &mut sums {
        *s /= rows_scored.max(1) as f64;
    }
    Ok((sums, rows_scored))
}

/// One evaluated model line of an SNR sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnrModel {
    /// Receiver `user` of the learned system under the given channel.
    Semantic { user: usize, kind: ChannelKind },
    /// The classical chain (scored on receiver 1) under the given channel.
    Classical { kind: ChannelKind },
}

impl SnrModel {
    pub fn tag(&self) -> String {
        match self {
            SnrModel::Semantic { user, kind } => format!("semantic_rx{user}_{}", kind.name()),
            SnrModel::Classical { kind } => format!("classical_{}", kind.name()),
        }
    }
}

/// The default evaluation layout: receiver 1 under AWGN, receiver 2 under
/// Rayleigh (when trained), and the classical chain under both channels.
pub fn default_snr_models(has_rx2: bool) -> Vec<SnrModel> {
    let mut models = vec![
        SnrModel::Semantic {
            user: 1,
            kind: ChannelKind::Awgn,
        },
        SnrModel::Classical {
            kind: ChannelKind::Awgn,
        },
    ];
    if has_rx2 {
        models.push(SnrModel::Semantic {
            user: 2,
            kind: ChannelKind::Rayleigh,
        });
        models.push(SnrModel::Classical {
            kind: ChannelKind::Rayleigh,
        });
    }
    models
}

/// BLEU of each model at every SNR grid point.
pub fn run_snr_sweep(
    ctx: &EvalContext,
    classical: Option<&ClassicalSystem>,
    models: &[SnrModel],
    grid: &[f64],
    seed: u64,
) -> Result<SweepResult, SweepError> {
    let mut result = SweepResult::default();
    for &snr_db in grid {
        let point_seed = derive_seed(seed, (snr_db * 1000.0) as i64 as u64);
        for model in models {
            let (bleu, n) = match *model {
                SnrModel::Semantic { user, kind } => {
                    let (scores, rows, _) = semantic_point(ctx, user, kind, snr_db, point_seed);
                    (scores, rows)
                }
                SnrModel::Classical { kind } => {
                    let system = classical.expect("classical model requested without a system");
                    let (scores, rows) =
                        classical_point(system, ctx.test_batches, 1, kind, snr_db, point_seed)?;
                    (scores, rows)
                }
            };
            result.rows.push(SweepRow {
                model: model.tag(),
                metric_axis: "snr_db",
                value: snr_db,
                bleu,
                seed: point_seed,
                n_sentences: n,
            });
        }
    }
    result.sort();
    Ok(result)
}

/// Average of all users' BLEU for one trained K-user system at one channel
/// point (the user-count sweep metric).
pub fn all_users_average(
    ctx: &EvalContext,
    kind: ChannelKind,
    snr_db: f64,
    seed: u64,
) -> ([f64; MAX_N], usize) {
    let k = ctx.arch.num_users;
    let mut sums = [0.0; MAX_N];
    let mut rows = 0;
    for user in 1..=k {
        let (scores, n, _) = semantic_point(ctx, user, kind, snr_db, derive_seed(seed, user as u64));
        for (s, c) in sums.iter_mut().zip(&scores) {
            *s += c;
        }
        rows += n;
    }
    for s in &mut sums {
        *s /= k as f64;
    }
    (sums, rows)
}

/// Classical counterpart of [`all_users_average`].
pub fn classical_all_users_average(
    system: &ClassicalSystem,
    batches: &[MergedBatch],
    kind: ChannelKind,
    snr_db: f64,
    seed: u64,
) -> Result<([f64; MAX_N], usize), PipelineError> {
    let k = system.cdma.num_users;
    let mut sums = [0.0; MAX_N];
    let mut rows = 0;
    for user in 1..=k {
        let (scores, n) =
            classical_point(system, batches, user, kind, snr_db, derive_seed(seed, user as u64))?;
        for (s, c) in sums.iter_mut().zip(&scores) {
            *s += c;
        }
        rows += n;
    }
    for s in &mut sums {
        *s /= k as f64;
    }
    Ok((sums, rows))
}
