//! The learned transceiver: Transformer semantic encoder/decoder plus dense
//! channel encoder/decoder, operating on merged multi-user rows.
//!
//! Transmitter parameters live under `alpha` (embedding + encoder layers) and
//! `beta` (channel-encoder dense layer); receiver `k` owns `chi_k` (two-layer
//! channel decoder) and `delta_k` (target embedding, decoder layers, output
//! projection). The transmit path is exactly
//! `channel_encode(semantic_encode(s))` with no other coupling.

use crate::optim::Bindings;
use crate::rng::{streams, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{ParamStore, Tensor};
use crate::text::{END, PAD, START};
use thiserror::Error;

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("channel-encoder width must be even to form complex symbols, got {0}")]
    OddChannelWidth(usize),
    #[error("model width {d} is not divisible by {heads} heads")]
    HeadSplit { d: usize, heads: usize },
    #[error("attention width {v} must equal model width {d}")]
    AttentionWidth { v: usize, d: usize },
    #[error("architecture mismatch against checkpoint: {0}")]
    CheckpointMismatch(String),
}

/// Architecture hyperparameters of one transceiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub v_attn: usize,
    pub d_ff: usize,
    /// Channel-encoder output units per token; pairs form complex symbols.
    pub n_ce: usize,
    /// Channel-decoder hidden units.
    pub n_cd: usize,
    pub slot_len: usize,
    pub num_users: usize,
    pub vocab_size: usize,
}

impl ArchConfig {
    /// Reference configuration: 3 encoder/decoder layers with 8 heads, dense
    /// channel stages of 16 and 128 units.
    pub fn reference(slot_len: usize, num_users: usize, vocab_size: usize) -> Self {
        ArchConfig {
            d_model: 128,
            n_layers: 3,
            n_heads: 8,
            v_attn: 128,
            d_ff: 512,
            n_ce: 16,
            n_cd: 128,
            slot_len,
            num_users,
            vocab_size,
        }
    }

    /// Small configuration for fast end-to-end runs.
    pub fn tiny(slot_len: usize, num_users: usize, vocab_size: usize) -> Self {
        ArchConfig {
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            v_attn: 32,
            d_ff: 64,
            n_ce: 16,
            n_cd: 128,
            slot_len,
            num_users,
            vocab_size,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.slot_len * self.num_users
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Complex symbols per merged row.
    pub fn symbols_per_row(&self) -> usize {
        self.seq_len() * self.n_ce / 2
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.n_ce.is_multiple_of(2) {
            return Err(ModelError::OddChannelWidth(self.n_ce));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::HeadSplit {
                d: self.d_model,
                heads: self.n_heads,
            });
        }
        if self.v_attn != self.d_model {
            return Err(ModelError::AttentionWidth {
                v: self.v_attn,
                d: self.d_model,
            });
        }
        Ok(())
    }
}

pub fn chi_prefix(user: usize) -> String {
    format!("chi_{user}")
}

pub fn delta_prefix(user: usize) -> String {
    format!("delta_{user}")
}

fn init_linear(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) {
    store.insert(
        &format!("{prefix}/w"),
        Tensor::glorot(vec![fan_in, fan_out], fan_in, fan_out, rng),
    );
    store.insert(&format!("{prefix}/b"), Tensor::zeros(vec![fan_out]));
}

fn init_layer_norm(store: &mut ParamStore, prefix: &str, d: usize) {
    store.insert(&format!("{prefix}/gamma"), Tensor::new(vec![d], vec![1.0; d]));
    store.insert(&format!("{prefix}/beta"), Tensor::zeros(vec![d]));
}

fn init_attention(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut Rng) {
    for name in ["wq", "wk", "wv", "wo"] {
        store.insert(
            &format!("{prefix}/{name}"),
            Tensor::glorot(vec![d, d], d, d, rng),
        );
    }
    for name in ["bq", "bk", "bv", "bo"] {
        store.insert(&format!("{prefix}/{name}"), Tensor::zeros(vec![d]));
    }
}

fn init_ffn(store: &mut ParamStore, prefix: &str, d: usize, d_ff: usize, rng: &mut Rng) {
    init_linear(store, &format!("{prefix}/fc1"), d, d_ff, rng);
    init_linear(store, &format!("{prefix}/fc2"), d_ff, d, rng);
}

/// Fresh transmitter parameters (`alpha` and `beta`).
pub fn init_transmitter(arch: &ArchConfig, seed: u64) -> ParamStore {
    arch.validate().expect("invalid architecture");
    let mut rng = Rng::substream(seed, streams::PARAM_INIT);
    let mut store = ParamStore::new();
    store.insert(
        "alpha/embed",
        Tensor::glorot(
            vec![arch.vocab_size, arch.d_model],
            arch.vocab_size,
            arch.d_model,
            &mut rng,
        ),
    );
    for layer in 0..arch.n_layers {
        let p = format!("alpha/enc{layer}");
        init_layer_norm(&mut store, &format!("{p}/ln1"), arch.d_model);
        init_attention(&mut store, &format!("{p}/attn"), arch.d_model, &mut rng);
        init_layer_norm(&mut store, &format!("{p}/ln2"), arch.d_model);
        init_ffn(&mut store, &format!("{p}/ffn"), arch.d_model, arch.d_ff, &mut rng);
    }
    init_layer_norm(&mut store, "alpha/ln_out", arch.d_model);
    init_linear(&mut store, "beta/fc", arch.d_model, arch.n_ce, &mut rng);
    store
}

/// Fresh receiver parameters for user `user` (1-based): `chi_k` and `delta_k`.
pub fn init_receiver(arch: &ArchConfig, user: usize, seed: u64) -> ParamStore {
    arch.validate().expect("invalid architecture");
    let mut rng = Rng::substream(seed, streams::PARAM_INIT + 100 + user as u64);
    let mut store = ParamStore::new();
    let chi = chi_prefix(user);
    init_linear(&mut store, &format!("{chi}/fc1"), arch.n_ce, arch.n_cd, &mut rng);
    init_linear(&mut store, &format!("{chi}/fc2"), arch.n_cd, arch.d_model, &mut rng);

    let delta = delta_prefix(user);
    store.insert(
        &format!("{delta}/embed"),
        Tensor::glorot(
            vec![arch.vocab_size, arch.d_model],
            arch.vocab_size,
            arch.d_model,
            &mut rng,
        ),
    );
    for layer in 0..arch.n_layers {
        let p = format!("{delta}/dec{layer}");
        init_layer_norm(&mut store, &format!("{p}/ln1"), arch.d_model);
        init_attention(&mut store, &format!("{p}/self"), arch.d_model, &mut rng);
        init_layer_norm(&mut store, &format!("{p}/ln2"), arch.d_model);
        init_attention(&mut store, &format!("{p}/cross"), arch.d_model, &mut rng);
        init_layer_norm(&mut store, &format!("{p}/ln3"), arch.d_model);
        init_ffn(&mut store, &format!("{p}/ffn"), arch.d_model, arch.d_ff, &mut rng);
    }
    init_layer_norm(&mut store, &format!("{delta}/ln_out"), arch.d_model);
    init_linear(&mut store, &format!("{delta}/out"), arch.d_model, arch.vocab_size, &mut rng);
    store
}

/// Scalar parameter count of the transmitter, as a function of the
/// architecture alone.
pub fn transmitter_param_count(arch: &ArchConfig) -> usize {
    let d = arch.d_model;
    let attn = 4 * d * d + 4 * d;
    let ln = 2 * d;
    let ffn = d * arch.d_ff + arch.d_ff + arch.d_ff * d + d;
    arch.vocab_size * d + arch.n_layers * (attn + 2 * ln + ffn) + ln + d * arch.n_ce + arch.n_ce
}

/// Scalar parameter count of one receiver.
pub fn receiver_param_count(arch: &ArchConfig) -> usize {
    let d = arch.d_model;
    let attn = 4 * d * d + 4 * d;
    let ln = 2 * d;
    let ffn = d * arch.d_ff + arch.d_ff + arch.d_ff * d + d;
    let chi = arch.n_ce * arch.n_cd + arch.n_cd + arch.n_cd * d + d;
    let delta = arch.vocab_size * d
        + arch.n_layers * (2 * attn + 3 * ln + ffn)
        + ln
        + d * arch.vocab_size
        + arch.vocab_size;
    chi + delta
}

/// Wavelength spread of the sinusoidal position code. Rows here are tens of
/// tokens, not thousands, so a small base keeps most frequency pairs
/// discriminative between neighboring positions.
pub const POSITION_BASE: f64 = 100.0;

/// Sinusoidal positional-encoding table for `seq` positions, tiled to `batch`.
pub fn positional_encoding(batch: usize, seq: usize, d: usize) -> Vec<f64> {
    let mut row = vec![0.0; seq * d];
    for pos in 0..seq {
        for i in 0..d / 2 {
            let freq = 1.0 / POSITION_BASE.powf(2.0 * i as f64 / d as f64);
            row[pos * d + 2 * i] = (pos as f64 * freq).sin();
            row[pos * d + 2 * i + 1] = (pos as f64 * freq).cos();
        }
        if d % 2 == 1 {
            let i = d / 2;
            let freq = 1.0 / POSITION_BASE.powf(2.0 * i as f64 / d as f64);
            row[pos * d + d - 1] = (pos as f64 * freq).sin();
        }
    }
    let mut out = Vec::with_capacity(batch * seq * d);
    for _ in 0..batch {
        out.extend_from_slice(&row);
    }
    out
}

/// Attention permission masks, true where a query may attend a key.
pub mod masks {
    use super::PAD;

    /// Encoder self-attention: any query may attend any non-PAD key.
    pub fn encoder(pad_mask: &[bool], batch: usize, heads: usize, seq: usize) -> Vec<bool> {
        let mut out = vec![false; batch * heads * seq * seq];
        for b in 0..batch {
            let keys = &pad_mask[b * seq..(b + 1) * seq];
            for h in 0..heads {
                for q in 0..seq {
                    let base = ((b * heads + h) * seq + q) * seq;
                    out[base..base + seq].copy_from_slice(keys);
                }
            }
        }
        out
    }

    /// Decoder self-attention: causal and restricted to non-PAD input keys.
    pub fn decoder_self(dec_ids: &[usize], batch: usize, heads: usize, seq: usize) -> Vec<bool> {
        let mut out = vec![false; batch * heads * seq * seq];
        for b in 0..batch {
            let ids = &dec_ids[b * seq..(b + 1) * seq];
            for h in 0..heads {
                for q in 0..seq {
                    let base = ((b * heads + h) * seq + q) * seq;
                    for (k, slot) in out[base..base + seq].iter_mut().enumerate() {
                        *slot = k <= q && ids[k] != PAD;
                    }
                }
            }
        }
        out
    }

    /// Encoder-decoder attention: keys at non-PAD source positions.
    pub fn cross(src_pad_mask: &[bool], batch: usize, heads: usize, sq: usize, sk: usize) -> Vec<bool> {
        let mut out = vec![false; batch * heads * sq * sk];
        for b in 0..batch {
            let keys = &src_pad_mask[b * sk..(b + 1) * sk];
            for h in 0..heads {
                for q in 0..sq {
                    let base = ((b * heads + h) * sq + q) * sk;
                    out[base..base + sk].copy_from_slice(keys);
                }
            }
        }
        out
    }
}

fn linear(tape: &mut Tape, binds: &Bindings, prefix: &str, x: Var) -> Var {
    let w = binds.var(&format!("{prefix}/w"));
    let b = binds.var(&format!("{prefix}/b"));
    let y = tape.matmul(x, w, false);
    tape.add_bias(y, b)
}

/// Multi-head attention block: projections, per-head scaled dot-product with
/// the given permission mask, concatenation, output projection.
fn attention(
    tape: &mut Tape,
    binds: &Bindings,
    arch: &ArchConfig,
    prefix: &str,
    queries: Var,
    keys_values: Var,
    allowed: &[bool],
) -> Var {
    let d = arch.d_model;
    let heads = arch.n_heads;
    let dh = arch.head_dim();
    let q_dims = tape.dims(queries).to_vec();
    let kv_dims = tape.dims(keys_values).to_vec();
    let (batch, sq) = (q_dims[0], q_dims[1]);
    let sk = kv_dims[1];

    let split = |tape: &mut Tape, x: Var, s: usize| {
        let x = tape.reshape(x, vec![batch, s, heads, dh]);
        tape.permute(x, &[0, 2, 1, 3]) // (B, H, S, dh)
    };

    let wq = binds.var(&format!("{prefix}/wq"));
    let bq = binds.var(&format!("{prefix}/bq"));
    let wk = binds.var(&format!("{prefix}/wk"));
    let bk = binds.var(&format!("{prefix}/bk"));
    let wv = binds.var(&format!("{prefix}/wv"));
    let bv = binds.var(&format!("{prefix}/bv"));

    let q = tape.matmul(queries, wq, false);
    let q = tape.add_bias(q, bq);
    let q = split(tape, q, sq);
    let k = tape.matmul(keys_values, wk, false);
    let k = tape.add_bias(k, bk);
    let k = split(tape, k, sk);
    let v = tape.matmul(keys_values, wv, false);
    let v = tape.add_bias(v, bv);
    let v = split(tape, v, sk);

    let scores = tape.matmul(q, k, true); // (B, H, Sq, Sk)
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let weights = tape.masked_softmax_last(scores, Some(allowed));
    let context = tape.matmul(weights, v, false); // (B, H, Sq, dh)
    let context = tape.permute(context, &[0, 2, 1, 3]);
    let context = tape.reshape(context, vec![batch, sq, d]);

    let wo = binds.var(&format!("{prefix}/wo"));
    let bo = binds.var(&format!("{prefix}/bo"));
    let out = tape.matmul(context, wo, false);
    tape.add_bias(out, bo)
}

fn feed_forward(tape: &mut Tape, binds: &Bindings, prefix: &str, x: Var) -> Var {
    let h = linear(tape, binds, &format!("{prefix}/fc1"), x);
    let h = tape.relu(h);
    linear(tape, binds, &format!("{prefix}/fc2"), h)
}

fn layer_norm(tape: &mut Tape, binds: &Bindings, prefix: &str, x: Var) -> Var {
    let gamma = binds.var(&format!("{prefix}/gamma"));
    let beta = binds.var(&format!("{prefix}/beta"));
    tape.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
}

fn embed_with_positions(
    tape: &mut Tape,
    binds: &Bindings,
    arch: &ArchConfig,
    table_path: &str,
    ids: &[usize],
    batch: usize,
) -> Var {
    let seq = ids.len() / batch;
    let table = binds.var(table_path);
    let e = tape.embedding(table, ids);
    let e = tape.reshape(e, vec![batch, seq, arch.d_model]);
    let e = tape.scale(e, (arch.d_model as f64).sqrt());
    let pe = tape.constant(
        vec![batch, seq, arch.d_model],
        positional_encoding(batch, seq, arch.d_model),
    );
    tape.add(e, pe)
}

/// Semantic encoder: embedded merged rows through the encoder stack, yielding
/// per-position semantic features M of width `v_attn` (= `d_model`).
pub fn semantic_encode(
    tape: &mut Tape,
    binds: &Bindings,
    arch: &ArchConfig,
    ids: &[usize],
    pad_mask: &[bool],
    batch: usize,
) -> Var {
    let seq = arch.seq_len();
    assert_eq!(ids.len(), batch * seq, "merged batch shape mismatch");
    assert_eq!(pad_mask.len(), ids.len(), "pad mask shape mismatch");
    let allowed = masks::encoder(pad_mask, batch, arch.n_heads, seq);
    let mut x = embed_with_positions(tape, binds, arch, "alpha/embed", ids, batch);
    for layer in 0..arch.n_layers {
        let p = format!("alpha/enc{layer}");
        let n = layer_norm(tape, binds, &format!("{p}/ln1"), x);
        let a = attention(tape, binds, arch, &format!("{p}/attn"), n, n, &allowed);
        x = tape.add(x, a);
        let n = layer_norm(tape, binds, &format!("{p}/ln2"), x);
        let f = feed_forward(tape, binds, &format!("{p}/ffn"), n);
        x = tape.add(x, f);
    }
    layer_norm(tape, binds, "alpha/ln_out", x)
}

/// Channel encoder: dense per-token map from semantic features to channel
/// symbols (pairs of consecutive units form complex symbols). Power
/// normalization happens in the channel stage, not here.
pub fn channel_encode(tape: &mut Tape, binds: &Bindings, _arch: &ArchConfig, m: Var) -> Var {
    linear(tape, binds, "beta/fc", m)
}

/// The full transmit chain, exactly `channel_encode . semantic_encode`.
pub fn transmit(
    tape: &mut Tape,
    binds: &Bindings,
    arch: &ArchConfig,
    ids: &[usize],
    pad_mask: &[bool],
    batch: usize,
) -> Var {
    let m = semantic_encode(tape, binds, arch, ids, pad_mask, batch);
    channel_encode(tape, binds, arch, m)
}

/// Channel decoder of receiver `user`: two dense per-token layers recovering
/// the semantic features from equalized channel output.
pub fn channel_decode(
    tape: &mut Tape,
    binds: &Bindings,
    _arch: &ArchConfig,
    user: usize,
    y: Var,
) -> Var {
    let chi = chi_prefix(user);
    let h = linear(tape, binds, &format!("{chi}/fc1"), y);
    let h = tape.relu(h);
    linear(tape, binds, &format!("{chi}/fc2"), h)
}

/// Teacher-forced semantic decoder of receiver `user`: decoder input is the
/// target row shifted right behind START, self-attention is causal, and
/// encoder-decoder attention keys/values come from the recovered features.
/// Returns per-position vocabulary logits.
#[allow(clippy::too_many_arguments)]
pub fn semantic_decode_teacher(
    tape: &mut Tape,
    binds: &Bindings,
    arch: &ArchConfig,
    user: usize,
    m_hat: Var,
    dec_ids: &[usize],
    src_pad_mask: &[bool],
    batch: usize,
) -> Var {
    let delta = delta_prefix(user);
    let sq = dec_ids.len() / batch;
    let sk = tape.dims(m_hat)[1];
    let self_allowed = masks::decoder_self(dec_ids, batch, arch.n_heads, sq);
    let cross_allowed = masks::cross(src_pad_mask, batch, arch.n_heads, sq, sk);

    // positional marks on the recovered features give encoder-decoder
    // attention a position handle that does not have to survive the channel
    let pe = tape.constant(
        vec![batch, sk, arch.d_model],
        positional_encoding(batch, sk, arch.d_model),
    );
    let m_hat = tape.add(m_hat, pe);

    let mut y = embed_with_positions(tape, binds, arch, &format!("{delta}/embed"), dec_ids, batch);
    for layer in 0..arch.n_layers {
        let p = format!("{delta}/dec{layer}");
        let n = layer_norm(tape, binds, &format!("{p}/ln1"), y);
        let sa = attention(tape, binds, arch, &format!("{p}/self"), n, n, &self_allowed);
        y = tape.add(y, sa);
        let n = layer_norm(tape, binds, &format!("{p}/ln2"), y);
        let ca = attention(tape, binds, arch, &format!("{p}/cross"), n, m_hat, &cross_allowed);
        y = tape.add(y, ca);
        let n = layer_norm(tape, binds, &format!("{p}/ln3"), y);
        let f = feed_forward(tape, binds, &format!("{p}/ffn"), n);
        y = tape.add(y, f);
    }
    let y = layer_norm(tape, binds, &format!("{delta}/ln_out"), y);
    linear(tape, binds, &format!("{delta}/out"), y)
}

/// Argmax with ties broken toward the lowest token id.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Greedy autoregressive decoding of full merged rows from the recovered
/// features. The slot framing is part of the wire format, so the decoder
/// enforces it structurally: the first position of each slot is START, and
/// once a slot has emitted END the rest of its slot is PAD. All other
/// positions take the argmax token.
pub fn semantic_decode_greedy(
    store: &ParamStore,
    arch: &ArchConfig,
    user: usize,
    m_hat_data: &[f64],
    src_pad_mask: &[bool],
    batch: usize,
) -> Vec<Vec<usize>> {
    let seq = arch.seq_len();
    let max_len = seq;
    assert_eq!(m_hat_data.len(), batch * seq * arch.d_model);
    let delta = delta_prefix(user);
    let receiver = store.subset(&delta);

    let mut rows: Vec<Vec<usize>> = vec![Vec::with_capacity(max_len); batch];
    let mut slot_done = vec![false; batch];

    for t in 0..max_len {
        let slot_pos = t % arch.slot_len;
        if slot_pos == 0 {
            for (row, done) in rows.iter_mut().zip(slot_done.iter_mut()) {
                row.push(START);
                *done = false;
            }
            continue;
        }
        // decoder input: START then everything emitted so far
        let mut dec_ids = Vec::with_capacity(batch * (t + 1));
        for row in &rows {
            dec_ids.push(START);
            dec_ids.extend_from_slice(row);
        }
        let mut tape = Tape::new();
        let mut binds_store = ParamStore::new();
        for (path, tensor) in receiver.iter() {
            let mut frozen = tensor.clone();
            frozen.set_requires_grad(false);
            binds_store.insert(path, frozen);
        }
        let binds = crate::optim::bind_params(&mut tape, &binds_store, &[]);
        let m_hat = tape.constant(vec![batch, seq, arch.d_model], m_hat_data.to_vec());
        let logits = semantic_decode_teacher(
            &mut tape,
            &binds,
            arch,
            user,
            m_hat,
            &dec_ids,
            src_pad_mask,
            batch,
        );
        let data = tape.data(logits);
        let width = arch.vocab_size;
        let step = t + 1; // decoder input length this round
        for b in 0..batch {
            let token = if slot_done[b] {
                PAD
            } else {
                let last = &data[((b * step) + step - 1) * width..((b * step) + step) * width];
                let tok = argmax_lowest(last);
                if tok == END {
                    slot_done[b] = true;
                }
                tok
            };
            rows[b].push(token);
        }
    }
    rows
}
