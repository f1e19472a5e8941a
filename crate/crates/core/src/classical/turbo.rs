//! Rate-1/3 turbo code: two recursive systematic convolutional constituents
//! with generators (7, 5) octal (constraint length 3), a seeded uniform
//! random interleaver, and iterative Max-Log-MAP decoding.
//!
//! LLR convention throughout: `llr = ln(p(bit = 0) / p(bit = 1))`, so a
//! positive LLR argues for 0. Branch metrics add `llr/2` for a hypothesized 0
//! and `-llr/2` for a 1.
//!
//! The forward/backward recursions deliberately skip the customary
//! renormalization: at desk-scale block lengths f64 has dynamic range to
//! spare, and unnormalized metrics make the decoder's per-bit output exactly
//! the difference of the two best full-path metrics, which the exhaustive
//! oracle in the tests can reproduce bit for bit.

use crate::rng::{streams, Rng};
use thiserror::Error;

/// Memory length of the (7, 5) constituent; constraint length 3.
pub const MEMORY: usize = 2;
const NUM_STATES: usize = 1 << MEMORY;
const FEEDBACK: usize = 0b111; // 7 octal: d = u ^ s1 ^ s0
const FEEDFORWARD: usize = 0b101; // 5 octal: parity = d ^ s0

#[derive(Debug, Error)]
pub enum TurboError {
    #[error("block length mismatch: config expects {expected} info bits, got {got}")]
    BlockLength { expected: usize, got: usize },
    #[error("coded length mismatch: expected {expected} LLRs, got {got}")]
    CodedLength { expected: usize, got: usize },
}

#[derive(Debug, Clone)]
pub struct TurboConfig {
    pub block_len: usize,
    pub iterations: usize,
    /// Bijection over 0..block_len, fixed per (seed, block length).
    pub interleaver: Vec<usize>,
}

impl TurboConfig {
    pub fn new(block_len: usize, iterations: usize, seed: u64) -> Self {
        assert!(block_len > 0, "block length must be positive");
        let mut rng = Rng::substream(seed, streams::INTERLEAVER + block_len as u64);
        TurboConfig {
            block_len,
            iterations,
            interleaver: rng.permutation(block_len),
        }
    }

    /// Coded bits per block: three streams over info bits plus the
    /// termination tail of encoder 1 (filler keeps the triple layout).
    pub fn coded_len(&self) -> usize {
        3 * (self.block_len + MEMORY)
    }

    fn interleave<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.interleaver.iter().map(|&i| x[i]).collect()
    }

    fn deinterleave(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (pos, &src) in self.interleaver.iter().enumerate() {
            out[src] = x[pos];
        }
        out
    }
}

#[inline]
fn parity_of(word: usize) -> bool {
    word.count_ones() % 2 == 1
}

/// One RSC step from `state` with input `u`: returns (systematic, parity,
/// next_state). The systematic output always equals `u`.
#[inline]
fn rsc_step(state: usize, u: bool) -> (bool, bool, usize) {
    let augmented_in = ((u as usize) << MEMORY) | state;
    let d = parity_of(augmented_in & FEEDBACK);
    let augmented = ((d as usize) << MEMORY) | state;
    let sys = parity_of(augmented & FEEDBACK);
    let parity = parity_of(augmented & FEEDFORWARD);
    debug_assert_eq!(sys, u);
    (sys, parity, augmented >> 1)
}

/// Tail input that drives the feedback register toward zero.
#[inline]
fn termination_input(state: usize) -> bool {
    // choose u so that d = u ^ s1 ^ s0 = 0
    parity_of(state & (FEEDBACK >> 1))
}

/// RSC encoding of an info block; when `terminate` is set, MEMORY tail steps
/// are appended and the final state is zero. Returns (systematic, parity)
/// including any tail positions.
pub fn rsc_encode(bits: &[bool], terminate: bool) -> (Vec<bool>, Vec<bool>) {
    let tail = if terminate { MEMORY } else { 0 };
    let mut sys = Vec::with_capacity(bits.len() + tail);
    let mut parity = Vec::with_capacity(bits.len() + tail);
    let mut state = 0;
    for &u in bits {
        let (s, p, next) = rsc_step(state, u);
        sys.push(s);
        parity.push(p);
        state = next;
    }
    if terminate {
        for _ in 0..MEMORY {
            let u = termination_input(state);
            let (s, p, next) = rsc_step(state, u);
            sys.push(s);
            parity.push(p);
            state = next;
        }
        debug_assert_eq!(state, 0);
    }
    (sys, parity)
}

/// Turbo encoding: per info position the triple (systematic, parity1,
/// parity2), then per tail position (tail systematic, tail parity1, filler 0).
/// Encoder 2 runs over the interleaved block and is left unterminated.
pub fn turbo_encode(bits: &[bool], cfg: &TurboConfig) -> Result<Vec<bool>, TurboError> {
    if bits.len() != cfg.block_len {
        return Err(TurboError::BlockLength {
            expected: cfg.block_len,
            got: bits.len(),
        });
    }
    let (sys, p1) = rsc_encode(bits, true);
    let interleaved = cfg.interleave(bits);
    let (_, p2) = rsc_encode(&interleaved, false);

    let mut out = Vec::with_capacity(cfg.coded_len());
    for k in 0..cfg.block_len {
        out.push(sys[k]);
        out.push(p1[k]);
        out.push(p2[k]);
    }
    for t in 0..MEMORY {
        out.push(sys[cfg.block_len + t]);
        out.push(p1[cfg.block_len + t]);
        out.push(false); // filler: encoder 2 is unterminated
    }
    Ok(out)
}

#[inline]
fn bit_metric(bit: bool, llr: f64) -> f64 {
    if bit {
        -llr / 2.0
    } else {
        llr / 2.0
    }
}

/// Per-step channel observations for one constituent decoder.
struct ConstituentInput<'a> {
    prior: &'a [f64],
    sys: &'a [f64],
    parity: &'a [f64],
    /// Tail observations ((sys, parity) per tail step); empty when the
    /// constituent is unterminated.
    tail: &'a [(f64, f64)],
}

/// Max-Log BCJR over one constituent trellis. Returns the a-posteriori LLR
/// for every info bit: the metric of the best full path with that bit 0
/// minus the best with it 1.
fn maxlog_bcjr(input: &ConstituentInput) -> Vec<f64> {
    let len = input.prior.len();
    let terminated = !input.tail.is_empty();
    let steps = len + input.tail.len();

    // branch metric for (step, state, input bit)
    let gamma = |k: usize, state: usize, u: bool| -> f64 {
        let (sys_bit, parity_bit, _) = rsc_step(state, u);
        if k < len {
            bit_metric(u, input.prior[k])
                + bit_metric(sys_bit, input.sys[k])
                + bit_metric(parity_bit, input.parity[k])
        } else {
            let (sys_llr, parity_llr) = input.tail[k - len];
            bit_metric(sys_bit, sys_llr) + bit_metric(parity_bit, parity_llr)
        }
    };

    // forward: alpha[k][s] = best metric of any path reaching s before step k
    let mut alpha = vec![[f64::NEG_INFINITY; NUM_STATES]; steps + 1];
    alpha[0][0] = 0.0;
    for k in 0..steps {
        let current = alpha[k];
        for (state, &a) in current.iter().enumerate() {
            if a == f64::NEG_INFINITY {
                continue;
            }
            for u in [false, true] {
                if k >= len && u != termination_input(state) {
                    continue; // tail steps take the forced input only
                }
                let (_, _, next) = rsc_step(state, u);
                let candidate = a + gamma(k, state, u);
                if candidate > alpha[k + 1][next] {
                    alpha[k + 1][next] = candidate;
                }
            }
        }
    }

    // backward: beta[k][s] = best metric of any path from s after step k
    let mut beta = vec![[f64::NEG_INFINITY; NUM_STATES]; steps + 1];
    if terminated {
        beta[steps][0] = 0.0;
    } else {
        beta[steps] = [0.0; NUM_STATES];
    }
    for k in (0..steps).rev() {
        for state in 0..NUM_STATES {
            for u in [false, true] {
                if k >= len && u != termination_input(state) {
                    continue;
                }
                let (_, _, next) = rsc_step(state, u);
                let b = beta[k + 1][next];
                if b == f64::NEG_INFINITY {
                    continue;
                }
                let candidate = gamma(k, state, u) + b;
                if candidate > beta[k][state] {
                    beta[k][state] = candidate;
                }
            }
        }
    }

    (0..len)
        .map(|k| {
            let mut best = [f64::NEG_INFINITY; 2];
            for (state, &a) in alpha[k].iter().enumerate() {
                if a == f64::NEG_INFINITY {
                    continue;
                }
                for u in [false, true] {
                    let (_, _, next) = rsc_step(state, u);
                    let b = beta[k + 1][next];
                    if b == f64::NEG_INFINITY {
                        continue;
                    }
                    let metric = a + gamma(k, state, u) + b;
                    if metric > best[u as usize] {
                        best[u as usize] = metric;
                    }
                }
            }
            best[0] - best[1]
        })
        .collect()
}

/// A-posteriori LLRs of a single terminated constituent given channel LLRs
/// and priors; exposed for the exhaustive-oracle comparison.
pub fn constituent_app_llrs(
    prior: &[f64],
    sys: &[f64],
    parity: &[f64],
    tail: &[(f64, f64)],
) -> Vec<f64> {
    maxlog_bcjr(&ConstituentInput {
        prior,
        sys,
        parity,
        tail,
    })
}

/// Iterative Max-Log-MAP turbo decoding of one block of channel LLRs (in
/// [`turbo_encode`]'s layout). Returns hard decisions on the info bits.
pub fn maxlogmap_decode(llrs: &[f64], cfg: &TurboConfig) -> Result<Vec<bool>, TurboError> {
    if llrs.len() != cfg.coded_len() {
        return Err(TurboError::CodedLength {
            expected: cfg.coded_len(),
            got: llrs.len(),
        });
    }
    let len = cfg.block_len;
    let sys: Vec<f64> = (0..len).map(|k| llrs[3 * k]).collect();
    let p1: Vec<f64> = (0..len).map(|k| llrs[3 * k + 1]).collect();
    let p2: Vec<f64> = (0..len).map(|k| llrs[3 * k + 2]).collect();
    let tail: Vec<(f64, f64)> = (0..MEMORY)
        .map(|t| (llrs[3 * (len + t)], llrs[3 * (len + t) + 1]))
        .collect();
    let sys_interleaved = cfg.interleave(&sys);

    let mut ext1 = vec![0.0; len];
    let mut ext2 = vec![0.0; len]; // in natural (deinterleaved) order
    for _ in 0..cfg.iterations {
        let app1 = maxlog_bcjr(&ConstituentInput {
            prior: &ext2,
            sys: &sys,
            parity: &p1,
            tail: &tail,
        });
        for k in 0..len {
            ext1[k] = app1[k] - sys[k] - ext2[k];
        }
        let prior2 = cfg.interleave(&ext1);
        let app2 = maxlog_bcjr(&ConstituentInput {
            prior: &prior2,
            sys: &sys_interleaved,
            parity: &p2,
            tail: &[],
        });
        let ext2_interleaved: Vec<f64> = (0..len)
            .map(|k| app2[k] - sys_interleaved[k] - prior2[k])
            .collect();
        ext2 = cfg.deinterleave(&ext2_interleaved);
    }
    Ok((0..len)
        .map(|k| sys[k] + ext1[k] + ext2[k] < 0.0)
        .collect())
}

/// Maps hard bits to the LLRs of a noiseless channel.
pub fn hard_llrs(bits: &[bool], magnitude: f64) -> Vec<f64> {
    bits.iter()
        .map(|&b| if b { -magnitude } else { magnitude })
        .collect()
}
