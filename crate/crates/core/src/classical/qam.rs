//! Square 64-QAM with Gray labeling per axis and a max-log soft demapper.
//!
//! Each symbol carries 6 bits: the first three select the in-phase level,
//! the last three the quadrature level. Levels are {±1, ±3, ±5, ±7}/sqrt(42),
//! which makes the constellation's average energy exactly one.

use thiserror::Error;

pub const BITS_PER_SYMBOL: usize = 6;
const LEVELS_PER_AXIS: usize = 8;

#[derive(Debug, Error)]
pub enum QamError {
    #[error("bit count {0} is not a multiple of {BITS_PER_SYMBOL}; pad before modulating")]
    LengthNotMultiple(usize),
}

/// Integer amplitudes per level index (before 1/sqrt(42) scaling).
const AMPLITUDES: [i32; LEVELS_PER_AXIS] = [-7, -5, -3, -1, 1, 3, 5, 7];

fn scaling() -> f64 {
    1.0 / 42f64.sqrt()
}

/// Gray label of each level index (binary-reflected).
fn gray_label(index: usize) -> usize {
    index ^ (index >> 1)
}

/// Level index for a 3-bit Gray label.
fn index_of_label(label: usize) -> usize {
    (0..LEVELS_PER_AXIS)
        .find(|&i| gray_label(i) == label)
        .expect("3-bit label")
}

fn axis_level(bits: [bool; 3]) -> f64 {
    let label = ((bits[0] as usize) << 2) | ((bits[1] as usize) << 1) | bits[2] as usize;
    AMPLITUDES[index_of_label(label)] as f64 * scaling()
}

/// Maps bits (length divisible by 6) to unit-average-energy symbols.
pub fn qam64_modulate(bits: &[bool]) -> Result<Vec<(f64, f64)>, QamError> {
    if !bits.len().is_multiple_of(BITS_PER_SYMBOL) {
        return Err(QamError::LengthNotMultiple(bits.len()));
    }
    Ok(bits
        .chunks(BITS_PER_SYMBOL)
        .map(|chunk| {
            let i = axis_level([chunk[0], chunk[1], chunk[2]]);
            let q = axis_level([chunk[3], chunk[4], chunk[5]]);
            (i, q)
        })
        .collect())
}

/// Max-log LLRs (6 per symbol, positive favoring bit 0) for noisy symbols.
/// `noise_var` is the complex noise variance per symbol; the per-axis
/// variance is half of it. I and Q are independent, so per-axis 8-level
/// searches reproduce the full 64-point max-log LLR exactly.
pub fn qam64_soft_demap(symbols: &[(f64, f64)], noise_var: f64) -> Vec<f64> {
    let nv = noise_var.max(1e-30);
    let mut out = Vec::with_capacity(symbols.len() * BITS_PER_SYMBOL);
    for &(i, q) in symbols {
        axis_llrs(i, nv, &mut out);
        axis_llrs(q, nv, &mut out);
    }
    out
}

fn axis_llrs(observed: f64, noise_var: f64, out: &mut Vec<f64>) {
    let scale = scaling();
    // best (smallest squared distance) per bit hypothesis
    let mut best = [[f64::INFINITY; 2]; 3];
    for (index, &amplitude) in AMPLITUDES.iter().enumerate() {
        let level = amplitude as f64 * scale;
        let d2 = (observed - level) * (observed - level);
        let label = gray_label(index);
        for (bit_pos, hypotheses) in best.iter_mut().enumerate() {
            let bit = (label >> (2 - bit_pos)) & 1;
            if d2 < hypotheses[bit] {
                hypotheses[bit] = d2;
            }
        }
    }
    for b in best {
        out.push((b[1] - b[0]) / noise_var);
    }
}

/// Hard decisions from demapper LLRs (positive means 0).
pub fn hard_decisions(llrs: &[f64]) -> Vec<bool> {
    llrs.iter().map(|&l| l < 0.0).collect()
}
