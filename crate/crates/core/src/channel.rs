//! Complex-baseband physical channels shared by the learned and classical
//! pipelines: power normalization, AWGN, block-flat Rayleigh fading with
//! zero-forcing equalization under perfect channel knowledge.
//!
//! Noise power follows unit signal power: a configured SNR of `s` dB means
//! complex noise variance `10^(-s/10)`, split evenly between the real and
//! imaginary components. All draws are seeded.

use crate::rng::{streams, Rng};

/// Batch of complex baseband symbols, interleaved (re, im), organized as
/// `rows` fading blocks of `cols` symbols each.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBlock {
    pub rows: usize,
    pub cols: usize,
    /// rows * cols * 2 floats, row-major, interleaved re/im.
    pub data: Vec<f64>,
}

impl ComplexBlock {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols * 2, "complex block shape mismatch");
        ComplexBlock { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexBlock::new(rows, cols, vec![0.0; rows * cols * 2])
    }

    pub fn symbols(&self) -> usize {
        self.rows * self.cols
    }

    pub fn mean_power(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v * v).sum::<f64>() / self.symbols() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

impl ChannelKind {
    pub fn parse(s: &str) -> Option<ChannelKind> {
        match s {
            "awgn" => Some(ChannelKind::Awgn),
            "rayleigh" => Some(ChannelKind::Rayleigh),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
        }
    }
}

/// Granularity of the fading coefficient: one gain per block row, or one per
/// consecutive group of `PerGroup(n)` symbols within each row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadingUnit {
    BlockRow,
    PerGroup(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub snr_db: f64,
    pub seed: u64,
    pub fading: FadingUnit,
}

impl ChannelConfig {
    pub fn new(kind: ChannelKind, snr_db: f64, seed: u64) -> Self {
        ChannelConfig {
            kind,
            snr_db,
            seed,
            fading: FadingUnit::BlockRow,
        }
    }

    /// Complex noise variance for unit signal power; zero for infinite SNR.
    pub fn noise_variance(&self) -> f64 {
        if self.snr_db.is_infinite() && self.snr_db > 0.0 {
            0.0
        } else {
            10f64.powf(-self.snr_db / 10.0)
        }
    }
}

/// Scales the block to unit mean complex power. A zero block passes through.
pub fn normalize_power(block: &ComplexBlock) -> ComplexBlock {
    let p = block.mean_power();
    if p == 0.0 {
        return block.clone();
    }
    let s = 1.0 / p.sqrt();
    let data = block.data.iter().map(|v| v * s).collect();
    ComplexBlock::new(block.rows, block.cols, data)
}

/// Unit-variance complex Gaussian draws (re/im each N(0, 1/2)) to be scaled
/// by sigma at the point of use; shared by channels and tape-side training so
/// the same seed yields the same realization everywhere.
pub fn unit_noise(rng: &mut Rng, symbols: usize) -> Vec<f64> {
    let half = std::f64::consts::FRAC_1_SQRT_2;
    (0..symbols * 2).map(|_| rng.normal() * half).collect()
}

/// CN(0,1) fading gains, one per unit of the configured granularity.
pub fn fading_gains(rng: &mut Rng, count: usize) -> Vec<(f64, f64)> {
    let half = std::f64::consts::FRAC_1_SQRT_2;
    (0..count)
        .map(|_| (rng.normal() * half, rng.normal() * half))
        .collect()
}

/// Number of fading gains a block needs at the given granularity.
pub fn gain_count(block_rows: usize, block_cols: usize, fading: FadingUnit) -> usize {
    match fading {
        FadingUnit::BlockRow => block_rows,
        FadingUnit::PerGroup(n) => {
            assert!(n > 0 && block_cols.is_multiple_of(n), "group size must tile each row");
            block_rows * (block_cols / n)
        }
    }
}

/// Symbols covered by each fading gain.
pub fn gain_group_len(block_cols: usize, fading: FadingUnit) -> usize {
    match fading {
        FadingUnit::BlockRow => block_cols,
        FadingUnit::PerGroup(n) => n,
    }
}

fn channel_rng(cfg: &ChannelConfig) -> Rng {
    Rng::substream(cfg.seed, streams::CHANNEL)
}

/// Additive white Gaussian noise channel: `y = x + w`, `w ~ CN(0, sigma^2)`.
pub fn awgn(input: &ComplexBlock, cfg: &ChannelConfig) -> ComplexBlock {
    let sigma2 = cfg.noise_variance();
    if sigma2 == 0.0 {
        return input.clone();
    }
    let sigma = sigma2.sqrt();
    let mut rng = channel_rng(cfg);
    let noise = unit_noise(&mut rng, input.symbols());
    let data = input
        .data
        .iter()
        .zip(&noise)
        .map(|(x, n)| x + sigma * n)
        .collect();
    ComplexBlock::new(input.rows, input.cols, data)
}

/// Block-flat Rayleigh fading: `y = h x + w` with one `h ~ CN(0,1)` per
/// fading unit. Returns the faded block and the gains for equalization.
pub fn rayleigh(input: &ComplexBlock, cfg: &ChannelConfig) -> (ComplexBlock, Vec<(f64, f64)>) {
    let mut rng = channel_rng(cfg);
    let gains = fading_gains(&mut rng, gain_count(input.rows, input.cols, cfg.fading));
    let group = gain_group_len(input.cols, cfg.fading);
    let sigma = cfg.noise_variance().sqrt();
    let noise = if sigma > 0.0 {
        unit_noise(&mut rng, input.symbols())
    } else {
        vec![0.0; input.data.len()]
    };

    let mut data = vec![0.0; input.data.len()];
    for (g, &(hr, hi)) in gains.iter().enumerate() {
        let base = g * group * 2;
        for t in 0..group {
            let re = input.data[base + 2 * t];
            let im = input.data[base + 2 * t + 1];
            data[base + 2 * t] = hr * re - hi * im + sigma * noise[base + 2 * t];
            data[base + 2 * t + 1] = hr * im + hi * re + sigma * noise[base + 2 * t + 1];
        }
    }
    (ComplexBlock::new(input.rows, input.cols, data), gains)
}

/// Gain magnitude below which a fading unit is declared unequalizable.
pub const OUTAGE_EPSILON: f64 = 1e-12;

/// Result of zero-forcing equalization; rows in outage are reported, not
/// silently zeroed.
#[derive(Debug, Clone)]
pub struct Equalized {
    pub block: ComplexBlock,
    /// Indices (in fading-unit order) whose |h| <= epsilon; their symbols are
    /// passed through unequalized.
    pub outage_units: Vec<usize>,
}

/// Divides each fading unit by its known gain.
pub fn equalize(input: &ComplexBlock, gains: &[(f64, f64)], fading: FadingUnit) -> Equalized {
    let expected = gain_count(input.rows, input.cols, fading);
    assert_eq!(gains.len(), expected, "gain count mismatch");
    let group = gain_group_len(input.cols, fading);
    let mut data = input.data.clone();
    let mut outage_units = Vec::new();
    for (g, &(hr, hi)) in gains.iter().enumerate() {
        let mag2 = hr * hr + hi * hi;
        if mag2.sqrt() <= OUTAGE_EPSILON {
            outage_units.push(g);
            continue;
        }
        let (ir, ii) = (hr / mag2, -hi / mag2);
        let base = g * group * 2;
        for t in 0..group {
            let re = data[base + 2 * t];
            let im = data[base + 2 * t + 1];
            data[base + 2 * t] = ir * re - ii * im;
            data[base + 2 * t + 1] = ir * im + ii * re;
        }
    }
    Equalized {
        block: ComplexBlock::new(input.rows, input.cols, data),
        outage_units,
    }
}

/// Inverse gains (conj(h)/|h|^2) for applying equalization on the autodiff
/// tape; outage units fall back to a pass-through unit gain.
pub fn inverse_gains(gains: &[(f64, f64)]) -> Vec<(f64, f64)> {
    gains
        .iter()
        .map(|&(hr, hi)| {
            let mag2 = hr * hr + hi * hi;
            if mag2.sqrt() <= OUTAGE_EPSILON {
                (1.0, 0.0)
            } else {
                (hr / mag2, -hi / mag2)
            }
        })
        .collect()
}
