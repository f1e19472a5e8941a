//! The end-to-end conventional chain: Huffman source coding, rate-1/3 turbo
//! coding with 5-iteration Max-Log-MAP decoding, 64-QAM, and synchronous
//! Walsh-CDMA multiple access over the shared channel models.
//!
//! Framing: each sentence's Huffman bitstream fills one or more fixed-size
//! turbo blocks (zero-padded); per-sentence bit counts are carried as side
//! information so the receiver can strip padding. Users' symbol streams are
//! padded to a common length for synchronous superposition, the composite is
//! power-normalized, and each receiver sees its own independently faded and
//! noised copy.

use crate::channel::{
    awgn, equalize, normalize_power, rayleigh, ChannelConfig, ChannelKind, ComplexBlock,
    OUTAGE_EPSILON,
};
use crate::classical::cdma::{superpose, CdmaConfig, CdmaError};
use crate::classical::huffman::{HuffmanCodebook, HuffmanError};
use crate::classical::qam::{qam64_modulate, qam64_soft_demap, QamError, BITS_PER_SYMBOL};
use crate::classical::turbo::{maxlogmap_decode, turbo_encode, TurboConfig, TurboError};
use crate::rng::derive_seed;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Huffman(#[from] HuffmanError),
    #[error(transparent)]
    Turbo(#[from] TurboError),
    #[error(transparent)]
    Cdma(#[from] CdmaError),
    #[error(transparent)]
    Qam(#[from] QamError),
}

#[derive(Debug, Clone)]
pub struct ClassicalSystem {
    pub codebook: HuffmanCodebook,
    pub turbo: TurboConfig,
    pub cdma: CdmaConfig,
}

/// Receiver-side framing knowledge for one sentence.
#[derive(Debug, Clone, Copy)]
struct Framing {
    huffman_bits: usize,
    blocks: usize,
    symbols: usize,
}

pub const DEFAULT_TURBO_BLOCK: usize = 512;
pub const DEFAULT_TURBO_ITERATIONS: usize = 5;

impl ClassicalSystem {
    /// Builds the source codebook from corpus text and fixes the code and
    /// spreading configurations.
    pub fn new(
        corpus_texts: impl IntoIterator<Item = String>,
        num_users: usize,
        seed: u64,
    ) -> Result<Self, PipelineError> {
        let texts: Vec<String> = corpus_texts.into_iter().collect();
        let codebook = HuffmanCodebook::from_texts(texts.iter().map(String::as_str))?;
        Ok(ClassicalSystem {
            codebook,
            turbo: TurboConfig::new(DEFAULT_TURBO_BLOCK, DEFAULT_TURBO_ITERATIONS, seed),
            cdma: CdmaConfig::new(num_users)?,
        })
    }

    /// Huffman bits of a sentence, zero-padded into whole turbo blocks.
    fn source_encode(&self, words: &[String]) -> Result<(Vec<bool>, Framing), PipelineError> {
        let text = words.join(" ");
        let bits = self.codebook.encode(&text)?;
        let blocks = bits.len().div_ceil(self.turbo.block_len).max(1);
        let mut padded = bits.clone();
        padded.resize(blocks * self.turbo.block_len, false);
        let coded_bits = blocks * self.turbo.coded_len();
        let symbols = coded_bits.div_ceil(BITS_PER_SYMBOL);
        Ok((
            padded,
            Framing {
                huffman_bits: bits.len(),
                blocks,
                symbols,
            },
        ))
    }

    /// Turbo-encodes and modulates one sentence's padded bitstream.
    fn modulate_sentence(&self, padded: &[bool]) -> Result<Vec<(f64, f64)>, PipelineError> {
        let mut coded = Vec::with_capacity(
            padded.len() / self.turbo.block_len * self.turbo.coded_len(),
        );
        for block in padded.chunks(self.turbo.block_len) {
            coded.extend(turbo_encode(block, &self.turbo)?);
        }
        let pad = (BITS_PER_SYMBOL - coded.len() % BITS_PER_SYMBOL) % BITS_PER_SYMBOL;
        coded.extend(std::iter::repeat_n(false, pad));
        Ok(qam64_modulate(&coded)?)
    }

    /// Demodulates and decodes one sentence from its despread symbols.
    fn decode_sentence(
        &self,
        symbols: &[(f64, f64)],
        framing: Framing,
        noise_var: f64,
    ) -> Result<Vec<String>, PipelineError> {
        let llrs = qam64_soft_demap(symbols, noise_var);
        let coded_bits = framing.blocks * self.turbo.coded_len();
        let mut info = Vec::with_capacity(framing.blocks * self.turbo.block_len);
        for block_llrs in llrs[..coded_bits].chunks(self.turbo.coded_len()) {
            info.extend(maxlogmap_decode(block_llrs, &self.turbo)?);
        }
        info.truncate(framing.huffman_bits);
        let text = self.codebook.decode(&info);
        Ok(text.split_whitespace().map(String::from).collect())
    }

    /// Transmits one sentence per user over the configured channel and
    /// returns each receiver's decoded sentence. Deep receiver fades are
    /// decoded as-is (the text comes out garbled, never silently dropped).
    pub fn run_row(
        &self,
        sentences: &[Vec<String>],
        chan: &ChannelConfig,
    ) -> Result<Vec<Vec<String>>, PipelineError> {
        assert_eq!(
            sentences.len(),
            self.cdma.num_users,
            "one sentence per user"
        );
        let mut framings = Vec::with_capacity(sentences.len());
        let mut streams = Vec::with_capacity(sentences.len());
        let mut max_symbols = 0;
        for words in sentences {
            let (padded, framing) = self.source_encode(words)?;
            let symbols = self.modulate_sentence(&padded)?;
            max_symbols = max_symbols.max(symbols.len());
            framings.push(framing);
            streams.push(symbols);
        }
        for stream in &mut streams {
            stream.resize(max_symbols, (0.0, 0.0));
        }
        let spread: Vec<Vec<(f64, f64)>> = streams
            .iter()
            .enumerate()
            .map(|(user, symbols)| self.cdma.spread(symbols, user))
            .collect::<Result<_, _>>()?;
        let composite = superpose(&spread);

        let chips = composite.len();
        let data: Vec<f64> = composite.iter().flat_map(|&(re, im)| [re, im]).collect();
        let block = ComplexBlock::new(1, chips, data);
        let tx_power = block.mean_power();
        let normalized = normalize_power(&block);
        let amplitude = tx_power.sqrt(); // receiver-side rescale to code levels

        let mut decoded = Vec::with_capacity(sentences.len());
        for user in 0..sentences.len() {
            let user_cfg = ChannelConfig {
                seed: derive_seed(chan.seed, 0xC1A55 + user as u64),
                ..*chan
            };
            let (received, gain_mag2) = match chan.kind {
                ChannelKind::Awgn => (awgn(&normalized, &user_cfg), 1.0),
                ChannelKind::Rayleigh => {
                    let (faded, gains) = rayleigh(&normalized, &user_cfg);
                    let eq = equalize(&faded, &gains, user_cfg.fading);
                    let (hr, hi) = gains[0];
                    let mag2 = (hr * hr + hi * hi).max(OUTAGE_EPSILON * OUTAGE_EPSILON);
                    (eq.block, mag2)
                }
            };
            let chips: Vec<(f64, f64)> = received
                .data
                .chunks(2)
                .map(|c| (c[0] * amplitude, c[1] * amplitude))
                .collect();
            let despread = self.cdma.despread(&chips, user)?;
            // noise through equalize (1/|h|^2), rescale (power), despread (1/C)
            let noise_var = user_cfg.noise_variance() * tx_power
                / (gain_mag2 * self.cdma.code_len as f64);
            let symbols = &despread[..framings[user].symbols];
            decoded.push(self.decode_sentence(symbols, framings[user], noise_var)?);
        }
        Ok(decoded)
    }
}

/// Info-bit error rate of the coded chain (turbo + QAM + CDMA + channel,
/// no source coding) for user 0, over at least `min_bits` info bits.
pub fn measure_chain_ber(
    num_users: usize,
    kind: ChannelKind,
    snr_db: f64,
    min_bits: usize,
    seed: u64,
) -> Result<f64, PipelineError> {
    let turbo = TurboConfig::new(DEFAULT_TURBO_BLOCK, DEFAULT_TURBO_ITERATIONS, seed);
    let cdma = CdmaConfig::new(num_users)?;
    let mut rng = crate::rng::Rng::seeded(derive_seed(seed, 0xBE5));
    let blocks = min_bits.div_ceil(turbo.block_len);

    let mut errors = 0usize;
    let mut total = 0usize;
    for block_idx in 0..blocks {
        // every user sends an independent random block, synchronously
        let user_bits: Vec<Vec<bool>> = (0..num_users)
            .map(|_| (0..turbo.block_len).map(|_| rng.next_f64() < 0.5).collect())
            .collect();
        let mut spread = Vec::with_capacity(num_users);
        for (user, bits) in user_bits.iter().enumerate() {
            let coded = turbo_encode(bits, &turbo)?;
            let mut padded = coded;
            let pad = (BITS_PER_SYMBOL - padded.len() % BITS_PER_SYMBOL) % BITS_PER_SYMBOL;
            padded.extend(std::iter::repeat_n(false, pad));
            let symbols = qam64_modulate(&padded)?;
            spread.push(cdma.spread(&symbols, user)?);
        }
        let composite = superpose(&spread);
        let data: Vec<f64> = composite.iter().flat_map(|&(re, im)| [re, im]).collect();
        let block = ComplexBlock::new(1, composite.len(), data);
        let tx_power = block.mean_power();
        let normalized = normalize_power(&block);
        let amplitude = tx_power.sqrt();

        // common random numbers across SNR points: seed depends on the block
        // index, not the SNR, so BER curves are monotone without huge samples
        let chan = ChannelConfig::new(kind, snr_db, derive_seed(seed, 0xB10C + block_idx as u64));
        let (received, gain_mag2) = match kind {
            ChannelKind::Awgn => (awgn(&normalized, &chan), 1.0),
            ChannelKind::Rayleigh => {
                let (faded, gains) = rayleigh(&normalized, &chan);
                let eq = equalize(&faded, &gains, chan.fading);
                let (hr, hi) = gains[0];
                (eq.block, (hr * hr + hi * hi).max(OUTAGE_EPSILON * OUTAGE_EPSILON))
            }
        };
        let chips: Vec<(f64, f64)> = received
            .data
            .chunks(2)
            .map(|c| (c[0] * amplitude, c[1] * amplitude))
            .collect();
        let despread = cdma.despread(&chips, 0)?;
        let noise_var = chan.noise_variance() * tx_power / (gain_mag2 * cdma.code_len as f64);
        let llrs = qam64_soft_demap(&despread, noise_var);
        let decoded = maxlogmap_decode(&llrs[..turbo.coded_len()], &turbo)?;
        errors += decoded
            .iter()
            .zip(&user_bits[0])
            .filter(|(a, b)| a != b)
            .count();
        total += turbo.block_len;
    }
    Ok(errors as f64 / total as f64)
}
