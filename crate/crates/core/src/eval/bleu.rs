//! Single-reference BLEU: clipped modified n-gram precisions, brevity
//! penalty, and cumulative scores for n = 1..=4.

use std::collections::BTreeMap;

pub const MAX_N: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct BleuScore {
    /// Modified n-gram precision p_n for n = 1..=4 (0 where no n-grams exist).
    pub precisions: [f64; MAX_N],
    pub brevity_penalty: f64,
    /// Cumulative BLEU-n: BP * exp(mean of available log p_1..p_n).
    pub cumulative: [f64; MAX_N],
}

impl BleuScore {
    pub fn bleu1(&self) -> f64 {
        self.cumulative[0]
    }
    pub fn bleu4(&self) -> f64 {
        self.cumulative[3]
    }

    fn zero() -> Self {
        BleuScore {
            precisions: [0.0; MAX_N],
            brevity_penalty: 0.0,
            cumulative: [0.0; MAX_N],
        }
    }
}

fn ngram_counts(words: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if words.len() >= n {
        for gram in words.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU of `candidate` against a single `reference`. The reference must be
/// non-empty; an empty candidate scores zero everywhere.
pub fn bleu(candidate: &[String], reference: &[String]) -> BleuScore {
    assert!(!reference.is_empty(), "BLEU reference must be non-empty");
    if candidate.is_empty() {
        return BleuScore::zero();
    }

    let mut precisions = [0.0; MAX_N];
    let mut available = [false; MAX_N];
    for n in 1..=MAX_N {
        let total = candidate.len().saturating_sub(n - 1);
        if total == 0 {
            continue;
        }
        let ref_counts = ngram_counts(reference, n);
        let cand_counts = ngram_counts(candidate, n);
        let clipped: usize = cand_counts
            .iter()
            .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        precisions[n - 1] = clipped as f64 / total as f64;
        available[n - 1] = true;
    }

    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let brevity_penalty = if c < r { (1.0 - r / c).exp() } else { 1.0 };

    let mut cumulative = [0.0; MAX_N];
    for n in 1..=MAX_N {
        let logs: Vec<f64> = (0..n)
            .filter(|&i| available[i])
            .map(|i| precisions[i].ln())
            .collect();
        cumulative[n - 1] = if logs.is_empty() {
            0.0
        } else {
            let mean = logs.iter().sum::<f64>() / logs.len() as f64;
            brevity_penalty * mean.exp()
        };
    }
    BleuScore {
        precisions,
        brevity_penalty,
        cumulative,
    }
}

/// Per-sentence BLEU averaged over (candidate, reference) pairs.
pub fn corpus_average(pairs: &[(Vec<String>, Vec<String>)]) -> [f64; MAX_N] {
    let mut sums = [0.0; MAX_N];
    for (cand, reference) in pairs {
        let score = bleu(cand, reference);
        for (s, c) in sums.iter_mut().zip(&score.cumulative) {
            *s += c;
        }
    }
    for s in &mut sums {
        *s /= pairs.len().max(1) as f64;
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_sentences_score_one() {
        let s = words("the quick brown fox jumps over the lazy dog");
        let score = bleu(&s, &s);
        assert_eq!(score.precisions, [1.0; 4]);
        assert_eq!(score.brevity_penalty, 1.0);
        assert_eq!(score.cumulative, [1.0; 4]);
    }

    #[test]
    fn clipping_limits_repeated_words() {
        // "the the the the" vs "the cat sat": p1 = 1/4
        let score = bleu(&words("the the the the"), &words("the cat sat"));
        assert!((score.precisions[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn short_candidate_is_penalized() {
        let score = bleu(&words("the cat"), &words("the cat sat down"));
        let expected_bp = (1.0f64 - 4.0 / 2.0).exp();
        assert!((score.brevity_penalty - expected_bp).abs() < 1e-12);
        assert!(score.brevity_penalty < 1.0);
    }

    #[test]
    fn empty_candidate_scores_zero() {
        let score = bleu(&[], &words("anything here"));
        assert_eq!(score.cumulative, [0.0; 4]);
    }

    #[test]
    #[should_panic(expected = "non-empty")]
    fn empty_reference_is_a_contract_violation() {
        bleu(&words("a b"), &[]);
    }

    #[test]
    fn reordering_changes_higher_order_precision() {
        let reference = words("a b c d");
        let straight = bleu(&words("a b c d"), &reference);
        let shuffled = bleu(&words("b a d c"), &reference);
        assert_eq!(straight.precisions[1], 1.0);
        assert!(shuffled.precisions[1] < 1.0);
        assert_eq!(straight.precisions[0], shuffled.precisions[0]);
    }

    #[test]
    fn hand_computed_mixed_example() {
        // candidate: "a b b c", reference: "a b c d"
        // p1: a,b,b,c -> clipped 3 of 4; p2: ab,bb,bc -> ab matches, bc matches -> 2/3
        let score = bleu(&words("a b b c"), &words("a b c d"));
        assert!((score.precisions[0] - 0.75).abs() < 1e-12);
        assert!((score.precisions[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cumulative_uses_available_orders_only() {
        // 3-word candidate has no 4-grams; BLEU-4 falls back to orders 1..3
        let score = bleu(&words("a b c"), &words("a b c"));
        assert_eq!(score.cumulative[3], 1.0);
        assert_eq!(score.precisions[3], 0.0);
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        let cases = [
            ("a", "a b c d e"),
            ("x y z", "a b c"),
            ("a a a a a a", "a b"),
            ("the quick fox", "the quick brown fox"),
        ];
        for (c, r) in cases {
            let score = bleu(&words(c), &words(r));
            for v in score.cumulative.iter().chain(&score.precisions) {
                assert!((0.0..=1.0).contains(v), "{c} vs {r}: {v}");
            }
        }
    }
}
