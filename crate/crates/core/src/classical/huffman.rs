//! Canonical Huffman coding over character frequencies.
//!
//! Codebooks are canonical (codes assigned in (length, symbol) order), so two
//! builds over the same frequency table produce identical codes. Decoding a
//! damaged stream yields the longest cleanly decodable prefix.

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HuffmanError {
    #[error("cannot build a codebook from an empty alphabet")]
    EmptyAlphabet,
    #[error("symbol {0:?} is not in the codebook alphabet")]
    UnknownSymbol(char),
}

#[derive(Debug, Clone)]
pub struct HuffmanCodebook {
    /// symbol -> (code value MSB-first, length in bits)
    codes: BTreeMap<char, (u32, u8)>,
    /// decode trie: (zero-child, one-child, symbol at leaf); index 0 is root
    trie: Vec<(Option<usize>, Option<usize>, Option<char>)>,
}

fn code_lengths(freqs: &BTreeMap<char, u64>) -> Vec<(char, u8)> {
    // tree merge with (count, id) ordering; leaf ids follow sorted symbol
    // order and merged nodes get increasing ids, so ties are deterministic
    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    struct Entry {
        count: u64,
        id: usize,
    }
    let symbols: Vec<char> = freqs.keys().copied().collect();
    if symbols.len() == 1 {
        return vec![(symbols[0], 1)];
    }
    let mut heap: std::collections::BinaryHeap<std::cmp::Reverse<Entry>> =
        std::collections::BinaryHeap::new();
    // node -> (children or leaf symbol index)
    let mut children: Vec<Option<(usize, usize)>> = Vec::new();
    for (i, (_, &count)) in freqs.iter().enumerate() {
        children.push(None);
        heap.push(std::cmp::Reverse(Entry {
            count: count.max(1),
            id: i,
        }));
    }
    while heap.len() > 1 {
        let a = heap.pop().unwrap().0;
        let b = heap.pop().unwrap().0;
        let id = children.len();
        children.push(Some((a.id, b.id)));
        heap.push(std::cmp::Reverse(Entry {
            count: a.count + b.count,
            id,
        }));
    }
    let root = heap.pop().unwrap().0.id;
    let mut depths = vec![0u8; children.len()];
    let mut stack = vec![(root, 0u8)];
    while let Some((node, depth)) = stack.pop() {
        depths[node] = depth;
        if let Some((a, b)) = children[node] {
            stack.push((a, depth + 1));
            stack.push((b, depth + 1));
        }
    }
    symbols
        .iter()
        .enumerate()
        .map(|(i, &sym)| (sym, depths[i]))
        .collect()
}

impl HuffmanCodebook {
    pub fn from_frequencies(freqs: &BTreeMap<char, u64>) -> Result<Self, HuffmanError> {
        if freqs.is_empty() {
            return Err(HuffmanError::EmptyAlphabet);
        }
        let mut lengths = code_lengths(freqs);
        lengths.sort_by_key(|&(sym, len)| (len, sym));

        let mut codes = BTreeMap::new();
        let mut code: u32 = 0;
        let mut prev_len = 0u8;
        for &(sym, len) in &lengths {
            code <<= len - prev_len;
            codes.insert(sym, (code, len));
            code += 1;
            prev_len = len;
        }

        let mut trie: Vec<(Option<usize>, Option<usize>, Option<char>)> = vec![(None, None, None)];
        for (&sym, &(code, len)) in &codes {
            let mut node = 0;
            for i in (0..len).rev() {
                let bit = (code >> i) & 1 == 1;
                let next = if bit { trie[node].1 } else { trie[node].0 };
                let next = match next {
                    Some(n) => n,
                    None => {
                        trie.push((None, None, None));
                        let n = trie.len() - 1;
                        if bit {
                            trie[node].1 = Some(n);
                        } else {
                            trie[node].0 = Some(n);
                        }
                        n
                    }
                };
                node = next;
            }
            trie[node].2 = Some(sym);
        }
        Ok(HuffmanCodebook { codes, trie })
    }

    /// Builds the alphabet from every character of the given texts.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self, HuffmanError> {
        let mut freqs = BTreeMap::new();
        for text in texts {
            for ch in text.chars() {
                *freqs.entry(ch).or_insert(0u64) += 1;
            }
        }
        Self::from_frequencies(&freqs)
    }

    pub fn alphabet_len(&self) -> usize {
        self.codes.len()
    }

    pub fn code_len(&self, sym: char) -> Option<u8> {
        self.codes.get(&sym).map(|&(_, len)| len)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<bool>, HuffmanError> {
        let mut bits = Vec::with_capacity(text.len() * 4);
        for ch in text.chars() {
            let &(code, len) = self
                .codes
                .get(&ch)
                .ok_or(HuffmanError::UnknownSymbol(ch))?;
            for i in (0..len).rev() {
                bits.push((code >> i) & 1 == 1);
            }
        }
        Ok(bits)
    }

    /// Decodes greedily; a trailing partial codeword (as after channel
    /// truncation) is dropped and whatever decoded cleanly is returned.
    pub fn decode(&self, bits: &[bool]) -> String {
        let mut out = String::new();
        let mut node = 0;
        for &bit in bits {
            let next = if bit { self.trie[node].1 } else { self.trie[node].0 };
            match next {
                Some(n) => {
                    node = n;
                    if let Some(sym) = self.trie[node].2 {
                        out.push(sym);
                        node = 0;
                    }
                }
                None => break, // corrupt path: stop at the damage
            }
        }
        out
    }

    /// Expected code length in bits per symbol under the given frequencies.
    pub fn average_code_length(&self, freqs: &BTreeMap<char, u64>) -> f64 {
        let total: u64 = freqs.values().sum();
        freqs
            .iter()
            .map(|(&sym, &count)| {
                let len = self.codes.get(&sym).map(|&(_, l)| l).unwrap_or(0) as f64;
                len * count as f64 / total as f64
            })
            .sum()
    }
}

/// Shannon entropy in bits per symbol of a frequency table.
pub fn entropy(freqs: &BTreeMap<char, u64>) -> f64 {
    let total: u64 = freqs.values().sum();
    freqs
        .values()
        .map(|&count| {
            let p = count as f64 / total as f64;
            if p > 0.0 {
                -p * p.log2()
            } else {
                0.0
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let text = "the lovely garden was quite wonderful again today";
        let book = HuffmanCodebook::from_texts([text]).unwrap();
        let bits = book.encode(text).unwrap();
        assert_eq!(book.decode(&bits), text);
    }

    #[test]
    fn single_symbol_alphabet_uses_one_bit_codes() {
        let book = HuffmanCodebook::from_texts(["aaaa"]).unwrap();
        assert_eq!(book.alphabet_len(), 1);
        let bits = book.encode("aaaa").unwrap();
        assert_eq!(bits.len(), 4);
        assert_eq!(book.decode(&bits), "aaaa");
    }

    #[test]
    fn unknown_symbol_is_an_error() {
        let book = HuffmanCodebook::from_texts(["ab"]).unwrap();
        assert!(matches!(
            book.encode("abc"),
            Err(HuffmanError::UnknownSymbol('c'))
        ));
    }

    #[test]
    fn dyadic_distribution_meets_entropy() {
        // {a: 1/2, b: 1/4, c: 1/4} -> average length 1.5 bits = entropy
        let mut freqs = BTreeMap::new();
        freqs.insert('a', 2u64);
        freqs.insert('b', 1);
        freqs.insert('c', 1);
        let book = HuffmanCodebook::from_frequencies(&freqs).unwrap();
        assert!((book.average_code_length(&freqs) - 1.5).abs() < 1e-12);
        assert!((entropy(&freqs) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn average_length_within_one_bit_of_entropy() {
        let text = "this that the other something wonderful terrible market stadium";
        let mut freqs = BTreeMap::new();
        for ch in text.chars() {
            *freqs.entry(ch).or_insert(0u64) += 1;
        }
        let book = HuffmanCodebook::from_frequencies(&freqs).unwrap();
        let avg = book.average_code_length(&freqs);
        let h = entropy(&freqs);
        assert!(avg >= h - 1e-12, "avg {avg} < entropy {h}");
        assert!(avg < h + 1.0, "avg {avg} >= entropy {h} + 1");
    }

    #[test]
    fn codes_are_prefix_free() {
        let book = HuffmanCodebook::from_texts(["abracadabra zzz qs"]).unwrap();
        let codes: Vec<(u32, u8)> = book.codes.values().copied().collect();
        for (i, &(ca, la)) in codes.iter().enumerate() {
            for &(cb, lb) in &codes[i + 1..] {
                let (short, slen, long, llen) = if la <= lb {
                    (ca, la, cb, lb)
                } else {
                    (cb, lb, ca, la)
                };
                assert_ne!(short, long >> (llen - slen), "prefix collision");
            }
        }
    }

    #[test]
    fn truncated_stream_decodes_a_prefix() {
        let text = "delightful sunshine melody";
        let book = HuffmanCodebook::from_texts([text]).unwrap();
        let bits = book.encode(text).unwrap();
        let cut = &bits[..bits.len() * 2 / 3];
        let decoded = book.decode(cut);
        assert!(text.starts_with(&decoded));
        assert!(!decoded.is_empty());
    }

    #[test]
    fn build_is_deterministic() {
        let texts = ["some words here", "more words there"];
        let a = HuffmanCodebook::from_texts(texts).unwrap();
        let b = HuffmanCodebook::from_texts(texts).unwrap();
        assert_eq!(a.codes, b.codes);
    }
}
