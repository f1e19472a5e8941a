//! Vocabulary, labeled corpora and merged multi-user batches.
//!
//! The transmitter input is a merged batch: each row holds one sentence per
//! user class, each framed into a fixed-length slot as
//! `START w_1 .. w_n END PAD..`, with the slot order shuffled per row.
//! Sentences come either from the built-in synthetic generator (class-disjoint
//! content lexicons over shared function words) or from plain-text files, one
//! sentence per line, one file per class.

use crate::rng::{streams, Rng};
use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;
pub const SEP: usize = 4;
pub const NUM_RESERVED: usize = 5;

pub const MIN_WORDS: usize = 4;
pub const MAX_WORDS: usize = 15;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("number of classes must be in [2, 7], got {0}")]
    BadClassCount(usize),
    #[error("sentences per class must be at least 1")]
    EmptyClassRequest,
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("corpus directory holds fewer than two class files")]
    TooFewClasses,
    #[error("no usable sentences ({MIN_WORDS}..={MAX_WORDS} words) in {0}")]
    NoUsableSentences(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Token-to-id mapping with reserved control ids 0..5.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    to_id: BTreeMap<String, usize>,
    to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary over every word of the corpus, ids assigned in
    /// sorted word order after the reserved ids.
    pub fn build(corpus: &[LabeledSentence]) -> Result<Self, TextError> {
        if corpus.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let mut to_token: Vec<String> = ["<pad>", "<start>", "<end>", "<unk>", "<sep>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let words: std::collections::BTreeSet<&str> = corpus
            .iter()
            .flat_map(|s| s.words.iter().map(String::as_str))
            .collect();
        to_token.extend(words.into_iter().map(String::from));
        let to_id = to_token
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(Vocabulary { to_id, to_token })
    }

    pub fn len(&self) -> usize {
        self.to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved ids are always present
    }

    pub fn id(&self, word: &str) -> usize {
        self.to_id.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        assert!(id < self.to_token.len(), "token id {id} outside vocabulary");
        &self.to_token[id]
    }

    pub fn tokenize(&self, words: &[String]) -> Vec<usize> {
        words.iter().map(|w| self.id(w)).collect()
    }

    /// Words of one slot: strips START and PAD, stops at the first END.
    pub fn detokenize(&self, ids: &[usize]) -> Vec<String> {
        let mut words = Vec::new();
        for &id in ids {
            assert!(id < self.to_token.len(), "token id {id} outside vocabulary");
            match id {
                END => break,
                PAD | START | SEP => continue,
                _ => words.push(self.to_token[id].clone()),
            }
        }
        words
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub words: Vec<String>,
    pub label: usize,
}

impl LabeledSentence {
    pub fn new(words: Vec<String>, label: usize) -> Self {
        assert!(
            (MIN_WORDS..=MAX_WORDS).contains(&words.len()),
            "sentence must have {MIN_WORDS}..={MAX_WORDS} words, got {}",
            words.len()
        );
        LabeledSentence { words, label }
    }
}

/// Which family of class lexicons a synthetic corpus draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusTheme {
    /// Two classes: positive and negative sentences.
    Sentiment,
    /// Up to seven subject-matter classes.
    Topics,
}

struct ClassLexicon {
    name: &'static str,
    nouns: &'static [&'static str],
    verbs: &'static [&'static str],
    adjectives: &'static [&'static str],
    adverbs: &'static [&'static str],
}

const SHARED_WORDS: &[&str] = &[
    "the", "a", "this", "that", "my", "our", "their", "and", "with", "was", "is", "very", "quite",
    "today", "again", "here", "still", "always",
];

const SENTIMENT_CLASSES: &[ClassLexicon] = &[
    ClassLexicon {
        name: "positive",
        nouns: &[
            "smile", "gift", "friend", "sunshine", "holiday", "praise", "delight", "garden",
            "melody", "victory", "kindness", "laughter",
        ],
        verbs: &[
            "enjoy", "love", "celebrate", "admire", "cherish", "welcome", "brighten", "thrive",
        ],
        adjectives: &[
            "wonderful", "happy", "lovely", "brilliant", "cheerful", "superb", "pleasant",
            "graceful", "splendid", "charming",
        ],
        adverbs: &["joyfully", "warmly", "gladly", "sweetly", "proudly"],
    },
    ClassLexicon {
        name: "negative",
        nouns: &[
            "storm", "failure", "debt", "trouble", "injury", "complaint", "mess", "delay",
            "rubbish", "defeat", "misery", "grudge",
        ],
        verbs: &[
            "hate", "ruin", "break", "suffer", "complain", "regret", "spoil", "collapse",
        ],
        adjectives: &[
            "terrible", "awful", "gloomy", "broken", "horrid", "dreadful", "nasty", "bitter",
            "miserable", "rotten",
        ],
        adverbs: &["badly", "sadly", "angrily", "poorly", "grimly"],
    },
];

const TOPIC_CLASSES: &[ClassLexicon] = &[
    ClassLexicon {
        name: "sports",
        nouns: &[
            "match", "coach", "stadium", "league", "goal", "racket", "referee", "tournament",
            "sprint", "defender", "trophy", "season",
        ],
        verbs: &[
            "kick", "score", "train", "sprint", "defend", "compete", "tackle", "win",
        ],
        adjectives: &[
            "athletic", "fast", "competitive", "undefeated", "agile", "sporting", "fit",
            "energetic", "tireless", "swift",
        ],
        adverbs: &["quickly", "fiercely", "skillfully", "bravely", "hard"],
    },
    ClassLexicon {
        name: "education",
        nouns: &[
            "teacher", "lesson", "exam", "homework", "classroom", "student", "lecture", "campus",
            "notebook", "grade", "semester", "library",
        ],
        verbs: &[
            "study", "teach", "learn", "revise", "graduate", "enroll", "memorize", "tutor",
        ],
        adjectives: &[
            "academic", "studious", "curious", "literate", "scholarly", "educated", "attentive",
            "diligent", "bright", "thoughtful",
        ],
        adverbs: &["carefully", "patiently", "earnestly", "daily", "eagerly"],
    },
    ClassLexicon {
        name: "finance",
        nouns: &[
            "market", "bank", "profit", "budget", "investor", "currency", "dividend", "loan",
            "ledger", "stock", "interest", "account",
        ],
        verbs: &[
            "invest", "trade", "save", "audit", "borrow", "lend", "deposit", "hedge",
        ],
        adjectives: &[
            "fiscal", "monetary", "bullish", "solvent", "liquid", "taxable", "wealthy",
            "economic", "insured", "commercial",
        ],
        adverbs: &["profitably", "steadily", "prudently", "annually", "sharply"],
    },
    ClassLexicon {
        name: "games",
        nouns: &[
            "player", "console", "quest", "puzzle", "arcade", "level", "avatar", "dice",
            "joystick", "dungeon", "pixel", "lobby",
        ],
        verbs: &[
            "play", "spawn", "unlock", "respawn", "stream", "render", "upgrade", "pause",
        ],
        adjectives: &[
            "playable", "virtual", "immersive", "multiplayer", "retro", "animated", "addictive",
            "interactive", "legendary", "epic",
        ],
        adverbs: &["online", "casually", "repeatedly", "virtually", "late"],
    },
    ClassLexicon {
        name: "medicine",
        nouns: &[
            "doctor", "patient", "clinic", "vaccine", "surgery", "diagnosis", "nurse", "dosage",
            "symptom", "therapy", "ward", "prescription",
        ],
        verbs: &[
            "heal", "treat", "diagnose", "operate", "prescribe", "recover", "vaccinate", "examine",
        ],
        adjectives: &[
            "clinical", "chronic", "surgical", "medical", "healthy", "infectious", "sterile",
            "acute", "viral", "therapeutic",
        ],
        adverbs: &["gently", "safely", "urgently", "clinically", "weekly"],
    },
    ClassLexicon {
        name: "politics",
        nouns: &[
            "senator", "ballot", "policy", "parliament", "campaign", "minister", "election",
            "treaty", "congress", "mandate", "cabinet", "amendment",
        ],
        verbs: &[
            "vote", "govern", "debate", "legislate", "campaign", "elect", "veto", "negotiate",
        ],
        adjectives: &[
            "political", "electoral", "diplomatic", "partisan", "federal", "legislative", "civic",
            "constitutional", "municipal", "parliamentary",
        ],
        adverbs: &["publicly", "formally", "narrowly", "nationally", "loudly"],
    },
    ClassLexicon {
        name: "military",
        nouns: &[
            "soldier", "brigade", "fortress", "convoy", "radar", "garrison", "missile", "patrol",
            "barracks", "regiment", "commander", "outpost",
        ],
        verbs: &[
            "march", "deploy", "guard", "salute", "mobilize", "retreat", "escort", "enlist",
        ],
        adjectives: &[
            "armored", "tactical", "strategic", "armed", "fortified", "covert", "veteran",
            "combat", "naval", "airborne",
        ],
        adverbs: &["swiftly", "silently", "overnight", "abroad", "onward"],
    },
];

fn lexicons_for(theme: CorpusTheme, num_classes: usize) -> Result<&'static [ClassLexicon], TextError> {
    match theme {
        CorpusTheme::Sentiment => {
            if num_classes != 2 {
                return Err(TextError::BadClassCount(num_classes));
            }
            Ok(SENTIMENT_CLASSES)
        }
        CorpusTheme::Topics => {
            if !(2..=7).contains(&num_classes) {
                return Err(TextError::BadClassCount(num_classes));
            }
            Ok(&TOPIC_CLASSES[..num_classes])
        }
    }
}

/// Class names of a synthetic corpus configuration.
pub fn class_names(theme: CorpusTheme, num_classes: usize) -> Result<Vec<String>, TextError> {
    Ok(lexicons_for(theme, num_classes)?
        .iter()
        .map(|c| c.name.to_string())
        .collect())
}

/// Template grammar: a fixed five-beat cycle of word categories
/// (adjective, noun, verb, shared function word, adverb) with each word
/// drawn independently and uniformly from its pool. The grammatical frame is
/// predictable from position alone, while word identity within a category is
/// not predictable from any prefix — so, as with a large natural corpus,
/// reconstruction cannot be shortcut by sequence recall.
fn gen_sentence(lex: &ClassLexicon, rng: &mut Rng) -> Vec<String> {
    let target = MIN_WORDS + rng.below(MAX_WORDS - MIN_WORDS + 1);
    let mut words: Vec<&str> = Vec::with_capacity(target);
    for position in 0..target {
        words.push(match position % 5 {
            0 => rng.choose(lex.adjectives),
            1 => rng.choose(lex.nouns),
            2 => rng.choose(lex.verbs),
            3 => rng.choose(SHARED_WORDS),
            _ => rng.choose(lex.adverbs),
        });
    }
    words.into_iter().map(String::from).collect()
}

/// Deterministically generates `sentences_per_class` labeled sentences for
/// each of `num_classes` classes. Two classes use the sentiment lexicons,
/// more use the topic lexicons, mirroring the two evaluation setups.
pub fn gen_corpus(
    num_classes: usize,
    sentences_per_class: usize,
    seed: u64,
) -> Result<Vec<LabeledSentence>, TextError> {
    let theme = if num_classes == 2 {
        CorpusTheme::Sentiment
    } else {
        CorpusTheme::Topics
    };
    gen_corpus_themed(theme, num_classes, sentences_per_class, seed)
}

pub fn gen_corpus_themed(
    theme: CorpusTheme,
    num_classes: usize,
    sentences_per_class: usize,
    seed: u64,
) -> Result<Vec<LabeledSentence>, TextError> {
    if sentences_per_class == 0 {
        return Err(TextError::EmptyClassRequest);
    }
    let lexicons = lexicons_for(theme, num_classes)?;
    let mut rng = Rng::substream(seed, streams::CORPUS);
    let mut corpus = Vec::with_capacity(num_classes * sentences_per_class);
    for _ in 0..sentences_per_class {
        for (label, lex) in lexicons.iter().enumerate() {
            corpus.push(LabeledSentence::new(gen_sentence(lex, &mut rng), label));
        }
    }
    Ok(corpus)
}

/// Stratified split into (train, held-out) with `held_out_per_class` of each
/// class moved to the held-out set, chosen by a seeded shuffle.
pub fn split_corpus(
    corpus: &[LabeledSentence],
    held_out_per_class: usize,
    seed: u64,
) -> (Vec<LabeledSentence>, Vec<LabeledSentence>) {
    let num_classes = corpus.iter().map(|s| s.label).max().map_or(0, |m| m + 1);
    let mut rng = Rng::substream(seed, streams::SPLIT);
    let mut train = Vec::new();
    let mut held = Vec::new();
    for class in 0..num_classes {
        let mut members: Vec<&LabeledSentence> =
            corpus.iter().filter(|s| s.label == class).collect();
        rng.shuffle(&mut members);
        for (i, s) in members.into_iter().enumerate() {
            if i < held_out_per_class {
                held.push(s.clone());
            } else {
                train.push(s.clone());
            }
        }
    }
    (train, held)
}

/// Writes a corpus as one `<class>.txt` file per class, one sentence per line.
pub fn write_corpus_dir(
    corpus: &[LabeledSentence],
    names: &[String],
    dir: &Path,
) -> Result<(), TextError> {
    fs::create_dir_all(dir)?;
    for (label, name) in names.iter().enumerate() {
        let lines: Vec<String> = corpus
            .iter()
            .filter(|s| s.label == label)
            .map(|s| s.words.join(" "))
            .collect();
        fs::write(dir.join(format!("{name}.txt")), lines.join("\n") + "\n")?;
    }
    Ok(())
}

/// Loads a corpus from a directory of `<class>.txt` files (class id = sorted
/// file-stem order). Lines are lowercased and whitespace-tokenized; lines
/// outside the 4..=15 word range are skipped.
pub fn load_corpus_dir(dir: &Path) -> Result<(Vec<LabeledSentence>, Vec<String>), TextError> {
    let mut stems: Vec<(String, std::path::PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .filter_map(|p| {
            p.file_stem()
                .and_then(|s| s.to_str())
                .map(|s| (s.to_string(), p.clone()))
        })
        .collect();
    stems.sort();
    if stems.len() < 2 {
        return Err(TextError::TooFewClasses);
    }
    let mut corpus = Vec::new();
    let mut names = Vec::new();
    for (label, (stem, path)) in stems.into_iter().enumerate() {
        let body = fs::read_to_string(&path)?;
        let mut any = false;
        for line in body.lines() {
            let words: Vec<String> = line
                .split_whitespace()
                .map(|w| w.to_lowercase())
                .collect();
            if (MIN_WORDS..=MAX_WORDS).contains(&words.len()) {
                corpus.push(LabeledSentence::new(words, label));
                any = true;
            }
        }
        if !any {
            return Err(TextError::NoUsableSentences(path.display().to_string()));
        }
        names.push(stem);
    }
    Ok((corpus, names))
}

/// One merged multi-user batch: `ids` is B x (K*L) with one L-token slot per
/// user class in seeded-random slot order per row.
#[derive(Debug, Clone)]
pub struct MergedBatch {
    pub batch: usize,
    pub num_classes: usize,
    pub slot_len: usize,
    /// B * K*L token ids, row-major.
    pub ids: Vec<usize>,
    /// True exactly on non-PAD positions.
    pub pad_mask: Vec<bool>,
    /// B * K class labels, in slot order.
    pub slot_labels: Vec<usize>,
    /// B * K source sentences, in slot order.
    pub references: Vec<Vec<String>>,
}

impl MergedBatch {
    pub fn row_width(&self) -> usize {
        self.num_classes * self.slot_len
    }

    pub fn row_ids(&self, row: usize) -> &[usize] {
        let w = self.row_width();
        &self.ids[row * w..(row + 1) * w]
    }

    /// The reference sentence carried by `row` for class `class`.
    pub fn reference_for_class(&self, row: usize, class: usize) -> &[String] {
        let k = self.num_classes;
        let slot = (0..k)
            .find(|&s| self.slot_labels[row * k + s] == class)
            .expect("each row carries one sentence per class");
        &self.references[row * k + slot]
    }

    /// Decoder input for teacher forcing: the row shifted right behind START.
    pub fn shifted_right(&self, row: usize) -> Vec<usize> {
        let ids = self.row_ids(row);
        let mut out = Vec::with_capacity(ids.len());
        out.push(START);
        out.extend_from_slice(&ids[..ids.len() - 1]);
        out
    }
}

/// Frames one sentence into an L-token slot.
fn frame_slot(words: &[String], vocab: &Vocabulary, slot_len: usize, insert_sep: bool) -> Vec<usize> {
    let used = words.len() + 2 + usize::from(insert_sep);
    assert!(
        used <= slot_len,
        "sentence of {} words does not fit a slot of {slot_len}",
        words.len()
    );
    let mut slot = Vec::with_capacity(slot_len);
    slot.push(START);
    slot.extend(vocab.tokenize(words));
    slot.push(END);
    if insert_sep {
        slot.push(SEP);
    }
    slot.resize(slot_len, PAD);
    slot
}

/// Builds all full batches obtainable from the corpus: every batch row takes
/// one unused sentence per class (seeded shuffle within class), slots are
/// placed in a fresh seeded permutation per row, and leftover sentences that
/// cannot fill a complete batch are dropped.
pub fn make_batches(
    corpus: &[LabeledSentence],
    vocab: &Vocabulary,
    batch_size: usize,
    slot_len: usize,
    num_classes: usize,
    seed: u64,
) -> Vec<MergedBatch> {
    make_batches_opts(corpus, vocab, batch_size, slot_len, num_classes, seed, false)
}

pub fn make_batches_opts(
    corpus: &[LabeledSentence],
    vocab: &Vocabulary,
    batch_size: usize,
    slot_len: usize,
    num_classes: usize,
    seed: u64,
    insert_sep: bool,
) -> Vec<MergedBatch> {
    assert!(batch_size > 0, "batch size must be positive");
    assert!(
        slot_len >= MAX_WORDS + 2 + usize::from(insert_sep),
        "slot length {slot_len} cannot frame a {MAX_WORDS}-word sentence"
    );
    let mut rng = Rng::substream(seed, streams::BATCHES);
    let mut by_class: Vec<Vec<&LabeledSentence>> = vec![Vec::new(); num_classes];
    for s in corpus {
        assert!(s.label < num_classes, "label {} out of range", s.label);
        by_class[s.label].push(s);
    }
    let rows_available = by_class.iter().map(Vec::len).min().unwrap_or(0);
    assert!(
        rows_available >= batch_size,
        "corpus must hold at least {batch_size} sentences per class"
    );
    for class in by_class.iter_mut() {
        rng.shuffle(class);
    }

    let num_batches = rows_available / batch_size;
    let width = num_classes * slot_len;
    let mut batches = Vec::with_capacity(num_batches);
    let mut cursor = 0;
    for _ in 0..num_batches {
        let mut ids = Vec::with_capacity(batch_size * width);
        let mut pad_mask = Vec::with_capacity(batch_size * width);
        let mut slot_labels = Vec::with_capacity(batch_size * num_classes);
        let mut references = Vec::with_capacity(batch_size * num_classes);
        for row in 0..batch_size {
            let order = rng.permutation(num_classes);
            for &class in &order {
                let sentence = by_class[class][cursor + row];
                let slot = frame_slot(&sentence.words, vocab, slot_len, insert_sep);
                pad_mask.extend(slot.iter().map(|&id| id != PAD));
                ids.extend(slot);
                slot_labels.push(class);
                references.push(sentence.words.clone());
            }
        }
        cursor += batch_size;
        batches.push(MergedBatch {
            batch: batch_size,
            num_classes,
            slot_len,
            ids,
            pad_mask,
            slot_labels,
            references,
        });
    }
    batches
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus() -> Vec<LabeledSentence> {
        gen_corpus(2, 20, 77).unwrap()
    }

    #[test]
    fn gen_corpus_is_deterministic() {
        let a = gen_corpus(2, 50, 123).unwrap();
        let b = gen_corpus(2, 50, 123).unwrap();
        assert_eq!(a, b);
        let c = gen_corpus(2, 50, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gen_corpus_lengths_in_range() {
        for k in [2, 3, 7] {
            for s in gen_corpus(k, 100, 5).unwrap() {
                assert!((MIN_WORDS..=MAX_WORDS).contains(&s.words.len()));
            }
        }
    }

    #[test]
    fn gen_corpus_rejects_bad_class_counts() {
        assert!(matches!(gen_corpus(1, 5, 0), Err(TextError::BadClassCount(1))));
        assert!(matches!(gen_corpus(8, 5, 0), Err(TextError::BadClassCount(8))));
    }

    #[test]
    fn class_lexicons_are_disjoint() {
        // content words of any two classes within a theme never overlap
        let all: Vec<&ClassLexicon> = SENTIMENT_CLASSES.iter().chain(TOPIC_CLASSES).collect();
        for (i, a) in all.iter().enumerate() {
            let words_a: std::collections::BTreeSet<&str> = a
                .nouns
                .iter()
                .chain(a.verbs)
                .chain(a.adjectives)
                .chain(a.adverbs)
                .copied()
                .collect();
            for b in &all[i + 1..] {
                for w in b.nouns.iter().chain(b.verbs).chain(b.adjectives).chain(b.adverbs) {
                    assert!(!words_a.contains(w), "{w} appears in {} and {}", a.name, b.name);
                }
            }
        }
    }

    #[test]
    fn vocab_counts_unique_words_plus_reserved() {
        let corpus = vec![LabeledSentence::new(
            ["good", "day", "today", "friend"].map(String::from).to_vec(),
            0,
        )];
        let vocab = Vocabulary::build(&corpus).unwrap();
        assert_eq!(vocab.len(), NUM_RESERVED + 4);
    }

    #[test]
    fn repeated_word_gets_one_id() {
        let corpus = vec![LabeledSentence::new(
            ["good", "good", "day", "day"].map(String::from).to_vec(),
            0,
        )];
        let vocab = Vocabulary::build(&corpus).unwrap();
        assert_eq!(vocab.len(), NUM_RESERVED + 2);
    }

    #[test]
    fn unseen_word_maps_to_unk() {
        let corpus = vec![LabeledSentence::new(
            ["good", "day", "today", "friend"].map(String::from).to_vec(),
            0,
        )];
        let vocab = Vocabulary::build(&corpus).unwrap();
        let ids = vocab.tokenize(&["good".into(), "zzz".into()]);
        assert_eq!(ids[0], vocab.id("good"));
        assert_eq!(ids[1], UNK);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(Vocabulary::build(&[]), Err(TextError::EmptyCorpus)));
    }

    #[test]
    fn detokenize_strips_framing() {
        let corpus = tiny_corpus();
        let vocab = Vocabulary::build(&corpus).unwrap();
        let w1 = vocab.token(7).to_string();
        let w2 = vocab.token(9).to_string();
        let out = vocab.detokenize(&[START, 7, 9, END, PAD, PAD]);
        assert_eq!(out, vec![w1, w2]);
        assert!(vocab.detokenize(&[PAD; 6]).is_empty());
    }

    #[test]
    fn tokenize_detokenize_round_trip() {
        let corpus = tiny_corpus();
        let vocab = Vocabulary::build(&corpus).unwrap();
        for s in &corpus {
            let mut framed = vec![START];
            framed.extend(vocab.tokenize(&s.words));
            framed.push(END);
            framed.resize(18, PAD);
            assert_eq!(vocab.detokenize(&framed), s.words);
        }
    }

    #[test]
    fn batch_layout_matches_arithmetic() {
        // B=1, K=2, 4-word sentences, L=18 -> row of 36 ids with 24 PADs
        let corpus = vec![
            LabeledSentence::new(["good", "day", "out", "there"].map(String::from).to_vec(), 0),
            LabeledSentence::new(["bad", "night", "in", "town"].map(String::from).to_vec(), 1),
        ];
        let vocab = Vocabulary::build(&corpus).unwrap();
        let batches = make_batches(&corpus, &vocab, 1, 18, 2, 1);
        assert_eq!(batches.len(), 1);
        let b = &batches[0];
        assert_eq!(b.ids.len(), 36);
        let pads = b.ids.iter().filter(|&&id| id == PAD).count();
        assert_eq!(pads, 24);
        let unmasked = b.pad_mask.iter().filter(|&&m| m).count();
        assert_eq!(unmasked, 12);
    }

    #[test]
    fn rows_carry_one_sentence_per_class() {
        let corpus = tiny_corpus();
        let vocab = Vocabulary::build(&corpus).unwrap();
        for batch in make_batches(&corpus, &vocab, 4, 18, 2, 9) {
            for row in 0..batch.batch {
                let mut labels: Vec<usize> =
                    batch.slot_labels[row * 2..(row + 1) * 2].to_vec();
                labels.sort_unstable();
                assert_eq!(labels, vec![0, 1]);
            }
        }
    }

    #[test]
    fn slot_order_varies_across_rows() {
        let corpus = gen_corpus(2, 40, 3).unwrap();
        let vocab = Vocabulary::build(&corpus).unwrap();
        let batches = make_batches(&corpus, &vocab, 10, 18, 2, 4);
        let mut seen = std::collections::BTreeSet::new();
        for b in &batches {
            for row in 0..b.batch {
                seen.insert(b.slot_labels[row * 2]);
            }
        }
        assert_eq!(seen.len(), 2, "both slot orders should occur over 10+ rows");
    }

    #[test]
    fn sep_framing_consumes_one_pad() {
        let corpus = tiny_corpus();
        let vocab = Vocabulary::build(&corpus).unwrap();
        let b = &make_batches_opts(&corpus, &vocab, 1, 18, 2, 5, true)[0];
        let sep_count = b.ids.iter().filter(|&&id| id == SEP).count();
        assert_eq!(sep_count, 2);
    }

    #[test]
    fn corpus_dir_round_trip() {
        let dir = std::env::temp_dir().join(format!("mrsc_text_test_{}", std::process::id()));
        let corpus = tiny_corpus();
        let names = class_names(CorpusTheme::Sentiment, 2).unwrap();
        write_corpus_dir(&corpus, &names, &dir).unwrap();
        let (loaded, loaded_names) = load_corpus_dir(&dir).unwrap();
        assert_eq!(loaded_names, vec!["negative", "positive"]);
        assert_eq!(loaded.len(), corpus.len());
        // same multiset of sentences per class name
        let count = |c: &[LabeledSentence], l| c.iter().filter(|s| s.label == l).count();
        assert_eq!(count(&loaded, 0), 20);
        assert_eq!(count(&loaded, 1), 20);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
