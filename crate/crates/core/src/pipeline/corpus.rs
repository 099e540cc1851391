//! Deterministic synthetic corpora for the two text tasks.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::config::TaskKind;
use crate::error::{Error, Result};
use crate::nets::{BOS, EOS, PAD};
use crate::rng::SeededRng;

const NOUNS: &[&str] = &["restaurant", "cafe", "pub", "diner", "bistro"];
const VERBS: &[&str] = &["serves", "offers", "sells"];
const FOODS: &[&str] = &["pasta", "sushi", "curry", "burgers", "soup", "salad", "pizza", "noodles"];
const ADJS: &[&str] = &["cheap", "fancy", "cozy", "busy", "quiet"];
const PLACES: &[&str] = &["river", "park", "station", "centre", "market"];
const ADVS: &[&str] = &["nearby", "downtown", "daily"];
const GROUPS: &[&str] = &["families", "students", "couples"];
const STAFF: &[&str] = &["waiter", "staff", "chef", "host"];
/// Style 0.
const NEGATIVE: &[&str] = &["awful", "bland", "rude", "terrible", "dirty", "stale"];
/// Style 1.
const POSITIVE: &[&str] = &["great", "delicious", "friendly", "lovely", "excellent", "tasty"];

const FUNCTION_WORDS: &[&str] = &[
    "the", "near", "with", "service", "and", "for", "was", "is", "i", "think", "here", "our", "to", "us", "at", "this",
    "tasted", "we", "had", "were",
];

/// Longest and shortest length-control sentence.
pub const MIN_LEN: usize = 4;
pub const MAX_LEN: usize = 20;

#[derive(Clone, Copy, Debug)]
enum Slot {
    Word(&'static str),
    Class(&'static [&'static str]),
    Style,
}

use Slot::{Class, Style, Word};

const LENGTH_CORE: &[Slot] = &[Word("the"), Class(NOUNS), Class(VERBS), Class(FOODS)];
const LENGTH_CHUNKS: &[&[Slot]] = &[
    &[Word("near"), Word("the"), Class(PLACES)],
    &[Word("with"), Class(ADJS), Word("service")],
    &[Word("and"), Class(FOODS)],
    &[Word("for"), Class(GROUPS)],
    &[Class(ADVS)],
];

const STYLE_TEMPLATES: &[&[Slot]] = &[
    &[Word("the"), Class(FOODS), Word("was"), Style],
    &[Word("the"), Class(NOUNS), Word("is"), Style],
    &[Word("i"), Word("think"), Word("the"), Class(FOODS), Word("here"), Word("is"), Style],
    &[Word("our"), Class(STAFF), Word("was"), Style, Word("to"), Word("us")],
    &[Word("the"), Class(FOODS), Word("at"), Word("this"), Class(NOUNS), Word("tasted"), Style],
    &[Word("we"), Word("had"), Style, Class(FOODS), Word("at"), Word("the"), Class(NOUNS)],
    &[Word("the"), Class(STAFF), Word("at"), Word("the"), Class(NOUNS), Word("were"), Style],
];

/// Dense token ↔ id map. Ids 0, 1, 2 are padding, BOS and EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(words: &[&str]) -> Result<Self> {
        let mut tokens: Vec<String> = ["<pad>", "<bos>", "<eos>"].iter().map(|s| s.to_string()).collect();
        debug_assert_eq!((PAD, BOS, EOS), (0, 1, 2));
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            index.insert(t.clone(), i);
        }
        for w in words {
            if index.contains_key(*w) {
                continue;
            }
            index.insert(w.to_string(), tokens.len());
            tokens.push(w.to_string());
        }
        Ok(Vocab { tokens, index })
    }

    /// The fixed lexicon shared by both text tasks.
    pub fn lexicon() -> Self {
        let words: Vec<&str> = [NOUNS, VERBS, FOODS, ADJS, PLACES, ADVS, GROUPS, STAFF, NEGATIVE, POSITIVE, FUNCTION_WORDS]
            .concat();
        Vocab::new(&words).expect("lexicon is well formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| Error::invalid("vocab", format!("unknown token {w:?}"))))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i).unwrap_or("<unk>")).collect::<Vec<_>>().join(" ")
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid("corpus", format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<usize>,
    /// Exact length for length control, style id for style transfer.
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub task: TaskKind,
    pub vocab: Vocab,
    pub sentences: Vec<Sentence>,
}

/// A template resolved against the vocabulary.
#[derive(Clone, Debug)]
enum CompiledSlot {
    Id(usize),
    Choice(Vec<usize>),
    Style([Vec<usize>; 2]),
}

fn compile(vocab: &Vocab, template: &[Slot]) -> Result<Vec<CompiledSlot>> {
    let ids = |words: &[&str]| -> Result<Vec<usize>> {
        words
            .iter()
            .map(|w| vocab.id(w).ok_or_else(|| Error::invalid("generate_corpus", format!("template token {w:?} not in vocabulary"))))
            .collect()
    };
    template
        .iter()
        .map(|slot| match slot {
            Word(w) => Ok(CompiledSlot::Id(ids(&[w])?[0])),
            Class(ws) => Ok(CompiledSlot::Choice(ids(ws)?)),
            Style => Ok(CompiledSlot::Style([ids(NEGATIVE)?, ids(POSITIVE)?])),
        })
        .collect()
}

fn fill(template: &[CompiledSlot], style: usize, rng: &mut SeededRng, out: &mut Vec<usize>) {
    for slot in template {
        match slot {
            CompiledSlot::Id(i) => out.push(*i),
            CompiledSlot::Choice(c) => out.push(c[rng.below(c.len())]),
            CompiledSlot::Style(s) => out.push(s[style][rng.below(s[style].len())]),
        }
    }
}

/// Template sets checked against `vocab`; fails on any out-of-vocabulary word.
struct Grammar {
    core: Vec<CompiledSlot>,
    chunks: Vec<Vec<CompiledSlot>>,
    styled: Vec<Vec<CompiledSlot>>,
}

impl Grammar {
    fn build(vocab: &Vocab) -> Result<Self> {
        Ok(Grammar {
            core: compile(vocab, LENGTH_CORE)?,
            chunks: LENGTH_CHUNKS.iter().map(|t| compile(vocab, t)).collect::<Result<_>>()?,
            styled: STYLE_TEMPLATES.iter().map(|t| compile(vocab, t)).collect::<Result<_>>()?,
        })
    }

    fn length_sentence(&self, rng: &mut SeededRng) -> (Vec<usize>, usize) {
        let n = MIN_LEN + rng.below(MAX_LEN - MIN_LEN + 1);
        let mut out = Vec::with_capacity(n);
        fill(&self.core, 0, rng, &mut out);
        while out.len() < n {
            let room = n - out.len();
            let fitting: Vec<&Vec<CompiledSlot>> = self.chunks.iter().filter(|c| c.len() <= room).collect();
            fill(fitting[rng.below(fitting.len())], 0, rng, &mut out);
        }
        (out, n)
    }

    fn style_sentence(&self, rng: &mut SeededRng) -> (Vec<usize>, usize) {
        let style = usize::from(rng.bernoulli(0.5));
        let mut out = Vec::new();
        fill(&self.styled[rng.below(self.styled.len())], style, rng, &mut out);
        (out, style)
    }
}

/// Generates `size` labeled sentences for a text task and assigns splits.
pub fn generate_corpus(task: TaskKind, size: usize, val_fraction: f64, test_fraction: f64, rng: &mut SeededRng) -> Result<Corpus> {
    if !task.uses_text() {
        return Err(Error::invalid("generate_corpus", format!("task {} has no corpus", task.name())));
    }
    let vocab = Vocab::lexicon();
    let grammar = Grammar::build(&vocab)?;
    let mut sentences: Vec<Sentence> = (0..size)
        .map(|_| {
            let (tokens, label) = match task {
                TaskKind::LengthControl => grammar.length_sentence(rng),
                _ => grammar.style_sentence(rng),
            };
            Sentence { tokens, label, split: Split::Train }
        })
        .collect();

    let mut order: Vec<usize> = (0..size).collect();
    for i in (1..size).rev() {
        order.swap(i, rng.below(i + 1));
    }
    let n_test = (size as f64 * test_fraction).round() as usize;
    let n_val = (size as f64 * val_fraction).round() as usize;
    for (rank, &i) in order.iter().enumerate() {
        sentences[i].split = if rank < n_test {
            Split::Test
        } else if rank < n_test + n_val {
            Split::Val
        } else {
            Split::Train
        };
    }
    Ok(Corpus { task, vocab, sentences })
}

impl Corpus {
    pub fn seqs(&self, split: Split) -> Vec<Vec<usize>> {
        self.sentences.iter().filter(|s| s.split == split).map(|s| s.tokens.clone()).collect()
    }

    pub fn seqs_labeled(&self, split: Split, label: usize) -> Vec<Vec<usize>> {
        self.sentences.iter().filter(|s| s.split == split && s.label == label).map(|s| s.tokens.clone()).collect()
    }

    pub fn labels(&self, split: Split) -> Vec<usize> {
        self.sentences.iter().filter(|s| s.split == split).map(|s| s.label).collect()
    }

    pub fn max_len(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).max().unwrap_or(0)
    }

    /// Tab-separated `split, label, text` with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("split\tlabel\ttext\n");
        for s in &self.sentences {
            out.push_str(&format!("{}\t{}\t{}\n", s.split.name(), s.label, self.vocab.decode(&s.tokens)));
        }
        out
    }

    pub fn from_tsv(task: TaskKind, text: &str) -> Result<Self> {
        let vocab = Vocab::lexicon();
        let mut lines = text.lines();
        if lines.next() != Some("split\tlabel\ttext") {
            return Err(Error::invalid("corpus", "missing header"));
        }
        let sentences = lines
            .map(|line| {
                let mut parts = line.splitn(3, '\t');
                let (Some(split), Some(label), Some(words)) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(Error::invalid("corpus", format!("malformed row {line:?}")));
                };
                let label = label.parse().map_err(|_| Error::invalid("corpus", format!("bad label {label:?}")))?;
                Ok(Sentence { tokens: vocab.encode(words)?, label, split: Split::parse(split)? })
            })
            .collect::<Result<_>>()?;
        Ok(Corpus { task, vocab, sentences })
    }

    /// Git-style blob hash of the serialized corpus: SHA-256 over
    /// `"blob <len>\0" ++ bytes`, hex encoded.
    pub fn content_hash(&self) -> String {
        blob_hash(self.to_tsv().as_bytes())
    }
}

pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(task: TaskKind, seed: u64, size: usize) -> Corpus {
        generate_corpus(task, size, 0.1, 0.1, &mut SeededRng::new(seed)).unwrap()
    }

    #[test]
    fn same_seed_same_corpus() {
        for task in [TaskKind::LengthControl, TaskKind::StyleTransfer] {
            assert_eq!(corpus(task, 7, 500), corpus(task, 7, 500));
            assert_ne!(corpus(task, 7, 500), corpus(task, 8, 500));
        }
    }

    #[test]
    fn length_labels_match_lengths() {
        let c = corpus(TaskKind::LengthControl, 1, 3000);
        for s in &c.sentences {
            assert_eq!(s.label, s.tokens.len());
            assert!((MIN_LEN..=MAX_LEN).contains(&s.label));
        }
        for n in MIN_LEN..=MAX_LEN {
            assert!(c.sentences.iter().any(|s| s.label == n), "no sentence of length {n}");
        }
    }

    #[test]
    fn ids_are_dense_and_splits_sized() {
        let c = corpus(TaskKind::StyleTransfer, 3, 1000);
        assert!(c.sentences.iter().flat_map(|s| &s.tokens).all(|&t| t > EOS && t < c.vocab.len()));
        assert_eq!(c.seqs(Split::Test).len(), 100);
        assert_eq!(c.seqs(Split::Val).len(), 100);
        assert_eq!(c.seqs(Split::Train).len(), 800);
    }

    #[test]
    fn style_slot_carries_the_label() {
        let c = corpus(TaskKind::StyleTransfer, 4, 500);
        for s in &c.sentences {
            let words: Vec<&str> = s.tokens.iter().map(|&t| c.vocab.token(t).unwrap()).collect();
            let pos = words.iter().filter(|w| POSITIVE.contains(w)).count();
            let neg = words.iter().filter(|w| NEGATIVE.contains(w)).count();
            assert_eq!((pos, neg), if s.label == 1 { (1, 0) } else { (0, 1) });
        }
    }

    #[test]
    fn out_of_vocabulary_template_rejected() {
        let vocab = Vocab::lexicon();
        assert!(compile(&vocab, &[Word("the"), Word("zeppelin")]).is_err());
        assert!(Grammar::build(&vocab).is_ok());
    }

    #[test]
    fn tsv_round_trip_and_hash() {
        let c = corpus(TaskKind::LengthControl, 5, 200);
        let back = Corpus::from_tsv(c.task, &c.to_tsv()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.content_hash(), c.content_hash());
        // matches `git hash-object` semantics with sha256 in place of sha1
        assert_eq!(blob_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }
}
