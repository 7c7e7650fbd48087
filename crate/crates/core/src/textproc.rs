//! Deterministic text primitives shared by matching and evaluation.
//!
//! Normalization rule: lowercase, split on every maximal run of
//! non-alphanumeric characters (Unicode-aware), keep digits, no stemming.
//! The rule is deliberately simple so that every downstream number is
//! reproducible from the committed stopword list and this file alone.
//!
//! Stopword removal applies to token-set similarity (recall, jaccard) and
//! groundedness. It does NOT apply to ROUGE-L (standard definition) or to
//! direct-answer containment, where stopwords can be content-bearing
//! ("The Who").

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Bumped whenever the normalization rule changes; persisted in index files.
pub const TOKENIZER_VERSION: u32 = 1;

const BUILTIN_STOPWORDS: &str = include_str!("stopwords_en.txt");

/// Ordered normalized tokens of one text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Space-joined form; tokenizing it reproduces the sequence.
    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

/// Unique tokens of a sequence after stopword removal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSet(BTreeSet<String>);

impl TokenSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn intersection_size(&self, other: &TokenSet) -> usize {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.0.iter().filter(|t| large.0.contains(*t)).count()
    }

    pub fn union_size(&self, other: &TokenSet) -> usize {
        self.len() + other.len() - self.intersection_size(other)
    }
}

/// Where a stopword list came from, for provenance in reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopwordSource {
    Builtin,
    File(PathBuf),
}

/// A set of lowercase stopwords plus a content hash for provenance.
#[derive(Debug, Clone)]
pub struct StopwordList {
    words: BTreeSet<String>,
    source: StopwordSource,
}

impl StopwordList {
    /// The committed default English list (~170 entries).
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_STOPWORDS, StopwordSource::Builtin)
            .expect("builtin stopword list is valid")
    }

    /// Loads a list file: one lowercase token per line, `#` lines ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content, StopwordSource::File(path.to_path_buf()))
    }

    fn parse(content: &str, source: StopwordSource) -> Result<Self> {
        let mut words = BTreeSet::new();
        for (idx, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.chars().any(|c| c.is_uppercase()) {
                return Err(Error::InvalidConfig(format!(
                    "stopword list line {}: entry {line:?} is not lowercase",
                    idx + 1
                )));
            }
            words.insert(line.to_string());
        }
        Ok(StopwordList { words, source })
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn source(&self) -> &StopwordSource {
        &self.source
    }

    /// SHA-256 over the sorted entries, one per line. Index files and
    /// reports embed this so numbers are traceable to the exact list.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for word in &self.words {
            hasher.update(word.as_bytes());
            hasher.update(b"\n");
        }
        hasher.finalize().into()
    }

    pub fn content_hash_hex(&self) -> String {
        self.content_hash().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Lowercases and splits on maximal runs of non-alphanumeric characters.
/// Digits are retained; there is no stemming. Empty text yields an empty
/// sequence.
pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenSequence(tokens)
}

/// Unique non-stopword tokens of `seq`.
pub fn token_set(seq: &TokenSequence, stopwords: &StopwordList) -> TokenSet {
    TokenSet(
        seq.tokens()
            .iter()
            .filter(|t| !stopwords.contains(t))
            .cloned()
            .collect(),
    )
}

/// Convenience: tokenize then drop stopwords.
pub fn text_token_set(text: &str, stopwords: &StopwordList) -> TokenSet {
    token_set(&tokenize(text), stopwords)
}

/// |candidate ∩ reference| / |reference|. Errors when the reference is
/// empty; callers must filter degenerate references up front.
pub fn token_recall(candidate: &TokenSet, reference: &TokenSet) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::UndefinedRecall);
    }
    Ok(candidate.intersection_size(reference) as f64 / reference.len() as f64)
}

/// |a ∩ b| / |a ∪ b|. Errors when both sets are empty.
pub fn jaccard(a: &TokenSet, b: &TokenSet) -> Result<f64> {
    let union = a.union_size(b);
    if union == 0 {
        return Err(Error::UndefinedJaccard);
    }
    Ok(a.intersection_size(b) as f64 / union as f64)
}

/// ROUGE-L components. `degenerate` marks an empty candidate or reference,
/// where all three components are reported as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

impl RougeScore {
    fn zero(degenerate: bool) -> Self {
        RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            degenerate,
        }
    }
}

/// Whole-text LCS ROUGE-L: precision = LCS/|candidate|, recall =
/// LCS/|reference|, f1 their harmonic mean (zero when LCS = 0). Stopwords
/// are retained.
pub fn rouge_l(candidate: &TokenSequence, reference: &TokenSequence) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::zero(true);
    }
    let lcs = lcs_len(candidate.tokens(), reference.tokens()) as f64;
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f1 = if lcs == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScore {
        precision,
        recall,
        f1,
        degenerate: false,
    }
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            row[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// True iff `answer` occurs as a contiguous token subsequence of `passage`.
/// Both sides are normalized token sequences, so the check is invariant to
/// punctuation and casing. Errors on an empty answer.
pub fn contains_answer(passage: &TokenSequence, answer: &TokenSequence) -> Result<bool> {
    if answer.is_empty() {
        return Err(Error::EmptyAnswer);
    }
    if answer.len() > passage.len() {
        return Ok(false);
    }
    Ok(passage
        .tokens()
        .windows(answer.len())
        .any(|w| w == answer.tokens()))
}
