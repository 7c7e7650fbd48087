//! First-stage retrieval: a BM25 inverted index over the corpus, plus
//! ingestion of externally produced runs (e.g. dense-retriever output).
//!
//! The index is deterministic: passages are processed in id order and the
//! term map is sorted, so the same corpus produces a byte-identical
//! serialized index regardless of input order or thread count. Documents
//! and queries go through the shared tokenizer with stopwords removed, so
//! document length counts non-stopword tokens.
//!
//! Scoring uses the Okapi BM25 term weight with the positive-clamped IDF
//! `ln(1 + (N - df + 0.5) / (df + 0.5))`, the formulation common to modern
//! search engines; it keeps scores strictly increasing in term frequency
//! for every document frequency.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::corpus::{CandidatePool, Corpus, Dataset, PoolSource, RunFile};
use crate::error::{Error, Result};
use crate::exec;
use crate::textproc::{self, StopwordList};

const INDEX_MAGIC: &[u8; 8] = b"SVRMIDX\0";
const INDEX_VERSION: u32 = 1;

/// Retrieval parameters. Defaults: pool of 100, k1 = 0.9, b = 0.4.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RetrievalConfig {
    pub pool_size: usize,
    pub k1: f64,
    pub b: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            pool_size: 100,
            k1: 0.9,
            b: 0.4,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_size < 1 {
            return Err(Error::InvalidConfig("pool_size must be >= 1".into()));
        }
        if self.k1 < 0.0 {
            return Err(Error::InvalidConfig("k1 must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidConfig("b must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Index into the sorted passage id table.
    pub passage: u32,
    pub tf: u32,
}

/// Immutable BM25 inverted index. Safe for concurrent queries after build.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    k1: f64,
    b: f64,
    tokenizer_version: u32,
    stopword_hash: [u8; 32],
    passage_ids: Vec<String>,
    lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl InvertedIndex {
    /// Builds the index over every passage text. Parallelizes token
    /// counting per passage; the merge runs in passage id order so the
    /// result is thread-count independent.
    pub fn build(corpus: &Corpus, stopwords: &StopwordList, config: &RetrievalConfig) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let passages: Vec<_> = corpus.iter().collect();
        let counted: Vec<(Vec<(String, u32)>, u32)> = exec::map_slice(&passages, |p| {
            let seq = textproc::tokenize(&p.text);
            let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
            let mut length = 0u32;
            for token in seq.tokens() {
                if stopwords.contains(token) {
                    continue;
                }
                length += 1;
                *counts.entry(token).or_insert(0) += 1;
            }
            (
                counts
                    .into_iter()
                    .map(|(t, c)| (t.to_string(), c))
                    .collect(),
                length,
            )
        });

        let mut passage_ids = Vec::with_capacity(passages.len());
        let mut lengths = Vec::with_capacity(passages.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (idx, (passage, (counts, length))) in passages.iter().zip(counted).enumerate() {
            passage_ids.push(passage.id.clone());
            lengths.push(length);
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting {
                    passage: idx as u32,
                    tf,
                });
            }
        }
        Ok(InvertedIndex {
            k1: config.k1,
            b: config.b,
            tokenizer_version: textproc::TOKENIZER_VERSION,
            stopword_hash: stopwords.content_hash(),
            passage_ids,
            lengths,
            postings,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn average_length(&self) -> f64 {
        let total: u64 = self.lengths.iter().map(|&l| l as u64).sum();
        total as f64 / self.lengths.len() as f64
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn stopword_hash(&self) -> &[u8; 32] {
        &self.stopword_hash
    }

    pub fn posting_list(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn length_of(&self, passage_id: &str) -> Option<u32> {
        self.passage_ids
            .binary_search_by(|id| id.as_str().cmp(passage_id))
            .ok()
            .map(|idx| self.lengths[idx])
    }

    /// Top `pool_size` passages for a question by BM25 score, descending,
    /// ties by passage id. A question with no indexable tokens yields an
    /// empty pool with a warning. Only passages containing at least one
    /// query term are scored.
    pub fn retrieve(
        &self,
        question_id: &str,
        question: &str,
        stopwords: &StopwordList,
        pool_size: usize,
    ) -> CandidatePool {
        // unique terms in sorted order: deterministic accumulation
        let terms: BTreeSet<String> = textproc::tokenize(question)
            .tokens()
            .iter()
            .filter(|t| !stopwords.contains(t))
            .cloned()
            .collect();
        if terms.is_empty() {
            log::warn!("question {question_id:?} has no indexable tokens; empty pool");
            return CandidatePool {
                question_id: question_id.to_string(),
                entries: Vec::new(),
                source: PoolSource::BuiltinBm25,
            };
        }
        let n = self.doc_count() as f64;
        let avgdl = self.average_length();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let df = postings.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for posting in postings {
                let dl = self.lengths[posting.passage as usize] as f64;
                let tf = posting.tf as f64;
                let norm = tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * dl / avgdl));
                *scores.entry(posting.passage).or_insert(0.0) += idf * norm;
            }
        }
        let mut entries: Vec<(String, f64)> = scores
            .into_iter()
            .map(|(idx, score)| (self.passage_ids[idx as usize].clone(), score))
            .collect();
        entries.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        entries.truncate(pool_size);
        CandidatePool {
            question_id: question_id.to_string(),
            entries,
            source: PoolSource::BuiltinBm25,
        }
    }

    /// Serializes to the versioned binary format. Identical indexes
    /// produce identical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        buf
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_u32::<LittleEndian>(INDEX_VERSION)?;
        w.write_f64::<LittleEndian>(self.k1)?;
        w.write_f64::<LittleEndian>(self.b)?;
        w.write_u32::<LittleEndian>(self.tokenizer_version)?;
        w.write_all(&self.stopword_hash)?;
        w.write_u64::<LittleEndian>(self.passage_ids.len() as u64)?;
        for (id, length) in self.passage_ids.iter().zip(&self.lengths) {
            write_str(w, id)?;
            w.write_u32::<LittleEndian>(*length)?;
        }
        w.write_u64::<LittleEndian>(self.postings.len() as u64)?;
        for (term, postings) in &self.postings {
            write_str(w, term)?;
            w.write_u64::<LittleEndian>(postings.len() as u64)?;
            for p in postings {
                w.write_u32::<LittleEndian>(p.passage)?;
                w.write_u32::<LittleEndian>(p.tf)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::corpus::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let fail = |message: &str| Error::IndexFormat {
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != INDEX_MAGIC {
            return Err(fail("bad magic header"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
        if version != INDEX_VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let k1 = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
        let b = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
        let tokenizer_version = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
        if tokenizer_version != textproc::TOKENIZER_VERSION {
            return Err(fail(&format!(
                "tokenizer version {tokenizer_version} does not match this build ({})",
                textproc::TOKENIZER_VERSION
            )));
        }
        let mut stopword_hash = [0u8; 32];
        r.read_exact(&mut stopword_hash).map_err(|e| Error::io(path, e))?;
        let n = r.read_u64::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
        let mut passage_ids = Vec::with_capacity(n);
        let mut lengths = Vec::with_capacity(n);
        for _ in 0..n {
            passage_ids.push(read_str(&mut r).map_err(|e| Error::io(path, e))?);
            lengths.push(r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?);
        }
        let terms = r.read_u64::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..terms {
            let term = read_str(&mut r).map_err(|e| Error::io(path, e))?;
            let len = r.read_u64::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let passage = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
                let tf = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
                list.push(Posting { passage, tf });
            }
            postings.insert(term, list);
        }
        Ok(InvertedIndex {
            k1,
            b,
            tokenizer_version,
            stopword_hash,
            passage_ids,
            lengths,
            postings,
        })
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> std::io::Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// Helper mirroring [`InvertedIndex::save`]'s "up to date" check: true when
/// `path` already holds exactly these bytes.
pub fn index_file_up_to_date(path: &Path, index: &InvertedIndex) -> bool {
    match std::fs::read(path) {
        Ok(existing) => existing == index.to_bytes(),
        Err(_) => false,
    }
}

/// Converts an externally produced run into candidate pools, truncated to
/// `pool_size`. Scores must be non-increasing within each question; pools
/// for questions missing from the dataset are kept with a warning so
/// evaluation can still use them.
pub fn ingest_run(run: &RunFile, dataset: &Dataset, pool_size: usize) -> Result<Vec<CandidatePool>> {
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: HashMap<&str, Vec<(&str, u32, f64)>> = HashMap::new();
    for entry in &run.entries {
        let slot = grouped.entry(&entry.question_id).or_insert_with(|| {
            order.push(&entry.question_id);
            Vec::new()
        });
        slot.push((&entry.passage_id, entry.rank, entry.score));
    }

    let mut pools = Vec::with_capacity(order.len());
    for qid in order {
        let mut entries = grouped.remove(qid).expect("grouped by construction");
        entries.sort_by_key(|(_, rank, _)| *rank);
        for pair in entries.windows(2) {
            if pair[1].2 > pair[0].2 {
                return Err(Error::RankScoreInconsistency {
                    question_id: qid.to_string(),
                    rank: pair[1].1,
                });
            }
        }
        if !dataset.contains(qid) {
            log::warn!("run question {qid:?} is not in the dataset; pool kept");
        }
        if entries.len() < pool_size {
            log::warn!(
                "question {qid:?}: run has {} entries, fewer than pool_size {pool_size}",
                entries.len()
            );
        }
        entries.truncate(pool_size);
        let pool = CandidatePool::new(
            qid,
            entries
                .into_iter()
                .map(|(pid, _, score)| (pid.to_string(), score))
                .collect(),
            PoolSource::IngestedRun,
        )?;
        pools.push(pool);
    }
    Ok(pools)
}
