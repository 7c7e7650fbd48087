//! Data model and persistence for corpora, QA datasets, retrieval runs,
//! and generated answers.
//!
//! Every persisted format is line-delimited JSON (one object per line,
//! UTF-8): streamable at corpus scale and diff-friendly. Loaded corpora and
//! datasets are immutable and safe to share across threads.

use std::collections::btree_map;
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One corpus unit: a passage of a source page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    /// Unambiguous key of the source page (e.g. a Wikipedia page title);
    /// first-class because Wikipage recall needs it.
    pub page_id: String,
    pub title: String,
    pub text: String,
}

/// A follow-up question of a conversation, stored on the first-turn
/// instance because follow-up answer recall is evaluated against the first
/// question's retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Followup {
    pub turn_index: u32,
    pub question: String,
    pub answers: Vec<String>,
}

/// A question with its weak-supervision signals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaInstance {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub long_form_answers: Vec<String>,
    #[serde(default)]
    pub direct_answers: Vec<String>,
    #[serde(default)]
    pub gold_page_ids: Vec<String>,
    #[serde(default)]
    pub followups: Vec<Followup>,
}

impl QaInstance {
    fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() {
            return Err(Error::InvalidInstance {
                id: self.id.clone(),
                message: "empty question".into(),
            });
        }
        let mut prev = 1u32; // follow-ups start at turn 2
        for f in &self.followups {
            if f.turn_index <= prev {
                return Err(Error::InvalidInstance {
                    id: self.id.clone(),
                    message: format!(
                        "non-increasing turn_index: {} after {}",
                        f.turn_index, prev
                    ),
                });
            }
            prev = f.turn_index;
        }
        Ok(())
    }
}

/// An answer produced by a generation system, for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedAnswer {
    pub question_id: String,
    pub text: String,
    #[serde(default)]
    pub provenance: Option<String>,
    /// Empty text is only legal when explicitly flagged.
    #[serde(default)]
    pub degenerate: bool,
}

/// Immutable id → passage map. Iteration is in id order, which makes every
/// derived artifact independent of input file order.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    passages: BTreeMap<String, Passage>,
}

impl Corpus {
    pub fn from_passages(passages: impl IntoIterator<Item = Passage>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for p in passages {
            validate_passage(&p)?;
            if map.insert(p.id.clone(), p).is_some() {
                return Err(Error::InvalidConfig("duplicate passage id".into()));
            }
        }
        Ok(Corpus { passages: map })
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.passages.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.passages.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn iter(&self) -> btree_map::Values<'_, String, Passage> {
        self.passages.values()
    }
}

fn validate_passage(p: &Passage) -> Result<()> {
    if p.id.is_empty() || p.page_id.is_empty() || p.text.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "passage {:?}: id, page_id and text must be non-empty",
            p.id
        )));
    }
    Ok(())
}

/// Ordered list of QA instances with unique ids.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    instances: Vec<QaInstance>,
    by_id: HashMap<String, usize>,
}

impl Dataset {
    pub fn from_instances(instances: Vec<QaInstance>) -> Result<Self> {
        let mut by_id = HashMap::new();
        for (idx, inst) in instances.iter().enumerate() {
            inst.validate()?;
            if by_id.insert(inst.id.clone(), idx).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate instance id {:?}",
                    inst.id
                )));
            }
        }
        Ok(Dataset { instances, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&QaInstance> {
        self.by_id.get(id).map(|&idx| &self.instances[idx])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, QaInstance> {
        self.instances.iter()
    }
}

/// Where a candidate pool came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    BuiltinBm25,
    IngestedRun,
}

impl std::fmt::Display for PoolSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolSource::BuiltinBm25 => write!(f, "builtin_bm25"),
            PoolSource::IngestedRun => write!(f, "ingested_run"),
        }
    }
}

/// Ranked candidate passages for one question. Entries are strictly
/// descending by score with ties broken by passage id; construction
/// enforces this.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub question_id: String,
    /// (passage_id, retrieval_score), best first.
    pub entries: Vec<(String, f64)>,
    pub source: PoolSource,
}

impl CandidatePool {
    /// Builds a pool from scored candidates, sorting by descending score
    /// with ties by ascending passage id. Errors on duplicate passage ids.
    pub fn new(
        question_id: impl Into<String>,
        mut entries: Vec<(String, f64)>,
        source: PoolSource,
    ) -> Result<Self> {
        entries.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        let mut seen = std::collections::HashSet::new();
        for (id, _) in &entries {
            if !seen.insert(id) {
                return Err(Error::InvalidConfig(format!(
                    "pool contains duplicate passage id {id:?}"
                )));
            }
        }
        Ok(CandidatePool {
            question_id: question_id.into(),
            entries,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn passage_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    /// 0-based position of a passage in the pool, best first.
    pub fn rank_of(&self, passage_id: &str) -> Option<usize> {
        self.entries.iter().position(|(id, _)| id == passage_id)
    }
}

/// One line of a run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub question_id: String,
    pub passage_id: String,
    pub rank: u32,
    pub score: f64,
}

/// Per-question ranked lists, persisted one entry per line. Ranks start at
/// 1 and are contiguous per question.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunFile {
    pub entries: Vec<RunEntry>,
}

impl RunFile {
    pub fn new(entries: Vec<RunEntry>) -> Result<Self> {
        let run = RunFile { entries };
        run.validate_ranks()?;
        Ok(run)
    }

    fn validate_ranks(&self) -> Result<()> {
        let mut next_rank: HashMap<&str, u32> = HashMap::new();
        for e in &self.entries {
            let expected = next_rank.entry(&e.question_id).or_insert(1);
            if e.rank != *expected {
                return Err(Error::RankGap {
                    question_id: e.question_id.clone(),
                    expected: *expected,
                    found: e.rank,
                });
            }
            *expected += 1;
        }
        Ok(())
    }

    /// Question ids in order of first appearance.
    pub fn question_ids(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.question_id.as_str()))
            .map(|e| e.question_id.as_str())
            .collect()
    }

    /// Entries of one question, in rank order.
    pub fn entries_for(&self, question_id: &str) -> Vec<&RunEntry> {
        self.entries
            .iter()
            .filter(|e| e.question_id == question_id)
            .collect()
    }

    /// Maximum depth across questions (0 for an empty run).
    pub fn max_depth(&self) -> u32 {
        self.entries.iter().map(|e| e.rank).max().unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// Line-delimited JSON IO
// ---------------------------------------------------------------------------

/// Reads one JSON record per line, reporting 1-based line numbers on parse
/// failure. Blank lines are rejected (they hide diff mistakes).
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            return Err(Error::malformed(path, line_no, "blank line"));
        }
        let record: T = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, line_no, e.to_string()))?;
        records.push((line_no, record));
    }
    Ok(records)
}

/// Writes records as one JSON object per line, atomically (temp + rename).
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for record in records {
        serde_json::to_writer(&mut buf, record)
            .map_err(|e| Error::malformed(path, 0, e.to_string()))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Writes `bytes` to `path` via a sibling temp file and rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    {
        let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads a corpus file ({id, page_id, title, text} per line). Fails fast on
/// duplicate ids, naming both lines. An empty file loads as an empty corpus
/// with a warning.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let records: Vec<(usize, Passage)> = read_jsonl(path)?;
    if records.is_empty() {
        log::warn!("corpus file {} is empty", path.display());
    }
    let mut first_line: HashMap<String, usize> = HashMap::new();
    let mut map = BTreeMap::new();
    for (line, passage) in records {
        validate_passage(&passage)
            .map_err(|e| Error::malformed(path, line, e.to_string()))?;
        if let Some(&first) = first_line.get(&passage.id) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                id: passage.id,
                first_line: first,
                second_line: line,
            });
        }
        first_line.insert(passage.id.clone(), line);
        map.insert(passage.id.clone(), passage);
    }
    Ok(Corpus { passages: map })
}

/// Loads a dataset file; validates instance invariants including follow-up
/// turn ordering.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let records: Vec<(usize, QaInstance)> = read_jsonl(path)?;
    if records.is_empty() {
        log::warn!("dataset file {} is empty", path.display());
    }
    let mut first_line: HashMap<String, usize> = HashMap::new();
    let mut instances = Vec::with_capacity(records.len());
    for (line, inst) in records {
        inst.validate()
            .map_err(|e| Error::malformed(path, line, e.to_string()))?;
        if let Some(&first) = first_line.get(&inst.id) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                id: inst.id,
                first_line: first,
                second_line: line,
            });
        }
        first_line.insert(inst.id.clone(), line);
        instances.push(inst);
    }
    Dataset::from_instances(instances)
}

/// Loads a run file and validates per-question rank contiguity. Passage ids
/// are NOT resolved against a corpus here; evaluation warns about unknown
/// ids instead, since corpora may be filtered.
pub fn load_run(path: &Path) -> Result<RunFile> {
    let records: Vec<(usize, RunEntry)> = read_jsonl(path)?;
    RunFile::new(records.into_iter().map(|(_, e)| e).collect())
}

pub fn write_run(path: &Path, run: &RunFile) -> Result<()> {
    run.validate_ranks()?;
    write_jsonl(path, &run.entries)
}

/// Loads generated answers; empty text requires the degenerate flag.
pub fn load_generated_answers(path: &Path) -> Result<Vec<GeneratedAnswer>> {
    let records: Vec<(usize, GeneratedAnswer)> = read_jsonl(path)?;
    let mut answers = Vec::with_capacity(records.len());
    for (line, ans) in records {
        if ans.text.is_empty() && !ans.degenerate {
            return Err(Error::malformed(
                path,
                line,
                format!(
                    "generated answer for {:?} has empty text without degenerate flag",
                    ans.question_id
                ),
            ));
        }
        answers.push(ans);
    }
    Ok(answers)
}
