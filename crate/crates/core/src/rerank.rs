//! Candidate-pool re-ranking: scores every pool passage with a pluggable
//! scorer and emits a depth-k run for evaluation.
//!
//! The scorer abstraction admits both remote scoring services and
//! in-process matchers, so a lexical re-ranker runs fully offline. A
//! question whose scorer calls keep failing is recorded in the run
//! metadata and excluded from the run rather than silently zero-filled,
//! which would bias recall downward.

use serde::{Deserialize, Serialize};

use crate::corpus::{CandidatePool, Corpus, RunEntry, RunFile};
use crate::error::{Error, Result};
use crate::exec;
use crate::services::{PairScoringClient, ScorerPair};
use crate::textproc::StopwordList;

/// Scores one question's (title, text) pairs; higher is more relevant.
pub trait PoolScorer: Send + Sync {
    fn name(&self) -> String;

    fn score(&self, question: &str, passages: &[(&str, &str)]) -> Result<Vec<f64>>;
}

/// In-process lexical scorer: token recall of each passage against the
/// question. Runs without any service.
pub struct LexicalScorer<'a> {
    pub stopwords: &'a StopwordList,
}

impl PoolScorer for LexicalScorer<'_> {
    fn name(&self) -> String {
        "lexical_question_recall".into()
    }

    fn score(&self, question: &str, passages: &[(&str, &str)]) -> Result<Vec<f64>> {
        let reference = crate::textproc::text_token_set(question, self.stopwords);
        passages
            .iter()
            .map(|(_, text)| {
                if reference.is_empty() {
                    Ok(0.0)
                } else {
                    crate::textproc::token_recall(
                        &crate::textproc::text_token_set(text, self.stopwords),
                        &reference,
                    )
                }
            })
            .collect()
    }
}

/// Remote scorer speaking the pair-scoring service contract, batched.
pub struct ServiceScorer<C: PairScoringClient> {
    pub client: C,
    pub batch_size: usize,
    pub identity: String,
}

impl<C: PairScoringClient> PoolScorer for ServiceScorer<C> {
    fn name(&self) -> String {
        self.identity.clone()
    }

    fn score(&self, question: &str, passages: &[(&str, &str)]) -> Result<Vec<f64>> {
        let pairs: Vec<ScorerPair> = passages
            .iter()
            .map(|(title, text)| ScorerPair {
                question: question.to_string(),
                passage_title: title.to_string(),
                passage_text: text.to_string(),
            })
            .collect();
        let mut scores = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.batch_size.max(1)) {
            scores.extend(self.client.score(chunk)?);
        }
        Ok(scores)
    }
}

/// Run metadata persisted next to a re-ranked run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankMetadata {
    pub scorer: String,
    pub pool_source: String,
    pub k: usize,
    /// Questions whose scorer calls failed; excluded from the run.
    pub failed_questions: Vec<String>,
}

/// A depth-k run plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankedRun {
    pub run: RunFile,
    pub metadata: RerankMetadata,
}

/// Scores all pool passages per question, sorts descending (ties keep the
/// original pool order) and truncates to k. Questions run in parallel;
/// assembly is in pool order, so output is thread-count independent.
pub fn rerank_pools<Q>(
    pools: &[CandidatePool],
    corpus: &Corpus,
    questions: &Q,
    scorer: &dyn PoolScorer,
    k: usize,
) -> Result<RerankedRun>
where
    Q: Fn(&str) -> Option<String> + Sync,
{
    if pools.is_empty() {
        return Err(Error::InvalidConfig("no candidate pools to rerank".into()));
    }
    let pool_source = pools
        .first()
        .map(|p| p.source.to_string())
        .unwrap_or_default();

    let per_question: Vec<Result<Vec<RunEntry>>> = exec::map_slice(pools, |pool| {
        let question = questions(&pool.question_id).ok_or_else(|| Error::InvalidConfig(
            format!("no question text for pool {:?}", pool.question_id),
        ))?;
        let passages: Vec<(&str, &str)> = pool
            .passage_ids()
            .map(|pid| {
                corpus
                    .get(pid)
                    .map(|p| (p.title.as_str(), p.text.as_str()))
                    .ok_or_else(|| Error::UnknownPassage {
                        passage_id: pid.to_string(),
                    })
            })
            .collect::<Result<_>>()?;
        let scores = scorer.score(&question, &passages)?;
        if scores.len() != passages.len() {
            return Err(Error::ServiceContract(format!(
                "scorer returned {} scores for {} passages",
                scores.len(),
                passages.len()
            )));
        }
        // stable sort on score only: ties keep pool order
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        Ok(order
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(rank, idx)| RunEntry {
                question_id: pool.question_id.clone(),
                passage_id: pool.entries[idx].0.clone(),
                rank: rank as u32 + 1,
                score: scores[idx],
            })
            .collect())
    });

    let mut entries = Vec::new();
    let mut failed = Vec::new();
    for (pool, outcome) in pools.iter().zip(per_question) {
        match outcome {
            Ok(mut question_entries) => entries.append(&mut question_entries),
            Err(e) => {
                log::warn!("rerank failed for question {:?}: {e}", pool.question_id);
                failed.push(pool.question_id.clone());
            }
        }
    }
    Ok(RerankedRun {
        run: RunFile::new(entries)?,
        metadata: RerankMetadata {
            scorer: scorer.name(),
            pool_source,
            k,
            failed_questions: failed,
        },
    })
}

/// First-stage baseline: pool order truncated to k, no scoring.
pub fn passthrough_topk(pools: &[CandidatePool], k: usize) -> Result<RerankedRun> {
    let mut entries = Vec::new();
    for pool in pools {
        for (idx, (pid, score)) in pool.entries.iter().take(k).enumerate() {
            entries.push(RunEntry {
                question_id: pool.question_id.clone(),
                passage_id: pid.clone(),
                rank: idx as u32 + 1,
                score: *score,
            });
        }
    }
    Ok(RerankedRun {
        run: RunFile::new(entries)?,
        metadata: RerankMetadata {
            scorer: "passthrough".into(),
            pool_source: pools
                .first()
                .map(|p| p.source.to_string())
                .unwrap_or_default(),
            k,
            failed_questions: vec![],
        },
    })
}

/// Re-reads a run file as pools for chained re-ranking or evaluation.
pub fn pools_from_run(run: &RunFile, source: crate::corpus::PoolSource) -> Vec<CandidatePool> {
    run.question_ids()
        .into_iter()
        .map(|qid| CandidatePool {
            question_id: qid.to_string(),
            entries: run
                .entries_for(qid)
                .into_iter()
                .map(|e| (e.passage_id.clone(), e.score))
                .collect(),
            source,
        })
        .collect()
}
