//! Silver-passage selection and training-data emission.
//!
//! Per question, up to `k` positives are chosen from the candidate pool by
//! combining two weak-supervision signals: every direct answer that
//! appears verbatim in some pool passage forces its best-matching
//! container into the selection, and remaining slots fill with the
//! passages matching the long-form answer best. Negatives are sampled
//! uniformly from the rest of the pool. Baseline selectors using only one
//! signal ([`select_da_only`], [`select_lfa_only`]) share the machinery.
//!
//! Tie-breaking everywhere is: match score, then first-stage retrieval
//! rank, then passage id. Negative sampling is seeded per
//! `(global seed, question id)`, so adding or removing questions never
//! perturbs another question's sample.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CandidatePool, Corpus, Dataset, QaInstance};
use crate::error::{Error, Result};
use crate::matchers::{self, MatchScore, MatchStrategy, MatcherContext};
use crate::sampling;
use crate::textproc::{self, StopwordList};

/// How multi-LFA instances contribute a matching target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LfaPolicy {
    /// Match against the first LFA only (train splits carry one).
    First,
    /// Match against the concatenation of all LFAs.
    Concatenate,
    /// Score against each LFA and keep each candidate's best score.
    BestPerCandidate,
}

impl std::str::FromStr for LfaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(LfaPolicy::First),
            "concatenate" => Ok(LfaPolicy::Concatenate),
            "best_per_candidate" => Ok(LfaPolicy::BestPerCandidate),
            other => Err(Error::InvalidConfig(format!("unknown lfa_policy {other:?}"))),
        }
    }
}

/// Mining parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilverConfig {
    /// Number of silver passages per question.
    pub k: usize,
    pub pool_size: usize,
    pub negatives_per_question: usize,
    pub positives_per_question: usize,
    pub strategy: MatchStrategy,
    pub seed: u64,
    pub lfa_policy: LfaPolicy,
}

impl Default for SilverConfig {
    fn default() -> Self {
        SilverConfig {
            k: 5,
            pool_size: 100,
            negatives_per_question: 50,
            positives_per_question: 5,
            strategy: MatchStrategy::LexicalRecall,
            seed: 0,
            lfa_policy: LfaPolicy::First,
        }
    }
}

impl SilverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.positives_per_question
            && self.positives_per_question <= self.k
            && self.k <= self.pool_size)
        {
            return Err(Error::InvalidConfig(
                "need 1 <= positives_per_question <= k <= pool_size".into(),
            ));
        }
        if self.negatives_per_question < 1 {
            return Err(Error::InvalidConfig(
                "negatives_per_question must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-question mining result.
#[derive(Debug, Clone, PartialEq)]
pub struct SilverSelection {
    pub question_id: String,
    /// Up to k passage ids, best score first.
    pub positives: Vec<String>,
    /// Sampled non-positive pool passages.
    pub negatives: Vec<String>,
    /// Per-candidate match score over the whole pool.
    pub scores: BTreeMap<String, f64>,
    pub strategy: MatchStrategy,
    /// Direct answer → covering positive, or None when no selected
    /// positive contains it.
    pub da_coverage: BTreeMap<String, Option<String>>,
}

/// Persisted form of a [`SilverSelection`], one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilverRecord {
    pub question_id: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub da_coverage: BTreeMap<String, Option<String>>,
    pub strategy: String,
    pub seed: u64,
    pub scores: BTreeMap<String, f64>,
}

impl SilverRecord {
    pub fn from_selection(selection: &SilverSelection, seed: u64) -> Self {
        SilverRecord {
            question_id: selection.question_id.clone(),
            positives: selection.positives.clone(),
            negatives: selection.negatives.clone(),
            da_coverage: selection.da_coverage.clone(),
            strategy: selection.strategy.to_string(),
            seed,
            scores: selection.scores.clone(),
        }
    }
}

/// One emitted training example for an external cross-encoder trainer.
/// Model-side token assembly ("[CLS] question [SEP] title [SEP] text") is
/// the trainer's job; this file carries the raw fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub question: String,
    pub passage_title: String,
    pub passage_text: String,
    pub label: u8,
}

/// Resolves the matching target(s) for an instance under a policy.
/// Empty when the instance has no long-form answers.
pub fn lfa_targets(instance: &QaInstance, policy: LfaPolicy) -> Vec<String> {
    match policy {
        LfaPolicy::First => instance
            .long_form_answers
            .first()
            .cloned()
            .into_iter()
            .collect(),
        LfaPolicy::Concatenate => {
            if instance.long_form_answers.is_empty() {
                vec![]
            } else {
                vec![instance.long_form_answers.join(" ")]
            }
        }
        LfaPolicy::BestPerCandidate => instance.long_form_answers.clone(),
    }
}

/// Computes per-candidate LFA match scores for one instance under the
/// configured strategy and LFA policy (element-wise max across targets for
/// the best-per-candidate policy).
pub fn compute_lfa_scores(
    pool: &CandidatePool,
    corpus: &Corpus,
    instance: &QaInstance,
    config: &SilverConfig,
    ctx: &MatcherContext<'_>,
) -> Result<Vec<MatchScore>> {
    let targets = lfa_targets(instance, config.lfa_policy);
    if targets.is_empty() {
        return Err(Error::MissingLfa {
            question_id: instance.id.clone(),
        });
    }
    let mut folded: Option<Vec<MatchScore>> = None;
    for target in &targets {
        let scores = matchers::score_pool(
            pool,
            corpus,
            &instance.question,
            target,
            config.strategy,
            ctx,
        )?;
        folded = Some(match folded {
            None => scores,
            Some(mut acc) => {
                for (slot, score) in acc.iter_mut().zip(scores) {
                    debug_assert_eq!(slot.passage_id, score.passage_id);
                    if score.score > slot.score {
                        slot.score = score.score;
                    }
                }
                acc
            }
        });
    }
    Ok(folded.expect("targets checked non-empty"))
}

struct RankedPool<'a> {
    score_of: HashMap<&'a str, f64>,
    rank_of: HashMap<&'a str, usize>,
}

impl<'a> RankedPool<'a> {
    fn build(pool: &'a CandidatePool, scores: &'a [MatchScore]) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::EmptyPool {
                question_id: pool.question_id.clone(),
            });
        }
        let mut score_of = HashMap::with_capacity(scores.len());
        for s in scores {
            score_of.insert(s.passage_id.as_str(), s.score);
        }
        let mut rank_of = HashMap::with_capacity(pool.len());
        for (rank, pid) in pool.passage_ids().enumerate() {
            if !score_of.contains_key(pid) {
                return Err(Error::InvalidConfig(format!(
                    "scores do not cover pool passage {pid:?}"
                )));
            }
            rank_of.insert(pid, rank);
        }
        Ok(RankedPool { score_of, rank_of })
    }

    /// Sort key: score descending, then retrieval rank ascending, then
    /// passage id ascending.
    fn better(&self, a: &str, b: &str) -> std::cmp::Ordering {
        let sa = self.score_of[a];
        let sb = self.score_of[b];
        sb.partial_cmp(&sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| self.rank_of[a].cmp(&self.rank_of[b]))
            .then_with(|| a.cmp(b))
    }

    fn sorted(&self, ids: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
        let mut v: Vec<&str> = ids.collect();
        v.sort_by(|a, b| self.better(a, b));
        v
    }
}

fn sample_negatives(
    pool: &CandidatePool,
    positives: &[String],
    config: &SilverConfig,
    question_id: &str,
) -> Vec<String> {
    let positive_set: BTreeSet<&str> = positives.iter().map(String::as_str).collect();
    let remaining: Vec<&str> = pool
        .passage_ids()
        .filter(|pid| !positive_set.contains(pid))
        .collect();
    if remaining.len() < config.negatives_per_question {
        log::warn!(
            "question {question_id:?}: only {} non-positive passages for {} requested negatives",
            remaining.len(),
            config.negatives_per_question
        );
    }
    sampling::sample_without_replacement(
        &remaining,
        config.negatives_per_question,
        config.seed,
        &format!("neg:{question_id}"),
    )
    .into_iter()
    .map(str::to_string)
    .collect()
}

/// Containment map: direct answer → pool passages containing it verbatim
/// (token-contiguous). Answers that normalize to nothing map to empty.
fn da_containers<'a>(
    pool: &'a CandidatePool,
    corpus: &Corpus,
    instance: &QaInstance,
) -> Result<Vec<(String, Vec<&'a str>)>> {
    let passage_tokens: HashMap<&str, textproc::TokenSequence> = pool
        .passage_ids()
        .map(|pid| {
            let p = corpus.get(pid).ok_or_else(|| Error::UnknownPassage {
                passage_id: pid.to_string(),
            })?;
            Ok((pid, textproc::tokenize(&p.text)))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(instance.direct_answers.len());
    for da in &instance.direct_answers {
        let Some(answer) = matchers::answer_tokens(da) else {
            log::warn!(
                "question {:?}: direct answer {da:?} has no tokens; not coverable",
                instance.id
            );
            out.push((da.clone(), vec![]));
            continue;
        };
        let mut containers = Vec::new();
        for pid in pool.passage_ids() {
            if textproc::contains_answer(&passage_tokens[pid], &answer)? {
                containers.push(pid);
            }
        }
        out.push((da.clone(), containers));
    }
    Ok(out)
}

/// Post-selection coverage: each direct answer maps to the best selected
/// positive containing it (selection order is already best-first), or None.
fn coverage_against_positives(
    containers: &[(String, Vec<&str>)],
    positives: &[String],
) -> BTreeMap<String, Option<String>> {
    let mut coverage = BTreeMap::new();
    for (da, pids) in containers {
        let containing: BTreeSet<&str> = pids.iter().copied().collect();
        let covered = positives
            .iter()
            .find(|p| containing.contains(p.as_str()))
            .cloned();
        coverage.insert(da.clone(), covered);
    }
    coverage
}

fn scores_as_map(scores: &[MatchScore]) -> BTreeMap<String, f64> {
    scores
        .iter()
        .map(|s| (s.passage_id.clone(), s.score))
        .collect()
}

/// Combined selection: direct answers force their best-matching containers
/// into the positives, the rest of the k slots fill by LFA match score.
///
/// 1. Per direct answer (dataset order), the containing passage with the
///    highest LFA score is forced; one passage may cover several answers.
/// 2. If distinct forced passages exceed k, the k best by LFA score are
///    kept and the dropped answers become uncovered.
/// 3. Remaining slots fill with non-forced passages by descending LFA
///    score.
/// 4. Negatives are sampled uniformly without replacement from the
///    non-positive pool remainder; fewer than requested is a warning.
pub fn select_silver(
    pool: &CandidatePool,
    instance: &QaInstance,
    scores: &[MatchScore],
    corpus: &Corpus,
    config: &SilverConfig,
) -> Result<SilverSelection> {
    config.validate()?;
    if lfa_targets(instance, config.lfa_policy).is_empty() {
        return Err(Error::MissingLfa {
            question_id: instance.id.clone(),
        });
    }
    let ranked = RankedPool::build(pool, scores)?;
    let containers = da_containers(pool, corpus, instance)?;

    let mut forced: Vec<&str> = Vec::new();
    for (_, pids) in &containers {
        if let Some(best) = ranked.sorted(pids.iter().copied()).first() {
            if !forced.contains(best) {
                forced.push(best);
            }
        }
    }

    let kept_forced: Vec<&str> = if forced.len() > config.k {
        ranked
            .sorted(forced.iter().copied())
            .into_iter()
            .take(config.k)
            .collect()
    } else {
        forced.clone()
    };

    let kept_set: BTreeSet<&str> = kept_forced.iter().copied().collect();
    let fill = ranked
        .sorted(pool.passage_ids().filter(|pid| !kept_set.contains(pid)))
        .into_iter()
        .take(config.k - kept_forced.len());
    let positives: Vec<String> = ranked
        .sorted(kept_forced.iter().copied().chain(fill))
        .into_iter()
        .map(str::to_string)
        .collect();

    let negatives = sample_negatives(pool, &positives, config, &instance.id);
    Ok(SilverSelection {
        question_id: instance.id.clone(),
        da_coverage: coverage_against_positives(&containers, &positives),
        positives,
        negatives,
        scores: scores_as_map(scores),
        strategy: scores.first().map(|s| s.strategy).unwrap_or(config.strategy),
    })
}

/// Direct-answer-only baseline: positives are the answer-containing
/// passages ordered by token recall with the question, truncated to k.
pub fn select_da_only(
    pool: &CandidatePool,
    instance: &QaInstance,
    corpus: &Corpus,
    stopwords: &StopwordList,
    config: &SilverConfig,
) -> Result<SilverSelection> {
    config.validate()?;
    let scores = matchers::question_recall(pool, corpus, &instance.question, stopwords)?;
    let ranked = RankedPool::build(pool, &scores)?;
    let containers = da_containers(pool, corpus, instance)?;

    let mut matching: Vec<&str> = Vec::new();
    for (_, pids) in &containers {
        for pid in pids {
            if !matching.contains(pid) {
                matching.push(pid);
            }
        }
    }
    if matching.is_empty() {
        log::warn!(
            "question {:?}: no pool passage contains any direct answer",
            instance.id
        );
    }
    let positives: Vec<String> = ranked
        .sorted(matching.into_iter())
        .into_iter()
        .take(config.k)
        .map(str::to_string)
        .collect();

    let negatives = sample_negatives(pool, &positives, config, &instance.id);
    Ok(SilverSelection {
        question_id: instance.id.clone(),
        da_coverage: coverage_against_positives(&containers, &positives),
        positives,
        negatives,
        scores: scores_as_map(&scores),
        strategy: MatchStrategy::LexicalRecall,
    })
}

/// LFA-only baseline: positives are simply the top-k by match score.
pub fn select_lfa_only(
    pool: &CandidatePool,
    instance: &QaInstance,
    scores: &[MatchScore],
    config: &SilverConfig,
) -> Result<SilverSelection> {
    config.validate()?;
    if lfa_targets(instance, config.lfa_policy).is_empty() {
        return Err(Error::MissingLfa {
            question_id: instance.id.clone(),
        });
    }
    let ranked = RankedPool::build(pool, scores)?;
    let positives: Vec<String> = ranked
        .sorted(pool.passage_ids())
        .into_iter()
        .take(config.k)
        .map(str::to_string)
        .collect();
    let negatives = sample_negatives(pool, &positives, config, &instance.id);
    Ok(SilverSelection {
        question_id: instance.id.clone(),
        positives,
        negatives,
        scores: scores_as_map(scores),
        strategy: scores.first().map(|s| s.strategy).unwrap_or(config.strategy),
        da_coverage: BTreeMap::new(),
    })
}

/// Writes training pairs for an external trainer: per question, the top
/// `positives_per_question` positives labeled 1 then the sampled negatives
/// labeled 0, in dataset order. Returns the record count.
pub fn emit_training_data(
    selections: &[SilverSelection],
    dataset: &Dataset,
    corpus: &Corpus,
    config: &SilverConfig,
    path: &Path,
) -> Result<usize> {
    let pairs = build_training_pairs(selections, dataset, corpus, config)?;
    crate::corpus::write_jsonl(path, &pairs)?;
    Ok(pairs.len())
}

/// The records [`emit_training_data`] writes, for in-process use.
pub fn build_training_pairs(
    selections: &[SilverSelection],
    dataset: &Dataset,
    corpus: &Corpus,
    config: &SilverConfig,
) -> Result<Vec<TrainingPair>> {
    let by_question: HashMap<&str, &SilverSelection> = selections
        .iter()
        .map(|s| (s.question_id.as_str(), s))
        .collect();
    let mut pairs = Vec::new();
    for instance in dataset.iter() {
        let Some(selection) = by_question.get(instance.id.as_str()) else {
            continue;
        };
        if selection.positives.len() < config.positives_per_question {
            log::warn!(
                "question {:?}: only {} positives available of {} requested",
                instance.id,
                selection.positives.len(),
                config.positives_per_question
            );
        }
        let mut push = |pid: &str, label: u8| -> Result<()> {
            let passage = corpus.get(pid).ok_or_else(|| Error::UnknownPassage {
                passage_id: pid.to_string(),
            })?;
            pairs.push(TrainingPair {
                question: instance.question.clone(),
                passage_title: passage.title.clone(),
                passage_text: passage.text.clone(),
                label,
            });
            Ok(())
        };
        for pid in selection.positives.iter().take(config.positives_per_question) {
            push(pid, 1)?;
        }
        for pid in &selection.negatives {
            push(pid, 0)?;
        }
    }
    Ok(pairs)
}

pub fn write_silver_records(
    path: &Path,
    selections: &[SilverSelection],
    seed: u64,
) -> Result<()> {
    let records: Vec<SilverRecord> = selections
        .iter()
        .map(|s| SilverRecord::from_selection(s, seed))
        .collect();
    crate::corpus::write_jsonl(path, &records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Passage, PoolSource};

    fn corpus(entries: &[(&str, &str)]) -> Corpus {
        Corpus::from_passages(entries.iter().map(|(id, text)| Passage {
            id: id.to_string(),
            page_id: format!("page-{id}"),
            title: format!("Title {id}"),
            text: text.to_string(),
        }))
        .unwrap()
    }

    fn pool_of(ids: &[&str]) -> CandidatePool {
        CandidatePool::new(
            "q1",
            ids.iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), 100.0 - i as f64))
                .collect(),
            PoolSource::BuiltinBm25,
        )
        .unwrap()
    }

    fn scores_of(pairs: &[(&str, f64)]) -> Vec<MatchScore> {
        pairs
            .iter()
            .map(|(id, score)| MatchScore {
                passage_id: id.to_string(),
                score: *score,
                strategy: MatchStrategy::LexicalRecall,
            })
            .collect()
    }

    fn instance(das: &[&str]) -> QaInstance {
        QaInstance {
            id: "q1".into(),
            question: "who debuted in 2003".into(),
            long_form_answers: vec!["a long form answer".into()],
            direct_answers: das.iter().map(|d| d.to_string()).collect(),
            gold_page_ids: vec![],
            followups: vec![],
        }
    }

    fn config(k: usize) -> SilverConfig {
        SilverConfig {
            k,
            pool_size: 100,
            negatives_per_question: 2,
            positives_per_question: k.max(1),
            seed: 7,
            ..SilverConfig::default()
        }
    }

    #[test]
    fn no_da_match_reduces_to_lfa_ranking() {
        let c = corpus(&[
            ("p1", "alpha"),
            ("p2", "beta"),
            ("p3", "gamma"),
            ("p4", "delta"),
            ("p5", "epsilon"),
        ]);
        let pool = pool_of(&["p1", "p2", "p3", "p4", "p5"]);
        let scores = scores_of(&[("p1", 0.9), ("p2", 0.8), ("p3", 0.7), ("p4", 0.2), ("p5", 0.1)]);
        let sel = select_silver(&pool, &instance(&["zzz absent"]), &scores, &c, &config(3)).unwrap();
        assert_eq!(sel.positives, ["p1", "p2", "p3"]);
        assert_eq!(sel.da_coverage["zzz absent"], None);
    }

    #[test]
    fn forced_container_enters_then_order_is_score_first() {
        // DA "2003" only in p4 (low LFA score); fills are p1, p2.
        let c = corpus(&[
            ("p1", "high match no answer"),
            ("p2", "also high match"),
            ("p3", "medium match"),
            ("p4", "contains the year 2003 here"),
            ("p5", "nothing"),
        ]);
        let pool = pool_of(&["p1", "p2", "p3", "p4", "p5"]);
        let scores = scores_of(&[("p1", 0.9), ("p2", 0.8), ("p3", 0.7), ("p4", 0.2), ("p5", 0.0)]);
        let sel = select_silver(&pool, &instance(&["2003"]), &scores, &c, &config(3)).unwrap();
        assert_eq!(sel.positives, ["p1", "p2", "p4"]);
        assert_eq!(sel.da_coverage["2003"], Some("p4".to_string()));
    }

    #[test]
    fn best_scoring_container_wins_the_forcing() {
        let c = corpus(&[
            ("p1", "no answer"),
            ("p2", "the king is here"),
            ("p3", "another king passage"),
        ]);
        let pool = pool_of(&["p1", "p2", "p3"]);
        let scores = scores_of(&[("p1", 0.9), ("p2", 0.4), ("p3", 0.6)]);
        let sel = select_silver(&pool, &instance(&["king"]), &scores, &c, &config(2)).unwrap();
        // p3 forced (higher LFA score than p2); p1 fills; p2 only via fill
        assert_eq!(sel.positives, ["p1", "p3"]);
        assert_eq!(sel.da_coverage["king"], Some("p3".to_string()));
    }

    #[test]
    fn one_passage_may_cover_multiple_answers() {
        let c = corpus(&[
            ("p1", "kennedy was born in 1917 exactly"),
            ("p2", "irrelevant"),
        ]);
        let pool = pool_of(&["p1", "p2"]);
        let scores = scores_of(&[("p1", 0.5), ("p2", 0.9)]);
        let sel = select_silver(
            &pool,
            &instance(&["kennedy", "1917"]),
            &scores,
            &c,
            &config(2),
        )
        .unwrap();
        assert_eq!(sel.positives, ["p2", "p1"]);
        assert_eq!(sel.da_coverage["kennedy"], Some("p1".to_string()));
        assert_eq!(sel.da_coverage["1917"], Some("p1".to_string()));
    }

    #[test]
    fn forced_overflow_keeps_best_k_and_drops_the_rest() {
        let c = corpus(&[
            ("p1", "answer one"),
            ("p2", "answer two"),
            ("p3", "answer three"),
        ]);
        let pool = pool_of(&["p1", "p2", "p3"]);
        let scores = scores_of(&[("p1", 0.9), ("p2", 0.8), ("p3", 0.1)]);
        let sel = select_silver(
            &pool,
            &instance(&["one", "two", "three"]),
            &scores,
            &c,
            &config(2),
        )
        .unwrap();
        assert_eq!(sel.positives, ["p1", "p2"]);
        assert_eq!(sel.da_coverage["one"], Some("p1".to_string()));
        assert_eq!(sel.da_coverage["two"], Some("p2".to_string()));
        assert_eq!(sel.da_coverage["three"], None);
    }

    #[test]
    fn untokenizable_direct_answer_is_uncoverable() {
        let c = corpus(&[("p1", "text")]);
        let pool = pool_of(&["p1"]);
        let scores = scores_of(&[("p1", 0.5)]);
        let sel = select_silver(&pool, &instance(&["?!"]), &scores, &c, &config(1)).unwrap();
        assert_eq!(sel.da_coverage["?!"], None);
    }

    #[test]
    fn positives_and_negatives_are_disjoint_pool_members() {
        let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let texts: Vec<(String, String)> = ids
            .iter()
            .map(|id| (id.clone(), format!("text of {id}")))
            .collect();
        let refs: Vec<(&str, &str)> = texts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let c = corpus(&refs);
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let pool = pool_of(&id_refs);
        let scores: Vec<MatchScore> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| MatchScore {
                passage_id: id.clone(),
                score: i as f64 / 10.0,
                strategy: MatchStrategy::LexicalRecall,
            })
            .collect();
        let mut cfg = config(3);
        cfg.negatives_per_question = 5;
        let sel = select_silver(&pool, &instance(&[]), &scores, &c, &cfg).unwrap();
        assert_eq!(sel.positives.len(), 3);
        assert_eq!(sel.negatives.len(), 5);
        let pos: BTreeSet<&String> = sel.positives.iter().collect();
        let neg: BTreeSet<&String> = sel.negatives.iter().collect();
        assert!(pos.is_disjoint(&neg));
        for pid in pos.iter().chain(neg.iter()) {
            assert!(pool.rank_of(pid).is_some());
        }
    }

    #[test]
    fn negatives_shrink_with_small_pools() {
        let c = corpus(&[("p1", "a"), ("p2", "b"), ("p3", "c")]);
        let pool = pool_of(&["p1", "p2", "p3"]);
        let scores = scores_of(&[("p1", 0.3), ("p2", 0.2), ("p3", 0.1)]);
        let mut cfg = config(2);
        cfg.negatives_per_question = 50;
        let sel = select_silver(&pool, &instance(&[]), &scores, &c, &cfg).unwrap();
        assert_eq!(sel.negatives.len(), 1);
    }

    #[test]
    fn select_silver_requires_pool_and_lfa() {
        let c = corpus(&[("p1", "a")]);
        let empty_pool = CandidatePool {
            question_id: "q1".into(),
            entries: vec![],
            source: PoolSource::BuiltinBm25,
        };
        assert!(matches!(
            select_silver(&empty_pool, &instance(&[]), &[], &c, &config(1)),
            Err(Error::EmptyPool { .. })
        ));

        let pool = pool_of(&["p1"]);
        let scores = scores_of(&[("p1", 0.5)]);
        let mut no_lfa = instance(&[]);
        no_lfa.long_form_answers.clear();
        assert!(matches!(
            select_silver(&pool, &no_lfa, &scores, &c, &config(1)),
            Err(Error::MissingLfa { .. })
        ));
    }

    #[test]
    fn da_only_orders_by_question_recall() {
        // question tokens: debuted, 2003 (stopwords removed)
        let c = corpus(&[
            ("p1", "debuted in 2003 king story"), // recall 1.0, contains "king"
            ("p2", "a king passage only"),        // recall 0.0, contains "king"
            ("p3", "debuted story king"),         // recall 0.5, contains "king"
            ("p4", "no answer here"),
        ]);
        let pool = pool_of(&["p4", "p2", "p3", "p1"]);
        let sel = select_da_only(
            &pool,
            &instance(&["king"]),
            &c,
            &StopwordList::builtin(),
            &config(2),
        )
        .unwrap();
        assert_eq!(sel.positives, ["p1", "p3"]);
        assert_eq!(sel.da_coverage["king"], Some("p1".to_string()));
    }

    #[test]
    fn da_only_without_matches_yields_empty_positives() {
        let c = corpus(&[("p1", "alpha"), ("p2", "beta")]);
        let pool = pool_of(&["p1", "p2"]);
        let sel = select_da_only(
            &pool,
            &instance(&["absent"]),
            &c,
            &StopwordList::builtin(),
            &config(2),
        )
        .unwrap();
        assert!(sel.positives.is_empty());
        assert!(!sel.negatives.is_empty());
    }

    #[test]
    fn da_only_truncates_to_k() {
        let texts: Vec<(String, String)> = (0..7)
            .map(|i| (format!("p{i}"), format!("king number {i} debuted")))
            .collect();
        let refs: Vec<(&str, &str)> = texts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let c = corpus(&refs);
        let ids: Vec<&str> = texts.iter().map(|(a, _)| a.as_str()).collect();
        let pool = pool_of(&ids);
        let sel = select_da_only(
            &pool,
            &instance(&["king"]),
            &c,
            &StopwordList::builtin(),
            &config(5),
        )
        .unwrap();
        assert_eq!(sel.positives.len(), 5);
    }

    #[test]
    fn lfa_only_selects_top_k_with_rank_tiebreak() {
        // pb sits at pool rank 1, pc at rank 2; equal score on the k-th slot
        let pool = CandidatePool::new(
            "q1",
            vec![("pa".into(), 3.0), ("pb".into(), 2.0), ("pc".into(), 1.0)],
            PoolSource::BuiltinBm25,
        )
        .unwrap();
        let scores = scores_of(&[("pa", 0.9), ("pb", 0.5), ("pc", 0.5)]);
        let sel = select_lfa_only(&pool, &instance(&[]), &scores, &config(2)).unwrap();
        assert_eq!(sel.positives, ["pa", "pb"]);
        assert!(sel.da_coverage.is_empty());
    }

    #[test]
    fn lfa_only_with_k_at_pool_size_sorts_whole_pool() {
        let pool = pool_of(&["p1", "p2", "p3"]);
        let scores = scores_of(&[("p1", 0.1), ("p2", 0.9), ("p3", 0.5)]);
        let mut cfg = config(3);
        cfg.pool_size = 3;
        let sel = select_lfa_only(&pool, &instance(&[]), &scores, &cfg).unwrap();
        assert_eq!(sel.positives, ["p2", "p3", "p1"]);
    }

    #[test]
    fn training_pairs_counts_and_determinism() {
        let texts: Vec<(String, String)> = (0..12)
            .map(|i| (format!("p{i:02}"), format!("passage body {i}")))
            .collect();
        let refs: Vec<(&str, &str)> = texts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let c = corpus(&refs);
        let ids: Vec<&str> = texts.iter().map(|(a, _)| a.as_str()).collect();

        let mut cfg = config(2);
        cfg.negatives_per_question = 5;
        cfg.positives_per_question = 2;

        let dataset = Dataset::from_instances(vec![
            QaInstance {
                id: "q1".into(),
                question: "first question".into(),
                long_form_answers: vec!["answer".into()],
                direct_answers: vec![],
                gold_page_ids: vec![],
                followups: vec![],
            },
            QaInstance {
                id: "q2".into(),
                question: "second question".into(),
                long_form_answers: vec!["answer".into()],
                direct_answers: vec![],
                gold_page_ids: vec![],
                followups: vec![],
            },
        ])
        .unwrap();

        let selections: Vec<SilverSelection> = dataset
            .iter()
            .map(|inst| {
                let mut pool = pool_of(&ids);
                pool.question_id = inst.id.clone();
                let scores: Vec<MatchScore> = ids
                    .iter()
                    .enumerate()
                    .map(|(i, id)| MatchScore {
                        passage_id: id.to_string(),
                        score: (i % 5) as f64,
                        strategy: MatchStrategy::LexicalRecall,
                    })
                    .collect();
                select_lfa_only(&pool, inst, &scores, &cfg).unwrap()
            })
            .collect();

        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("pairs_a.jsonl");
        let path_b = dir.path().join("pairs_b.jsonl");
        let count = emit_training_data(&selections, &dataset, &c, &cfg, &path_a).unwrap();
        assert_eq!(count, 2 * (2 + 5));
        emit_training_data(&selections, &dataset, &c, &cfg, &path_b).unwrap();
        assert_eq!(
            std::fs::read(&path_a).unwrap(),
            std::fs::read(&path_b).unwrap()
        );
    }

    #[test]
    fn training_pairs_with_scarce_positives() {
        let c = corpus(&[("p1", "king text"), ("p2", "other"), ("p3", "third")]);
        let pool = pool_of(&["p1", "p2", "p3"]);
        let mut cfg = config(5);
        cfg.k = 5;
        cfg.pool_size = 5;
        cfg.positives_per_question = 5;
        cfg.negatives_per_question = 1;
        let dataset = Dataset::from_instances(vec![instance(&["king"])]).unwrap();
        let sel = select_da_only(
            &pool,
            dataset.get("q1").unwrap(),
            &c,
            &StopwordList::builtin(),
            &cfg,
        )
        .unwrap();
        assert_eq!(sel.positives.len(), 1);
        let pairs = build_training_pairs(&[sel], &dataset, &c, &cfg).unwrap();
        let positives = pairs.iter().filter(|p| p.label == 1).count();
        assert_eq!(positives, 1);
    }

    #[test]
    fn unknown_passage_in_selection_fails_fast() {
        let c = corpus(&[("p1", "a")]);
        let dataset = Dataset::from_instances(vec![instance(&[])]).unwrap();
        let cfg = config(1);
        let sel = SilverSelection {
            question_id: "q1".into(),
            positives: vec!["ghost".into()],
            negatives: vec![],
            scores: BTreeMap::new(),
            strategy: MatchStrategy::LexicalRecall,
            da_coverage: BTreeMap::new(),
        };
        assert!(matches!(
            build_training_pairs(&[sel], &dataset, &c, &cfg),
            Err(Error::UnknownPassage { .. })
        ));
    }

    #[test]
    fn silver_degrades_to_lfa_only_without_direct_answers() {
        let c = corpus(&[
            ("p1", "alpha"),
            ("p2", "beta"),
            ("p3", "gamma"),
            ("p4", "delta"),
        ]);
        let pool = pool_of(&["p1", "p2", "p3", "p4"]);
        let scores = scores_of(&[("p1", 0.2), ("p2", 0.8), ("p3", 0.5), ("p4", 0.0)]);
        let inst = instance(&[]);
        let cfg = config(2);
        let silver = select_silver(&pool, &inst, &scores, &c, &cfg).unwrap();
        let lfa_only = select_lfa_only(&pool, &inst, &scores, &cfg).unwrap();
        assert_eq!(silver.positives, lfa_only.positives);
        assert_eq!(silver.negatives, lfa_only.negatives);
        assert_eq!(silver.scores, lfa_only.scores);
    }
}
