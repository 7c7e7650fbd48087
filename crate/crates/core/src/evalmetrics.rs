//! Retrieval and answer-quality metrics over runs, datasets, and generated
//! answers, aggregated into a report.
//!
//! Recall metrics are macro-averaged: computed per question over the top-k
//! retrieved passages, then averaged over the questions where the metric
//! is defined (a question without direct answers contributes nothing to
//! direct-answer recall, and so on). Micro variants are available behind a
//! flag and off by default.
//!
//! Scale conventions follow the usual reporting style: recall and
//! groundedness aggregates are fractions rounded to 3 decimals; ROUGE-L,
//! answer F1 and their geometric-mean combination are percentages rounded
//! to 1 decimal. Rounding is floor(x·10^d + 0.5)/10^d throughout, so any
//! independent reimplementation reproduces report files byte-for-byte.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dataset, GeneratedAnswer, Passage, QaInstance, RunFile};
use crate::error::{Error, Result};
use crate::exec;
use crate::textproc::{self, StopwordList};

/// One externally produced answer extraction: a span pulled from the
/// generated answer for one question interpretation, with its gold
/// answers. The machine-reading model producing these is out of process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub question_id: String,
    pub interpretation_id: String,
    pub extracted_span: String,
    pub gold_answers: Vec<String>,
}

pub fn load_extractions(path: &Path) -> Result<Vec<ExtractionRecord>> {
    Ok(crate::corpus::read_jsonl(path)?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

/// Deterministic half-up rounding used for every reported value.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (x * scale + 0.5).floor() / scale
}

/// Top-k passages of a question's run entries. Unknown passage ids are
/// warned about and skipped (corpora may be filtered); a run shallower
/// than k is used at its available depth with a warning.
pub fn top_k_passages<'c>(
    run: &RunFile,
    corpus: &'c Corpus,
    question_id: &str,
    k: usize,
) -> Vec<&'c Passage> {
    let entries = run.entries_for(question_id);
    if !entries.is_empty() && entries.len() < k {
        log::warn!(
            "question {question_id:?}: run depth {} is below k={k}; evaluating at available depth",
            entries.len()
        );
    }
    entries
        .into_iter()
        .take(k)
        .filter_map(|e| {
            let passage = corpus.get(&e.passage_id);
            if passage.is_none() {
                log::warn!(
                    "question {question_id:?}: run references unknown passage {:?}; skipped",
                    e.passage_id
                );
            }
            passage
        })
        .collect()
}

/// Normalized (tokenized, space-joined) answer strings with duplicates
/// removed, preserving first occurrence. Unusable answers are dropped.
/// Returns the kept token sequences and the number of duplicates removed.
fn dedup_answers(answers: &[String]) -> (Vec<textproc::TokenSequence>, usize) {
    let mut seen = BTreeSet::new();
    let mut kept = Vec::new();
    let mut duplicates = 0;
    for answer in answers {
        let seq = textproc::tokenize(answer);
        if seq.is_empty() {
            log::warn!("direct answer {answer:?} has no tokens; ignored");
            continue;
        }
        if seen.insert(seq.join()) {
            kept.push(seq);
        } else {
            duplicates += 1;
        }
    }
    (kept, duplicates)
}

fn contained_in_any(answer: &textproc::TokenSequence, passages: &[&Passage]) -> bool {
    passages.iter().any(|p| {
        textproc::contains_answer(&textproc::tokenize(&p.text), answer).unwrap_or(false)
    })
}

/// Fraction of the question's direct answers appearing verbatim in the
/// top-k passages. Undefined (None) without direct answers.
pub fn direct_answer_recall(
    run: &RunFile,
    instance: &QaInstance,
    corpus: &Corpus,
    k: usize,
) -> Option<f64> {
    let (answers, _) = dedup_answers(&instance.direct_answers);
    if answers.is_empty() {
        return None;
    }
    let passages = top_k_passages(run, corpus, &instance.id, k);
    let hits = answers
        .iter()
        .filter(|a| contained_in_any(a, &passages))
        .count();
    Some(hits as f64 / answers.len() as f64)
}

/// Fraction of the gold pages from which at least one top-k passage was
/// retrieved. Undefined without gold pages.
pub fn wikipage_recall(
    run: &RunFile,
    instance: &QaInstance,
    corpus: &Corpus,
    k: usize,
) -> Option<f64> {
    let gold: BTreeSet<&str> = instance.gold_page_ids.iter().map(String::as_str).collect();
    if gold.is_empty() {
        return None;
    }
    let passages = top_k_passages(run, corpus, &instance.id, k);
    let retrieved_pages: BTreeSet<&str> = passages.iter().map(|p| p.page_id.as_str()).collect();
    let hits = gold.iter().filter(|g| retrieved_pages.contains(*g)).count();
    Some(hits as f64 / gold.len() as f64)
}

/// Fraction of follow-up answers (union over turns, deduplicated) already
/// contained in the first question's top-k passages, plus the per-turn
/// breakdown. Undefined without usable follow-up answers.
pub fn followup_answer_recall(
    run: &RunFile,
    instance: &QaInstance,
    corpus: &Corpus,
    k: usize,
) -> Option<(f64, Vec<(u32, f64)>)> {
    if instance.followups.is_empty() {
        return None;
    }
    let passages = top_k_passages(run, corpus, &instance.id, k);
    let mut per_turn = Vec::new();
    let mut union_seen = BTreeSet::new();
    let mut union_total = 0usize;
    let mut union_hits = 0usize;
    for followup in &instance.followups {
        let (answers, _) = dedup_answers(&followup.answers);
        if answers.is_empty() {
            continue;
        }
        let hits = answers
            .iter()
            .filter(|a| contained_in_any(a, &passages))
            .count();
        per_turn.push((followup.turn_index, hits as f64 / answers.len() as f64));
        for answer in &answers {
            if union_seen.insert(answer.join()) {
                union_total += 1;
                if contained_in_any(answer, &passages) {
                    union_hits += 1;
                }
            }
        }
    }
    if union_total == 0 {
        return None;
    }
    Some((union_hits as f64 / union_total as f64, per_turn))
}

/// Fraction of the answer's content-token occurrences whose type appears
/// in the union of the retrieved passages' content tokens. The second
/// component flags a degenerate (empty after stopword removal) answer,
/// which is fully grounded by convention.
pub fn groundedness(
    answer_text: &str,
    passages: &[&Passage],
    stopwords: &StopwordList,
) -> (f64, bool) {
    let answer_seq = textproc::tokenize(answer_text);
    let occurrences: Vec<&String> = answer_seq
        .tokens()
        .iter()
        .filter(|t| !stopwords.contains(t))
        .collect();
    if occurrences.is_empty() {
        return (1.0, true);
    }
    let mut vocabulary: BTreeSet<String> = BTreeSet::new();
    for passage in passages {
        for token in textproc::tokenize(&passage.text).tokens() {
            if !stopwords.contains(token) {
                vocabulary.insert(token.clone());
            }
        }
    }
    let grounded = occurrences
        .iter()
        .filter(|t| vocabulary.contains(t.as_str()))
        .count();
    (grounded as f64 / occurrences.len() as f64, false)
}

/// Token-overlap F1 between the normalized token multisets of a predicted
/// and a gold answer; 1.0 when both normalize to nothing.
pub fn token_f1(predicted: &str, gold: &str) -> f64 {
    let p = textproc::tokenize(predicted);
    let g = textproc::tokenize(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in g.tokens() {
        *gold_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in p.tokens() {
        if let Some(count) = gold_counts.get_mut(t.as_str()) {
            if *count > 0 {
                *count -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best ROUGE-L f1 of the answer against any reference.
pub fn rouge_l_vs_references(answer: &str, references: &[String]) -> Option<f64> {
    if references.is_empty() {
        return None;
    }
    let answer_seq = textproc::tokenize(answer);
    references
        .iter()
        .map(|r| textproc::rouge_l(&answer_seq, &textproc::tokenize(r)).f1)
        .fold(None, |best, f1| {
            Some(match best {
                None => f1,
                Some(b) if f1 > b => f1,
                Some(b) => b,
            })
        })
}

/// Geometric mean combining answer-overlap and answer-correctness scores.
pub fn dr_score(rouge_l: f64, d_f1: f64) -> f64 {
    (rouge_l * d_f1).sqrt()
}

/// Unrounded per-question metric values. Optional fields are present only
/// when their inputs exist for the question.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionMetrics {
    pub question_id: String,
    pub da_recall: Option<f64>,
    pub wikipage_recall: Option<f64>,
    pub followup_recall: Option<f64>,
    pub per_turn_hits: Vec<(u32, f64)>,
    pub groundedness: Option<f64>,
    pub rouge_l_f1: Option<f64>,
    pub token_f1: Option<f64>,
}

/// Aggregate values. Recall/groundedness are fractions; `rouge_l`, `d_f1`
/// and `dr` are on the 0–100 scale.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregates {
    pub da_recall: Option<f64>,
    pub wikipage_recall: Option<f64>,
    pub followup_recall: Option<f64>,
    pub groundedness: Option<f64>,
    pub rouge_l: Option<f64>,
    pub d_f1: Option<f64>,
    pub dr: Option<f64>,
    pub micro_da_recall: Option<f64>,
    pub micro_wikipage_recall: Option<f64>,
    pub micro_followup_recall: Option<f64>,
    pub micro_groundedness: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub questions: usize,
    pub evaluated: usize,
    pub missing_from_run: usize,
    pub with_direct_answers: usize,
    pub with_gold_pages: usize,
    pub with_followups: usize,
    pub with_generated_answers: usize,
    pub with_extractions: usize,
    pub duplicate_direct_answers_removed: usize,
}

/// Configuration echo attached to every report so numbers are traceable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub k: usize,
    pub seed: u64,
    pub tokenizer_version: u32,
    pub stopword_hash: String,
    pub micro: bool,
}

/// Full evaluation result, unrounded. [`MetricsReport::document`] produces
/// the rounded, persisted form.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_question: Vec<QuestionMetrics>,
    pub aggregates: Aggregates,
    pub counts: ReportCounts,
    pub config: ReportConfig,
    /// (turn_index, mean recall over defined questions, question count).
    pub per_turn: Vec<(u32, f64, usize)>,
}

pub struct EvalOptions<'a> {
    pub k: usize,
    pub stopwords: &'a StopwordList,
    pub micro: bool,
    /// Global seed, echoed into the report for provenance.
    pub seed: u64,
}

/// Evaluates one run against the dataset: retrieval metrics always,
/// generation metrics when generated answers / extractions are supplied.
/// Questions absent from the run are excluded and counted.
pub fn evaluate_run(
    run: &RunFile,
    dataset: &Dataset,
    corpus: &Corpus,
    answers: Option<&[GeneratedAnswer]>,
    extractions: Option<&[ExtractionRecord]>,
    opts: &EvalOptions<'_>,
) -> Result<MetricsReport> {
    let answers_by_question: HashMap<&str, &GeneratedAnswer> = answers
        .unwrap_or_default()
        .iter()
        .map(|a| (a.question_id.as_str(), a))
        .collect();
    let mut extractions_by_question: BTreeMap<&str, Vec<&ExtractionRecord>> = BTreeMap::new();
    for record in extractions.unwrap_or_default() {
        extractions_by_question
            .entry(record.question_id.as_str())
            .or_default()
            .push(record);
    }

    let evaluated: Vec<&QaInstance> = dataset
        .iter()
        .filter(|inst| !run.entries_for(&inst.id).is_empty())
        .collect();
    let missing = dataset.len() - evaluated.len();
    if missing > 0 {
        log::warn!("{missing} questions have no run entries and are excluded from aggregation");
    }

    let mut counts = ReportCounts {
        questions: dataset.len(),
        evaluated: evaluated.len(),
        missing_from_run: missing,
        ..ReportCounts::default()
    };
    for inst in &evaluated {
        let (_, dups) = dedup_answers(&inst.direct_answers);
        counts.duplicate_direct_answers_removed += dups;
    }

    let per_question: Vec<QuestionMetrics> = exec::map_slice(&evaluated, |inst| {
        let generated = answers_by_question.get(inst.id.as_str());
        let question_extractions = extractions_by_question.get(inst.id.as_str());
        let passages = top_k_passages(run, corpus, &inst.id, opts.k);
        let followup = followup_answer_recall(run, inst, corpus, opts.k);
        QuestionMetrics {
            question_id: inst.id.clone(),
            da_recall: direct_answer_recall(run, inst, corpus, opts.k),
            wikipage_recall: wikipage_recall(run, inst, corpus, opts.k),
            followup_recall: followup.as_ref().map(|(overall, _)| *overall),
            per_turn_hits: followup.map(|(_, turns)| turns).unwrap_or_default(),
            groundedness: generated
                .map(|a| groundedness(&a.text, &passages, opts.stopwords).0),
            rouge_l_f1: generated
                .and_then(|a| rouge_l_vs_references(&a.text, &inst.long_form_answers)),
            token_f1: question_extractions.map(|records| {
                let per_interpretation: Vec<f64> = records
                    .iter()
                    .map(|r| {
                        r.gold_answers
                            .iter()
                            .map(|g| token_f1(&r.extracted_span, g))
                            .fold(0.0, f64::max)
                    })
                    .collect();
                per_interpretation.iter().sum::<f64>() / per_interpretation.len().max(1) as f64
            }),
        }
    });

    for (inst, metrics) in evaluated.iter().zip(&per_question) {
        if metrics.da_recall.is_some() {
            counts.with_direct_answers += 1;
        }
        if metrics.wikipage_recall.is_some() {
            counts.with_gold_pages += 1;
        }
        if metrics.followup_recall.is_some() {
            counts.with_followups += 1;
        }
        if answers_by_question.contains_key(inst.id.as_str()) {
            counts.with_generated_answers += 1;
        }
        if extractions_by_question.contains_key(inst.id.as_str()) {
            counts.with_extractions += 1;
        }
    }

    let micro = opts.micro.then(|| {
        compute_micro(
            run,
            &evaluated,
            corpus,
            &answers_by_question,
            opts,
        )
    });

    aggregate_report(
        per_question,
        counts,
        ReportConfig {
            k: opts.k,
            seed: opts.seed,
            tokenizer_version: textproc::TOKENIZER_VERSION,
            stopword_hash: opts.stopwords.content_hash_hex(),
            micro: opts.micro,
        },
        micro,
    )
}

pub struct MicroAggregates {
    pub da_recall: Option<f64>,
    wikipage_recall: Option<f64>,
    followup_recall: Option<f64>,
    groundedness: Option<f64>,
}

fn compute_micro(
    run: &RunFile,
    evaluated: &[&QaInstance],
    corpus: &Corpus,
    answers: &HashMap<&str, &GeneratedAnswer>,
    opts: &EvalOptions<'_>,
) -> MicroAggregates {
    let mut da = (0usize, 0usize);
    let mut pages = (0usize, 0usize);
    let mut followup = (0usize, 0usize);
    let mut grounded = (0usize, 0usize);
    for inst in evaluated {
        let passages = top_k_passages(run, corpus, &inst.id, opts.k);
        let (das, _) = dedup_answers(&inst.direct_answers);
        da.1 += das.len();
        da.0 += das.iter().filter(|a| contained_in_any(a, &passages)).count();

        let gold: BTreeSet<&str> = inst.gold_page_ids.iter().map(String::as_str).collect();
        let retrieved: BTreeSet<&str> = passages.iter().map(|p| p.page_id.as_str()).collect();
        pages.1 += gold.len();
        pages.0 += gold.iter().filter(|g| retrieved.contains(*g)).count();

        let mut seen = BTreeSet::new();
        for f in &inst.followups {
            let (answers, _) = dedup_answers(&f.answers);
            for a in answers {
                if seen.insert(a.join()) {
                    followup.1 += 1;
                    if contained_in_any(&a, &passages) {
                        followup.0 += 1;
                    }
                }
            }
        }

        if let Some(answer) = answers.get(inst.id.as_str()) {
            for token in textproc::tokenize(&answer.text).tokens() {
                if opts.stopwords.contains(token) {
                    continue;
                }
                grounded.1 += 1;
                let in_any = passages.iter().any(|p| {
                    textproc::tokenize(&p.text)
                        .tokens()
                        .iter()
                        .any(|t| t == token)
                });
                if in_any {
                    grounded.0 += 1;
                }
            }
        }
    }
    let ratio = |(num, den): (usize, usize)| (den > 0).then(|| num as f64 / den as f64);
    MicroAggregates {
        da_recall: ratio(da),
        wikipage_recall: ratio(pages),
        followup_recall: ratio(followup),
        groundedness: ratio(grounded),
    }
}

fn macro_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Folds per-question metrics into a report. Macro averages run over the
/// questions where each metric is defined; DR is computed when both of its
/// components are available. Errors when there is nothing to aggregate.
pub fn aggregate_report(
    per_question: Vec<QuestionMetrics>,
    counts: ReportCounts,
    config: ReportConfig,
    micro: Option<MicroAggregates>,
) -> Result<MetricsReport> {
    if per_question.is_empty() {
        return Err(Error::NoQuestions);
    }
    let rouge_l = macro_mean(per_question.iter().map(|q| q.rouge_l_f1)).map(|x| x * 100.0);
    let d_f1 = macro_mean(per_question.iter().map(|q| q.token_f1)).map(|x| x * 100.0);
    let dr = match (rouge_l, d_f1) {
        (Some(r), Some(d)) => Some(dr_score(r, d)),
        _ => None,
    };

    let mut turn_values: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for q in &per_question {
        for (turn, fraction) in &q.per_turn_hits {
            turn_values.entry(*turn).or_default().push(*fraction);
        }
    }
    let per_turn = turn_values
        .into_iter()
        .map(|(turn, values)| {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            (turn, mean, values.len())
        })
        .collect();

    let micro = micro.unwrap_or(MicroAggregates {
        da_recall: None,
        wikipage_recall: None,
        followup_recall: None,
        groundedness: None,
    });
    let aggregates = Aggregates {
        da_recall: macro_mean(per_question.iter().map(|q| q.da_recall)),
        wikipage_recall: macro_mean(per_question.iter().map(|q| q.wikipage_recall)),
        followup_recall: macro_mean(per_question.iter().map(|q| q.followup_recall)),
        groundedness: macro_mean(per_question.iter().map(|q| q.groundedness)),
        rouge_l,
        d_f1,
        dr,
        micro_da_recall: micro.da_recall,
        micro_wikipage_recall: micro.wikipage_recall,
        micro_followup_recall: micro.followup_recall,
        micro_groundedness: micro.groundedness,
    };
    Ok(MetricsReport {
        per_question,
        aggregates,
        counts,
        config,
        per_turn,
    })
}

// --------------------------------------------------------------------------
// Persisted (rounded) report form
// --------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionMetricsDoc {
    pub question_id: String,
    pub da_recall: Option<f64>,
    pub wikipage_recall: Option<f64>,
    pub followup_recall: Option<f64>,
    pub per_turn_hits: Vec<PerTurnHitDoc>,
    pub groundedness: Option<f64>,
    pub rouge_l_f1: Option<f64>,
    pub token_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTurnHitDoc {
    pub turn_index: u32,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatesDoc {
    pub da_recall: Option<f64>,
    pub wikipage_recall: Option<f64>,
    pub followup_recall: Option<f64>,
    pub groundedness: Option<f64>,
    pub rouge_l: Option<f64>,
    pub d_f1: Option<f64>,
    pub dr: Option<f64>,
    pub micro_da_recall: Option<f64>,
    pub micro_wikipage_recall: Option<f64>,
    pub micro_followup_recall: Option<f64>,
    pub micro_groundedness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTurnRowDoc {
    pub turn_index: u32,
    pub mean_recall: f64,
    pub n: usize,
}

/// The machine-readable report file: rounded values, stable field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub config: ReportConfig,
    pub counts: ReportCounts,
    pub aggregates: AggregatesDoc,
    pub per_turn: Vec<PerTurnRowDoc>,
    pub per_question: Vec<QuestionMetricsDoc>,
}

impl MetricsReport {
    /// Rounded, persistable form: fractions at 3 decimals (6 for
    /// per-question detail), percent-scale metrics at 1.
    pub fn document(&self) -> ReportDocument {
        let frac = |v: Option<f64>| v.map(|x| round_half_up(x, 3));
        let pct = |v: Option<f64>| v.map(|x| round_half_up(x, 1));
        let detail = |v: Option<f64>| v.map(|x| round_half_up(x, 6));
        ReportDocument {
            config: self.config.clone(),
            counts: self.counts.clone(),
            aggregates: AggregatesDoc {
                da_recall: frac(self.aggregates.da_recall),
                wikipage_recall: frac(self.aggregates.wikipage_recall),
                followup_recall: frac(self.aggregates.followup_recall),
                groundedness: frac(self.aggregates.groundedness),
                rouge_l: pct(self.aggregates.rouge_l),
                d_f1: pct(self.aggregates.d_f1),
                dr: pct(self.aggregates.dr),
                micro_da_recall: frac(self.aggregates.micro_da_recall),
                micro_wikipage_recall: frac(self.aggregates.micro_wikipage_recall),
                micro_followup_recall: frac(self.aggregates.micro_followup_recall),
                micro_groundedness: frac(self.aggregates.micro_groundedness),
            },
            per_turn: self
                .per_turn
                .iter()
                .map(|(turn_index, mean_recall, n)| PerTurnRowDoc {
                    turn_index: *turn_index,
                    mean_recall: round_half_up(*mean_recall, 6),
                    n: *n,
                })
                .collect(),
            per_question: self
                .per_question
                .iter()
                .map(|q| QuestionMetricsDoc {
                    question_id: q.question_id.clone(),
                    da_recall: detail(q.da_recall),
                    wikipage_recall: detail(q.wikipage_recall),
                    followup_recall: detail(q.followup_recall),
                    per_turn_hits: q
                        .per_turn_hits
                        .iter()
                        .map(|(turn_index, fraction)| PerTurnHitDoc {
                            turn_index: *turn_index,
                            fraction: round_half_up(*fraction, 6),
                        })
                        .collect(),
                    groundedness: detail(q.groundedness),
                    rouge_l_f1: detail(q.rouge_l_f1),
                    token_f1: detail(q.token_f1),
                })
                .collect(),
        }
    }

    /// Plain-text table of the aggregates.
    pub fn render_table(&self) -> String {
        let doc = self.document();
        let mut out = String::new();
        let mut row = |name: &str, value: Option<f64>, decimals: usize| {
            match value {
                Some(v) => out.push_str(&format!("{name:<22} {v:>8.decimals$}\n")),
                None => out.push_str(&format!("{name:<22} {:>8}\n", "-")),
            };
        };
        row("Direct Answer Recall", doc.aggregates.da_recall, 3);
        row("Wikipage Recall", doc.aggregates.wikipage_recall, 3);
        row("Follow-up Ans. Recall", doc.aggregates.followup_recall, 3);
        row("Groundedness", doc.aggregates.groundedness, 3);
        row("ROUGE-L", doc.aggregates.rouge_l, 1);
        row("D-F1", doc.aggregates.d_f1, 1);
        row("DR", doc.aggregates.dr, 1);
        if self.config.micro {
            row("micro DA Recall", doc.aggregates.micro_da_recall, 3);
            row("micro Wikipage Recall", doc.aggregates.micro_wikipage_recall, 3);
            row("micro Follow-up Recall", doc.aggregates.micro_followup_recall, 3);
            row("micro Groundedness", doc.aggregates.micro_groundedness, 3);
        }
        out.push_str(&format!(
            "questions evaluated    {:>8} (of {})\n",
            self.counts.evaluated, self.counts.questions
        ));
        out
    }

    /// Per-turn CSV (`turn_index,mean_recall,n`), mirroring the per-turn
    /// recall plot data.
    pub fn per_turn_csv(&self) -> String {
        let mut out = String::from("turn_index,mean_recall,n\n");
        for (turn_index, mean_recall, n) in &self.per_turn {
            out.push_str(&format!(
                "{turn_index},{},{n}\n",
                format_rounded(round_half_up(*mean_recall, 6))
            ));
        }
        out
    }
}

/// Shortest decimal form of a rounded value (matches JSON float printing).
fn format_rounded(x: f64) -> String {
    let mut s = serde_json::to_string(&x).unwrap_or_else(|_| x.to_string());
    if !s.contains('.') && !s.contains('e') {
        s.push_str(".0");
    }
    s
}

pub fn write_report(path: &Path, doc: &ReportDocument) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(doc)
        .map_err(|e| Error::ServiceContract(format!("serialize report: {e}")))?;
    bytes.push(b'\n');
    crate::corpus::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Followup, Passage, RunEntry};

    fn corpus(entries: &[(&str, &str, &str)]) -> Corpus {
        Corpus::from_passages(entries.iter().map(|(id, page, text)| Passage {
            id: id.to_string(),
            page_id: page.to_string(),
            title: format!("Title {id}"),
            text: text.to_string(),
        }))
        .unwrap()
    }

    fn run_for(qid: &str, pids: &[&str]) -> RunFile {
        RunFile::new(
            pids.iter()
                .enumerate()
                .map(|(i, pid)| RunEntry {
                    question_id: qid.into(),
                    passage_id: pid.to_string(),
                    rank: i as u32 + 1,
                    score: (pids.len() - i) as f64,
                })
                .collect(),
        )
        .unwrap()
    }

    fn instance(id: &str, das: &[&str], pages: &[&str]) -> QaInstance {
        QaInstance {
            id: id.into(),
            question: "the question".into(),
            long_form_answers: vec![],
            direct_answers: das.iter().map(|d| d.to_string()).collect(),
            gold_page_ids: pages.iter().map(|p| p.to_string()).collect(),
            followups: vec![],
        }
    }

    #[test]
    fn direct_answer_recall_examples() {
        let c = corpus(&[
            ("p1", "A", "the date was 16 november 2003 indeed"),
            ("p2", "B", "he played for porto"),
        ]);
        let run = run_for("q1", &["p1", "p2"]);

        let both = instance("q1", &["16 november 2003", "porto"], &[]);
        assert_eq!(direct_answer_recall(&run, &both, &c, 5), Some(1.0));

        let half = instance("q1", &["16 november 2003", "madrid"], &[]);
        assert_eq!(direct_answer_recall(&run, &half, &c, 5), Some(0.5));

        let none = instance("q1", &[], &[]);
        assert_eq!(direct_answer_recall(&run, &none, &c, 5), None);
    }

    #[test]
    fn da_recall_macro_average_on_toy_set() {
        // four questions with hand-placed answers: 1, 1, 0.5, 0 → mean 0.625
        let c = corpus(&[
            ("p1", "A", "alpha beta"),
            ("p2", "B", "gamma delta"),
            ("p3", "C", "epsilon"),
        ]);
        let mut entries = Vec::new();
        for qid in ["q1", "q2", "q3", "q4"] {
            for (i, pid) in ["p1", "p2", "p3"].iter().enumerate() {
                entries.push(RunEntry {
                    question_id: qid.into(),
                    passage_id: pid.to_string(),
                    rank: i as u32 + 1,
                    score: (3 - i) as f64,
                });
            }
        }
        let run = RunFile::new(entries).unwrap();
        let dataset = Dataset::from_instances(vec![
            instance("q1", &["alpha"], &[]),
            instance("q2", &["gamma delta"], &[]),
            instance("q3", &["epsilon", "zeta"], &[]),
            instance("q4", &["missing"], &[]),
        ])
        .unwrap();
        let sw = StopwordList::builtin();
        let report = evaluate_run(
            &run,
            &dataset,
            &c,
            None,
            None,
            &EvalOptions {
                k: 3,
                stopwords: &sw,
                micro: false,
                seed: 0,
            },
        )
        .unwrap();
        assert!((report.aggregates.da_recall.unwrap() - 0.625).abs() < 1e-12);
    }

    #[test]
    fn wikipage_recall_examples() {
        let c = corpus(&[
            ("p1", "A", "text"),
            ("p2", "A", "more text"),
            ("p3", "B", "other page"),
        ]);
        let run = run_for("q1", &["p1", "p2"]);

        let full = instance("q1", &[], &["A"]);
        assert_eq!(wikipage_recall(&run, &full, &c, 5), Some(1.0));

        let half = instance("q1", &[], &["A", "B"]);
        assert_eq!(wikipage_recall(&run, &half, &c, 5), Some(0.5));

        let none = instance("q1", &[], &[]);
        assert_eq!(wikipage_recall(&run, &none, &c, 5), None);
    }

    #[test]
    fn followup_recall_per_turn_breakdown() {
        let c = corpus(&[("p1", "A", "contains porto and 1987 here")]);
        let run = run_for("q1", &["p1"]);
        let mut inst = instance("q1", &[], &[]);
        inst.followups = vec![
            Followup {
                turn_index: 2,
                question: "a".into(),
                answers: vec!["porto".into()],
            },
            Followup {
                turn_index: 3,
                question: "b".into(),
                answers: vec!["1987".into()],
            },
            Followup {
                turn_index: 4,
                question: "c".into(),
                answers: vec!["madrid".into()],
            },
            Followup {
                turn_index: 5,
                question: "d".into(),
                answers: vec!["lisbon".into()],
            },
        ];
        let (overall, per_turn) = followup_answer_recall(&run, &inst, &c, 5).unwrap();
        assert!((overall - 0.5).abs() < 1e-12);
        assert_eq!(
            per_turn,
            vec![(2, 1.0), (3, 1.0), (4, 0.0), (5, 0.0)]
        );

        let bare = instance("q1", &[], &[]);
        assert_eq!(followup_answer_recall(&run, &bare, &c, 5), None);
    }

    #[test]
    fn followup_recall_full_coverage() {
        let c = corpus(&[("p1", "A", "porto 1987 everything")]);
        let run = run_for("q1", &["p1"]);
        let mut inst = instance("q1", &[], &[]);
        inst.followups = vec![
            Followup {
                turn_index: 2,
                question: "a".into(),
                answers: vec!["porto".into()],
            },
            Followup {
                turn_index: 3,
                question: "b".into(),
                answers: vec!["1987".into()],
            },
        ];
        let (overall, per_turn) = followup_answer_recall(&run, &inst, &c, 5).unwrap();
        assert_eq!(overall, 1.0);
        assert!(per_turn.iter().all(|(_, f)| *f == 1.0));
    }

    #[test]
    fn groundedness_examples() {
        let sw = StopwordList::builtin();
        let c = corpus(&[
            ("p1", "A", "messi debut barcelona porto friendly november"),
            ("p2", "B", "career goals records club"),
        ]);
        let passages: Vec<&Passage> = c.iter().collect();

        let (full, degenerate) =
            groundedness("The messi debut was in porto", &passages, &sw);
        assert_eq!((full, degenerate), (1.0, false));

        let (zero, _) = groundedness("unrelated zebra words", &passages, &sw);
        assert_eq!(zero, 0.0);

        // 8 content tokens, 6 grounded
        let (three_quarters, _) = groundedness(
            "messi debut barcelona porto career goals zebra quark",
            &passages,
            &sw,
        );
        assert!((three_quarters - 0.75).abs() < 1e-12);

        let (empty, flag) = groundedness("the of and", &passages, &sw);
        assert_eq!((empty, flag), (1.0, true));
    }

    #[test]
    fn groundedness_invariant_under_permutation_and_duplication() {
        let sw = StopwordList::builtin();
        let c = corpus(&[
            ("p1", "A", "alpha beta gamma"),
            ("p2", "B", "delta epsilon"),
        ]);
        let p1 = c.get("p1").unwrap();
        let p2 = c.get("p2").unwrap();
        let answer = "alpha delta zebra";
        let (base, _) = groundedness(answer, &[p1, p2], &sw);
        let (swapped, _) = groundedness(answer, &[p2, p1], &sw);
        let (duplicated, _) = groundedness(answer, &[p1, p2, p1, p1], &sw);
        assert_eq!(base, swapped);
        assert_eq!(base, duplicated);
    }

    #[test]
    fn token_f1_examples() {
        assert_eq!(token_f1("16 November 2003", "16 november 2003"), 1.0);
        assert!((token_f1("16 november 2003", "november 2003") - 0.8).abs() < 1e-12);
        assert_eq!(token_f1("alpha beta", "gamma delta"), 0.0);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("something", ""), 0.0);
    }

    #[test]
    fn rouge_vs_references_takes_the_best() {
        let answer = "the cat sat";
        let refs = vec![
            "completely different words entirely".to_string(),
            "the cat ran".to_string(),
        ];
        let best = rouge_l_vs_references(answer, &refs).unwrap();
        assert!((best - 2.0 / 3.0).abs() < 1e-12);

        let single = rouge_l_vs_references(answer, &refs[1..].to_vec()).unwrap();
        assert_eq!(best, single);

        assert_eq!(rouge_l_vs_references(answer, &[]), None);
        let identical = rouge_l_vs_references(answer, &vec![answer.to_string()]).unwrap();
        assert_eq!(identical, 1.0);
    }

    #[test]
    fn dr_score_examples() {
        assert!((dr_score(43.4, 29.0) - 35.5).abs() < 0.05);
        assert!((dr_score(42.5, 27.7) - 34.3).abs() < 0.05);
        assert_eq!(dr_score(17.3, 0.0), 0.0);
        assert_eq!(dr_score(12.0, 12.0), 12.0);
        assert_eq!(dr_score(3.0, 7.0), dr_score(7.0, 3.0));
    }

    #[test]
    fn aggregate_skips_undefined_and_rejects_empty() {
        let q = |id: &str, da: Option<f64>| QuestionMetrics {
            question_id: id.into(),
            da_recall: da,
            wikipage_recall: None,
            followup_recall: None,
            per_turn_hits: vec![],
            groundedness: None,
            rouge_l_f1: None,
            token_f1: None,
        };
        let config = ReportConfig {
            k: 5,
            seed: 0,
            tokenizer_version: 1,
            stopword_hash: "x".into(),
            micro: false,
        };
        let report = aggregate_report(
            vec![q("q1", Some(1.0)), q("q2", None), q("q3", Some(0.5))],
            ReportCounts::default(),
            config.clone(),
            None,
        )
        .unwrap();
        assert!((report.aggregates.da_recall.unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(report.aggregates.dr, None);

        assert!(matches!(
            aggregate_report(vec![], ReportCounts::default(), config, None),
            Err(Error::NoQuestions)
        ));
    }

    #[test]
    fn single_question_aggregates_equal_its_values() {
        let c = corpus(&[("p1", "A", "alpha beta")]);
        let run = run_for("q1", &["p1"]);
        let dataset =
            Dataset::from_instances(vec![instance("q1", &["alpha"], &["A"])]).unwrap();
        let sw = StopwordList::builtin();
        let report = evaluate_run(
            &run,
            &dataset,
            &c,
            None,
            None,
            &EvalOptions {
                k: 5,
                stopwords: &sw,
                micro: false,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(report.aggregates.da_recall, report.per_question[0].da_recall);
        assert_eq!(
            report.aggregates.wikipage_recall,
            report.per_question[0].wikipage_recall
        );
    }

    #[test]
    fn macro_average_is_mean_of_defined_values() {
        let c = corpus(&[
            ("p1", "A", "alpha"),
            ("p2", "B", "beta"),
        ]);
        let mut entries = run_for("q1", &["p1", "p2"]).entries;
        entries.extend(run_for("q2", &["p2", "p1"]).entries);
        let run = RunFile::new(entries).unwrap();
        let dataset = Dataset::from_instances(vec![
            instance("q1", &["alpha"], &["A"]),
            instance("q2", &["missing"], &[]),
        ])
        .unwrap();
        let sw = StopwordList::builtin();
        let report = evaluate_run(
            &run,
            &dataset,
            &c,
            None,
            None,
            &EvalOptions {
                k: 2,
                stopwords: &sw,
                micro: false,
                seed: 0,
            },
        )
        .unwrap();
        let defined: Vec<f64> = report
            .per_question
            .iter()
            .filter_map(|q| q.da_recall)
            .collect();
        let mean = defined.iter().sum::<f64>() / defined.len() as f64;
        assert!((report.aggregates.da_recall.unwrap() - mean).abs() < 1e-12);
        // q2 has no gold pages: wikipage recall averages over q1 only
        assert_eq!(report.aggregates.wikipage_recall, Some(1.0));
    }

    #[test]
    fn recall_metrics_are_monotone_in_k() {
        let c = corpus(&[
            ("p1", "A", "alpha"),
            ("p2", "B", "beta"),
            ("p3", "C", "gamma"),
            ("p4", "D", "delta"),
        ]);
        let run = run_for("q1", &["p1", "p2", "p3", "p4"]);
        let inst = instance("q1", &["alpha", "beta", "gamma", "delta"], &["A", "B", "C", "D"]);
        let mut last_da = 0.0;
        let mut last_page = 0.0;
        for k in 1..=4 {
            let da = direct_answer_recall(&run, &inst, &c, k).unwrap();
            let page = wikipage_recall(&run, &inst, &c, k).unwrap();
            assert!(da >= last_da);
            assert!(page >= last_page);
            last_da = da;
            last_page = page;
        }
        assert_eq!(last_da, 1.0);
    }

    #[test]
    fn duplicate_direct_answers_are_deduplicated() {
        let c = corpus(&[("p1", "A", "alpha beta")]);
        let run = run_for("q1", &["p1"]);
        // "Alpha" and "alpha!" normalize identically
        let inst = instance("q1", &["Alpha", "alpha!", "zeta"], &[]);
        assert_eq!(direct_answer_recall(&run, &inst, &c, 5), Some(0.5));
    }

    #[test]
    fn rounding_and_document_shape() {
        assert_eq!(round_half_up(0.6255, 3), 0.626);
        assert_eq!(round_half_up(0.1, 3), 0.1);
        assert_eq!(round_half_up(35.47687, 1), 35.5);
        assert_eq!(format_rounded(0.5), "0.5");
        assert_eq!(format_rounded(1.0), "1.0");
    }

    #[test]
    fn micro_variants_pool_counts() {
        let c = corpus(&[
            ("p1", "A", "alpha beta gamma"),
            ("p2", "B", "delta"),
        ]);
        let mut entries = run_for("q1", &["p1"]).entries;
        entries.extend(run_for("q2", &["p2"]).entries);
        let run = RunFile::new(entries).unwrap();
        // q1: 2 of 2 answers found; q2: 0 of 1 → macro (1.0 + 0)/2 = 0.5,
        // micro 2/3
        let dataset = Dataset::from_instances(vec![
            instance("q1", &["alpha", "beta"], &[]),
            instance("q2", &["missing"], &[]),
        ])
        .unwrap();
        let sw = StopwordList::builtin();
        let report = evaluate_run(
            &run,
            &dataset,
            &c,
            None,
            None,
            &EvalOptions {
                k: 1,
                stopwords: &sw,
                micro: true,
                seed: 0,
            },
        )
        .unwrap();
        assert!((report.aggregates.da_recall.unwrap() - 0.5).abs() < 1e-12);
        assert!((report.aggregates.micro_da_recall.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn extraction_records_feed_token_f1() {
        let c = corpus(&[("p1", "A", "text")]);
        let run = run_for("q1", &["p1"]);
        let dataset = Dataset::from_instances(vec![instance("q1", &[], &[])]).unwrap();
        let extractions = vec![
            ExtractionRecord {
                question_id: "q1".into(),
                interpretation_id: "i1".into(),
                extracted_span: "16 november 2003".into(),
                gold_answers: vec!["november 2003".into(), "unrelated".into()],
            },
            ExtractionRecord {
                question_id: "q1".into(),
                interpretation_id: "i2".into(),
                extracted_span: "exact match".into(),
                gold_answers: vec!["exact match".into()],
            },
        ];
        let sw = StopwordList::builtin();
        let report = evaluate_run(
            &run,
            &dataset,
            &c,
            None,
            Some(&extractions),
            &EvalOptions {
                k: 1,
                stopwords: &sw,
                micro: false,
                seed: 0,
            },
        )
        .unwrap();
        // interpretation F1s: 0.8 and 1.0 → question 0.9 → aggregate 90.0
        assert!((report.per_question[0].token_f1.unwrap() - 0.9).abs() < 1e-12);
        assert!((report.aggregates.d_f1.unwrap() - 90.0).abs() < 1e-9);
    }
}
