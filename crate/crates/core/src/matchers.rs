//! Scores candidate pools against a target long-form answer.
//!
//! Three families of strategies produce the per-candidate scores consumed
//! by silver selection:
//!
//! * lexical — token recall of the answer's token set (the default),
//!   Jaccard similarity, or ROUGE-L f1;
//! * semantic — dot product of service-produced embeddings of the passage
//!   (`"title. text"`) and the answer;
//! * perplexity — negated token-level cost of the answer under a served
//!   language model, conditioned on the candidate plus a seeded sample of
//!   other pool passages.
//!
//! All strategies share one convention: higher score means better match.
//! The perplexity cost is sign-flipped at this boundary (the raw cost is
//! logged per candidate), so downstream ranking code never special-cases a
//! strategy. Output always covers exactly the pool's passages, in pool
//! order.

use serde::{Deserialize, Serialize};

use crate::corpus::{CandidatePool, Corpus, Passage};
use crate::error::{Error, Result};
use crate::sampling;
use crate::services::{EmbeddingClient, LogprobClient};
use crate::textproc::{self, StopwordList, TokenSequence};

/// Scoring strategy of a mining run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    LexicalRecall,
    Jaccard,
    RougeL,
    Semantic,
    Perplexity,
}

impl MatchStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatchStrategy::LexicalRecall => "lexical_recall",
            MatchStrategy::Jaccard => "jaccard",
            MatchStrategy::RougeL => "rouge_l",
            MatchStrategy::Semantic => "semantic",
            MatchStrategy::Perplexity => "perplexity",
        }
    }
}

impl std::fmt::Display for MatchStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MatchStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lexical_recall" => Ok(MatchStrategy::LexicalRecall),
            "jaccard" => Ok(MatchStrategy::Jaccard),
            "rouge_l" => Ok(MatchStrategy::RougeL),
            "semantic" => Ok(MatchStrategy::Semantic),
            "perplexity" => Ok(MatchStrategy::Perplexity),
            other => Err(Error::InvalidConfig(format!(
                "unknown match strategy {other:?}"
            ))),
        }
    }
}

/// Lexical sub-variant of [`score_lexical`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexicalVariant {
    Recall,
    Jaccard,
    RougeL,
}

/// One candidate's score under one strategy; higher is better.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchScore {
    pub passage_id: String,
    pub score: f64,
    pub strategy: MatchStrategy,
}

fn passage_of<'c>(corpus: &'c Corpus, passage_id: &str) -> Result<&'c Passage> {
    corpus.get(passage_id).ok_or_else(|| Error::UnknownPassage {
        passage_id: passage_id.to_string(),
    })
}

/// Lexical matching of every pool passage against the answer text.
///
/// Recall and Jaccard work on stopword-free token sets; ROUGE-L keeps
/// stopwords and uses the f1 component. An answer with no usable tokens is
/// a degenerate-LFA error naming the question.
pub fn score_lexical(
    pool: &CandidatePool,
    corpus: &Corpus,
    lfa: &str,
    variant: LexicalVariant,
    stopwords: &StopwordList,
) -> Result<Vec<MatchScore>> {
    let strategy = match variant {
        LexicalVariant::Recall => MatchStrategy::LexicalRecall,
        LexicalVariant::Jaccard => MatchStrategy::Jaccard,
        LexicalVariant::RougeL => MatchStrategy::RougeL,
    };
    let lfa_seq = textproc::tokenize(lfa);
    let lfa_set = textproc::token_set(&lfa_seq, stopwords);
    let degenerate = match variant {
        LexicalVariant::RougeL => lfa_seq.is_empty(),
        _ => lfa_set.is_empty(),
    };
    if degenerate {
        return Err(Error::DegenerateLfa {
            question_id: pool.question_id.clone(),
        });
    }
    let mut scores = Vec::with_capacity(pool.len());
    for pid in pool.passage_ids() {
        let passage = passage_of(corpus, pid)?;
        let passage_seq = textproc::tokenize(&passage.text);
        let score = match variant {
            LexicalVariant::Recall => {
                textproc::token_recall(&textproc::token_set(&passage_seq, stopwords), &lfa_set)?
            }
            LexicalVariant::Jaccard => {
                textproc::jaccard(&textproc::token_set(&passage_seq, stopwords), &lfa_set)?
            }
            LexicalVariant::RougeL => textproc::rouge_l(&passage_seq, &lfa_seq).f1,
        };
        scores.push(MatchScore {
            passage_id: pid.to_string(),
            score,
            strategy,
        });
    }
    Ok(scores)
}

/// Token recall of each passage against the question. A stopword-only
/// question yields all-zero scores with a warning instead of an error
/// (questions like "who is the who" exist).
pub fn question_recall(
    pool: &CandidatePool,
    corpus: &Corpus,
    question: &str,
    stopwords: &StopwordList,
) -> Result<Vec<MatchScore>> {
    let reference = textproc::text_token_set(question, stopwords);
    let mut scores = Vec::with_capacity(pool.len());
    if reference.is_empty() {
        log::warn!(
            "question {:?} has no content tokens; question recall is 0 for all candidates",
            pool.question_id
        );
    }
    for pid in pool.passage_ids() {
        let passage = passage_of(corpus, pid)?;
        let score = if reference.is_empty() {
            0.0
        } else {
            textproc::token_recall(&textproc::text_token_set(&passage.text, stopwords), &reference)?
        };
        scores.push(MatchScore {
            passage_id: pid.to_string(),
            score,
            strategy: MatchStrategy::LexicalRecall,
        });
    }
    Ok(scores)
}

/// Passage rendering submitted to the embedding service.
fn embedding_text(passage: &Passage) -> String {
    format!("{}. {}", passage.title, passage.text)
}

/// Embedding-based matching: score is the plain dot product of the passage
/// and answer embeddings (cosine optionally, off by default). Requests are
/// batched; all vectors must share one dimension.
pub fn score_semantic(
    pool: &CandidatePool,
    corpus: &Corpus,
    lfa: &str,
    client: &dyn EmbeddingClient,
    batch_size: usize,
    cosine: bool,
) -> Result<Vec<MatchScore>> {
    let mut texts = Vec::with_capacity(pool.len() + 1);
    texts.push(lfa.to_string());
    for pid in pool.passage_ids() {
        texts.push(embedding_text(passage_of(corpus, pid)?));
    }
    let vectors = embed_batched(client, &texts, batch_size)?;
    let dim = vectors[0].len();
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::ServiceContract(format!(
                "embedding dimension mismatch: text {i} has {} components, expected {dim}",
                v.len()
            )));
        }
    }
    let lfa_vec = &vectors[0];
    let scores = pool
        .passage_ids()
        .zip(&vectors[1..])
        .map(|(pid, v)| {
            let score = if cosine {
                cosine_similarity(v, lfa_vec)
            } else {
                dot(v, lfa_vec)
            };
            MatchScore {
                passage_id: pid.to_string(),
                score,
                strategy: MatchStrategy::Semantic,
            }
        })
        .collect();
    Ok(scores)
}

fn embed_batched(
    client: &dyn EmbeddingClient,
    texts: &[String],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let batch = batch_size.max(1);
    let mut vectors = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(batch) {
        vectors.extend(client.embed(chunk)?);
    }
    if vectors.is_empty() {
        return Err(Error::ServiceContract("no embeddings returned".into()));
    }
    Ok(vectors)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Default prompt for the perplexity matcher; `{question}` and
/// `{passages}` are substituted, the answer is sent as the continuation.
/// The exact training-time prompt of a served model is not knowable here,
/// so the template is configurable and recorded with mining outputs.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "Answer the question using the provided passages.\n\nQuestion: {question}\n\nPassages:\n{passages}\n\nAnswer:";

/// Per-question context for perplexity scoring: a seeded permutation of the
/// pool from which each candidate's k-1 context passages are drawn.
#[derive(Debug, Clone)]
pub struct PerplexityContext {
    pub prompt_template: String,
    /// Context size: each prompt carries k-1 sampled passages plus the
    /// candidate itself.
    pub k: usize,
    pub seed: u64,
    /// When false (default) one permutation per question is shared by all
    /// candidates; when true each candidate gets its own.
    pub resample_per_candidate: bool,
    question_id: String,
    permutation: Vec<String>,
}

impl PerplexityContext {
    pub fn for_question(
        pool: &CandidatePool,
        k: usize,
        seed: u64,
        prompt_template: impl Into<String>,
        resample_per_candidate: bool,
    ) -> Self {
        let ids: Vec<&str> = pool.passage_ids().collect();
        let permutation = sampling::permute(&ids, seed, &format!("pctx:{}", pool.question_id))
            .into_iter()
            .map(str::to_string)
            .collect();
        PerplexityContext {
            prompt_template: prompt_template.into(),
            k,
            seed,
            resample_per_candidate,
            question_id: pool.question_id.clone(),
            permutation,
        }
    }

    /// The k-1 context passages for one candidate: the permutation prefix
    /// with the candidate itself skipped, so the sample is fixed per
    /// question for every candidate outside that prefix.
    pub fn context_sample(&self, exclude: &str) -> Vec<String> {
        let source: Vec<String>;
        let permutation = if self.resample_per_candidate {
            let ids: Vec<&str> = self.permutation.iter().map(String::as_str).collect();
            source = sampling::permute(
                &ids,
                self.seed,
                &format!("pctx:{}:{exclude}", self.question_id),
            )
            .into_iter()
            .map(str::to_string)
            .collect();
            &source
        } else {
            &self.permutation
        };
        permutation
            .iter()
            .filter(|pid| pid.as_str() != exclude)
            .take(self.k.saturating_sub(1))
            .cloned()
            .collect()
    }
}

/// Language-model matching: the answer's token cost given the candidate in
/// context. The returned score is the summed log-probability (the negated
/// cost), preserving the higher-is-better convention; raw costs go to the
/// debug log.
pub fn score_perplexity(
    pool: &CandidatePool,
    corpus: &Corpus,
    question: &str,
    lfa: &str,
    ctx: &PerplexityContext,
    client: &dyn LogprobClient,
) -> Result<Vec<MatchScore>> {
    if lfa.is_empty() {
        return Err(Error::DegenerateLfa {
            question_id: pool.question_id.clone(),
        });
    }
    if pool.len() < ctx.k {
        log::warn!(
            "question {:?}: pool of {} is smaller than context size {}; using {} context passages",
            pool.question_id,
            pool.len(),
            ctx.k,
            pool.len().saturating_sub(1)
        );
    }
    let mut scores = Vec::with_capacity(pool.len());
    for pid in pool.passage_ids() {
        let candidate = passage_of(corpus, pid)?;
        let mut block = String::new();
        for context_id in ctx.context_sample(pid) {
            block.push_str(&embedding_text(passage_of(corpus, &context_id)?));
            block.push_str("\n\n");
        }
        block.push_str(&embedding_text(candidate));
        let prompt = ctx
            .prompt_template
            .replace("{question}", question)
            .replace("{passages}", &block);
        let tokens = client.logprobs(&prompt, lfa)?;
        let joined: String = tokens.iter().map(|t| t.token.as_str()).collect();
        if joined != lfa {
            return Err(Error::ServiceContract(format!(
                "candidate {pid:?}: response tokens do not cover the continuation \
                 (got {} tokens reassembling to {joined:?})",
                tokens.len()
            )));
        }
        for t in &tokens {
            if !t.logprob.is_finite() || t.logprob > 0.0 {
                return Err(Error::ServiceContract(format!(
                    "candidate {pid:?}: invalid logprob {} for token {:?}",
                    t.logprob, t.token
                )));
            }
        }
        let total: f64 = tokens.iter().map(|t| t.logprob).sum();
        log::debug!(
            "question {:?} candidate {pid:?}: perplexity cost {}",
            pool.question_id,
            -total
        );
        scores.push(MatchScore {
            passage_id: pid.to_string(),
            score: total,
            strategy: MatchStrategy::Perplexity,
        });
    }
    Ok(scores)
}

/// Service handles plus knobs needed to score with any strategy.
pub struct MatcherContext<'a> {
    pub stopwords: &'a StopwordList,
    pub embedding: Option<&'a dyn EmbeddingClient>,
    pub logprob: Option<&'a dyn LogprobClient>,
    pub batch_size: usize,
    pub cosine: bool,
    pub perplexity_k: usize,
    pub seed: u64,
    pub prompt_template: String,
    pub resample_per_candidate: bool,
}

impl<'a> MatcherContext<'a> {
    pub fn lexical(stopwords: &'a StopwordList, seed: u64) -> Self {
        MatcherContext {
            stopwords,
            embedding: None,
            logprob: None,
            batch_size: 16,
            cosine: false,
            perplexity_k: 5,
            seed,
            prompt_template: DEFAULT_PROMPT_TEMPLATE.to_string(),
            resample_per_candidate: false,
        }
    }
}

/// Dispatches one pool/answer pair to the configured strategy.
pub fn score_pool(
    pool: &CandidatePool,
    corpus: &Corpus,
    question: &str,
    lfa: &str,
    strategy: MatchStrategy,
    ctx: &MatcherContext<'_>,
) -> Result<Vec<MatchScore>> {
    match strategy {
        MatchStrategy::LexicalRecall => {
            score_lexical(pool, corpus, lfa, LexicalVariant::Recall, ctx.stopwords)
        }
        MatchStrategy::Jaccard => {
            score_lexical(pool, corpus, lfa, LexicalVariant::Jaccard, ctx.stopwords)
        }
        MatchStrategy::RougeL => {
            score_lexical(pool, corpus, lfa, LexicalVariant::RougeL, ctx.stopwords)
        }
        MatchStrategy::Semantic => {
            let client = ctx.embedding.ok_or_else(|| {
                Error::InvalidConfig("semantic strategy requires an embedding endpoint".into())
            })?;
            score_semantic(pool, corpus, lfa, client, ctx.batch_size, ctx.cosine)
        }
        MatchStrategy::Perplexity => {
            let client = ctx.logprob.ok_or_else(|| {
                Error::InvalidConfig("perplexity strategy requires a logprob endpoint".into())
            })?;
            let pctx = PerplexityContext::for_question(
                pool,
                ctx.perplexity_k,
                ctx.seed,
                ctx.prompt_template.clone(),
                ctx.resample_per_candidate,
            );
            score_perplexity(pool, corpus, question, lfa, &pctx, client)
        }
    }
}

/// Tokenized direct answer ready for containment checks; answers that
/// normalize to nothing are unusable and reported as such.
pub fn answer_tokens(answer: &str) -> Option<TokenSequence> {
    let seq = textproc::tokenize(answer);
    if seq.is_empty() {
        None
    } else {
        Some(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PoolSource, Passage};

    fn corpus(entries: &[(&str, &str)]) -> Corpus {
        Corpus::from_passages(entries.iter().map(|(id, text)| Passage {
            id: id.to_string(),
            page_id: format!("page-{id}"),
            title: format!("Title {id}"),
            text: text.to_string(),
        }))
        .unwrap()
    }

    fn pool_over(corpus: &Corpus) -> CandidatePool {
        let entries = corpus
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.clone(), 100.0 - i as f64))
            .collect();
        CandidatePool::new("q1", entries, PoolSource::BuiltinBm25).unwrap()
    }

    #[test]
    fn lexical_recall_examples() {
        let c = corpus(&[
            ("p1", "lionel messi career barcelona debut story"),
            ("p2", "messi career barcelona unrelated words"),
            ("p3", "totally different content"),
        ]);
        let pool = pool_over(&c);
        let sw = StopwordList::builtin();
        let scores =
            score_lexical(&pool, &c, "lionel messi career barcelona debut", LexicalVariant::Recall, &sw)
                .unwrap();
        assert_eq!(scores.len(), pool.len());
        let by_id: std::collections::HashMap<&str, f64> = scores
            .iter()
            .map(|s| (s.passage_id.as_str(), s.score))
            .collect();
        assert_eq!(by_id["p1"], 1.0);
        assert_eq!(by_id["p2"], 0.6);
        assert_eq!(by_id["p3"], 0.0);
        // order-preserving
        let ids: Vec<&str> = scores.iter().map(|s| s.passage_id.as_str()).collect();
        let pool_ids: Vec<&str> = pool.passage_ids().collect();
        assert_eq!(ids, pool_ids);
    }

    #[test]
    fn degenerate_lfa_is_an_error_naming_the_question() {
        let c = corpus(&[("p1", "anything")]);
        let pool = pool_over(&c);
        let sw = StopwordList::builtin();
        match score_lexical(&pool, &c, "the of and", LexicalVariant::Recall, &sw) {
            Err(Error::DegenerateLfa { question_id }) => assert_eq!(question_id, "q1"),
            other => panic!("expected degenerate LFA error, got {other:?}"),
        }
    }

    #[test]
    fn lexical_scores_lie_in_unit_interval() {
        let c = corpus(&[
            ("p1", "alpha beta gamma delta"),
            ("p2", "alpha alpha beta"),
            ("p3", "epsilon zeta"),
        ]);
        let pool = pool_over(&c);
        let sw = StopwordList::builtin();
        for variant in [LexicalVariant::Recall, LexicalVariant::Jaccard, LexicalVariant::RougeL] {
            for s in score_lexical(&pool, &c, "alpha beta epsilon", variant, &sw).unwrap() {
                assert!((0.0..=1.0).contains(&s.score), "{variant:?} {s:?}");
            }
        }
    }

    #[test]
    fn identical_text_gets_the_top_lexical_score() {
        let lfa = "messi made his barcelona debut in november";
        let c = corpus(&[
            ("p1", "unrelated filler text"),
            ("p2", lfa),
            ("p3", "messi debut partial overlap"),
        ]);
        let pool = pool_over(&c);
        let sw = StopwordList::builtin();
        for variant in [LexicalVariant::Recall, LexicalVariant::Jaccard, LexicalVariant::RougeL] {
            let scores = score_lexical(&pool, &c, lfa, variant, &sw).unwrap();
            let best = scores
                .iter()
                .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
                .unwrap();
            assert_eq!(best.passage_id, "p2", "{variant:?}");
        }
    }

    #[test]
    fn question_recall_examples() {
        let c = corpus(&[
            ("p1", "messi debut barcelona porto friendly"),
            ("p2", "messi debut irrelevant"),
            ("p3", "nothing shared"),
        ]);
        let pool = pool_over(&c);
        let sw = StopwordList::builtin();
        let scores = question_recall(&pool, &c, "messi debut barcelona porto", &sw).unwrap();
        let by_id: std::collections::HashMap<&str, f64> = scores
            .iter()
            .map(|s| (s.passage_id.as_str(), s.score))
            .collect();
        assert_eq!(by_id["p1"], 1.0);
        assert_eq!(by_id["p2"], 0.5);
        assert_eq!(by_id["p3"], 0.0);
    }

    #[test]
    fn stopword_only_question_scores_zero_without_error() {
        let c = corpus(&[("p1", "who is the who")]);
        let pool = pool_over(&c);
        let scores = question_recall(&pool, &c, "who is the who", &StopwordList::builtin()).unwrap();
        assert!(scores.iter().all(|s| s.score == 0.0));
    }

    #[test]
    fn semantic_dot_product_with_mock_service() {
        let c = corpus(&[("p1", "passage one"), ("p2", "passage two")]);
        let pool = pool_over(&c);
        // the LFA text maps to (3,4); p1 to (1,2); p2 to (0,0)
        let server = crate::mock::embedding_server(|text| {
            if text.contains("passage one") {
                vec![1.0, 2.0]
            } else if text.contains("passage two") {
                vec![0.0, 0.0]
            } else {
                vec![3.0, 4.0]
            }
        });
        let client =
            crate::services::HttpClient::new(server.url(), crate::services::RetryPolicy::immediate(1))
                .unwrap();
        let scores = score_semantic(&pool, &c, "the answer", &client, 16, false).unwrap();
        let by_id: std::collections::HashMap<&str, f64> = scores
            .iter()
            .map(|s| (s.passage_id.as_str(), s.score))
            .collect();
        assert_eq!(by_id["p1"], 11.0); // (1,2)·(3,4)
        assert_eq!(by_id["p2"], 0.0);
    }

    #[test]
    fn semantic_identical_vectors_score_their_squared_norm() {
        let c = corpus(&[("p1", "same")]);
        let pool = pool_over(&c);
        let server = crate::mock::embedding_server(|_| vec![0.5, 1.5, 2.0]);
        let client =
            crate::services::HttpClient::new(server.url(), crate::services::RetryPolicy::immediate(1))
                .unwrap();
        let scores = score_semantic(&pool, &c, "same", &client, 16, false).unwrap();
        assert!((scores[0].score - (0.25 + 2.25 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn semantic_dimension_mismatch_fails_fast() {
        let c = corpus(&[("p1", "aaa"), ("p2", "bb")]);
        let pool = pool_over(&c);
        let server = crate::mock::embedding_server(|text| vec![1.0; text.len().min(30)]);
        let client =
            crate::services::HttpClient::new(server.url(), crate::services::RetryPolicy::immediate(1))
                .unwrap();
        assert!(matches!(
            score_semantic(&pool, &c, "answer", &client, 16, false),
            Err(Error::ServiceContract(_))
        ));
    }

    #[test]
    fn semantic_batching_preserves_alignment() {
        let c = corpus(&[
            ("p1", "one"),
            ("p2", "two"),
            ("p3", "three"),
            ("p4", "four"),
            ("p5", "five"),
        ]);
        let pool = pool_over(&c);
        let server = crate::mock::embedding_server(|text| vec![text.len() as f64, 1.0]);
        let client =
            crate::services::HttpClient::new(server.url(), crate::services::RetryPolicy::immediate(1))
                .unwrap();
        let batched = score_semantic(&pool, &c, "answer text", &client, 2, false).unwrap();
        let unbatched = score_semantic(&pool, &c, "answer text", &client, 100, false).unwrap();
        assert_eq!(batched, unbatched);
    }

    #[test]
    fn perplexity_cost_is_negated_at_the_boundary() {
        let c = corpus(&[("p1", "candidate text")]);
        let pool = pool_over(&c);
        // three tokens with logprobs -1.0, -2.0, -0.5 → cost 3.5 → score -3.5
        let server = crate::mock::logprob_server(|_, _, i| [-1.0, -2.0, -0.5][i]);
        let client =
            crate::services::HttpClient::new(server.url(), crate::services::RetryPolicy::immediate(1))
                .unwrap();
        let ctx = PerplexityContext::for_question(&pool, 5, 7, DEFAULT_PROMPT_TEMPLATE, false);
        let scores =
            score_perplexity(&pool, &c, "the question", "three token answer", &ctx, &client).unwrap();
        assert_eq!(scores[0].score, -3.5);
    }

    #[test]
    fn perplexity_ranking_follows_ascending_cost() {
        let c = corpus(&[("pa", "cheap passage"), ("pb", "costly passage")]);
        let pool = pool_over(&c);
        // candidate pa (in the prompt) → per-token cost totals 3.5, pb → 4.0
        let server = crate::mock::logprob_server(|prompt, _, i| {
            let base = if prompt.contains("cheap passage") {
                [-1.0, -2.0, -0.5]
            } else {
                [-1.5, -2.0, -0.5]
            };
            base[i]
        });
        let client =
            crate::services::HttpClient::new(server.url(), crate::services::RetryPolicy::immediate(1))
                .unwrap();
        let ctx = PerplexityContext::for_question(&pool, 1, 7, DEFAULT_PROMPT_TEMPLATE, false);
        let scores =
            score_perplexity(&pool, &c, "q", "three token answer", &ctx, &client).unwrap();
        let mut ranked: Vec<(&str, f64)> = scores
            .iter()
            .map(|s| (s.passage_id.as_str(), s.score))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        assert_eq!(ranked[0].0, "pa");
        assert_eq!(ranked[0].1, -3.5);
        assert_eq!(ranked[1].1, -4.0);
    }

    #[test]
    fn context_sample_is_fixed_per_question_and_excludes_candidate() {
        let c = corpus(&[
            ("p1", "a"),
            ("p2", "b"),
            ("p3", "c"),
            ("p4", "d"),
            ("p5", "e"),
            ("p6", "f"),
        ]);
        let pool = pool_over(&c);
        let ctx = PerplexityContext::for_question(&pool, 4, 11, DEFAULT_PROMPT_TEMPLATE, false);
        let prefix: Vec<String> = ctx.context_sample("nonexistent");
        assert_eq!(prefix.len(), 3);
        for pid in ["p1", "p2", "p3", "p4", "p5", "p6"] {
            let sample = ctx.context_sample(pid);
            assert_eq!(sample.len(), 3);
            assert!(!sample.contains(&pid.to_string()));
            // candidates outside the shared prefix all see the same sample
            if !prefix.contains(&pid.to_string()) {
                assert_eq!(sample, prefix);
            }
        }
    }

    #[test]
    fn small_pool_shrinks_the_context_sample() {
        let c = corpus(&[("p1", "a"), ("p2", "b")]);
        let pool = pool_over(&c);
        let ctx = PerplexityContext::for_question(&pool, 5, 3, DEFAULT_PROMPT_TEMPLATE, false);
        assert_eq!(ctx.context_sample("p1").len(), 1); // pool - 1
    }

    #[test]
    fn perplexity_rejects_uncovered_continuation() {
        let c = corpus(&[("p1", "x")]);
        let pool = pool_over(&c);
        // drop the last token: concatenation no longer matches
        let server = crate::mock::truncating_logprob_server();
        let client =
            crate::services::HttpClient::new(server.url(), crate::services::RetryPolicy::immediate(1))
                .unwrap();
        let ctx = PerplexityContext::for_question(&pool, 2, 1, DEFAULT_PROMPT_TEMPLATE, false);
        assert!(matches!(
            score_perplexity(&pool, &c, "q", "two tokens", &ctx, &client),
            Err(Error::ServiceContract(_))
        ));
    }
}
