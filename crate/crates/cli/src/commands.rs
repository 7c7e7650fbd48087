//! Command implementations shared by the CLI entry point and the pipeline
//! driver. Every command is idempotent given identical inputs and seed;
//! output files are written atomically.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use silvermine::corpus::{
    self, CandidatePool, Corpus, Dataset, GeneratedAnswer, PoolSource, RunEntry, RunFile,
};
use silvermine::error::Error as CoreError;
use silvermine::evalmetrics::{self, EvalOptions, ExtractionRecord};
use silvermine::matchers::{MatchStrategy, MatcherContext, DEFAULT_PROMPT_TEMPLATE};
use silvermine::rerank::{self, LexicalScorer, PoolScorer, ServiceScorer};
use silvermine::retrieval::{self, InvertedIndex};
use silvermine::services::{HttpClient, RetryPolicy};
use silvermine::silver::{self, SilverSelection};
use silvermine::textproc::StopwordList;
use silvermine::exec;

use crate::config::{MineMode, PipelineConfig, RerankScorer};
use crate::manifest::{hash_file, sha256_hex, Manifest};

/// Stable exit-code contract: 0 success, 2 config/input error, 3 no work,
/// 4 external-service failure.
#[derive(Debug)]
pub enum CmdError {
    Config(String),
    NoWork(String),
    Service(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::NoWork(_) => 3,
            CmdError::Service(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CmdError::Config(m) | CmdError::NoWork(m) | CmdError::Service(m) => m,
        }
    }
}

impl From<CoreError> for CmdError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Service { .. } | CoreError::ServiceContract(_) => {
                CmdError::Service(e.to_string())
            }
            CoreError::NoQuestions => CmdError::NoWork(e.to_string()),
            other => CmdError::Config(other.to_string()),
        }
    }
}

impl From<anyhow::Error> for CmdError {
    fn from(e: anyhow::Error) -> Self {
        CmdError::Config(format!("{e:#}"))
    }
}

pub type CmdResult = Result<(), CmdError>;

fn is_service_error(e: &CoreError) -> bool {
    matches!(e, CoreError::Service { .. } | CoreError::ServiceContract(_))
}

fn load_corpus(config: &PipelineConfig) -> Result<Corpus, CmdError> {
    corpus::load_corpus(&config.paths.corpus).map_err(CmdError::from)
}

fn load_dataset(config: &PipelineConfig) -> Result<Dataset, CmdError> {
    corpus::load_dataset(&config.paths.dataset).map_err(CmdError::from)
}

fn load_index(config: &PipelineConfig) -> Result<InvertedIndex, CmdError> {
    let path = config.paths.index.as_ref().ok_or_else(|| {
        CmdError::Config("paths.index is not configured (ingest-run config?)".into())
    })?;
    if !path.exists() {
        return Err(CmdError::Config(format!(
            "index file {} does not exist; run the `index` command first",
            path.display()
        )));
    }
    InvertedIndex::load(path).map_err(CmdError::from)
}

/// Builds and persists the BM25 index; prints corpus statistics. Re-runs
/// against an unchanged corpus leave the file untouched.
pub fn cmd_index(config: &PipelineConfig) -> CmdResult {
    let path = config
        .paths
        .index
        .clone()
        .ok_or_else(|| CmdError::Config("paths.index is not configured".into()))?;
    let corpus = load_corpus(config)?;
    let stopwords = config.stopwords().map_err(CmdError::from)?;
    let index = InvertedIndex::build(&corpus, &stopwords, &config.retrieval_config())
        .map_err(CmdError::from)?;
    println!(
        "corpus: {} passages, {} terms, average length {:.2}",
        index.doc_count(),
        index.term_count(),
        index.average_length()
    );
    if retrieval::index_file_up_to_date(&path, &index) {
        println!("index {} is up to date", path.display());
        return Ok(());
    }
    index.save(&path).map_err(CmdError::from)?;
    println!("wrote index {}", path.display());
    Ok(())
}

/// First-stage retrieval over the whole dataset, written as a run file at
/// pool depth.
pub fn cmd_retrieve(config: &PipelineConfig) -> CmdResult {
    let dataset = load_dataset(config)?;
    let index = load_index(config)?;
    let stopwords = config.stopwords().map_err(CmdError::from)?;
    let pool_size = config.retrieval.pool_size;
    let instances: Vec<_> = dataset.iter().collect();
    let pools: Vec<CandidatePool> = exec::map_slice(&instances, |inst| {
        index.retrieve(&inst.id, &inst.question, &stopwords, pool_size)
    });
    let mut entries = Vec::new();
    for pool in &pools {
        for (rank, (pid, score)) in pool.entries.iter().enumerate() {
            entries.push(RunEntry {
                question_id: pool.question_id.clone(),
                passage_id: pid.clone(),
                rank: rank as u32 + 1,
                score: *score,
            });
        }
    }
    let run = RunFile::new(entries).map_err(CmdError::from)?;
    let path = config.first_stage_run_path();
    corpus::write_run(&path, &run).map_err(CmdError::from)?;
    println!(
        "retrieved pools for {} questions ({} entries) -> {}",
        pools.iter().filter(|p| !p.is_empty()).count(),
        run.entries.len(),
        path.display()
    );
    Ok(())
}

/// Candidate pools for mining/re-ranking: an ingested external run when
/// configured, else the retrieve stage's run file when present, else fresh
/// in-process retrieval.
fn resolve_pools(
    config: &PipelineConfig,
    dataset: &Dataset,
    stopwords: &StopwordList,
) -> Result<Vec<CandidatePool>, CmdError> {
    if let Some(ingest_path) = &config.paths.ingest_run {
        let run = corpus::load_run(ingest_path).map_err(CmdError::from)?;
        return retrieval::ingest_run(&run, dataset, config.retrieval.pool_size)
            .map_err(CmdError::from);
    }
    let run_path = config.first_stage_run_path();
    if run_path.exists() {
        let run = corpus::load_run(&run_path).map_err(CmdError::from)?;
        return Ok(rerank::pools_from_run(&run, PoolSource::BuiltinBm25)
            .into_iter()
            .map(|mut pool| {
                pool.entries.truncate(config.retrieval.pool_size);
                pool
            })
            .collect());
    }
    let index = load_index(config)?;
    let instances: Vec<_> = dataset.iter().collect();
    let pool_size = config.retrieval.pool_size;
    Ok(exec::map_slice(&instances, |inst| {
        index.retrieve(&inst.id, &inst.question, stopwords, pool_size)
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedQuestion {
    pub question_id: String,
    pub reason: String,
}

fn matcher_context<'a>(
    config: &'a PipelineConfig,
    stopwords: &'a StopwordList,
    embedding: Option<&'a HttpClient>,
    logprob: Option<&'a HttpClient>,
) -> MatcherContext<'a> {
    MatcherContext {
        stopwords,
        embedding: embedding.map(|c| c as &dyn silvermine::services::EmbeddingClient),
        logprob: logprob.map(|c| c as &dyn silvermine::services::LogprobClient),
        batch_size: config.matcher.batch_size,
        cosine: config.matcher.cosine,
        perplexity_k: config.silver.k,
        seed: config.seed,
        prompt_template: config
            .matcher
            .prompt_template
            .clone()
            .unwrap_or_else(|| DEFAULT_PROMPT_TEMPLATE.to_string()),
        resample_per_candidate: config.matcher.resample_per_candidate,
    }
}

fn retry_policy(config: &PipelineConfig) -> RetryPolicy {
    RetryPolicy {
        attempts: config.matcher.retry_attempts,
        ..RetryPolicy::default()
    }
}

fn http_client(
    endpoint: &Option<String>,
    what: &str,
    policy: RetryPolicy,
) -> Result<Option<HttpClient>, CmdError> {
    match endpoint {
        Some(url) => HttpClient::new(url.clone(), policy)
            .map(Some)
            .map_err(|e| CmdError::Config(format!("{what}: {e}"))),
        None => Ok(None),
    }
}

/// Mines silver selections and emits training data. Questions failing
/// their preconditions are skipped and listed in a sidecar report; the
/// command succeeds when at least one question was mined.
pub fn cmd_mine(config: &PipelineConfig) -> CmdResult {
    let corpus = load_corpus(config)?;
    let dataset = load_dataset(config)?;
    let stopwords = config.stopwords().map_err(CmdError::from)?;
    let pools = resolve_pools(config, &dataset, &stopwords)?;
    let pools_by_question: HashMap<&str, &CandidatePool> = pools
        .iter()
        .map(|p| (p.question_id.as_str(), p))
        .collect();

    let silver_config = config.silver_config();
    let policy = retry_policy(config);
    let needs_embedding = silver_config.strategy == MatchStrategy::Semantic
        && config.silver.mode != MineMode::DaOnly;
    let needs_logprob = silver_config.strategy == MatchStrategy::Perplexity
        && config.silver.mode != MineMode::DaOnly;
    let embedding = if needs_embedding {
        let client = http_client(&config.matcher.embedding_endpoint, "embedding service", policy)?;
        Some(client.ok_or_else(|| {
            CmdError::Config("semantic strategy requires matcher.embedding_endpoint".into())
        })?)
    } else {
        None
    };
    let logprob = if needs_logprob {
        let client = http_client(&config.matcher.logprob_endpoint, "logprob service", policy)?;
        Some(client.ok_or_else(|| {
            CmdError::Config("perplexity strategy requires matcher.logprob_endpoint".into())
        })?)
    } else {
        None
    };
    let ctx = matcher_context(config, &stopwords, embedding.as_ref(), logprob.as_ref());

    let instances: Vec<_> = dataset.iter().collect();
    let mode = config.silver.mode;
    let outcomes: Vec<Result<SilverSelection, SkippedQuestion>> =
        exec::map_slice(&instances, |inst| {
            let skip = |reason: String| SkippedQuestion {
                question_id: inst.id.clone(),
                reason,
            };
            let Some(pool) = pools_by_question.get(inst.id.as_str()) else {
                return Err(skip("no candidate pool".into()));
            };
            if pool.is_empty() {
                return Err(skip("empty candidate pool".into()));
            }
            let result = match mode {
                MineMode::Silver | MineMode::LfaOnly => {
                    silver::compute_lfa_scores(pool, &corpus, inst, &silver_config, &ctx).and_then(
                        |scores| match mode {
                            MineMode::Silver => {
                                silver::select_silver(pool, inst, &scores, &corpus, &silver_config)
                            }
                            _ => silver::select_lfa_only(pool, inst, &scores, &silver_config),
                        },
                    )
                }
                MineMode::DaOnly => {
                    if instance_has_usable_answers(inst) {
                        silver::select_da_only(pool, inst, &corpus, &stopwords, &silver_config)
                    } else {
                        return Err(skip("no direct answers".into()));
                    }
                }
            };
            result.map_err(|e| {
                let mut skipped = skip(e.to_string());
                if is_service_error(&e) {
                    skipped.reason = format!("service failure: {e}");
                }
                skipped
            })
        });

    let mut selections = Vec::new();
    let mut skipped = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(selection) => selections.push(selection),
            Err(record) => {
                log::warn!("skipping {:?}: {}", record.question_id, record.reason);
                skipped.push(record);
            }
        }
    }

    corpus::write_jsonl(&config.skipped_path(), &skipped).map_err(CmdError::from)?;
    if selections.is_empty() {
        let service_failures = skipped
            .iter()
            .filter(|s| s.reason.starts_with("service failure"))
            .count();
        return if service_failures > 0 {
            Err(CmdError::Service(format!(
                "no question mined; {service_failures} service failures (see {})",
                config.skipped_path().display()
            )))
        } else {
            Err(CmdError::NoWork(format!(
                "no question satisfied the mining preconditions (see {})",
                config.skipped_path().display()
            )))
        };
    }

    silver::write_silver_records(&config.silver_path(), &selections, config.seed)
        .map_err(CmdError::from)?;
    let count = silver::emit_training_data(
        &selections,
        &dataset,
        &corpus,
        &silver_config,
        &config.training_pairs_path(),
    )
    .map_err(CmdError::from)?;
    println!(
        "mined {} questions ({} skipped), {} training pairs -> {}",
        selections.len(),
        skipped.len(),
        count,
        config.training_pairs_path().display()
    );
    Ok(())
}

fn instance_has_usable_answers(inst: &silvermine::corpus::QaInstance) -> bool {
    inst.direct_answers
        .iter()
        .any(|da| silvermine::matchers::answer_tokens(da).is_some())
}

/// Re-ranks candidate pools to depth k with the configured scorer and
/// writes the run plus metadata.
pub fn cmd_rerank(config: &PipelineConfig) -> CmdResult {
    let corpus = load_corpus(config)?;
    let dataset = load_dataset(config)?;
    let stopwords = config.stopwords().map_err(CmdError::from)?;
    let pools = resolve_pools(config, &dataset, &stopwords)?;
    let k = config.rerank.k;

    let reranked = match config.rerank.scorer {
        RerankScorer::None => {
            return Err(CmdError::Config(
                "rerank.scorer is \"none\"; configure passthrough, lexical, or service".into(),
            ))
        }
        RerankScorer::Passthrough => rerank::passthrough_topk(&pools, k).map_err(CmdError::from)?,
        RerankScorer::Lexical => {
            let scorer = LexicalScorer {
                stopwords: &stopwords,
            };
            rerank_with(&pools, &corpus, &dataset, &scorer, k)?
        }
        RerankScorer::Service => {
            let policy = retry_policy(config);
            let client = http_client(&config.matcher.scoring_endpoint, "scoring service", policy)?
                .ok_or_else(|| {
                    CmdError::Config("service scorer requires matcher.scoring_endpoint".into())
                })?;
            let identity = format!("service:{}", client.endpoint());
            let scorer = ServiceScorer {
                client,
                batch_size: config.matcher.batch_size,
                identity,
            };
            rerank_with(&pools, &corpus, &dataset, &scorer, k)?
        }
    };

    if reranked.run.entries.is_empty() && !reranked.metadata.failed_questions.is_empty() {
        return Err(CmdError::Service(format!(
            "re-ranking failed for all {} questions",
            reranked.metadata.failed_questions.len()
        )));
    }
    corpus::write_run(&config.reranked_path(), &reranked.run).map_err(CmdError::from)?;
    let mut meta_bytes =
        serde_json::to_vec_pretty(&reranked.metadata).map_err(|e| CmdError::Config(e.to_string()))?;
    meta_bytes.push(b'\n');
    corpus::write_atomic(&config.reranked_meta_path(), &meta_bytes).map_err(CmdError::from)?;
    println!(
        "re-ranked {} questions at depth {} -> {}",
        reranked.run.question_ids().len(),
        k,
        config.reranked_path().display()
    );
    if !reranked.metadata.failed_questions.is_empty() {
        log::warn!(
            "{} questions failed re-ranking and were excluded",
            reranked.metadata.failed_questions.len()
        );
    }
    Ok(())
}

fn rerank_with(
    pools: &[CandidatePool],
    corpus: &Corpus,
    dataset: &Dataset,
    scorer: &dyn PoolScorer,
    k: usize,
) -> Result<rerank::RerankedRun, CmdError> {
    let questions = |qid: &str| dataset.get(qid).map(|inst| inst.question.clone());
    rerank::rerank_pools(pools, corpus, &questions, scorer, k).map_err(CmdError::from)
}

/// The run cmd_eval evaluates: an explicit override, else the re-ranked
/// run when present, else the first-stage run, else the ingested run.
pub fn eval_run_path(config: &PipelineConfig) -> Result<PathBuf, CmdError> {
    if let Some(path) = &config.eval.run {
        return Ok(path.clone());
    }
    let reranked = config.reranked_path();
    if reranked.exists() {
        return Ok(reranked);
    }
    let first_stage = config.first_stage_run_path();
    if first_stage.exists() {
        return Ok(first_stage);
    }
    if let Some(path) = &config.paths.ingest_run {
        return Ok(path.clone());
    }
    Err(CmdError::Config(
        "no run to evaluate: set eval.run or produce one with retrieve/rerank".into(),
    ))
}

/// Computes all applicable metrics for a run, writes the report files, and
/// prints the table.
pub fn cmd_eval(config: &PipelineConfig) -> CmdResult {
    let corpus = load_corpus(config)?;
    let dataset = load_dataset(config)?;
    let stopwords = config.stopwords().map_err(CmdError::from)?;
    let run_path = eval_run_path(config)?;
    let run = corpus::load_run(&run_path).map_err(CmdError::from)?;

    let answers: Option<Vec<GeneratedAnswer>> = match &config.paths.generated_answers {
        Some(path) => Some(corpus::load_generated_answers(path).map_err(CmdError::from)?),
        None => None,
    };
    let extractions: Option<Vec<ExtractionRecord>> = match &config.paths.extractions {
        Some(path) => Some(evalmetrics::load_extractions(path).map_err(CmdError::from)?),
        None => None,
    };

    let report = evalmetrics::evaluate_run(
        &run,
        &dataset,
        &corpus,
        answers.as_deref(),
        extractions.as_deref(),
        &EvalOptions {
            k: config.eval.k,
            stopwords: &stopwords,
            micro: config.eval.micro,
            seed: config.seed,
        },
    )
    .map_err(CmdError::from)?;

    let document = report.document();
    evalmetrics::write_report(&config.report_json_path(), &document).map_err(CmdError::from)?;
    let table = report.render_table();
    corpus::write_atomic(&config.report_table_path(), table.as_bytes()).map_err(CmdError::from)?;
    corpus::write_atomic(
        &config.per_turn_csv_path(),
        report.per_turn_csv().as_bytes(),
    )
    .map_err(CmdError::from)?;
    println!("evaluated {} ({})", run_path.display(), config.report_json_path().display());
    print!("{table}");
    Ok(())
}

/// Full workflow: index → retrieve → mine → (optional rerank) → eval, with
/// a manifest of content hashes. Completed stages with unchanged inputs
/// are skipped on re-runs, so an interrupted pipeline resumes where it
/// stopped.
pub fn cmd_pipeline(config: &PipelineConfig) -> CmdResult {
    std::fs::create_dir_all(&config.paths.output_dir)
        .map_err(|e| CmdError::Config(format!("cannot create output dir: {e}")))?;
    let manifest_path = config.manifest_path();
    let mut manifest = Manifest::load_or_default(&manifest_path);
    let config_hash = sha256_hex(
        serde_json::to_string(config)
            .map_err(|e| CmdError::Config(e.to_string()))?
            .as_bytes(),
    );
    manifest.version = env!("CARGO_PKG_VERSION").to_string();
    manifest.seed = config.seed;
    manifest.config_hash = config_hash.clone();

    let file_hash = |path: &Path| -> Result<String, CmdError> {
        hash_file(path).map_err(|e| CmdError::Config(format!("{e:#}")))
    };

    let builtin_retrieval = config.paths.index.is_some();

    // -- index ------------------------------------------------------------
    if builtin_retrieval {
        let mut inputs = BTreeMap::new();
        inputs.insert("config".into(), config_hash.clone());
        inputs.insert("corpus".into(), file_hash(&config.paths.corpus)?);
        let index_path = config.paths.index.clone().expect("builtin retrieval");
        if manifest.stage_up_to_date("index", &inputs) {
            println!("stage index: up to date");
        } else {
            cmd_index(config)?;
            manifest
                .record_stage("index", inputs, &[&index_path])
                .map_err(CmdError::from)?;
            manifest.save(&manifest_path).map_err(CmdError::from)?;
        }

        // -- retrieve -------------------------------------------------------
        let mut inputs = BTreeMap::new();
        inputs.insert("config".into(), config_hash.clone());
        inputs.insert("index".into(), file_hash(&index_path)?);
        inputs.insert("dataset".into(), file_hash(&config.paths.dataset)?);
        let run_path = config.first_stage_run_path();
        if manifest.stage_up_to_date("retrieve", &inputs) {
            println!("stage retrieve: up to date");
        } else {
            cmd_retrieve(config)?;
            manifest
                .record_stage("retrieve", inputs, &[&run_path])
                .map_err(CmdError::from)?;
            manifest.save(&manifest_path).map_err(CmdError::from)?;
        }
    }

    let pool_file = if builtin_retrieval {
        config.first_stage_run_path()
    } else {
        config.paths.ingest_run.clone().expect("validated")
    };

    // -- mine ---------------------------------------------------------------
    let mut inputs = BTreeMap::new();
    inputs.insert("config".into(), config_hash.clone());
    inputs.insert("pools".into(), file_hash(&pool_file)?);
    inputs.insert("dataset".into(), file_hash(&config.paths.dataset)?);
    inputs.insert("corpus".into(), file_hash(&config.paths.corpus)?);
    if manifest.stage_up_to_date("mine", &inputs) {
        println!("stage mine: up to date");
    } else {
        cmd_mine(config)?;
        manifest
            .record_stage(
                "mine",
                inputs,
                &[
                    &config.silver_path(),
                    &config.training_pairs_path(),
                    &config.skipped_path(),
                ],
            )
            .map_err(CmdError::from)?;
        manifest.save(&manifest_path).map_err(CmdError::from)?;
    }

    // -- rerank (optional) ----------------------------------------------------
    let rerank_enabled = config.rerank.scorer != RerankScorer::None;
    if rerank_enabled {
        let mut inputs = BTreeMap::new();
        inputs.insert("config".into(), config_hash.clone());
        inputs.insert("pools".into(), file_hash(&pool_file)?);
        inputs.insert("dataset".into(), file_hash(&config.paths.dataset)?);
        inputs.insert("corpus".into(), file_hash(&config.paths.corpus)?);
        if manifest.stage_up_to_date("rerank", &inputs) {
            println!("stage rerank: up to date");
        } else {
            cmd_rerank(config)?;
            manifest
                .record_stage(
                    "rerank",
                    inputs,
                    &[&config.reranked_path(), &config.reranked_meta_path()],
                )
                .map_err(CmdError::from)?;
            manifest.save(&manifest_path).map_err(CmdError::from)?;
        }
    }

    // -- eval -----------------------------------------------------------------
    let final_run = if rerank_enabled {
        config.reranked_path()
    } else {
        pool_file.clone()
    };
    let mut inputs = BTreeMap::new();
    inputs.insert("config".into(), config_hash.clone());
    inputs.insert("run".into(), file_hash(&final_run)?);
    inputs.insert("dataset".into(), file_hash(&config.paths.dataset)?);
    inputs.insert("corpus".into(), file_hash(&config.paths.corpus)?);
    if let Some(path) = &config.paths.generated_answers {
        inputs.insert("generated_answers".into(), file_hash(path)?);
    }
    if let Some(path) = &config.paths.extractions {
        inputs.insert("extractions".into(), file_hash(path)?);
    }
    if manifest.stage_up_to_date("eval", &inputs) {
        println!("stage eval: up to date");
    } else {
        let mut eval_config = config.clone();
        eval_config.eval.run = Some(final_run.clone());
        cmd_eval(&eval_config)?;
        manifest
            .record_stage(
                "eval",
                inputs,
                &[
                    &config.report_json_path(),
                    &config.report_table_path(),
                    &config.per_turn_csv_path(),
                ],
            )
            .map_err(CmdError::from)?;
        manifest.save(&manifest_path).map_err(CmdError::from)?;
    }

    manifest.save(&manifest_path).map_err(CmdError::from)?;
    println!("pipeline complete; manifest at {}", manifest_path.display());
    Ok(())
}
