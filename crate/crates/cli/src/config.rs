//! Declarative pipeline configuration: one TOML file, flag overrides win,
//! service endpoints optionally overridden from the environment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use silvermine::matchers::MatchStrategy;
use silvermine::silver::LfaPolicy;

pub const ENV_EMBEDDING_ENDPOINT: &str = "SILVERMINE_EMBEDDING_ENDPOINT";
pub const ENV_LOGPROB_ENDPOINT: &str = "SILVERMINE_LOGPROB_ENDPOINT";
pub const ENV_SCORING_ENDPOINT: &str = "SILVERMINE_SCORING_ENDPOINT";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker bound for parallel stages; 0 = one per logical CPU.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default = "default_log_level")]
    pub log_level: String,
    pub paths: Paths,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub silver: SilverSection,
    #[serde(default)]
    pub matcher: MatcherSection,
    #[serde(default)]
    pub rerank: RerankSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_log_level() -> String {
    "info".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub dataset: PathBuf,
    /// BM25 index file; mutually exclusive with `ingest_run`.
    #[serde(default)]
    pub index: Option<PathBuf>,
    /// First-stage run written by the retrieve stage.
    #[serde(default)]
    pub run: Option<PathBuf>,
    /// Externally produced run standing in for a dense retriever.
    #[serde(default)]
    pub ingest_run: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub generated_answers: Option<PathBuf>,
    #[serde(default)]
    pub extractions: Option<PathBuf>,
    /// Stopword list override; the committed builtin list otherwise.
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub pool_size: usize,
    pub k1: f64,
    pub b: f64,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            pool_size: 100,
            k1: 0.9,
            b: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MineMode {
    Silver,
    DaOnly,
    LfaOnly,
}

impl std::str::FromStr for MineMode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silver" => Ok(MineMode::Silver),
            "da_only" => Ok(MineMode::DaOnly),
            "lfa_only" => Ok(MineMode::LfaOnly),
            other => bail!("unknown mine mode {other:?} (silver | da_only | lfa_only)"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SilverSection {
    pub k: usize,
    pub positives_per_question: usize,
    pub negatives_per_question: usize,
    pub lfa_policy: LfaPolicy,
    pub mode: MineMode,
}

impl Default for SilverSection {
    fn default() -> Self {
        SilverSection {
            k: 5,
            positives_per_question: 5,
            negatives_per_question: 50,
            lfa_policy: LfaPolicy::First,
            mode: MineMode::Silver,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherSection {
    pub strategy: MatchStrategy,
    pub batch_size: usize,
    pub cosine: bool,
    pub resample_per_candidate: bool,
    pub prompt_template: Option<String>,
    pub embedding_endpoint: Option<String>,
    pub logprob_endpoint: Option<String>,
    pub scoring_endpoint: Option<String>,
    pub retry_attempts: u32,
}

impl Default for MatcherSection {
    fn default() -> Self {
        MatcherSection {
            strategy: MatchStrategy::LexicalRecall,
            batch_size: 16,
            cosine: false,
            resample_per_candidate: false,
            prompt_template: None,
            embedding_endpoint: None,
            logprob_endpoint: None,
            scoring_endpoint: None,
            retry_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankScorer {
    /// Skip the rerank stage entirely (pipeline) / refuse to run (rerank).
    None,
    Passthrough,
    Lexical,
    Service,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankSection {
    pub scorer: RerankScorer,
    pub k: usize,
}

impl Default for RerankSection {
    fn default() -> Self {
        RerankSection {
            scorer: RerankScorer::None,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub k: usize,
    pub micro: bool,
    /// Run to evaluate; defaults to the pipeline's final run.
    pub run: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k: 5,
            micro: false,
            run: None,
        }
    }
}

/// Command-line overrides; flags win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub k: Option<usize>,
    pub strategy: Option<MatchStrategy>,
    pub mode: Option<MineMode>,
}

impl PipelineConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut config: PipelineConfig = toml::from_str(&raw)
            .with_context(|| format!("cannot parse config file {}", path.display()))?;

        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(jobs) = overrides.jobs {
            config.jobs = jobs;
        }
        if let Some(k) = overrides.k {
            config.silver.k = k;
            config.rerank.k = k;
            config.eval.k = k;
        }
        if let Some(strategy) = overrides.strategy {
            config.matcher.strategy = strategy;
        }
        if let Some(mode) = overrides.mode {
            config.silver.mode = mode;
        }
        if let Ok(endpoint) = std::env::var(ENV_EMBEDDING_ENDPOINT) {
            config.matcher.embedding_endpoint = Some(endpoint);
        }
        if let Ok(endpoint) = std::env::var(ENV_LOGPROB_ENDPOINT) {
            config.matcher.logprob_endpoint = Some(endpoint);
        }
        if let Ok(endpoint) = std::env::var(ENV_SCORING_ENDPOINT) {
            config.matcher.scoring_endpoint = Some(endpoint);
        }

        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.ingest_run.is_some() && self.paths.index.is_some() {
            bail!("ambiguous pool source: both paths.index and paths.ingest_run are configured");
        }
        if self.paths.ingest_run.is_none() && self.paths.index.is_none() {
            bail!("no pool source: configure paths.index (builtin retrieval) or paths.ingest_run");
        }
        if self.retrieval.pool_size < 1 {
            bail!("retrieval.pool_size must be >= 1");
        }
        if self.retrieval.k1 < 0.0 {
            bail!("retrieval.k1 must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.retrieval.b) {
            bail!("retrieval.b must be in [0, 1]");
        }
        let silver = self.silver_config();
        silver
            .validate()
            .map_err(|e| anyhow::anyhow!("silver section: {e}"))?;
        if self.rerank.k < 1 || self.eval.k < 1 {
            bail!("rerank.k and eval.k must be >= 1");
        }
        Ok(())
    }

    pub fn silver_config(&self) -> silvermine::silver::SilverConfig {
        silvermine::silver::SilverConfig {
            k: self.silver.k,
            pool_size: self.retrieval.pool_size,
            negatives_per_question: self.silver.negatives_per_question,
            positives_per_question: self.silver.positives_per_question,
            strategy: self.matcher.strategy,
            seed: self.seed,
            lfa_policy: self.silver.lfa_policy,
        }
    }

    pub fn retrieval_config(&self) -> silvermine::retrieval::RetrievalConfig {
        silvermine::retrieval::RetrievalConfig {
            pool_size: self.retrieval.pool_size,
            k1: self.retrieval.k1,
            b: self.retrieval.b,
        }
    }

    pub fn stopwords(&self) -> Result<silvermine::textproc::StopwordList> {
        match &self.paths.stopwords {
            Some(path) => silvermine::textproc::StopwordList::from_file(path)
                .with_context(|| format!("loading stopword list {}", path.display())),
            None => Ok(silvermine::textproc::StopwordList::builtin()),
        }
    }

    // Fixed output names inside output_dir.

    pub fn silver_path(&self) -> PathBuf {
        self.paths.output_dir.join("silver.jsonl")
    }

    pub fn training_pairs_path(&self) -> PathBuf {
        self.paths.output_dir.join("training_pairs.jsonl")
    }

    pub fn skipped_path(&self) -> PathBuf {
        self.paths.output_dir.join("mine_skipped.jsonl")
    }

    pub fn reranked_path(&self) -> PathBuf {
        self.paths.output_dir.join("reranked.jsonl")
    }

    pub fn reranked_meta_path(&self) -> PathBuf {
        self.paths.output_dir.join("reranked.meta.json")
    }

    pub fn report_json_path(&self) -> PathBuf {
        self.paths.output_dir.join("report.json")
    }

    pub fn report_table_path(&self) -> PathBuf {
        self.paths.output_dir.join("report.txt")
    }

    pub fn per_turn_csv_path(&self) -> PathBuf {
        self.paths.output_dir.join("per_turn.csv")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths.output_dir.join("manifest.json")
    }

    /// The first-stage run written by the retrieve stage.
    pub fn first_stage_run_path(&self) -> PathBuf {
        self.paths
            .run
            .clone()
            .unwrap_or_else(|| self.paths.output_dir.join("run.jsonl"))
    }
}
