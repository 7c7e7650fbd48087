//! External service contracts and HTTP clients.
//!
//! Three services back the neural matchers and the served re-ranker. All
//! are `POST` endpoints exchanging JSON bodies, positionally aligned, with
//! the exact shapes below. Endpoints come from config or environment.
//!
//! Embedding service — request:
//!
//! ```json
//! {"texts": ["first text", "second text"]}
//! ```
//!
//! response (one fixed-dimension vector per input text, same order):
//!
//! ```json
//! {"vectors": [[0.1, 0.2], [0.3, 0.4]]}
//! ```
//!
//! Log-probability service — request:
//!
//! ```json
//! {"prompt": "...context...", "continuation": "the target answer"}
//! ```
//!
//! response (token strings concatenate to exactly the continuation):
//!
//! ```json
//! {"token_logprobs": [{"token": "the ", "logprob": -1.0}, {"token": "target answer", "logprob": -2.0}]}
//! ```
//!
//! Scoring service — request (all questions in one request are identical):
//!
//! ```json
//! {"pairs": [{"question": "q", "passage_title": "t", "passage_text": "x"}]}
//! ```
//!
//! response:
//!
//! ```json
//! {"scores": [0.7]}
//! ```
//!
//! Failed calls are retried with bounded exponential backoff; the error
//! surfaces after the last attempt. In-process mock servers implementing
//! these contracts live in [`crate::mock`] (behind the `mock-services`
//! feature) and are what the test suite runs against.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LogprobRequest {
    pub prompt: String,
    pub continuation: String,
}

/// One continuation token with its log-probability under the served model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProb {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LogprobResponse {
    pub token_logprobs: Vec<TokenLogProb>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScorerPair {
    pub question: String,
    pub passage_title: String,
    pub passage_text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub pairs: Vec<ScorerPair>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

/// Produces one embedding vector per text, positionally aligned.
pub trait EmbeddingClient: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Scores a continuation token-by-token given a prompt.
pub trait LogprobClient: Send + Sync {
    fn logprobs(&self, prompt: &str, continuation: &str) -> Result<Vec<TokenLogProb>>;
}

/// Scores (question, passage) pairs, higher meaning more relevant.
pub trait PairScoringClient: Send + Sync {
    fn score(&self, pairs: &[ScorerPair]) -> Result<Vec<f64>>;
}

/// Bounded exponential backoff: `attempts` tries total, sleeping
/// `base_delay * 2^i` between them.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(100),
        }
    }
}

impl RetryPolicy {
    /// Zero-delay policy for tests.
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            base_delay: Duration::ZERO,
        }
    }

    fn run<T>(&self, endpoint: &str, mut call: impl FnMut() -> Result<T>) -> Result<T> {
        let mut last = None;
        for attempt in 0..self.attempts.max(1) {
            if attempt > 0 {
                let delay = self.base_delay * 2u32.saturating_pow(attempt - 1);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                log::warn!("retrying {endpoint} (attempt {})", attempt + 1);
            }
            match call() {
                Ok(value) => return Ok(value),
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::Service {
            endpoint: endpoint.to_string(),
            message: "no attempts configured".into(),
        }))
    }
}

/// Blocking JSON-over-HTTP client shared by the three service types.
#[derive(Debug, Clone)]
pub struct HttpClient {
    endpoint: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, retry: RetryPolicy) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::ServiceContract(format!("http client: {e}")))?;
        Ok(HttpClient {
            endpoint: endpoint.into(),
            client,
            retry,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn post<Req: Serialize, Resp: serde::de::DeserializeOwned>(&self, req: &Req) -> Result<Resp> {
        self.retry.run(&self.endpoint, || {
            let response = self
                .client
                .post(&self.endpoint)
                .json(req)
                .send()
                .map_err(|e| Error::Service {
                    endpoint: self.endpoint.clone(),
                    message: e.to_string(),
                })?;
            let status = response.status();
            if !status.is_success() {
                return Err(Error::Service {
                    endpoint: self.endpoint.clone(),
                    message: format!("status {status}"),
                });
            }
            response.json().map_err(|e| Error::Service {
                endpoint: self.endpoint.clone(),
                message: format!("invalid response body: {e}"),
            })
        })
    }
}

impl EmbeddingClient for HttpClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let resp: EmbedResponse = self.post(&EmbedRequest {
            texts: texts.to_vec(),
        })?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::ServiceContract(format!(
                "embedding service returned {} vectors for {} texts",
                resp.vectors.len(),
                texts.len()
            )));
        }
        Ok(resp.vectors)
    }
}

impl LogprobClient for HttpClient {
    fn logprobs(&self, prompt: &str, continuation: &str) -> Result<Vec<TokenLogProb>> {
        let resp: LogprobResponse = self.post(&LogprobRequest {
            prompt: prompt.to_string(),
            continuation: continuation.to_string(),
        })?;
        Ok(resp.token_logprobs)
    }
}

impl PairScoringClient for HttpClient {
    fn score(&self, pairs: &[ScorerPair]) -> Result<Vec<f64>> {
        let resp: ScoreResponse = self.post(&ScoreRequest {
            pairs: pairs.to_vec(),
        })?;
        if resp.scores.len() != pairs.len() {
            return Err(Error::ServiceContract(format!(
                "scoring service returned {} scores for {} pairs",
                resp.scores.len(),
                pairs.len()
            )));
        }
        Ok(resp.scores)
    }
}
