//! Semantic descriptors and the LLM / embedding provider seams.
//!
//! The engine only talks to language models through [`LlmProvider`] and
//! [`EmbeddingProvider`]. The bundled mocks are pure functions of their
//! input, so the whole semantic pipeline runs offline and reproducibly;
//! [`RemoteLlm`] and [`RemoteEmbedder`] speak a small JSON-over-HTTP
//! protocol for real deployments. Provider failures never abort a search:
//! normalization falls back to the whitespace-normalized input and
//! directional expansion falls back to the current description.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimension of the bundled hashing embedder.
pub const MOCK_EMBEDDING_DIM: usize = 256;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum SemanticsError {
    #[error("text is empty")]
    EmptyInput,
    #[error("embedding provider returned a zero vector")]
    ZeroVector,
    #[error("embedding has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

pub trait LlmProvider: Send + Sync {
    /// Rewrites free text as a concise effect description.
    fn normalize(&self, text: &str) -> Result<String, ProviderError>;

    /// Proposes descriptions that keep what `prev` and `curr` share and push
    /// further along their difference, honoring `intent`.
    fn expand(
        &self,
        prev: &str,
        curr: &str,
        intent: &str,
        count: usize,
    ) -> Result<Vec<String>, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticDescriptor {
    pub raw_text: String,
    pub normalized_text: String,
    /// Unit-norm.
    pub embedding: Vec<f64>,
}

impl SemanticDescriptor {
    /// Descriptor for free-text user input: normalized by the LLM (with
    /// fallback), then embedded.
    pub fn from_user_text(
        text: &str,
        llm: &dyn LlmProvider,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Self, SemanticsError> {
        let normalized_text = normalize_description(text, llm)?;
        let embedding = embed(&normalized_text, embedder)?;
        Ok(Self {
            raw_text: text.to_string(),
            normalized_text,
            embedding,
        })
    }

    /// Descriptor for a corpus effect: its own description joined with the
    /// description of the artwork it belongs to.
    pub fn for_instance(
        description: &str,
        artwork_description: &str,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Self, SemanticsError> {
        let raw_text = format!("{description}\n{artwork_description}");
        let normalized_text = whitespace_normalize(&raw_text);
        if normalized_text.is_empty() {
            return Err(SemanticsError::EmptyInput);
        }
        let embedding = embed(&raw_text, embedder)?;
        Ok(Self {
            raw_text,
            normalized_text,
            embedding,
        })
    }

    /// Descriptor for an already-concise description, such as one produced
    /// by directional expansion.
    pub fn from_normalized(text: &str, embedder: &dyn EmbeddingProvider) -> Result<Self, SemanticsError> {
        let normalized_text = whitespace_normalize(text);
        if normalized_text.is_empty() {
            return Err(SemanticsError::EmptyInput);
        }
        let embedding = embed(&normalized_text, embedder)?;
        Ok(Self {
            raw_text: text.to_string(),
            normalized_text,
            embedding,
        })
    }
}

pub fn whitespace_normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercase alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Concise description of `text`; falls back to the whitespace-normalized
/// input when the provider fails or returns nothing.
pub fn normalize_description(text: &str, llm: &dyn LlmProvider) -> Result<String, SemanticsError> {
    let fallback = whitespace_normalize(text);
    if fallback.is_empty() {
        return Err(SemanticsError::EmptyInput);
    }
    match llm.normalize(text) {
        Ok(s) if !whitespace_normalize(&s).is_empty() => Ok(whitespace_normalize(&s)),
        _ => Ok(fallback),
    }
}

/// Unit-norm embedding of `text`.
pub fn embed(text: &str, provider: &dyn EmbeddingProvider) -> Result<Vec<f64>, SemanticsError> {
    if text.trim().is_empty() {
        return Err(SemanticsError::EmptyInput);
    }
    let mut v = provider.embed(text)?;
    if v.len() != provider.dimension() {
        return Err(SemanticsError::DimensionMismatch {
            expected: provider.dimension(),
            got: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SemanticsError::NonFinite);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(SemanticsError::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Cosine of the two embeddings, clamped below at zero.
pub fn semantic_similarity(
    a: &SemanticDescriptor,
    b: &SemanticDescriptor,
) -> Result<f64, SemanticsError> {
    cosine_clamped(&a.embedding, &b.embedding)
}

pub(crate) fn cosine_clamped(a: &[f64], b: &[f64]) -> Result<f64, SemanticsError> {
    if a.len() != b.len() {
        return Err(SemanticsError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(0.0, 1.0))
}

/// Candidate descriptions for a directional exploration step.
///
/// Returns `count` strings on success. If the provider fails, or returns
/// nothing usable, the only candidate is the current description so that
/// kinematic extrapolation can still proceed.
pub fn expand_directionally(
    prev: &SemanticDescriptor,
    curr: &SemanticDescriptor,
    user_intent: &str,
    llm: &dyn LlmProvider,
    count: usize,
) -> Vec<String> {
    if count == 0 {
        return Vec::new();
    }
    let fallback = || vec![curr.normalized_text.clone()];
    match llm.expand(&prev.normalized_text, &curr.normalized_text, user_intent, count) {
        Ok(candidates) => {
            let cleaned: Vec<String> = candidates
                .iter()
                .map(|c| whitespace_normalize(c))
                .filter(|c| !c.is_empty())
                .collect();
            if cleaned.is_empty() {
                return fallback();
            }
            (0..count).map(|i| cleaned[i % cleaned.len()].clone()).collect()
        }
        Err(_) => fallback(),
    }
}

const FILLERS: &[&str] = &[
    "a", "an", "the", "uh", "um", "er", "erm", "like", "thing", "things", "stuff", "kind",
    "kinda", "sort", "sorta", "of", "some", "something", "really", "just", "very", "maybe",
    "basically", "i", "want", "need", "please", "you", "know", "with", "that", "is", "it",
];

const CANONICAL: &[(&str, &str)] = &[
    ("firey", "fire"),
    ("fiery", "fire"),
    ("flames", "flame"),
    ("sparkly", "sparkle"),
    ("sparkling", "sparkle"),
    ("glowy", "glow"),
    ("glowing", "glow"),
    ("smokey", "smoke"),
    ("smoky", "smoke"),
    ("swirly", "swirl"),
    ("swirling", "swirl"),
];

const VARIATIONS: &[&str] = &[
    "more", "intense", "subtle", "wider", "faster", "layered", "denser", "softer",
];

fn mock_normalize_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !FILLERS.contains(&t.as_str()))
        .map(|t| {
            CANONICAL
                .iter()
                .find(|(from, _)| *from == t)
                .map_or(t, |(_, to)| (*to).to_string())
        })
        .collect()
}

fn push_unique(out: &mut Vec<String>, seen: &mut HashSet<String>, tokens: impl IntoIterator<Item = String>) {
    for t in tokens {
        if seen.insert(t.clone()) {
            out.push(t);
        }
    }
}

/// Deterministic stand-in for an LLM.
///
/// `normalize` lowercases, strips filler words and maps a few spelling
/// variants to a canonical form. `expand` emits, for each candidate, one
/// variation word followed by the tokens only the current description has,
/// the tokens both descriptions share, and the normalized intent tokens.
#[derive(Debug, Clone, Default)]
pub struct MockLlm {
    failure: Option<ProviderError>,
}

impl MockLlm {
    pub fn new() -> Self {
        Self::default()
    }

    /// A mock whose every call fails with `err`.
    pub fn failing(err: ProviderError) -> Self {
        Self { failure: Some(err) }
    }
}

impl LlmProvider for MockLlm {
    fn normalize(&self, text: &str) -> Result<String, ProviderError> {
        if let Some(e) = &self.failure {
            return Err(e.clone());
        }
        let tokens = mock_normalize_tokens(text);
        if tokens.is_empty() {
            return Ok(tokenize(text).join(" "));
        }
        Ok(tokens.join(" "))
    }

    fn expand(
        &self,
        prev: &str,
        curr: &str,
        intent: &str,
        count: usize,
    ) -> Result<Vec<String>, ProviderError> {
        if let Some(e) = &self.failure {
            return Err(e.clone());
        }
        let prev_tokens: HashSet<String> = tokenize(prev).into_iter().collect();
        let curr_tokens = tokenize(curr);
        let (shared, novel): (Vec<String>, Vec<String>) =
            curr_tokens.into_iter().partition(|t| prev_tokens.contains(t));
        let intent_tokens = mock_normalize_tokens(intent);
        Ok((0..count)
            .map(|k| {
                let mut out = Vec::new();
                let mut seen = HashSet::new();
                let mut variation = vec![VARIATIONS[k % VARIATIONS.len()].to_string()];
                if k >= VARIATIONS.len() {
                    let second = (k / VARIATIONS.len() + k) % VARIATIONS.len();
                    variation.push(VARIATIONS[second].to_string());
                }
                push_unique(&mut out, &mut seen, variation);
                push_unique(&mut out, &mut seen, novel.iter().cloned());
                push_unique(&mut out, &mut seen, shared.iter().cloned());
                push_unique(&mut out, &mut seen, intent_tokens.iter().cloned());
                out.join(" ")
            })
            .collect())
    }
}

fn fnv1a(token: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Signed token-unigram feature hashing into a fixed number of buckets.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(MOCK_EMBEDDING_DIM)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let h = fnv1a(&token);
            let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// Prompt templates for remote LLMs. `{text}`, `{prev}`, `{curr}`,
/// `{intent}` and `{count}` are substituted.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompts {
    pub normalize: String,
    pub expand: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            normalize: include_str!("../prompts/normalize.txt").to_string(),
            expand: include_str!("../prompts/expand.txt").to_string(),
        }
    }
}

impl Prompts {
    /// Loads `normalize.txt` and `expand.txt` from `dir`.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        Ok(Self {
            normalize: std::fs::read_to_string(dir.join("normalize.txt"))?,
            expand: std::fs::read_to_string(dir.join("expand.txt"))?,
        })
    }
}

/// Endpoint settings for a remote provider.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_timeout() -> f64 {
    10.0
}

impl fmt::Debug for RemoteConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteConfig")
            .field("endpoint", &self.endpoint)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .field("model", &self.model)
            .field("timeout_secs", &self.timeout_secs)
            .finish()
    }
}

impl RemoteConfig {
    /// Reads `<PREFIX>_URL`, `<PREFIX>_TOKEN` and `<PREFIX>_MODEL`.
    pub fn from_env(prefix: &str) -> Option<Self> {
        let endpoint = std::env::var(format!("{prefix}_URL")).ok()?;
        Some(Self {
            endpoint,
            token: std::env::var(format!("{prefix}_TOKEN")).ok(),
            model: std::env::var(format!("{prefix}_MODEL")).unwrap_or_default(),
            timeout_secs: default_timeout(),
        })
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(self.timeout_secs)))
            .http_status_as_error(true)
            .build()
            .into()
    }

    fn post<T: serde::de::DeserializeOwned>(
        &self,
        agent: &ureq::Agent,
        body: &serde_json::Value,
    ) -> Result<T, ProviderError> {
        let mut req = agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let resp = req.send_json(body).map_err(map_ureq)?;
        resp.into_body()
            .read_json::<T>()
            .map_err(|e| ProviderError::BadResponse(e.to_string()))
    }
}

fn map_ureq(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => ProviderError::Timeout,
        other => ProviderError::Unavailable(other.to_string()),
    }
}

/// Embedding client. Sends `{"model", "input": [text]}` and expects
/// `{"data": [{"embedding": [...]}]}`.
#[derive(Debug)]
pub struct RemoteEmbedder {
    config: RemoteConfig,
    dim: usize,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig, dim: usize) -> Self {
        let agent = config.agent();
        Self { config, dim, agent }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let body = serde_json::json!({ "model": self.config.model, "input": [text] });
        let resp: EmbeddingResponse = self.config.post(&self.agent, &body)?;
        resp.data
            .into_iter()
            .next()
            .map(|item| item.embedding)
            .ok_or_else(|| ProviderError::BadResponse("empty data".into()))
    }
}

/// Completion client. Sends `{"model", "input": prompt}` and expects
/// `{"text": "..."}`.
#[derive(Debug)]
pub struct RemoteLlm {
    config: RemoteConfig,
    prompts: Prompts,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

impl RemoteLlm {
    pub fn new(config: RemoteConfig, prompts: Prompts) -> Self {
        let agent = config.agent();
        Self {
            config,
            prompts,
            agent,
        }
    }

    fn complete(&self, prompt: String) -> Result<String, ProviderError> {
        let body = serde_json::json!({ "model": self.config.model, "input": prompt });
        let resp: CompletionResponse = self.config.post(&self.agent, &body)?;
        Ok(resp.text)
    }
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    let line = line.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 && line[digits..].starts_with(['.', ')']) {
        line[digits + 1..].trim_start()
    } else {
        line
    }
}

impl LlmProvider for RemoteLlm {
    fn normalize(&self, text: &str) -> Result<String, ProviderError> {
        self.complete(self.prompts.normalize.replace("{text}", text))
    }

    fn expand(
        &self,
        prev: &str,
        curr: &str,
        intent: &str,
        count: usize,
    ) -> Result<Vec<String>, ProviderError> {
        let prompt = self
            .prompts
            .expand
            .replace("{prev}", prev)
            .replace("{curr}", curr)
            .replace("{intent}", intent)
            .replace("{count}", &count.to_string());
        let text = self.complete(prompt)?;
        Ok(text
            .lines()
            .map(strip_list_marker)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect())
    }
}

/// Embeds many texts with at most `max_in_flight` provider calls running at
/// once. Output order matches input order.
pub fn embed_all(
    texts: &[String],
    provider: &dyn EmbeddingProvider,
    max_in_flight: usize,
) -> Vec<Result<Vec<f64>, SemanticsError>> {
    use rayon::prelude::*;
    let run = || texts.par_iter().map(|t| embed(t, provider)).collect();
    match rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => texts.iter().map(|t| embed(t, provider)).collect(),
    }
}
