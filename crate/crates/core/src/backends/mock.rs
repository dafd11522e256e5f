//! Deterministic offline backends.
//!
//! Each mock answers in the same reply format as a remote backend and counts
//! its invocations, so cache behaviour can be asserted.

use super::protocol::{GenerateReply, IqaReply, VqaReply};
use super::{BackendError, ImageInput, IqaBackend, LlmBackend, VqaBackend, VqaResponse};
use crate::qgen::{rule_span, Question};
use crate::scoring::{AnswerLabel, IqaScore};
use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "with", "has", "have", "having", "is", "are", "was", "were",
    "be", "of", "in", "on", "at", "to", "for", "by", "its", "it", "this", "that", "these",
    "those", "there", "some", "very", "as", "from", "into", "onto", "while", "who", "which",
];

/// Framing words of free-form yes/no questions, ignored for non-rule questions.
const QUESTION_WORDS: &[&str] = &[
    "does", "do", "image", "picture", "photo", "show", "shows", "showing", "contain",
    "contains", "can", "you", "see", "any",
];

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
}

/// Per-image sets of lowercased, whitespace-normalized attribute phrases.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeTable {
    images: BTreeMap<String, BTreeSet<String>>,
}

impl AttributeTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds phrases for an image (merging with any already present). Empty
    /// phrases are dropped.
    pub fn insert<I, S>(&mut self, image_id: impl Into<String>, phrases: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entry = self.images.entry(image_id.into()).or_default();
        for p in phrases {
            let normalized = p
                .as_ref()
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_lowercase();
            if !normalized.is_empty() {
                entry.insert(normalized);
            }
        }
    }

    pub fn phrases(&self, image_id: &str) -> Option<&BTreeSet<String>> {
        self.images.get(image_id)
    }

    pub fn contains_image(&self, image_id: &str) -> bool {
        self.images.contains_key(image_id)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Attribute-containment answer for one question.
///
/// The words checked are the content words of the embedded span for
/// rule-generated questions, or of the whole question otherwise (question
/// framing words removed). A span made only of stop words is checked word by
/// word. The answer is `Yes` iff every checked word occurs in one of the
/// image's attribute phrases.
pub fn oracle_label(table: &AttributeTable, image_id: &str, question: &str) -> Result<AnswerLabel, BackendError> {
    let phrases = table
        .phrases(image_id)
        .ok_or_else(|| BackendError::UnknownImage(image_id.to_string()))?;
    let words: Vec<String> = match rule_span(question) {
        Some(span) => tokens(span).collect(),
        None => tokens(question)
            .filter(|w| !QUESTION_WORDS.contains(&w.as_str()))
            .collect(),
    };
    let content: Vec<&String> = words
        .iter()
        .filter(|w| !STOP_WORDS.contains(&w.as_str()))
        .collect();
    let checked: Vec<&String> = if content.is_empty() {
        words.iter().collect()
    } else {
        content
    };
    if checked.is_empty() || phrases.is_empty() {
        return Ok(AnswerLabel::No);
    }
    let vocabulary: BTreeSet<String> = phrases.iter().flat_map(|p| tokens(p)).collect();
    Ok(if checked.iter().all(|w| vocabulary.contains(*w)) {
        AnswerLabel::Yes
    } else {
        AnswerLabel::No
    })
}

pub fn oracle_vqa(table: &AttributeTable, image_id: &str, question: &Question) -> Result<VqaResponse, BackendError> {
    let answer = match oracle_label(table, image_id, question.text())? {
        AnswerLabel::Yes => "yes",
        AnswerLabel::No => "no",
    };
    Ok(VqaResponse::new(answer, Duration::ZERO, OracleVqa::ID))
}

fn reply<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("reply serializes")
}

/// VQA stand-in answering from an [`AttributeTable`] by image id.
#[derive(Debug)]
pub struct OracleVqa {
    table: Arc<AttributeTable>,
    calls: AtomicU64,
}

impl OracleVqa {
    pub const ID: &'static str = "mock:oracle";

    pub fn new(table: Arc<AttributeTable>) -> Self {
        Self {
            table,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

#[async_trait]
impl VqaBackend for OracleVqa {
    fn backend_id(&self) -> &str {
        Self::ID
    }

    fn cache_context(&self, image: &ImageInput) -> Option<String> {
        Some(image.image_id.clone())
    }

    async fn answer(&self, image: &ImageInput, question: &str) -> Result<Vec<u8>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let answer = match oracle_label(&self.table, &image.image_id, question)? {
            AnswerLabel::Yes => "yes",
            AnswerLabel::No => "no",
        };
        Ok(reply(&VqaReply {
            answer: answer.into(),
        }))
    }
}

/// VQA stub that always gives the same answer.
#[derive(Debug)]
pub struct FixedVqa {
    answer: String,
    id: String,
    calls: AtomicU64,
}

impl FixedVqa {
    pub fn new(answer: impl Into<String>) -> Self {
        let answer = answer.into();
        Self {
            id: format!("mock:fixed={answer}"),
            answer,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

#[async_trait]
impl VqaBackend for FixedVqa {
    fn backend_id(&self) -> &str {
        &self.id
    }

    async fn answer(&self, _image: &ImageInput, _question: &str) -> Result<Vec<u8>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(reply(&VqaReply {
            answer: self.answer.clone(),
        }))
    }
}

/// `1 / (1 + severity_index)` from the image's degradation sidecar, or 1.0
/// for images without one.
pub fn mock_iqa(image: &ImageInput) -> IqaScore {
    let raw = sidecar_score(image);
    IqaScore::from_raw(raw, SidecarIqa::ID).expect("sidecar score lies in (0, 1]")
}

fn sidecar_score(image: &ImageInput) -> f64 {
    match &image.sidecar {
        Some(s) => 1.0 / (1.0 + s.severity_index as f64),
        None => 1.0,
    }
}

/// IQA stand-in that ranks images by their recorded degradation severity.
#[derive(Debug, Default)]
pub struct SidecarIqa {
    calls: AtomicU64,
}

impl SidecarIqa {
    pub const ID: &'static str = "mock:sidecar";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

#[async_trait]
impl IqaBackend for SidecarIqa {
    fn backend_id(&self) -> &str {
        Self::ID
    }

    fn cache_context(&self, image: &ImageInput) -> Option<String> {
        image
            .sidecar
            .as_ref()
            .map(|s| format!("severity={}", s.severity_index))
    }

    async fn score(&self, image: &ImageInput, _text: Option<&str>) -> Result<Vec<u8>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(reply(&IqaReply {
            score: sidecar_score(image),
        }))
    }
}

/// IQA stub returning a constant.
#[derive(Debug)]
pub struct FixedIqa {
    score: f64,
    id: String,
    calls: AtomicU64,
}

impl FixedIqa {
    pub fn new(score: f64) -> Self {
        Self {
            score,
            id: format!("mock:fixed={score}"),
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

#[async_trait]
impl IqaBackend for FixedIqa {
    fn backend_id(&self) -> &str {
        &self.id
    }

    async fn score(&self, _image: &ImageInput, _text: Option<&str>) -> Result<Vec<u8>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(reply(&IqaReply { score: self.score }))
    }
}

/// LLM stub replaying scripted responses in order; the last one repeats.
#[derive(Debug)]
pub struct ScriptedLlm {
    responses: Vec<String>,
    calls: AtomicU64,
}

impl ScriptedLlm {
    pub const ID: &'static str = "mock:scripted-llm";

    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let responses: Vec<String> = responses.into_iter().map(Into::into).collect();
        assert!(!responses.is_empty(), "script needs at least one response");
        Self {
            responses,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

#[async_trait]
impl LlmBackend for ScriptedLlm {
    fn backend_id(&self) -> &str {
        Self::ID
    }

    async fn generate(&self, _prompt: &str) -> Result<Vec<u8>, BackendError> {
        let i = self.calls.fetch_add(1, Ordering::Relaxed) as usize;
        let text = self.responses[i.min(self.responses.len() - 1)].clone();
        Ok(reply(&GenerateReply { text }))
    }
}
