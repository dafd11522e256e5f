//! Question generation: how many yes-expected questions a caption earns, and
//! producing them either through an LLM backend or with a deterministic
//! span-based rule.

use crate::backends::{BackendError, LlmClient};
use crate::scoring::{AnswerLabel, Caption};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use thiserror::Error;

/// Hard cap on question length; the LLM prompt asks for about seven words.
pub const MAX_QUESTION_WORDS: usize = 12;

/// Default number of LLM retries after a nonconforming response.
pub const DEFAULT_LLM_RETRIES: usize = 2;

/// Prefix of every rule-generated question. The oracle VQA backend parses it.
pub const RULE_PREFIX: &str = "Does the image show ";

const PROMPT_TEMPLATE: &str = "You will be given an image description. Write exactly {n} questions about an image that matches this description. Each question must be a simple sentence of about seven words. Each question must be answerable with \"Yes\" for an image that matches the description. Output one question per line with no numbering. Description: {caption}";

#[derive(Debug, Error)]
pub enum QgenError {
    #[error("empty caption")]
    EmptyCaption,
    #[error("invalid question {text:?}: {reason}")]
    InvalidQuestion { text: String, reason: &'static str },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("llm output nonconforming after {attempts} attempts ({}); raw response: {raw_response:?}", join_violations(.violations))]
    Nonconforming {
        attempts: usize,
        raw_response: String,
        violations: Vec<Violation>,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionSource {
    Llm,
    Rule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    text: String,
    expected_answer: AnswerLabel,
    source: QuestionSource,
    word_count: usize,
}

impl Question {
    /// Builds a question, rejecting empty text, embedded newlines and a
    /// missing trailing `?`.
    pub fn new(text: impl Into<String>, source: QuestionSource) -> Result<Self, QgenError> {
        let q = Self::unchecked(text.into(), source);
        let reject = |reason| {
            Err(QgenError::InvalidQuestion {
                text: q.text.clone(),
                reason,
            })
        };
        if q.word_count == 0 {
            return reject("empty");
        }
        if q.text.contains(['\n', '\r']) {
            return reject("contains a newline");
        }
        if !q.text.ends_with('?') {
            return reject("does not end with '?'");
        }
        Ok(q)
    }

    fn unchecked(text: String, source: QuestionSource) -> Self {
        let word_count = text.split_whitespace().count();
        Self {
            text,
            expected_answer: AnswerLabel::Yes,
            source,
            word_count,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn expected_answer(&self) -> AnswerLabel {
        self.expected_answer
    }

    pub fn source(&self) -> QuestionSource {
        self.source
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub caption_id: String,
    pub questions: Vec<Question>,
    pub policy_count: usize,
}

impl QuestionSet {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

/// Number of questions a caption of `word_count` words earns: one for up to
/// two words, plus one for every started 6-word increment beyond that.
pub fn question_count(word_count: usize) -> Result<usize, QgenError> {
    match word_count {
        0 => Err(QgenError::EmptyCaption),
        1 | 2 => Ok(1),
        w => Ok(1 + (w - 2).div_ceil(6)),
    }
}

pub fn build_llm_prompt(caption: &Caption, n: usize) -> String {
    PROMPT_TEMPLATE
        .replace("{n}", &n.to_string())
        .replace("{caption}", caption.text())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    CountMismatch { expected: usize, actual: usize },
    Duplicate { index: usize, text: String },
    MissingQuestionMark { index: usize },
    TooLong { index: usize, words: usize },
    EmptyLine { index: usize },
    Newline { index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::CountMismatch { expected, actual } => {
                write!(f, "count mismatch: expected {expected}, got {actual}")
            }
            Violation::Duplicate { index, text } => write!(f, "duplicate at {index}: {text:?}"),
            Violation::MissingQuestionMark { index } => write!(f, "missing '?' at {index}"),
            Violation::TooLong { index, words } => {
                write!(f, "question {index} has {words} words (max {MAX_QUESTION_WORDS})")
            }
            Violation::EmptyLine { index } => write!(f, "empty question at {index}"),
            Violation::Newline { index } => write!(f, "newline inside question {index}"),
        }
    }
}

/// Checks a question set against the generation constraints. An empty
/// report means the set conforms.
pub fn validate_question_set(qs: &QuestionSet, caption: &Caption) -> Vec<Violation> {
    let mut report = Vec::new();
    let expected = question_count(caption.word_count()).unwrap_or(1);
    if qs.questions.len() != expected || qs.policy_count != expected {
        report.push(Violation::CountMismatch {
            expected,
            actual: qs.questions.len(),
        });
    }
    let mut seen = HashSet::new();
    for (index, q) in qs.questions.iter().enumerate() {
        if q.text.trim().is_empty() {
            report.push(Violation::EmptyLine { index });
            continue;
        }
        if q.text.contains(['\n', '\r']) {
            report.push(Violation::Newline { index });
        }
        if !q.text.ends_with('?') {
            report.push(Violation::MissingQuestionMark { index });
        }
        if q.word_count > MAX_QUESTION_WORDS {
            report.push(Violation::TooLong {
                index,
                words: q.word_count,
            });
        }
        if !seen.insert(q.text.as_str()) {
            report.push(Violation::Duplicate {
                index,
                text: q.text.clone(),
            });
        }
    }
    report
}

/// Word spans of near-equal length covering the caption in order; earlier
/// spans take the remainder.
pub fn segment_spans(word_count: usize, n: usize) -> Vec<std::ops::Range<usize>> {
    let base = word_count / n;
    let extra = word_count % n;
    let mut start = 0;
    (0..n)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let span = start..start + len;
            start += len;
            span
        })
        .collect()
}

fn strip_terminal_punctuation(span: &str) -> &str {
    let stripped = span.trim_end_matches(|c: char| !c.is_alphanumeric());
    if stripped.is_empty() {
        span
    } else {
        stripped
    }
}

/// Deterministic offline question generator: one "Does the image show ...?"
/// question per contiguous word span.
///
/// Repeated spans get a ` (k)` occurrence marker so question texts stay
/// distinct.
pub fn generate_rule_based(caption: &Caption) -> QuestionSet {
    let words: Vec<&str> = caption.words().collect();
    // Caption guarantees at least one word.
    let n = question_count(words.len()).unwrap_or(1);
    let mut seen: Vec<String> = Vec::with_capacity(n);
    let questions = segment_spans(words.len(), n)
        .into_iter()
        .map(|range| {
            let span = words[range].join(" ").to_lowercase();
            let span = strip_terminal_punctuation(&span).to_string();
            let occurrence = seen.iter().filter(|s| **s == span).count() + 1;
            let text = if occurrence == 1 {
                format!("{RULE_PREFIX}{span}?")
            } else {
                format!("{RULE_PREFIX}{span} ({occurrence})?")
            };
            seen.push(span);
            Question::unchecked(text, QuestionSource::Rule)
        })
        .collect();
    QuestionSet {
        caption_id: caption.id().to_string(),
        questions,
        policy_count: n,
    }
}

/// Extracts the span embedded in a rule-generated question, without any
/// occurrence marker. `None` for questions of another shape.
pub fn rule_span(question: &str) -> Option<&str> {
    let lower_prefix = RULE_PREFIX.to_lowercase();
    if question.len() < lower_prefix.len()
        || !question.is_char_boundary(lower_prefix.len())
        || !question[..lower_prefix.len()].eq_ignore_ascii_case(&lower_prefix)
    {
        return None;
    }
    let body = question[lower_prefix.len()..].strip_suffix('?')?;
    Some(strip_occurrence_marker(body))
}

fn strip_occurrence_marker(body: &str) -> &str {
    if let Some(open) = body.rfind(" (") {
        let inner = &body[open + 2..];
        if let Some(digits) = inner.strip_suffix(')') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                return &body[..open];
            }
        }
    }
    body
}

fn strip_enumerator(line: &str) -> &str {
    let line = line.trim();
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return rest.trim_start();
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    line
}

/// Parses an LLM response into a candidate set, one question per nonempty
/// line. The result may violate constraints; run [`validate_question_set`].
pub fn parse_llm_response(caption: &Caption, response: &str) -> QuestionSet {
    let questions = response
        .lines()
        .map(strip_enumerator)
        .filter(|l| !l.is_empty())
        .map(|l| Question::unchecked(l.to_string(), QuestionSource::Llm))
        .collect();
    QuestionSet {
        caption_id: caption.id().to_string(),
        questions,
        policy_count: question_count(caption.word_count()).unwrap_or(1),
    }
}

/// Generates questions through an LLM backend, retrying up to `retries`
/// times when the response does not conform. Nonconforming responses are
/// evicted from the cache before retrying.
pub async fn generate_llm(
    caption: &Caption,
    llm: &LlmClient,
    retries: usize,
) -> Result<QuestionSet, QgenError> {
    let n = question_count(caption.word_count())?;
    let prompt = build_llm_prompt(caption, n);
    let mut last = None;
    for attempt in 0..=retries {
        let text = llm.generate(&prompt).await?;
        let qs = parse_llm_response(caption, &text);
        let violations = validate_question_set(&qs, caption);
        if violations.is_empty() {
            return Ok(qs);
        }
        tracing::warn!(
            caption_id = caption.id(),
            attempt,
            "llm returned nonconforming questions: {}",
            join_violations(&violations)
        );
        llm.evict(&prompt);
        last = Some((text, violations));
    }
    let (raw_response, violations) = last.expect("at least one attempt");
    Err(QgenError::Nonconforming {
        attempts: retries + 1,
        raw_response,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn caption(text: &str) -> Caption {
        Caption::new("c", text).unwrap()
    }

    fn texts(qs: &QuestionSet) -> Vec<&str> {
        qs.questions.iter().map(|q| q.text()).collect()
    }

    #[test]
    fn question_count_examples() {
        let expect = [(1, 1), (2, 1), (3, 2), (8, 2), (9, 3), (14, 3), (15, 4)];
        for (w, n) in expect {
            assert_eq!(question_count(w).unwrap(), n, "w={w}");
        }
        assert!(matches!(question_count(0), Err(QgenError::EmptyCaption)));
    }

    #[test]
    fn prompt_interpolates_caption_and_count() {
        let p = build_llm_prompt(&caption("a red bird"), 1);
        assert_eq!(
            p,
            "You will be given an image description. Write exactly 1 questions about an image that matches this description. Each question must be a simple sentence of about seven words. Each question must be answerable with \"Yes\" for an image that matches the description. Output one question per line with no numbering. Description: a red bird"
        );
        let nine = caption("this bird has a red head and white belly");
        let n = question_count(nine.word_count()).unwrap();
        assert_eq!(n, 3);
        assert!(build_llm_prompt(&nine, n).contains("Write exactly 3 questions"));
    }

    #[test]
    fn rule_based_examples() {
        assert_eq!(
            texts(&generate_rule_based(&caption("blue car"))),
            ["Does the image show blue car?"]
        );
        assert_eq!(
            texts(&generate_rule_based(&caption("dog"))),
            ["Does the image show dog?"]
        );
        let qs = generate_rule_based(&caption("this bird has a red head and a white belly"));
        assert_eq!(
            texts(&qs),
            [
                "Does the image show this bird has a?",
                "Does the image show red head and?",
                "Does the image show a white belly?",
            ]
        );
        assert!(qs.questions.iter().all(|q| q.source() == QuestionSource::Rule));
    }

    #[test]
    fn rule_based_lowercases_and_strips_terminal_punctuation() {
        let qs = generate_rule_based(&caption("A Red Bird."));
        assert_eq!(texts(&qs), ["Does the image show a red?", "Does the image show bird?"]);
    }

    #[test]
    fn rule_based_marks_repeated_spans() {
        let c = caption("red red red red red red red red red");
        let qs = generate_rule_based(&c);
        assert_eq!(
            texts(&qs),
            [
                "Does the image show red red red?",
                "Does the image show red red red (2)?",
                "Does the image show red red red (3)?",
            ]
        );
        assert!(validate_question_set(&qs, &c).is_empty());
        assert_eq!(rule_span(qs.questions[2].text()), Some("red red red"));
    }

    #[test]
    fn rule_span_parsing() {
        assert_eq!(rule_span("Does the image show red bird?"), Some("red bird"));
        assert_eq!(rule_span("does the image show red bird?"), Some("red bird"));
        assert_eq!(rule_span("Is the bird red?"), None);
        assert_eq!(rule_span("Does the image show (x)?"), Some("(x)"));
    }

    #[test]
    fn validation_reports() {
        let c = caption("a small yellow bird with black wings");
        let ok = QuestionSet {
            caption_id: "c".into(),
            questions: vec![
                Question::new("Is the bird small and yellow?", QuestionSource::Llm).unwrap(),
                Question::new("Does the bird have black wings?", QuestionSource::Llm).unwrap(),
            ],
            policy_count: 2,
        };
        assert!(validate_question_set(&ok, &c).is_empty());

        let mut dup = ok.clone();
        dup.questions[1] = dup.questions[0].clone();
        assert_eq!(
            validate_question_set(&dup, &c),
            [Violation::Duplicate {
                index: 1,
                text: "Is the bird small and yellow?".into()
            }]
        );

        let mut three = ok.clone();
        three
            .questions
            .push(Question::new("Is there a bird?", QuestionSource::Llm).unwrap());
        assert_eq!(
            validate_question_set(&three, &c),
            [Violation::CountMismatch {
                expected: 2,
                actual: 3
            }]
        );

        let bad = parse_llm_response(
            &c,
            "Is the bird small\nIs this a very long question that goes on and on past twelve words?",
        );
        assert_eq!(
            validate_question_set(&bad, &c),
            [
                Violation::MissingQuestionMark { index: 0 },
                Violation::TooLong {
                    index: 1,
                    words: 14
                }
            ]
        );
    }

    #[test]
    fn question_constructor_checks_shape() {
        assert!(Question::new("Is it red?", QuestionSource::Llm).is_ok());
        assert!(Question::new("Is it red", QuestionSource::Llm).is_err());
        assert!(Question::new("Is it\nred?", QuestionSource::Llm).is_err());
        assert!(Question::new("   ", QuestionSource::Llm).is_err());
    }

    #[test]
    fn llm_parse_strips_enumerators_and_blank_lines() {
        let c = caption("a small yellow bird with black wings");
        let qs = parse_llm_response(&c, "1. Is the bird yellow?\n\n  2) Are the wings black?\n");
        assert_eq!(texts(&qs), ["Is the bird yellow?", "Are the wings black?"]);
    }

    proptest! {
        #[test]
        fn question_count_growth(w in 1usize..500) {
            let q = question_count(w).unwrap();
            prop_assert!(question_count(w + 1).unwrap() >= q);
            if w >= 3 {
                prop_assert!(question_count(w + 6).unwrap() <= q + 1);
            }
        }

        #[test]
        fn rule_based_conforms_and_covers(words in prop::collection::vec("[a-zA-Z]{1,8}[.,!]?", 1..60)) {
            let c = caption(&words.join(" "));
            let qs = generate_rule_based(&c);
            prop_assert!(validate_question_set(&qs, &c).is_empty());
            prop_assert_eq!(&qs, &generate_rule_based(&c));
            let spans = segment_spans(c.word_count(), qs.len());
            let covered: Vec<usize> = spans.into_iter().flatten().collect();
            prop_assert_eq!(covered, (0..c.word_count()).collect::<Vec<_>>());
            for q in &qs.questions {
                prop_assert!(q.word_count() <= MAX_QUESTION_WORDS);
                prop_assert!(rule_span(q.text()).is_some());
            }
        }
    }
}
