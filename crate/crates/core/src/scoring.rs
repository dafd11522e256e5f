//! Domain types and the scoring arithmetic: answer normalization, yes-rate
//! alignment scoring and the weighted final-score combiner.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `w_tia + w_iqa == 1`.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Raw IQA values outside this magnitude are treated as a broken backend.
pub const IQA_RAW_SANITY_BOUND: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("empty caption")]
    EmptyCaption,
    #[error("no questions were asked")]
    NoQuestions,
    #[error("invalid weights ({w_tia}, {w_iqa}): {reason}")]
    InvalidWeights {
        w_tia: f64,
        w_iqa: f64,
        reason: &'static str,
    },
    #[error("inconsistent TIA score: {0}")]
    InconsistentTia(String),
    #[error("IQA raw value {0} is outside the sane range [-{b}, {b}]", b = IQA_RAW_SANITY_BOUND)]
    IqaOutOfBounds(f64),
}

/// An input text or prompt, with its whitespace word count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CaptionRepr")]
pub struct Caption {
    id: String,
    text: String,
    word_count: usize,
}

#[derive(Deserialize)]
struct CaptionRepr {
    id: String,
    text: String,
}

impl TryFrom<CaptionRepr> for Caption {
    type Error = ScoreError;

    fn try_from(repr: CaptionRepr) -> Result<Self, Self::Error> {
        Caption::new(repr.id, repr.text)
    }
}

impl Caption {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, ScoreError> {
        let text = text.into();
        let word_count = text.split_whitespace().count();
        if word_count == 0 {
            return Err(ScoreError::EmptyCaption);
        }
        Ok(Self {
            id: id.into(),
            text,
            word_count,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerLabel {
    Yes,
    No,
}

/// Maps a free-text VQA answer onto [`AnswerLabel`].
///
/// The answer is lowercased, punctuation becomes whitespace, and the result
/// is `Yes` iff its first token is exactly `yes`. Everything else, including
/// the empty string and hedges like "maybe", is `No`.
pub fn normalize_answer(raw: &str) -> AnswerLabel {
    let cleaned: String = raw
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase();
    match cleaned.split_whitespace().next() {
        Some("yes") => AnswerLabel::Yes,
        _ => AnswerLabel::No,
    }
}

/// Yes-rate over the answers to a caption's question set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TiaScoreRepr")]
pub struct TiaScore {
    yes_count: usize,
    total: usize,
    value: f64,
}

#[derive(Deserialize)]
struct TiaScoreRepr {
    yes_count: usize,
    total: usize,
    value: f64,
}

impl TryFrom<TiaScoreRepr> for TiaScore {
    type Error = ScoreError;

    fn try_from(repr: TiaScoreRepr) -> Result<Self, Self::Error> {
        let score = TiaScore::from_counts(repr.yes_count, repr.total)?;
        if score.value != repr.value {
            return Err(ScoreError::InconsistentTia(format!(
                "value {} != {}/{}",
                repr.value, repr.yes_count, repr.total
            )));
        }
        Ok(score)
    }
}

impl TiaScore {
    pub fn from_counts(yes_count: usize, total: usize) -> Result<Self, ScoreError> {
        if total == 0 {
            return Err(ScoreError::NoQuestions);
        }
        if yes_count > total {
            return Err(ScoreError::InconsistentTia(format!(
                "yes_count {yes_count} exceeds total {total}"
            )));
        }
        Ok(Self {
            yes_count,
            total,
            value: yes_count as f64 / total as f64,
        })
    }

    pub fn yes_count(&self) -> usize {
        self.yes_count
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Fraction of questions answered `Yes`.
pub fn score_tia(answers: &[AnswerLabel]) -> Result<TiaScore, ScoreError> {
    let yes = answers.iter().filter(|a| **a == AnswerLabel::Yes).count();
    TiaScore::from_counts(yes, answers.len())
}

/// A no-reference quality score, normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqaScore {
    value: f64,
    raw: f64,
    backend_id: String,
    /// Set when `raw` fell outside `[0, 1]` and was clamped.
    #[serde(default)]
    clamped: bool,
}

impl IqaScore {
    /// Builds a score from a backend-reported value, clamping into `[0, 1]`.
    pub fn from_raw(raw: f64, backend_id: impl Into<String>) -> Result<Self, ScoreError> {
        if !raw.is_finite() || raw.abs() > IQA_RAW_SANITY_BOUND {
            return Err(ScoreError::IqaOutOfBounds(raw));
        }
        let backend_id = backend_id.into();
        let value = raw.clamp(0.0, 1.0);
        let clamped = value != raw;
        if clamped {
            tracing::warn!(raw, backend_id, "IQA score outside [0, 1], clamped to {value}");
        }
        Ok(Self {
            value,
            raw,
            backend_id,
            clamped,
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn raw(&self) -> f64 {
        self.raw
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn clamped(&self) -> bool {
        self.clamped
    }
}

/// Convex weights for the TIA and IQA sub-scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightsRepr")]
pub struct Weights {
    w_tia: f64,
    w_iqa: f64,
}

#[derive(Deserialize)]
struct WeightsRepr {
    w_tia: f64,
    w_iqa: f64,
}

impl TryFrom<WeightsRepr> for Weights {
    type Error = ScoreError;

    fn try_from(repr: WeightsRepr) -> Result<Self, Self::Error> {
        Weights::new(repr.w_tia, repr.w_iqa)
    }
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            w_tia: 0.5,
            w_iqa: 0.5,
        }
    }
}

impl Weights {
    pub fn new(w_tia: f64, w_iqa: f64) -> Result<Self, ScoreError> {
        let invalid = |reason| ScoreError::InvalidWeights {
            w_tia,
            w_iqa,
            reason,
        };
        if !w_tia.is_finite() || !w_iqa.is_finite() {
            return Err(invalid("weights must be finite"));
        }
        if w_tia < 0.0 || w_iqa < 0.0 {
            return Err(invalid("weights must be non-negative"));
        }
        if (w_tia + w_iqa - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(invalid("weights must sum to 1"));
        }
        Ok(Self { w_tia, w_iqa })
    }

    pub fn w_tia(&self) -> f64 {
        self.w_tia
    }

    pub fn w_iqa(&self) -> f64 {
        self.w_iqa
    }
}

/// The blended score, with the inputs it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalScore {
    value: f64,
    tia: TiaScore,
    iqa: IqaScore,
    weights: Weights,
}

impl FinalScore {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn tia(&self) -> &TiaScore {
        &self.tia
    }

    pub fn iqa(&self) -> &IqaScore {
        &self.iqa
    }

    pub fn weights(&self) -> Weights {
        self.weights
    }

    /// True when `value` is exactly what [`combine`] yields for the stored inputs.
    pub fn is_consistent(&self) -> bool {
        combine(&self.tia, &self.iqa, self.weights).value == self.value
    }
}

/// `tia * w_tia + iqa * w_iqa`.
pub fn combine(tia: &TiaScore, iqa: &IqaScore, weights: Weights) -> FinalScore {
    let (lo, hi) = if tia.value() <= iqa.value() {
        (tia.value(), iqa.value())
    } else {
        (iqa.value(), tia.value())
    };
    // Rounding can land one ulp outside the hull of the two sub-scores.
    let value = (tia.value() * weights.w_tia() + iqa.value() * weights.w_iqa()).clamp(lo, hi);
    FinalScore {
        value,
        tia: *tia,
        iqa: iqa.clone(),
        weights,
    }
}
