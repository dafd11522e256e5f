//! Scoring toolkit for text-to-image generations.
//!
//! A generated image is scored on two independent axes:
//!
//! * **text-image alignment (TIA)**: yes-expected questions are derived from
//!   the input caption ([`qgen`]), a VQA backend answers them ([`backends`]),
//!   and the yes-rate becomes the TIA score ([`scoring::score_tia`]);
//! * **image quality (IQA)**: a no-reference quality backend scores the image.
//!
//! The two are blended with user-adjustable convex weights
//! ([`scoring::combine`]). The [`degrade`] and [`harness`] modules provide
//! the machinery to validate the metric: degradation corpora with known
//! quality ranks, caption perturbation with known alignment ranks, and
//! Kendall tau-b rank agreement.

pub mod backends;
pub mod degrade;
pub mod harness;
pub mod qgen;
pub mod rng;
pub mod scoring;

pub use scoring::{
    combine, normalize_answer, score_tia, AnswerLabel, Caption, FinalScore, IqaScore, ScoreError,
    TiaScore, Weights,
};
