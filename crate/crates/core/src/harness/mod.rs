//! End-to-end evaluation harness: caption datasets, matched/mismatched
//! caption variants, the scoring pipeline over (image, caption) pairs, rank
//! agreement against constructed ground-truth orderings, and reports.

mod dataset;
mod perturb;
mod rank;
mod report;
mod run;

pub use dataset::{
    attribute_table, ingest_captions, CaptionFormat, CaseMembership, DatasetRecord, Ingested,
};
pub use perturb::{load_dictionary, perturb_caption, with_perturbations, PerturbedCaption};
pub use rank::{build_cases, rank_agreement, RankAgreement, RankAxis, RankCase};
pub use report::{emit_report, render_comparison, render_report, ReportFormat};
pub use run::{
    run_eval, AnsweredQuestion, BackendIds, EvalConfig, EvalRecord, EvalRun, FailedRecord,
    QgenMode, RecordOutcome, RecordTiming,
};

use std::io;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("caption {caption:?} has {available} replaceable words, {needed} needed; candidates: {candidates:?}")]
    NotEnoughReplaceable {
        caption: String,
        needed: usize,
        available: usize,
        candidates: Vec<String>,
    },
    #[error("invalid perturbation dictionary: {0}")]
    Dictionary(String),
    #[error("rank agreement: {0}")]
    Rank(String),
}
