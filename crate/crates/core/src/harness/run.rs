use super::{CaseMembership, DatasetRecord};
use crate::backends::{BackendError, ImageInput, IqaClient, LlmClient, VqaClient};
use crate::degrade::Sidecar;
use crate::qgen::{generate_llm, generate_rule_based, Question, QuestionSet};
use crate::scoring::{combine, normalize_answer, score_tia, AnswerLabel, Caption, FinalScore, IqaScore, TiaScore, Weights};
use futures::stream::{self, StreamExt};
use futures::future::try_join_all;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

#[derive(Clone)]
pub enum QgenMode {
    Rule,
    Llm { client: Arc<LlmClient>, retries: usize },
}

#[derive(Clone)]
pub struct EvalConfig {
    pub qgen: QgenMode,
    pub vqa: Arc<VqaClient>,
    pub iqa: Arc<IqaClient>,
    /// Extra scorers reported next to ours, by name. They receive the caption.
    pub baselines: Vec<(String, Arc<IqaClient>)>,
    pub weights: Weights,
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsweredQuestion {
    pub question: Question,
    pub raw_answer: String,
    pub label: AnswerLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendIds {
    pub vqa: String,
    pub iqa: String,
    pub llm: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub image_path: String,
    pub caption: Caption,
    pub questions: QuestionSet,
    pub answers: Vec<AnsweredQuestion>,
    pub final_score: FinalScore,
    pub backends: BackendIds,
    pub degradation: Option<Sidecar>,
    pub baselines: BTreeMap<String, f64>,
    pub case: Option<CaseMembership>,
}

impl EvalRecord {
    pub fn tia(&self) -> &TiaScore {
        self.final_score.tia()
    }

    pub fn iqa(&self) -> &IqaScore {
        self.final_score.iqa()
    }

    pub fn weights(&self) -> Weights {
        self.final_score.weights()
    }

    /// Recomputes TIA from the stored labels and the final score from the
    /// stored sub-scores; both must match exactly.
    pub fn verify(&self) -> Result<(), String> {
        if self.answers.len() != self.questions.len() {
            return Err(format!(
                "{} answers for {} questions",
                self.answers.len(),
                self.questions.len()
            ));
        }
        for a in &self.answers {
            if normalize_answer(&a.raw_answer) != a.label {
                return Err(format!("label of {:?} does not match its raw answer", a.question.text()));
            }
        }
        let labels: Vec<AnswerLabel> = self.answers.iter().map(|a| a.label).collect();
        let tia = score_tia(&labels).map_err(|e| e.to_string())?;
        if &tia != self.tia() {
            return Err(format!("stored TIA {:?} != recomputed {:?}", self.tia(), tia));
        }
        if !self.final_score.is_consistent() {
            return Err("final score does not match its inputs".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRecord {
    pub image_id: String,
    pub caption_id: String,
    pub case: Option<CaseMembership>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RecordOutcome {
    Ok(Box<EvalRecord>),
    Failed(FailedRecord),
}

impl RecordOutcome {
    pub fn case(&self) -> Option<&CaseMembership> {
        match self {
            RecordOutcome::Ok(r) => r.case.as_ref(),
            RecordOutcome::Failed(f) => f.case.as_ref(),
        }
    }

    pub fn caption_id(&self) -> &str {
        match self {
            RecordOutcome::Ok(r) => r.caption.id(),
            RecordOutcome::Failed(f) => &f.caption_id,
        }
    }

    pub fn record(&self) -> Option<&EvalRecord> {
        match self {
            RecordOutcome::Ok(r) => Some(r),
            RecordOutcome::Failed(_) => None,
        }
    }
}

/// Wall-clock cost of one record; kept out of reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordTiming {
    pub caption_id: String,
    pub qgen: Duration,
    pub vqa: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct EvalRun {
    /// One per input record, in input order.
    pub outcomes: Vec<RecordOutcome>,
    pub timings: Vec<RecordTiming>,
}

impl EvalRun {
    pub fn records(&self) -> impl Iterator<Item = &EvalRecord> {
        self.outcomes.iter().filter_map(RecordOutcome::record)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FailedRecord> {
        self.outcomes.iter().filter_map(|o| match o {
            RecordOutcome::Failed(f) => Some(f),
            RecordOutcome::Ok(_) => None,
        })
    }

    pub fn failed_count(&self) -> usize {
        self.failures().count()
    }
}

type ImageKey = (String, PathBuf);

struct Prepared {
    image: ImageInput,
    iqa: IqaScore,
}

/// Scores every record. Each distinct image is loaded and IQA-scored once;
/// records then run concurrently up to `parallelism`, and outcomes come back
/// in input order. A failing record does not stop the others.
pub async fn run_eval(records: &[DatasetRecord], config: &EvalConfig) -> EvalRun {
    let parallelism = config.parallelism.max(1);
    let mut keys: Vec<ImageKey> = Vec::new();
    for r in records {
        let key = (r.image_id.clone(), r.image_path.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let prepared: HashMap<ImageKey, Result<Arc<Prepared>, String>> = stream::iter(keys)
        .map(|key| async move {
            let result = async {
                let image = ImageInput::load(key.0.clone(), &key.1)?;
                let iqa = config.iqa.score(&image).await?;
                Ok::<_, BackendError>(Arc::new(Prepared { image, iqa }))
            }
            .await
            .map_err(|e| e.to_string());
            (key, result)
        })
        .buffered(parallelism)
        .collect::<Vec<_>>()
        .await
        .into_iter()
        .collect();

    let results: Vec<(RecordOutcome, RecordTiming)> = stream::iter(records)
        .map(|r| {
            let prepared = prepared[&(r.image_id.clone(), r.image_path.clone())].clone();
            async move {
                let started = Instant::now();
                let mut timing = RecordTiming {
                    caption_id: r.caption.id().to_string(),
                    qgen: Duration::ZERO,
                    vqa: Duration::ZERO,
                    total: Duration::ZERO,
                };
                let outcome = match prepared {
                    Ok(p) => eval_one(r, &p, config, &mut timing).await,
                    Err(e) => Err(e),
                };
                timing.total = started.elapsed();
                let outcome = match outcome {
                    Ok(record) => RecordOutcome::Ok(Box::new(record)),
                    Err(error) => {
                        tracing::warn!(caption_id = r.caption.id(), "record failed: {error}");
                        RecordOutcome::Failed(FailedRecord {
                            image_id: r.image_id.clone(),
                            caption_id: r.caption.id().to_string(),
                            case: r.case.clone(),
                            error,
                        })
                    }
                };
                (outcome, timing)
            }
        })
        .buffered(parallelism)
        .collect()
        .await;

    let (outcomes, timings) = results.into_iter().unzip();
    EvalRun { outcomes, timings }
}

async fn eval_one(
    r: &DatasetRecord,
    p: &Prepared,
    config: &EvalConfig,
    timing: &mut RecordTiming,
) -> Result<EvalRecord, String> {
    let started = Instant::now();
    let (questions, llm_id) = match &config.qgen {
        QgenMode::Rule => (generate_rule_based(&r.caption), None),
        QgenMode::Llm { client, retries } => (
            generate_llm(&r.caption, client, *retries)
                .await
                .map_err(|e| e.to_string())?,
            Some(client.backend_id().to_string()),
        ),
    };
    timing.qgen = started.elapsed();

    let started = Instant::now();
    let responses = try_join_all(
        questions
            .questions
            .iter()
            .map(|q| config.vqa.ask(&p.image, q)),
    )
    .await
    .map_err(|e| e.to_string())?;
    timing.vqa = started.elapsed();

    let answers: Vec<AnsweredQuestion> = questions
        .questions
        .iter()
        .zip(responses)
        .map(|(q, resp)| AnsweredQuestion {
            question: q.clone(),
            raw_answer: resp.raw_answer().to_string(),
            label: resp.label(),
        })
        .collect();
    let labels: Vec<AnswerLabel> = answers.iter().map(|a| a.label).collect();
    let tia = score_tia(&labels).map_err(|e| e.to_string())?;
    let final_score = combine(&tia, &p.iqa, config.weights);

    let mut baselines = BTreeMap::new();
    for (name, client) in &config.baselines {
        let s = client
            .score_with_text(&p.image, Some(r.caption.text()))
            .await
            .map_err(|e| format!("baseline {name}: {e}"))?;
        baselines.insert(name.clone(), s.value());
    }

    Ok(EvalRecord {
        image_id: r.image_id.clone(),
        image_path: r.image_path.display().to_string(),
        caption: r.caption.clone(),
        questions,
        answers,
        final_score,
        backends: BackendIds {
            vqa: config.vqa.backend_id().to_string(),
            iqa: config.iqa.backend_id().to_string(),
            llm: llm_id,
        },
        degradation: p.image.sidecar.clone(),
        baselines,
        case: r.case.clone(),
    })
}
