use super::{EvalRun, HarnessError, RecordOutcome};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Which ground-truth ordering a case encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankAxis {
    Tia,
    Iqa,
}

impl fmt::Display for RankAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankAxis::Tia => "TIA",
            RankAxis::Iqa => "IQA",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankAgreement {
    pub kendall_tau: f64,
    pub pairwise_agree: f64,
    pub strict_monotone: bool,
}

/// Agreement between metric scores and ground-truth ranks (rank 1 = best,
/// expected to score highest).
///
/// `kendall_tau` is tau-b between the scores and the negated ranks, so score
/// ties shrink the denominator; when every score is tied it is 0.
/// `pairwise_agree` is the fraction of pairs ordered strictly as the ranks
/// say. `strict_monotone` holds iff scores strictly decrease as rank grows.
pub fn rank_agreement(scores: &[f64], gt_ranks: &[u32]) -> Result<RankAgreement, HarnessError> {
    let n = scores.len();
    if n != gt_ranks.len() {
        return Err(HarnessError::Rank(format!(
            "{n} scores for {} ranks",
            gt_ranks.len()
        )));
    }
    if n < 2 {
        return Err(HarnessError::Rank(format!("need at least 2 candidates, got {n}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(HarnessError::Rank("scores must be finite".into()));
    }
    let mut concordant = 0u64;
    let mut discordant = 0u64;
    let mut score_ties = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            if gt_ranks[i] == gt_ranks[j] {
                return Err(HarnessError::Rank(format!("tied ground-truth rank {}", gt_ranks[i])));
            }
            // Lower rank is better, so it should carry the higher score.
            let expected = gt_ranks[j].cmp(&gt_ranks[i]);
            match scores[i].partial_cmp(&scores[j]).expect("finite") {
                std::cmp::Ordering::Equal => score_ties += 1,
                o if o == expected => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as u64;
    let denom = ((pairs - score_ties) as f64 * pairs as f64).sqrt();
    let kendall_tau = if denom == 0.0 {
        0.0
    } else {
        (concordant as f64 - discordant as f64) / denom
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| gt_ranks[i]);
    let strict_monotone = order.windows(2).all(|w| scores[w[0]] > scores[w[1]]);
    Ok(RankAgreement {
        kendall_tau,
        pairwise_agree: concordant as f64 / pairs as f64,
        strict_monotone,
    })
}

/// One ranking case assembled from an evaluation run. Candidates are sorted
/// by ground-truth rank; `metrics` holds one score per candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCase {
    pub case_id: String,
    pub axis: RankAxis,
    /// Caption ids of the completed candidates.
    pub candidates: Vec<String>,
    /// Indices into the run's outcomes, parallel to `candidates`.
    pub outcome_indices: Vec<usize>,
    pub gt_ranks: Vec<u32>,
    pub metrics: BTreeMap<String, Vec<f64>>,
    /// Caption ids of members whose evaluation failed.
    pub failed: Vec<String>,
    /// Why agreement cannot be computed, if so.
    pub invalid: Option<String>,
}

impl RankCase {
    pub fn is_complete(&self) -> bool {
        self.failed.is_empty()
    }

    pub fn agreement(&self, metric: &str) -> Result<RankAgreement, HarnessError> {
        if let Some(reason) = &self.invalid {
            return Err(HarnessError::Rank(reason.clone()));
        }
        let scores = self
            .metrics
            .get(metric)
            .ok_or_else(|| HarnessError::Rank(format!("no metric {metric:?} in case {}", self.case_id)))?;
        rank_agreement(scores, &self.gt_ranks)
    }
}

pub const METRIC_TIA: &str = "tia";
pub const METRIC_IQA: &str = "iqa";
pub const METRIC_FINAL: &str = "final";

/// Groups the run's records into cases by `case_id` (sorted), with `tia`,
/// `iqa`, `final` and one metric per baseline.
pub fn build_cases(run: &EvalRun) -> Vec<RankCase> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, o) in run.outcomes.iter().enumerate() {
        if let Some(case) = o.case() {
            groups.entry(case.case_id.as_str()).or_default().push(i);
        }
    }
    groups
        .into_iter()
        .map(|(case_id, mut members)| {
            members.sort_by_key(|&i| run.outcomes[i].case().map(|c| c.gt_rank));
            let axis = run.outcomes[members[0]].case().map_or(RankAxis::Tia, |c| c.axis);
            let mut case = RankCase {
                case_id: case_id.to_string(),
                axis,
                candidates: Vec::new(),
                outcome_indices: Vec::new(),
                gt_ranks: Vec::new(),
                metrics: BTreeMap::new(),
                failed: Vec::new(),
                invalid: None,
            };
            let all_ranks: Vec<u32> = members
                .iter()
                .filter_map(|&i| run.outcomes[i].case().map(|c| c.gt_rank))
                .collect();
            for &i in &members {
                match &run.outcomes[i] {
                    RecordOutcome::Ok(r) => {
                        case.candidates.push(r.caption.id().to_string());
                        case.outcome_indices.push(i);
                        case.gt_ranks.push(r.case.as_ref().map_or(0, |c| c.gt_rank));
                        let mut push = |name: &str, v: f64| {
                            case.metrics.entry(name.to_string()).or_default().push(v)
                        };
                        push(METRIC_TIA, r.tia().value());
                        push(METRIC_IQA, r.iqa().value());
                        push(METRIC_FINAL, r.final_score.value());
                        for (name, v) in &r.baselines {
                            push(&format!("baseline:{name}"), *v);
                        }
                    }
                    RecordOutcome::Failed(f) => case.failed.push(f.caption_id.clone()),
                }
            }
            let mut sorted = all_ranks.clone();
            sorted.sort_unstable();
            let is_permutation = sorted.iter().enumerate().all(|(i, r)| *r == i as u32 + 1);
            if !is_permutation {
                case.invalid = Some(format!("gt ranks {all_ranks:?} are not a permutation of 1..{}", all_ranks.len()));
            } else if case.candidates.len() < 2 {
                case.invalid = Some(format!(
                    "need at least 2 completed candidates, got {}",
                    case.candidates.len()
                ));
            } else if case.metrics.values().any(|v| v.len() != case.candidates.len()) {
                case.invalid = Some("baseline scores missing for some candidates".into());
            }
            case
        })
        .collect()
}
