use super::{CaseMembership, DatasetRecord, HarnessError, RankAxis};
use crate::rng::SplitMix64;
use crate::scoring::Caption;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

/// A caption with `k` words swapped for mismatching replacements.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedCaption {
    pub base: Caption,
    /// Same word count as `base`; its id is `<base id>~k<k>`.
    pub caption: Caption,
    pub replaced_positions: Vec<usize>,
    pub k: usize,
}

impl PerturbedCaption {
    pub fn text(&self) -> &str {
        self.caption.text()
    }
}

/// Reads a JSON object of word → replacement. Keys are matched
/// case-insensitively; replacements must be single words.
pub fn load_dictionary(path: &Path) -> Result<BTreeMap<String, String>, HarnessError> {
    let bytes = fs::read(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: BTreeMap<String, String> =
        serde_json::from_slice(&bytes).map_err(|e| HarnessError::Dictionary(e.to_string()))?;
    let mut dict = BTreeMap::new();
    for (k, v) in raw {
        if v.split_whitespace().count() != 1 || k.split_whitespace().count() != 1 {
            return Err(HarnessError::Dictionary(format!(
                "{k:?} -> {v:?}: keys and replacements must be single words"
            )));
        }
        dict.insert(k.to_lowercase(), v);
    }
    Ok(dict)
}

fn split_affixes(word: &str) -> (&str, &str, &str) {
    let start = word
        .find(|c: char| c.is_alphanumeric())
        .unwrap_or(word.len());
    let end = word
        .rfind(|c: char| c.is_alphanumeric())
        .map(|i| i + word[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(start);
    (&word[..start], &word[start..end.max(start)], &word[end.max(start)..])
}

fn match_case(original: &str, replacement: &str) -> String {
    if original.chars().next().is_some_and(char::is_uppercase) {
        let mut chars = replacement.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        }
    } else {
        replacement.to_string()
    }
}

/// Replaces `k` seeded-randomly chosen dictionary words of `caption`.
///
/// Selection is a partial Fisher–Yates shuffle over the replaceable positions
/// driven by SplitMix64, so for a fixed seed the positions chosen for `k` are
/// a prefix of those chosen for `k + 1`. Surrounding punctuation and a leading
/// capital are kept.
pub fn perturb_caption(
    caption: &Caption,
    k: usize,
    dictionary: &BTreeMap<String, String>,
    seed: u64,
) -> Result<PerturbedCaption, HarnessError> {
    let mut words: Vec<String> = caption.words().map(str::to_string).collect();
    let candidates: Vec<(usize, String)> = words
        .iter()
        .enumerate()
        .filter_map(|(i, w)| {
            let (_, core, _) = split_affixes(w);
            let replacement = dictionary.get(&core.to_lowercase())?;
            (!replacement.eq_ignore_ascii_case(core)).then(|| (i, core.to_string()))
        })
        .collect();
    if k == 0 || candidates.len() < k {
        return Err(HarnessError::NotEnoughReplaceable {
            caption: caption.text().to_string(),
            needed: k,
            available: candidates.len(),
            candidates: candidates.into_iter().map(|(_, w)| w).collect(),
        });
    }
    let mut pool: Vec<usize> = candidates.iter().map(|(i, _)| *i).collect();
    let mut rng = SplitMix64::new(seed);
    for i in 0..k {
        let j = i + rng.next_below((pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut positions = pool[..k].to_vec();
    positions.sort_unstable();
    for &p in &positions {
        let (pre, core, post) = split_affixes(&words[p]);
        let replacement = &dictionary[&core.to_lowercase()];
        words[p] = format!("{pre}{}{post}", match_case(core, replacement));
    }
    let perturbed = Caption::new(format!("{}~k{k}", caption.id()), words.join(" "))
        .expect("word count is unchanged");
    Ok(PerturbedCaption {
        base: caption.clone(),
        caption: perturbed,
        replaced_positions: positions,
        k,
    })
}

/// Expands every record into a TIA ranking case: the matched caption at rank
/// 1 and perturbations with `k = 1..=max_k` at rank `k + 1`. Levels the
/// caption cannot support are skipped with a warning. Records already
/// belonging to a case are passed through unchanged.
pub fn with_perturbations(
    records: &[DatasetRecord],
    dictionary: &BTreeMap<String, String>,
    max_k: usize,
    seed: u64,
) -> Vec<DatasetRecord> {
    let mut out = Vec::new();
    for r in records {
        if r.case.is_some() {
            out.push(r.clone());
            continue;
        }
        let case_id = r.caption.id().to_string();
        let member = |gt_rank| {
            Some(CaseMembership {
                case_id: case_id.clone(),
                gt_rank,
                axis: RankAxis::Tia,
            })
        };
        out.push(DatasetRecord {
            case: member(1),
            ..r.clone()
        });
        for k in 1..=max_k {
            match perturb_caption(&r.caption, k, dictionary, seed) {
                Ok(p) => out.push(DatasetRecord {
                    caption: p.caption,
                    case: member(k as u32 + 1),
                    ..r.clone()
                }),
                Err(e) => {
                    tracing::warn!(caption_id = r.caption.id(), "stopping perturbation at k={k}: {e}");
                    break;
                }
            }
        }
    }
    out
}
