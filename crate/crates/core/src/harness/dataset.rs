use super::{HarnessError, RankAxis};
use crate::backends::AttributeTable;
use crate::scoring::Caption;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptionFormat {
    Jsonl,
    Tsv,
}

impl FromStr for CaptionFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CaptionFormat::Jsonl),
            "tsv" => Ok(CaptionFormat::Tsv),
            other => Err(format!("unknown caption format {other:?} (jsonl or tsv)")),
        }
    }
}

impl CaptionFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => CaptionFormat::Tsv,
            _ => CaptionFormat::Jsonl,
        }
    }
}

/// Membership of a record in a ranking case; ranks are fixed by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseMembership {
    pub case_id: String,
    pub gt_rank: u32,
    pub axis: RankAxis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub caption: Caption,
    pub attributes: Option<Vec<String>>,
    pub case: Option<CaseMembership>,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub records: Vec<DatasetRecord>,
    /// Records dropped because their image file does not exist.
    pub skipped_missing: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlLine {
    image_id: String,
    image_path: String,
    caption: String,
    #[serde(default)]
    attributes: Option<Vec<String>>,
    #[serde(default)]
    caption_id: Option<String>,
    #[serde(default)]
    case_id: Option<String>,
    #[serde(default)]
    gt_rank: Option<u32>,
    #[serde(default)]
    rank_axis: Option<RankAxis>,
}

/// Reads a caption dataset, one record per nonblank line, preserving order.
///
/// jsonl lines carry `image_id`, `image_path`, `caption` and optionally
/// `attributes`, `caption_id`, `case_id`, `gt_rank`, `rank_axis`. tsv lines
/// carry `image_id`, `image_path`, `caption` and an optional `;`-separated
/// attribute column. Relative image paths resolve against the dataset's
/// directory. Records whose image is missing are skipped and counted.
pub fn ingest_captions(path: &Path, format: CaptionFormat) -> Result<Ingested, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Ingested::default();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let line_err = |message: String| HarnessError::Line {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let parsed = match format {
            CaptionFormat::Jsonl => {
                serde_json::from_str::<JsonlLine>(line).map_err(|e| line_err(e.to_string()))?
            }
            CaptionFormat::Tsv => parse_tsv(line).map_err(line_err)?,
        };
        let caption_id = parsed
            .caption_id
            .unwrap_or_else(|| format!("{}:{line_no}", parsed.image_id));
        let caption = Caption::new(caption_id, parsed.caption).map_err(|e| line_err(e.to_string()))?;
        let case = match (parsed.case_id, parsed.gt_rank) {
            (Some(case_id), Some(gt_rank)) if gt_rank >= 1 => Some(CaseMembership {
                case_id,
                gt_rank,
                axis: parsed.rank_axis.unwrap_or(RankAxis::Tia),
            }),
            (None, None) => None,
            _ => return Err(line_err("case_id and a positive gt_rank must be given together".into())),
        };
        let image_path = base.join(&parsed.image_path);
        if !image_path.exists() {
            tracing::warn!(line = line_no, path = %image_path.display(), "image missing, record skipped");
            out.skipped_missing += 1;
            continue;
        }
        out.records.push(DatasetRecord {
            image_id: parsed.image_id,
            image_path,
            caption,
            attributes: parsed.attributes,
            case,
        });
    }
    Ok(out)
}

fn parse_tsv(line: &str) -> Result<JsonlLine, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if !(3..=4).contains(&cols.len()) {
        return Err(format!("expected 3 or 4 tab-separated columns, got {}", cols.len()));
    }
    Ok(JsonlLine {
        image_id: cols[0].to_string(),
        image_path: cols[1].to_string(),
        caption: cols[2].to_string(),
        attributes: cols.get(3).map(|a| {
            a.split(';')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(str::to_string)
                .collect()
        }),
        caption_id: None,
        case_id: None,
        gt_rank: None,
        rank_axis: None,
    })
}

/// Collects dataset attributes into an oracle table keyed by image id.
pub fn attribute_table(records: &[DatasetRecord]) -> AttributeTable {
    let mut table = AttributeTable::new();
    for r in records {
        if let Some(attrs) = &r.attributes {
            table.insert(r.image_id.clone(), attrs);
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(lines: &str, name: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        for img in ["a.png", "b.png", "c.png"] {
            fs::write(dir.path().join(img), b"x").unwrap();
        }
        let path = dir.path().join(name);
        fs::write(&path, lines).unwrap();
        (dir, path)
    }

    #[test]
    fn jsonl_three_records() {
        let (_d, path) = setup(
            concat!(
                r#"{"image_id":"a","image_path":"a.png","caption":"a red bird","attributes":["red","bird"]}"#,
                "\n",
                r#"{"image_id":"b","image_path":"b.png","caption":"blue car","case_id":"c1","gt_rank":2}"#,
                "\n\n",
                r#"{"image_id":"c","image_path":"c.png","caption":"dog","caption_id":"dog-1"}"#,
                "\n"
            ),
            "d.jsonl",
        );
        let got = ingest_captions(&path, CaptionFormat::Jsonl).unwrap();
        assert_eq!(got.records.len(), 3);
        assert_eq!(got.skipped_missing, 0);
        let ids: Vec<_> = got.records.iter().map(|r| r.caption.id()).collect();
        assert_eq!(ids, ["a:1", "b:2", "dog-1"]);
        assert_eq!(
            got.records[1].case,
            Some(CaseMembership {
                case_id: "c1".into(),
                gt_rank: 2,
                axis: RankAxis::Tia
            })
        );
        let table = attribute_table(&got.records);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn empty_caption_names_the_line() {
        let (_d, path) = setup(
            concat!(
                r#"{"image_id":"a","image_path":"a.png","caption":"ok"}"#,
                "\n",
                r#"{"image_id":"b","image_path":"b.png","caption":"  "}"#
            ),
            "d.jsonl",
        );
        match ingest_captions(&path, CaptionFormat::Jsonl) {
            Err(HarnessError::Line { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("empty caption"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_and_missing_image() {
        let (_d, path) = setup("{not json\n", "d.jsonl");
        assert!(matches!(
            ingest_captions(&path, CaptionFormat::Jsonl),
            Err(HarnessError::Line { line: 1, .. })
        ));
        let (_d, path) = setup(
            concat!(
                r#"{"image_id":"a","image_path":"a.png","caption":"ok"}"#,
                "\n",
                r#"{"image_id":"z","image_path":"missing.png","caption":"gone"}"#
            ),
            "d.jsonl",
        );
        let got = ingest_captions(&path, CaptionFormat::Jsonl).unwrap();
        assert_eq!((got.records.len(), got.skipped_missing), (1, 1));
    }

    #[test]
    fn tsv_rows() {
        let (_d, path) = setup("a\ta.png\ta red bird\tred; bird\nb\tb.png\tblue car\n", "d.tsv");
        let got = ingest_captions(&path, CaptionFormat::from_path(&path)).unwrap();
        assert_eq!(got.records.len(), 2);
        assert_eq!(
            got.records[0].attributes.as_deref(),
            Some(&["red".to_string(), "bird".to_string()][..])
        );
        assert_eq!(got.records[1].attributes, None);
        let (_d, path) = setup("a\ta.png\n", "d.tsv");
        assert!(ingest_captions(&path, CaptionFormat::Tsv).is_err());
    }
}
