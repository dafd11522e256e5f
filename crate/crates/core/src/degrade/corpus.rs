use super::{
    encode_png, psnr, DegradationKind, DegradationSpec, DegradeError, Psnr, Sidecar, BLUR_LADDER,
    JPEG_ENCODER_ID, JPEG_LADDER, NOISE_LADDER,
};
use crate::rng::derive_seed;
use image::DynamicImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";

pub const PLAN_NAMES: [&str; 4] = ["default", "blur", "noise", "jpeg"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceImage {
    pub image_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub image_id: String,
    pub source: PathBuf,
    pub degraded: PathBuf,
    pub spec: DegradationSpec,
    pub psnr_vs_source: Option<Psnr>,
}

fn ladder(kind: DegradationKind, seed: u64) -> Vec<DegradationSpec> {
    let params: Vec<f64> = match kind {
        DegradationKind::GaussianBlur => BLUR_LADDER.to_vec(),
        DegradationKind::GaussianNoise => NOISE_LADDER.to_vec(),
        DegradationKind::Jpeg => JPEG_LADDER.iter().map(|q| *q as f64).collect(),
    };
    let noise_seed = (kind == DegradationKind::GaussianNoise).then_some(seed);
    std::iter::once(DegradationSpec::clean(kind))
        .chain(params.into_iter().enumerate().map(|(i, param)| DegradationSpec {
            kind,
            severity_index: i as u32 + 1,
            param,
            seed: noise_seed,
        }))
        .collect()
}

/// Clean entry plus the three-step ladder for every kind.
pub fn default_plan(seed: u64) -> Vec<DegradationSpec> {
    [
        DegradationKind::GaussianBlur,
        DegradationKind::GaussianNoise,
        DegradationKind::Jpeg,
    ]
    .into_iter()
    .flat_map(|k| ladder(k, seed))
    .collect()
}

/// Named plans: `default`, or a single kind's ladder (`blur`, `noise`, `jpeg`).
pub fn plan_by_name(name: &str, seed: u64) -> Option<Vec<DegradationSpec>> {
    match name {
        "default" => Some(default_plan(seed)),
        "blur" => Some(ladder(DegradationKind::GaussianBlur, seed)),
        "noise" => Some(ladder(DegradationKind::GaussianNoise, seed)),
        "jpeg" => Some(ladder(DegradationKind::Jpeg, seed)),
        _ => None,
    }
}

fn id_word(image_id: &str) -> u64 {
    let d = Sha256::digest(image_id.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Checks that within each kind params move strictly with severity.
fn validate_plan(plan: &[DegradationSpec]) -> Result<(), DegradeError> {
    let mut seen = BTreeSet::new();
    for spec in plan {
        spec.validate()?;
        if !seen.insert((spec.kind, spec.severity_index)) {
            return Err(DegradeError::Param(format!(
                "duplicate plan entry {} severity {}",
                spec.kind, spec.severity_index
            )));
        }
    }
    let mut sorted: Vec<&DegradationSpec> = plan.iter().collect();
    sorted.sort_by_key(|s| (s.kind, s.severity_index));
    for pair in sorted.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.kind != b.kind || a.is_identity() {
            continue;
        }
        let increasing = b.param > a.param;
        let ok = match a.kind {
            DegradationKind::Jpeg => !increasing && b.param != a.param,
            _ => increasing,
        };
        if !ok {
            return Err(DegradeError::Param(format!(
                "{} params must move strictly with severity ({} -> {})",
                a.kind, a.param, b.param
            )));
        }
    }
    Ok(())
}

fn file_stem(image_id: &str, spec: &DegradationSpec) -> String {
    format!("{image_id}__{}_{}", spec.kind, spec.severity_index)
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    image_id: &'a str,
    source: String,
    degraded: String,
    kind: DegradationKind,
    severity_index: u32,
    param: f64,
    seed: Option<u64>,
    psnr_vs_source: Option<Psnr>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    encoder_id: &'a str,
    entries: Vec<ManifestEntry<'a>>,
}

/// Writes every (source, plan entry) image with its sidecar into `out_dir`,
/// then `manifest.json`.
///
/// Noise seeds are derived per entry from the plan seed, the image id and the
/// severity, and the derived seed is what the sidecar records. Clean entries
/// of PNG sources are byte copies. Entries come back sorted by
/// `(image_id, kind, severity)`, the manifest order.
pub fn build_degraded_corpus(
    sources: &[SourceImage],
    plan: &[DegradationSpec],
    out_dir: &Path,
) -> Result<Vec<CorpusEntry>, DegradeError> {
    validate_plan(plan)?;
    let mut ids = BTreeSet::new();
    for s in sources {
        if !ids.insert(s.image_id.as_str()) {
            return Err(DegradeError::Param(format!("duplicate image id {:?}", s.image_id)));
        }
    }
    fs::create_dir_all(out_dir).map_err(DegradeError::io(out_dir))?;

    let decoded: Vec<(Vec<u8>, DynamicImage)> = sources
        .par_iter()
        .map(|s| {
            let bytes = fs::read(&s.path).map_err(DegradeError::io(&s.path))?;
            let img = image::load_from_memory(&bytes).map_err(|e| DegradeError::Decode {
                path: s.path.clone(),
                message: e.to_string(),
            })?;
            Ok((bytes, super::to_working(&img)))
        })
        .collect::<Result<_, DegradeError>>()?;

    let tasks: Vec<(usize, DegradationSpec)> = (0..sources.len())
        .flat_map(|i| plan.iter().map(move |spec| (i, *spec)))
        .collect();

    let mut entries = tasks
        .par_iter()
        .map(|(i, spec)| {
            let source = &sources[*i];
            let (bytes, img) = &decoded[*i];
            let mut spec = *spec;
            if spec.kind == DegradationKind::GaussianNoise && !spec.is_identity() {
                let base = spec.seed.unwrap_or_default();
                spec.seed = Some(derive_seed(&[base, id_word(&source.image_id), spec.severity_index as u64]));
            }
            let stem = file_stem(&source.image_id, &spec);
            let degraded_path = out_dir.join(format!("{stem}.png"));
            let (png, psnr_vs_source) = if spec.is_identity() {
                let png = if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
                    bytes.clone()
                } else {
                    encode_png(img)?
                };
                (png, None)
            } else {
                let out = spec.apply(img)?;
                let p = psnr(img, &out)?;
                (encode_png(&out)?, Some(p))
            };
            fs::write(&degraded_path, &png).map_err(DegradeError::io(&degraded_path))?;
            let sidecar = Sidecar {
                kind: spec.kind,
                severity_index: spec.severity_index,
                param: spec.param,
                seed: spec.seed,
                psnr_vs_source,
                encoder_id: (spec.kind == DegradationKind::Jpeg && !spec.is_identity())
                    .then(|| JPEG_ENCODER_ID.to_string()),
            };
            let sidecar_path = Sidecar::path_for(&degraded_path);
            let mut json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
            json.push(b'\n');
            fs::write(&sidecar_path, json).map_err(DegradeError::io(&sidecar_path))?;
            Ok(CorpusEntry {
                image_id: source.image_id.clone(),
                source: source.path.clone(),
                degraded: degraded_path,
                spec,
                psnr_vs_source,
            })
        })
        .collect::<Result<Vec<_>, DegradeError>>()?;

    entries.sort_by(|a, b| {
        (&a.image_id, a.spec.kind, a.spec.severity_index).cmp(&(&b.image_id, b.spec.kind, b.spec.severity_index))
    });
    write_manifest(&entries, out_dir)?;
    Ok(entries)
}

fn write_manifest(entries: &[CorpusEntry], out_dir: &Path) -> Result<(), DegradeError> {
    let manifest = Manifest {
        encoder_id: JPEG_ENCODER_ID,
        entries: entries
            .iter()
            .map(|e| ManifestEntry {
                image_id: &e.image_id,
                source: e.source.display().to_string(),
                degraded: e
                    .degraded
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                kind: e.spec.kind,
                severity_index: e.spec.severity_index,
                param: e.spec.param,
                seed: e.spec.seed,
                psnr_vs_source: e.psnr_vs_source,
            })
            .collect(),
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    fs::write(&path, json).map_err(DegradeError::io(&path))
}

/// SHA-256 (hex) of the manifest file in `out_dir`.
pub fn manifest_digest(out_dir: &Path) -> Result<String, DegradeError> {
    let path = out_dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(DegradeError::io(&path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn write_source(dir: &Path, name: &str, seed: u32) -> SourceImage {
        let img = RgbImage::from_fn(24, 16, |x, y| {
            Rgb([
                ((x * 13 + y * seed) % 256) as u8,
                ((x * y + seed) % 256) as u8,
                ((y * 29 + x) % 256) as u8,
            ])
        });
        let path = dir.join(format!("{name}.png"));
        img.save(&path).unwrap();
        SourceImage {
            image_id: name.into(),
            path,
        }
    }

    #[test]
    fn plans_are_well_formed() {
        for name in PLAN_NAMES {
            validate_plan(&plan_by_name(name, 1).unwrap()).unwrap();
        }
        assert_eq!(default_plan(0).len(), 12);
        assert!(plan_by_name("sharpen", 1).is_none());
    }

    #[test]
    fn plan_validation_rejects_non_monotone_params() {
        let mut plan = ladder(DegradationKind::Jpeg, 0);
        plan[2].param = 90.0;
        assert!(validate_plan(&plan).is_err());
        let mut plan = ladder(DegradationKind::GaussianBlur, 0);
        plan.push(plan[1]);
        assert!(validate_plan(&plan).is_err());
    }

    #[test]
    fn blur_corpus_cardinality_and_sidecars() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let sources = vec![write_source(src.path(), "a", 3), write_source(src.path(), "b", 5)];
        let plan: Vec<_> = ladder(DegradationKind::GaussianBlur, 0)[..3].to_vec();
        let entries = build_degraded_corpus(&sources, &plan, out.path()).unwrap();
        assert_eq!(entries.len(), 6);
        assert_eq!(entries.iter().filter(|e| e.psnr_vs_source.is_some()).count(), 4);
        for e in &entries {
            let sidecar = Sidecar::load_for(&e.degraded).unwrap().unwrap();
            assert_eq!(sidecar.severity_index, e.spec.severity_index);
            assert_eq!(sidecar.psnr_vs_source, e.psnr_vs_source);
            image::open(&e.degraded).unwrap();
        }
        let clean = &entries[0];
        assert_eq!(clean.spec.severity_index, 0);
        assert_eq!(fs::read(&clean.degraded).unwrap(), fs::read(&sources[0].path).unwrap());
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let src = tempfile::tempdir().unwrap();
        let sources = vec![write_source(src.path(), "img", 7)];
        let plan = default_plan(11);
        let (o1, o2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let e1 = build_degraded_corpus(&sources, &plan, o1.path()).unwrap();
        let e2 = build_degraded_corpus(&sources, &plan, o2.path()).unwrap();
        assert_eq!(manifest_digest(o1.path()).unwrap(), manifest_digest(o2.path()).unwrap());
        for (a, b) in e1.iter().zip(&e2) {
            assert_eq!(fs::read(&a.degraded).unwrap(), fs::read(&b.degraded).unwrap());
        }
        let o3 = tempfile::tempdir().unwrap();
        build_degraded_corpus(&sources, &default_plan(12), o3.path()).unwrap();
        assert_ne!(manifest_digest(o1.path()).unwrap(), manifest_digest(o3.path()).unwrap());
    }

    #[test]
    fn undecodable_source_is_an_error() {
        let src = tempfile::tempdir().unwrap();
        let path = src.path().join("bad.png");
        fs::write(&path, b"not an image").unwrap();
        let out = tempfile::tempdir().unwrap();
        let err = build_degraded_corpus(
            &[SourceImage {
                image_id: "bad".into(),
                path,
            }],
            &default_plan(0),
            out.path(),
        );
        assert!(matches!(err, Err(DegradeError::Decode { .. })));
    }
}
